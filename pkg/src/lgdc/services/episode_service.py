"""Episodes, augmentation and the synthetic surveillance-scene generator."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from lgdc.core.config import TrainConfig
from lgdc.core.exceptions import CropTooLarge, SceneTooSmall
from lgdc.core.logger import PerformanceTimer, get_logger
from lgdc.density.codec import PointAnnotation
from lgdc.density.io import write_annotation, write_image
from lgdc.models.scene import Episode, Scene, SceneImage
from lgdc.ndcore import derive_rng, make_rng
from lgdc.repositories.manifest_repository import ManifestRepository
from lgdc.schemas.dataset import ManifestEntry, SyntheticDatasetSpec, SyntheticRegion, SyntheticSceneSpec

logger = get_logger(__name__)

TEXTURE_CELL = 8


def sample_episode(scene: Scene, rng: np.random.Generator) -> Episode:
    """Uniform random support; every other image of the scene is a query."""
    if len(scene) < 2:
        raise SceneTooSmall(f"scene {scene.scene_id!r} has {len(scene)} image(s), an episode needs at least 2")
    support = int(rng.integers(len(scene)))
    queries = [image for i, image in enumerate(scene.images) if i != support]
    return Episode(scene.scene_id, scene.images[support], queries)


def mirror(image: np.ndarray, ann: PointAnnotation) -> tuple[np.ndarray, PointAnnotation]:
    width = image.shape[2]
    points = ann.points.copy()
    if len(points):
        points[:, 0] = np.minimum(width - points[:, 0], np.nextafter(width, 0))
    return np.ascontiguousarray(image[:, :, ::-1]), PointAnnotation(points, ann.image_size)


def crop(image: np.ndarray, ann: PointAnnotation, top: int, left: int, size: int) -> tuple[np.ndarray, PointAnnotation]:
    """Square crop; points inside the window are kept and re-offset."""
    height, width = image.shape[1:]
    if size > height or size > width:
        raise CropTooLarge(f"crop {size} exceeds image {height}x{width}")
    points = ann.points
    inside = (
        (points[:, 0] >= left) & (points[:, 0] < left + size) & (points[:, 1] >= top) & (points[:, 1] < top + size)
    )
    kept = points[inside] - np.array([left, top], dtype=np.float64)
    window = np.ascontiguousarray(image[:, top : top + size, left : left + size])
    return window, PointAnnotation(kept, (size, size))


def augment(
    image: np.ndarray,
    ann: PointAnnotation,
    rng: np.random.Generator,
    config: TrainConfig,
) -> tuple[np.ndarray, PointAnnotation]:
    """Mirror, blur (image only), then a random crop of ``config.crop_size``."""
    size = config.crop_size
    height, width = image.shape[1:]
    if size > height or size > width:
        raise CropTooLarge(f"crop {size} exceeds image {height}x{width}")

    if rng.random() < config.mirror_prob:
        image, ann = mirror(image, ann)
    if rng.random() < config.blur_prob:
        sigma = rng.uniform(config.blur_sigma_min, config.blur_sigma_max)
        image = ndimage.gaussian_filter(image, sigma=(0.0, sigma, sigma), mode="reflect")
    top = int(rng.integers(height - size + 1))
    left = int(rng.integers(width - size + 1))
    return crop(image, ann, top, left, size)


# -- synthetic scenes ------------------------------------------------------------


def value_noise(shape: tuple[int, int], rng: np.random.Generator, cell: int = TEXTURE_CELL) -> np.ndarray:
    """Low-frequency texture in [0, 1]: a coarse random lattice upsampled with cubic splines."""
    height, width = shape
    coarse = rng.random((height // cell + 2, width // cell + 2))
    fine = ndimage.zoom(coarse, cell, order=3, mode="nearest")[:height, :width]
    low, high = fine.min(), fine.max()
    return (fine - low) / (high - low) if high > low else np.full(shape, 0.5)


def scene_background(spec: SyntheticSceneSpec) -> np.ndarray:
    """Static 3 x H x W backdrop of a fixed camera: tinted value noise."""
    rng = make_rng(spec.texture_seed)
    texture = 0.35 + 0.5 * value_noise(spec.image_size, rng)
    tint = rng.uniform(0.7, 1.0, size=3)
    return texture[None] * tint[:, None, None]


def sample_heads(spec: SyntheticSceneSpec, rng: np.random.Generator) -> np.ndarray:
    height, width = spec.image_size
    cell_area = float(spec.cell_size * spec.cell_size)
    batches = []
    for region in spec.layout:
        x0, y0, x1, y1 = region.rect
        count = int(rng.poisson(region.intensity * region.area / cell_area))
        xy = rng.uniform((x0, y0), (x1, y1), size=(count, 2))
        if region.jitter > 0:
            xy += rng.normal(0.0, region.jitter, size=(count, 2))
        batches.append(xy)
    if not batches:
        return np.zeros((0, 2))
    points = np.concatenate(batches)
    points[:, 0] = np.clip(points[:, 0], 0.0, np.nextafter(width, 0))
    points[:, 1] = np.clip(points[:, 1], 0.0, np.nextafter(height, 0))
    return points


def render_heads(points: np.ndarray, shape: tuple[int, int], sigma: float) -> np.ndarray:
    """Sum of unit-peak Gaussian blobs, clipped to [0, 1]."""
    height, width = shape
    rows = np.arange(height) + 0.5
    cols = np.arange(width) + 0.5
    canvas = np.zeros(shape)
    for x, y in points:
        canvas += np.outer(np.exp(-0.5 * ((rows - y) / sigma) ** 2), np.exp(-0.5 * ((cols - x) / sigma) ** 2))
    return np.clip(canvas, 0.0, 1.0)


def generate_synthetic_scene(
    spec: SyntheticSceneSpec,
    n_images: int,
    rng: np.random.Generator,
    scene_id: str = "synthetic",
) -> Scene:
    """Fixed layout and backdrop; head realisations vary per image."""
    if n_images < 2:
        raise SceneTooSmall(f"a scene needs at least 2 images, got {n_images}")
    background = scene_background(spec)
    images = []
    for index in range(n_images):
        points = sample_heads(spec, rng)
        heads = render_heads(points, spec.image_size, spec.stamp_sigma)
        pixels = np.clip(background * (1.0 - 0.7 * heads[None]) + 0.05 * rng.normal(size=background.shape), 0.0, 1.0)
        images.append(SceneImage(f"{scene_id}_{index:03d}", pixels, PointAnnotation(points, spec.image_size).validate()))
    return Scene(scene_id, images)


def random_scene_spec(
    rng: np.random.Generator,
    image_size: tuple[int, int] = (64, 64),
    max_intensity: float = 3.0,
    texture_seed: int = 0,
) -> SyntheticSceneSpec:
    """Three horizontal bands with high, medium and low density in a random order."""
    height, width = image_size
    cuts = sorted(rng.choice(np.arange(height // 5, height - height // 5), size=2, replace=False))
    bounds = [0, int(cuts[0]), int(cuts[1]), height]
    levels = [rng.uniform(0.6, 1.0), rng.uniform(0.25, 0.45), rng.uniform(0.03, 0.12)]
    order = rng.permutation(3)
    layout = [
        SyntheticRegion(rect=(0, bounds[band], width, bounds[band + 1]), intensity=max_intensity * levels[order[band]], jitter=1.0)
        for band in range(3)
        if bounds[band + 1] > bounds[band]
    ]
    return SyntheticSceneSpec(layout=layout, image_size=image_size, texture_seed=texture_seed)


def write_scene(scene: Scene, root: Path, manifest_root: Path) -> list[ManifestEntry]:
    directory = root / scene.scene_id
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for image in scene.images:
        image_path = directory / f"{image.name}.ppm"
        annotation_path = directory / f"{image.name}.txt"
        write_image(image_path, image.pixels)
        write_annotation(annotation_path, image_path.name, image.annotation.points)
        entries.append(
            ManifestEntry(
                scene_id=scene.scene_id,
                image_path=str(image_path.relative_to(manifest_root)),
                annotation_path=str(annotation_path.relative_to(manifest_root)),
            )
        )
    return entries


def materialize_dataset(spec: SyntheticDatasetSpec, out_dir: str | Path) -> tuple[Path, Path]:
    """Generate scene-disjoint train and test splits; returns both manifest paths.

    The dataset spec is written alongside so the directory reproduces itself.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = (
        ("train", spec.train_scenes, spec.train_images_per_scene),
        ("test", spec.test_scenes, spec.test_images_per_scene),
    )
    manifests = []
    with PerformanceTimer(logger, "materialize_dataset", out_dir=str(out_dir)):
        for split_index, (split, n_scenes, n_images) in enumerate(splits):
            entries: list[ManifestEntry] = []
            for scene_index in range(n_scenes):
                rng = derive_rng(spec.seed, "data", split_index, scene_index)
                scene_spec = _scene_spec_for(spec, split_index, scene_index, rng)
                scene = generate_synthetic_scene(scene_spec, n_images, rng, scene_id=f"{split}_{scene_index:02d}")
                entries.extend(write_scene(scene, out_dir / split, out_dir))
            manifest = ManifestRepository(out_dir / f"{split}.tsv")
            manifests.append(manifest.save(entries))
        (out_dir / "dataset.json").write_text(spec.model_dump_json(indent=2), encoding="utf-8")
    return manifests[0], manifests[1]


def _scene_spec_for(
    spec: SyntheticDatasetSpec, split_index: int, scene_index: int, rng: np.random.Generator
) -> SyntheticSceneSpec:
    if spec.scenes is not None:
        return spec.scenes[split_index * spec.train_scenes + scene_index]
    texture_seed = int(rng.integers(2**31))
    return random_scene_spec(rng, spec.image_size, spec.max_intensity, texture_seed)
