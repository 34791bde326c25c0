"""On-disk formats: annotations, PGM/PPM images, ROI masks, DMAP grids, PNG previews."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from lgdc.core.exceptions import DataError
from lgdc.density.codec import PointAnnotation, RoiMask

DMAP_MAGIC = b"DMAP"
DMAP_HEADER = struct.Struct("<4sIII")


def read_annotation(path: str | Path) -> tuple[str, np.ndarray]:
    """Return ``(image_path, points)``; first line is the image path, then ``x y`` per line."""
    lines = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [line for line in lines if line]
    if not lines:
        raise DataError(f"annotation file {path} is empty")
    points = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'x y', got {line!r}")
        try:
            points.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return lines[0], np.asarray(points, dtype=np.float64).reshape(-1, 2)


def write_annotation(path: str | Path, image_path: str, points: np.ndarray) -> None:
    """Coordinates are written with repr so they read back bit-exact."""
    rows = [image_path] + [f"{float(x)!r} {float(y)!r}" for x, y in np.asarray(points).reshape(-1, 2)]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def _open_netpbm(path: str | Path) -> Image.Image:
    try:
        image = Image.open(path)
        image.load()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if image.format != "PPM" or image.mode not in ("L", "RGB"):
        raise DataError(f"{path}: only 8-bit grayscale/RGB PGM/PPM is supported, got {image.format} {image.mode}")
    return image


def read_image(path: str | Path) -> np.ndarray:
    """3 x H x W float64 in [0, 1]; grayscale is replicated across channels."""
    image = _open_netpbm(path)
    pixels = np.asarray(image, dtype=np.float64) / 255.0
    if pixels.ndim == 2:
        pixels = np.repeat(pixels[None], 3, axis=0)
    else:
        pixels = pixels.transpose(2, 0, 1)
    return np.ascontiguousarray(pixels)


def write_image(path: str | Path, pixels: np.ndarray) -> None:
    """Write a 3 x H x W array in [0, 1] as binary PPM."""
    data = np.clip(np.round(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data.transpose(1, 2, 0)).save(path, format="PPM")


def read_annotated_image(annotation_path: str | Path) -> tuple[np.ndarray, PointAnnotation, str]:
    image_ref, points = read_annotation(annotation_path)
    image_path = Path(image_ref)
    if not image_path.is_absolute():
        image_path = Path(annotation_path).parent / image_path
    pixels = read_image(image_path)
    ann = PointAnnotation(points, pixels.shape[1:]).validate()
    return pixels, ann, str(image_path)


def read_roi(path: str | Path) -> RoiMask:
    image = _open_netpbm(path)
    if image.mode != "L":
        raise DataError(f"ROI mask {path} must be a grayscale PGM")
    return RoiMask.from_array(np.asarray(image))


def write_roi(path: str | Path, roi: RoiMask) -> None:
    data = (roi.mask.data[0] > 0).astype(np.uint8) * 255
    Image.fromarray(data).save(path, format="PPM")


def write_dmap(path: str | Path, grid: np.ndarray) -> None:
    grid = np.asarray(grid, dtype="<f8")
    if grid.ndim == 3:
        grid = grid[0]
    height, width = grid.shape
    with open(path, "wb") as handle:
        handle.write(DMAP_HEADER.pack(DMAP_MAGIC, height, width, 0))
        handle.write(np.ascontiguousarray(grid).tobytes())


def read_dmap(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < DMAP_HEADER.size:
        raise DataError(f"{path}: truncated DMAP header")
    magic, height, width, _ = DMAP_HEADER.unpack_from(raw)
    if magic != DMAP_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    payload = raw[DMAP_HEADER.size :]
    if len(payload) != height * width * 8:
        raise DataError(f"{path}: payload holds {len(payload)} bytes, expected {height * width * 8}")
    return np.frombuffer(payload, dtype="<f8").reshape(height, width).astype(np.float64)


def write_png_preview(path: str | Path, grid: np.ndarray) -> None:
    """8-bit preview normalised to the map maximum; negative values clip to black."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 3:
        grid = grid[0]
    peak = grid.max()
    scaled = np.clip(grid / peak, 0.0, 1.0) if peak > 0 else np.zeros_like(grid)
    Image.fromarray((scaled * 255.0).round().astype(np.uint8)).save(path, format="PNG")
