from collections import OrderedDict
from pathlib import Path

from lgdc.core.exceptions import DataError, ShapeMismatch
from lgdc.core.logger import get_logger
from lgdc.density.codec import PointAnnotation
from lgdc.density.io import read_annotation, read_image, read_roi
from lgdc.models.scene import Scene, SceneImage
from lgdc.repositories.base import BaseRepository
from lgdc.schemas.dataset import ManifestEntry

logger = get_logger(__name__)


class ManifestRepository(BaseRepository[list[ManifestEntry]]):
    """Tab-separated scene manifest: ``scene_id image annotation [roi]`` per line."""

    def load(self) -> list[ManifestEntry]:
        if not self.exists():
            raise DataError(f"manifest {self.path} not found")
        entries = []
        for lineno, raw in enumerate(self.path.read_text(encoding="utf-8").splitlines(), start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4) or not all(part.strip() for part in parts):
                raise DataError(f"{self.path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(parts)}")
            entries.append(
                ManifestEntry(
                    scene_id=parts[0].strip(),
                    image_path=parts[1].strip(),
                    annotation_path=parts[2].strip(),
                    roi_path=parts[3].strip() if len(parts) == 4 else None,
                )
            )
        if not entries:
            raise DataError(f"manifest {self.path} lists no images")
        return entries

    def save(self, entries: list[ManifestEntry]) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        rows = []
        for entry in entries:
            fields = [entry.scene_id, entry.image_path, entry.annotation_path]
            if entry.roi_path:
                fields.append(entry.roi_path)
            rows.append("\t".join(fields))
        self.path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        logger.info("manifest_saved", path=str(self.path), entries=len(entries))
        return self.path

    def load_scenes(self) -> list[Scene]:
        """Group entries by scene id, in order of first appearance, and read every image."""
        grouped: OrderedDict[str, list[ManifestEntry]] = OrderedDict()
        for entry in self.load():
            grouped.setdefault(entry.scene_id, []).append(entry)

        scenes = []
        for scene_id, entries in grouped.items():
            images = []
            roi = None
            for entry in entries:
                pixels = read_image(self.resolve(entry.image_path))
                _, points = read_annotation(self.resolve(entry.annotation_path))
                annotation = PointAnnotation(points, pixels.shape[1:]).validate()
                images.append(SceneImage(entry.image_path, pixels, annotation))
                if entry.roi_path and roi is None:
                    roi = read_roi(self.resolve(entry.roi_path))
            if roi is not None and roi.shape != images[0].pixels.shape[1:]:
                raise ShapeMismatch(f"scene {scene_id}: ROI {roi.shape} does not match images")
            scenes.append(Scene(scene_id, images, roi))

        logger.info("scenes_loaded", path=str(self.path), scenes=len(scenes), images=sum(len(s) for s in scenes))
        return scenes
