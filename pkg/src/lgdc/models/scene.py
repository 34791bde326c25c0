"""Scene-as-category data model: every fixed camera view is one class."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lgdc.density.codec import PointAnnotation, RoiMask


@dataclass(frozen=True)
class SceneImage:
    name: str
    pixels: np.ndarray  # 3 x H x W in [0, 1]
    annotation: PointAnnotation

    @property
    def count(self) -> int:
        return self.annotation.count


@dataclass(frozen=True)
class Scene:
    scene_id: str
    images: list[SceneImage] = field(default_factory=list)
    roi: RoiMask | None = None

    def __len__(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class Episode:
    scene_id: str
    support: SceneImage
    queries: list[SceneImage]
