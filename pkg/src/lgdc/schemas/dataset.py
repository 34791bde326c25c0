from typing import Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class SyntheticRegion(BaseModel):
    """Axis-aligned crowd region; ``rect`` is ``(x0, y0, x1, y1)`` in pixels, end-exclusive."""

    rect: tuple[int, int, int, int] = Field(..., description="Region rectangle x0, y0, x1, y1")
    intensity: float = Field(..., ge=0, description="Expected heads per cell")
    jitter: float = Field(1.0, ge=0, description="Gaussian positional jitter in pixels")

    @field_validator("rect")
    @classmethod
    def validate_rect(cls, value: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
        x0, y0, x1, y1 = value
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"empty rectangle {value}")
        return value

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.rect
        return (x1 - x0) * (y1 - y0)


class SyntheticSceneSpec(BaseModel):
    layout: list[SyntheticRegion] = Field(default_factory=list, description="Density regions of the fixed camera view")
    image_size: tuple[int, int] = Field((64, 64), description="Image height, width")
    texture_seed: int = Field(0, description="Seed of the static background texture")
    stamp_sigma: float = Field(1.2, gt=0, description="Head blob sigma in pixels")
    cell_size: int = Field(8, ge=1, description="Side of the cell that intensities refer to")

    @model_validator(mode="after")
    def validate_layout(self) -> "SyntheticSceneSpec":
        height, width = self.image_size
        if height < 1 or width < 1:
            raise ValueError(f"image_size must be positive, got {self.image_size}")
        for region in self.layout:
            x0, y0, x1, y1 = region.rect
            if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
                raise ValueError(f"region {region.rect} outside image {width}x{height}")
        return self


class SyntheticDatasetSpec(BaseModel):
    """What ``synth`` generates: disjoint train and test scene sets."""

    seed: int = Field(0, description="Master seed")
    image_size: tuple[int, int] = Field((64, 64), description="Image height, width")
    train_scenes: int = Field(8, ge=1)
    train_images_per_scene: int = Field(12, ge=2)
    test_scenes: int = Field(3, ge=1)
    test_images_per_scene: int = Field(8, ge=2)
    max_intensity: float = Field(3.0, gt=0, description="Upper bound of the high-density stratum")
    scenes: Optional[list[SyntheticSceneSpec]] = Field(
        None, description="Explicit scene layouts, train scenes first; random heterogeneous layouts when omitted"
    )

    @model_validator(mode="after")
    def validate_scenes(self) -> "SyntheticDatasetSpec":
        needed = self.train_scenes + self.test_scenes
        if self.scenes is not None and len(self.scenes) < needed:
            raise ValueError(
                f"{len(self.scenes)} explicit scene layout(s) given, {needed} needed so that test scenes stay unseen"
            )
        return self


class ManifestEntry(BaseModel):
    scene_id: str
    image_path: str
    annotation_path: str
    roi_path: Optional[str] = None
