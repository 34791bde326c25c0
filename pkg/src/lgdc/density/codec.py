"""Ground-truth density maps from point annotations.

Each head contributes a Gaussian kernel truncated at ``KERNEL_RADIUS`` sigmas
and divided by its own discrete sum, so a map always integrates to the number
of heads regardless of border truncation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lgdc.core.exceptions import IndivisibleShape, NonPositiveSigma, PointOutOfBounds, ShapeMismatch
from lgdc.ndcore import Tensor

KERNEL_RADIUS = 4.0


@dataclass(frozen=True)
class PointAnnotation:
    """Head positions in pixel coordinates, ``points[:, 0]`` is x."""

    points: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    @property
    def count(self) -> int:
        return len(self.points)

    def validate(self) -> "PointAnnotation":
        height, width = self.image_size
        if len(self.points) == 0:
            return self
        xs, ys = self.points[:, 0], self.points[:, 1]
        outside = (xs < 0) | (xs >= width) | (ys < 0) | (ys >= height)
        if outside.any():
            first = self.points[np.argmax(outside)]
            raise PointOutOfBounds(
                f"{int(outside.sum())} point(s) outside [0,{width})x[0,{height}), first at ({first[0]}, {first[1]})"
            )
        return self


@dataclass(frozen=True)
class DensityMap:
    """1 x H x W crowd density; its integral is the count."""

    grid: Tensor
    sigma: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[1], self.grid.shape[2]

    def numpy(self) -> np.ndarray:
        return self.grid.data[0].copy()


@dataclass(frozen=True)
class RoiMask:
    mask: Tensor

    def __post_init__(self):
        values = self.mask.data
        if values.ndim != 3 or values.shape[0] != 1:
            raise ShapeMismatch(f"ROI mask must be 1 x H x W, got {values.shape}")
        if not np.isin(values, (0.0, 1.0)).all():
            raise ShapeMismatch("ROI mask values must be exactly 0 or 1")

    @classmethod
    def from_array(cls, array: np.ndarray) -> "RoiMask":
        inside = (np.asarray(array) != 0).astype(np.float64)
        return cls(Tensor(inside.reshape(1, *inside.shape[-2:])))

    @classmethod
    def full(cls, height: int, width: int) -> "RoiMask":
        return cls(Tensor(np.ones((1, height, width))))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape[1], self.mask.shape[2]


def _axis_kernel(center: float, sigma: float, length: int) -> np.ndarray:
    """Truncated 1-D Gaussian evaluated at pixel centres along one axis."""
    positions = np.arange(length) + 0.5
    offsets = positions - center
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel[np.abs(offsets) > KERNEL_RADIUS * sigma] = 0.0
    return kernel


def point_kernel(x: float, y: float, sigma: float, out_size: tuple[int, int]) -> np.ndarray:
    """One head's discretely renormalised kernel; sums to exactly one."""
    height, width = out_size
    gx = _axis_kernel(x, sigma, width)
    gy = _axis_kernel(y, sigma, height)
    kernel = np.outer(gy, gx)
    # circular truncation on top of the separable window
    rows = np.arange(height)[:, None] + 0.5 - y
    cols = np.arange(width)[None, :] + 0.5 - x
    kernel[rows**2 + cols**2 > (KERNEL_RADIUS * sigma) ** 2] = 0.0
    total = kernel.sum()
    if total <= 0.0:
        kernel = np.zeros(out_size)
        kernel[min(int(y), height - 1), min(int(x), width - 1)] = 1.0
        return kernel
    return kernel / total


def encode_density(ann: PointAnnotation, sigma: float, out_size: tuple[int, int] | None = None) -> DensityMap:
    """Sum of one normalised Gaussian per annotated head."""
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    ann.validate()
    out_size = tuple(out_size) if out_size is not None else ann.image_size
    height, width = out_size
    scale_y = height / ann.image_size[0]
    scale_x = width / ann.image_size[1]

    grid = np.zeros((height, width))
    for x, y in ann.points:
        grid += point_kernel(x * scale_x, y * scale_y, sigma, (height, width))
    return DensityMap(Tensor(grid[None]), sigma=float(sigma))


def apply_mask(dm: DensityMap, roi: RoiMask) -> DensityMap:
    if dm.grid.shape != roi.mask.shape:
        raise ShapeMismatch(f"density map {dm.grid.shape} and ROI {roi.mask.shape} differ")
    return DensityMap(dm.grid * roi.mask, sigma=dm.sigma)


def downsample_preserving_count(dm: DensityMap, factor: int) -> DensityMap:
    """Non-overlapping factor x factor sum pooling."""
    height, width = dm.shape
    if factor < 1 or height % factor or width % factor:
        raise IndivisibleShape(f"map {height}x{width} not divisible by factor {factor}")
    if factor == 1:
        return dm
    pooled = dm.grid.data[0].reshape(height // factor, factor, width // factor, factor).sum(axis=(1, 3))
    return DensityMap(Tensor(pooled[None]), sigma=dm.sigma)


def integrate_count(dm: DensityMap) -> float:
    return float(dm.grid.data.sum())


def downsample_mask(roi: RoiMask, factor: int) -> RoiMask:
    """A feature cell is inside when at least half of its pixels are."""
    height, width = roi.shape
    if factor < 1 or height % factor or width % factor:
        raise IndivisibleShape(f"mask {height}x{width} not divisible by factor {factor}")
    if factor == 1:
        return roi
    share = roi.mask.data[0].reshape(height // factor, factor, width // factor, factor).mean(axis=(1, 3))
    return RoiMask.from_array(share >= 0.5)


def count_inside(ann: PointAnnotation, roi: RoiMask | None) -> int:
    """Annotated heads falling on ROI pixels."""
    if roi is None or ann.count == 0:
        return ann.count
    cols = np.minimum(ann.points[:, 0].astype(int), roi.shape[1] - 1)
    rows = np.minimum(ann.points[:, 1].astype(int), roi.shape[0] - 1)
    return int(roi.mask.data[0][rows, cols].sum())
