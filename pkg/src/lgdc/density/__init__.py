from lgdc.density.codec import (
    DensityMap,
    PointAnnotation,
    RoiMask,
    apply_mask,
    count_inside,
    downsample_mask,
    downsample_preserving_count,
    encode_density,
    integrate_count,
    point_kernel,
)

__all__ = [
    "DensityMap",
    "PointAnnotation",
    "RoiMask",
    "apply_mask",
    "count_inside",
    "downsample_mask",
    "downsample_preserving_count",
    "encode_density",
    "integrate_count",
    "point_kernel",
]
