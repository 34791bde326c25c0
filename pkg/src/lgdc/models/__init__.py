from lgdc.models.backbone import Backbone, BackboneConfig, DensityHead, FeatureMap
from lgdc.models.guidance import (
    AttentionParams,
    GlobalDensityToken,
    GlobalGuidance,
    GuidanceBundle,
    LocalGuidance,
    encode_global_token,
    global_guide,
    local_guide,
)
from lgdc.models.mldl import (
    LocalDensitySimilarityMatrix,
    PrototypeSet,
    Responsibilities,
    SupportDensityFeature,
    build_support_density_feature,
    encode_similarity,
    fit_prototypes,
)
from lgdc.models.network import LGDCNetwork, Prediction, SupportState
from lgdc.models.parameters import ParameterStore

__all__ = [
    "AttentionParams",
    "Backbone",
    "BackboneConfig",
    "DensityHead",
    "FeatureMap",
    "GlobalDensityToken",
    "GlobalGuidance",
    "GuidanceBundle",
    "LGDCNetwork",
    "LocalDensitySimilarityMatrix",
    "LocalGuidance",
    "ParameterStore",
    "Prediction",
    "PrototypeSet",
    "Responsibilities",
    "SupportDensityFeature",
    "SupportState",
    "build_support_density_feature",
    "encode_global_token",
    "encode_similarity",
    "fit_prototypes",
    "global_guide",
    "local_guide",
]
