"""The assembled one-shot counter.

``adapt`` runs the support branch once (features, density weighting, EM,
global token); ``predict`` decodes any number of queries against that state.
``forward_query`` chains the two for a single episode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lgdc.core.config import TrainConfig
from lgdc.core.exceptions import AllSamplesDegenerate, DegenerateSupportError, ShapeMismatch
from lgdc.core.logger import get_logger
from lgdc.density.codec import DensityMap, integrate_count
from lgdc.models.backbone import Backbone, BackboneConfig, DensityHead, FeatureMap
from lgdc.models.guidance import GlobalDensityToken, GlobalGuidance, LocalGuidance, encode_global_token
from lgdc.models.mldl import (
    LocalDensitySimilarityMatrix,
    PrototypeSet,
    SupportDensityFeature,
    build_support_density_feature,
    encode_similarity,
    fit_prototypes,
    prepare_samples,
)
from lgdc.models.parameters import ParameterStore
from lgdc.ndcore import Tensor, derive_rng

logger = get_logger(__name__)

# init sub-streams, one per component
_INIT_BACKBONE, _INIT_LOCAL, _INIT_GLOBAL, _INIT_HEAD = range(4)


@dataclass(frozen=True)
class SupportState:
    prototypes: PrototypeSet
    token: GlobalDensityToken
    support_name: str = "support"


@dataclass(frozen=True)
class Prediction:
    density: DensityMap
    count: float
    ldsm: LocalDensitySimilarityMatrix | None = None


class LGDCNetwork:
    def __init__(self, config: TrainConfig):
        self.config = config
        self.store = ParameterStore()
        channels = config.feature_channels
        seed = config.seed

        self.backbone = Backbone(
            BackboneConfig(tuple(config.channels), config.kernel_size),
            self.store,
            derive_rng(seed, "init", _INIT_BACKBONE),
            init_scale=config.init_scale,
        )
        self.local_guidance: LocalGuidance | None = None
        if config.use_ldg:
            self.local_guidance = LocalGuidance(
                channels,
                config.num_prototypes,
                self.store,
                derive_rng(seed, "init", _INIT_LOCAL),
                dilation=config.dilation_rate,
                shared=config.shared_branch_convs,
                init_scale=config.init_scale,
            )
        self.global_guidance: GlobalGuidance | None = None
        if config.use_gdg:
            self.global_guidance = GlobalGuidance(
                channels,
                self.store,
                derive_rng(seed, "init", _INIT_GLOBAL),
                attention_dim=config.attention_dim,
                tile_q=config.tile_q,
                init_scale=config.init_scale,
            )
        self.head = DensityHead(
            channels,
            config.head_channels,
            self.store,
            derive_rng(seed, "init", _INIT_HEAD),
            bias_init=config.head_bias_init,
            init_scale=config.init_scale,
        )

    @classmethod
    def from_config(cls, config: TrainConfig) -> "LGDCNetwork":
        return cls(config)

    @property
    def downsample_factor(self) -> int:
        return self.config.downsample_factor

    def extract_features(self, image: Tensor | np.ndarray, source="query") -> FeatureMap:
        return self.backbone.extract_features(Tensor.wrap(image), source)

    def fit_support(self, sdf: SupportDensityFeature, support_name: str = "support") -> PrototypeSet:
        """EM on a constant copy of the support density feature.

        Also runs without local guidance; an empty support raises either way.
        """
        constant = SupportDensityFeature(sdf.data.detach(), sdf.density)
        try:
            return fit_prototypes(
                constant,
                self.config.num_prototypes,
                self.config.concentration,
                max_iter=self.config.em_max_iter,
                tol=self.config.em_tol,
                weighted=self.config.weighted_em,
            )
        except AllSamplesDegenerate as exc:
            raise self._degenerate(support_name, exc) from exc

    def check_support(self, sdf: SupportDensityFeature, support_name: str = "support") -> None:
        """The same emptiness test EM applies, for supports that reuse saved prototypes."""
        try:
            prepare_samples(SupportDensityFeature(sdf.data.detach(), sdf.density))
        except AllSamplesDegenerate as exc:
            raise self._degenerate(support_name, exc) from exc

    def _degenerate(self, support_name: str, exc: AllSamplesDegenerate) -> DegenerateSupportError:
        logger.warning("degenerate_support", support=support_name, detail=str(exc))
        return DegenerateSupportError(support_name, str(exc))

    def adapt(
        self,
        support_image: Tensor | np.ndarray,
        gt_support: DensityMap,
        support_name: str = "support",
        prototypes: PrototypeSet | None = None,
    ) -> SupportState:
        """Fit prototypes on the support; given ``prototypes`` skip EM and only rebuild the global token."""
        features = self.extract_features(support_image, "support")
        sdf = build_support_density_feature(features, gt_support, self.downsample_factor)
        if prototypes is None:
            prototypes = self.fit_support(sdf, support_name)
        else:
            expected = (self.config.num_prototypes, features.channels)
            if prototypes.mu.shape != expected:
                raise ShapeMismatch(f"saved prototypes are {prototypes.mu.shape}, the network expects {expected}")
            self.check_support(sdf, support_name)
        return SupportState(prototypes, encode_global_token(sdf), support_name)

    def predict(self, query_image: Tensor | np.ndarray, state: SupportState) -> Prediction:
        features = self.extract_features(query_image, "query")
        ldsm = None
        guided = features
        if self.local_guidance is not None:
            ldsm = encode_similarity(state.prototypes, features)
            guided = self.local_guidance(ldsm, features)
        if self.global_guidance is not None:
            guided = self.global_guidance(state.token, guided)
        density = self.head.decode_density(guided)
        return Prediction(density, integrate_count(density), ldsm)

    def forward_query(
        self,
        query_image: Tensor | np.ndarray,
        support_image: Tensor | np.ndarray,
        gt_support: DensityMap,
        support_name: str = "support",
    ) -> DensityMap:
        state = self.adapt(support_image, gt_support, support_name)
        return self.predict(query_image, state).density
