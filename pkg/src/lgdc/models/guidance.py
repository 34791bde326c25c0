"""Local and global density guidance.

Local guidance fuses each prototype's similarity plane with the query
features through its own conv stack; the branch outputs are summed. Global
guidance lets the pooled support token attend over the locally activated
query cells and injects the attended vector back into every cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lgdc.core.exceptions import InvalidHyperparameter, ShapeMismatch
from lgdc.models.backbone import FeatureMap
from lgdc.models.mldl import LocalDensitySimilarityMatrix, SupportDensityFeature
from lgdc.models.parameters import ParameterStore, kaiming_normal
from lgdc.ndcore import Tensor, concat, conv2d, matmul, relu, reshape, softmax, transpose


@dataclass(frozen=True)
class GlobalDensityToken:
    q: Tensor  # 1 x C


@dataclass(frozen=True)
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    psi_weight: Tensor  # d x C
    psi_bias: Tensor  # 1 x C

    @property
    def dim(self) -> int:
        return self.wq.shape[1]

    @property
    def channels(self) -> int:
        return self.wq.shape[0]


@dataclass(frozen=True)
class BranchParams:
    """Conv1 -> ReLU -> Conv2 -> ReLU -> dilated Conv3 for one similarity plane."""

    conv1_weight: Tensor
    conv1_bias: Tensor
    conv2_weight: Tensor
    conv2_bias: Tensor
    conv3_weight: Tensor
    conv3_bias: Tensor
    dilation: int = 2


@dataclass(frozen=True)
class GuidanceBundle:
    ldsm: LocalDensitySimilarityMatrix
    global_token: GlobalDensityToken


def encode_global_token(sdf: SupportDensityFeature) -> GlobalDensityToken:
    """Channel-wise spatial sum of the support density feature."""
    channels = sdf.data.shape[0]
    return GlobalDensityToken(sdf.data.sum(axis=(1, 2)).reshape(1, channels))


def local_guide(plane: Tensor, features: FeatureMap, params: BranchParams) -> FeatureMap:
    """One branch: concat the similarity plane onto the features and run the conv stack."""
    if plane.ndim != 3 or plane.shape[0] != 1 or plane.shape[1:] != features.data.shape[1:]:
        raise ShapeMismatch(f"similarity plane {plane.shape} does not match features {features.data.shape}")
    if params.conv1_weight.shape[1] != features.channels + 1:
        raise ShapeMismatch(f"branch expects {params.conv1_weight.shape[1] - 1} channels, got {features.channels}")

    x = concat([plane, features.data], axis=0)
    x = relu(conv2d(x, params.conv1_weight, pad=1) + params.conv1_bias)
    x = relu(conv2d(x, params.conv2_weight, pad=1) + params.conv2_bias)
    x = conv2d(x, params.conv3_weight, pad=params.dilation, dilation=params.dilation) + params.conv3_bias
    return FeatureMap(x, features.source, features.downsample_factor)


def _flatten_cells(features: FeatureMap) -> Tensor:
    channels, height, width = features.data.shape
    return transpose(reshape(features.data, (channels, height * width)))


def _unflatten_cells(cells: Tensor, like: FeatureMap) -> FeatureMap:
    return FeatureMap(reshape(transpose(cells), like.data.shape), like.source, like.downsample_factor)


def attend(token: GlobalDensityToken, cells: Tensor, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Single-token cross-attention over N x C cells; returns ``(O, weights)``."""
    if token.q.shape != (1, params.channels) or cells.shape[1] != params.channels:
        raise ShapeMismatch(f"token {token.q.shape} / cells {cells.shape} vs attention width {params.channels}")
    scale = 1.0 / math.sqrt(params.dim)
    scores = matmul(matmul(token.q, params.wq), transpose(matmul(cells, params.wk))) * scale
    weights = softmax(scores, axis=1)
    pooled = matmul(weights, matmul(cells, params.wv))
    out = token.q + matmul(pooled, params.psi_weight) + params.psi_bias
    return out, weights


def attend_tiled(token: GlobalDensityToken, cells: Tensor, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Every cell carries its own query ``cell + q``; attention is N x N."""
    if token.q.shape != (1, params.channels) or cells.shape[1] != params.channels:
        raise ShapeMismatch(f"token {token.q.shape} / cells {cells.shape} vs attention width {params.channels}")
    queries = cells + token.q
    scale = 1.0 / math.sqrt(params.dim)
    scores = matmul(matmul(queries, params.wq), transpose(matmul(cells, params.wk))) * scale
    weights = softmax(scores, axis=1)
    pooled = matmul(weights, matmul(cells, params.wv))
    return queries + matmul(pooled, params.psi_weight) + params.psi_bias, weights


def global_guide(
    token: GlobalDensityToken,
    local_activated: FeatureMap,
    params: AttentionParams,
    tile_q: bool = False,
) -> FeatureMap:
    """Attend from the support token over the query cells and fuse the result back in.

    By default the attended 1 x C vector is broadcast-added to every cell; with
    ``tile_q`` each cell's own attended row replaces it.
    """
    if local_activated.channels != params.channels:
        raise ShapeMismatch(f"attention expects {params.channels} channels, got {local_activated.channels}")
    cells = _flatten_cells(local_activated)
    if tile_q:
        fused, _ = attend_tiled(token, cells, params)
    else:
        out, _ = attend(token, cells, params)
        fused = cells + out
    return _unflatten_cells(fused, local_activated)


class LocalGuidance:
    """One conv branch per prototype, or a single shared branch."""

    def __init__(
        self,
        channels: int,
        prototypes: int,
        store: ParameterStore,
        rng: np.random.Generator,
        dilation: int = 2,
        shared: bool = False,
        init_scale: float = 1.0,
    ):
        if dilation < 1:
            raise InvalidHyperparameter(f"dilation rate must be >= 1, got {dilation}")
        self.channels = channels
        self.prototypes = prototypes
        self.dilation = dilation
        self.shared = shared
        self.store = store
        self.branch_names = ["shared"] if shared else [str(v) for v in range(prototypes)]
        for name in self.branch_names:
            prefix = f"guidance.local.{name}"
            c_in = channels + 1
            for conv in ("conv1", "conv2", "conv3"):
                shape = (channels, c_in, 3, 3)
                store.add(f"{prefix}.{conv}.weight", kaiming_normal(rng, shape, c_in * 9, init_scale))
                store.add(f"{prefix}.{conv}.bias", np.zeros((channels, 1, 1)))
                c_in = channels

    def branch(self, v: int) -> BranchParams:
        prefix = "guidance.local." + ("shared" if self.shared else str(v))
        s = self.store
        return BranchParams(
            s[f"{prefix}.conv1.weight"],
            s[f"{prefix}.conv1.bias"],
            s[f"{prefix}.conv2.weight"],
            s[f"{prefix}.conv2.bias"],
            s[f"{prefix}.conv3.weight"],
            s[f"{prefix}.conv3.bias"],
            self.dilation,
        )

    def __call__(self, ldsm: LocalDensitySimilarityMatrix, features: FeatureMap) -> FeatureMap:
        if ldsm.delta.shape[0] != self.prototypes:
            raise ShapeMismatch(f"expected {self.prototypes} similarity planes, got {ldsm.delta.shape[0]}")
        total = None
        for v, plane in enumerate(ldsm.planes):
            branch = local_guide(plane, features, self.branch(v)).data
            total = branch if total is None else total + branch
        return FeatureMap(total, features.source, features.downsample_factor)


class GlobalGuidance:
    def __init__(
        self,
        channels: int,
        store: ParameterStore,
        rng: np.random.Generator,
        attention_dim: int = 0,
        tile_q: bool = False,
        init_scale: float = 1.0,
    ):
        dim = attention_dim or channels
        if dim < 1:
            raise InvalidHyperparameter(f"attention dimension must be >= 1, got {attention_dim}")
        self.tile_q = tile_q
        self.store = store
        for name in ("wq", "wk", "wv"):
            store.add(f"guidance.global.{name}", kaiming_normal(rng, (channels, dim), channels, init_scale) / math.sqrt(2.0))
        store.add("guidance.global.psi.weight", kaiming_normal(rng, (dim, channels), dim, init_scale) / math.sqrt(2.0))
        store.add("guidance.global.psi.bias", np.zeros((1, channels)))

    @property
    def params(self) -> AttentionParams:
        s = self.store
        return AttentionParams(
            s["guidance.global.wq"],
            s["guidance.global.wk"],
            s["guidance.global.wv"],
            s["guidance.global.psi.weight"],
            s["guidance.global.psi.bias"],
        )

    def __call__(self, token: GlobalDensityToken, local_activated: FeatureMap) -> FeatureMap:
        return global_guide(token, local_activated, self.params, tile_q=self.tile_q)
