"""Shared-weight convolutional feature extractor and the density-regression head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from lgdc.core.exceptions import IndivisibleShape, InvalidHyperparameter, ShapeMismatch
from lgdc.density.codec import DensityMap
from lgdc.models.parameters import ParameterStore, kaiming_normal
from lgdc.ndcore import Tensor, conv2d, max_pool2d, relu, softplus

Source = Literal["support", "query"]


@dataclass(frozen=True)
class BackboneConfig:
    channels_per_stage: tuple[int, ...] = (16, 32, 32)
    kernel_size: int = 3
    in_channels: int = 3

    def __post_init__(self):
        if not self.channels_per_stage:
            raise InvalidHyperparameter("backbone needs at least one stage")
        if self.kernel_size % 2 == 0:
            raise InvalidHyperparameter(f"kernel_size must be odd, got {self.kernel_size}")

    @property
    def pooling_stages(self) -> int:
        return len(self.channels_per_stage) - 1

    @property
    def downsample_factor(self) -> int:
        return 2**self.pooling_stages

    @property
    def feature_channels(self) -> int:
        return self.channels_per_stage[-1]


@dataclass(frozen=True)
class FeatureMap:
    data: Tensor
    source: Source
    downsample_factor: int

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


class Backbone:
    """Conv -> ReLU per stage with a 2x max-pool after every stage but the last.

    One parameter set serves both the support and the query branch.
    """

    def __init__(self, config: BackboneConfig, store: ParameterStore, rng: np.random.Generator, init_scale: float = 1.0):
        self.config = config
        self.store = store
        k = config.kernel_size
        c_in = config.in_channels
        for stage, c_out in enumerate(config.channels_per_stage, start=1):
            store.add(f"backbone.stage{stage}.weight", kaiming_normal(rng, (c_out, c_in, k, k), c_in * k * k, init_scale))
            store.add(f"backbone.stage{stage}.bias", np.zeros((c_out, 1, 1)))
            c_in = c_out

    def extract_features(self, image: Tensor, source: Source = "query") -> FeatureMap:
        factor = self.config.downsample_factor
        if image.ndim != 3 or image.shape[0] != self.config.in_channels:
            raise ShapeMismatch(f"expected a {self.config.in_channels} x H x W image, got {image.shape}")
        if image.shape[1] % factor or image.shape[2] % factor:
            raise IndivisibleShape(f"image {image.shape[1]}x{image.shape[2]} not divisible by {factor}")

        pad = self.config.kernel_size // 2
        x = image
        stages = len(self.config.channels_per_stage)
        for stage in range(1, stages + 1):
            weight = self.store[f"backbone.stage{stage}.weight"]
            bias = self.store[f"backbone.stage{stage}.bias"]
            x = relu(conv2d(x, weight, pad=pad) + bias)
            if stage < stages:
                x = max_pool2d(x, 2)
        return FeatureMap(x, source, factor)


class DensityHead:
    """Two 3x3 convs with ReLU between and a softplus output."""

    def __init__(
        self,
        in_channels: int,
        hidden_channels: int,
        store: ParameterStore,
        rng: np.random.Generator,
        bias_init: float = 0.0,
        init_scale: float = 1.0,
    ):
        self.in_channels = in_channels
        self.store = store
        store.add("head.conv1.weight", kaiming_normal(rng, (hidden_channels, in_channels, 3, 3), in_channels * 9, init_scale))
        store.add("head.conv1.bias", np.zeros((hidden_channels, 1, 1)))
        store.add("head.conv2.weight", kaiming_normal(rng, (1, hidden_channels, 3, 3), hidden_channels * 9, init_scale))
        store.add("head.conv2.bias", np.full((1, 1, 1), float(bias_init)))

    def decode_density(self, guided: FeatureMap) -> DensityMap:
        if guided.channels != self.in_channels:
            raise ShapeMismatch(f"head expects {self.in_channels} channels, got {guided.channels}")
        hidden = relu(conv2d(guided.data, self.store["head.conv1.weight"], pad=1) + self.store["head.conv1.bias"])
        logits = conv2d(hidden, self.store["head.conv2.weight"], pad=1) + self.store["head.conv2.bias"]
        return DensityMap(softplus(logits))
