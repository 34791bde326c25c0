"""Base-model training with EM as a constant-producing subroutine, and test-time adaptation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from lgdc.core.config import TrainConfig
from lgdc.core.exceptions import AllSamplesDegenerate, EmptyInput, ShapeMismatch
from lgdc.core.logger import LoggingContext, PerformanceTimer, get_logger
from lgdc.density.codec import (
    DensityMap,
    PointAnnotation,
    RoiMask,
    apply_mask,
    downsample_mask,
    downsample_preserving_count,
    encode_density,
)
from lgdc.models.mldl import PrototypeSet
from lgdc.models.network import LGDCNetwork, Prediction, SupportState
from lgdc.models.parameters import ParameterStore
from lgdc.models.scene import Scene
from lgdc.ndcore import Tensor, backward, derive_rng, no_grad
from lgdc.repositories.checkpoint_repository import CheckpointRepository
from lgdc.services.episode_service import augment, sample_episode

logger = get_logger(__name__)


def euclidean_loss(pred: DensityMap, gt: DensityMap) -> Tensor:
    """0.5 * sum of squared differences over all cells."""
    if pred.grid.shape != gt.grid.shape:
        raise ShapeMismatch(f"prediction {pred.grid.shape} and GT {gt.grid.shape} differ")
    diff = pred.grid - gt.grid
    return (diff * diff).sum() * 0.5


def poly_lr(step: int, total: int, base_lr: float, power: float) -> float:
    if total <= 0:
        return base_lr
    step = min(max(step, 0), total)
    return base_lr * (1.0 - step / total) ** power


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale every gradient so the global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


@dataclass
class OptimizerState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


class Adam:
    def __init__(self, store: ParameterStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = OptimizerState(
            {name: np.zeros_like(t.data) for name, t in store.items()},
            {name: np.zeros_like(t.data) for name, t in store.items()},
        )

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        state = self.state
        state.step += 1
        correction1 = 1.0 - self.beta1**state.step
        correction2 = 1.0 - self.beta2**state.step
        for name, tensor in self.store.items():
            grad = grads[name]
            m = state.first_moment[name] = self.beta1 * state.first_moment[name] + (1.0 - self.beta1) * grad
            v = state.second_moment[name] = self.beta2 * state.second_moment[name] + (1.0 - self.beta2) * grad * grad
            tensor.data = tensor.data - lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@dataclass
class TrainResult:
    network: LGDCNetwork
    losses: list[float]
    skipped: int
    checkpoint: Path | None = None


def _ground_truth(ann: PointAnnotation, config: TrainConfig, roi: RoiMask | None = None) -> DensityMap:
    dm = encode_density(ann, config.sigma)
    if roi is not None:
        dm = apply_mask(dm, roi)
    return downsample_preserving_count(dm, config.downsample_factor)


def _support_density(ann: PointAnnotation, sigma: float, roi: RoiMask | None = None) -> DensityMap:
    dm = encode_density(ann, sigma)
    return apply_mask(dm, roi) if roi is not None else dm


class Trainer:
    """Episodic training loop: one optimiser step per batch of episodes."""

    def __init__(self, config: TrainConfig, network: LGDCNetwork | None = None):
        self.config = config
        self.network = network or LGDCNetwork.from_config(config)
        self.optimizer = Adam(self.network.store, config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.episode_rng = derive_rng(config.seed, "episodes")
        self.augment_rng = derive_rng(config.seed, "augment")

    def episode_loss(self, scene: Scene) -> Tensor:
        """Forward one random episode of ``scene``; raises on a degenerate support."""
        config = self.config
        episode = sample_episode(scene, self.episode_rng)
        query = episode.queries[int(self.episode_rng.integers(len(episode.queries)))]

        support_pixels, support_ann = augment(episode.support.pixels, episode.support.annotation, self.augment_rng, config)
        query_pixels, query_ann = augment(query.pixels, query.annotation, self.augment_rng, config)

        state = self.network.adapt(support_pixels, _support_density(support_ann, config.sigma), episode.support.name)
        prediction = self.network.predict(query_pixels, state)
        return euclidean_loss(prediction.density, _ground_truth(query_ann, config))

    def train_step(self, scenes: Sequence[Scene], step: int) -> tuple[float, float, int]:
        """Returns ``(loss, lr, skipped)``; loss is NaN when every episode was skipped."""
        config = self.config
        lr = poly_lr(step, config.iterations, config.learning_rate, config.poly_power)
        self.network.store.zero_grad()

        losses = []
        skipped = 0
        for _ in range(config.batch_size):
            scene = scenes[int(self.episode_rng.integers(len(scenes)))]
            try:
                losses.append(self.episode_loss(scene))
            except AllSamplesDegenerate as exc:
                skipped += 1
                logger.info("episode_skipped", scene_id=scene.scene_id, reason=str(exc))
        if not losses:
            return float("nan"), lr, skipped

        total = losses[0]
        for loss in losses[1:]:
            total = total + loss
        total = total / float(len(losses))
        backward(total)

        grads, norm = clip_grad_norm(self.network.store.grads(), config.grad_clip_norm)
        self.optimizer.step(grads, lr)
        if step % config.log_every == 0:
            logger.info("train_step", step=step, loss=total.item(), lr=lr, grad_norm=norm, skipped=skipped)
        return total.item(), lr, skipped

    def train(
        self,
        scenes: Sequence[Scene],
        trace_path: str | Path | None = None,
        checkpoint_path: str | Path | None = None,
    ) -> TrainResult:
        config = self.config
        if not scenes:
            raise EmptyInput("train_base needs at least one scene")
        losses: list[float] = []
        skipped_total = 0
        trace_handle = open(trace_path, "w", newline="", encoding="utf-8") if trace_path else None
        try:
            writer = csv.writer(trace_handle) if trace_handle else None
            if writer:
                writer.writerow(["iter", "loss", "lr", "skipped"])
            with LoggingContext(), PerformanceTimer(logger, "train_base", iterations=config.iterations):
                for step in range(config.iterations):
                    loss, lr, skipped = self.train_step(scenes, step)
                    losses.append(loss)
                    skipped_total += skipped
                    if writer:
                        writer.writerow([step, repr(loss), repr(lr), skipped])
                    if checkpoint_path and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                        CheckpointRepository(f"{checkpoint_path}.{step + 1}").save_network(self.network)
        finally:
            if trace_handle:
                trace_handle.close()

        saved = CheckpointRepository(checkpoint_path).save_network(self.network) if checkpoint_path else None
        if skipped_total:
            logger.warning("episodes_skipped", count=skipped_total)
        return TrainResult(self.network, losses, skipped_total, saved)


def train_base(
    scenes: Sequence[Scene],
    config: TrainConfig,
    trace_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    return Trainer(config).train(scenes, trace_path, checkpoint_path)


@dataclass
class AdaptResult:
    state: SupportState
    predictions: list[Prediction]

    @property
    def counts(self) -> list[float]:
        return [p.count for p in self.predictions]


def adapt_and_predict(
    network: LGDCNetwork,
    support_pixels: np.ndarray,
    support_ann: PointAnnotation,
    queries: Sequence[np.ndarray],
    support_name: str = "support",
    roi: RoiMask | None = None,
    prototypes: PrototypeSet | None = None,
) -> AdaptResult:
    """Fit the prototypes once on the support and decode every query with frozen parameters.

    Supplying ``prototypes`` (for example from a saved adaptation) skips EM; the
    support still provides the global token.
    """
    config = network.config
    with no_grad():
        support_gt = _support_density(support_ann, config.sigma, roi)
        state = network.adapt(support_pixels, support_gt, support_name, prototypes=prototypes)
        cell_roi = downsample_mask(roi, config.downsample_factor) if roi is not None else None
        predictions = []
        for pixels in queries:
            prediction = network.predict(pixels, state)
            if cell_roi is not None:
                masked = apply_mask(prediction.density, cell_roi)
                prediction = Prediction(masked, float(masked.grid.data.sum()), prediction.ldsm)
            predictions.append(prediction)
    logger.debug("adapted", support=support_name, queries=len(predictions), em_iterations=state.prototypes.iterations)
    return AdaptResult(state, predictions)
