"""Counting metrics and the unseen-scene evaluation protocol."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from lgdc.core.exceptions import EmptyInput, LengthMismatch, SceneTooSmall
from lgdc.core.logger import LoggingContext, PerformanceTimer, get_logger
from lgdc.density.codec import count_inside
from lgdc.models.network import LGDCNetwork
from lgdc.models.scene import Scene
from lgdc.ndcore import derive_rng
from lgdc.schemas.report import EvalReport, Metrics, QueryError, SceneMetrics
from lgdc.services.training_service import adapt_and_predict

logger = get_logger(__name__)

# Published figures for orientation only; desk-scale runs are not expected to match them.
REFERENCES = [
    "reference MAE per scene on WorldExpo'10: 2.1 / 10.0 / 7.5 / 7.4 / 2.2, average 5.8",
    "reference MAE/MSE on Venice: 12.4 / 18.0",
    "reference MAE on CityUHK-X: 2.1",
    "reference values come from full-size pretrained backbones and are not reproducible here",
]


def _check_pairs(preds: Sequence[float], gts: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise EmptyInput("metrics need at least one prediction")
    return np.asarray(preds, dtype=np.float64), np.asarray(gts, dtype=np.float64)


def mae(preds: Sequence[float], gts: Sequence[float]) -> float:
    p, g = _check_pairs(preds, gts)
    return float(np.mean(np.abs(p - g)))


def mse(preds: Sequence[float], gts: Sequence[float]) -> float:
    """Root of the mean squared count error."""
    p, g = _check_pairs(preds, gts)
    return float(math.sqrt(np.mean((p - g) ** 2)))


def pick_support(scene: Scene, seed: int, index: int) -> int:
    if len(scene) < 2:
        raise SceneTooSmall(f"scene {scene.scene_id!r} has {len(scene)} image(s), evaluation needs at least 2")
    return int(derive_rng(seed, "eval", index).integers(len(scene)))


def evaluate(
    network: LGDCNetwork,
    scenes: Sequence[Scene],
    seed: int,
    checkpoint_sha256: str | None = None,
) -> EvalReport:
    """One seeded support per scene; every other image of the scene is a query."""
    if not scenes:
        raise EmptyInput("evaluation needs at least one scene")
    per_scene: list[SceneMetrics] = []
    queries: list[QueryError] = []

    with PerformanceTimer(logger, "evaluate", scenes=len(scenes)):
        for index, scene in enumerate(scenes):
            with LoggingContext(scene_id=scene.scene_id):
                support_index = pick_support(scene, seed, index)
                support = scene.images[support_index]
                others = [image for i, image in enumerate(scene.images) if i != support_index]
                result = adapt_and_predict(
                    network,
                    support.pixels,
                    support.annotation,
                    [image.pixels for image in others],
                    support_name=support.name,
                    roi=scene.roi,
                )
                rows = [
                    QueryError(
                        scene_id=scene.scene_id,
                        image=image.name,
                        predicted=prediction.count,
                        ground_truth=float(count_inside(image.annotation, scene.roi)),
                    )
                    for image, prediction in zip(others, result.predictions)
                ]
                preds = [row.predicted for row in rows]
                gts = [row.ground_truth for row in rows]
                per_scene.append(
                    SceneMetrics(
                        scene_id=scene.scene_id,
                        support=support.name,
                        mae=mae(preds, gts),
                        mse=mse(preds, gts),
                        n_queries=len(rows),
                    )
                )
                queries.extend(rows)
                logger.info("scene_evaluated", mae=per_scene[-1].mae, mse=per_scene[-1].mse, support=support.name)

    preds = [row.predicted for row in queries]
    gts = [row.ground_truth for row in queries]
    config = network.config
    return EvalReport(
        per_scene=per_scene,
        overall=Metrics(mae=mae(preds, gts), mse=mse(preds, gts)),
        scene_mean=Metrics(
            mae=float(np.mean([row.mae for row in per_scene])),
            mse=float(np.mean([row.mse for row in per_scene])),
        ),
        queries=queries,
        config_fingerprint=config.fingerprint(),
        checkpoint_sha256=checkpoint_sha256,
        seed=seed,
        config=config.model_dump(),
        references=list(REFERENCES),
    )


def render_report(report: EvalReport) -> str:
    """Aligned text table, one row per scene plus pooled and scene-mean rows."""
    width = max([len("scene-mean"), *(len(row.scene_id) for row in report.per_scene)])
    lines = [f"{'scene':<{width}}  {'support':<20}  {'n':>4}  {'MAE':>9}  {'MSE':>9}"]
    for row in report.per_scene:
        lines.append(f"{row.scene_id:<{width}}  {row.support:<20}  {row.n_queries:>4}  {row.mae:>9.3f}  {row.mse:>9.3f}")
    total = sum(row.n_queries for row in report.per_scene)
    lines.append(f"{'pooled':<{width}}  {'':<20}  {total:>4}  {report.overall.mae:>9.3f}  {report.overall.mse:>9.3f}")
    lines.append(f"{'scene-mean':<{width}}  {'':<20}  {'':>4}  {report.scene_mean.mae:>9.3f}  {report.scene_mean.mse:>9.3f}")
    lines.append(f"config {report.config_fingerprint[:16]}  seed {report.seed}")
    if report.checkpoint_sha256:
        lines.append(f"checkpoint sha256 {report.checkpoint_sha256}")
    lines.extend(f"* {note}" for note in report.references)
    return "\n".join(lines)
