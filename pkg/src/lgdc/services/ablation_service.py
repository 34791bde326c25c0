"""Ablation harness: train and evaluate config variants over a shared seed schedule."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Any, Sequence

import numpy as np

from lgdc.core.config import TrainConfig
from lgdc.core.exceptions import ConfigError
from lgdc.core.logger import LoggingContext, PerformanceTimer, get_logger
from lgdc.models.scene import Scene
from lgdc.schemas.report import AblationRow, AblationTable
from lgdc.services.evaluation_service import evaluate
from lgdc.services.training_service import train_base

logger = get_logger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)

SUITES: dict[str, list[tuple[str, dict[str, Any]]]] = {
    "K_sweep": [(f"K={k}", {"num_prototypes": k}) for k in range(1, 6)],
    "dilation_sweep": [(f"DR={d}", {"dilation_rate": d}) for d in range(1, 4)],
    "component_removal": [
        ("full", {}),
        ("W/o LDG", {"use_ldg": False}),
        ("W/o GDG", {"use_gdg": False}),
    ],
}

# Published MAE / MSE on WorldExpo'10 and Venice, orientation only.
REFERENCE_ROWS: dict[str, dict[str, str]] = {
    "K_sweep": {
        "K=1": "WorldExpo'10 7.4 / 9.7, Venice 19.1 / 25.5",
        "K=2": "WorldExpo'10 6.2 / 8.3, Venice 14.1 / 22.4",
        "K=3": "WorldExpo'10 5.8 / 8.0, Venice 12.4 / 18.0",
        "K=4": "WorldExpo'10 6.1 / 8.4, Venice 12.8 / 19.6",
        "K=5": "WorldExpo'10 6.3 / 8.2, Venice 13.4 / 20.4",
    },
    "dilation_sweep": {
        "DR=1": "WorldExpo'10 6.1 / 8.5, Venice 12.8 / 19.5",
        "DR=2": "WorldExpo'10 5.8 / 8.0, Venice 12.4 / 18.0",
        "DR=3": "WorldExpo'10 6.3 / 8.5, Venice 13.0 / 19.6",
    },
    "component_removal": {
        "full": "WorldExpo'10 5.8 / 8.0, Venice 12.4 / 18.0",
        "W/o LDG": "WorldExpo'10 7.7 / 11.8, Venice 17.6 / 24.3",
        "W/o GDG": "WorldExpo'10 6.5 / 10.0, Venice 15.3 / 20.2",
    },
}

NOTES = [
    "reference values are MAE / MSE from full-size benchmarks, recorded as context and not as targets",
    "desk-scale runs compare variants directionally through seed medians",
]


def variant_config(base: TrainConfig, overrides: dict[str, Any], seed: int) -> TrainConfig:
    """Seeded copy of ``base`` with ``overrides``; refuses to touch any other key."""
    baseline = base.with_overrides(seed=seed)
    variant = baseline.with_overrides(**overrides)
    intended = {key for key, value in overrides.items() if getattr(baseline, key) != value}
    touched = baseline.diff(variant)
    if touched != intended:
        raise ConfigError(f"variant changes {sorted(touched)} but only {sorted(intended)} were requested")
    return variant


def run_variant(config: TrainConfig, train_scenes: Sequence[Scene], test_scenes: Sequence[Scene]) -> tuple[float, float]:
    result = train_base(train_scenes, config)
    report = evaluate(result.network, test_scenes, config.seed)
    return report.overall.mae, report.overall.mse


def run_ablation(
    suite: str,
    base: TrainConfig,
    train_scenes: Sequence[Scene],
    test_scenes: Sequence[Scene],
    seeds: Sequence[int] = DEFAULT_SEEDS,
    workers: int = 1,
) -> AblationTable:
    if suite not in SUITES:
        raise ConfigError(f"unknown ablation suite {suite!r}; choose from {', '.join(SUITES)}")
    variants = SUITES[suite]
    jobs = [(name, overrides, seed, variant_config(base, overrides, seed)) for name, overrides in variants for seed in seeds]
    for name, overrides, _, _ in jobs[:: len(seeds)]:
        logger.info("ablation_variant", suite=suite, variant=name, overrides=overrides)

    with LoggingContext(), PerformanceTimer(logger, "run_ablation", suite=suite, jobs=len(jobs), workers=workers):
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(run_variant, config, train_scenes, test_scenes) for *_, config in jobs]
                scores = [future.result() for future in futures]
        else:
            scores = [run_variant(config, train_scenes, test_scenes) for *_, config in jobs]

    rows = []
    for offset, (name, overrides) in enumerate(variants):
        chunk = scores[offset * len(seeds) : (offset + 1) * len(seeds)]
        seed_mae = [float(score[0]) for score in chunk]
        seed_mse = [float(score[1]) for score in chunk]
        rows.append(
            AblationRow(
                variant=name,
                overrides=overrides,
                mae=float(np.median(seed_mae)),
                mse=float(np.median(seed_mse)),
                seed_mae=seed_mae,
                seed_mse=seed_mse,
                reference=REFERENCE_ROWS[suite].get(name),
            )
        )
    return AblationTable(suite=suite, seeds=list(seeds), rows=rows, references=list(NOTES))


def render_ablation(table: AblationTable) -> str:
    width = max(len(row.variant) for row in table.rows)
    lines = [f"{'variant':<{width}}  {'median MAE':>10}  {'median MSE':>10}  reference (MAE / MSE)"]
    for row in table.rows:
        lines.append(f"{row.variant:<{width}}  {row.mae:>10.3f}  {row.mse:>10.3f}  {row.reference or '-'}")
    lines.append(f"suite {table.suite}, seeds {', '.join(str(s) for s in table.seeds)}")
    lines.extend(f"* {note}" for note in table.references)
    return "\n".join(lines)
