"""Command-line surface.

Exit codes: 0 success, 2 usage error, 3 data error, 4 degenerate support.
Tables and reports go to stdout, logs to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import ValidationError

from lgdc.core.config import config as app_config
from lgdc.core.config import dump_train_config, load_train_config
from lgdc.core.exceptions import ConfigError, DataError, LGDCError
from lgdc.core.logger import get_logger, setup_logging
from lgdc.density.codec import PointAnnotation, count_inside
from lgdc.density.io import (
    read_annotated_image,
    read_dmap,
    read_image,
    read_roi,
    write_dmap,
    write_png_preview,
)
from lgdc.repositories.checkpoint_repository import CheckpointRepository
from lgdc.repositories.manifest_repository import ManifestRepository
from lgdc.schemas.dataset import SyntheticDatasetSpec
from lgdc.services.ablation_service import SUITES, render_ablation, run_ablation
from lgdc.services.counting_service import config_sidecar, load_network
from lgdc.services.episode_service import materialize_dataset
from lgdc.services.evaluation_service import evaluate, render_report
from lgdc.services.training_service import adapt_and_predict, train_base

logger = get_logger(__name__)


def _overrides(pairs: Sequence[str]) -> dict[str, str]:
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _train_config(args: argparse.Namespace):
    return load_train_config(args.config, **_overrides(args.set))


def cmd_synth(args: argparse.Namespace) -> int:
    if args.spec:
        try:
            spec = SyntheticDatasetSpec.model_validate_json(Path(args.spec).read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise ConfigError(f"invalid dataset spec {args.spec}: {exc}") from exc
    else:
        spec = SyntheticDatasetSpec()
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    train_manifest, test_manifest = materialize_dataset(spec, args.out)
    print(f"train\t{train_manifest}")
    print(f"test\t{test_manifest}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    train_config = _train_config(args)
    scenes = ManifestRepository(args.manifest).load_scenes()
    result = train_base(scenes, train_config, trace_path=args.trace, checkpoint_path=args.out)
    config_sidecar(args.out).write_text(dump_train_config(train_config), encoding="utf-8")
    print(f"checkpoint\t{result.checkpoint}")
    print(f"sha256\t{CheckpointRepository(args.out).sha256()}")
    print(f"skipped_episodes\t{result.skipped}")
    return 0


def _load_query(path: Path) -> tuple[str, np.ndarray, PointAnnotation | None]:
    if path.suffix == ".txt":
        pixels, ann, _ = read_annotated_image(path)
        return path.stem, pixels, ann
    return path.stem, read_image(path), None


def cmd_adapt(args: argparse.Namespace) -> int:
    train_config = _train_config(args) if args.config or args.set else None
    network, _, saved = load_network(args.checkpoint, train_config)
    if args.refit:
        saved = None
    if saved is not None:
        logger.info("saved_prototypes_reused", checkpoint=args.checkpoint, prototypes=saved.count)
    support_pixels, support_ann, support_path = read_annotated_image(args.support)
    roi = read_roi(args.roi) if args.roi else None
    queries = [_load_query(Path(q)) for q in args.queries]

    result = adapt_and_predict(
        network,
        support_pixels,
        support_ann,
        [pixels for _, pixels, _ in queries],
        support_name=support_path,
        roi=roi,
        prototypes=saved,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print("query\tcount\tgt")
    for (name, _, ann), prediction in zip(queries, result.predictions):
        grid = prediction.density.numpy()
        gt = count_inside(ann, roi) if ann is not None else None
        label = f"est{prediction.count:.1f}" + (f"_gt{gt}" if gt is not None else "")
        write_dmap(out / f"{name}.dmap", grid)
        write_png_preview(out / f"{name}_{label}.png", grid)
        if prediction.ldsm is not None:
            for v, plane in enumerate(prediction.ldsm.planes):
                write_dmap(out / f"{name}_ldsm{v}.dmap", plane.numpy())
                write_png_preview(out / f"{name}_ldsm{v}.png", plane.numpy())
        print(f"{name}\t{prediction.count:.4f}\t{'' if gt is None else gt}")

    if args.save_prototypes:
        CheckpointRepository(args.save_prototypes).save_network(network, result.state.prototypes)
        config_sidecar(args.save_prototypes).write_text(dump_train_config(network.config), encoding="utf-8")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    train_config = _train_config(args) if args.config or args.set else None
    network, digest, saved = load_network(args.checkpoint, train_config)
    if saved is not None:
        logger.warning("saved_prototypes_ignored", checkpoint=args.checkpoint)
    scenes = ManifestRepository(args.manifest).load_scenes()
    seed = args.seed if args.seed is not None else network.config.seed
    report = evaluate(network, scenes, seed, checkpoint_sha256=digest)
    if args.report:
        Path(args.report).write_text(report.model_dump_json(indent=2), encoding="utf-8")
    print(render_report(report))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    base = _train_config(args)
    train_scenes = ManifestRepository(args.train_manifest).load_scenes()
    test_scenes = ManifestRepository(args.test_manifest).load_scenes()
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds expects comma-separated ints, got {args.seeds!r}") from exc
    table = run_ablation(args.suite, base, train_scenes, test_scenes, seeds=seeds, workers=args.workers)
    if args.report:
        Path(args.report).write_text(table.model_dump_json(indent=2), encoding="utf-8")
    print(render_ablation(table))
    return 0


def cmd_export_density(args: argparse.Namespace) -> int:
    grid = read_dmap(args.input)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".png")
    write_png_preview(out, grid)
    print(f"{out}\t{grid.sum():.4f}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("lgdc.main:app", host=args.host, port=args.port, log_config=None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgdc", description="One-shot crowd counting with density guidance")
    parser.add_argument("--log-level", default=app_config.LOG_LEVEL, help="DEBUG, INFO, WARNING, ERROR")
    parser.add_argument("--log-format", choices=("json", "console"), default="json" if app_config.LOG_JSON else "console")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    p.add_argument("spec", nargs="?", help="dataset spec JSON; defaults when omitted")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train the base model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="CSV loss trace path")
    with_config(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("adapt", help="adapt to one annotated support and predict queries")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--support", required=True, help="support annotation file (first line names the image)")
    p.add_argument("--roi", help="ROI mask PGM")
    p.add_argument("--out", required=True, help="output directory for density maps")
    p.add_argument("--save-prototypes", help="write a checkpoint that also holds the adapted prototypes")
    p.add_argument("--refit", action="store_true", help="run EM even if the checkpoint holds saved prototypes")
    p.add_argument("queries", nargs="+", help="query images, or annotation files to report GT counts")
    with_config(p)
    p.set_defaults(handler=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate on unseen scenes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--report", help="JSON report path")
    with_config(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--report", help="JSON table path")
    with_config(p)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("export-density", help="render a DMAP grid as a PNG preview")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_export_density)

    p = sub.add_parser("serve", help="run the HTTP inference surface")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, json_logs=args.log_format == "json")
    try:
        return args.handler(args)
    except LGDCError as exc:
        logger.error("command_failed", command=args.command, error=str(exc), error_type=type(exc).__name__)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        logger.error("command_failed", command=args.command, error=str(exc), error_type=type(exc).__name__)
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
