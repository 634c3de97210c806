"""
Command-line interface.

Subcommands:
- gradcheck: finite-difference check of every loss gradient
- train:     run the optimizer and write report, curves and snapshots
- eval:      score a prediction file against a scene file
- scene:     generate a synthetic scene and dump it as JSON
- serve:     start the tool server

Exit codes: 0 success, 1 check failure, 2 input error, 3 IO error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import yaml

from . import __version__
from .errors import EvaluationError, LaneModulationError
from .evaluation import (
    DEFAULT_CONF_THRESHOLD,
    DEFAULT_IOU_THRESHOLD,
    F1Evaluator,
    sweep_grid,
    threshold_sweep,
    tusimple_accuracy,
)
from .figures import loss_curve_svg, write_snapshots
from .formats import (
    SWEEP_COLUMNS,
    RunConfig,
    RunManifest,
    bank_predictions,
    dumps,
    load_config,
    load_predictions,
    load_scene,
    output_dir,
    require_same_frame,
    save_predictions,
    save_scene,
    sweep_rows,
    write_csv,
    write_json,
)
from .gradcheck import DEFAULT_TOLERANCE, SUITE_LOSSES, format_table, run_suite
from .synth import generate_scene
from .trainer import train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_IO_ERROR = 3

SERIES_COLUMNS = (
    "step", "lr", "j_total", "j_reg", "j_seg", "j_cls", "j_shape", "j_loc", "j_ava", "j_div",
    "mean_shape", "max_active_per_cluster", "n_reinit",
)


def _split(values: Optional[list[str]]) -> list[str]:
    items = []
    for value in values or []:
        items.extend(part.strip() for part in value.split(",") if part.strip())
    return items


# =============================================================================
# Commands
# =============================================================================

def cmd_gradcheck(args: argparse.Namespace) -> int:
    losses = _split(args.loss) or None
    try:
        rows = run_suite(seed=args.seed, trials=args.trials, losses=losses,
                         tolerance=args.tolerance)
    except EvaluationError as e:
        print(f"gradient check failed: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(format_table(rows))
    if args.json:
        write_json(args.json, [row.to_dict() for row in rows])
    failed = [row.loss for row in rows if not row.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _run_config(args: argparse.Namespace) -> RunConfig:
    run = load_config(args.config) if args.config else RunConfig()
    weights = run.train.weights
    if args.preset:
        weights = weights.apply_preset(args.preset)
    enabled, disabled = _split(args.enable), _split(args.disable)
    if enabled:
        weights = weights.with_enabled(enabled)
    if disabled:
        weights = weights.with_disabled(disabled)
    train_cfg = run.train
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.k is not None:
        overrides["k_proposals"] = args.k
    if overrides:
        train_cfg = replace(train_cfg, **overrides)
    return replace(run, train=replace(train_cfg, weights=weights))


def cmd_train(args: argparse.Namespace) -> int:
    run = _run_config(args)
    out = output_dir(args.output)
    paths = {
        "manifest": out / "manifest.json",
        "report": out / "report.json",
        "loss_curve_csv": out / "loss_curve.csv",
        "loss_curve_svg": out / "loss_curve.svg",
        "scene": out / "scene.json",
        "predictions": out / "predictions.json",
        "snapshots": out / "snapshots",
    }
    write_json(paths["manifest"], RunManifest.for_run(run, paths).to_dict())
    logger.info(f"Training run -> {out}")

    report = train(run.scene, run.train)
    scene = report.scene
    n_points = scene.n_points or run.train.n_points

    write_json(paths["report"], report.to_dict())
    write_csv(paths["loss_curve_csv"], report.series, SERIES_COLUMNS)
    paths["loss_curve_svg"].write_text(loss_curve_svg(report.series), encoding="utf-8")
    save_scene(paths["scene"], scene)
    save_predictions(paths["predictions"], bank_predictions(report.final_bank, n_points),
                     scene.frame)
    write_snapshots(report.snapshots, scene, paths["snapshots"], n_points)

    print(dumps(report.stats), end="")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    scene = load_scene(args.gt)
    pred_frame, predictions = load_predictions(args.predictions)
    require_same_frame(pred_frame, scene.frame)
    evaluator = F1Evaluator(predictions, scene.ground_truth, scene.frame, args.stroke_width)
    result = evaluator.evaluate(args.conf_threshold, args.iou_threshold)
    payload = {"detection": result.to_dict()}
    if args.tusimple:
        kept = [lane for lane, conf in predictions if conf >= args.conf_threshold]
        payload["tusimple"] = tusimple_accuracy(kept, scene.ground_truth, scene.frame).to_dict()

    out = output_dir(args.output)
    write_json(out / "eval.json", payload)
    write_csv(out / "eval.csv", [{"threshold": args.conf_threshold, **result.to_dict()}],
              SWEEP_COLUMNS)
    if args.sweep:
        sweep = threshold_sweep(predictions, scene.ground_truth, sweep_grid(args.sweep_points),
                                args.iou_threshold, scene.frame, args.stroke_width)
        write_csv(out / "sweep.csv", sweep_rows(sweep), SWEEP_COLUMNS)
    print(dumps({k: v for k, v in result.to_dict().items() if k not in ("iou", "matches")}),
          end="")
    return EXIT_OK


def cmd_scene(args: argparse.Namespace) -> int:
    run = load_config(args.config) if args.config else RunConfig()
    spec = run.scene
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.family:
        spec = replace(spec, lane_family=args.family)
    if args.lanes:
        lanes = [int(v) for v in _split([args.lanes])]
        spec = replace(spec, n_lanes=(lanes[0], lanes[-1]))
    scene = generate_scene(spec)
    path = Path(args.output) if args.output else output_dir() / f"scene_{spec.seed}.json"
    save_scene(path, scene)
    print(path)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from .server import main as serve_main

    serve_main()
    return EXIT_OK


# =============================================================================
# Entry point
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lane-modulation",
        description="Dense lane proposal modulation: losses, gradient checks, training, metrics.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="verify analytic gradients by finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--loss", action="append",
                   help=f"comma-separated subset of {', '.join(SUITE_LOSSES)}")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--json", type=Path, help="also write the table as JSON")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="optimize a proposal bank on a synthetic scene")
    p.add_argument("--config", type=Path, help="YAML/JSON run configuration")
    p.add_argument("--output", help="output directory (default $LANE_MOD_OUTPUT_DIR or ./runs)")
    p.add_argument("--preset",
                   help="ablation preset: a..h, shape-only, loc-only, no-difference, no-cap")
    p.add_argument("--enable", action="append",
                   help="comma-separated terms to switch on (or 'all')")
    p.add_argument("--disable", action="append", help="comma-separated terms to switch off")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="number of proposals")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--conf-threshold", type=float, default=DEFAULT_CONF_THRESHOLD)
    p.add_argument("--iou-threshold", type=float, default=DEFAULT_IOU_THRESHOLD)
    p.add_argument("--stroke-width", type=float)
    p.add_argument("--sweep", action="store_true", help="write F1 vs confidence threshold CSV")
    p.add_argument("--sweep-points", type=int, default=21)
    p.add_argument("--tusimple", action="store_true", help="add row-grid point accuracy")
    p.add_argument("--output", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scene", help="generate a synthetic scene as JSON")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--family", choices=("straight", "arc", "cubic"))
    p.add_argument("--lanes", help="lane count or min,max range")
    p.add_argument("--output", help="output file")
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("serve", help="start the tool server")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.getenv("LOG_LEVEL", "INFO").upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LaneModulationError, ValueError, yaml.YAMLError, json.JSONDecodeError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except OSError as e:
        logger.error(f"{args.command}: {e}")
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
