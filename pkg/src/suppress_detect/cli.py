"""Command-line entry point: gen-synthetic, train, filter, evaluate, tune.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import evaluation, ingest, net, pipeline, synthgen, tuner
from .errors import SuppressError
from .weighting import WeightingConfig

log = logging.getLogger("suppress_detect")

LOG_ENV = "SUPPRESS_DETECT_LOG"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument types
# ---------------------------------------------------------------------------

def _unit(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} is outside [0, 1]")
    return v


def _open_unit(text: str) -> float:
    v = _unit(text)
    if v in (0.0, 1.0):
        raise argparse.ArgumentTypeError(f"{v} must lie strictly between 0 and 1")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{v} must be >= 1")
    return v


def _non_negative(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"{v} must be non-negative")
    return v


def _grid(text: str) -> tuple:
    parts = text.split(",")
    if any(not p.strip() for p in parts):
        raise argparse.ArgumentTypeError(f"malformed grid {text!r}")
    return tuple(_unit(p.strip()) for p in parts)


def _range(kind):
    def parse(text: str) -> tuple:
        parts = text.split(",")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
        try:
            return tuple(kind(p) for p in parts)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad range {text!r}") from None
    return parse


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("--threads", type=_positive_int, default=1,
                        help="worker threads for per-image and per-grid-point work")
    common.add_argument("--output-dir", default=".", help="where artifacts are written")
    common.add_argument("--log-level", default="WARNING", choices=LOG_LEVELS,
                        type=str.upper, help=f"overridden by ${LOG_ENV}")

    parser = argparse.ArgumentParser(
        prog="suppress-detect",
        description="False-positive suppression for fruit detections.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", parents=[common],
                       help="write a seeded synthetic orchard dataset")
    g.add_argument("--out", required=True, help="dataset directory")
    g.add_argument("--scenes", type=int, default=20)
    g.add_argument("--split", choices=ingest.SPLITS, default="train")
    g.add_argument("--prefix", help="image id prefix (default: the split name)")
    g.add_argument("--width", type=int, default=160)
    g.add_argument("--height", type=int, default=120)
    g.add_argument("--apples", type=_range(int), default=(3, 6), metavar="LO,HI")
    g.add_argument("--radius", type=_range(int), default=(9, 15), metavar="LO,HI")
    g.add_argument("--occlusion", type=_range(float), default=(0.0, 0.4), metavar="LO,HI")
    g.add_argument("--fp-rate", type=_non_negative, default=2.0)
    g.add_argument("--noise", type=_non_negative, default=1.5,
                   help="proposal jitter, pixels (stddev)")

    t = sub.add_parser("train", parents=[common], help="train the suppressor")
    t.add_argument("--manifest", required=True)
    t.add_argument("--epochs", type=_positive_int, default=50)
    t.add_argument("--lr", type=_non_negative, default=0.001)
    t.add_argument("--momentum", type=_non_negative, default=0.9)
    t.add_argument("--decay", type=_non_negative, default=0.0005)
    t.add_argument("--batch-size", type=_positive_int, default=1)
    t.add_argument("--clusters", type=int, default=3)
    t.add_argument("--iou", type=_open_unit, default=evaluation.DEFAULT_IOU,
                   help="IoU at which a proposal counts as a positive training example")

    f = sub.add_parser("filter", parents=[common], help="drop detections below th1/th2")
    f.add_argument("--model", required=True)
    f.add_argument("--manifest", required=True)
    f.add_argument("--th1", type=_unit, required=True)
    f.add_argument("--th2", type=_unit, required=True)
    f.add_argument("--out", help="output file (default: OUTPUT_DIR/filtered.json)")

    e = sub.add_parser("evaluate", parents=[common], help="precision / recall / F1")
    e.add_argument("--manifest", required=True)
    e.add_argument("--detections", help="detection JSON (default: the manifest's)")
    e.add_argument("--iou", type=_open_unit, default=evaluation.DEFAULT_IOU)
    e.add_argument("--group-by", help="tag key to stratify by, e.g. lighting")

    u = sub.add_parser("tune", parents=[common], help="sweep th1 x th2, report C1/C2")
    u.add_argument("--manifest", required=True)
    u.add_argument("--model", required=True)
    u.add_argument("--grid", type=_grid, help="values for both axes, comma separated")
    u.add_argument("--grid-th1", type=_grid)
    u.add_argument("--grid-th2", type=_grid)
    u.add_argument("--iou", type=_open_unit, default=evaluation.DEFAULT_IOU)
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _out_dir(args) -> Path:
    d = Path(args.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_gen_synthetic(args) -> int:
    cfg = synthgen.SceneConfig(
        seed=args.seed, image_size=(args.width, args.height), n_apples=args.apples,
        apple_radius=args.radius, occlusion_fraction=args.occlusion,
        fp_rate=args.fp_rate, localization_noise=args.noise)
    scenes = synthgen.generate(cfg, args.scenes, prefix=args.prefix or args.split)
    manifest = synthgen.export(scenes, args.out, split=args.split)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    if args.clusters < 2:
        raise UsageError("--clusters must be >= 2")
    dataset = ingest.load_manifest(args.manifest)
    if not dataset.has_detections:
        raise UsageError(f"{args.manifest}: manifest has no 'detections_file' to train on")
    wcfg = WeightingConfig(n_clusters=args.clusters, seed=args.seed)
    cfg = net.TrainConfig(momentum=args.momentum, learning_rate=args.lr,
                          weight_decay=args.decay, epochs=args.epochs, seed=args.seed,
                          batch_size=args.batch_size)
    examples = pipeline.training_examples(dataset, wcfg, args.iou, args.threads)
    n_pos = sum(ex.y for ex in examples)
    log.info("%d training patches (%d positive)", len(examples), n_pos)
    model, history = net.train(examples, cfg, weighting=wcfg)

    out = _out_dir(args)
    net.save_model(model, out / "model.json")
    lines = ["epoch,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(history)]
    _write(out / "losses.csv", "\n".join(lines) + "\n")
    print(out / "model.json")
    return 0


def cmd_filter(args) -> int:
    model = net.load_model(args.model)
    dataset = ingest.load_manifest(args.manifest)
    scored = pipeline.score_dataset(model, dataset, threads=args.threads)
    cfg = tuner.ThresholdConfig(args.th1, args.th2)
    kept = [(d, y) for d, y in scored if d.score >= cfg.th1 and y >= cfg.th2]
    text = ingest.dump_detections([d for d, _ in kept],
                                  extra=[{"suppressor_score": y} for _, y in kept])
    path = Path(args.out) if args.out else _out_dir(args) / "filtered.json"
    _write(path, text)
    print(f"kept {len(kept)} of {len(scored)} detections -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    dataset = ingest.load_manifest(args.manifest)
    if args.detections:
        detections = ingest.parse_detections(Path(args.detections).read_text())
    else:
        if not dataset.has_detections:
            raise UsageError("pass --detections or list 'detections_file' in the manifest")
        detections = dataset.detections
    if args.group_by:
        reports = evaluation.evaluate_stratified(dataset, detections, args.iou, args.group_by)
    else:
        reports = [evaluation.evaluate(dataset, detections, args.iou)]
    print(evaluation.format_table(reports))
    _write(_out_dir(args) / "report.json", evaluation.reports_to_json(reports))
    return 0


def cmd_tune(args) -> int:
    grid1 = args.grid_th1 or args.grid or tuner.DEFAULT_GRID
    grid2 = args.grid_th2 or args.grid or tuner.DEFAULT_GRID
    model = net.load_model(args.model)
    dataset = ingest.load_manifest(args.manifest)
    scored = pipeline.score_dataset(model, dataset, threads=args.threads)
    result = tuner.sweep(scored, dataset, grid1, grid2, args.iou, threads=args.threads)
    out = _out_dir(args)
    _write(out / "sweep.json", result.to_json())
    _write(out / "sweep.csv", result.to_csv())
    for label, idx in (("C1", result.c1), ("C2", result.c2)):
        cfg, rep = result.points[idx]
        print(f"{label}: th1={cfg.th1:.2f} th2={cfg.th2:.2f} "
              f"precision={rep.precision:.3f} recall={rep.recall:.3f} f1={rep.f1:.3f}")
    return 0


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "filter": cmd_filter,
    "evaluate": cmd_evaluate,
    "tune": cmd_tune,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = os.environ.get(LOG_ENV, args.log_level).upper()
    if level not in LOG_LEVELS:
        parser.error(f"${LOG_ENV}={level!r} is not one of {', '.join(LOG_LEVELS)}")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except (SuppressError, OSError, ValueError) as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
