"""Command-line surface.

Commands: train, evaluate, ablate, render-overlays, make-phantom.
Each takes an optional JSON experiment config plus override flags.
Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 ablation
grid completed with failed cells.
"""

import argparse
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

from . import harness, phantom
from .estimator import DualDecoderSegmenter
from .exceptions import ConfigurationError
from .harness import ExperimentSpec
from .nifti import NiftiError


class Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


_UNSET = object()


def _fold(value):
    return None if value.lower() == "none" else int(value)


def _int_list(value):
    return [int(v) for v in value.split(",") if v]


def _str_list(value):
    return [v for v in value.split(",") if v]


_SPEC_FIELDS = {f.name for f in dataclass_fields(ExperimentSpec)}


def _add_experiment_flags(p):
    p.add_argument("--config", help="JSON experiment config; flags override it")
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--dataset", help="dataset name (phantom enables organ names)")
    p.add_argument("--base-loss", choices=["dice", "ce"], dest="base_loss")
    p.add_argument("--regularizer", choices=["none", "ctr", "ctrm"])
    p.add_argument("--udba", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", type=_fold, default=_UNSET, help="fold index or 'none'")
    p.add_argument("--num-classes", type=int, dest="num_classes")
    p.add_argument("--depth", type=int)
    p.add_argument("--base-channels", type=int, dest="base_channels")
    p.add_argument("--input-size", type=int, dest="input_size")
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--label", help="run directory label override")
    p.add_argument("--organs", type=_str_list,
                   help="comma-separated organ names for class ids 1..N-1")


def _spec_from_args(args):
    values = {}
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - _SPEC_FIELDS
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for name in _SPEC_FIELDS - {"fold"}:
        arg = getattr(args, name, None)
        if arg is not None:
            values[name] = arg
    if getattr(args, "fold", _UNSET) is not _UNSET:
        values["fold"] = args.fold
    if "window" in values:
        values["window"] = tuple(values["window"])
    spec = ExperimentSpec(**values)
    if not spec.manifest:
        raise ConfigurationError("a dataset manifest is required (--manifest)")
    spec.loss_config()  # validates the loss cell
    return spec


def _organ_map(args, num_classes):
    if getattr(args, "organs", None):
        names = args.organs
        if len(names) != num_classes - 1:
            raise ConfigurationError(
                f"--organs lists {len(names)} names for {num_classes - 1} "
                "foreground classes"
            )
        return {i + 1: n for i, n in enumerate(names)}
    if getattr(args, "dataset", None) == "phantom":
        return phantom.organ_labels(num_classes - 1)
    return None


def cmd_train(args):
    spec = _spec_from_args(args)
    out_dir = Path(args.out) if args.out else Path("runs") / spec.run_label
    _, summary = harness.train(spec, out_dir, resume_from=args.resume)
    loss = summary["final_loss"]
    loss_text = f"{loss:.6f}" if loss is not None else "n/a"
    print(f"trained {summary['label']}: {summary['epochs_done']} epochs, "
          f"final loss {loss_text} -> {out_dir}")
    return 0


def cmd_evaluate(args):
    est = DualDecoderSegmenter.load(args.checkpoint)
    organs = _organ_map(args, est.num_classes)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    rows, aggregate = harness.evaluate(
        args.checkpoint, args.manifest, split=args.split, out_dir=out_dir,
        organs=organs, volume_ids=args.volumes,
    )
    if not rows:
        print(f"no volumes in split {args.split!r}", file=sys.stderr)
        return 2
    for entry in aggregate:
        print(f"{entry['organ']:<12} dice {entry['dice_mean']:.4f} "
              f"asd {entry['asd_mean']:.3f} iou {entry['iou_mean']:.4f}")
    return 0


def cmd_ablate(args):
    spec = _spec_from_args(args)
    runs_root = Path(args.out) if args.out else Path("runs")
    organs = _organ_map(args, spec.num_classes)
    results = harness.ablate(spec, runs_root, organs=organs, jobs=args.jobs)
    print((runs_root / "ablation_results.txt").read_text(), end="")
    failed = [r for r in results if r["status"] != "ok"]
    for row in failed:
        print(f"failed cell {row['label']}: {row['error']}", file=sys.stderr)
    return 3 if failed else 0


def cmd_render_overlays(args):
    est = DualDecoderSegmenter.load(args.checkpoint)
    organs = _organ_map(args, est.num_classes)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent / "overlays"
    paths = harness.render_overlays(
        args.checkpoint, args.manifest, args.volumes, out_dir,
        slices=args.slices, organs=organs,
    )
    print(f"wrote {len(paths)} overlays to {out_dir}")
    return 0


def cmd_make_phantom(args):
    manifest, split = phantom.write_phantom_dataset(
        args.out, seed=args.seed, num_volumes=args.volumes, size=args.size,
        num_slices=args.slices, num_organs=args.num_organs,
    )
    print(f"wrote phantom dataset: {manifest} "
          f"({len(split.train_ids)} train / {len(split.test_ids)} test)")
    return 0


def build_parser():
    parser = Parser(prog="udba-seg",
                    description="Dual-decoder segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one experiment")
    _add_experiment_flags(p)
    p.add_argument("--out", help="run directory (default runs/{label})")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--volumes", type=_str_list, help="restrict to these volume ids")
    p.add_argument("--organs", type=_str_list)
    p.add_argument("--dataset")
    p.add_argument("--out", help="report directory (default checkpoint dir)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the 12-cell loss/attention grid")
    _add_experiment_flags(p)
    p.add_argument("--out", help="runs root directory (default runs/)")
    p.add_argument("--jobs", type=int, default=1,
                   help="independent worker processes for grid cells")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render-overlays",
                       help="write GT (red) vs prediction (green) contours")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--volumes", type=_str_list, required=True)
    p.add_argument("--slices", type=_int_list, help="comma-separated slice indices")
    p.add_argument("--organs", type=_str_list)
    p.add_argument("--dataset")
    p.add_argument("--out", help="overlay directory")
    p.set_defaults(func=cmd_render_overlays)

    p = sub.add_parser("make-phantom", help="generate a synthetic CT dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--volumes", type=int, default=5)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--slices", type=int, default=8)
    p.add_argument("--num-organs", type=int, default=3, dest="num_organs")
    p.set_defaults(func=cmd_make_phantom)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, NiftiError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
