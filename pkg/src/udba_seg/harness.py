"""Experiment harness: training runs, evaluation reports, the 12-cell
ablation grid, and contour overlay rendering.

A run directory holds everything one experiment produced:
runs/{label}/{spec.json, checkpoint.pt, checkpoint_best.pt,
train_log.csv, results.csv, results_mean.csv, results_mean.txt,
overlays/}. Ablation sweeps nest one run directory per grid cell and
add a combined results table; a failed cell is recorded as failed and
the grid keeps going.
"""

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .data import (
    DEFAULT_INPUT_SIZE,
    DEFAULT_WINDOW,
    extract_slices,
    load_split,
    load_volume,
    read_manifest,
)
from .estimator import DualDecoderSegmenter
from .exceptions import ConfigurationError
from .losses import BASES, REGULARIZERS, LossConfig
from .metrics import boundary, evaluate_volume


@dataclass
class ExperimentSpec:
    """One experiment: loss cell x network x data x optimizer settings.

    Defaults are the full-scale recipe (256x256, depth 4, Adam lr 0.01,
    batch 1, 200 epochs); desk-scale runs override them.
    """

    manifest: str = ""
    base_loss: str = "ce"
    regularizer: str = "none"
    udba: bool = False
    num_classes: int = 5
    depth: int = 4
    base_channels: int = 32
    epochs: int = 200
    lr: float = 0.01
    batch_size: int = 1
    seed: int = 0
    fold: int = 0           # None: train on all training volumes, no validation
    n_folds: int = 5
    input_size: int = DEFAULT_INPUT_SIZE
    window: tuple = DEFAULT_WINDOW
    label: str = ""         # empty: derived from the loss cell

    def loss_config(self):
        return LossConfig(self.base_loss, self.regularizer, self.udba)

    @property
    def run_label(self):
        return self.label or self.loss_config().label


def fold_partition(train_ids, seed, fold, n_folds=5):
    """Volume-level fold split of the training ids.

    Returns (fit_ids, val_ids); fold=None puts everything in fit_ids.
    """
    train_ids = list(train_ids)
    if fold is None:
        return train_ids, []
    if not 0 <= fold < n_folds:
        raise ConfigurationError(f"fold must be in [0, {n_folds}), got {fold}")
    rng = np.random.default_rng(seed)
    order = [train_ids[i] for i in rng.permutation(len(train_ids))]
    folds = [list(f) for f in np.array_split(np.array(order), n_folds)]
    val_ids = folds[fold]
    fit_ids = [i for f in folds[:fold] + folds[fold + 1:] for i in f]
    return fit_ids, val_ids


def _estimator_from_spec(spec):
    return DualDecoderSegmenter(
        num_classes=spec.num_classes, depth=spec.depth,
        base_channels=spec.base_channels, base_loss=spec.base_loss,
        regularizer=spec.regularizer, udba=spec.udba, epochs=spec.epochs,
        lr=spec.lr, batch_size=spec.batch_size, seed=spec.seed,
    )


def train(spec, out_dir, resume_from=None):
    """Run one training experiment into a run directory.

    Writes spec.json, train_log.csv, checkpoint.pt (final) and
    checkpoint_best.pt (best held-out Dice; final when no fold), plus a
    small summary.json. Returns (estimator, summary dict).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "spec.json", "w") as fh:
        json.dump(asdict(spec), fh, indent=2, default=str)

    train_entries = [e for e in read_manifest(spec.manifest) if e["split"] == "train"]
    if not train_entries:
        raise ConfigurationError(f"manifest {spec.manifest} has no training volumes")
    fit_ids, val_ids = fold_partition(
        [e["volume_id"] for e in train_entries], spec.seed, spec.fold, spec.n_folds
    )
    X, y, _ = load_split(spec.manifest, "train", spec.input_size, spec.window,
                         volume_ids=fit_ids)
    X_val = y_val = None
    if val_ids:
        X_val, y_val, _ = load_split(spec.manifest, "train", spec.input_size,
                                     spec.window, volume_ids=val_ids)

    if resume_from is not None:
        est = DualDecoderSegmenter.load(resume_from)
        est.set_params(epochs=spec.epochs)
        est.fit(X, y, X_val=X_val, y_val=y_val,
                log_file=out_dir / "train_log.csv", resume=True)
    else:
        est = _estimator_from_spec(spec)
        est.fit(X, y, X_val=X_val, y_val=y_val,
                log_file=out_dir / "train_log.csv")

    est.save(out_dir / "checkpoint.pt")
    est.save(out_dir / "checkpoint_best.pt", which="best")
    summary = {
        "label": spec.run_label,
        "epochs_done": est.epochs_done_,
        "final_loss": est.history_[-1]["last_total"] if est.history_ else None,
        "best_epoch": est.best_epoch_,
        "best_val_dice": est.best_dice_ if est.best_dice_ >= 0 else None,
        "fit_volumes": fit_ids,
        "val_volumes": val_ids,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return est, summary


def default_organ_labels(num_classes):
    return {c: f"class{c}" for c in range(1, num_classes)}


def evaluate(checkpoint, manifest, split="test", out_dir=None, organs=None,
             volume_ids=None):
    """Evaluate a checkpoint over a manifest split, one row per (volume, organ).

    Ground truth is compared in preprocessed space (resized slices);
    pixel spacing is rescaled accordingly so ASD stays in mm. Returns
    (rows, aggregate) where rows are per-volume dicts and aggregate is
    the per-organ mean/std table. An empty split yields empty rows.
    """
    est = DualDecoderSegmenter.load(checkpoint)
    organs = organs or default_organ_labels(est.num_classes)
    entries = [e for e in read_manifest(manifest) if e["split"] == split]
    if volume_ids is not None:
        wanted = {str(v) for v in volume_ids}
        entries = [e for e in entries if e["volume_id"] in wanted]

    rows = []
    size = est.input_size_
    for entry in entries:
        vol = load_volume(entry["image"])
        lab = load_volume(entry["label"])
        samples = extract_slices(vol, lab, input_size=size)
        X = np.stack([s.image for s in samples])
        gt = np.stack([s.label for s in samples])
        pred = est.predict(X)
        sz, sy, sx = vol.spacing
        h, w = vol.voxels.shape[1:]
        spacing_eval = (sz, sy * h / size, sx * w / size)
        for report in evaluate_volume(gt, pred, spacing_eval, organs):
            rows.append({
                "volume_id": entry["volume_id"], "organ": report.organ,
                "dice": report.dice, "asd": report.asd, "iou": report.iou,
            })

    aggregate = aggregate_results(rows, organs)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "results.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["volume_id", "organ",
                                                    "dice", "asd", "iou"])
            writer.writeheader()
            writer.writerows(rows)
        _write_aggregate(out_dir, aggregate)
    return rows, aggregate


def aggregate_results(rows, organs):
    """Per-organ mean +/- std over volumes; NaN-aware for ASD."""
    table = []
    for name in organs.values():
        sub = [r for r in rows if r["organ"] == name]
        if not sub:
            continue
        entry = {"organ": name}
        for metric in ("dice", "asd", "iou"):
            vals = np.array([r[metric] for r in sub], dtype=float)
            vals = vals[np.isfinite(vals)]
            entry[f"{metric}_mean"] = float(vals.mean()) if vals.size else float("nan")
            entry[f"{metric}_std"] = float(vals.std()) if vals.size else float("nan")
        table.append(entry)
    return table


def _write_aggregate(out_dir, aggregate):
    fields = ["organ", "dice_mean", "dice_std", "asd_mean", "asd_std",
              "iou_mean", "iou_std"]
    with open(out_dir / "results_mean.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(aggregate)
    lines = [f"{'organ':<12}" + "".join(f"{m:>16}" for m in ("dice", "asd", "iou"))]
    for row in aggregate:
        cells = [
            f"{row['dice_mean']:.4f} ± {row['dice_std']:.4f}",
            f"{row['asd_mean']:.3f} ± {row['asd_std']:.3f}",
            f"{row['iou_mean']:.4f} ± {row['iou_std']:.4f}",
        ]
        lines.append(f"{row['organ']:<12}" + "".join(f"{c:>16}" for c in cells))
    (out_dir / "results_mean.txt").write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------------ ablation

def ablation_grid():
    """The 12 loss/attention cells in results-table order."""
    return [
        LossConfig(base, reg, udba)
        for base in BASES
        for reg in REGULARIZERS
        for udba in (False, True)
    ]


def _run_cell(args):
    """One ablation cell: train then evaluate. Top-level for pickling."""
    spec_dict, runs_root, organs = args
    spec = ExperimentSpec(**spec_dict)
    cell_dir = Path(runs_root) / spec.run_label
    try:
        train(spec, cell_dir)
        rows, aggregate = evaluate(cell_dir / "checkpoint_best.pt", spec.manifest,
                                   split="test", out_dir=cell_dir, organs=organs)
        dice_by_organ = {a["organ"]: a["dice_mean"] for a in aggregate}
        return {"label": spec.run_label, "status": "ok", "dice": dice_by_organ}
    except Exception as exc:  # cell failures must not kill the grid
        return {"label": spec.run_label, "status": "failed", "error": str(exc),
                "dice": {}}


def ablate(base_spec, runs_root, organs=None, jobs=1):
    """Run the full 12-cell grid; returns the result rows in grid order.

    Each cell trains and evaluates in its own run directory. Failures
    are recorded in the table and the remaining cells still run.
    """
    runs_root = Path(runs_root)
    runs_root.mkdir(parents=True, exist_ok=True)
    organs = organs or default_organ_labels(base_spec.num_classes)
    tasks = []
    for cell in ablation_grid():
        spec = replace(base_spec, base_loss=cell.base, regularizer=cell.regularizer,
                       udba=cell.udba, label="")
        tasks.append((asdict(spec), str(runs_root), organs))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    organ_names = list(organs.values())
    csv_text, txt_text = render_ablation_table(results, organ_names)
    (runs_root / "ablation_results.csv").write_text(csv_text)
    (runs_root / "ablation_results.txt").write_text(txt_text)
    return results


def render_ablation_table(results, organ_names):
    """CSV and aligned-text renderings; text marks column maxima with *."""
    header = ["label", "status"] + organ_names
    csv_lines = [",".join(header)]
    for row in results:
        cells = [row["label"], row["status"]]
        cells += [
            f"{row['dice'].get(o, float('nan')):.4f}" if row["status"] == "ok" else ""
            for o in organ_names
        ]
        csv_lines.append(",".join(cells))

    best = {}
    for organ in organ_names:
        vals = [r["dice"].get(organ) for r in results
                if r["status"] == "ok" and organ in r["dice"]]
        finite = [v for v in vals if np.isfinite(v)]
        best[organ] = max(finite) if finite else None

    width = max(len(r["label"]) for r in results) + 2
    txt_lines = [f"{'experiment':<{width}}" + "".join(f"{o:>14}" for o in organ_names)]
    for row in results:
        cells = []
        for organ in organ_names:
            if row["status"] != "ok":
                cells.append("failed")
                continue
            val = row["dice"].get(organ, float("nan"))
            text = f"{val:.4f}"
            if best[organ] is not None and np.isfinite(val) and val == best[organ]:
                text = f"*{text}*"
            cells.append(text)
        txt_lines.append(f"{row['label']:<{width}}" + "".join(f"{c:>14}" for c in cells))
    return "\n".join(csv_lines) + "\n", "\n".join(txt_lines) + "\n"


# ------------------------------------------------------------------ overlays

def render_overlays(checkpoint, manifest, volume_ids, out_dir, slices=None,
                    organs=None):
    """Write contour overlays: ground truth in red, prediction in green.

    One PNG per (volume, organ, slice), named {volume_id}_{organ}_s{idx:03d}.png.
    slices=None renders every axial slice. Coincident contours show as
    yellow (both channels set).
    """
    est = DualDecoderSegmenter.load(checkpoint)
    organs = organs or default_organ_labels(est.num_classes)
    by_id = {e["volume_id"]: e for e in read_manifest(manifest)}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths = []
    for vid in volume_ids:
        entry = by_id.get(str(vid))
        if entry is None:
            raise ConfigurationError(f"volume id {vid!r} not in manifest")
        vol = load_volume(entry["image"])
        lab = load_volume(entry["label"])
        samples = extract_slices(vol, lab, input_size=est.input_size_)
        X = np.stack([s.image for s in samples])
        gt = np.stack([s.label for s in samples])
        pred = est.predict(X)
        slice_list = range(len(samples)) if slices is None else slices
        for d in slice_list:
            if not 0 <= d < len(samples):
                raise ConfigurationError(
                    f"slice {d} out of range for volume {vid!r} ({len(samples)} slices)"
                )
            gray = (X[d] * 255.0).astype(np.uint8)
            for label_id, name in organs.items():
                rgb = np.stack([gray] * 3, axis=-1)
                gt_c = boundary(gt[d] == label_id)
                pr_c = boundary(pred[d] == label_id)
                rgb[gt_c | pr_c] = 0
                rgb[..., 0][gt_c] = 255
                rgb[..., 1][pr_c] = 255
                path = out_dir / f"{vid}_{name}_s{d:03d}.png"
                Image.fromarray(rgb).save(path)
                paths.append(path)
    return paths
