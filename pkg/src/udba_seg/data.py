"""Volume ingestion, preprocessing, and dataset splits.

A CT volume arrives as [D,H,W] voxels in HU-like units. Preprocessing
per axial slice: clamp to an HU window, scale to [0,1], resize to the
network input size (bilinear for the image, nearest-neighbor for the
label map so no interpolated class ids appear). Splits are always at
volume level; slices of one volume never straddle train/validation.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import nifti
from .exceptions import ConfigurationError

# soft-tissue HU window
DEFAULT_WINDOW = (-200.0, 300.0)
DEFAULT_INPUT_SIZE = 256

# dataset -> (expected volume count, train count); None = free-form 80/20
DATASET_SIZES = {"segthor": (40, 35), "lctsc": (60, 36)}


@dataclass
class CTVolume:
    voxels: np.ndarray      # [D,H,W], HU-like
    spacing: tuple          # (sz, sy, sx) mm
    id: str

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise ValueError(f"volume {self.id!r} must be 3D, got {self.voxels.shape}")
        if not all(s > 0 for s in self.spacing):
            raise ValueError(f"volume {self.id!r} has non-positive spacing {self.spacing}")


@dataclass
class SliceSample:
    image: np.ndarray       # [S,S] float32 in [0,1]
    label: np.ndarray       # [S,S] int64
    volume_id: str
    slice_index: int


@dataclass
class SplitSpec:
    dataset: str
    train_ids: tuple
    test_ids: tuple
    folds: tuple            # tuple of id-tuples partitioning train_ids


def load_volume(path):
    """Read a NIfTI-style volume file into a CTVolume."""
    voxels, spacing = nifti.read_volume(path)
    name = Path(path).name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return CTVolume(voxels=voxels, spacing=spacing, id=name)


def enhance_contrast(slice_hu, window=DEFAULT_WINDOW):
    """HU windowing + min-max scaling: clamp to window, map to [0,1]."""
    lo, hi = window
    if not hi > lo:
        raise ConfigurationError(f"window must satisfy lo < hi, got {window}")
    return np.clip((np.asarray(slice_hu, dtype=np.float32) - lo) / (hi - lo), 0.0, 1.0)


def _resize_bilinear(img, out_size):
    if img.shape == (out_size, out_size):
        return np.asarray(img, dtype=np.float32)
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))[None, None]
    out = F.interpolate(t, size=(out_size, out_size), mode="bilinear", align_corners=False)
    return np.clip(out[0, 0].numpy(), 0.0, 1.0)


def _resize_nearest(label, out_size):
    label = np.asarray(label)
    if label.shape == (out_size, out_size):
        return label.astype(np.int64)
    h, w = label.shape
    rows = np.clip(np.round((np.arange(out_size) + 0.5) * h / out_size - 0.5), 0, h - 1)
    cols = np.clip(np.round((np.arange(out_size) + 0.5) * w / out_size - 0.5), 0, w - 1)
    return label[np.ix_(rows.astype(int), cols.astype(int))].astype(np.int64)


def extract_slices(vol, labels=None, input_size=DEFAULT_INPUT_SIZE, window=DEFAULT_WINDOW):
    """One preprocessed SliceSample per axial index of the volume.

    labels=None yields all-background label maps (inference-only use).
    """
    if labels is not None and labels.voxels.shape != vol.voxels.shape:
        raise ValueError(
            f"volume/label shape mismatch for {vol.id!r}: "
            f"{vol.voxels.shape} vs {labels.voxels.shape}"
        )
    samples = []
    for d in range(vol.voxels.shape[0]):
        image = _resize_bilinear(enhance_contrast(vol.voxels[d], window), input_size)
        if labels is None:
            label = np.zeros((input_size, input_size), dtype=np.int64)
        else:
            label = _resize_nearest(labels.voxels[d], input_size)
        samples.append(SliceSample(image, label, vol.id, d))
    return samples


def make_splits(dataset, ids, seed=0, n_folds=5):
    """Deterministic volume-level train/test split plus CV folds.

    segthor and lctsc enforce the published counts (40 -> 35/5 and
    60 -> 36/24); anything else splits 80/20 with at least one test id.
    """
    ids = [str(i) for i in ids]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate volume ids in split input")
    if dataset in DATASET_SIZES:
        expected, n_train = DATASET_SIZES[dataset]
        if len(ids) != expected:
            raise ConfigurationError(
                f"{dataset} expects {expected} volumes, got {len(ids)}"
            )
    else:
        if len(ids) < 2:
            raise ConfigurationError("need at least 2 volumes to split")
        n_train = max(1, min(len(ids) - 1, round(0.8 * len(ids))))
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    train_ids, test_ids = order[:n_train], order[n_train:]
    folds = tuple(tuple(f) for f in np.array_split(np.array(train_ids), n_folds))
    return SplitSpec(dataset=dataset, train_ids=tuple(train_ids),
                     test_ids=tuple(test_ids), folds=folds)


MANIFEST_FIELDS = ("volume_id", "image", "label", "split")


def write_manifest(path, entries):
    """CSV manifest: volume_id, image path, label path, split assignment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        for entry in entries:
            writer.writerow({k: entry[k] for k in MANIFEST_FIELDS})
    return path


def read_manifest(path):
    """Read a manifest; relative paths resolve against the manifest dir."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"no such manifest: {path}")
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            missing = [k for k in MANIFEST_FIELDS if not row.get(k)]
            if missing:
                raise ConfigurationError(f"manifest row missing fields {missing}: {row}")
            for key in ("image", "label"):
                p = Path(row[key])
                row[key] = str(p if p.is_absolute() else base / p)
            entries.append(row)
    return entries


def load_split(manifest_path, split, input_size=DEFAULT_INPUT_SIZE,
               window=DEFAULT_WINDOW, volume_ids=None):
    """Load every slice of a manifest split into arrays.

    Returns (X [n,S,S] float32, y [n,S,S] int64, meta) where meta is a
    list of (volume_id, slice_index, spacing) per slice.
    """
    entries = [e for e in read_manifest(manifest_path) if e["split"] == split]
    if volume_ids is not None:
        wanted = {str(v) for v in volume_ids}
        entries = [e for e in entries if e["volume_id"] in wanted]
    images, labels, meta = [], [], []
    for entry in entries:
        vol = load_volume(entry["image"])
        lab = load_volume(entry["label"])
        vol.id = lab.id = entry["volume_id"]
        for s in extract_slices(vol, lab, input_size=input_size, window=window):
            images.append(s.image)
            labels.append(s.label)
            meta.append((s.volume_id, s.slice_index, vol.spacing))
    if not images:
        n = input_size
        return (np.zeros((0, n, n), np.float32), np.zeros((0, n, n), np.int64), [])
    return np.stack(images), np.stack(labels), meta
