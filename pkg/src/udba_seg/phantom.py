"""Deterministic synthetic CT phantom generator.

Desk-scale stand-in for real thoracic datasets. Each volume holds up to
four non-overlapping "organs" on a 40 HU soft-tissue background with
Gaussian image noise (labels stay exact):

  1 ellipse  bright blob (~280 HU), present in the central slice band
  2 tube     thin low-contrast cylinder, mean within 30 HU of background,
             present in every slice
  3 ring     air-like annulus (~-150 HU), upper slice band
  4 disk     small solid disk (~150 HU), lower slice band

Geometry is jittered per volume from a seeded generator, but anchors
keep the shapes inside disjoint regions of the image.
"""

import numpy as np

from .data import CTVolume
from .exceptions import ConfigurationError

BACKGROUND_HU = 40.0
NOISE_SIGMA_HU = 20.0
TUBE_CONTRAST_HU = 25.0  # |mean inside - background| must stay <= 30
MIN_SIZE = 32

ORGAN_NAMES = ("ellipse", "tube", "ring", "disk")
PHANTOM_SPACING = (2.5, 0.97, 0.97)


def organ_labels(num_organs=3):
    """Mapping {label id -> organ name} for a phantom with num_organs."""
    return {i + 1: ORGAN_NAMES[i] for i in range(num_organs)}


def _paint(image, label, mask, hu, class_id, slices):
    for d in slices:
        free = mask & (label[d] == 0)
        image[d][free] = hu
        label[d][free] = class_id


def _one_volume(rng, size, num_slices, num_organs):
    image = np.full((num_slices, size, size), BACKGROUND_HU, dtype=np.float32)
    label = np.zeros((num_slices, size, size), dtype=np.uint8)
    yy, xx = np.ogrid[:size, :size]

    def jitter(frac):
        return (frac + rng.uniform(-0.02, 0.02)) * size

    # ellipse: central slice band, roughly 70% of the stack
    cy, cx = jitter(0.32), jitter(0.30)
    a = rng.uniform(0.10, 0.16) * size
    b = rng.uniform(0.13, 0.20) * size
    ellipse = ((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2 <= 1.0
    d0 = int(round(0.15 * num_slices))
    band = range(d0, num_slices - d0)
    _paint(image, label, ellipse, 280.0 + rng.uniform(-20, 20), 1, band)

    # tube: every slice, faint contrast against background
    cy, cx = jitter(0.40), jitter(0.75)
    r = rng.uniform(0.04, 0.06) * size
    tube = (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
    hu = BACKGROUND_HU + TUBE_CONTRAST_HU + rng.uniform(-3, 3)
    _paint(image, label, tube, hu, 2, range(num_slices))

    if num_organs >= 3:
        cy, cx = jitter(0.72), jitter(0.32)
        r_out = rng.uniform(0.09, 0.12) * size
        r_in = r_out - max(2.0, 0.03 * size)
        dist2 = (yy - cy) ** 2 + (xx - cx) ** 2
        ring = (dist2 <= r_out ** 2) & (dist2 > r_in ** 2)
        _paint(image, label, ring, -150.0 + rng.uniform(-20, 20), 3,
               range(0, max(1, int(round(0.75 * num_slices)))))

    if num_organs >= 4:
        cy, cx = jitter(0.75), jitter(0.72)
        r = rng.uniform(0.05, 0.08) * size
        disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
        _paint(image, label, disk, 150.0 + rng.uniform(-20, 20), 4,
               range(int(round(0.25 * num_slices)), num_slices))

    image += rng.normal(0.0, NOISE_SIGMA_HU, size=image.shape).astype(np.float32)
    return image, label


def generate_phantom(seed, num_volumes=4, size=64, num_slices=8, num_organs=3):
    """Generate (image volumes, label volumes), deterministic per seed."""
    if size < MIN_SIZE:
        raise ConfigurationError(
            f"size {size} too small for the shape templates (min {MIN_SIZE})"
        )
    if not 2 <= num_organs <= len(ORGAN_NAMES):
        raise ConfigurationError(
            f"num_organs must be in [2, {len(ORGAN_NAMES)}], got {num_organs}"
        )
    if num_slices < 4:
        raise ConfigurationError(f"num_slices must be >= 4, got {num_slices}")
    if num_volumes < 1:
        raise ConfigurationError(f"num_volumes must be >= 1, got {num_volumes}")
    rng = np.random.default_rng(seed)
    volumes, labels = [], []
    for v in range(num_volumes):
        image, label = _one_volume(rng, size, num_slices, num_organs)
        vid = f"phantom{v:03d}"
        volumes.append(CTVolume(image, PHANTOM_SPACING, vid))
        labels.append(CTVolume(label, PHANTOM_SPACING, vid))
    return volumes, labels


def write_phantom_dataset(out_dir, seed=0, num_volumes=5, size=64,
                          num_slices=8, num_organs=3):
    """Generate a phantom dataset on disk with a split manifest.

    Layout: out_dir/images/{id}.nii.gz, out_dir/labels/{id}.nii.gz,
    out_dir/manifest.csv (80/20 volume-level split).
    """
    from pathlib import Path

    from . import nifti
    from .data import SplitSpec, make_splits, write_manifest

    out_dir = Path(out_dir)
    volumes, labels = generate_phantom(seed, num_volumes, size, num_slices, num_organs)
    ids = [v.id for v in volumes]
    if num_volumes == 1:
        # too small to hold anything out; the lone volume is train-only
        split = SplitSpec("phantom", tuple(ids), (), (tuple(ids),))
    else:
        split = make_splits("phantom", ids, seed=seed)
    entries = []
    for vol, lab in zip(volumes, labels):
        img_path = out_dir / "images" / f"{vol.id}.nii.gz"
        lab_path = out_dir / "labels" / f"{lab.id}.nii.gz"
        nifti.write_volume(img_path, vol.voxels, vol.spacing, dtype=np.float32)
        nifti.write_volume(lab_path, lab.voxels, lab.spacing, dtype=np.uint8)
        entries.append({
            "volume_id": vol.id,
            "image": str(img_path.relative_to(out_dir)),
            "label": str(lab_path.relative_to(out_dir)),
            "split": "train" if vol.id in split.train_ids else "test",
        })
    manifest = write_manifest(out_dir / "manifest.csv", entries)
    return manifest, split
