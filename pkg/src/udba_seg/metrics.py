"""Evaluation metrics: Dice, IoU, average surface distance.

All three are symmetric in (ground truth, prediction). Dice and IoU
follow the both-empty-implies-perfect convention (correctly predicting
organ absence scores 1). ASD is the symmetric surface distance between
boundary pixels, where the boundary is the 4-connectivity erosion
difference; it is undefined for an empty mask and raises instead of
fabricating a number.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.spatial import cKDTree

from .exceptions import EmptyMaskError

# 4-connectivity cross
_STRUCT = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class OrganReport:
    organ: str
    dice: float
    iou: float
    asd: float  # NaN when undefined (organ absent from a mask)


def dice(gt_mask, pred_mask):
    """Overlap 2|A&B| / (|A|+|B|); 1.0 when both masks are empty."""
    gt = np.asarray(gt_mask, dtype=bool)
    pred = np.asarray(pred_mask, dtype=bool)
    total = gt.sum() + pred.sum()
    if total == 0:
        return 1.0
    return 2.0 * np.logical_and(gt, pred).sum() / total


def iou(gt_mask, pred_mask):
    """Intersection over union; 1.0 when both masks are empty."""
    gt = np.asarray(gt_mask, dtype=bool)
    pred = np.asarray(pred_mask, dtype=bool)
    union = np.logical_or(gt, pred).sum()
    if union == 0:
        return 1.0
    return np.logical_and(gt, pred).sum() / union


def boundary(mask):
    """Boundary pixels: mask minus its 4-connectivity erosion.

    Image-border pixels of the mask count as boundary (the outside is
    treated as background).
    """
    mask = np.asarray(mask, dtype=bool)
    return mask & ~binary_erosion(mask, structure=_STRUCT, border_value=0)


def asd(gt_mask, pred_mask, spacing=(1.0, 1.0)):
    """Average symmetric surface distance between two 2D masks.

    Mean over each mask's boundary pixels of the Euclidean distance to
    the other boundary, averaged over both directions. spacing is
    (row, col) in mm/px. Raises EmptyMaskError for an empty mask.
    """
    gt = np.asarray(gt_mask, dtype=bool)
    pred = np.asarray(pred_mask, dtype=bool)
    if not gt.any():
        raise EmptyMaskError("ground-truth mask is empty, surface distance undefined")
    if not pred.any():
        raise EmptyMaskError("prediction mask is empty, surface distance undefined")
    scale = np.asarray(spacing, dtype=float)
    pts_gt = np.argwhere(boundary(gt)) * scale
    pts_pred = np.argwhere(boundary(pred)) * scale
    d_gp = cKDTree(pts_pred).query(pts_gt)[0]
    d_pg = cKDTree(pts_gt).query(pts_pred)[0]
    return 0.5 * (d_gp.mean() + d_pg.mean())


def evaluate_volume(gt_volume, pred_volume, spacing, organ_labels):
    """Per-organ metrics over a stacked [D,H,W] label volume pair.

    organ_labels: mapping {label id -> organ name}. Dice/IoU count
    voxels over the whole stack. ASD is computed per axial slice and
    averaged over slices where both masks contain the organ; NaN when
    no such slice exists (including organ absent everywhere).
    """
    gt_volume = np.asarray(gt_volume)
    pred_volume = np.asarray(pred_volume)
    if gt_volume.shape != pred_volume.shape:
        raise ValueError(
            f"volume shape mismatch: {gt_volume.shape} vs {pred_volume.shape}"
        )
    _, sy, sx = spacing
    reports = []
    for label_id, name in organ_labels.items():
        gt3 = gt_volume == label_id
        pr3 = pred_volume == label_id
        slice_asds = [
            asd(gt3[d], pr3[d], (sy, sx))
            for d in range(gt3.shape[0])
            if gt3[d].any() and pr3[d].any()
        ]
        reports.append(
            OrganReport(
                organ=name,
                dice=dice(gt3, pr3),
                iou=iou(gt3, pr3),
                asd=float(np.mean(slice_asds)) if slice_asds else float("nan"),
            )
        )
    return reports
