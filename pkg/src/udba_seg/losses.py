"""Segmentation losses and the CT-intensity regularizers.

Base losses are soft Dice and pixelwise cross-entropy. The regularizers
compare intensity totals under the ground-truth mask against totals
under the (soft) predicted mask: CTR does this per foreground class,
CTRM builds the full N x N class-pair matrix and takes its mean. The
composite training loss is base(main) + base(aux) + regularizer.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .exceptions import ConfigurationError

EPS = 1e-6

BASES = ("dice", "ce")
REGULARIZERS = ("none", "ctr", "ctrm")


@dataclass(frozen=True)
class LossConfig:
    base: str = "ce"
    regularizer: str = "none"
    udba: bool = False

    def __post_init__(self):
        if self.base not in BASES:
            raise ConfigurationError(f"base must be one of {BASES}, got {self.base!r}")
        if self.regularizer not in REGULARIZERS:
            raise ConfigurationError(
                f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}"
            )

    @property
    def label(self):
        """Ablation row name, e.g. 'CE+CTRM(UDBA)'."""
        name = "Dice" if self.base == "dice" else "CE"
        if self.regularizer != "none":
            name += "+" + self.regularizer.upper()
        if self.udba:
            name += "(UDBA)"
        return name


def one_hot(labels, num_classes):
    """Integer labels [B,H,W] -> float one-hot [B,N,H,W]."""
    return F.one_hot(labels.long(), num_classes).permute(0, 3, 1, 2).float()


def dice_loss(probs, gt_onehot):
    """Soft Dice loss: 1 - mean over classes of the per-class Dice.

    probs: softmax outputs [B,N,H,W]; gt_onehot same shape.
    """
    dims = (0, 2, 3)
    inter = (probs * gt_onehot).sum(dim=dims)
    denom = probs.sum(dim=dims) + gt_onehot.sum(dim=dims)
    dice = (2.0 * inter + EPS) / (denom + EPS)
    return 1.0 - dice.mean()


def ce_loss(logits, gt_labels):
    """Pixelwise cross-entropy, mean over all pixels."""
    return F.cross_entropy(logits, gt_labels.long())


def ctr(ct, gt_mask, p_mask):
    """Absolute difference of masked intensity totals, area-normalized.

    | sum(ct * gt_mask) - sum(ct * p_mask) | / (W * H), where p_mask may
    be soft probabilities (that is what makes it trainable). Leading
    dims are treated as batch and averaged.
    """
    area = ct.shape[-1] * ct.shape[-2]
    diff = (ct * (gt_mask - p_mask)).sum(dim=(-2, -1))
    return (diff.abs() / area).mean()


def ctr_loss(ct, gt_onehot, probs):
    """Multi-class CTR: per-class values summed over foreground classes.

    Background is skipped; its intensity total would swamp the organs.
    ct: [...,H,W]; gt_onehot, probs: [...,N,H,W] with class axis at -3.
    """
    num_classes = gt_onehot.shape[-3]
    terms = [
        ctr(ct, gt_onehot.select(-3, c), probs.select(-3, c))
        for c in range(1, num_classes)
    ]
    return torch.stack(terms).sum()


def ctrm_matrix(ct, gt_onehot, probs):
    """N x N matrix; entry (i,j) = ctr(class-i ground truth, class-j prediction)."""
    num_classes = gt_onehot.shape[-3]
    rows = []
    for i in range(num_classes):
        row = [
            ctr(ct, gt_onehot.select(-3, i), probs.select(-3, j))
            for j in range(num_classes)
        ]
        rows.append(torch.stack(row))
    return torch.stack(rows)


def ctrm_loss(matrix):
    """Mean of the CTRM entries."""
    return matrix.mean()


def _base_loss(kind, logits, gt_labels, num_classes):
    if kind == "dice":
        return dice_loss(torch.softmax(logits, dim=1), one_hot(gt_labels, num_classes))
    return ce_loss(logits, gt_labels)


def total_loss(out, gt_labels, ct, cfg):
    """Composite loss: base(main_final) + base(aux) + regularizer.

    out: forward-pass bundle with .main_final and .aux logits [B,N,H,W];
    gt_labels: [B,H,W] ints; ct: [B,H,W] normalized intensities.
    Returns (total, breakdown) with float per-term values for logging.
    """
    num_classes = out.main_final.shape[1]
    l_main = _base_loss(cfg.base, out.main_final, gt_labels, num_classes)
    l_aux = _base_loss(cfg.base, out.aux, gt_labels, num_classes)

    if cfg.regularizer == "none":
        l_reg = out.main_final.new_zeros(())
    else:
        probs = torch.softmax(out.main_final, dim=1)
        gt_oh = one_hot(gt_labels, num_classes)
        if cfg.regularizer == "ctr":
            l_reg = ctr_loss(ct, gt_oh, probs)
        else:
            l_reg = ctrm_loss(ctrm_matrix(ct, gt_oh, probs))

    total = l_main + l_aux + l_reg
    breakdown = {
        "L_main": float(l_main.detach()),
        "L_aux": float(l_aux.detach()),
        "L_reg": float(l_reg.detach()),
        "L_total": float(total.detach()),
    }
    return total, breakdown
