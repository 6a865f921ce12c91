"""Uncertainty-driven bottleneck attention.

The two decoders disagree wherever the task is hard; this module turns
that disagreement into a multiplicative mask on the bottleneck features.
Pipeline: max softmax probability per decoder -> foreground agreement
masks -> binary multi-confidence map -> attention = max(p_main, p_aux)
gated by the map -> area-averaged down to bottleneck resolution and
replicated across channels.

Everything here is a pure function of detached decoder outputs; no
gradients flow through the attention values by design.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


def max_probability(logits):
    """Per-pixel maximum softmax probability. [B,N,H,W] -> [B,H,W]."""
    return torch.softmax(logits, dim=1).max(dim=1).values


def agreement_masks(main_labels, aux_labels):
    """Foreground agreement between two hard label maps.

    union: pixels either decoder calls foreground.
    intersection: pixels where both predict the same foreground class.
    Returns (union_mask, intersection_mask), both bool [B,H,W].
    """
    if main_labels.shape != aux_labels.shape:
        raise ValueError(
            f"label shape mismatch: {tuple(main_labels.shape)} vs {tuple(aux_labels.shape)}"
        )
    fg_main = main_labels != 0
    fg_aux = aux_labels != 0
    union = fg_main | fg_aux
    intersection = (main_labels == aux_labels) & fg_main
    return union, intersection


def multi_confidence_map(union_mask, intersection_mask):
    """Binary confidence region: union OR intersection.

    Since intersection is a subset of union this collapses to the union;
    the OR is kept literal so either mask can be swapped out later.
    Returns float {0,1} tensor.
    """
    return (union_mask | intersection_mask).float()


def compute_attention(p_main, p_aux, mcm):
    """Attention = max(p_main, p_aux) gated by the confidence map."""
    return torch.maximum(p_main, p_aux) * mcm


def project_to_bottleneck(att, target_shape):
    """Downsample [B,H,W] attention to bottleneck [B,C_b,H_b,W_b].

    Spatial reduction is area averaging over aligned blocks; the result
    is replicated (not copied) across the channel axis.
    """
    c_b, h_b, w_b = target_shape
    b, h, w = att.shape
    if h % h_b or w % w_b:
        raise ValueError(
            f"attention {h}x{w} not divisible by bottleneck {h_b}x{w_b}"
        )
    down = F.avg_pool2d(att.unsqueeze(1), kernel_size=(h // h_b, w // w_b))
    return down.expand(b, c_b, h_b, w_b)


def apply_attention(z, att_proj):
    """Elementwise product of bottleneck features and projected attention."""
    if z.shape != att_proj.shape:
        raise ValueError(
            f"bottleneck/attention shape mismatch: {tuple(z.shape)} vs {tuple(att_proj.shape)}"
        )
    return z * att_proj


@dataclass
class ConfidenceBundle:
    """Every intermediate of the attention computation, for inspection."""

    p_main: torch.Tensor        # [B,H,W]
    p_aux: torch.Tensor         # [B,H,W]
    union_mask: torch.Tensor    # bool [B,H,W]
    intersection_mask: torch.Tensor
    mcm: torch.Tensor           # float {0,1} [B,H,W]
    attention: torch.Tensor     # [B,H,W] in [0,1]


def confidence_bundle(main_logits, aux_logits):
    """Full attention pipeline from raw decoder logits, detached."""
    with torch.no_grad():
        p_main = max_probability(main_logits)
        p_aux = max_probability(aux_logits)
        union, inter = agreement_masks(
            main_logits.argmax(dim=1), aux_logits.argmax(dim=1)
        )
        mcm = multi_confidence_map(union, inter)
        att = compute_attention(p_main, p_aux, mcm)
    return ConfidenceBundle(p_main, p_aux, union, inter, mcm, att)


def save_confidence_maps(bundle, sample_id, out_dir):
    """Dump per-sample maps as 8-bit grayscale `{sample_id}_{map}.png`."""
    from PIL import Image
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = {
        "p_main": bundle.p_main,
        "p_aux": bundle.p_aux,
        "union": bundle.union_mask.float(),
        "intersection": bundle.intersection_mask.float(),
        "mcm": bundle.mcm,
        "attention": bundle.attention,
    }
    paths = []
    for name, tensor in maps.items():
        arr = tensor[0].detach().cpu().numpy()
        img = np.clip(arr * 255.0, 0, 255).astype(np.uint8)
        path = out_dir / f"{sample_id}_{name}.png"
        Image.fromarray(img, mode="L").save(path)
        paths.append(path)
    return paths
