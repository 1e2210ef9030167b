"""Loss terms: video frame/state-change BCE, graph supervision, frame-clip
consistency, and their weighted total.

Graph sub-terms are masked by the ground-truth existence bits and normalized
by the count of active elements, so absent slots contribute exactly zero loss
and zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .haog import Haog
from .model import HaogPrediction, box_cwh_to_corners


@dataclass(frozen=True)
class LossWeights:
    lambda_con: float = 10.0
    lambda_haog: float = 5.0
    lambda_vid: float = 1.0

    def __post_init__(self):
        for name in ("lambda_con", "lambda_haog", "lambda_vid"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")


@dataclass
class LossBreakdown:
    l_vid: float
    l_haog: float
    box_giou: float
    box_l1: float
    existence: float
    contact: float
    l_con: float
    l_total: float

    def as_dict(self) -> dict:
        return {
            "l_vid": self.l_vid,
            "l_haog": self.l_haog,
            "box_giou": self.box_giou,
            "box_l1": self.box_l1,
            "existence": self.existence,
            "contact": self.contact,
            "l_con": self.l_con,
            "l_total": self.l_total,
        }


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross entropy on logits, softplus(z) - z*y."""
    targets = np.asarray(targets, dtype=np.float64)
    return T.softplus(logits) - logits * targets


def giou_tensor(pred_corners: Tensor, gt_corners) -> Tensor:
    """Differentiable generalized IoU over (..., 4) corner boxes."""
    gt = T.as_tensor(gt_corners)
    ax1, ay1, ax2, ay2 = (pred_corners[..., i] for i in range(4))
    bx1, by1, bx2, by2 = (gt[..., i] for i in range(4))
    iw = T.relu(T.minimum(ax2, bx2) - T.maximum(ax1, bx1))
    ih = T.relu(T.minimum(ay2, by2) - T.maximum(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    hull = (T.maximum(ax2, bx2) - T.minimum(ax1, bx1)) * (
        T.maximum(ay2, by2) - T.minimum(ay1, by1)
    )
    return inter / union - (hull - union) / hull


# -- video loss ----------------------------------------------------------------


def loss_video_parts(frame_logits: Tensor, pnr_target_index: int, osc_logit: Tensor, osc_label: int):
    """(frame_term or None, osc_term); the frame term is skipped for no-change clips."""
    n_frames = frame_logits.shape[0]
    if not (0 <= pnr_target_index < n_frames):
        raise ValueError("pnr_target_index out of range")
    osc_term = bce_with_logits(osc_logit, float(osc_label))
    if osc_label == 0:
        return None, osc_term
    onehot = np.zeros(n_frames)
    onehot[pnr_target_index] = 1.0
    frame_term = bce_with_logits(frame_logits, onehot).mean()
    return frame_term, osc_term


def loss_video(frame_logits: Tensor, pnr_target_index: int, osc_logit: Tensor, osc_label: int) -> Tensor:
    """Mean frame BCE against the one-hot key-frame target plus the state-change BCE."""
    frame_term, osc_term = loss_video_parts(frame_logits, pnr_target_index, osc_logit, osc_label)
    return osc_term if frame_term is None else frame_term + osc_term


# -- graph loss ----------------------------------------------------------------


def haog_loss_parts(pred: HaogPrediction, gt: Haog) -> dict:
    """Per-term (sum, count) pairs for one image; counts are active elements."""
    exists = np.array(gt.exists, dtype=np.float64)
    gt_corners = np.zeros((4, 4))
    for j in range(4):
        if gt.boxes[j] is not None:
            gt_corners[j] = gt.boxes[j].as_list()
    corners = box_cwh_to_corners(pred.boxes_cwh)
    giou = giou_tensor(corners, gt_corners)
    l1 = T.absolute(corners - gt_corners).sum(axis=-1)
    mask = Tensor(exists)
    n_active = int(exists.sum())

    parts = {
        "box_giou": (((1.0 - giou) * mask).sum(), n_active),
        "box_l1": ((l1 * mask).sum(), n_active),
        "existence": (bce_with_logits(pred.exist_logits, exists).sum(), 4),
    }
    defined = np.array(
        [1.0 if (gt.exists[k] == 1 and gt.exists[k + 2] == 1) else 0.0 for k in range(2)]
    )
    labels = np.array([int(gt.contact[k]) for k in range(2)])
    lse = T.logsumexp(pred.contact_logits, axis=-1)
    chosen = pred.contact_logits[(np.arange(2), labels)]
    parts["contact"] = (((lse - chosen) * Tensor(defined)).sum(), int(defined.sum()))
    return parts


def _mean_of_parts(parts_list: list, key: str) -> Tensor:
    total = None
    count = 0
    for parts in parts_list:
        s, c = parts[key]
        if c == 0:
            continue
        total = s if total is None else total + s
        count += c
    if total is None or count == 0:
        return Tensor(0.0)
    return total * (1.0 / count)


def combine_haog_parts(parts_list: list) -> dict:
    """Count-weighted means across a batch of per-image parts."""
    return {k: _mean_of_parts(parts_list, k) for k in ("box_giou", "box_l1", "existence", "contact")}


def loss_haog(pred: HaogPrediction, gt: Haog):
    """Graph loss for one image.

    Returns (total, terms) where terms holds the box GIoU, box L1, existence
    and contact means over their active elements.
    """
    terms = combine_haog_parts([haog_loss_parts(pred, gt)])
    total = terms["box_giou"] + terms["box_l1"] + terms["existence"] + terms["contact"]
    return total, terms


# -- frame-clip consistency ------------------------------------------------------


def loss_consistency(clip_tokens: Tensor, frame_tokens: Tensor, fc_weight: Tensor, fc_bias: Tensor) -> Tensor:
    """Mean absolute difference between projected clip object tokens and the
    tokens of the same frames processed as standalone images.

    Gradients flow into both token sets and the projection.
    """
    if clip_tokens.shape != frame_tokens.shape:
        raise ValueError(
            f"token shapes differ: {clip_tokens.shape} vs {frame_tokens.shape}"
        )
    mapped = clip_tokens @ fc_weight + fc_bias
    return T.absolute(mapped - frame_tokens).mean()


def loss_total(l_con: Tensor, l_haog: Tensor, l_vid: Tensor, weights: LossWeights) -> Tensor:
    """Weighted combination of the three terms."""
    return (
        weights.lambda_con * l_con
        + weights.lambda_haog * l_haog
        + weights.lambda_vid * l_vid
    )


def make_breakdown(l_con: Tensor, haog_terms: dict, l_vid: Tensor, weights: LossWeights) -> tuple:
    """Assemble the total and its float breakdown from term tensors."""
    l_haog = (
        haog_terms["box_giou"]
        + haog_terms["box_l1"]
        + haog_terms["existence"]
        + haog_terms["contact"]
    )
    total = loss_total(l_con, l_haog, l_vid, weights)
    breakdown = LossBreakdown(
        l_vid=float(l_vid.data),
        l_haog=float(l_haog.data),
        box_giou=float(haog_terms["box_giou"].data),
        box_l1=float(haog_terms["box_l1"].data),
        existence=float(haog_terms["existence"].data),
        contact=float(haog_terms["contact"].data),
        l_con=float(l_con.data),
        l_total=float(total.data),
    )
    return total, breakdown
