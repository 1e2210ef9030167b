"""Key-frame localization, multi-view inference, and dataset-level reporting.

Each temporal view samples T frames from a different starting offset; each
spatial view crops at a different horizontal anchor. Per-frame scores carry
their raw-frame indices, and aggregation picks the single maximum score in
raw-frame space (ties to the smallest raw index, independent of view order).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import (
    VideoClipSample,
    load_manifest,
    read_clip_tensor,
    resize_crop,
    sample_frames,
)
from .haog import giou
from .model import (
    ModelConfig,
    box_cwh_to_bounding_box,
    forward_clips,
    forward_images,
    pool_cls,
    predict_frame_scores,
    predict_haog,
    predict_osc,
)

SPATIAL_ANCHORS = ("center", "left", "right")


@dataclass(frozen=True)
class ViewSpec:
    temporal_offsets: tuple
    spatial_crops: tuple = ("center",)

    def __post_init__(self):
        if len(self.temporal_offsets) == 0 or len(self.spatial_crops) == 0:
            raise ValueError("need at least one temporal and one spatial view")
        if any(o < 0 for o in self.temporal_offsets):
            raise ValueError("temporal offsets must be >= 0")
        if any(c not in SPATIAL_ANCHORS for c in self.spatial_crops):
            raise ValueError(f"spatial crops must be among {SPATIAL_ANCHORS}")


@dataclass
class EvalReport:
    mean_abs_error_seconds: float
    exact_frame_accuracy: float
    osc_accuracy: float
    sample_count: int
    samples: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "mean_abs_error_seconds": self.mean_abs_error_seconds,
            "exact_frame_accuracy": self.exact_frame_accuracy,
            "osc_accuracy": self.osc_accuracy,
            "sample_count": self.sample_count,
            "samples": self.samples,
        }


def make_view_spec(n_temporal: int, n_spatial: int, raw_frames: int, n_frames: int) -> ViewSpec:
    """Evenly spaced temporal offsets over the feasible range.

    n_temporal <= 0 requests dense coverage (every feasible offset), which
    guarantees every raw frame appears in some view.
    """
    max_offset = max(0, raw_frames - n_frames)
    if n_temporal <= 0 or n_temporal > max_offset + 1:
        offsets = tuple(range(max_offset + 1))
    else:
        offsets = tuple(
            sorted({int(round(v)) for v in np.linspace(0, max_offset, n_temporal)})
        )
    if not (1 <= n_spatial <= len(SPATIAL_ANCHORS)):
        raise ValueError("n_spatial must be 1..3")
    return ViewSpec(temporal_offsets=offsets, spatial_crops=SPATIAL_ANCHORS[:n_spatial])


def localize_pnr(frame_scores) -> int:
    """Argmax frame position; ties break to the smallest index."""
    scores = np.asarray(frame_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("frame_scores must be nonempty")
    if not np.isfinite(scores).all():
        raise ValueError("frame_scores must be finite")
    return int(np.argmax(scores))


def abs_temporal_error(pred_raw_index: int, gt_raw_index: int, fps: float) -> float:
    """|prediction - ground truth| converted from frames to seconds."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    return abs(pred_raw_index - gt_raw_index) / fps


def aggregate_views(view_scores) -> int:
    """Global argmax over (raw_indices, scores) pairs from all views.

    Ties resolve to the smallest raw index, so the result does not depend on
    view order.
    """
    best_score = None
    best_raw = None
    for raw_indices, scores in view_scores:
        raw_indices = np.asarray(raw_indices)
        scores = np.asarray(scores, dtype=np.float64)
        if raw_indices.shape != scores.shape:
            raise ValueError("indices and scores must align")
        for raw, s in zip(raw_indices.tolist(), scores.tolist()):
            if best_score is None or s > best_score or (s == best_score and raw < best_raw):
                best_score = s
                best_raw = raw
    if best_raw is None:
        raise ValueError("no view scores given")
    return int(best_raw)


def make_model_scorer(params: dict, cfg: ModelConfig):
    """Default per-view scorer: sigmoid frame scores and state-change probability."""

    def scorer(frames: np.ndarray):
        with T.no_grad():
            patch, _ = forward_clips(params, cfg, frames[None])
            logits = predict_frame_scores(params, patch)[0].data
            osc_logit = float(predict_osc(params, pool_cls(patch)).data[0])
        scores = 1.0 / (1.0 + np.exp(-logits))
        osc_prob = 1.0 / (1.0 + np.exp(-osc_logit))
        return scores, osc_prob

    return scorer


def multiview_infer(
    params: dict,
    clip: VideoClipSample,
    views: ViewSpec,
    cfg: ModelConfig,
    scale_range=None,
    scorer=None,
):
    """Predicted raw key-frame index and state-change probability for one clip."""
    total = clip.frames.shape[0]
    if scale_range is None:
        scale_range = (cfg.image_size, cfg.image_size)
    if scorer is None:
        scorer = make_model_scorer(params, cfg)
    view_scores = []
    osc_probs = []
    for offset in views.temporal_offsets:
        if offset > total - cfg.n_frames:
            raise ValueError(
                f"offset {offset} leaves fewer than {cfg.n_frames} frames in a {total}-frame clip"
            )
        idx = sample_frames(offset, total - 1, cfg.n_frames)
        raw = clip.frames[idx]
        for anchor in views.spatial_crops:
            frames = resize_crop(
                raw, cfg.image_size, scale_range, train_mode=False, anchor=anchor
            )
            scores, osc_prob = scorer(frames)
            view_scores.append((idx, scores))
            osc_probs.append(osc_prob)
    pred_raw = aggregate_views(view_scores)
    return pred_raw, float(np.mean(osc_probs))


def evaluate(
    params: dict,
    data_root,
    views,
    cfg: ModelConfig,
    scale_range=None,
    scorer=None,
) -> EvalReport:
    """Run multi-view inference over a dataset directory and aggregate metrics.

    views may be a ViewSpec applied to every clip, or an (n_temporal,
    n_spatial) pair resolved per clip length. Localization metrics cover
    state-change clips; state-change accuracy covers all clips at the 0.5
    probability threshold.
    """
    root = Path(data_root)
    manifest = load_manifest(root / "clips" / "clips.jsonl")
    samples = []
    errors = []
    exact = []
    osc_hits = []
    for rec in manifest:
        frames = read_clip_tensor(root / "clips" / rec["clip"])
        clip = VideoClipSample(
            frames=frames,
            fps=float(rec["fps"]),
            pnr_index=int(rec["pnr_index"]),
            osc_label=int(rec["osc_label"]),
        )
        if isinstance(views, ViewSpec):
            spec = views
        else:
            n_t, n_s = views
            spec = make_view_spec(n_t, n_s, frames.shape[0], cfg.n_frames)
        pred, osc_prob = multiview_infer(params, clip, spec, cfg, scale_range, scorer)
        osc_hits.append(int(osc_prob >= 0.5) == clip.osc_label)
        entry = {
            "clip": rec["clip"],
            "pred_index": pred,
            "gt_index": clip.pnr_index,
            "osc_prob": osc_prob,
            "osc_label": clip.osc_label,
            "error_seconds": None,
        }
        if clip.osc_label == 1:
            err = abs_temporal_error(pred, clip.pnr_index, clip.fps)
            entry["error_seconds"] = err
            errors.append(err)
            exact.append(pred == clip.pnr_index)
        samples.append(entry)
    return EvalReport(
        mean_abs_error_seconds=float(np.mean(errors)) if errors else 0.0,
        exact_frame_accuracy=float(np.mean(exact)) if exact else 0.0,
        osc_accuracy=float(np.mean(osc_hits)) if osc_hits else 0.0,
        sample_count=len(samples),
        samples=samples,
    )


def write_report(path, report: EvalReport) -> None:
    Path(path).write_text(json.dumps(report.as_dict(), indent=2) + "\n", encoding="utf-8")


def evaluate_haog(params: dict, cfg: ModelConfig, images) -> dict:
    """Graph-prediction quality on (pixels, Haog) pairs.

    Mean GIoU is measured on slots that exist in the ground truth; existence
    and contact accuracies use 0.5 / argmax decisions.
    """
    gious = []
    exist_hits = []
    contact_hits = []
    for pixels, gt in images:
        with T.no_grad():
            _, obj = forward_images(params, cfg, pixels[None])
            pred = predict_haog(params, obj)
        boxes = pred.boxes_cwh.data[0]
        exist_logits = pred.exist_logits.data[0]
        contact_logits = pred.contact_logits.data[0]
        for j in range(4):
            exist_hits.append(int(exist_logits[j] > 0) == gt.exists[j])
            if gt.exists[j] == 1:
                gious.append(giou(box_cwh_to_bounding_box(boxes[j]), gt.boxes[j]))
        for k in range(2):
            if gt.exists[k] == 1 and gt.exists[k + 2] == 1:
                contact_hits.append(int(np.argmax(contact_logits[k])) == gt.contact[k])
    return {
        "mean_giou": float(np.mean(gious)) if gious else 0.0,
        "existence_accuracy": float(np.mean(exist_hits)) if exist_hits else 0.0,
        "contact_accuracy": float(np.mean(contact_hits)) if contact_hits else 1.0,
        "slot_count": len(gious),
    }
