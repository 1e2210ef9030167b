"""Mixed image/video training: Adam with half-period cosine decay, the
three-term loss assembly, and a central-difference gradient checker.

Every run is a pure function of (seed, data, config): batch selection, frame
windows and crop jitter all draw from one seeded generator, and gradient
accumulation follows a fixed order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .data import (
    VideoClipSample,
    nearest_sampled_position,
    resize_crop,
    sample_frames,
    sample_training_window,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    combine_haog_parts,
    haog_loss_parts,
    loss_consistency,
    loss_video_parts,
    make_breakdown,
)
from .model import (
    HaogPrediction,
    ModelConfig,
    forward_clips,
    forward_images,
    pool_cls,
    predict_frame_scores,
    predict_haog,
    predict_osc,
    save_checkpoint,
)


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 1e-3  # desk-scale default; large-scale finetuning uses 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    total_steps: int = 300
    images_per_batch: int = 16
    videos_per_batch: int = 8

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.images_per_batch < 1 or self.videos_per_batch < 1:
            raise ValueError("batch sizes must be >= 1")


@dataclass
class TrainState:
    params: dict
    m: dict
    v: dict
    step: int
    seed: int
    rng: np.random.Generator = field(repr=False, default=None)


@dataclass
class PreparedClip:
    """A clip after frame sampling and cropping, ready for the model."""

    frames: np.ndarray  # (T, S, S, 3)
    pnr_target: int  # position within the sampled sequence
    osc_label: int


def init_train_state(params: dict, seed: int) -> TrainState:
    m = {k: np.zeros_like(p.data) for k, p in params.items()}
    v = {k: np.zeros_like(p.data) for k, p in params.items()}
    return TrainState(params=params, m=m, v=v, step=0, seed=seed, rng=np.random.default_rng(seed))


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-period cosine decay from base_lr at step 0 to 0 at total_steps."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not (0 <= step <= total_steps):
        raise ValueError("step outside [0, total_steps]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def adam_update(state: TrainState, grads: dict, opt: OptimizerConfig) -> TrainState:
    """Bias-corrected Adam step at the cosine-scheduled learning rate."""
    lr = cosine_lr(state.step, opt.total_steps, opt.base_lr)
    t = state.step + 1
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    for name, p in state.params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        state.m[name] = opt.beta1 * state.m[name] + (1.0 - opt.beta1) * g
        state.v[name] = opt.beta2 * state.v[name] + (1.0 - opt.beta2) * (g * g)
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + opt.epsilon)
    state.step = t
    return state


# -- loss assembly ---------------------------------------------------------------


def compute_losses(params: dict, cfg: ModelConfig, image_batch: list, video_batch: list, weights: LossWeights):
    """Full three-term training loss on one mixed batch.

    image_batch: (pixels, Haog) pairs. video_batch: PreparedClip items. Each
    clip is processed twice, as a clip and as a batch of standalone frames,
    for the consistency term. Returns (total Tensor, LossBreakdown).
    """
    if not image_batch or not video_batch:
        raise ValueError("image and video batches must both be nonempty")

    images = np.stack([px for px, _ in image_batch])
    _, obj_img = forward_images(params, cfg, images)
    pred = predict_haog(params, obj_img)
    parts = []
    for b, (_, gt) in enumerate(image_batch):
        single = HaogPrediction(
            boxes_cwh=pred.boxes_cwh[b],
            exist_logits=pred.exist_logits[b],
            contact_logits=pred.contact_logits[b],
        )
        parts.append(haog_loss_parts(single, gt))
    haog_terms = combine_haog_parts(parts)

    clips = np.stack([c.frames for c in video_batch])
    n_clips, n_frames = clips.shape[0], clips.shape[1]
    patch_out, obj_clip = forward_clips(params, cfg, clips)
    frame_logits = predict_frame_scores(params, patch_out)
    osc_logits = predict_osc(params, pool_cls(patch_out))
    frame_terms = []
    osc_terms = []
    for b, clip in enumerate(video_batch):
        f_term, o_term = loss_video_parts(
            frame_logits[b], clip.pnr_target, osc_logits[b], clip.osc_label
        )
        if f_term is not None:
            frame_terms.append(f_term)
        osc_terms.append(o_term)
    l_vid = sum(osc_terms[1:], osc_terms[0]) * (1.0 / len(osc_terms))
    if frame_terms:
        l_vid = l_vid + sum(frame_terms[1:], frame_terms[0]) * (1.0 / len(frame_terms))

    frames_flat = clips.reshape(n_clips * n_frames, *clips.shape[2:])
    _, obj_frames = forward_images(params, cfg, frames_flat)
    obj_frames = obj_frames.reshape(n_clips, n_frames, cfg.n_objects, cfg.dim)
    l_con = loss_consistency(
        obj_clip, obj_frames, params["consistency.weight"], params["consistency.bias"]
    )

    return make_breakdown(l_con, haog_terms, l_vid, weights)


def train_step(
    state: TrainState,
    cfg: ModelConfig,
    image_batch: list,
    video_batch: list,
    weights: LossWeights,
    opt: OptimizerConfig,
):
    """One optimization step; updates parameters in place.

    Returns (state, LossBreakdown).
    """
    for p in state.params.values():
        p.grad = None
    total, breakdown = compute_losses(state.params, cfg, image_batch, video_batch, weights)
    total.backward()
    grads = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in state.params.items()
    }
    state = adam_update(state, grads, opt)
    return state, breakdown


def prepare_clip(
    clip: VideoClipSample,
    cfg: ModelConfig,
    scale_range,
    rng: Optional[np.random.Generator],
    train_mode: bool,
) -> PreparedClip:
    """Sample a frame window, crop, and project the key-frame label.

    Training draws a random (first, last) window; evaluation spans the whole
    clip. The localization target is the sampled position nearest the raw
    key frame, with ties to the earlier position.
    """
    total = clip.frames.shape[0]
    if train_mode:
        first, last = sample_training_window(total, cfg.n_frames, rng)
    else:
        first, last = 0, total - 1
    idx = sample_frames(first, last, cfg.n_frames)
    frames = resize_crop(
        clip.frames[idx], cfg.image_size, scale_range, seed=rng, train_mode=train_mode
    )
    target = nearest_sampled_position(idx, clip.pnr_index) if clip.osc_label == 1 else 0
    return PreparedClip(frames=frames, pnr_target=target, osc_label=clip.osc_label)


def run_training(
    params: dict,
    cfg: ModelConfig,
    images: list,
    clips: list,
    weights: LossWeights,
    opt: OptimizerConfig,
    seed: int,
    scale_range=None,
    out_dir=None,
):
    """Train for opt.total_steps over in-memory data.

    Writes a metrics line per step and a checkpoint per epoch (one pass over
    the clip set) plus a final checkpoint when out_dir is given. Returns
    (state, list of LossBreakdown).
    """
    if scale_range is None:
        scale_range = (cfg.image_size, cfg.image_size)
    state = init_train_state(params, seed)
    steps_per_epoch = max(1, math.ceil(len(clips) / opt.videos_per_batch))
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    metrics_lines = []
    history = []
    for step in range(opt.total_steps):
        rng = state.rng
        img_idx = rng.choice(len(images), size=min(opt.images_per_batch, len(images)), replace=False)
        vid_idx = rng.choice(len(clips), size=min(opt.videos_per_batch, len(clips)), replace=False)
        image_batch = [images[i] for i in img_idx]
        video_batch = [
            prepare_clip(clips[i], cfg, scale_range, rng, train_mode=True) for i in vid_idx
        ]
        lr = cosine_lr(step, opt.total_steps, opt.base_lr)
        state, breakdown = train_step(state, cfg, image_batch, video_batch, weights, opt)
        history.append(breakdown)
        metrics_lines.append(json.dumps({"step": step, "lr": lr, **breakdown.as_dict()}))
        if out_dir is not None and (step + 1) % steps_per_epoch == 0:
            epoch = (step + 1) // steps_per_epoch
            save_checkpoint(out_dir / f"checkpoint_epoch_{epoch:04d}.svck", cfg, state.params)
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint_final.svck", cfg, state.params)
        (out_dir / "metrics.jsonl").write_text("\n".join(metrics_lines) + "\n", encoding="utf-8")
    return state, history


# -- gradient verification ---------------------------------------------------------


def gradcheck(params: dict, loss_fn, epsilon: float = 1e-5, sample_count: int = 200, seed: int = 0) -> float:
    """Compare reverse-mode gradients against central finite differences.

    loss_fn() must rebuild the loss from the current parameter values. For
    sample_count randomly chosen scalar coordinates, returns the maximum of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    names = list(params.keys())
    sizes = np.array([params[n].data.size for n in names])
    offsets = np.cumsum(sizes)
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(sample_count, total), replace=False)

    worst = 0.0
    with T.no_grad():
        for flat_coord in coords:
            pi = int(np.searchsorted(offsets, flat_coord, side="right"))
            local = int(flat_coord - (offsets[pi - 1] if pi > 0 else 0))
            flat = params[names[pi]].data.reshape(-1)
            orig = flat[local]
            flat[local] = orig + epsilon
            up = float(loss_fn().data)
            flat[local] = orig - epsilon
            down = float(loss_fn().data)
            flat[local] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = float(analytic[names[pi]].reshape(-1)[local])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
