"""Shared video & image transformer with object tokens and prediction heads.

Frames are patchified by a 2-D convolution applied per frame (realized as a
non-overlapping patch extraction plus matmul), positional and temporal
embeddings are added, and n object tokens per frame (prompt + temporal
embedding) join the sequence. Full joint space-time self-attention runs over
all T*H*W + T*n tokens. A single image is processed as a one-frame clip with
temporal embedding index 0, which makes the image and one-frame-clip paths
bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .haog import BoundingBox

CKPT_MAGIC = b"SVCK"
_LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    patch_size: int = 8
    dim: int = 32
    depth: int = 2
    heads: int = 4
    n_frames: int = 8  # sampled frames per clip (T)
    n_objects: int = 4  # object tokens per frame (n)

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.n_objects < 1 or self.n_frames < 1:
            raise ValueError("n_objects and n_frames must be >= 1")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class HaogPrediction:
    """Per-slot box parameters (cx, cy, w, h in (0,1)), existence logits, and
    per-hand 2-class contact logits."""

    boxes_cwh: Tensor  # (..., 4, 4)
    exist_logits: Tensor  # (..., 4)
    contact_logits: Tensor  # (..., 2, 2)


def init_params(cfg: ModelConfig, seed: int) -> dict:
    """All learnable weights, keyed by name; creation order is the checkpoint order."""
    rng = np.random.default_rng(seed)
    d = cfg.dim

    def embed_init(shape):
        return Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

    def he_init(shape):
        # fan-in scaled; keeps gradient magnitudes healthy at depth
        return Tensor(rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape), requires_grad=True)

    p = {}
    p["patch_embed.kernel"] = he_init((cfg.patch_size * cfg.patch_size * 3, d))
    p["patch_embed.bias"] = zeros((d,))
    p["pos_spatial"] = embed_init((cfg.n_patches, d))
    p["pos_temporal"] = embed_init((cfg.n_frames, d))
    p["object_prompts"] = embed_init((cfg.n_objects, d))
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        p[pre + "ln1.gain"] = ones((d,))
        p[pre + "ln1.bias"] = zeros((d,))
        for proj in ("q", "k", "v", "out"):
            p[pre + f"attn.{proj}.weight"] = he_init((d, d))
            if proj != "k":  # a key bias shifts every attention row equally: a no-op
                p[pre + f"attn.{proj}.bias"] = zeros((d,))
        p[pre + "ln2.gain"] = ones((d,))
        p[pre + "ln2.bias"] = zeros((d,))
        p[pre + "mlp.fc1.weight"] = he_init((d, 4 * d))
        p[pre + "mlp.fc1.bias"] = zeros((4 * d,))
        p[pre + "mlp.fc2.weight"] = he_init((4 * d, d))
        p[pre + "mlp.fc2.bias"] = zeros((d,))
    p["head.box.weight"] = he_init((d, 4))
    p["head.box.bias"] = zeros((4,))
    p["head.exist.weight"] = he_init((d, 1))
    p["head.exist.bias"] = zeros((1,))
    p["head.contact.weight"] = he_init((2 * d, 2))
    p["head.contact.bias"] = zeros((2,))
    p["head.pnr.weight"] = he_init((d, 1))
    p["head.pnr.bias"] = zeros((1,))
    p["head.osc.weight"] = he_init((d, 1))
    p["head.osc.bias"] = zeros((1,))
    # identity init keeps the frame-clip consistency term meaningful at step 0
    p["consistency.weight"] = Tensor(np.eye(d), requires_grad=True)
    p["consistency.bias"] = zeros((d,))
    return p


# -- embedding ----------------------------------------------------------------


def _extract_patches(frames: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(B, T, S, S, 3) -> (B, T, H*W, P*P*3) non-overlapping patch extraction."""
    B, Tn, S, S2, C = frames.shape
    g, P = cfg.grid, cfg.patch_size
    x = frames.reshape(B, Tn, g, P, g, P, C)
    x = x.transpose(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(B, Tn, g * g, P * P * C)


def _embed(params: dict, cfg: ModelConfig, frames: np.ndarray):
    """Patch tokens with spatial+temporal embeddings, object tokens o_i + r_t."""
    B, Tn = frames.shape[0], frames.shape[1]
    patches = Tensor(_extract_patches(frames, cfg))
    tok = patches @ params["patch_embed.kernel"] + params["patch_embed.bias"]
    tok = tok + params["pos_spatial"].reshape(1, 1, cfg.n_patches, cfg.dim)
    r = params["pos_temporal"][:Tn].reshape(1, Tn, 1, cfg.dim)
    tok = tok + r
    obj = params["object_prompts"].reshape(1, 1, cfg.n_objects, cfg.dim) + r
    obj = obj + Tensor(np.zeros((B, 1, 1, 1)))  # broadcast over the batch
    return tok, obj


def patchify(params: dict, cfg: ModelConfig, frames: np.ndarray) -> Tensor:
    """Per-frame 2-D patch embedding plus positional and temporal embeddings.

    Accepts (T, S, S, 3) for a clip or (S, S, 3) for a single image, which is
    embedded with temporal index 0. Returns (T, H, W, d) or (H, W, d).
    """
    frames = np.asarray(frames, dtype=np.float64)
    single = frames.ndim == 3
    if single:
        frames = frames[None]
    if frames.ndim != 4 or frames.shape[1:] != (cfg.image_size, cfg.image_size, 3):
        raise ValueError(f"frames shaped {frames.shape} do not match the config")
    if frames.shape[0] > cfg.n_frames:
        raise ValueError("clip longer than the configured frame count")
    tok, _ = _embed(params, cfg, frames[None])
    g = cfg.grid
    out = tok.reshape(frames.shape[0], g, g, cfg.dim)
    return out[0] if single else out


def init_object_tokens(params: dict, T_frames: int) -> Tensor:
    """Initial object tokens, token (t, i) = o_i + r_t; shape (T, n, d)."""
    r = params["pos_temporal"]
    if T_frames > r.shape[0]:
        raise ValueError("requested more frames than the configured T")
    n, d = params["object_prompts"].shape
    return params["object_prompts"].reshape(1, n, d) + r[:T_frames].reshape(T_frames, 1, d)


# -- transformer --------------------------------------------------------------


def _layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / T.sqrt(var + _LN_EPS) * gain + bias


def _attention(params, pre, x: Tensor, cfg: ModelConfig, attn_probe, layer: int) -> Tensor:
    B, L, d = x.shape
    h, dh = cfg.heads, cfg.head_dim

    def proj(name):
        y = x @ params[pre + f"attn.{name}.weight"]
        if name != "k":
            y = y + params[pre + f"attn.{name}.bias"]
        return y.reshape(B, L, h, dh).transpose(0, 2, 1, 3)

    q, k, v = proj("q"), proj("k"), proj("v")
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    probs = T.softmax(scores, axis=-1)
    if attn_probe is not None:
        attn_probe(layer, probs.data.copy())
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, L, d)
    return ctx @ params[pre + "attn.out.weight"] + params[pre + "attn.out.bias"]


def _block(params, i: int, x: Tensor, cfg: ModelConfig, attn_probe) -> Tensor:
    pre = f"blocks.{i}."
    x = x + _attention(params, pre, _layer_norm(x, params[pre + "ln1.gain"], params[pre + "ln1.bias"]), cfg, attn_probe, i)
    h = _layer_norm(x, params[pre + "ln2.gain"], params[pre + "ln2.bias"])
    h = T.gelu(h @ params[pre + "mlp.fc1.weight"] + params[pre + "mlp.fc1.bias"])
    return x + (h @ params[pre + "mlp.fc2.weight"] + params[pre + "mlp.fc2.bias"])


def _forward_batched(params: dict, cfg: ModelConfig, frames: np.ndarray, attn_probe=None):
    """(B, T', S, S, 3) -> patch tokens (B, T', HW, d), object tokens (B, T', n, d)."""
    frames = np.asarray(frames, dtype=np.float64)
    if not np.isfinite(frames).all():
        raise FloatingPointError("non-finite values in model input")
    B, Tn = frames.shape[0], frames.shape[1]
    if frames.shape[2:] != (cfg.image_size, cfg.image_size, 3):
        raise ValueError(f"frames shaped {frames.shape} do not match the config")
    if Tn > cfg.n_frames:
        raise ValueError("clip longer than the configured frame count")
    hw, n, d = cfg.n_patches, cfg.n_objects, cfg.dim
    tok, obj = _embed(params, cfg, frames)
    seq = T.concat([tok.reshape(B, Tn * hw, d), obj.reshape(B, Tn * n, d)], axis=1)
    for i in range(cfg.depth):
        seq = _block(params, i, seq, cfg, attn_probe)
    patch_out = seq[:, : Tn * hw, :].reshape(B, Tn, hw, d)
    obj_out = seq[:, Tn * hw :, :].reshape(B, Tn, n, d)
    return patch_out, obj_out


def forward_clips(params, cfg, clips: np.ndarray, attn_probe=None):
    """Batched clip forward: (B, T, S, S, 3) -> (B, T, H, W, d), (B, T, n, d)."""
    patch, obj = _forward_batched(params, cfg, clips, attn_probe)
    B, Tn = clips.shape[0], clips.shape[1]
    g = cfg.grid
    return patch.reshape(B, Tn, g, g, cfg.dim), obj


def forward_images(params, cfg, images: np.ndarray, attn_probe=None):
    """Batched image forward: (B, S, S, 3) -> (B, H, W, d), (B, n, d)."""
    images = np.asarray(images, dtype=np.float64)
    patch, obj = _forward_batched(params, cfg, images[:, None], attn_probe)
    B = images.shape[0]
    g = cfg.grid
    return patch.reshape(B, g, g, cfg.dim), obj.reshape(B, cfg.n_objects, cfg.dim)


def forward(params, cfg, x: np.ndarray, attn_probe=None):
    """Single-sample forward pass.

    A 3-D input (S, S, 3) is an image; a 4-D input (T', S, S, 3) is a clip.
    Returns final patch tokens and object tokens without the batch axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        patch, obj = forward_images(params, cfg, x[None], attn_probe)
        return patch[0], obj[0]
    if x.ndim == 4:
        patch, obj = forward_clips(params, cfg, x[None], attn_probe)
        return patch[0], obj[0]
    raise ValueError(f"expected an image or a clip, got ndim={x.ndim}")


# -- pooling and heads ---------------------------------------------------------


def pool_cls(patch_out: Tensor) -> Tensor:
    """Mean over all patch tokens: (T, H, W, d) -> (d,); batched keeps B."""
    if patch_out.ndim == 4:
        return patch_out.mean(axis=(0, 1, 2))
    if patch_out.ndim == 5:
        return patch_out.mean(axis=(1, 2, 3))
    raise ValueError("expected video patch tokens")


def predict_frame_scores(params, patch_out: Tensor) -> Tensor:
    """Per-frame mean-pooled patch tokens through a shared linear head.

    (T, H, W, d) -> (T,) logits; (B, T, H, W, d) -> (B, T).
    """
    if patch_out.ndim == 4:
        pooled = patch_out.mean(axis=(1, 2))
        out = pooled @ params["head.pnr.weight"] + params["head.pnr.bias"]
        return out.reshape(out.shape[0])
    if patch_out.ndim == 5:
        pooled = patch_out.mean(axis=(2, 3))
        out = pooled @ params["head.pnr.weight"] + params["head.pnr.bias"]
        return out.reshape(out.shape[0], out.shape[1])
    raise ValueError("expected video patch tokens")


def predict_haog(params, obj_tokens: Tensor) -> HaogPrediction:
    """Graph heads over one frame's (or image's) object tokens (..., 4, d)."""
    if obj_tokens.shape[-2] != 4:
        raise ValueError("graph prediction requires exactly 4 object tokens")
    single = obj_tokens.ndim == 2
    tok = obj_tokens.reshape(1, *obj_tokens.shape) if single else obj_tokens
    boxes = T.sigmoid(tok @ params["head.box.weight"] + params["head.box.bias"])
    exist = tok @ params["head.exist.weight"] + params["head.exist.bias"]
    exist = exist.reshape(exist.shape[:-1])
    pairs = T.concat([tok[:, :2, :], tok[:, 2:, :]], axis=-1)  # hand k with object k+2
    contact = pairs @ params["head.contact.weight"] + params["head.contact.bias"]
    if single:
        boxes, exist, contact = boxes[0], exist[0], contact[0]
    return HaogPrediction(boxes_cwh=boxes, exist_logits=exist, contact_logits=contact)


def predict_osc(params, f_cls: Tensor) -> Tensor:
    """State-change logit from the pooled clip representation."""
    single = f_cls.ndim == 1
    x = f_cls.reshape(1, f_cls.shape[0]) if single else f_cls
    out = x @ params["head.osc.weight"] + params["head.osc.bias"]
    return out.reshape(()) if single else out.reshape(out.shape[0])


def box_cwh_to_corners(cwh: Tensor) -> Tensor:
    """(..., 4) center parameterization to unclipped corner coordinates."""
    cx, cy = cwh[..., 0:1], cwh[..., 1:2]
    w, h = cwh[..., 2:3], cwh[..., 3:4]
    half = 0.5
    return T.concat([cx - w * half, cy - h * half, cx + w * half, cy + h * half], axis=-1)


def box_cwh_to_bounding_box(cwh: np.ndarray) -> BoundingBox:
    """Numpy center-parameterized box to a valid BoundingBox clipped to [0, 1]."""
    cx, cy, w, h = (float(v) for v in cwh)
    x1 = min(max(cx - w / 2.0, 0.0), 1.0)
    y1 = min(max(cy - h / 2.0, 0.0), 1.0)
    x2 = min(max(cx + w / 2.0, 0.0), 1.0)
    y2 = min(max(cy + h / 2.0, 0.0), 1.0)
    return BoundingBox(x1, y1, x2, y2)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, cfg: ModelConfig, params: dict) -> None:
    """Binary checkpoint: magic, config block (7 u32), named f64 sections."""
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(
            struct.pack(
                "<7I",
                cfg.image_size,
                cfg.patch_size,
                cfg.dim,
                cfg.depth,
                cfg.heads,
                cfg.n_frames,
                cfg.n_objects,
            )
        )
        for name, t in params.items():
            blob = name.encode("utf-8")
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(struct.pack("<I", t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into (ModelConfig, params dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    fields = struct.unpack("<7I", blob[4:32])
    cfg = ModelConfig(
        image_size=fields[0],
        patch_size=fields[1],
        dim=fields[2],
        depth=fields[3],
        heads=fields[4],
        n_frames=fields[5],
        n_objects=fields[6],
    )
    params = {}
    off = 32
    while off < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        params[name] = Tensor(arr.astype(np.float64), requires_grad=True)
    return cfg, params
