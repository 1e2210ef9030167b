"""Deterministic procedural scenes, clips, frame sampling, and dataset files.

Scenes are noise backgrounds with colored rectangles: two hands (fixed
distinct colors) and up to two manipulated objects, one pair per image half.
Rectangles are pixel aligned, so every ground-truth box matches the rendered
geometry exactly. Clips animate the active object toward its hand; the object
color flips at the first frame where box overlap reaches the contact
threshold, and that frame is the state-change (PNR) ground truth. The object
keeps moving after contact so each raw frame stays visually distinct.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .haog import BoundingBox, Haog, parse_haog_record, serialize_haog_record

HAND_COLORS = (
    np.array([0.85, 0.15, 0.15]),  # left hand: red
    np.array([0.15, 0.85, 0.15]),  # right hand: green
)
HAND_FLASH_COLORS = (
    np.array([0.95, 0.95, 0.95]),  # active hand on the contact frame
    np.array([0.95, 0.95, 0.95]),
)
OBJECT_COLORS_A = (
    np.array([0.15, 0.25, 0.85]),  # left object, initial state: blue
    np.array([0.85, 0.75, 0.15]),  # right object, initial state: yellow
)
OBJECT_COLORS_B = (
    np.array([0.85, 0.15, 0.85]),  # left object, changed state: magenta
    np.array([0.15, 0.85, 0.85]),  # right object, changed state: cyan
)
BG_RANGE = (0.34, 0.42)  # grayscale noise band, never collides with entity colors

CLIP_MAGIC = b"SVT1"


@dataclass(frozen=True)
class GenConfig:
    image_size: int = 32
    raw_frames: int = 64
    fps: float = 30.0
    speed_min: float = 1.0  # object speed range, pixels per frame
    speed_max: float = 2.0
    contact_threshold: float = 0.25  # overlap fraction of the object box
    object_prob: float = 0.85
    no_change_prob: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if self.raw_frames < 2:
            raise ValueError("raw_frames must be at least 2")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not (0 < self.speed_min <= self.speed_max):
            raise ValueError("need 0 < speed_min <= speed_max")
        if not (0 < self.contact_threshold <= 1):
            raise ValueError("contact_threshold must be in (0, 1]")
        if not (0 <= self.object_prob <= 1 and 0 <= self.no_change_prob <= 1):
            raise ValueError("probabilities must be in [0, 1]")


@dataclass
class SceneImage:
    pixels: np.ndarray  # (S, S, 3) float64 in [0, 1]
    haog: Haog


@dataclass
class VideoClipSample:
    frames: np.ndarray  # (F, S, S, 3) float64 in [0, 1]
    fps: float
    pnr_index: int
    osc_label: int
    frame_haogs: Optional[list] = None  # generator ground truth, tests only


# -- pixel-box helpers (int corners, exclusive upper edge) -------------------


def _box_area(b) -> int:
    return max(0, b[2] - b[0]) * max(0, b[3] - b[1])


def _intersect(a, b):
    x1, y1 = max(a[0], b[0]), max(a[1], b[1])
    x2, y2 = min(a[2], b[2]), min(a[3], b[3])
    if x2 <= x1 or y2 <= y1:
        return None
    return (x1, y1, x2, y2)


def _overlap_fraction(hand_box, obj_box) -> float:
    inter = _intersect(hand_box, obj_box)
    if inter is None:
        return 0.0
    return _box_area(inter) / _box_area(obj_box)


def _side_region(side: int, size: int):
    half = size // 2
    return (side * half, 0, (side + 1) * half, size)


def _box_from_center(cx: float, cy: float, w: int, h: int, region):
    x1 = int(round(cx)) - w // 2
    y1 = int(round(cy)) - h // 2
    x1 = min(max(x1, region[0]), region[2] - w)
    y1 = min(max(y1, region[1]), region[3] - h)
    return (x1, y1, x1 + w, y1 + h)


def _normalize_box(box, size: int) -> BoundingBox:
    return BoundingBox(box[0] / size, box[1] / size, box[2] / size, box[3] / size)


def _rng_for(cfg: GenConfig, stream: int, seed: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream, seed])


def _hand_size(rng, size: int):
    # even-pixel lattice keeps the scene geometry coarse enough to learn from
    # a handful of examples
    choices = [max(4, (size * 10) // 32), max(6, (size * 12) // 32)]
    return int(rng.choice(choices)), int(rng.choice(choices))


def _object_size(rng, size: int):
    choices = [max(3, (size * 6) // 32), max(4, (size * 8) // 32)]
    return int(rng.choice(choices)), int(rng.choice(choices))


def _snap_even(v: int, lo: int, hi: int) -> int:
    return min(max(2 * int(round(v / 2.0)), lo), hi)


def _place_hand(rng, side: int, size: int):
    region = _side_region(side, size)
    w, h = _hand_size(rng, size)
    x1 = _snap_even(int(rng.integers(region[0] + 1, region[2] - w)), region[0], region[2] - w)
    y1 = _snap_even(int(rng.integers(region[1] + 1, region[3] - h)), region[1], region[3] - h)
    return (x1, y1, x1 + w, y1 + h)


def _contact_center(rng, hand, w: int, h: int, region, threshold: float):
    """Pick an object center whose box overlaps the hand by at least the threshold."""
    want = min(0.95, threshold + 0.1)
    for _ in range(50):
        edge = int(rng.integers(4))
        if edge == 0:
            cx, cy = rng.uniform(hand[0], hand[2]), hand[1]
        elif edge == 1:
            cx, cy = rng.uniform(hand[0], hand[2]), hand[3]
        elif edge == 2:
            cx, cy = hand[0], rng.uniform(hand[1], hand[3])
        else:
            cx, cy = hand[2], rng.uniform(hand[1], hand[3])
        box = _box_from_center(cx, cy, w, h, region)
        if _overlap_fraction(hand, box) >= want:
            return cx, cy
    # hand center always yields maximal overlap
    return (hand[0] + hand[2]) / 2.0, (hand[1] + hand[3]) / 2.0


def _apart_center(rng, hand, w: int, h: int, region):
    """Pick an object center whose box does not touch the hand at all."""
    for _ in range(80):
        cx = rng.uniform(region[0] + w / 2.0, region[2] - w / 2.0)
        cy = rng.uniform(region[1] + h / 2.0, region[3] - h / 2.0)
        box = _box_from_center(cx, cy, w, h, region)
        if _intersect(hand, box) is None:
            return cx, cy
    for cx, cy in (
        (region[0] + w / 2.0, region[1] + h / 2.0),
        (region[2] - w / 2.0, region[1] + h / 2.0),
        (region[0] + w / 2.0, region[3] - h / 2.0),
        (region[2] - w / 2.0, region[3] - h / 2.0),
    ):
        box = _box_from_center(cx, cy, w, h, region)
        if _intersect(hand, box) is None:
            return cx, cy
    raise RuntimeError("could not place an object clear of its hand")


def _paint(img: np.ndarray, hands, objects) -> None:
    """Draw hands, then objects; hand/object overlap renders as the color mean."""
    for box, color in hands:
        img[box[1] : box[3], box[0] : box[2]] = color
    for box, color, hand_box, hand_color in objects:
        img[box[1] : box[3], box[0] : box[2]] = color
        inter = _intersect(box, hand_box)
        if inter is not None:
            img[inter[1] : inter[3], inter[0] : inter[2]] = (color + hand_color) / 2.0


def _background(rng, shape) -> np.ndarray:
    noise = rng.uniform(BG_RANGE[0], BG_RANGE[1], size=shape + (1,))
    return np.repeat(noise, 3, axis=-1)


def _measured_haog(size, hands, objects, threshold) -> Haog:
    """Build the graph from pixel geometry; flags derive from measured overlap."""
    boxes = [None] * 4
    exists = [0] * 4
    contact = [0, 0]
    for side in (0, 1):
        boxes[side] = _normalize_box(hands[side], size)
        exists[side] = 1
    for side in (0, 1):
        obj = objects[side]
        if obj is None:
            continue
        boxes[side + 2] = _normalize_box(obj, size)
        exists[side + 2] = 1
        if _overlap_fraction(hands[side], obj) >= threshold:
            contact[side] = 1
    return Haog(boxes=tuple(boxes), exists=tuple(exists), contact=tuple(contact))


def gen_scene(cfg: GenConfig, seed: int) -> SceneImage:
    """Render one still image with its ground-truth graph; pure in (cfg, seed)."""
    rng = _rng_for(cfg, 0, seed)
    size = cfg.image_size
    img = _background(rng, (size, size))
    hands = [_place_hand(rng, side, size) for side in (0, 1)]
    obj_boxes = [None, None]
    obj_colors = [None, None]
    for side in (0, 1):
        if rng.random() >= cfg.object_prob:
            continue
        w, h = _object_size(rng, size)
        state_b = rng.random() < 0.5
        in_contact = rng.random() < 0.5
        region = _side_region(side, size)
        if in_contact:
            cx, cy = _contact_center(rng, hands[side], w, h, region, cfg.contact_threshold)
        else:
            cx, cy = _apart_center(rng, hands[side], w, h, region)
        box = _box_from_center(cx, cy, w, h, region)
        x1 = _snap_even(box[0], region[0], region[2] - w)
        y1 = _snap_even(box[1], region[1], region[3] - h)
        obj_boxes[side] = (x1, y1, x1 + w, y1 + h)
        obj_colors[side] = OBJECT_COLORS_B[side] if state_b else OBJECT_COLORS_A[side]
    _paint(
        img,
        [(hands[s], HAND_COLORS[s]) for s in (0, 1)],
        [
            (obj_boxes[s], obj_colors[s], hands[s], HAND_COLORS[s])
            for s in (0, 1)
            if obj_boxes[s] is not None
        ],
    )
    haog = _measured_haog(size, hands, obj_boxes, cfg.contact_threshold)
    return SceneImage(pixels=img, haog=haog)


def _fold(x: float, lo: float, hi: float) -> float:
    """Reflect an unbounded coordinate into [lo, hi] (billiard motion)."""
    if hi <= lo:
        return lo
    period = 2.0 * (hi - lo)
    y = (x - lo) % period
    return lo + (y if y <= hi - lo else period - y)


def _plan_change_trajectory(rng, cfg: GenConfig, hand, w, h, region):
    """Bouncing motion whose first contact lands strictly inside the clip.

    Returns (per-frame boxes, pnr_frame). The object keeps moving after
    contact, so later frames remain distinguishable from the contact frame.
    """
    F = cfg.raw_frames
    lo_p, hi_p = max(2, F // 8), F - 3
    cx_lo, cx_hi = region[0] + w / 2.0, region[2] - w / 2.0
    cy_lo, cy_hi = region[1] + h / 2.0, region[3] - h / 2.0
    for _ in range(500):
        sx = rng.uniform(cx_lo, cx_hi)
        sy = rng.uniform(cy_lo, cy_hi)
        speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        vx, vy = np.cos(angle) * speed, np.sin(angle) * speed
        boxes = []
        pnr = None
        for t in range(F):
            px = _fold(sx + vx * t, cx_lo, cx_hi)
            py = _fold(sy + vy * t, cy_lo, cy_hi)
            box = _box_from_center(px, py, w, h, region)
            boxes.append(box)
            if pnr is None and _overlap_fraction(hand, box) >= cfg.contact_threshold:
                pnr = t
        if pnr is not None and lo_p <= pnr <= hi_p:
            return boxes, pnr
    raise RuntimeError("failed to plan a contact trajectory; config too constrained")


def _plan_drift_trajectory(rng, cfg: GenConfig, hand, w, h, region):
    """Motion between two hand-free poses that never reaches the contact threshold."""
    F = cfg.raw_frames
    for _ in range(60):
        ax, ay = _apart_center(rng, hand, w, h, region)
        bx, by = _apart_center(rng, hand, w, h, region)
        boxes = [
            _box_from_center(
                ax + (bx - ax) * t / (F - 1), ay + (by - ay) * t / (F - 1), w, h, region
            )
            for t in range(F)
        ]
        if all(_overlap_fraction(hand, b) < cfg.contact_threshold for b in boxes):
            return boxes
    ax, ay = _apart_center(rng, hand, w, h, region)
    return [_box_from_center(ax, ay, w, h, region)] * F


def gen_clip(cfg: GenConfig, seed: int) -> VideoClipSample:
    """Render one clip with per-frame graphs; pure in (cfg, seed)."""
    rng = _rng_for(cfg, 1, seed)
    size, F = cfg.image_size, cfg.raw_frames
    bg = _background(rng, (F, size, size))
    hands = [_place_hand(rng, side, size) for side in (0, 1)]
    active = int(rng.integers(0, 2))
    other = 1 - active
    other_present = rng.random() < cfg.object_prob
    no_change = rng.random() < cfg.no_change_prob

    w_a, h_a = _object_size(rng, size)
    region_a = _side_region(active, size)
    if no_change:
        active_boxes = _plan_drift_trajectory(rng, cfg, hands[active], w_a, h_a, region_a)
        pnr = F - 1
        osc = 0
    else:
        active_boxes, pnr = _plan_change_trajectory(
            rng, cfg, hands[active], w_a, h_a, region_a
        )
        osc = 1

    other_box = None
    if other_present:
        w_o, h_o = _object_size(rng, size)
        region_o = _side_region(other, size)
        ox, oy = _apart_center(rng, hands[other], w_o, h_o, region_o)
        other_box = _box_from_center(ox, oy, w_o, h_o, region_o)

    frames = np.empty((F, size, size, 3), dtype=np.float64)
    frame_haogs = []
    for t in range(F):
        frames[t] = bg[t]
        if osc == 1 and t >= pnr:
            a_color = OBJECT_COLORS_B[active]
        else:
            a_color = OBJECT_COLORS_A[active]
        # the active hand is highlighted on exactly the state-change frame,
        # which pins the key moment to a single raw frame visually
        flash = osc == 1 and t == pnr
        hand_colors = [HAND_COLORS[0], HAND_COLORS[1]]
        if flash:
            hand_colors[active] = HAND_FLASH_COLORS[active]
        hand_layers = [(hands[s], hand_colors[s]) for s in (0, 1)]
        objects = [(active_boxes[t], a_color, hands[active], hand_colors[active])]
        if other_box is not None:
            objects.append(
                (other_box, OBJECT_COLORS_A[other], hands[other], hand_colors[other])
            )
        _paint(frames[t], hand_layers, objects)
        obj_slots = [None, None]
        obj_slots[active] = active_boxes[t]
        obj_slots[other] = other_box
        frame_haogs.append(_measured_haog(size, hands, obj_slots, cfg.contact_threshold))
    return VideoClipSample(
        frames=frames,
        fps=cfg.fps,
        pnr_index=pnr,
        osc_label=osc,
        frame_haogs=frame_haogs,
    )


# -- frame sampling and cropping ---------------------------------------------


def sample_frames(first: int, last: int, T: int) -> np.ndarray:
    """T nondecreasing raw-frame indices: both endpoints plus evenly spaced
    interior positions, rounded to integers."""
    if last < first:
        raise ValueError("last must be >= first")
    if first < 0:
        raise ValueError("first must be >= 0")
    if T < 2:
        raise ValueError("need at least 2 sampled frames")
    span = last - first
    return np.array(
        [first + int(np.floor(k * span / (T - 1) + 0.5)) for k in range(T)], dtype=np.int64
    )


def sample_training_window(raw_frames: int, T: int, rng: np.random.Generator):
    """Random (first, last) window for training-time frame sampling."""
    first_hi = max(1, raw_frames - T + 1)
    first = int(rng.integers(0, first_hi))
    last_lo = min(first + T - 1, raw_frames - 1)
    last = int(rng.integers(last_lo, raw_frames))
    return first, last


def nearest_sampled_position(indices: np.ndarray, raw_index: int) -> int:
    """Position in the sampled sequence closest to a raw frame index.

    Ties break to the earlier position.
    """
    return int(np.argmin(np.abs(np.asarray(indices) - raw_index)))


def _bilinear_resize(frames: np.ndarray, nh: int, nw: int) -> np.ndarray:
    T, H, W, C = frames.shape
    if (nh, nw) == (H, W):
        return frames.copy()
    ys = np.clip((np.arange(nh) + 0.5) * H / nh - 0.5, 0.0, H - 1.0)
    xs = np.clip((np.arange(nw) + 0.5) * W / nw - 0.5, 0.0, W - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = (ys - y0)[None, :, None, None]
    wx = (xs - x0)[None, None, :, None]
    top = frames[:, y0][:, :, x0] * (1 - wx) + frames[:, y0][:, :, x1] * wx
    bot = frames[:, y1][:, :, x0] * (1 - wx) + frames[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_crop(
    frames: np.ndarray,
    crop_size: int,
    scale_range,
    seed=None,
    train_mode: bool = False,
    anchor: str = "center",
) -> np.ndarray:
    """Shorter-side rescale followed by a square crop.

    Train mode draws the scale and crop position from the seed; eval mode
    scales to the midpoint of the range and crops at the given anchor
    (``center``, ``left`` or ``right``).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = int(scale_range[0]), int(scale_range[1])
    if not (1 <= lo <= hi):
        raise ValueError("invalid scale_range")
    squeeze = frames.ndim == 3
    if squeeze:
        frames = frames[None]
    T, H, W, C = frames.shape
    scale = int(rng.integers(lo, hi + 1)) if train_mode else int(round((lo + hi) / 2.0))
    short = min(H, W)
    if H <= W:
        nh, nw = scale, max(1, int(round(W * scale / short)))
    else:
        nh, nw = max(1, int(round(H * scale / short))), scale
    if crop_size > min(nh, nw):
        raise ValueError("crop_size exceeds the scaled image")
    resized = _bilinear_resize(frames, nh, nw)
    if train_mode:
        y0 = int(rng.integers(0, nh - crop_size + 1))
        x0 = int(rng.integers(0, nw - crop_size + 1))
    else:
        y0 = (nh - crop_size) // 2
        if anchor == "center":
            x0 = (nw - crop_size) // 2
        elif anchor == "left":
            x0 = 0
        elif anchor == "right":
            x0 = nw - crop_size
        else:
            raise ValueError(f"unknown crop anchor '{anchor}'")
    out = resized[:, y0 : y0 + crop_size, x0 : x0 + crop_size, :]
    return out[0] if squeeze else out


# -- dataset directory layout -------------------------------------------------


def write_clip_tensor(path, frames: np.ndarray) -> None:
    """Binary clip file: magic, four little-endian u32 dims, f32 data row-major."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError("frames must be (F, H, W, 3)")
    with open(path, "wb") as f:
        f.write(CLIP_MAGIC)
        f.write(struct.pack("<4I", *frames.shape))
        f.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_clip_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CLIP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        dims = struct.unpack("<4I", f.read(16))
        payload = f.read()
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: truncated clip file")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return arr.astype(np.float64)


def write_dataset(out_dir, cfg: GenConfig, num_images: int, num_clips: int) -> None:
    """Materialize images/ and clips/ under out_dir; fully seed-deterministic."""
    root = Path(out_dir)
    img_dir = root / "images"
    clip_dir = root / "clips"
    img_dir.mkdir(parents=True, exist_ok=True)
    clip_dir.mkdir(parents=True, exist_ok=True)

    lines = []
    for i in range(num_images):
        scene = gen_scene(cfg, i)
        name = f"img_{i:05d}.png"
        arr = np.clip(np.round(scene.pixels * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(img_dir / name)
        lines.append(serialize_haog_record(name, scene.haog))
    (img_dir / "annotations.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    manifest = []
    for j in range(num_clips):
        clip = gen_clip(cfg, j)
        name = f"clip_{j:05d}.svt"
        write_clip_tensor(clip_dir / name, clip.frames)
        manifest.append(
            json.dumps(
                {
                    "clip": name,
                    "fps": clip.fps,
                    "pnr_index": clip.pnr_index,
                    "osc_label": clip.osc_label,
                }
            )
        )
    (clip_dir / "clips.jsonl").write_text("\n".join(manifest) + "\n", encoding="utf-8")


def load_annotations(path):
    """Read an annotations.jsonl file into (image_name, Haog) pairs."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(parse_haog_record(line))
    return out


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def load_manifest(path):
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def load_dataset(root):
    """Load a generated dataset directory into memory.

    Returns (images, clips): images as (pixels, Haog) pairs, clips as
    VideoClipSample without per-frame graphs.
    """
    root = Path(root)
    images = []
    for name, haog in load_annotations(root / "images" / "annotations.jsonl"):
        images.append((load_image(root / "images" / name), haog))
    clips = []
    for rec in load_manifest(root / "clips" / "clips.jsonl"):
        frames = read_clip_tensor(root / "clips" / rec["clip"])
        clips.append(
            VideoClipSample(
                frames=frames,
                fps=float(rec["fps"]),
                pnr_index=int(rec["pnr_index"]),
                osc_label=int(rec["osc_label"]),
            )
        )
    return images, clips
