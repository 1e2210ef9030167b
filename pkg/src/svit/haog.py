"""Hand-object graph data model, box geometry, and the JSONL annotation format.

A graph holds four optional boxes in fixed slot order (left hand, right hand,
left-hand object, right-hand object), four existence bits and two per-hand
contact bits. Contact slot k pairs hand k with object k+2 and is only
meaningful when both endpoints exist.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

SLOT_NAMES = ("left_hand", "right_hand", "left_object", "right_object")
N_SLOTS = 4
N_CONTACTS = 2


class HaogFormatError(ValueError):
    """Raised when an annotation record cannot be parsed or violates invariants."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, corners normalized to [0, 1] image fractions."""

    x1: float
    y1: float
    x2: float
    y2: float

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Haog:
    boxes: tuple  # 4 entries, BoundingBox or None
    exists: tuple  # 4 entries, 0/1
    contact: tuple  # 2 entries, 0/1


def box_violations(b: BoundingBox, name: str = "box") -> list:
    out = []
    if not (0.0 <= b.x1 <= b.x2 <= 1.0):
        out.append(f"{name}: x coordinates must satisfy 0 <= x1 <= x2 <= 1")
    if not (0.0 <= b.y1 <= b.y2 <= 1.0):
        out.append(f"{name}: y coordinates must satisfy 0 <= y1 <= y2 <= 1")
    return out


def validate_haog(h: Haog) -> list:
    """Return a list of violated invariants; empty means the graph is valid."""
    out = []
    if len(h.boxes) != N_SLOTS:
        return [f"boxes must have {N_SLOTS} slots"]
    if len(h.exists) != N_SLOTS:
        return [f"exists must have {N_SLOTS} entries"]
    if len(h.contact) != N_CONTACTS:
        return [f"contact must have {N_CONTACTS} entries"]
    for j in range(N_SLOTS):
        if h.exists[j] not in (0, 1):
            out.append(f"exists[{j}] must be 0 or 1")
        if h.exists[j] == 1 and h.boxes[j] is None:
            out.append(f"boxes[{j}] missing but exists[{j}]=1")
        if h.exists[j] == 0 and h.boxes[j] is not None:
            out.append(f"boxes[{j}] present but exists[{j}]=0")
        if h.boxes[j] is not None:
            out.extend(box_violations(h.boxes[j], name=f"boxes[{j}]"))
    for k in range(N_CONTACTS):
        if h.contact[k] not in (0, 1):
            out.append(f"contact[{k}] must be 0 or 1")
        elif h.contact[k] == 1:
            if h.exists[k] != 1:
                out.append(f"contact[{k}] requires exists[{k}]")
            if h.exists[k + 2] != 1:
                out.append(f"contact[{k}] requires exists[{k + 2}]")
    return out


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: BoundingBox, b: BoundingBox) -> float:
    """Generalized IoU: IoU minus the normalized hull-gap penalty, in (-1, 1].

    A degenerate (zero-area) enclosing hull returns 0 by convention.
    """
    hull_w = max(a.x2, b.x2) - min(a.x1, b.x1)
    hull_h = max(a.y2, b.y2) - min(a.y1, b.y1)
    hull = hull_w * hull_h
    if hull <= 0.0:
        return 0.0
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.area() + b.area() - inter
    iou_val = inter / union if union > 0.0 else 0.0
    return iou_val - (hull - union) / hull


def _parse_box(raw, j: int) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise HaogFormatError(f"boxes[{j}] must be a 4-element array or null")
    vals = []
    for c, v in enumerate(raw):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise HaogFormatError(f"boxes[{j}][{c}] must be a number")
        if not (0.0 <= float(v) <= 1.0):
            raise HaogFormatError(f"boxes[{j}][{c}] out of range [0, 1]")
        vals.append(float(v))
    return BoundingBox(*vals)


def parse_haog_record(line: str) -> tuple:
    """Parse one annotation line into ``(image_path, Haog)``.

    Raises HaogFormatError naming the offending field on malformed input.
    """
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise HaogFormatError(f"invalid JSON: {e}") from e
    if not isinstance(rec, dict):
        raise HaogFormatError("record must be a JSON object")
    for key in ("image", "boxes", "exists", "contact"):
        if key not in rec:
            raise HaogFormatError(f"missing field '{key}'")
    if not isinstance(rec["image"], str):
        raise HaogFormatError("field 'image' must be a string")
    if not isinstance(rec["boxes"], list) or len(rec["boxes"]) != N_SLOTS:
        raise HaogFormatError(f"field 'boxes' must be an array of {N_SLOTS} entries")
    if not isinstance(rec["exists"], list) or len(rec["exists"]) != N_SLOTS:
        raise HaogFormatError(f"field 'exists' must be an array of {N_SLOTS} entries")
    if not isinstance(rec["contact"], list) or len(rec["contact"]) != N_CONTACTS:
        raise HaogFormatError(f"field 'contact' must be an array of {N_CONTACTS} entries")
    for j, e in enumerate(rec["exists"]):
        if e not in (0, 1):
            raise HaogFormatError(f"exists[{j}] must be 0 or 1")
    for k, c in enumerate(rec["contact"]):
        if c not in (0, 1):
            raise HaogFormatError(f"contact[{k}] must be 0 or 1")
    boxes = []
    for j, raw in enumerate(rec["boxes"]):
        boxes.append(None if raw is None else _parse_box(raw, j))
    h = Haog(boxes=tuple(boxes), exists=tuple(rec["exists"]), contact=tuple(rec["contact"]))
    violations = validate_haog(h)
    if violations:
        raise HaogFormatError("; ".join(violations))
    return rec["image"], h


def serialize_haog_record(path: str, h: Haog) -> str:
    """Emit one annotation line; coordinates are printed with 6 decimal digits.

    Refuses invalid graphs with the validation verdict.
    """
    violations = validate_haog(h)
    if violations:
        raise HaogFormatError("; ".join(violations))
    box_strs = []
    for b in h.boxes:
        if b is None:
            box_strs.append("null")
        else:
            box_strs.append("[%.6f, %.6f, %.6f, %.6f]" % (b.x1, b.y1, b.x2, b.y2))
    return '{"image": %s, "boxes": [%s], "exists": [%s], "contact": [%s]}' % (
        json.dumps(path),
        ", ".join(box_strs),
        ", ".join(str(int(e)) for e in h.exists),
        ", ".join(str(int(c)) for c in h.contact),
    )
