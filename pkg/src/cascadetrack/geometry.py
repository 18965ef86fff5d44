"""Bounding boxes, overlap and the eight-action box vocabulary.

Boxes are centre/size rectangles in continuous frame coordinates: the pixel
with integer index ``(row, col)`` covers ``[col, col + 1) x [row, row + 1)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SCALE_STEP = 0.2
MIN_SIZE = 4.0


class Action(enum.IntEnum):
    """Agent actions. The integer value is the one-hot / Q-output index."""

    ENLARGE = 0
    SHRINK = 1
    WIDEN = 2
    NARROW = 3
    HEIGHTEN = 4
    FLATTEN = 5
    NOSCALE = 6
    STOP = 7


N_ACTIONS = len(Action)

# (width factor, height factor) per scaling action
_FACTORS = {
    Action.ENLARGE: (1 + SCALE_STEP, 1 + SCALE_STEP),
    Action.SHRINK: (1 - SCALE_STEP, 1 - SCALE_STEP),
    Action.WIDEN: (1 + SCALE_STEP, 1.0),
    Action.NARROW: (1 - SCALE_STEP, 1.0),
    Action.HEIGHTEN: (1.0, 1 + SCALE_STEP),
    Action.FLATTEN: (1.0, 1 - SCALE_STEP),
    Action.NOSCALE: (1.0, 1.0),
}


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box needs positive size, got w={self.w}, h={self.h}")
        if not np.all(np.isfinite([self.cx, self.cy, self.w, self.h])):
            raise ValueError("box coordinates must be finite")

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_corners(cls, x0, y0, x1, y1) -> "BoundingBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def inside(self, bounds) -> bool:
        width, height = bounds
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height

    def clamp(self, bounds, min_size: float = MIN_SIZE) -> "BoundingBox":
        """Clip size to ``[min_size, frame]`` and then pull the centre inside.

        ``bounds`` is the frame extent ``(width, height)`` in pixels.
        """
        width, height = bounds
        w = min(max(self.w, min_size), width)
        h = min(max(self.h, min_size), height)
        cx = min(max(self.cx, w / 2), width - w / 2)
        cy = min(max(self.cy, h / 2), height - h / 2)
        return BoundingBox(cx, cy, w, h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return float(min(1.0, inter / union))


def apply_action(box: BoundingBox, action: Action, bounds, min_size: float = MIN_SIZE) -> BoundingBox:
    """Scale ``box`` about its centre according to ``action``.

    Raises:
        ValueError: for ``Action.STOP``, which does not transform a box.
    """
    action = Action(action)
    if action is Action.STOP:
        raise ValueError("STOP is not a box transformation")
    fw, fh = _FACTORS[action]
    return BoundingBox(box.cx, box.cy, box.w * fw, box.h * fh).clamp(bounds, min_size)


def translate(box: BoundingBox, dx: float, dy: float, bounds, min_size: float = MIN_SIZE) -> BoundingBox:
    return BoundingBox(box.cx + dx, box.cy + dy, box.w, box.h).clamp(bounds, min_size)


def format_annotation(index: int, box: BoundingBox) -> str:
    # repr() gives the shortest string that round-trips the float exactly
    return f"{index} {box.cx!r} {box.cy!r} {box.w!r} {box.h!r}"


def parse_annotation(line: str) -> tuple[int, BoundingBox]:
    parts = line.split()
    if len(parts) != 5:
        raise ValueError(f"annotation line needs 5 fields, got {len(parts)}: {line!r}")
    index = int(parts[0])
    cx, cy, w, h = (float(p) for p in parts[1:])
    return index, BoundingBox(cx, cy, w, h)
