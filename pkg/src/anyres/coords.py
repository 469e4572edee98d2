"""Referring/grounding coordinates and their global <-> tile-local mapping.

Coordinates are integer bins in ``[0, q)`` (``q = 1000`` by default).
A box ``(x1, y1, x2, y2)`` covers bins ``x1..x2`` and ``y1..y2``
inclusive, i.e. the continuous extent ``[x1/q, (x2+1)/q)``.

The global frame spans the whole source image. A tile-local frame spans the
part of a tile that holds resized image content (the tile minus any
bottom/right padding), so padding never carries box mass and a 1x1 grid maps
boxes onto themselves. Pixel geometry follows :class:`~anyres.tiler.TilePlan`:
content sits top-left in the canvas at ``h_g x w_g``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from fractions import Fraction

from anyres.errors import (
    BoxOrderError,
    BoxParseError,
    BoxRangeError,
    FrameMismatchError,
    InvalidTileError,
)
from anyres.tiler import Tile, TilePlan

Q = 1000

_BOX_RE = re.compile(r"^\s*<\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*>\s*$")
_POINT_RE = re.compile(r"^\s*<\s*(-?\d+)\s*,\s*(-?\d+)\s*>\s*$")


class Visibility(str, enum.Enum):
    CONTAINED = "contained"
    CLIPPED = "clipped"
    OUTSIDE = "outside"


def _check_bins(values, q: int) -> None:
    for v in values:
        if not 0 <= v < q:
            raise BoxRangeError(f"coordinate {v} outside [0, {q})")


@dataclass(frozen=True)
class NormPoint:
    x: int
    y: int
    tile: int | None = None  # None means the global frame
    q: int = Q

    def __post_init__(self) -> None:
        _check_bins((self.x, self.y), self.q)


@dataclass(frozen=True)
class NormBox:
    x1: int
    y1: int
    x2: int
    y2: int
    tile: int | None = None  # None means the global frame
    q: int = Q

    def __post_init__(self) -> None:
        _check_bins((self.x1, self.y1, self.x2, self.y2), self.q)
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise BoxOrderError(f"inverted corners in {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def frame(self) -> str:
        return "global" if self.tile is None else f"tile:{self.tile}"


def encode_box(b: NormBox) -> str:
    return f"<{b.x1},{b.y1},{b.x2},{b.y2}>"


def parse_box(text: str, q: int = Q, tile: int | None = None) -> NormBox:
    m = _BOX_RE.match(text)
    if m is None:
        raise BoxParseError(f"not a box: {text!r}")
    return NormBox(*(int(g) for g in m.groups()), tile=tile, q=q)


def encode_point(p: NormPoint) -> str:
    return f"<{p.x},{p.y}>"


def parse_point(text: str, q: int = Q, tile: int | None = None) -> NormPoint:
    m = _POINT_RE.match(text)
    if m is None:
        raise BoxParseError(f"not a point: {text!r}")
    return NormPoint(int(m.group(1)), int(m.group(2)), tile=tile, q=q)


def _tile(plan: TilePlan, index: int) -> Tile:
    if not 0 <= index < len(plan.tiles):
        raise InvalidTileError(f"tile {index} not in plan with {len(plan.tiles)} tiles")
    return plan.tiles[index]


def _content_window(plan: TilePlan, t: Tile) -> tuple[int, int, int, int] | None:
    """Pixel rectangle (left, top, right, bottom) of content inside tile ``t``."""
    right = min(t.right, plan.resize.w_g)
    bottom = min(t.bottom, plan.resize.h_g)
    if right <= t.left or bottom <= t.top:
        return None
    return t.left, t.top, right, bottom


def _clamp(v: int, q: int) -> int:
    return min(max(v, 0), q - 1)


def global_to_local(b: NormBox, plan: TilePlan, tile: int) -> tuple[NormBox | None, Visibility]:
    """Map a global box into tile ``tile`` (row-major index).

    Partially visible boxes are clipped to the tile and flagged; boxes that
    miss the tile (or hit only padding) return ``(None, OUTSIDE)``.
    Local bins are rounded outward so the local box always covers the
    visible part.
    """
    if b.tile is not None:
        raise FrameMismatchError(f"expected a global box, got frame {b.frame}")
    t = _tile(plan, tile)
    win = _content_window(plan, t)
    if win is None:
        return None, Visibility.OUTSIDE
    left, top, right, bottom = win
    q = b.q
    w_g, h_g = plan.resize.w_g, plan.resize.h_g
    px_lo, px_hi = Fraction(b.x1 * w_g, q), Fraction((b.x2 + 1) * w_g, q)
    py_lo, py_hi = Fraction(b.y1 * h_g, q), Fraction((b.y2 + 1) * h_g, q)
    ix_lo, ix_hi = max(px_lo, left), min(px_hi, right)
    iy_lo, iy_hi = max(py_lo, top), min(py_hi, bottom)
    if ix_lo >= ix_hi or iy_lo >= iy_hi:
        return None, Visibility.OUTSIDE
    contained = ix_lo == px_lo and ix_hi == px_hi and iy_lo == py_lo and iy_hi == py_hi
    cw, ch = right - left, bottom - top
    x1 = math.floor((ix_lo - left) * q / cw)
    y1 = math.floor((iy_lo - top) * q / ch)
    x2 = math.ceil((ix_hi - left) * q / cw) - 1
    y2 = math.ceil((iy_hi - top) * q / ch) - 1
    local = NormBox(_clamp(x1, q), _clamp(y1, q), _clamp(x2, q), _clamp(y2, q), tile=tile, q=q)
    return local, Visibility.CONTAINED if contained else Visibility.CLIPPED


def _round(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def local_to_global(b: NormBox, plan: TilePlan, tile: int | None = None) -> NormBox:
    """Inverse of :func:`global_to_local` for unclipped boxes, up to one bin."""
    if tile is None:
        tile = b.tile
    if b.tile is None or b.tile != tile:
        raise FrameMismatchError(f"box frame {b.frame} does not match tile {tile}")
    t = _tile(plan, tile)
    win = _content_window(plan, t)
    if win is None:
        raise InvalidTileError(f"tile {tile} holds only padding")
    left, top, right, bottom = win
    q = b.q
    cw, ch = right - left, bottom - top
    w_g, h_g = plan.resize.w_g, plan.resize.h_g
    gx_lo = (left + Fraction(b.x1 * cw, q)) * q / w_g
    gx_hi = (left + Fraction((b.x2 + 1) * cw, q)) * q / w_g
    gy_lo = (top + Fraction(b.y1 * ch, q)) * q / h_g
    gy_hi = (top + Fraction((b.y2 + 1) * ch, q)) * q / h_g
    x1, y1 = _clamp(_round(gx_lo), q), _clamp(_round(gy_lo), q)
    x2 = max(_clamp(_round(gx_hi) - 1, q), x1)
    y2 = max(_clamp(_round(gy_hi) - 1, q), y1)
    return NormBox(x1, y1, x2, y2, q=q)


def point_to_local(p: NormPoint, plan: TilePlan) -> NormPoint | None:
    """Locate a global point's bin centre in the tile that contains it."""
    if p.tile is not None:
        raise FrameMismatchError("expected a global point")
    q = p.q
    px = Fraction((2 * p.x + 1) * plan.resize.w_g, 2 * q)
    py = Fraction((2 * p.y + 1) * plan.resize.h_g, 2 * q)
    for t in plan.tiles:
        win = _content_window(plan, t)
        if win is None:
            continue
        left, top, right, bottom = win
        if left <= px < right and top <= py < bottom:
            x = math.floor((px - left) * q / (right - left))
            y = math.floor((py - top) * q / (bottom - top))
            return NormPoint(_clamp(x, q), _clamp(y, q), tile=t.index, q=q)
    return None


def tiles_for_box(b: NormBox, plan: TilePlan) -> list[tuple[int, NormBox, Visibility]]:
    """Every tile a global box touches, with its local box and visibility."""
    out = []
    for t in plan.tiles:
        local, vis = global_to_local(b, plan, t.index)
        if local is not None:
            out.append((t.index, local, vis))
    return out


def box_iou(a: NormBox, b: NormBox) -> float:
    """IoU over inclusive integer extents (a box spans ``x2 - x1 + 1`` bins)."""
    if a.tile != b.tile:
        raise FrameMismatchError(f"cannot compare {a.frame} with {b.frame}")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1) + 1
    ih = min(a.y2, b.y2) - max(a.y1, b.y1) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a.x2 - a.x1 + 1) * (a.y2 - a.y1 + 1)
    area_b = (b.x2 - b.x1 + 1) * (b.y2 - b.y1 + 1)
    return inter / (area_a + area_b - inter)
