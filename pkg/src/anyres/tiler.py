"""Grid selection for dynamic any-resolution image splitting.

An image of size ``(h, w)`` is longer-side resized onto a canvas of
``n_h x n_w`` encoder tiles of edge ``r`` and padded on the bottom/right.
Among all grids whose tile count lies in ``[n_min, n_max]``:

* if some grid can hold the image without shrinking it (scale >= 1), pick
  the one leaving the least padding;
* otherwise pick the one that shrinks the image the least.

All objective comparisons are done on integers (cross-multiplied
rationals), so ties are detected exactly.
"""

from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass
from fractions import Fraction
from typing import Literal

from anyres.errors import InvalidDimensionsError, InvalidRangeError

IndicatorMode = Literal["none", "index", "seps"]
OverviewPosition = Literal["before", "after"]
Branch = Literal["cover", "downscale"]

INDICATOR_MODES = ("none", "index", "seps")
OVERVIEW_POSITIONS = ("before", "after")


@dataclass(frozen=True, order=True)
class GridSpec:
    n_h: int
    n_w: int

    def __post_init__(self) -> None:
        if self.n_h < 1 or self.n_w < 1:
            raise InvalidRangeError(f"grid dimensions must be >= 1, got {self.n_h}x{self.n_w}")

    @property
    def tile_count(self) -> int:
        return self.n_h * self.n_w

    def transposed(self) -> GridSpec:
        return GridSpec(self.n_w, self.n_h)

    def __str__(self) -> str:
        return f"{self.n_h}x{self.n_w}"


@dataclass(frozen=True)
class SplitConfig:
    """Image splitting configuration.

    ``static_grid`` pins every image to one grid (the classic 2x2 static
    split); when it is ``None`` the grid is chosen dynamically from
    ``candidate_grids(n_min, n_max)``.
    """

    r: int = 672
    n_min: int = 4
    n_max: int = 9
    tokens_per_tile: int = 144
    indicator_mode: IndicatorMode = "none"
    overview_position: OverviewPosition = "after"
    multi_image_split_threshold: int = 3
    indicator_cost: int = 1
    static_grid: GridSpec | None = None

    def __post_init__(self) -> None:
        _check_range(self.n_min, self.n_max)
        if self.r <= 0:
            raise InvalidDimensionsError(f"encoder resolution must be positive, got {self.r}")
        if self.tokens_per_tile <= 0:
            raise InvalidRangeError(f"tokens_per_tile must be positive, got {self.tokens_per_tile}")
        if self.indicator_mode not in INDICATOR_MODES:
            raise InvalidRangeError(f"unknown indicator mode {self.indicator_mode!r}")
        if self.overview_position not in OVERVIEW_POSITIONS:
            raise InvalidRangeError(f"unknown overview position {self.overview_position!r}")
        if self.multi_image_split_threshold < 1:
            raise InvalidRangeError("multi_image_split_threshold must be >= 1")
        if self.indicator_cost < 0:
            raise InvalidRangeError("indicator_cost must be >= 0")

    @classmethod
    def static(cls, n_h: int = 2, n_w: int = 2, **kwargs) -> SplitConfig:
        grid = GridSpec(n_h, n_w)
        return cls(n_min=grid.tile_count, n_max=grid.tile_count, static_grid=grid, **kwargs)

    def grids(self) -> tuple[GridSpec, ...]:
        if self.static_grid is not None:
            return (self.static_grid,)
        return candidate_grids(self.n_min, self.n_max)

    @classmethod
    def from_label(cls, label: str, **kwargs) -> SplitConfig:
        """Inverse of :attr:`label`: ``static:2x2`` or ``dynamic:4:9``."""
        kind, _, rest = label.strip().lower().partition(":")
        try:
            if kind == "static":
                n_h, n_w = (int(v) for v in rest.split("x"))
                return cls.static(n_h, n_w, **kwargs)
            if kind == "dynamic":
                n_min, n_max = (int(v) for v in rest.split(":"))
                return cls(n_min=n_min, n_max=n_max, **kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, (InvalidRangeError, InvalidDimensionsError)):
                raise
        raise InvalidRangeError(f"bad config label {label!r}; expected static:HxW or dynamic:MIN:MAX")

    @property
    def label(self) -> str:
        if self.static_grid is not None:
            return f"static:{self.static_grid}"
        return f"dynamic:{self.n_min}:{self.n_max}"


@dataclass(frozen=True)
class ResizePlan:
    scale: Fraction
    h_g: int
    w_g: int
    pad_bottom: int
    pad_right: int


@dataclass(frozen=True)
class Tile:
    """One ``r x r`` crop of the padded canvas; ``row``/``col`` are one-based."""

    index: int
    row: int
    col: int
    top: int
    left: int
    bottom: int
    right: int


@dataclass(frozen=True)
class TilePlan:
    source_h: int
    source_w: int
    grid: GridSpec
    branch: Branch
    resize: ResizePlan
    tiles: tuple[Tile, ...]
    include_overview: bool
    total_subimages: int
    r: int
    tokens_per_tile: int

    @property
    def canvas_h(self) -> int:
        return self.grid.n_h * self.r

    @property
    def canvas_w(self) -> int:
        return self.grid.n_w * self.r

    @property
    def padding_area(self) -> int:
        return self.canvas_h * self.canvas_w - self.resize.h_g * self.resize.w_g

    @property
    def objective(self) -> Fraction:
        """Exact value of the selection objective for the chosen grid.

        Cover branch: real-valued padding area. Downscale branch: pixel
        area lost to shrinking, ``h*w*(1 - s^2)``.
        """
        s = self.resize.scale
        hw = self.source_h * self.source_w
        if self.branch == "cover":
            return self.grid.tile_count * self.r * self.r - s * s * hw
        return hw * (1 - s * s)

    def to_record(self) -> dict:
        return {
            "h": self.source_h,
            "w": self.source_w,
            "grid": [self.grid.n_h, self.grid.n_w],
            "branch": self.branch,
            "resize": {
                "scale": float(self.resize.scale),
                "h": self.resize.h_g,
                "w": self.resize.w_g,
                "pad_bottom": self.resize.pad_bottom,
                "pad_right": self.resize.pad_right,
            },
            "tiles": [[t.left, t.top, t.right, t.bottom] for t in self.tiles],
            "include_overview": self.include_overview,
            "total_subimages": self.total_subimages,
        }


def _check_range(n_min: int, n_max: int) -> None:
    if n_min < 1 or n_min > n_max:
        raise InvalidRangeError(f"need 1 <= n_min <= n_max, got ({n_min}, {n_max})")


@functools.lru_cache(maxsize=64)
def candidate_grids(n_min: int, n_max: int) -> tuple[GridSpec, ...]:
    """All grids with ``n_min <= n_h * n_w <= n_max``, ordered by (tiles, n_h, n_w)."""
    _check_range(n_min, n_max)
    grids = [
        GridSpec(n_h, n_w)
        for n_h in range(1, n_max + 1)
        for n_w in range(1, n_max // n_h + 1)
        if n_h * n_w >= n_min
    ]
    return tuple(sorted(grids, key=lambda g: (g.tile_count, g.n_h, g.n_w)))


def _round_half_up(x: Fraction) -> int:
    # x > 0 here, so half-up equals half-away-from-zero
    return (2 * x.numerator + x.denominator) // (2 * x.denominator)


class _Candidate:
    __slots__ = ("grid", "num", "den", "asp_p", "asp_q")

    def __init__(self, grid: GridSpec, h: int, w: int, r: int):
        self.grid = grid
        # scale = min(n_h*r/h, n_w*r/w), kept as num/den
        if grid.n_h * w <= grid.n_w * h:
            self.num, self.den = grid.n_h * r, h
        else:
            self.num, self.den = grid.n_w * r, w
        # aspect distance |log(n_h/n_w) - log(h/w)| as the ratio p/q >= 1
        a, b = grid.n_h * w, grid.n_w * h
        self.asp_p, self.asp_q = max(a, b), min(a, b)

    @property
    def covers(self) -> bool:
        return self.num >= self.den


def _tie_break(a: _Candidate, b: _Candidate) -> bool:
    """True if ``a`` wins a tie on the objective over ``b``."""
    if a.grid.tile_count != b.grid.tile_count:
        return a.grid.tile_count < b.grid.tile_count
    lhs, rhs = a.asp_p * b.asp_q, b.asp_p * a.asp_q
    if lhs != rhs:
        return lhs < rhs
    return (a.grid.n_h, a.grid.n_w) < (b.grid.n_h, b.grid.n_w)


def _better_cover(a: _Candidate, b: _Candidate, hw: int, r2: int) -> bool:
    # padding = T*r^2 - (num/den)^2 * h*w, compared after scaling by den_a^2 * den_b^2
    da2, db2 = a.den * a.den, b.den * b.den
    pa = (a.grid.tile_count * r2 * da2 - a.num * a.num * hw) * db2
    pb = (b.grid.tile_count * r2 * db2 - b.num * b.num * hw) * da2
    if pa != pb:
        return pa < pb
    return _tie_break(a, b)


def _better_downscale(a: _Candidate, b: _Candidate) -> bool:
    sa, sb = a.num * b.den, b.num * a.den
    if sa != sb:
        return sa > sb
    return _tie_break(a, b)


def plan_for_grid(h: int, w: int, grid: GridSpec, cfg: SplitConfig) -> TilePlan:
    """Build the tile plan for a fixed grid (no selection)."""
    if h < 1 or w < 1:
        raise InvalidDimensionsError(f"image dimensions must be positive, got {h}x{w}")
    return _build_plan(h, w, _Candidate(grid, h, w, cfg.r), cfg)


def _build_plan(h: int, w: int, cand: _Candidate, cfg: SplitConfig) -> TilePlan:
    r = cfg.r
    grid = cand.grid
    scale = Fraction(cand.num, cand.den)
    canvas_h, canvas_w = grid.n_h * r, grid.n_w * r
    h_g = min(max(_round_half_up(scale * h), 1), canvas_h)
    w_g = min(max(_round_half_up(scale * w), 1), canvas_w)
    resize = ResizePlan(scale, h_g, w_g, canvas_h - h_g, canvas_w - w_g)
    tiles = tuple(
        Tile(
            index=i * grid.n_w + j,
            row=i + 1,
            col=j + 1,
            top=i * r,
            left=j * r,
            bottom=(i + 1) * r,
            right=(j + 1) * r,
        )
        for i in range(grid.n_h)
        for j in range(grid.n_w)
    )
    include_overview = grid != GridSpec(1, 1)
    return TilePlan(
        source_h=h,
        source_w=w,
        grid=grid,
        branch="cover" if cand.covers else "downscale",
        resize=resize,
        tiles=tiles,
        include_overview=include_overview,
        total_subimages=grid.tile_count + int(include_overview),
        r=r,
        tokens_per_tile=cfg.tokens_per_tile,
    )


def select_grid(h: int, w: int, cfg: SplitConfig) -> TilePlan:
    """Choose the grid for an ``h x w`` image and return the full tile plan.

    Ties on the objective go to fewer tiles, then the grid whose aspect
    ratio is closest to the image's in log space, then enumeration order.
    """
    if h < 1 or w < 1:
        raise InvalidDimensionsError(f"image dimensions must be positive, got {h}x{w}")
    r = cfg.r
    hw, r2 = h * w, r * r
    best_cover: _Candidate | None = None
    best_down: _Candidate | None = None
    for grid in cfg.grids():
        cand = _Candidate(grid, h, w, r)
        if cand.covers:
            if best_cover is None or _better_cover(cand, best_cover, hw, r2):
                best_cover = cand
        elif best_cover is None:
            if best_down is None or _better_downscale(cand, best_down):
                best_down = cand
    chosen = best_cover if best_cover is not None else best_down
    assert chosen is not None
    return _build_plan(h, w, chosen, cfg)


def effective_resolution(plan: TilePlan, cfg: SplitConfig | None = None) -> float:
    """Tile pixel area in megapixels; the overview image is not counted."""
    r = cfg.r if cfg is not None else plan.r
    return plan.grid.tile_count * r * r / 1e6


def override_grid_range(cfg: SplitConfig, n_min: int, n_max: int) -> SplitConfig:
    _check_range(n_min, n_max)
    return dataclasses.replace(cfg, n_min=n_min, n_max=n_max, static_grid=None)
