"""Token-sequence layout for one training record.

Turns per-image tile plans into an ordered list of segments: image-token
runs for tiles and overview images, interleaved with position indicators
according to the configured mode:

``none``
    image runs only.
``index``
    a ``(k,i,j)`` tuple before every run; ``(k,0,0)`` marks the overview.
``seps``
    ``,`` between tiles of a row, ``<n>`` between rows, ``:`` right before
    the overview run.

Images whose grid is 1x1 contribute a single run with no overview and no
indicators.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

from anyres.errors import InconsistentPlanError, InvalidRangeError
from anyres.tiler import GridSpec, SplitConfig, TilePlan, plan_for_grid, select_grid

SegmentKind = Literal["tile_tokens", "overview_tokens", "indicator"]

OVERVIEW_SEP = ":"
COL_SEP = ","
ROW_SEP = "<n>"


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    image_index: int
    row: int
    col: int
    token_count: int
    text: str | None = None

    def to_record(self) -> dict:
        rec = {
            "kind": self.kind,
            "image": self.image_index,
            "row": self.row,
            "col": self.col,
            "tokens": self.token_count,
        }
        if self.text is not None:
            rec["text"] = self.text
        return rec


@dataclass(frozen=True)
class TokenLayout:
    segments: tuple[Segment, ...]
    images: int
    total_tokens: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "total_tokens", sum(s.token_count for s in self.segments))

    def to_record(self) -> dict:
        return {
            "images": self.images,
            "total_tokens": self.total_tokens,
            "segments": [s.to_record() for s in self.segments],
        }


@dataclass(frozen=True)
class TokenBudget:
    image_tokens: int
    indicator_tokens: int
    total: int


@dataclass(frozen=True)
class FramePlan:
    source_frames: int
    sampled: tuple[int, ...]
    tokens_per_frame: int = 144

    @property
    def total_tokens(self) -> int:
        return len(self.sampled) * self.tokens_per_frame

    def to_record(self) -> dict:
        return {
            "source_frames": self.source_frames,
            "indices": list(self.sampled),
            "tokens_per_frame": self.tokens_per_frame,
            "total_tokens": self.total_tokens,
        }


def _image_segments(k: int, plan: TilePlan, cfg: SplitConfig) -> list[Segment]:
    tpt = cfg.tokens_per_tile
    mode = cfg.indicator_mode
    cost = cfg.indicator_cost

    def indicator(text: str, row: int = 0, col: int = 0) -> Segment:
        return Segment("indicator", k, row, col, cost, text)

    if not plan.include_overview:
        return [Segment("tile_tokens", k, 1, 1, tpt)]

    tiles: list[Segment] = []
    for t in plan.tiles:
        if mode == "index":
            tiles.append(indicator(f"({k},{t.row},{t.col})", t.row, t.col))
        elif mode == "seps" and t.index > 0:
            tiles.append(indicator(COL_SEP if t.col > 1 else ROW_SEP, t.row, t.col))
        tiles.append(Segment("tile_tokens", k, t.row, t.col, tpt))

    overview: list[Segment] = []
    if mode == "index":
        overview.append(indicator(f"({k},0,0)"))
    elif mode == "seps":
        overview.append(indicator(OVERVIEW_SEP))
    overview.append(Segment("overview_tokens", k, 0, 0, tpt))

    if cfg.overview_position == "before":
        return overview + tiles
    return tiles + overview


def assemble(plans: Sequence[TilePlan], cfg: SplitConfig) -> TokenLayout:
    if not plans:
        raise InvalidRangeError("assemble needs at least one tile plan")
    segments: list[Segment] = []
    for k, plan in enumerate(plans):
        if plan.tokens_per_tile != cfg.tokens_per_tile or plan.r != cfg.r:
            raise InconsistentPlanError(
                f"image {k}: plan built for r={plan.r}, {plan.tokens_per_tile} tokens/tile; "
                f"config has r={cfg.r}, {cfg.tokens_per_tile}"
            )
        segments.extend(_image_segments(k, plan, cfg))
    return TokenLayout(tuple(segments), len(plans))


def multi_image_policy(image_count: int, cfg: SplitConfig) -> list[bool]:
    """Per-image split decision: splitting is on only below the threshold."""
    if image_count < 1:
        raise InvalidRangeError(f"image_count must be >= 1, got {image_count}")
    enabled = image_count < cfg.multi_image_split_threshold
    return [enabled] * image_count


def plan_images(sizes: Sequence[tuple[int, int]], cfg: SplitConfig) -> list[TilePlan]:
    """Tile plans for every image of one record, given ``(h, w)`` sizes.

    Applies :func:`multi_image_policy`; images with splitting disabled get
    the 1x1 grid (one longer-side-resized frame).
    """
    decisions = multi_image_policy(len(sizes), cfg)
    single = GridSpec(1, 1)
    return [
        select_grid(h, w, cfg) if split else plan_for_grid(h, w, single, cfg)
        for (h, w), split in zip(sizes, decisions)
    ]


def frame_plan(total_frames: int, n: int = 24, tokens_per_frame: int = 144) -> FramePlan:
    """Uniformly sample ``n`` frame indices from a clip of ``total_frames``.

    Index ``i`` is ``floor(i * total_frames / n)``; short clips repeat frames.
    """
    if total_frames < 1 or n < 1:
        raise InvalidRangeError(f"need total_frames >= 1 and n >= 1, got {total_frames}, {n}")
    return FramePlan(total_frames, tuple(i * total_frames // n for i in range(n)), tokens_per_frame)


def video_layout(frames: FramePlan, h: int, w: int, cfg: SplitConfig) -> TokenLayout:
    """Layout for a sampled clip: every frame is an unsplit 1x1 image."""
    single = GridSpec(1, 1)
    frame_cfg = SplitConfig(
        r=cfg.r,
        n_min=1,
        n_max=1,
        tokens_per_tile=frames.tokens_per_frame,
        indicator_mode=cfg.indicator_mode,
        overview_position=cfg.overview_position,
        indicator_cost=cfg.indicator_cost,
    )
    plans = [plan_for_grid(h, w, single, frame_cfg)] * len(frames.sampled)
    return assemble(plans, frame_cfg)


def token_budget(layout: TokenLayout) -> TokenBudget:
    image = sum(s.token_count for s in layout.segments if s.kind != "indicator")
    indicator = sum(s.token_count for s in layout.segments if s.kind == "indicator")
    return TokenBudget(image, indicator, image + indicator)
