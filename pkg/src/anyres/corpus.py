"""Record manifests, seeded synthetic corpora and corpus-wide tiling statistics.

Manifest format: JSON lines.  The first line is a schema header
``{"schema":"anyres-manifest","version":1}``; every following line is one
record::

    {"id":"r0","images":[[640,480]],"category":"general",
     "boxes":[{"image":0,"box":"<10,20,300,400>"}]}

``images`` holds ``[width, height]`` pairs; ``boxes`` is optional.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from anyres.coords import NormBox, encode_box, parse_box
from anyres.errors import AnyresError, InvalidDistributionError, RecordError, SchemaError
from anyres.layout import plan_images
from anyres.tiler import SplitConfig

SCHEMA_NAME = "anyres-manifest"
SCHEMA_VERSION = 1
HEADER = {"schema": SCHEMA_NAME, "version": SCHEMA_VERSION}

_SEPARATORS = (",", ":")


@dataclass(frozen=True)
class BoxAnnotation:
    image: int
    box: NormBox


@dataclass(frozen=True)
class RecordManifest:
    record_id: str
    images: tuple[tuple[int, int], ...]  # (width, height)
    category: str = "general"
    boxes: tuple[BoxAnnotation, ...] = ()

    def __post_init__(self) -> None:
        if not self.record_id:
            raise SchemaError("record id must be a non-empty string")
        if not self.images:
            raise SchemaError(f"record {self.record_id!r} has no images")
        for w, h in self.images:
            if w <= 0 or h <= 0:
                raise SchemaError(f"record {self.record_id!r}: non-positive image size {w}x{h}")
        for b in self.boxes:
            if not 0 <= b.image < len(self.images):
                raise SchemaError(f"record {self.record_id!r}: box refers to missing image {b.image}")

    @property
    def sizes_hw(self) -> list[tuple[int, int]]:
        return [(h, w) for w, h in self.images]

    def to_record(self) -> dict:
        out: dict = {"id": self.record_id, "images": [[w, h] for w, h in self.images], "category": self.category}
        if self.boxes:
            out["boxes"] = [{"image": b.image, "box": encode_box(b.box)} for b in self.boxes]
        return out

    @classmethod
    def from_record(cls, d: object) -> RecordManifest:
        if not isinstance(d, dict):
            raise SchemaError("record must be a JSON object")
        unknown = set(d) - {"id", "images", "category", "boxes"}
        if unknown:
            raise SchemaError(f"unknown field(s): {', '.join(sorted(unknown))}")
        rid = d.get("id")
        if not isinstance(rid, str):
            raise SchemaError("'id' must be a string")
        images = d.get("images")
        if not isinstance(images, list):
            raise SchemaError("'images' must be a list of [width, height] pairs")
        sizes = []
        for pair in images:
            if not (isinstance(pair, list) and len(pair) == 2 and all(_is_int(v) for v in pair)):
                raise SchemaError(f"bad image size {pair!r}")
            sizes.append((pair[0], pair[1]))
        category = d.get("category", "general")
        if not isinstance(category, str):
            raise SchemaError("'category' must be a string")
        boxes = []
        for entry in d.get("boxes", []):
            if not (isinstance(entry, dict) and _is_int(entry.get("image")) and isinstance(entry.get("box"), str)):
                raise SchemaError(f"bad box entry {entry!r}")
            try:
                boxes.append(BoxAnnotation(entry["image"], parse_box(entry["box"])))
            except AnyresError as exc:
                raise SchemaError(str(exc)) from exc
        return cls(rid, tuple(sizes), category, tuple(boxes))


def _is_int(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


@dataclass(frozen=True)
class Diagnostic:
    line_no: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line_no}: {self.message}"


def read_manifest(
    lines: Iterable[str],
    *,
    strict: bool = False,
    diagnostics: list[Diagnostic] | None = None,
) -> Iterator[RecordManifest]:
    """Stream records from manifest lines.

    Malformed lines are skipped and reported into ``diagnostics`` (1-based
    line numbers); with ``strict=True`` the first one raises
    :class:`SchemaError`.  The header line is optional, but a header naming
    another schema or version is always fatal.
    """
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            err = SchemaError(f"invalid JSON ({exc.msg})", line_no)
        else:
            if isinstance(data, dict) and "schema" in data:
                if data != HEADER:
                    raise SchemaError(f"unsupported manifest header {data!r}", line_no)
                continue
            try:
                yield RecordManifest.from_record(data)
                continue
            except SchemaError as exc:
                err = SchemaError(str(exc), line_no)
        if strict:
            raise err
        if diagnostics is not None:
            diagnostics.append(Diagnostic(line_no, str(err).removeprefix(f"line {line_no}: ")))


def write_manifest(records: Iterable[RecordManifest], fh: TextIO, *, header: bool = True) -> int:
    if header:
        fh.write(json.dumps(HEADER, separators=_SEPARATORS) + "\n")
    n = 0
    for rec in records:
        fh.write(json.dumps(rec.to_record(), separators=_SEPARATORS) + "\n")
        n += 1
    return n


def load_manifest(path, *, strict: bool = False) -> tuple[list[RecordManifest], list[Diagnostic]]:
    diagnostics: list[Diagnostic] = []
    with open(path, encoding="utf-8") as fh:
        records = list(read_manifest(fh, strict=strict, diagnostics=diagnostics))
    return records, diagnostics


# synthetic corpora


@dataclass(frozen=True)
class ResolutionCluster:
    """Log-normal cluster of image sizes.

    ``area`` is the median pixel count and ``aspect`` the median width/height
    ratio; the sigmas are standard deviations in natural-log units.
    """

    name: str
    weight: float
    area: float
    aspect: float = 1.0
    area_sigma: float = 0.0
    aspect_sigma: float = 0.0


@dataclass(frozen=True)
class Distribution:
    name: str
    clusters: tuple[ResolutionCluster, ...]
    min_side: int = 32
    max_side: int = 8000
    images_per_record: tuple[float, ...] = (1.0,)  # weight of 1, 2, ... images

    def __post_init__(self) -> None:
        if not self.clusters:
            raise InvalidDistributionError("distribution needs at least one cluster")
        if not 1 <= self.min_side <= self.max_side:
            raise InvalidDistributionError(f"need 1 <= min_side <= max_side, got {self.min_side}, {self.max_side}")
        for c in self.clusters:
            if not (c.weight >= 0 and c.area > 0 and c.aspect > 0 and c.area_sigma >= 0 and c.aspect_sigma >= 0):
                raise InvalidDistributionError(f"bad cluster parameters in {c.name!r}")
            if not all(map(math.isfinite, (c.weight, c.area, c.aspect, c.area_sigma, c.aspect_sigma))):
                raise InvalidDistributionError(f"non-finite cluster parameter in {c.name!r}")
        if sum(c.weight for c in self.clusters) <= 0:
            raise InvalidDistributionError("cluster weights sum to zero")
        counts = self.images_per_record
        if not counts or any(p < 0 or not math.isfinite(p) for p in counts) or sum(counts) <= 0:
            raise InvalidDistributionError("images_per_record needs non-negative weights with positive sum")


# Stand-ins for a private training sample; sizes are in pixels.
DISTRIBUTIONS: dict[str, Distribution] = {
    "web-mix": Distribution(
        "web-mix",
        (
            ResolutionCluster("square", 0.40, 512 * 512, 1.0, 0.6, 0.06),
            ResolutionCluster("photo", 0.30, 1024 * 1024, 1.0, 0.5, 0.12),
            ResolutionCluster("landscape", 0.12, 1280 * 960, 4 / 3, 0.5, 0.08),
            ResolutionCluster("portrait", 0.08, 960 * 1280, 3 / 4, 0.5, 0.08),
            ResolutionCluster("wide", 0.05, 1920 * 1080, 16 / 9, 0.4, 0.15),
            ResolutionCluster("tall", 0.05, 800 * 2400, 1 / 3, 0.4, 0.2),
        ),
    ),
    "documents": Distribution(
        "documents",
        (
            ResolutionCluster("letter", 0.5, 1700 * 2200, 1700 / 2200, 0.3, 0.03),
            ResolutionCluster("a4", 0.4, 1654 * 2339, 1 / math.sqrt(2), 0.3, 0.03),
            ResolutionCluster("receipt", 0.1, 600 * 2400, 0.25, 0.4, 0.3),
        ),
    ),
    "screenshots": Distribution(
        "screenshots",
        (
            ResolutionCluster("desktop", 0.5, 1920 * 1080, 16 / 9, 0.3, 0.05),
            ResolutionCluster("mobile", 0.4, 1170 * 2532, 1170 / 2532, 0.2, 0.05),
            ResolutionCluster("window", 0.1, 1200 * 800, 1.5, 0.5, 0.3),
        ),
    ),
}


def distribution(name: str) -> Distribution:
    try:
        return DISTRIBUTIONS[name]
    except KeyError:
        raise InvalidDistributionError(f"unknown distribution {name!r}; choose from {', '.join(DISTRIBUTIONS)}") from None


def synth_corpus(dist: Distribution | str, count: int, seed: int = 0) -> list[RecordManifest]:
    """Draw ``count`` records from ``dist``; identical for identical seeds."""
    if isinstance(dist, str):
        dist = distribution(dist)
    if count < 0:
        raise InvalidDistributionError(f"count must be >= 0, got {count}")
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    ipr = np.asarray(dist.images_per_record, dtype=float)
    n_images = rng.choice(len(ipr), size=count, p=ipr / ipr.sum()) + 1
    total = int(n_images.sum())

    weights = np.array([c.weight for c in dist.clusters], dtype=float)
    which = rng.choice(len(weights), size=total, p=weights / weights.sum())
    log_area = np.array([math.log(c.area) for c in dist.clusters])[which]
    log_aspect = np.array([math.log(c.aspect) for c in dist.clusters])[which]
    log_area = log_area + rng.standard_normal(total) * np.array([c.area_sigma for c in dist.clusters])[which]
    log_aspect = log_aspect + rng.standard_normal(total) * np.array([c.aspect_sigma for c in dist.clusters])[which]
    w = np.clip(np.rint(np.exp((log_area + log_aspect) / 2)), dist.min_side, dist.max_side).astype(np.int64)
    h = np.clip(np.rint(np.exp((log_area - log_aspect) / 2)), dist.min_side, dist.max_side).astype(np.int64)

    names = [c.name for c in dist.clusters]
    records = []
    pos = 0
    width = len(str(count - 1))
    for i, k in enumerate(n_images.tolist()):
        sizes = tuple((int(w[j]), int(h[j])) for j in range(pos, pos + k))
        records.append(RecordManifest(f"{dist.name}-{i:0{width}d}", sizes, names[which[pos]]))
        pos += k
    return records


# statistics


@dataclass
class StatsReport:
    """Tiling totals for one configuration; ``merge`` is commutative and associative."""

    config: str
    record_count: int = 0
    image_count: int = 0
    total_subimages: int = 0
    total_image_tokens: int = 0
    grids: Counter = field(default_factory=Counter)  # (n_h, n_w) -> images
    branches: Counter = field(default_factory=Counter)  # "cover" | "downscale" -> images
    per_record: Counter = field(default_factory=Counter)  # sub-images -> records

    def add(self, record: RecordManifest, cfg: SplitConfig) -> None:
        try:
            plans = plan_images(record.sizes_hw, cfg)
        except AnyresError as exc:
            raise RecordError(record.record_id, exc) from exc
        n = 0
        for p in plans:
            self.grids[(p.grid.n_h, p.grid.n_w)] += 1
            self.branches[p.branch] += 1
            n += p.total_subimages
            self.total_image_tokens += p.total_subimages * p.tokens_per_tile
        self.record_count += 1
        self.image_count += len(plans)
        self.total_subimages += n
        self.per_record[n] += 1

    def merge(self, other: StatsReport) -> StatsReport:
        if other.config != self.config:
            raise ValueError(f"cannot merge stats for {self.config} and {other.config}")
        return StatsReport(
            self.config,
            self.record_count + other.record_count,
            self.image_count + other.image_count,
            self.total_subimages + other.total_subimages,
            self.total_image_tokens + other.total_image_tokens,
            self.grids + other.grids,
            self.branches + other.branches,
            self.per_record + other.per_record,
        )

    @property
    def subimage_range(self) -> tuple[int, int] | None:
        return (min(self.per_record), max(self.per_record)) if self.per_record else None

    def to_record(self) -> dict:
        return {
            "config": self.config,
            "records": self.record_count,
            "images": self.image_count,
            "subimages": self.total_subimages,
            "image_tokens": self.total_image_tokens,
            "grids": {f"{h}x{w}": self.grids[(h, w)] for h, w in sorted(self.grids, key=lambda g: (g[0] * g[1], g))},
            "branches": {b: self.branches[b] for b in sorted(self.branches)},
            "subimages_per_record": {str(k): self.per_record[k] for k in sorted(self.per_record)},
        }

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StatsReport) and self.to_record() == other.to_record()


def _shard_stats(records: Sequence[RecordManifest], configs: Sequence[SplitConfig]) -> list[StatsReport]:
    reports = [StatsReport(cfg.label) for cfg in configs]
    for rec in records:
        for rep, cfg in zip(reports, configs):
            rep.add(rec, cfg)
    return reports


def corpus_stats(
    records: Iterable[RecordManifest], configs: Sequence[SplitConfig], shards: int = 1
) -> list[StatsReport]:
    """One :class:`StatsReport` per config.

    With ``shards > 1`` records are dealt round-robin to worker processes and
    the partial reports merged; totals do not depend on ``shards`` or on record
    order.
    """
    if not configs:
        raise ValueError("corpus_stats needs at least one config")
    if shards < 1:
        raise ValueError(f"shards must be >= 1, got {shards}")
    if shards == 1:
        return _shard_stats(records, configs)
    records = list(records)
    parts = [records[i::shards] for i in range(shards)]
    with ProcessPoolExecutor(max_workers=shards) as pool:
        partials = list(pool.map(_shard_stats, parts, [list(configs)] * shards))
    out = partials[0]
    for part in partials[1:]:
        out = [a.merge(b) for a, b in zip(out, part)]
    return out
