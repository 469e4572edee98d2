"""Benchmark normalization, category averages and the MMBase aggregate."""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from anyres.errors import MetricRangeError, MissingBenchmarkError, UnknownBenchmarkError

REFCOCO_SPLITS = ("refcoco_testa", "refcoco_testb", "refcoco+_testa", "refcoco+_testb", "refcocog_test")

CATEGORIES: dict[str, tuple[str, ...]] = {
    "general": ("mme", "seed-img", "pope", "llava-w", "mm-vet", "realworldqa"),
    "text_rich": ("wtq", "tabfact", "ocrbench", "chartqa", "textvqa", "docvqa", "infovqa"),
    "knowledge": ("ai2d", "scienceqa", "mathvista", "mmmu"),
    "refer_ground": ("flickr30k", "refcoco", "lvis"),
    "multi_image": ("qbench2", "mantis", "nlvr2", "blink", "mvbench"),
}
# reported alongside their category but never averaged in
EXCLUDED: dict[str, str] = {"ferret-bench": "refer_ground", "muirbench": "multi_image"}

MMBASE_CATEGORIES = ("general", "text_rich", "knowledge")

# judge-assisted scores may exceed 100
_UNBOUNDED = {"llava-w", "ferret-bench"}

KNOWN = frozenset(b for members in CATEGORIES.values() for b in members) | set(EXCLUDED)

_ALIASES = {
    "seed": "seed-img",
    "seedbench": "seed-img",
    "seed_img": "seed-img",
    "llava-bench": "llava-w",
    "llava_w": "llava-w",
    "llavaw": "llava-w",
    "mmvet": "mm-vet",
    "mm_vet": "mm-vet",
    "realworld-qa": "realworldqa",
    "sqa": "scienceqa",
    "mathv": "mathvista",
    "flickr": "flickr30k",
    "lvis-ref": "lvis",
    "lvis_ref": "lvis",
    "q-bench2": "qbench2",
    "qbench": "qbench2",
    "ferret": "ferret-bench",
    "ferretbench": "ferret-bench",
}

Raw = float | Sequence[float] | Mapping[str, float]


def canonical(benchmark: str) -> str:
    key = benchmark.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in KNOWN:
        raise UnknownBenchmarkError(f"unknown benchmark {benchmark!r}")
    return key


def _percent(name: str, value: float) -> float:
    value = float(value)
    if value < 0 or (value > 100 and name not in _UNBOUNDED):
        raise MetricRangeError(f"{name}: {value} is outside [0, 100]")
    return value


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs)


def normalize_metric(benchmark: str, raw: Raw, refcoco_splits: Sequence[str] = REFCOCO_SPLITS) -> float:
    """Map a raw benchmark value to a percentage.

    * MME: ``(perception, cognition)`` -> ``(P + C) / 2800 * 100``; a bare
      number is read as the P + C sum.
    * OCRBench: total score out of 1000 -> percent.
    * ChartQA: ``(human, augmented)`` -> their mean.
    * RefCOCO: one value per split (sequence or split -> value mapping) -> mean.
    * LVIS: ``(box, point)`` -> mean.

    Composite benchmarks given as a single number are taken as already averaged.
    """
    name = canonical(benchmark)
    if name == "mme":
        if isinstance(raw, (int, float)):
            total = float(raw)
        else:
            perception, cognition = raw
            if not 0 <= perception <= 2000 or not 0 <= cognition <= 800:
                raise MetricRangeError(f"MME scores ({perception}, {cognition}) out of range")
            total = float(perception) + float(cognition)
        if not 0 <= total <= 2800:
            raise MetricRangeError(f"MME total {total} out of range")
        return total / 2800 * 100
    if name == "ocrbench":
        score = float(raw)
        if not 0 <= score <= 1000:
            raise MetricRangeError(f"OCRBench score {score} is outside [0, 1000]")
        return score / 1000 * 100
    if isinstance(raw, (int, float)):
        return _percent(name, raw)
    if name == "refcoco":
        if isinstance(raw, Mapping):
            lowered = {k.lower(): v for k, v in raw.items()}
            missing = [s for s in refcoco_splits if s.lower() not in lowered]
            if missing:
                raise MetricRangeError(f"RefCOCO splits missing: {', '.join(missing)}")
            values = [lowered[s.lower()] for s in refcoco_splits]
        else:
            values = list(raw)
            if len(values) != len(refcoco_splits):
                raise MetricRangeError(f"RefCOCO needs {len(refcoco_splits)} split values, got {len(values)}")
        return _mean([_percent(name, v) for v in values])
    if name in ("chartqa", "lvis"):
        values = list(raw)
        if len(values) != 2:
            raise MetricRangeError(f"{name} needs exactly two values, got {len(values)}")
        return _mean([_percent(name, v) for v in values])
    raise MetricRangeError(f"{name} takes a single value, got {raw!r}")


def _normalized(metrics: Mapping[str, Raw], refcoco_splits: Sequence[str]) -> dict[str, float]:
    return {canonical(k): normalize_metric(k, v, refcoco_splits) for k, v in metrics.items()}


def category_average(
    category: str, metrics: Mapping[str, Raw], refcoco_splits: Sequence[str] = REFCOCO_SPLITS
) -> float:
    if category not in CATEGORIES:
        raise UnknownBenchmarkError(f"unknown category {category!r}")
    members = CATEGORIES[category]
    present = {canonical(k): k for k in metrics}
    missing = [m for m in members if m not in present]
    if missing:
        raise MissingBenchmarkError(category, missing)
    return _mean([normalize_metric(m, metrics[present[m]], refcoco_splits) for m in members])


def mmbase_from_averages(general: float, text_rich: float, knowledge: float) -> float:
    return (general + text_rich + knowledge) / 3


def mmbase(metrics: Mapping[str, Raw], refcoco_splits: Sequence[str] = REFCOCO_SPLITS) -> float:
    return mmbase_from_averages(*(category_average(c, metrics, refcoco_splits) for c in MMBASE_CATEGORIES))


@dataclass(frozen=True)
class ScoreReport:
    categories: dict[str, float]
    mmbase: float
    excluded: dict[str, float]
    normalized: dict[str, float]

    def to_record(self) -> dict:
        return {
            "categories": self.categories,
            "mmbase": self.mmbase,
            "excluded": self.excluded,
            "normalized": self.normalized,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=False)

    def to_tsv(self) -> str:
        rows = ["section\tname\tvalue"]
        rows += [f"category\t{k}\t{v!r}" for k, v in self.categories.items()]
        rows.append(f"aggregate\tmmbase\t{self.mmbase!r}")
        rows += [f"excluded\t{k}\t{v!r}" for k, v in self.excluded.items()]
        rows += [f"benchmark\t{k}\t{v!r}" for k, v in self.normalized.items()]
        return "\n".join(rows) + "\n"


def score_report(metrics: Mapping[str, Raw], refcoco_splits: Sequence[str] = REFCOCO_SPLITS) -> ScoreReport:
    """All five category averages plus MMBase; every member must be present.

    Excluded benchmarks are normalized and listed but take no part in any average.
    """
    normalized = _normalized(metrics, refcoco_splits)
    missing = {c: [m for m in ms if m not in normalized] for c, ms in CATEGORIES.items()}
    missing = {c: ms for c, ms in missing.items() if ms}
    if missing:
        raise MissingBenchmarkError(", ".join(missing), [m for ms in missing.values() for m in ms])
    cats = {c: _mean([normalized[m] for m in ms]) for c, ms in CATEGORIES.items()}
    excluded = {k: v for k, v in normalized.items() if k in EXCLUDED}
    return ScoreReport(
        categories=cats,
        mmbase=mmbase_from_averages(*(cats[c] for c in MMBASE_CATEGORIES)),
        excluded=excluded,
        normalized=normalized,
    )


def load_metrics(path) -> dict[str, Raw]:
    """Read a flat ``benchmark -> value | [values] | {split: value}`` JSON object."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise MetricRangeError("metrics file must hold a JSON object")
    return data
