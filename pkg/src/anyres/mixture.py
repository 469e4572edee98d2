"""Hierarchical data-mixture weights and seeded batch planning.

A mixture has top-level groups (e.g. single-image / multi-image / text-only)
with weights summing to one. Inside a group each category is weighted in one
of three ways:

* size-proportional: mass proportional to its record count;
* ratio to a reference: ``alpha`` times the reference category's mass;
* explicit fraction: a fixed share of the group.

Explicit fractions are settled last: the other categories share whatever
the fixed fractions leave, keeping their mutual ratios. A ratio category
inherits the form of its reference, so ``alpha`` is preserved exactly either
way.

Batches are planned so every batch carries ``floor(p * batch_size)`` records
of each category plus a randomized assignment of the leftover slots (each
category gets an extra slot with probability equal to its fractional
remainder), and records inside a category are drawn from a reshuffled
permutation per pass over the category.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from anyres.errors import CyclicReferenceError, EmptyCategoryError, MixtureError, ZeroMassError

WEIGHT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CategorySpec:
    name: str
    record_count: int
    fraction: float | None = None
    alpha: float | None = None
    reference: str | None = None

    def __post_init__(self) -> None:
        if self.record_count < 1:
            raise EmptyCategoryError(f"category {self.name!r} has no records")
        if self.fraction is not None and self.alpha is not None:
            raise MixtureError(f"category {self.name!r}: give either a fraction or an alpha, not both")
        if self.fraction is not None and not 0 < self.fraction <= 1:
            raise MixtureError(f"category {self.name!r}: fraction must lie in (0, 1]")
        if self.alpha is not None:
            if self.alpha < 0:
                raise MixtureError(f"category {self.name!r}: alpha must be >= 0")
            if not self.reference:
                raise MixtureError(f"category {self.name!r}: alpha needs a reference category")

    @property
    def form(self) -> str:
        if self.fraction is not None:
            return "explicit"
        if self.alpha is not None:
            return "ratio"
        return "size"

    @classmethod
    def explicit(cls, name: str, record_count: int, fraction: float) -> CategorySpec:
        return cls(name, record_count, fraction=fraction)

    @classmethod
    def proportional(cls, name: str, record_count: int) -> CategorySpec:
        return cls(name, record_count)

    @classmethod
    def ratio(cls, name: str, record_count: int, alpha: float, reference: str) -> CategorySpec:
        return cls(name, record_count, alpha=alpha, reference=reference)


@dataclass(frozen=True)
class GroupSpec:
    name: str
    weight: float
    categories: tuple[CategorySpec, ...]

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise MixtureError(f"group {self.name!r} has negative weight")
        if not self.categories:
            raise EmptyCategoryError(f"group {self.name!r} has no categories")
        names = {c.name for c in self.categories}
        for c in self.categories:
            if c.reference is not None and c.reference not in names:
                raise MixtureError(
                    f"category {c.name!r} references {c.reference!r}, which is not in group {self.name!r}"
                )


@dataclass(frozen=True)
class MixtureSpec:
    groups: tuple[GroupSpec, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        total = sum(g.weight for g in self.groups)
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise MixtureError(f"top-level weights sum to {total!r}, expected 1")
        seen: set[str] = set()
        for g in self.groups:
            for c in g.categories:
                if c.name in seen:
                    raise MixtureError(f"duplicate category name {c.name!r}")
                seen.add(c.name)
        if self.seed < 0:
            raise MixtureError("seed must be non-negative")

    def categories(self) -> Iterator[tuple[GroupSpec, CategorySpec]]:
        for g in self.groups:
            for c in g.categories:
                yield g, c


def _resolve_group(group: GroupSpec) -> dict[str, float]:
    by_name = {c.name: c for c in group.categories}
    resolved: dict[str, tuple[bool, float]] = {}  # name -> (is_fixed, mass)

    def visit(name: str, stack: tuple[str, ...]) -> tuple[bool, float]:
        if name in resolved:
            return resolved[name]
        if name in stack:
            cycle = " -> ".join(stack + (name,))
            raise CyclicReferenceError(f"cyclic ratio references: {cycle}")
        c = by_name[name]
        if c.form == "explicit":
            out = (True, float(c.fraction))
        elif c.form == "size":
            out = (False, float(c.record_count))
        else:
            fixed, mass = visit(c.reference, stack + (name,))
            out = (fixed, c.alpha * mass)
        resolved[name] = out
        return out

    for c in group.categories:
        visit(c.name, ())

    fixed_total = sum(m for f, m in resolved.values() if f)
    free_total = sum(m for f, m in resolved.values() if not f)
    if free_total > 0:
        if fixed_total >= 1:
            raise MixtureError(
                f"group {group.name!r}: explicit fractions sum to {fixed_total}, leaving nothing for the rest"
            )
        share = 1.0 - fixed_total
        return {
            n: (m if fixed else m / free_total * share) for n, (fixed, m) in resolved.items()
        }
    if fixed_total <= 0:
        raise ZeroMassError(f"group {group.name!r} resolves to zero total mass")
    return {n: m / fixed_total for n, (_, m) in resolved.items()}


def resolve_weights(spec: MixtureSpec) -> dict[str, float]:
    """Per-category sampling probabilities, in declaration order, summing to 1."""
    out: dict[str, float] = {}
    for g in spec.groups:
        for name, p in _resolve_group(g).items():
            out[name] = p * g.weight
    return out


@dataclass(frozen=True, eq=False)
class BatchPlan:
    """Per-slot category and record assignments for ``num_batches`` batches.

    ``category_ids[b, k]`` indexes :attr:`categories`; ``record_ids[b, k]``
    is the record drawn from that category.
    """

    categories: tuple[str, ...]
    groups: tuple[str, ...]
    weights: tuple[float, ...]
    record_counts: tuple[int, ...]
    batch_size: int
    seed: int
    category_ids: np.ndarray = field(repr=False)
    record_ids: np.ndarray = field(repr=False)

    @property
    def num_batches(self) -> int:
        return self.category_ids.shape[0]

    def batch(self, index: int) -> list[tuple[str, int]]:
        cats, recs = self.category_ids[index], self.record_ids[index]
        return [(self.categories[c], int(r)) for c, r in zip(cats, recs)]

    @property
    def assignments(self) -> Iterator[list[tuple[str, int]]]:
        for b in range(self.num_batches):
            yield self.batch(b)

    def per_batch_counts(self) -> np.ndarray:
        """Array of shape (num_batches, n_categories)."""
        n = len(self.categories)
        offsets = np.arange(self.num_batches)[:, None] * n
        flat = np.bincount((self.category_ids + offsets).ravel(), minlength=self.num_batches * n)
        return flat.reshape(self.num_batches, n)

    @property
    def realized_counts(self) -> dict[str, int]:
        counts = np.bincount(self.category_ids.ravel(), minlength=len(self.categories))
        return {name: int(c) for name, c in zip(self.categories, counts)}

    def write_jsonl(self, fh) -> None:
        """One JSON array of ``[category, record]`` pairs per batch."""
        for b in range(self.num_batches):
            fh.write(json.dumps(self.batch(b), separators=(",", ":")))
            fh.write("\n")


def _leftover_slots(remainders: np.ndarray, leftover: int, u: np.ndarray) -> np.ndarray:
    """Systematic sampling of ``leftover`` categories per batch.

    Category ``i`` is picked with probability ``remainders[i]`` (each < 1), so
    it gets at most one extra slot per batch. Returns (num_batches, n) 0/1.
    """
    num_batches, n = u.shape[0], remainders.shape[0]
    extra = np.zeros((num_batches, n), dtype=np.int64)
    if leftover == 0:
        return extra
    edges = np.concatenate(([0.0], np.cumsum(remainders)))
    edges *= leftover / edges[-1]
    points = u[:, None] + np.arange(leftover)[None, :]
    picks = np.searchsorted(edges, points, side="right") - 1
    picks = np.clip(picks, 0, n - 1)
    rows = np.repeat(np.arange(num_batches), leftover)
    np.add.at(extra, (rows, picks.ravel()), 1)
    return extra


def _record_stream(rng: np.random.Generator, record_count: int, total: int) -> np.ndarray:
    if total == 0:
        return np.empty(0, dtype=np.int64)
    epochs = math.ceil(total / record_count)
    return np.concatenate([rng.permutation(record_count) for _ in range(epochs)])[:total]


def plan_batches(
    spec: MixtureSpec, batch_size: int, num_batches: int, seed: int | None = None
) -> BatchPlan:
    """Plan ``num_batches`` batches of ``batch_size`` records.

    Deterministic in ``(spec, batch_size, num_batches, seed)``; ``seed``
    defaults to ``spec.seed``.
    """
    if batch_size < 1 or num_batches < 0:
        raise MixtureError("batch_size must be >= 1 and num_batches >= 0")
    weights = resolve_weights(spec)
    pairs = list(spec.categories())
    names = tuple(c.name for _, c in pairs)
    p = np.array([weights[n] for n in names], dtype=np.float64)
    seed = spec.seed if seed is None else seed

    children = np.random.SeedSequence(seed).spawn(len(names) + 1)
    alloc_rng = np.random.default_rng(children[0])

    expected = p * batch_size
    base = np.floor(expected + 1e-9).astype(np.int64)
    remainders = np.clip(expected - base, 0.0, None)
    leftover = batch_size - int(base.sum())
    if leftover < 0:
        raise MixtureError("weights exceed one; cannot allocate batch")
    u = alloc_rng.random(num_batches)
    counts = base[None, :] + _leftover_slots(remainders, leftover, u)

    slots = np.repeat(np.tile(np.arange(len(names)), num_batches), counts.ravel())
    category_ids = alloc_rng.permuted(slots.reshape(num_batches, batch_size), axis=1)

    flat = category_ids.ravel()
    record_ids = np.empty(flat.shape, dtype=np.int64)
    for i, (_, cat) in enumerate(pairs):
        where = np.flatnonzero(flat == i)
        rng = np.random.default_rng(children[i + 1])
        record_ids[where] = _record_stream(rng, cat.record_count, where.size)

    return BatchPlan(
        categories=names,
        groups=tuple(g.name for g, _ in pairs),
        weights=tuple(float(x) for x in p),
        record_counts=tuple(c.record_count for _, c in pairs),
        batch_size=batch_size,
        seed=seed,
        category_ids=category_ids.astype(np.int32),
        record_ids=record_ids.reshape(num_batches, batch_size),
    )


@dataclass(frozen=True)
class MixtureReport:
    total: int
    counts: dict[str, int]
    fractions: dict[str, float]
    expected: dict[str, float]
    group_fractions: dict[str, float]
    chi_square: float
    per_batch_min: dict[str, int]
    per_batch_max: dict[str, int]

    def to_record(self) -> dict:
        return {
            "total": self.total,
            "chi_square": self.chi_square,
            "group_fractions": self.group_fractions,
            "categories": {
                name: {
                    "count": self.counts[name],
                    "fraction": self.fractions[name],
                    "expected": self.expected[name],
                    "per_batch_min": self.per_batch_min[name],
                    "per_batch_max": self.per_batch_max[name],
                }
                for name in self.counts
            },
        }


def empirical_report(plan: BatchPlan) -> MixtureReport:
    """Observed category/group fractions and Pearson chi-square vs the plan weights."""
    total = plan.num_batches * plan.batch_size
    if total == 0:
        raise MixtureError("empty plan")
    counts = plan.realized_counts
    fractions = {n: c / total for n, c in counts.items()}
    chi = 0.0
    for name, w in zip(plan.categories, plan.weights):
        exp = w * total
        if exp > 0:
            chi += (counts[name] - exp) ** 2 / exp
        elif counts[name]:
            chi = math.inf
    group_fractions: dict[str, float] = {}
    for name, g in zip(plan.categories, plan.groups):
        group_fractions[g] = group_fractions.get(g, 0.0) + fractions[name]
    per_batch = plan.per_batch_counts()
    return MixtureReport(
        total=total,
        counts=counts,
        fractions=fractions,
        expected=dict(zip(plan.categories, plan.weights)),
        group_fractions=group_fractions,
        chi_square=chi,
        per_batch_min={n: int(v) for n, v in zip(plan.categories, per_batch.min(axis=0))},
        per_batch_max={n: int(v) for n, v in zip(plan.categories, per_batch.max(axis=0))},
    )


# --- configuration files -------------------------------------------------

def mixture_from_dict(data: Mapping) -> MixtureSpec:
    """Build a spec from the config-file schema (see README)."""
    try:
        groups = []
        for g in data["groups"]:
            cats = []
            for c in g["categories"]:
                cats.append(
                    CategorySpec(
                        name=str(c["name"]),
                        record_count=int(c["records"]),
                        fraction=c.get("fraction"),
                        alpha=c.get("alpha"),
                        reference=c.get("reference"),
                    )
                )
            groups.append(GroupSpec(str(g["name"]), float(g["weight"]), tuple(cats)))
    except (KeyError, TypeError) as exc:
        raise MixtureError(f"malformed mixture config: {exc!r}") from exc
    return MixtureSpec(tuple(groups), seed=int(data.get("seed", 0)))


def mixture_to_dict(spec: MixtureSpec) -> dict:
    groups = []
    for g in spec.groups:
        cats = []
        for c in g.categories:
            entry: dict = {"name": c.name, "records": c.record_count}
            if c.fraction is not None:
                entry["fraction"] = c.fraction
            if c.alpha is not None:
                entry["alpha"] = c.alpha
                entry["reference"] = c.reference
            cats.append(entry)
        groups.append({"name": g.name, "weight": g.weight, "categories": cats})
    return {"seed": spec.seed, "groups": groups}


def load_mixture(path: str | Path) -> MixtureSpec:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return mixture_from_dict(data)


# Record counts in the presets are placeholders (the source datasets are not
# shipped); they only set the wraparound period of the record streams.
_NOMINAL_RECORDS = 100_000


def _sft() -> MixtureSpec:
    single = (
        ("text_rich", 0.372),
        ("refer_ground", 0.225),
        ("general", 0.113),
        ("math", 0.056),
        ("code", 0.023),
        ("science", 0.011),
    )
    return MixtureSpec(
        (
            GroupSpec(
                "single_image",
                0.8,
                tuple(CategorySpec.explicit(n, _NOMINAL_RECORDS, f) for n, f in single),
            ),
            GroupSpec("multi_image", 0.1, (CategorySpec.proportional("multi_image", _NOMINAL_RECORDS),)),
            GroupSpec("text_only", 0.1, (CategorySpec.proportional("text_only", _NOMINAL_RECORDS),)),
        )
    )


def _cpt() -> MixtureSpec:
    datasets = ("pdfa", "idl", "rendered_text", "docstruct_4m")
    return MixtureSpec(
        (
            GroupSpec(
                "ocr",
                1.0,
                tuple(CategorySpec.explicit(n, _NOMINAL_RECORDS, 0.25) for n in datasets),
            ),
        )
    )


def _pt() -> MixtureSpec:
    parts = (("image_caption", 0.5), ("interleaved", 0.1), ("text_only", 0.4))
    return MixtureSpec(
        tuple(
            GroupSpec(n, w, (CategorySpec.proportional(n, _NOMINAL_RECORDS),)) for n, w in parts
        )
    )


PRESETS = {
    "mm15-sft": _sft,
    "mm15-cpt": _cpt,
    "mm15-pt": _pt,
}


def preset(name: str) -> MixtureSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise MixtureError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
