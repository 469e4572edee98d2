import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anyres.errors import CyclicReferenceError, EmptyCategoryError, MixtureError
from anyres.mixture import (
    CategorySpec,
    GroupSpec,
    MixtureSpec,
    empirical_report,
    load_mixture,
    mixture_from_dict,
    mixture_to_dict,
    plan_batches,
    preset,
    resolve_weights,
)


def one_group(*cats, seed=0):
    return MixtureSpec((GroupSpec("g", 1.0, tuple(cats)),), seed=seed)


class TestResolveWeights:
    def test_alpha_ratio(self):
        spec = one_group(
            CategorySpec.proportional("general", 6800),
            CategorySpec.ratio("science", 100, 0.1, "general"),
        )
        w = resolve_weights(spec)
        assert w["science"] / w["general"] == pytest.approx(0.1, rel=1e-12)
        assert w["general"] == pytest.approx(1 / 1.1)

    def test_equal_four_way(self):
        assert resolve_weights(preset("mm15-cpt")) == pytest.approx(
            {"pdfa": 0.25, "idl": 0.25, "rendered_text": 0.25, "docstruct_4m": 0.25}
        )

    def test_pretraining_ratio(self):
        w = resolve_weights(preset("mm15-pt"))
        assert w == {"image_caption": 0.5, "interleaved": 0.1, "text_only": 0.4}

    def test_final_sft(self):
        w = resolve_weights(preset("mm15-sft"))
        expected = {
            "text_rich": 0.372,
            "refer_ground": 0.225,
            "general": 0.113,
            "math": 0.056,
            "code": 0.023,
            "science": 0.011,
            "multi_image": 0.1,
            "text_only": 0.1,
        }
        assert w == pytest.approx(expected, abs=1e-12)

    def test_size_proportional(self):
        w = resolve_weights(one_group(CategorySpec.proportional("a", 300), CategorySpec.proportional("b", 100)))
        assert w == pytest.approx({"a": 0.75, "b": 0.25})

    def test_chained_ratios(self):
        spec = one_group(
            CategorySpec.proportional("general", 1000),
            CategorySpec.ratio("rg", 10, 2.0, "general"),
            CategorySpec.ratio("rg_half", 10, 0.25, "rg"),
        )
        w = resolve_weights(spec)
        assert w["rg"] / w["general"] == pytest.approx(2.0)
        assert w["rg_half"] / w["rg"] == pytest.approx(0.25)

    def test_explicit_with_free(self):
        spec = one_group(
            CategorySpec.explicit("fixed", 5, 0.4),
            CategorySpec.proportional("a", 300),
            CategorySpec.ratio("b", 1, 0.5, "a"),
        )
        w = resolve_weights(spec)
        assert w["fixed"] == pytest.approx(0.4)
        assert w["a"] + w["b"] == pytest.approx(0.6)
        assert w["b"] / w["a"] == pytest.approx(0.5)

    def test_ratio_to_explicit(self):
        spec = one_group(
            CategorySpec.explicit("x", 5, 0.2),
            CategorySpec.ratio("y", 5, 0.5, "x"),
            CategorySpec.proportional("z", 5),
        )
        w = resolve_weights(spec)
        assert w["y"] / w["x"] == pytest.approx(0.5)
        assert w["z"] == pytest.approx(0.7)

    def test_alpha_zero_removes(self):
        spec = one_group(CategorySpec.proportional("a", 10), CategorySpec.ratio("b", 10, 0.0, "a"))
        assert resolve_weights(spec) == {"a": 1.0, "b": 0.0}

    def test_cycle(self):
        spec = one_group(
            CategorySpec.ratio("a", 1, 1.0, "b"),
            CategorySpec.ratio("b", 1, 1.0, "a"),
        )
        with pytest.raises(CyclicReferenceError):
            resolve_weights(spec)

    def test_explicit_only_group_is_renormalised(self):
        spec = one_group(CategorySpec.explicit("a", 1, 0.5), CategorySpec.ratio("b", 1, 0.0, "a"))
        assert resolve_weights(spec) == {"a": 1.0, "b": 0.0}

    def test_fixed_fractions_leave_no_room(self):
        spec = one_group(CategorySpec.explicit("a", 1, 1.0), CategorySpec.proportional("b", 3))
        with pytest.raises(MixtureError):
            resolve_weights(spec)

    def test_top_level_must_sum_to_one(self):
        with pytest.raises(MixtureError):
            MixtureSpec((GroupSpec("a", 0.5, (CategorySpec.proportional("x", 1),)),))

    def test_missing_reference(self):
        with pytest.raises(MixtureError):
            GroupSpec("g", 1.0, (CategorySpec.ratio("x", 1, 0.1, "nope"),))

    def test_empty_category(self):
        with pytest.raises(EmptyCategoryError):
            CategorySpec.proportional("x", 0)

    def test_duplicate_names(self):
        with pytest.raises(MixtureError):
            MixtureSpec(
                (
                    GroupSpec("a", 0.5, (CategorySpec.proportional("x", 1),)),
                    GroupSpec("b", 0.5, (CategorySpec.proportional("x", 1),)),
                )
            )


@settings(max_examples=100, deadline=None)
@given(
    counts=st.lists(st.integers(1, 10**6), min_size=1, max_size=6),
    factor=st.integers(1, 50),
    alpha=st.floats(0, 5),
)
def test_weights_are_distribution_and_scale_invariant(counts, factor, alpha):
    cats = [CategorySpec.proportional(f"c{i}", n) for i, n in enumerate(counts)]
    scaled = [CategorySpec.proportional(f"c{i}", n * factor) for i, n in enumerate(counts)]
    extra = CategorySpec.ratio("r", 1, alpha, "c0")
    w1 = resolve_weights(one_group(*cats, extra))
    w2 = resolve_weights(one_group(*scaled, extra))
    assert all(v >= 0 for v in w1.values())
    assert sum(w1.values()) == pytest.approx(1.0, abs=1e-9)
    assert w1 == pytest.approx(w2, abs=1e-12)


class TestPlanBatches:
    def test_exact_halves(self):
        spec = one_group(CategorySpec.explicit("a", 10, 0.5), CategorySpec.explicit("b", 10, 0.5))
        plan = plan_batches(spec, 4, 50)
        counts = plan.per_batch_counts()
        assert (counts == 2).all()

    def test_cpt_64_each(self):
        plan = plan_batches(preset("mm15-cpt"), 256, 20)
        assert (plan.per_batch_counts() == 64).all()

    def test_science_fraction(self):
        spec = one_group(
            CategorySpec.proportional("general", 68_000),
            CategorySpec.ratio("science", 1_000, 0.1, "general"),
            seed=3,
        )
        rep = empirical_report(plan_batches(spec, 256, 10_000))
        assert abs(rep.fractions["science"] - 0.1 / 1.1) <= 0.005

    def test_per_batch_deviation_below_one(self):
        spec = preset("mm15-sft")
        plan = plan_batches(spec, 256, 500, seed=11)
        expected = np.array(plan.weights) * 256
        dev = np.abs(plan.per_batch_counts() - expected[None, :])
        assert (dev < 1).all()
        assert (plan.per_batch_counts().sum(axis=1) == 256).all()

    def test_deterministic(self):
        spec = preset("mm15-sft")
        a, b = plan_batches(spec, 64, 100, seed=5), plan_batches(spec, 64, 100, seed=5)
        assert np.array_equal(a.category_ids, b.category_ids)
        assert np.array_equal(a.record_ids, b.record_ids)
        c = plan_batches(spec, 64, 100, seed=6)
        assert not np.array_equal(a.record_ids, c.record_ids)

    def test_record_indices_in_range_and_fair(self):
        spec = one_group(CategorySpec.explicit("a", 37, 0.5), CategorySpec.explicit("b", 1000, 0.5))
        plan = plan_batches(spec, 10, 20)
        a_records = [r for batch in plan.assignments for c, r in batch if c == "a"]
        b_records = [r for batch in plan.assignments for c, r in batch if c == "b"]
        assert all(0 <= r < 37 for r in a_records)
        # 100 draws from 37 records: every full pass uses each record exactly once
        assert sorted(a_records[:37]) == list(range(37))
        assert sorted(a_records[37:74]) == list(range(37))
        # 100 draws from 1000 records: no repeats before wraparound
        assert len(set(b_records)) == len(b_records) == 100

    def test_batch_shape(self):
        plan = plan_batches(preset("mm15-pt"), 7, 3)
        batches = list(plan.assignments)
        assert len(batches) == 3
        assert all(len(b) == 7 for b in batches)

    def test_alpha_zero_never_sampled(self):
        spec = one_group(CategorySpec.proportional("a", 10), CategorySpec.ratio("b", 10, 0.0, "a"))
        assert plan_batches(spec, 16, 50).realized_counts["b"] == 0

    def test_jsonl(self):
        plan = plan_batches(preset("mm15-cpt"), 4, 2)
        buf = io.StringIO()
        plan.write_jsonl(buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == 2
        assert len(json.loads(lines[0])) == 4


class TestEmpiricalReport:
    def test_exact_plan(self):
        plan = plan_batches(preset("mm15-cpt"), 256, 10)
        rep = empirical_report(plan)
        assert rep.chi_square == 0
        assert rep.fractions == {k: 0.25 for k in rep.fractions}

    def test_single_category(self):
        spec = one_group(CategorySpec.proportional("only", 5))
        rep = empirical_report(plan_batches(spec, 8, 3))
        assert rep.fractions == {"only": 1.0}

    def test_sft_large(self):
        plan = plan_batches(preset("mm15-sft"), 250, 400, seed=2)
        rep = empirical_report(plan)
        assert rep.total == 100_000
        assert sum(rep.fractions.values()) == pytest.approx(1.0)
        for g, w in {"single_image": 0.8, "multi_image": 0.1, "text_only": 0.1}.items():
            assert abs(rep.group_fractions[g] - w) <= 0.005
        for name, w in rep.expected.items():
            assert abs(rep.fractions[name] - w) <= 0.005


class TestConfig:
    def test_round_trip_presets(self):
        for name in ("mm15-sft", "mm15-cpt", "mm15-pt"):
            spec = preset(name)
            assert mixture_from_dict(mixture_to_dict(spec)) == spec

    def test_yaml_file(self, tmp_path):
        path = tmp_path / "mix.yaml"
        path.write_text(
            """
seed: 9
groups:
  - name: single
    weight: 0.9
    categories:
      - {name: general, records: 680}
      - {name: science, records: 10, alpha: 0.1, reference: general}
  - name: text
    weight: 0.1
    categories:
      - {name: text_only, records: 50, fraction: 1.0}
"""
        )
        spec = load_mixture(path)
        assert spec.seed == 9
        w = resolve_weights(spec)
        assert w["text_only"] == pytest.approx(0.1)
        assert w["science"] / w["general"] == pytest.approx(0.1)

    def test_json_file(self, tmp_path):
        path = tmp_path / "mix.json"
        path.write_text(json.dumps(mixture_to_dict(preset("mm15-pt"))))
        assert load_mixture(path) == preset("mm15-pt")

    def test_malformed(self):
        with pytest.raises(MixtureError):
            mixture_from_dict({"groups": [{"name": "x"}]})

    def test_unknown_preset(self):
        with pytest.raises(MixtureError):
            preset("nope")
