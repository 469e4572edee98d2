import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from anyres.cli import main
from oracles import floor_frames

DATA = Path(__file__).parent / "data"


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


class TestTile:
    def test_ceiling_square(self):
        code, out, _ = run("tile", "--h", "2016", "--w", "2016", "--r", "672", "--grid", "4:9")
        assert code == 0
        (rec,) = lines(out)
        assert rec["grid"] == [3, 3] and rec["subimages"] == 10
        assert rec["tokens"]["total"] == 1440

    def test_single_tile(self):
        code, out, _ = run("tile", "--h", "672", "--w", "672", "--grid", "1:9")
        (rec,) = lines(out)
        assert code == 0 and rec["grid"] == [1, 1] and rec["subimages"] == 1

    def test_static(self):
        _, out, _ = run("tile", "--h", "100", "--w", "3000", "--static", "2x2")
        (rec,) = lines(out)
        assert rec["grid"] == [2, 2] and rec["tokens"]["image"] == 720

    def test_indicators_add_tokens(self):
        _, out, _ = run("tile", "--h", "1344", "--w", "1344", "--grid", "4:4", "--indicators", "seps")
        (rec,) = lines(out)
        assert rec["tokens"]["image"] == 720 and rec["tokens"]["indicator"] > 0

    def test_manifest_preserves_record_count(self, tmp_path):
        path = tmp_path / "corpus.ndj"
        assert run("synth", "--count", "37", "--out", str(path))[0] == 0
        path.write_text(path.read_text() + "garbage\n")
        code, out, err = run("tile", "--manifest", str(path), "--grid", "4:9")
        assert code == 0
        recs = lines(out)
        assert len(recs) == 37
        assert recs[0]["id"] == "web-mix-00"
        assert f"{path}:39:" in err

    def test_manifest_strict(self, tmp_path):
        path = tmp_path / "bad.ndj"
        path.write_text('{"id":"a","images":[[5,5]]}\nnope\n')
        code, _, err = run("tile", "--manifest", str(path), "--strict")
        assert code == 2 and "line 2" in err

    def test_table(self):
        code, out, _ = run("tile", "--h", "2016", "--w", "2016", "--format", "table")
        assert code == 0
        header, row = out.splitlines()
        assert header.split() == ["id", "size", "grid", "branch", "subimages", "tokens"]
        assert row.split() == ["-", "2016x2016", "3x3", "cover", "10", "1440"]

    @pytest.mark.parametrize(
        "argv,code",
        [
            (["tile", "--h", "0", "--w", "5"], 2),
            (["tile", "--h", "5"], 1),
            (["tile", "--h", "5", "--w", "5", "--grid", "9:4"], 2),
            (["tile", "--h", "5", "--w", "5", "--grid", "nine"], 1),
            (["tile", "--manifest", "/nonexistent/m.ndj"], 2),
            (["bogus"], 1),
            ([], 1),
        ],
    )
    def test_exit_codes(self, argv, code):
        got, out, err = run(*argv)
        assert got == code
        assert out == ""
        assert err


class TestStats:
    def test_compare_prints_ratio(self):
        code, out, _ = run("stats", "--preset", "web-mix", "--count", "500", "--seed", "1")
        assert code == 0
        static, dynamic, ratio = lines(out)
        assert static["config"] == "static:2x2" and static["subimages"] == 2500
        assert dynamic["config"] == "dynamic:4:9"
        assert ratio["ratio"] == dynamic["subimages"] / static["subimages"]

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "empty.ndj"
        path.write_text("")
        code, out, _ = run("stats", "--manifest", str(path))
        assert code == 0
        static, dynamic, ratio = lines(out)
        assert static["subimages"] == dynamic["subimages"] == 0
        assert ratio["ratio"] is None

    def test_shards_identical(self):
        a = run("stats", "--preset", "documents", "--count", "800", "--shards", "1")
        b = run("stats", "--preset", "documents", "--count", "800", "--shards", "8")
        assert a == b

    def test_table(self):
        code, out, _ = run("stats", "--count", "100", "--format", "table", "--compare", "static:2x2", "dynamic:1:9")
        assert code == 0
        assert out.splitlines()[-1].startswith("ratio dynamic:1:9 / static:2x2 = ")

    def test_bad_label(self):
        assert run("stats", "--count", "1", "--compare", "static:two")[0] == 2

    def test_env_seed(self, monkeypatch):
        monkeypatch.setenv("ANYRES_SEED", "7")
        env = run("stats", "--count", "300")
        explicit = run("stats", "--count", "300", "--seed", "7")
        assert env == explicit
        monkeypatch.setenv("ANYRES_SEED", "seven")
        assert run("stats", "--count", "3")[0] == 1


class TestMix:
    def test_sft_fractions(self):
        code, out, _ = run("mix", "--preset", "mm15-sft", "--batches", "2000", "--batch", "256")
        assert code == 0
        (rep,) = lines(out)
        for g, w in {"single_image": 0.8, "multi_image": 0.1, "text_only": 0.1}.items():
            assert abs(rep["group_fractions"][g] - w) <= 0.005

    def test_cpt_64(self):
        _, out, _ = run("mix", "--preset", "mm15-cpt", "--batch", "256", "--batches", "5")
        (rep,) = lines(out)
        for cat in rep["categories"].values():
            assert cat["per_batch_min"] == cat["per_batch_max"] == 64

    def test_plan_files_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run("mix", "--preset", "mm15-sft", "--batches", "50", "--seed", "3", "--plan-out", str(a))
        run("mix", "--preset", "mm15-sft", "--batches", "50", "--seed", "3", "--plan-out", str(b))
        assert a.read_bytes() == b.read_bytes()
        assert len(a.read_text().splitlines()) == 50

    def test_spec_file(self, tmp_path):
        spec = tmp_path / "mix.yaml"
        spec.write_text(
            "seed: 4\ngroups:\n  - name: g\n    weight: 1.0\n    categories:\n"
            "      - {name: a, records: 10, fraction: 0.5}\n      - {name: b, records: 10, fraction: 0.5}\n"
        )
        code, out, _ = run("mix", "--spec", str(spec), "--batch", "8", "--batches", "3")
        (rep,) = lines(out)
        assert code == 0 and rep["seed"] == 4
        assert rep["categories"]["a"]["count"] == 12

    def test_bad_spec(self, tmp_path):
        spec = tmp_path / "mix.json"
        spec.write_text('{"groups": [{"name": "g", "weight": 0.5, "categories": []}]}')
        code, _, err = run("mix", "--spec", str(spec))
        assert code == 2 and err


class TestScore:
    def test_report(self):
        code, out, _ = run("score", str(DATA / "mm15_3b_metrics.json"))
        assert code == 0
        rep = json.loads(out)
        assert set(rep["categories"]) == {"general", "text_rich", "knowledge", "refer_ground", "multi_image"}
        assert rep["mmbase"] == pytest.approx(
            (rep["categories"]["general"] + rep["categories"]["text_rich"] + rep["categories"]["knowledge"]) / 3
        )

    def test_formats_identical(self):
        _, js, _ = run("score", str(DATA / "mm15_3b_metrics.json"), "--format", "json")
        _, tsv, _ = run("score", str(DATA / "mm15_3b_metrics.json"), "--format", "tsv")
        rep = json.loads(js)
        table = {(s, n): float(v) for s, n, v in (row.split("\t") for row in tsv.splitlines()[1:])}
        for k, v in rep["categories"].items():
            assert table[("category", k)] == v
        for k, v in rep["normalized"].items():
            assert table[("benchmark", k)] == v
        assert table[("aggregate", "mmbase")] == rep["mmbase"]

    def test_missing_benchmark(self, tmp_path):
        metrics = json.loads((DATA / "mm15_3b_metrics.json").read_text())
        del metrics["MMMU"]
        path = tmp_path / "m.json"
        path.write_text(json.dumps(metrics))
        code, out, err = run("score", str(path))
        assert code == 2 and out == ""
        assert "mmmu" in err


class TestFrames:
    def test_stride_two(self):
        _, out, _ = run("frames", "--total", "48", "--n", "24")
        (rec,) = lines(out)
        assert rec["indices"] == floor_frames(48, 24) == list(range(0, 48, 2))

    def test_identity(self):
        (rec,) = lines(run("frames", "--total", "24", "--n", "24")[1])
        assert rec["indices"] == list(range(24))

    def test_short_clip(self):
        (rec,) = lines(run("frames", "--total", "10", "--n", "24")[1])
        assert set(rec["indices"]) == set(range(10)) and len(rec["indices"]) == 24

    def test_bad(self):
        assert run("frames", "--total", "0")[0] == 2
        assert run("frames")[0] == 1


class TestConfig:
    def test_config_overrides_flags(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text('grid: "1:9"\ntile:\n  h: 672\n  w: 672\n')
        code, out, _ = run("tile", "--config", str(cfg), "--h", "2016", "--w", "2016", "--grid", "4:9")
        (rec,) = lines(out)
        assert code == 0 and rec["grid"] == [1, 1]

    def test_json_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"frames": {"total": 48, "n": 24}}))
        (rec,) = lines(run("frames", "--config", str(cfg), "--total", "5")[1])
        assert rec["source_frames"] == 48

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("colour: blue\n")
        assert run("frames", "--total", "4", "--config", str(cfg))[0] == 1

    def test_bad_choice(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("indicators: stars\n")
        assert run("tile", "--h", "4", "--w", "4", "--config", str(cfg))[0] == 1

    def test_missing_config_file(self):
        assert run("frames", "--total", "4", "--config", "/nonexistent.yaml")[0] == 2


def test_module_entry_point_streams():
    proc = subprocess.run(
        [sys.executable, "-m", "anyres", "frames", "--total", "48"], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0 and proc.stderr == ""
    assert json.loads(proc.stdout)["indices"][:3] == [0, 2, 4]
    proc = subprocess.run([sys.executable, "-m", "anyres", "tile", "--h", "-3", "--w", "4"], capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stdout == "" and "error" in proc.stderr
