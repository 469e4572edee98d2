"""``anyres`` command line.

Stdout carries data (JSON lines by default, ``--format table`` for people);
stderr carries diagnostics.  Exit codes: 0 success, 1 usage error, 2 data
error.  ``--config FILE`` (JSON or YAML) overrides flags; ``ANYRES_SEED``
sets the default seed.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import TextIO

import yaml

from anyres.corpus import DISTRIBUTIONS, corpus_stats, read_manifest, synth_corpus, write_manifest
from anyres.errors import AnyresError
from anyres.layout import assemble, frame_plan, plan_images, token_budget
from anyres.mixture import PRESETS, empirical_report, load_mixture, plan_batches, preset
from anyres.scoring import REFCOCO_SPLITS, load_metrics, score_report
from anyres.tiler import INDICATOR_MODES, OVERVIEW_POSITIONS, GridSpec, SplitConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SEED_ENV = "ANYRES_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN:MAX, got {text!r}") from None
    return lo, hi


def _grid(text: str) -> GridSpec:
    try:
        n_h, n_w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return GridSpec(n_h, n_w)


def _default_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _split_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("splitting")
    g.add_argument("--r", type=int, default=672, help="encoder resolution (default 672)")
    g.add_argument("--grid", type=_grid_range, default=(4, 9), metavar="MIN:MAX", help="dynamic tile range")
    g.add_argument("--static", type=_grid, default=None, metavar="HxW", help="fixed grid instead of dynamic")
    g.add_argument("--tokens", type=int, default=144, help="tokens per sub-image")
    g.add_argument("--indicators", choices=INDICATOR_MODES, default="none")
    g.add_argument("--overview", choices=OVERVIEW_POSITIONS, default="after")
    g.add_argument("--multi-threshold", type=int, default=3, help="split only records with fewer images")


def _split_config(args: argparse.Namespace) -> SplitConfig:
    kw = dict(
        r=args.r,
        tokens_per_tile=args.tokens,
        indicator_mode=args.indicators,
        overview_position=args.overview,
        multi_image_split_threshold=args.multi_threshold,
    )
    if args.static is not None:
        return SplitConfig.static(args.static.n_h, args.static.n_w, **kw)
    return SplitConfig(n_min=args.grid[0], n_max=args.grid[1], **kw)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON/YAML file whose values override flags")

    parser = _Parser(prog="anyres", description="Any-resolution tiling, mixture planning and scoring tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tile", parents=[common], help="plan the sub-image grid for images")
    p.add_argument("--h", type=int, help="image height")
    p.add_argument("--w", type=int, help="image width")
    p.add_argument("--manifest", type=Path, help="record manifest (one output line per record)")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed manifest line")
    p.add_argument("--format", choices=("jsonl", "table"), default="jsonl")
    _split_flags(p)

    p = sub.add_parser("stats", parents=[common], help="corpus tiling statistics")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--manifest", type=Path)
    src.add_argument("--preset", choices=sorted(DISTRIBUTIONS), help="synthetic corpus preset")
    p.add_argument("--count", type=int, default=100_000, help="synthetic record count")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--compare", nargs="+", default=["static:2x2", "dynamic:4:9"], metavar="CONFIG",
        help="config labels, e.g. static:2x2 dynamic:4:9; ratios are against the first",
    )
    p.add_argument("--r", type=int, default=672)
    p.add_argument("--tokens", type=int, default=144)
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--format", choices=("jsonl", "table"), default="jsonl")

    p = sub.add_parser("mix", parents=[common], help="plan mixture batches")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--spec", type=Path, help="mixture spec (JSON or YAML)")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--batches", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--plan-out", type=Path, help="write batch assignments here as JSON lines")
    p.add_argument("--format", choices=("jsonl", "table"), default="jsonl")

    p = sub.add_parser("score", parents=[common], help="category averages and MMBase")
    p.add_argument("metrics", type=Path, help="JSON object of benchmark -> raw value")
    p.add_argument("--refcoco-splits", nargs="+", default=list(REFCOCO_SPLITS))
    p.add_argument("--format", choices=("json", "tsv"), default="json")

    p = sub.add_parser("frames", parents=[common], help="uniform video frame sampling")
    p.add_argument("--total", type=int, required=True, help="frames in the clip")
    p.add_argument("--n", type=int, default=24, help="frames to sample")
    p.add_argument("--tokens", type=int, default=144, help="tokens per frame")
    p.add_argument("--format", choices=("jsonl", "table"), default="jsonl")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic manifest")
    p.add_argument("--preset", choices=sorted(DISTRIBUTIONS), default="web-mix")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, help="output path (default stdout)")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        if isinstance(action, argparse._SubParsersAction):  # noqa: SLF001
            return action.choices[command]
    raise KeyError(command)


def apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """Overlay ``--config`` values; top-level keys and a section named after the subcommand both apply."""
    if args.config is None:
        return
    data = yaml.safe_load(args.config.read_text()) or {}
    if not isinstance(data, dict):
        raise UsageError(f"{args.config}: config must be a mapping")
    section = data.pop(args.command, {})
    if not isinstance(section, dict):
        raise UsageError(f"{args.config}: section {args.command!r} must be a mapping")
    data = {k: v for k, v in data.items() if not isinstance(v, dict)} | section
    actions = {a.dest: a for a in _subparser(parser, args.command)._actions}
    for key, value in data.items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None or dest in ("help", "config"):
            raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
        if isinstance(value, list) and action.nargs in ("+", "*"):
            value = [action.type(v) if action.type and isinstance(v, str) else v for v in value]
        elif isinstance(value, (str, int, float)) and action.type is not None and not isinstance(value, bool):
            try:
                value = action.type(str(value))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{args.config}: bad value for {key!r}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{args.config}: {key!r} must be one of {', '.join(map(str, action.choices))}")
        setattr(args, dest, value)


def _check_paths(args: argparse.Namespace) -> None:
    for name in ("manifest", "spec", "metrics"):
        path = getattr(args, name, None)
        if path is not None and not path.is_file():
            raise FileNotFoundError(f"{path}: no such file")
    for name in ("plan_out", "out"):
        path = getattr(args, name, None)
        if path is not None and not path.parent.is_dir():
            raise FileNotFoundError(f"{path.parent}: no such directory")


def _emit(rec: dict, out: TextIO) -> None:
    out.write(json.dumps(rec, separators=(",", ":")) + "\n")


def _table(rows: list[dict], out: TextIO) -> None:
    if not rows:
        return
    cols = list(rows[0])
    cells = [[_cell(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    out.write("  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip() + "\n")
    for row in cells:
        out.write("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() + "\n")


def _cell(v: object) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, dict):
        return " ".join(f"{k}={_cell(x)}" for k, x in v.items())
    if isinstance(v, (list, tuple)):
        return ",".join(map(_cell, v))
    return "" if v is None else str(v)


def _manifest_records(path: Path, strict: bool, err: TextIO):
    diagnostics: list = []
    with open(path, encoding="utf-8") as fh:
        yield from read_manifest(fh, strict=strict, diagnostics=diagnostics)
    for d in diagnostics:
        err.write(f"{path}:{d.line_no}: {d.message}\n")


def _tile_record(record_id: str | None, sizes_hw: list[tuple[int, int]], cfg: SplitConfig) -> dict:
    plans = plan_images(sizes_hw, cfg)
    budget = token_budget(assemble(plans, cfg))
    rec: dict = {} if record_id is None else {"id": record_id}
    if record_id is None:
        rec.update(plans[0].to_record())
    else:
        rec["images"] = [p.to_record() for p in plans]
    rec["subimages"] = sum(p.total_subimages for p in plans)
    rec["tokens"] = {"image": budget.image_tokens, "indicator": budget.indicator_tokens, "total": budget.total}
    return rec


def _tile_row(rec: dict) -> dict:
    plans = rec.get("images", [rec])
    return {
        "id": rec.get("id", "-"),
        "size": " ".join(f"{p['h']}x{p['w']}" for p in plans),
        "grid": " ".join(f"{p['grid'][0]}x{p['grid'][1]}" for p in plans),
        "branch": " ".join(p["branch"] for p in plans),
        "subimages": rec["subimages"],
        "tokens": rec["tokens"]["total"],
    }


def cmd_tile(args, out: TextIO, err: TextIO) -> int:
    cfg = _split_config(args)
    if args.manifest is None and (args.h is None or args.w is None):
        raise UsageError("tile needs --h and --w, or --manifest")
    if args.manifest is not None and (args.h is not None or args.w is not None):
        raise UsageError("--manifest cannot be combined with --h/--w")
    if args.manifest is None:
        records = [_tile_record(None, [(args.h, args.w)], cfg)]
    else:
        records = (
            _tile_record(r.record_id, r.sizes_hw, cfg) for r in _manifest_records(args.manifest, args.strict, err)
        )
    if args.format == "table":
        _table([_tile_row(r) for r in records], out)
    else:
        for r in records:
            _emit(r, out)
    return EXIT_OK


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = _default_seed()
    return 0 if env is None else env


def cmd_stats(args, out: TextIO, err: TextIO) -> int:
    configs = [SplitConfig.from_label(lbl, r=args.r, tokens_per_tile=args.tokens) for lbl in args.compare]
    if args.manifest is not None:
        records: object = _manifest_records(args.manifest, args.strict, err)
    else:
        records = synth_corpus(args.preset or "web-mix", args.count, _seed(args))
    reports = corpus_stats(records, configs, shards=args.shards)
    rows = [r.to_record() for r in reports]
    base = reports[0].total_subimages
    ratios = [
        {"ratio": r.total_subimages / base if base else None, "config": r.config, "baseline": reports[0].config}
        for r in reports[1:]
    ]
    if args.format == "table":
        _table([{k: v for k, v in row.items() if k != "grids"} for row in rows], out)
        for q in ratios:
            ratio = "n/a" if q["ratio"] is None else f"{q['ratio']:.4f}"
            out.write(f"ratio {q['config']} / {q['baseline']} = {ratio}\n")
    else:
        for row in rows + ratios:
            _emit(row, out)
    return EXIT_OK


def cmd_mix(args, out: TextIO, err: TextIO) -> int:
    if args.spec is not None:
        spec = load_mixture(args.spec)
    else:
        spec = preset(args.preset or "mm15-sft")
    seed = args.seed if args.seed is not None else _default_seed()
    plan = plan_batches(spec, args.batch, args.batches, seed=seed)
    if args.plan_out is not None:
        with open(args.plan_out, "w", encoding="utf-8") as fh:
            plan.write_jsonl(fh)
    report = empirical_report(plan).to_record()
    report = {"seed": plan.seed, "batch": plan.batch_size, "batches": plan.num_batches} | report
    if args.format == "table":
        rows = [{"category": k} | v for k, v in report["categories"].items()]
        _table(rows, out)
        for g, f in report["group_fractions"].items():
            out.write(f"group {g} = {f:.6f}\n")
    else:
        _emit(report, out)
    return EXIT_OK


def cmd_score(args, out: TextIO, err: TextIO) -> int:
    report = score_report(load_metrics(args.metrics), tuple(args.refcoco_splits))
    out.write(report.to_tsv() if args.format == "tsv" else report.to_json() + "\n")
    return EXIT_OK


def cmd_frames(args, out: TextIO, err: TextIO) -> int:
    plan = frame_plan(args.total, args.n, args.tokens)
    rec = plan.to_record()
    if args.format == "table":
        _table([rec | {"distinct": len(set(plan.sampled))}], out)
    else:
        _emit(rec, out)
    return EXIT_OK


def cmd_synth(args, out: TextIO, err: TextIO) -> int:
    records = synth_corpus(args.preset, args.count, _seed(args))
    if args.out is None:
        write_manifest(records, out)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            write_manifest(records, fh)
        err.write(f"wrote {len(records)} records to {args.out}\n")
    return EXIT_OK


COMMANDS = {
    "tile": cmd_tile,
    "stats": cmd_stats,
    "mix": cmd_mix,
    "score": cmd_score,
    "frames": cmd_frames,
    "synth": cmd_synth,
}


def main(argv: Sequence[str] | None = None, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        apply_config(parser, args)
        _check_paths(args)
        return COMMANDS[args.command](args, out, err)
    except UsageError as exc:
        err.write(f"anyres {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except (AnyresError, OSError, yaml.YAMLError, json.JSONDecodeError, ValueError) as exc:
        err.write(f"anyres {args.command}: error: {exc}\n")
        return EXIT_DATA
