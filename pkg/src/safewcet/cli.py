"""Command line entry point.

Exit codes: 0 on success, 2 when an input fails validation, 3 when a stage
fails while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from .baseline import NoSafeHyperbox, max_safe_hyperbox, random_search
from .dataset import LabeledDataset
from .evaluation import compare, empirical_probability, hyperbox_volume
from .learning import LearnParams, LearningError, SafeBorderModel, contour_grid, learn
from .model import SystemFormatError, ValidationError, load_system, save_system
from .pipeline import (
    MANIFEST,
    PipelineConfig,
    StageError,
    archive_to_dict,
    bestbox_to_dict,
    canonical_json,
    load_archive,
    load_box,
    replay,
    run_pipeline,
    top_test_cases,
)
from .search import SearchParams, nsga2_search
from .simulator import TestCase, check_schedulability, format_trace, simulate, validate_test_case, validate_wcets
from .synthetic import SWEEP_GRIDS, GenConfig, GenerationError, generate_system, sweep_configs

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 2, 3


class InputError(ValueError):
    """Bad user input detected by the CLI itself."""


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(text: str, path: Optional[Path]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _load_spec(path: str):
    if not Path(path).exists():
        raise InputError(f"system file not found: {path}")
    return load_system(path)


def _search_params(args, iterations_default: int) -> SearchParams:
    return SearchParams(
        np=args.pop,
        ns=args.ns,
        pc=args.pc,
        pm=args.pm,
        iterations=args.iters if args.iters is not None else iterations_default,
    ).validate()


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    base = GenConfig.from_dict(doc)
    if args.seed is not None and "seed" not in doc:
        base = replace(base, seed=args.seed)
    sweep = None
    if args.sweep:
        name, _, raw = args.sweep.partition("=")
        if not raw:
            values = SWEEP_GRIDS.get(name)
            if values is None:
                raise InputError(f"--sweep {name}: give values as {name}=v1,v2,...")
        else:
            kind = type(getattr(base, name)) if getattr(base, name, None) is not None else float
            values = [kind(v) for v in raw.split(",")]
        sweep = (name, values)
    out = _out_dir(args)
    entries = []
    for idx, cfg in enumerate(sweep_configs(base, sweep, args.replicates)):
        spec = generate_system(cfg)
        name = f"system_{idx:04d}.json"
        save_system(spec, out / name)
        entries.append({"file": name, "config": cfg.to_dict()})
    (out / "manifest.json").write_text(canonical_json({"systems": entries}))
    print(f"wrote {len(entries)} system(s) to {out}")
    return EXIT_OK


def cmd_search(args) -> int:
    spec = _load_spec(args.system)
    params = _search_params(args, 1000)
    result = nsga2_search(spec, params, args.seed or 0, args.jobs)
    out = _out_dir(args)
    (out / "archive.json").write_text(canonical_json(archive_to_dict(spec, result)))
    result.dataset.to_csv(out / "dataset.csv")
    print(f"archive of {len(result.archive)} test cases, dataset of {len(result.dataset)} rows in {out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    spec = _load_spec(args.system)
    params = _search_params(args, 1500)
    data = random_search(spec, params, args.seed or 0, args.jobs)
    out = _out_dir(args)
    data.to_csv(out / "dataset.csv")
    box = max_safe_hyperbox(data, {t.id: t.wcet_min for t in spec.range_tasks})
    (out / "bestbox.json").write_text(canonical_json(bestbox_to_dict(spec, box)))
    print(f"best safe hyperbox volume {hyperbox_volume(box.upper, spec):.6g}")
    return EXIT_OK


def cmd_learn(args) -> int:
    spec = _load_spec(args.system)
    data = LabeledDataset.from_csv(args.dataset, spec.resolution)
    params = LearnParams(
        updates=args.updates,
        samples=args.samples,
        kfold=args.kfold,
        target_precision=args.target_precision,
        test_cases=args.test_cases,
    )
    tcs = top_test_cases(load_archive(args.archive, spec), params.test_cases)
    border, _ = learn(spec, data, tcs, params, args.seed or 0, args.jobs)
    out = Path(args.out) if args.out else Path("border.json")
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "border.json"
    out.write_text(border.to_json(spec))
    print(f"p_s={border.p_s:.6g} precision={border.precision:.4f} features={','.join(border.features)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    spec = _load_spec(args.system)
    box, p_s = load_box(args.box, spec)
    res = empirical_probability(spec, box, args.runs, args.seed or 0)
    summary = {
        "probability": res.probability,
        "violations": res.violations,
        "runs": res.runs,
        "volume": hyperbox_volume(box, spec),
        "p_s": p_s,
    }
    if args.out:
        out = _out_dir(args)
        (out / "evaluation.json").write_text(canonical_json(summary))
        (out / "verdicts.csv").write_text(res.to_csv())
    sys.stdout.write(canonical_json(summary))
    return EXIT_OK


def _read_values(path: str, column: Optional[str]) -> List[float]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path} is empty")
    try:
        return [float(r[0]) for r in rows if r]
    except ValueError:
        header, body = rows[0], rows[1:]
        col = column or ("volume" if "volume" in header else header[-1])
        if col not in header:
            raise InputError(f"{path}: no column {col!r}")
        j = header.index(col)
        return [float(r[j]) for r in body if r]


def cmd_compare(args) -> int:
    a = _read_values(args.a, args.column)
    b = _read_values(args.b, args.column)
    sys.stdout.write(canonical_json(compare(a, b).to_dict()))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    out = Path(args.out or "run")
    if args.replay:
        result, mismatched = replay(args.config, out)
        if mismatched:
            print("replay differs in: " + ", ".join(mismatched), file=sys.stderr)
            return EXIT_STAGE
        print(f"replay identical ({len(result.manifest['artifacts'])} artifacts)")
        return EXIT_OK
    path = Path(args.config)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    doc = json.loads(path.read_text())
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.jobs is not None and "jobs" not in doc:
        doc["jobs"] = args.jobs
    cfg = PipelineConfig.from_dict(doc, base_dir=path.parent)
    if cfg.system is not None and not Path(cfg.system).exists():
        raise InputError(f"stage load failed: system file not found: {cfg.system}")
    run_pipeline(cfg, out, log=lambda s: print(s, file=sys.stderr))
    print(f"run written to {out} (see {MANIFEST})")
    return EXIT_OK


def cmd_report(args) -> int:
    spec = _load_spec(args.system)
    border = SafeBorderModel.load(args.border, spec)
    pair = tuple(args.pair.split(","))
    if len(pair) != 2:
        raise InputError("--pair takes two task ids separated by a comma")
    for tid in pair:
        spec.task(tid)
    text = contour_grid(border, spec, pair, args.steps)
    _emit(text, Path(args.out) if args.out else None)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _load_spec(args.system)
    doc = json.loads(Path(args.test_case).read_text())
    if "individuals" in doc:
        chosen = [i for i in doc["individuals"] if args.id in (None, i["id"])]
        if not chosen:
            raise InputError(f"no archive individual {args.id!r}")
        doc = chosen[0]["test_case"]
    tc = TestCase.from_dict(doc, spec.resolution)
    validate_test_case(spec, tc)
    wcets = {t.id: t.wcet_max for t in spec.tasks}
    for item in filter(None, (args.wcets or "").split(",")):
        tid, _, value = item.partition("=")
        spec.task(tid)
        wcets[tid] = spec.units(value)
    validate_wcets(spec, wcets)
    scen = simulate(spec, tc, wcets)
    verdict = check_schedulability(spec, scen)
    if args.trace:
        _emit(format_trace(spec, scen), Path(args.out) if args.out else None)
    else:
        sys.stdout.write(canonical_json({
            "schedulable": verdict.schedulable,
            "task": verdict.task_id,
            "window_start": verdict.window_start,
        }))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: available cores)")
    common.add_argument("--out", default=None, help="output file or directory")

    parser = argparse.ArgumentParser(prog="safewcet", description="Safe WCET range analysis for weakly hard systems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="generate synthetic systems")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--sweep", help="param=v1,v2,... (or a bare param name for its default grid)")
    p.set_defaults(func=cmd_generate)

    for name, iters, func in (("search", 1000, cmd_search), ("baseline", 1500, cmd_baseline)):
        p = sub.add_parser(name, parents=[common], help=f"{name} for stress test cases")
        p.add_argument("--system", required=True)
        p.add_argument("--pop", type=int, default=10)
        p.add_argument("--ns", type=int, default=20)
        p.add_argument("--iters", type=int, default=None, help=f"default {iters}")
        p.add_argument("--pc", type=float, default=0.7)
        p.add_argument("--pm", type=float, default=0.2)
        p.set_defaults(func=func)

    p = sub.add_parser("learn", parents=[common], help="learn the safe WCET border")
    p.add_argument("--system", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--archive", required=True)
    p.add_argument("--updates", type=int, default=100)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--kfold", type=int, default=5)
    p.add_argument("--target-precision", type=float, default=0.99)
    p.add_argument("--test-cases", type=int, default=10)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("evaluate", parents=[common], help="empirical violation probability of a box")
    p.add_argument("--system", required=True)
    p.add_argument("--box", required=True, help="border.json or bestbox.json")
    p.add_argument("--runs", type=int, default=40000)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="Mann-Whitney U and A12 over two CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--column", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("pipeline", parents=[common], help="run search, learning and evaluation from one config")
    p.add_argument("config", help="pipeline config JSON, or a manifest with --replay")
    p.add_argument("--replay", action="store_true", help="re-run a manifest and check artifact hashes")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", parents=[common], help="2-D border contour grid as CSV")
    p.add_argument("--system", required=True)
    p.add_argument("--border", required=True)
    p.add_argument("--pair", required=True, help="two task ids, e.g. t1,t5")
    p.add_argument("--steps", type=int, default=50)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate", parents=[common], help="simulate one test case")
    p.add_argument("--system", required=True)
    p.add_argument("--test-case", required=True, help="test case JSON or archive.json")
    p.add_argument("--id", default=None, help="archive individual id")
    p.add_argument("--wcets", default=None, help="task=ms,... (default: maximum WCETs)")
    p.add_argument("--trace", action="store_true", help="print task_id,a,e,missed lines")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs is None and args.command != "pipeline":
        args.jobs = os.cpu_count() or 1
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        invalid = exc.stage == "load" and isinstance(exc.cause, (ValidationError, SystemFormatError, OSError))
        return EXIT_INVALID if invalid else EXIT_STAGE
    except (LearningError, NoSafeHyperbox, GenerationError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, KeyError, OSError) as exc:
        # covers validation errors, malformed files and bad arguments
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

if __name__ == "__main__":
    sys.exit(main())
