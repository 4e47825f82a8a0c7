"""End-to-end runs driven by one config document, with replayable manifests.

Every artifact is written deterministically (sorted keys, no timestamps), so
a manifest's sha256 digests identify a run exactly and a replay can be checked
byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from . import __version__
from .baseline import NoSafeHyperbox, max_safe_hyperbox, random_search
from .evaluation import empirical_probability, hyperbox_volume
from .learning import LearnParams, SafeBorderModel, learn
from .model import SystemSpec, dumps_system, load_system
from .search import SearchParams, SearchResult, nsga2_search
from .simulator import TestCase
from .synthetic import GenConfig, derive_seed, generate_system

MANIFEST = "manifest.json"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")


def sha256_file(path: "str | Path") -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def stage_seed(global_seed: int, stage: str) -> int:
    return derive_seed(global_seed, stage) % (2**32)


# ---------------------------------------------------------------------------
# artifacts shared with the individual subcommands

def archive_to_dict(spec: SystemSpec, result: SearchResult) -> dict:
    return {
        "individuals": [
            {
                "id": ind.id,
                "fd": ind.fd,
                "fc": ind.fc,
                "rank": ind.rank,
                "crowding": ind.crowding if math.isfinite(ind.crowding) else "inf",
                "test_case": ind.tc.to_dict(spec.resolution),
            }
            for ind in result.archive
        ]
    }


def load_archive(path: "str | Path", spec: SystemSpec) -> List[Tuple[str, float, TestCase]]:
    """(id, fd, test case) triples from an ``archive.json``."""
    doc = json.loads(Path(path).read_text())
    return [
        (ind["id"], float(ind["fd"]), TestCase.from_dict(ind["test_case"], spec.resolution))
        for ind in doc["individuals"]
    ]


def top_test_cases(archive: List[Tuple[str, float, TestCase]], count: int) -> List[Tuple[str, TestCase]]:
    """The ``count`` archive members with the largest fd (ties by archive order)."""
    ranked = sorted(enumerate(archive), key=lambda e: (-e[1][1], e[0]))
    return [(tid, tc) for _, (tid, _, tc) in ranked[:count]]


def bestbox_to_dict(spec: SystemSpec, box) -> dict:
    from .timebase import format_ms

    return {
        "upper": {k: format_ms(v, spec.resolution) for k, v in box.upper.items()},
        "volume": hyperbox_volume(box.upper, spec),
        "row": box.row,
    }


def load_box(path: "str | Path", spec: SystemSpec) -> Tuple[Dict[str, int], Optional[float]]:
    """Upper WCET bounds from a ``border.json`` or ``bestbox.json``, plus ``p_s`` if present."""
    doc = json.loads(Path(path).read_text())
    if "safe_box" in doc:
        return {k: spec.units(v) for k, v in doc["safe_box"].items()}, float(doc["p_s"])
    if "reduced_ranges" in doc:
        border = SafeBorderModel.from_dict(doc, spec)
        return border.safe_box(spec), border.p_s
    if "upper" in doc:
        return {k: spec.units(v) for k, v in doc["upper"].items()}, None
    raise ValueError(f"{path}: neither a border nor a best-box file")


# ---------------------------------------------------------------------------
# config

@dataclass
class BaselineConfig:
    enabled: bool = False
    iterations: Optional[int] = None  # None: match the rows SWEAK actually labeled


@dataclass
class EvaluateConfig:
    enabled: bool = False
    runs: int = 40000


@dataclass
class PipelineConfig:
    seed: int = 0
    jobs: Optional[int] = None  # None: available cores
    system: Optional[str] = None
    generator: Optional[Dict[str, Any]] = None
    constraint: Optional[Dict[str, int]] = None
    search: SearchParams = field(default_factory=SearchParams)
    learn: LearnParams = field(default_factory=LearnParams)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], base_dir: "str | Path | None" = None) -> "PipelineConfig":
        sections = {"search": SearchParams, "learn": LearnParams, "baseline": BaselineConfig, "evaluate": EvaluateConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown pipeline keys: {sorted(unknown)}")
        kw: Dict[str, Any] = {}
        for key, value in doc.items():
            if key in sections:
                allowed = {f.name for f in fields(sections[key])}
                bad = set(value) - allowed
                if bad:
                    raise ValueError(f"unknown keys in section {key!r}: {sorted(bad)}")
                kw[key] = sections[key](**value)
            else:
                kw[key] = value
        cfg = cls(**kw)
        if (cfg.system is None) == (cfg.generator is None):
            raise ValueError("config needs exactly one of 'system' or 'generator'")
        if cfg.system is not None and base_dir is not None and not Path(cfg.system).is_absolute():
            cfg.system = str(Path(base_dir) / cfg.system)
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def label_budget(self, updates: Optional[int] = None, test_cases: Optional[int] = None) -> int:
        """Rows SWEAK labels: the search dataset plus each refinement update.

        Without arguments this is the upper bound where every update runs.
        """
        s, l = self.search, self.learn
        updates = l.updates if updates is None else updates
        test_cases = l.test_cases if test_cases is None else test_cases
        return s.iterations * s.np * s.ns + updates * l.samples * test_cases

    def baseline_iterations(self, labeled: Optional[int] = None) -> int:
        """Generations of random search producing at least ``labeled`` rows (default: the bound)."""
        if self.baseline.iterations is not None:
            return self.baseline.iterations
        per_gen = self.search.np * self.search.ns
        return -(-(self.label_budget() if labeled is None else labeled) // per_gen)


# ---------------------------------------------------------------------------
# run

@dataclass
class RunResult:
    out: Path
    manifest: Dict[str, Any]
    border: Optional[SafeBorderModel] = None


def run_pipeline(cfg: PipelineConfig, out: "str | Path", log: Callable[[str], None] = lambda s: None) -> RunResult:
    """Run every configured stage into ``out`` and write the manifest last.

    Parallelism never changes results, so ``jobs`` is free to differ on replay.
    """
    out = Path(out)
    jobs = cfg.jobs or os.cpu_count() or 1
    out.mkdir(parents=True, exist_ok=True)
    seeds = {name: stage_seed(cfg.seed, name) for name in ("generate", "search", "learn", "baseline", "evaluate")}
    artifacts: Dict[str, str] = {}

    def write(name: str, text: str) -> None:
        path = out / name
        path.write_text(text)
        artifacts[name] = sha256_file(path)

    def manifest() -> Dict[str, Any]:
        return {
            "version": __version__,
            "config": cfg.to_dict(),
            "stage_seeds": seeds,
            "artifacts": dict(sorted(artifacts.items())),
        }

    def stage(name: str, fn: Callable[[], Any]) -> Any:
        log(f"[{name}] start")
        try:
            return fn()
        except Exception as exc:
            (out / MANIFEST).write_text(canonical_json({**manifest(), "failed_stage": name}))
            raise StageError(name, exc) from exc

    def load() -> SystemSpec:
        if cfg.system is not None:
            spec = load_system(cfg.system)
        else:
            gen = GenConfig.from_dict({**cfg.generator, "seed": cfg.generator.get("seed", seeds["generate"])})
            spec = generate_system(gen)
        if cfg.constraint:
            spec = spec.with_constraint(cfg.constraint["m"], cfg.constraint.get("k"))
        return spec.validate()

    spec = stage("load", load)
    write("system.json", dumps_system(spec))

    result = stage("search", lambda: nsga2_search(spec, cfg.search, seeds["search"], jobs))
    write("archive.json", canonical_json(archive_to_dict(spec, result)))
    write("dataset.csv", result.dataset.to_csv())

    tcs = [(ind.id, ind.tc) for ind in result.best_by_fd(cfg.learn.test_cases)]
    border, training = stage("learn", lambda: learn(spec, result.dataset, tcs, cfg.learn, seeds["learn"], jobs))
    write("border.json", border.to_json(spec))
    write("training.csv", training.to_csv())

    if cfg.baseline.enabled:
        def baseline():
            labeled = cfg.label_budget(border.counts["updates"], len(tcs))
            params = replace(cfg.search, iterations=cfg.baseline_iterations(labeled))
            data = random_search(spec, params, seeds["baseline"], jobs)
            cmin = {t.id: t.wcet_min for t in spec.range_tasks}
            try:
                box = max_safe_hyperbox(data, cmin)
            except NoSafeHyperbox:
                box = None
            return data, box

        bdata, bbox = stage("baseline", baseline)
        write("baseline_dataset.csv", bdata.to_csv())
        write("bestbox.json", canonical_json(bestbox_to_dict(spec, bbox) if bbox else {"upper": None, "volume": 0.0}))

    if cfg.evaluate.enabled:
        def evaluate():
            res = empirical_probability(spec, border.safe_box(spec), cfg.evaluate.runs, seeds["evaluate"])
            return res

        ev = stage("evaluate", evaluate)
        write("evaluation.json", canonical_json({
            "probability": ev.probability,
            "violations": ev.violations,
            "runs": ev.runs,
            "p_s": border.p_s,
            "volume": hyperbox_volume(border.safe_box(spec), spec),
        }))
        write("evaluation.csv", ev.to_csv())

    doc = manifest()
    (out / MANIFEST).write_text(canonical_json(doc))
    log(f"[done] {out}")
    return RunResult(out, doc, border)


def replay(manifest_path: "str | Path", out: "str | Path") -> Tuple[RunResult, List[str]]:
    """Re-run a manifest's config into ``out``; returns the artifacts whose hashes differ."""
    doc = json.loads(Path(manifest_path).read_text())
    cfg = PipelineConfig.from_dict(doc["config"])
    result = run_pipeline(cfg, out)
    mismatched = [
        name for name, digest in doc["artifacts"].items()
        if result.manifest["artifacts"].get(name) != digest
    ]
    return result, mismatched
