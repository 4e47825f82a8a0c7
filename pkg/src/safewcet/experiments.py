"""Desk-scale versions of the comparison, conservatism and scaling studies.

The settings below are small enough to finish in minutes on one core; the
acceptance suite and the demo scripts both drive them.
"""

from __future__ import annotations

import json
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .evaluation import empirical_probability, hyperbox_volume
from .model import SystemSpec
from .pipeline import PipelineConfig, load_box, run_pipeline, stage_seed
from .synthetic import GenConfig, derive_seed, generate_system

# ten tasks, three WCET ranges, hard deadlines unless a run overrides m
DESK_SYSTEM = dict(n=10, omega=3, lam=None, nw=10, m=0, k=10, seed=1, horizon=400.0, t_max=100.0, u_target=0.9)
DESK_SEARCH = dict(np=10, ns=5, iterations=100)
DESK_LEARN = dict(updates=10, samples=50, test_cases=10)


def desk_system(m: int = 0, k: int = 10) -> SystemSpec:
    return generate_system(GenConfig(**DESK_SYSTEM)).with_constraint(m, k)


@dataclass
class RunRecord:
    m: int
    run: int
    seconds: float
    sweak_volume: float
    baseline_volume: float
    p_s: float
    features: Sequence[str]
    sweak_box: Dict[str, int] = field(repr=False, default_factory=dict)
    baseline_box: Optional[Dict[str, int]] = field(repr=False, default=None)
    flags: Sequence[str] = ()


def comparison_runs(
    ms: Sequence[int] = (0, 2),
    runs: int = 10,
    seed: int = 0,
    out: "str | Path | None" = None,
    log: Callable[[str], None] = lambda s: None,
) -> List[RunRecord]:
    """SWEAK and the matched-budget baseline, ``runs`` times per value of ``m``."""
    records = []
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(out) if out is not None else Path(tmp)
        for m in ms:
            spec = desk_system(m)
            for r in range(runs):
                cfg = PipelineConfig.from_dict({
                    "seed": derive_seed(seed, "comparison", m, r) % 2**32,
                    "jobs": 1,
                    "generator": DESK_SYSTEM,
                    "constraint": {"m": m, "k": 10},
                    "search": DESK_SEARCH,
                    "learn": DESK_LEARN,
                    "baseline": {"enabled": True},
                })
                t0 = time.perf_counter()
                res = run_pipeline(cfg, root / f"m{m}_run{r}")
                secs = time.perf_counter() - t0
                box = res.border.safe_box(spec)
                bbox = _baseline_box(root / f"m{m}_run{r}" / "bestbox.json", spec)
                rec = RunRecord(
                    m=m, run=r, seconds=secs,
                    sweak_volume=hyperbox_volume(box, spec),
                    baseline_volume=hyperbox_volume(bbox, spec) if bbox else 0.0,
                    p_s=res.border.p_s, features=res.border.features,
                    sweak_box=box, baseline_box=bbox, flags=tuple(res.border.flags),
                )
                log(f"m={m} run={r} {secs:.0f}s sweak={rec.sweak_volume:.6g} baseline={rec.baseline_volume:.6g} p_s={rec.p_s:.4g}")
                records.append(rec)
    return records


def _baseline_box(path: Path, spec: SystemSpec) -> Optional[Dict[str, int]]:
    doc = json.loads(path.read_text())
    return load_box(path, spec)[0] if doc.get("upper") else None


def conservatism(records: Sequence[RunRecord], runs: int = 2000, seed: int = 0,
                 which: str = "sweak") -> List[Dict[str, float]]:
    """Empirical violation probability inside each run's box next to its ``p_s``."""
    out = []
    for rec in records:
        box = rec.sweak_box if which == "sweak" else rec.baseline_box
        if box is None:
            continue
        spec = desk_system(rec.m)
        res = empirical_probability(spec, box, runs, stage_seed(seed, f"{which}-{rec.m}-{rec.run}"))
        out.append({"m": rec.m, "run": rec.run, "p_s": rec.p_s, "empirical": res.probability})
    return out


def scaling_runtime(
    param: str,
    values: Sequence,
    base: Optional[Dict] = None,
    search: Optional[Dict] = None,
    learn: Optional[Dict] = None,
    repeats: int = 3,
    seed: int = 0,
) -> Dict:
    """Median pipeline wall time per value of one generator parameter."""
    # near-full utilization keeps both labels present at every n and omega
    base = dict(base or {"n": 10, "omega": 3, "lam": None, "m": 0, "u_target": 0.95,
                         "horizon": 200.0, "t_max": 100.0, "seed": 7})
    search = search or {"np": 4, "ns": 5, "iterations": 10}
    # every ranged task stays in the model so the term count follows omega, and
    # a precision target above 1 makes each run do the same number of updates
    learn = learn or {"updates": 2, "samples": 20, "test_cases": 2, "trees": 20,
                      "importance_threshold": 0.0, "target_precision": 1.01}
    times = {}
    with tempfile.TemporaryDirectory() as tmp:
        for v in values:
            gen = {**base, param: v}
            gen["omega"] = min(gen.get("omega", 2), gen.get("n", 25))
            gen["nw"] = min(gen.get("nw", 10), gen.get("n", 25))
            samples = []
            for r in range(-1 if not times else 0, repeats):  # r=-1 warms lazy imports
                cfg = PipelineConfig.from_dict({
                    "seed": derive_seed(seed, "scaling", param, v, r) % 2**32,
                    "jobs": 1, "generator": gen, "search": search, "learn": learn,
                })
                t0 = time.perf_counter()
                run_pipeline(cfg, Path(tmp) / f"{param}_{v}_{r}")
                if r >= 0:
                    samples.append(time.perf_counter() - t0)
            times[v] = float(np.median(samples))
    return times
