"""Empirical violation probability, hyperbox volume and two-sample statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np
from scipy.stats import mannwhitneyu, rankdata

from .model import SystemSpec
from .search import cell_rng, random_test_case
from .simulator import check_schedulability, simulate

STAGE_EMPIRICAL = 21


@dataclass
class ProbabilityResult:
    probability: float
    violations: int
    runs: int
    verdicts: List[bool] = field(default_factory=list)

    def to_csv(self) -> str:
        return "run,unsafe\n" + "".join(f"{i},{int(v)}\n" for i, v in enumerate(self.verdicts))


def empirical_probability(
    spec: SystemSpec,
    box: Mapping[str, int],
    runs: int = 40000,
    seed: int = 0,
) -> ProbabilityResult:
    """Fraction of random runs that violate some (m, K) constraint.

    Each run draws a fresh random test case and WCETs uniform in
    ``[C_min, box[id]]`` for range tasks (``C_max`` when absent from ``box``).
    Run ``r`` depends only on ``(seed, r)``.
    """
    if runs < 1:
        raise ValueError("runs must be positive")
    verdicts = []
    for r in range(runs):
        rng = cell_rng(seed, STAGE_EMPIRICAL, r)
        tc = random_test_case(spec, rng)
        w = []
        for t in spec.tasks:
            hi = min(box.get(t.id, t.wcet_max), t.wcet_max)
            w.append(int(rng.integers(t.wcet_min, hi + 1)) if hi > t.wcet_min else t.wcet_min)
        verdicts.append(not check_schedulability(spec, simulate(spec, tc, w)))
    bad = sum(verdicts)
    return ProbabilityResult(bad / runs, bad, runs, verdicts)


def hyperbox_volume(box: Mapping[str, int], spec: SystemSpec) -> float:
    """Product over range tasks of ``upper - C_min``, in ms to the number of range tasks."""
    vol = 1.0
    for t in spec.range_tasks:
        vol *= spec.ms(box.get(t.id, t.wcet_max) - t.wcet_min)
    return vol


def a12(a: Sequence[float], b: Sequence[float]) -> float:
    """Vargha-Delaney effect size: chance that a draw from ``a`` beats one from ``b`` (ties count half)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    ranks = rankdata(np.concatenate([a, b]))
    r_a = ranks[: a.size].sum()
    return float((r_a / a.size - (a.size + 1) / 2.0) / b.size)


@dataclass
class Comparison:
    p_value: float
    a12: float
    u: float
    n_a: int
    n_b: int

    def to_dict(self) -> Dict[str, float]:
        return {"p_value": self.p_value, "a12": self.a12, "u": self.u, "n_a": self.n_a, "n_b": self.n_b}


def compare(a: Sequence[float], b: Sequence[float]) -> Comparison:
    """Two-sided Mann-Whitney U test plus Vargha-Delaney A12 of ``a`` over ``b``.

    SciPy picks the exact distribution for small tie-free samples and the
    tie-corrected normal approximation otherwise.  Identical constant samples
    give p = 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    effect = a12(a, b)
    if np.ptp(np.concatenate([a, b])) == 0:
        return Comparison(1.0, effect, a.size * b.size / 2.0, a.size, b.size)
    res = mannwhitneyu(a, b, alternative="two-sided", method="auto")
    return Comparison(float(res.pvalue), effect, float(res.statistic), a.size, b.size)


def summary_table(values: Sequence[float]) -> Dict[str, float]:
    """Max, median, min and mean of repeated measurements."""
    v = np.asarray(values, dtype=float)
    return {"max": float(v.max()), "median": float(np.median(v)), "min": float(v.min()), "average": float(v.mean())}
