"""Synthetic weakly hard task systems with controlled parameters.

Utilizations come from UUniFast-Discard, periods are log-uniform and
quantized, priorities are rate-monotonic, and selected tasks are turned into
aperiodic tasks, given WCET ranges and spread over budgeted partitions.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, replace
from decimal import Decimal
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import (
    APERIODIC,
    PERIODIC,
    ContextSwitchRanges,
    PartitionSpec,
    SchedulerConfig,
    SystemSpec,
    Task,
)
from .timebase import DEFAULT_RESOLUTION, round_to_units


class GenerationError(RuntimeError):
    """The generator could not satisfy its constraints within its retry budget."""


@dataclass
class GenConfig:
    """Generator inputs.  Times are milliseconds; ``u_target`` is the total utilization."""

    n: int = 25
    u_target: float = 0.9
    t_min: float = 10.0
    t_max: float = 1000.0
    g: float = 10.0
    theta: float = 0.0
    gamma: float = 0.5
    mu: float = 0.25
    omega: int = 2
    lam: Optional[float] = 0.25
    rho: int = 1
    m: int = 2
    k: int = 10
    nw: int = 10
    num_cores: int = 1
    seed: int = 0
    horizon: Optional[float] = 5000.0
    lam_floor: float = 0.01
    ctx: Tuple[float, float] = (0.012, 0.022)
    resolution: str = str(DEFAULT_RESOLUTION)
    max_retries: int = 1000

    def validate(self) -> "GenConfig":
        checks = [
            (self.n >= 1, "n must be at least 1"),
            (0 < self.u_target <= self.num_cores, "u_target must lie in (0, num_cores]"),
            (self.u_target < self.n, "u_target must be below n"),
            (0 < self.t_min <= self.t_max, "need 0 < t_min <= t_max"),
            (self.g > 0, "g must be positive"),
            (self.theta >= 0, "theta must be non-negative"),
            (0 <= self.gamma <= 1, "gamma must lie in [0, 1]"),
            (0 < self.mu < 1, "mu must lie in (0, 1)"),
            (0 <= self.omega <= self.n, "omega must lie in [0, n]"),
            (self.lam is None or 0 < self.lam < 1, "lam must lie in (0, 1) or be undefined"),
            (1 <= self.rho <= self.n, "rho must lie in [1, n]"),
            (0 <= self.m < self.k, "need 0 <= m < K"),
            (0 <= self.nw <= self.n, "nw must lie in [0, n]"),
            (self.num_cores >= 1, "num_cores must be positive"),
            (0 < self.lam_floor < 1, "lam_floor must lie in (0, 1)"),
            (math.ceil(self.t_min / self.g) * self.g <= self.t_max, "no multiple of g inside [t_min, t_max]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ctx"] = list(self.ctx)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "GenConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        doc = dict(doc)
        if "ctx" in doc:
            doc["ctx"] = tuple(doc["ctx"])
        return cls(**doc)


def uunifast_discard(n: int, u_target: float, rng: np.random.Generator, max_tries: int = 10_000) -> List[float]:
    """``n`` utilizations summing to ``u_target``, each strictly inside (0, 1)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 < u_target < n:
        raise ValueError(f"infeasible target utilization {u_target} for {n} tasks")
    for _ in range(max_tries):
        utils = []
        remaining = u_target
        for i in range(1, n):
            nxt = remaining * rng.random() ** (1.0 / (n - i))
            utils.append(remaining - nxt)
            remaining = nxt
        utils.append(remaining)
        if all(0 < u < 1 for u in utils):
            return utils
    raise GenerationError(f"UUniFast-Discard found no valid draw in {max_tries} tries")


def log_uniform(rng: np.random.Generator, lo: float, hi: float, size=None):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def quantize_period(value: float, g: float, t_min: float, t_max: float) -> float:
    """Nearest multiple of ``g``, clamped to the multiples inside ``[t_min, t_max]``."""
    lo = math.ceil(t_min / g - 1e-9) * g
    hi = math.floor(t_max / g + 1e-9) * g
    return min(max(round(value / g) * g, lo), hi)


def budget_split(rho: int) -> List[int]:
    """Even integer percentages with the remainder on the first partition."""
    base = 100 // rho
    return [base + 100 - base * rho] + [base] * (rho - 1)


def generate_system(cfg: GenConfig) -> SystemSpec:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    res = Decimal(cfg.resolution)

    def units(ms: float) -> int:
        return round_to_units(ms, res)

    n = cfg.n
    utils = uunifast_discard(n, cfg.u_target, rng)
    periods = [quantize_period(p, cfg.g, cfg.t_min, cfg.t_max) for p in log_uniform(rng, cfg.t_min, cfg.t_max, n)]
    wcets = [u * p for u, p in zip(utils, periods)]
    offsets = [quantize_period(o, cfg.g, 0, cfg.theta) if cfg.theta >= cfg.g else 0.0
               for o in rng.uniform(0, cfg.theta, n)]

    ids = [f"t{i + 1}" for i in range(n)]
    # rate monotonic: rank 0 is the shortest period; ties go to the lower id
    order = sorted(range(n), key=lambda i: (periods[i], i))
    priority = [0] * n
    for rank, i in enumerate(order):
        priority[i] = n - rank

    weak = set(order[n - cfg.nw:]) if cfg.nw else set()
    aperiodic = set(rng.choice(n, size=int(math.floor(cfg.gamma * n)), replace=False).tolist())

    c_units = [max(1, units(c)) for c in wcets]
    deadline = [units(p) for p in periods]
    ranges = _wcet_ranges(cfg, rng, wcets, deadline, units)

    part_of = _assign_partitions(n, cfg.rho, rng)
    budgets = budget_split(cfg.rho)
    partitions = tuple(PartitionSpec(f"P{j + 1}", Decimal(b)) for j, b in enumerate(budgets))

    tasks = []
    for i in range(n):
        lo, hi = ranges.get(i, (c_units[i], c_units[i]))
        common = dict(
            id=ids[i],
            wcet_min=lo,
            wcet_max=hi,
            deadline=deadline[i],
            priority=priority[i],
            partition=partitions[part_of[i]].id,
            m=cfg.m if i in weak else 0,
            k=cfg.k,
        )
        if i in aperiodic:
            tasks.append(Task(
                kind=APERIODIC,
                min_interarrival=units(periods[i] * (1 - cfg.mu)),
                max_interarrival=units(periods[i] * (1 + cfg.mu)),
                **common,
            ))
        else:
            tasks.append(Task(kind=PERIODIC, period=units(periods[i]), offset=units(offsets[i]), **common))

    ctx_pair = (units(cfg.ctx[0]), units(cfg.ctx[1]))
    spec = SystemSpec(
        tasks=tuple(tasks),
        partitions=partitions,
        num_cores=cfg.num_cores,
        ctx=ContextSwitchRanges(ctx_pair, ctx_pair, ctx_pair),
        sched=SchedulerConfig(),
        sim_horizon=units(cfg.horizon) if cfg.horizon is not None else None,
        resolution=res,
    )
    return spec.validate()


def _wcet_ranges(cfg, rng, wcets, deadline, units) -> Dict[int, Tuple[int, int]]:
    """Pick ``omega`` tasks and widen their WCETs into valid ranges."""
    n = len(wcets)

    def widen(i: int, lam: float) -> Optional[Tuple[int, int]]:
        lo, hi = units(wcets[i] * (1 - lam)), units(wcets[i] * (1 + lam))
        if lo <= 0 or hi >= deadline[i] or lo >= hi:
            return None
        return lo, hi

    chosen = rng.permutation(n).tolist()
    out: Dict[int, Tuple[int, int]] = {}
    if cfg.lam is not None:
        for i in chosen:
            if len(out) == cfg.omega:
                break
            r = widen(i, cfg.lam)
            if r is not None:
                out[i] = r
        if len(out) < cfg.omega:
            raise GenerationError(
                f"only {len(out)} of {n} tasks admit a valid WCET range with lambda={cfg.lam}"
            )
        return out
    for i in chosen[: cfg.omega]:
        for _ in range(cfg.max_retries):
            lam = float(log_uniform(rng, cfg.lam_floor, 1.0))
            if lam >= 1.0:
                continue
            r = widen(i, lam)
            if r is not None:
                out[i] = r
                break
        else:
            raise GenerationError(f"task t{i + 1}: no valid WCET range after {cfg.max_retries} draws")
    return out


def _assign_partitions(n: int, rho: int, rng: np.random.Generator) -> List[int]:
    perm = rng.permutation(n)
    part = [0] * n
    for j, i in enumerate(perm):
        part[i] = j if j < rho else int(rng.integers(0, rho))
    return part


# sweep grids used by the scalability study
SWEEP_GRIDS: Dict[str, List] = {
    "n": list(range(5, 51, 5)),
    "gamma": [round(0.05 * i, 2) for i in range(1, 11)],
    "omega": list(range(1, 11)),
    "num_cores": list(range(1, 11)),
    "rho": list(range(1, 11)),
    "horizon": [5000.0 * i for i in range(1, 11)],
}


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any printable parts."""
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def generate_experiment_suite(
    base: GenConfig,
    sweep: Optional[Tuple[str, Sequence]] = None,
    replicates: int = 1,
) -> List[SystemSpec]:
    """One system per (value, replicate) pair, each with an independent derived seed.

    Sweeping ``num_cores`` keeps the per-core utilization of ``base`` fixed.
    Without a sweep, ``replicates`` copies of the base configuration are made
    (the first one with the base seed itself).
    """
    return [generate_system(cfg) for cfg in sweep_configs(base, sweep, replicates)]


def sweep_configs(base: GenConfig, sweep: Optional[Tuple[str, Sequence]], replicates: int = 1) -> List[GenConfig]:
    """The configurations :func:`generate_experiment_suite` would generate, in the same order."""
    if sweep is None or not sweep[1]:
        if replicates <= 1:
            return [base]
        return [replace(base, seed=derive_seed(base.seed, "base", r)) for r in range(replicates)]
    name, values = sweep
    if name not in SWEEP_GRIDS and name not in GenConfig.__dataclass_fields__:
        raise ValueError(f"cannot sweep unknown parameter {name!r}")
    per_core = base.u_target / base.num_cores
    out = []
    for value in values:
        for r in range(replicates):
            changes = {name: value, "seed": derive_seed(base.seed, name, value, r)}
            if name == "num_cores":
                changes["u_target"] = per_core * value
            out.append(replace(base, **changes))
    return out
