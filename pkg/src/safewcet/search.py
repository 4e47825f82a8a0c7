"""NSGA-II search for test cases that maximise deadline-miss magnitude and
consecutiveness, producing the labeled dataset for the learner.

A test case holds three context switching times and one arrival sequence per
task.  Periodic arrivals are fixed by offset and period; only context times
and aperiodic sequences evolve.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import LabeledDataset
from .model import SystemSpec, Task
from .simulator import ScheduleScenario, TestCase, check_schedulability, simulate

# stream tags for per-cell seeding
STAGE_INIT = 1
STAGE_EVAL = 2
STAGE_BREED = 3
STAGE_RANDOM = 4


def cell_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one cell of a seeded run.

    Results depend only on ``(seed, path)``, never on evaluation order.
    """
    return np.random.default_rng([seed, *path])


def _uniform_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


# ---------------------------------------------------------------------------
# test case generation

def extend_arrivals(
    seq: List[int], lo: int, hi: int, horizon: int, rng: np.random.Generator
) -> List[int]:
    """Append arrivals with gaps in ``[lo, hi]`` until no further one fits before ``horizon``."""
    last = seq[-1] if seq else 0
    while last + lo < horizon:
        last += _uniform_int(rng, lo, min(hi, horizon - 1 - last))
        seq.append(last)
    return seq


def periodic_arrivals(task: Task, horizon: int) -> Tuple[int, ...]:
    return tuple(range(task.offset, horizon, task.period))


def random_test_case(spec: SystemSpec, rng: np.random.Generator) -> TestCase:
    """Context times uniform in their ranges; aperiodic gaps uniform in ``[T_min, T_max]``."""
    t = spec.sim_horizon
    arrivals = {}
    for task in spec.tasks:
        if task.periodic:
            arrivals[task.id] = periodic_arrivals(task, t)
        else:
            arrivals[task.id] = tuple(
                extend_arrivals([], task.min_interarrival, task.max_interarrival, t, rng)
            )
    return TestCase(
        startup=_uniform_int(rng, *spec.ctx.startup),
        exit=_uniform_int(rng, *spec.ctx.exit),
        ipi=_uniform_int(rng, *spec.ctx.ipi),
        arrivals=arrivals,
    )


def random_wcets(spec: SystemSpec, rng: np.random.Generator) -> List[int]:
    """One WCET per task, uniform over its range, in task order."""
    return [t.wcet_min if not t.has_range else _uniform_int(rng, t.wcet_min, t.wcet_max) for t in spec.tasks]


# ---------------------------------------------------------------------------
# genetic operators

def crossover_slots(spec: SystemSpec) -> List[str]:
    """Ordered crossover points: the three context times, then each aperiodic task."""
    return ["startup", "exit", "ipi"] + [t.id for t in spec.aperiodic_tasks]


def sweak_crossover(
    parent_p: TestCase,
    parent_q: TestCase,
    spec: SystemSpec,
    rng: np.random.Generator,
    point: "int | str | None" = None,
) -> Tuple[TestCase, TestCase]:
    """One-point crossover over fixed-size slots.

    Every slot strictly before ``point`` is exchanged between the parents; an
    aperiodic slot carries the task's whole arrival sequence.  ``point`` is a
    slot name or an index into :func:`crossover_slots`; when omitted it is
    drawn uniformly from 1..len-1 (point 0 would exchange nothing).

    The first child is built on ``parent_q`` and the second on ``parent_p``,
    so the first child keeps ``parent_p``'s prefix.
    """
    slots = crossover_slots(spec)
    if point is None:
        point = int(rng.integers(1, len(slots)))
    elif isinstance(point, str):
        point = slots.index(point)
    swapped = set(slots[:point])

    def child(own: TestCase, other: TestCase) -> TestCase:
        ctx = {name: getattr(other if name in swapped else own, name) for name in ("startup", "exit", "ipi")}
        arrivals = {tid: (other if tid in swapped else own).arrivals[tid] for tid in own.arrivals}
        return TestCase(arrivals=arrivals, **ctx)

    return child(parent_q, parent_p), child(parent_p, parent_q)


def mutate_arrival(
    seq: Sequence[int],
    k: int,
    new_value: int,
    lo: int,
    hi: int,
    horizon: int,
    rng: np.random.Generator,
) -> List[int]:
    """Replace the k-th (0-based) arrival and repair the rest of the sequence.

    If the successor is still reachable from ``new_value`` nothing else
    changes.  Otherwise every later arrival shifts by the same delta, those at
    or past the horizon are dropped and new arrivals are appended while they
    fit.
    """
    seq = list(seq)
    old = seq[k]
    seq[k] = new_value
    if k + 1 < len(seq):
        succ = seq[k + 1]
        if new_value + lo <= succ <= new_value + hi:
            return seq
        delta = new_value - old
        tail = [a + delta for a in seq[k + 1:]]
        seq = seq[: k + 1] + [a for a in tail if a < horizon]
    return extend_arrivals(seq, lo, hi, horizon, rng)


def sweak_mutate(tc: TestCase, spec: SystemSpec, pm: float, rng: np.random.Generator) -> TestCase:
    """Mutate each context time and each aperiodic arrival with probability ``pm``."""
    ctx = {}
    for name in ("startup", "exit", "ipi"):
        lo, hi = getattr(spec.ctx, name)
        ctx[name] = _uniform_int(rng, lo, hi) if rng.random() < pm else getattr(tc, name)
    horizon = spec.sim_horizon
    arrivals = dict(tc.arrivals)
    for task in spec.aperiodic_tasks:
        lo, hi = task.min_interarrival, task.max_interarrival
        seq = list(arrivals[task.id])
        k = 0
        while k < len(seq):
            if rng.random() < pm:
                prev = seq[k - 1] if k else 0
                new = _uniform_int(rng, prev + lo, min(prev + hi, horizon - 1))
                seq = mutate_arrival(seq, k, new, lo, hi, horizon, rng)
            k += 1
        arrivals[task.id] = tuple(seq)
    return TestCase(arrivals=arrivals, **ctx)


# ---------------------------------------------------------------------------
# fitness

def mu_interval(pattern: Sequence[int], k: int) -> float:
    """Distance from miss ``k`` (1-based) to the next miss; 0 for a hit, inf if none follows."""
    if not pattern[k - 1]:
        return 0
    for j in range(k, len(pattern)):
        if pattern[j]:
            return j + 1 - k
    return math.inf


def consec_value(interval: float) -> float:
    """``10 ** (1 / interval)``, with 1/inf = 0 and interval 0 meaning a hit."""
    if interval == 0:
        return 0.0
    return 10.0 ** (1.0 / interval)


def consec(pattern: Sequence[int], k: int) -> float:
    return consec_value(mu_interval(pattern, k))


def consec_sum(pattern: Sequence[int]) -> float:
    """Sum of consecutiveness degrees over all arrivals of one task, in one pass."""
    total = 0.0
    last = -1
    for idx, bit in enumerate(pattern):
        if bit:
            if last >= 0:
                total += 10.0 ** (1.0 / (idx - last))
            last = idx
    if last >= 0:
        total += 1.0
    return total


def run_fd(spec: SystemSpec, scenario: ScheduleScenario, targets: Optional[Sequence[str]] = None) -> float:
    """Largest end-minus-deadline distance over all target arrivals, in ms."""
    best = None
    for tid in targets or spec.target_tasks:
        d = scenario.distances(spec, tid)
        if d:
            m = max(d)
            best = m if best is None else max(best, m)
    return spec.ms(best) if best is not None else 0.0


def run_fc(spec: SystemSpec, scenario: ScheduleScenario, targets: Optional[Sequence[str]] = None) -> float:
    return max(
        (consec_sum(scenario.mu_pattern(spec, tid)) for tid in targets or spec.target_tasks),
        default=0.0,
    )


@dataclass
class Evaluation:
    fd: float
    fc: float
    rows: List[Tuple[List[int], bool, str, str]]


def evaluate_test_case(
    spec: SystemSpec,
    tc: TestCase,
    ns: int,
    seed: int = 0,
    path: Tuple[int, ...] = (),
    tc_id: str = "",
) -> Evaluation:
    """Simulate ``tc`` under ``ns`` independently sampled WCET assignments.

    Returns the mean of the per-run fd and fc values plus one dataset row per
    run.  Sample ``h`` draws its WCETs from ``cell_rng(seed, *path, h)``.
    """
    if ns < 1:
        raise ValueError("ns must be at least 1")
    range_idx = [i for i, t in enumerate(spec.tasks) if t.has_range]
    fd_sum = fc_sum = 0.0
    rows = []
    for h in range(ns):
        rng = cell_rng(seed, *path, h)
        w = random_wcets(spec, rng)
        scen = simulate(spec, tc, w)
        fd_sum += run_fd(spec, scen)
        fc_sum += run_fc(spec, scen)
        unsafe = not check_schedulability(spec, scen)
        rows.append(([w[i] for i in range_idx], unsafe, tc_id, ":".join(map(str, (seed, *path, h)))))
    return Evaluation(fd_sum / ns, fc_sum / ns, rows)


def fitness_fd(spec: SystemSpec, tc: TestCase, ns: int, seed: int = 0) -> float:
    return evaluate_test_case(spec, tc, ns, seed).fd


def fitness_fc(spec: SystemSpec, tc: TestCase, ns: int, seed: int = 0) -> float:
    return evaluate_test_case(spec, tc, ns, seed).fc


# ---------------------------------------------------------------------------
# NSGA-II machinery (both objectives maximised)

def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


def front_ranks(F: Sequence[Sequence[float]]) -> List[int]:
    """Non-dominated sorting rank (0 = Pareto front) of each point."""
    n = len(F)
    dominated_by = [[] for _ in range(n)]
    count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(F[i], F[j]):
                dominated_by[i].append(j)
                count[j] += 1
            elif dominates(F[j], F[i]):
                dominated_by[j].append(i)
                count[i] += 1
    rank = [0] * n
    current = [i for i in range(n) if count[i] == 0]
    r = 0
    while current:
        nxt = []
        for i in current:
            rank[i] = r
            for j in dominated_by[i]:
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(j)
        current = nxt
        r += 1
    return rank


def crowding_distances(F: Sequence[Sequence[float]], ranks: Sequence[int]) -> List[float]:
    n = len(F)
    dist = [0.0] * n
    for r in set(ranks):
        members = [i for i in range(n) if ranks[i] == r]
        for obj in range(len(F[0])):
            members.sort(key=lambda i: F[i][obj])
            lo, hi = F[members[0]][obj], F[members[-1]][obj]
            dist[members[0]] = dist[members[-1]] = math.inf
            if hi == lo:
                continue
            for a in range(1, len(members) - 1):
                i = members[a]
                dist[i] += (F[members[a + 1]][obj] - F[members[a - 1]][obj]) / (hi - lo)
    return dist


@dataclass
class Individual:
    id: str
    order: int
    tc: TestCase
    fd: float
    fc: float
    rank: int = 0
    crowding: float = 0.0

    @property
    def fitness(self) -> Tuple[float, float]:
        return (self.fd, self.fc)

    def sort_key(self) -> Tuple[int, float, int]:
        return (self.rank, -self.crowding, self.order)


def select_archive(pool: List[Individual], size: int) -> List[Individual]:
    """Rank by front then crowding distance and keep the best ``size``."""
    F = [ind.fitness for ind in pool]
    ranks = front_ranks(F)
    crowd = crowding_distances(F, ranks)
    for ind, r, c in zip(pool, ranks, crowd):
        ind.rank, ind.crowding = r, c
    return sorted(pool, key=Individual.sort_key)[:size]


def tournament(archive: List[Individual], rng: np.random.Generator) -> Individual:
    a, b = rng.integers(0, len(archive), size=2)
    return min(archive[a], archive[b], key=Individual.sort_key)


@dataclass
class SearchParams:
    np: int = 10
    ns: int = 20
    pc: float = 0.7
    pm: float = 0.2
    iterations: int = 1000

    def validate(self) -> "SearchParams":
        if self.np < 1 or self.ns < 1 or self.iterations < 1:
            raise ValueError("np, ns and iterations must be positive")
        if not (0 <= self.pc <= 1 and 0 <= self.pm <= 1):
            raise ValueError("pc and pm must lie in [0, 1]")
        return self


@dataclass
class SearchResult:
    archive: List[Individual]
    dataset: LabeledDataset
    evaluated: Dict[str, TestCase] = field(default_factory=dict)

    def best_by_fd(self, count: int) -> List[Individual]:
        return sorted(self.archive, key=lambda ind: (-ind.fd, ind.order))[:count]


def _eval_star(args):
    return evaluate_test_case(*args)


def evaluate_population(
    spec: SystemSpec,
    population: List[TestCase],
    ns: int,
    seed: int,
    stage: int,
    gen: int,
    jobs: int = 1,
    pool: Optional[ProcessPoolExecutor] = None,
) -> List[Evaluation]:
    tasks = [(spec, tc, ns, seed, (stage, gen, idx), f"g{gen}-i{idx}") for idx, tc in enumerate(population)]
    if pool is not None and jobs > 1:
        return list(pool.map(_eval_star, tasks))
    return [_eval_star(t) for t in tasks]


def nsga2_search(
    spec: SystemSpec,
    params: SearchParams = SearchParams(),
    seed: int = 0,
    jobs: int = 1,
) -> SearchResult:
    """Evolve test cases for ``params.iterations`` generations.

    Every simulation run contributes one labeled row, so the dataset holds
    ``iterations * np * ns`` rows.  The returned archive is the last
    non-dominated-sorted selection of at most ``np`` individuals.
    """
    params.validate()
    columns = [t.id for t in spec.range_tasks]
    init_rng = cell_rng(seed, STAGE_INIT)
    population = [random_test_case(spec, init_rng) for _ in range(params.np)]
    archive: List[Individual] = []
    rows: list = []
    evaluated: Dict[str, TestCase] = {}
    order = 0
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for gen in range(params.iterations):
            evals = evaluate_population(spec, population, params.ns, seed, STAGE_EVAL, gen, jobs, pool)
            fresh = []
            for idx, (tc, ev) in enumerate(zip(population, evals)):
                ind_id = f"g{gen}-i{idx}"
                evaluated[ind_id] = tc
                rows.extend(ev.rows)
                fresh.append(Individual(ind_id, order, tc, ev.fd, ev.fc))
                order += 1
            archive = select_archive(archive + fresh, params.np)
            if gen == params.iterations - 1:
                break
            population = breed(spec, archive, params, cell_rng(seed, STAGE_BREED, gen))
    finally:
        if pool is not None:
            pool.shutdown()
    dataset = LabeledDataset.from_rows(columns, rows, spec.resolution)
    return SearchResult(archive, dataset, evaluated)


def breed(
    spec: SystemSpec, archive: List[Individual], params: SearchParams, rng: np.random.Generator
) -> List[TestCase]:
    children: List[TestCase] = []
    while len(children) < params.np:
        p = tournament(archive, rng).tc
        q = tournament(archive, rng).tc
        if rng.random() < params.pc:
            p, q = sweak_crossover(p, q, spec, rng)
        children.append(sweak_mutate(p, spec, params.pm, rng))
        if len(children) < params.np:
            children.append(sweak_mutate(q, spec, params.pm, rng))
    return children
