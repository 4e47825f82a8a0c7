"""Discrete-event simulation of an adaptive-partitioning multi-core scheduler.

Scheduling rules
----------------
* Ready jobs of partitions with remaining budget are dispatched before jobs of
  exhausted partitions; exhausted partitions only use otherwise idle cores.
* Among eligible jobs the highest priority wins.  A running job is preempted
  when a strictly better job (budget state first, then priority) is ready and
  no allowed core is idle.
* Equal-priority FIFO jobs never preempt one another; equal-priority
  round-robin jobs rotate when a timeslice expires.
* Every dispatch costs the start-up time, plus the IPI time if the job resumes
  on a core other than the one it last ran on.  Every departure from a core
  (completion or preemption) costs the exit time.  Start-up and exit phases are
  not interruptible.
* Jobs are never aborted; a job still unfinished at the horizon keeps running
  (with no further arrivals) until it completes.
* Budgets are measured over a sliding window of ``partition_window`` with a
  per-tick ledger; a partition's budget is its share of ``window * cores``.

Each task serves its own jobs in arrival order and occupies at most one core.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .model import ROUND_ROBIN, SystemSpec
from .timebase import format_ms, to_units

SAFE = "safe"
UNSAFE = "unsafe"

_INF = float("inf")

# task states
_IDLE, _READY, _RESERVED, _ON_CORE = 0, 1, 2, 3
# core phases
_FREE, _STARTUP, _EXEC, _EXIT = 0, 1, 2, 3
PHASE_NAMES = {_STARTUP: "startup", _EXEC: "exec", _EXIT: "exit"}


@dataclass(frozen=True)
class TestCase:
    """Context switching times plus one arrival sequence per task."""

    __test__ = False  # keep pytest from collecting this class

    startup: int
    exit: int
    ipi: int
    arrivals: Mapping[str, Tuple[int, ...]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "arrivals", {k: tuple(v) for k, v in self.arrivals.items()})

    def __hash__(self) -> int:
        return hash((self.startup, self.exit, self.ipi, tuple(sorted(self.arrivals.items()))))

    def to_dict(self, resolution) -> dict:
        fmt = lambda v: format_ms(v, resolution)  # noqa: E731
        return {
            "startup": fmt(self.startup),
            "exit": fmt(self.exit),
            "ipi": fmt(self.ipi),
            "arrivals": {tid: [fmt(a) for a in seq] for tid, seq in self.arrivals.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict, resolution) -> "TestCase":
        conv = lambda v: to_units(v, resolution)  # noqa: E731
        return cls(
            startup=conv(doc["startup"]),
            exit=conv(doc["exit"]),
            ipi=conv(doc["ipi"]),
            arrivals={tid: tuple(conv(a) for a in seq) for tid, seq in doc["arrivals"].items()},
        )


class Interval(NamedTuple):
    core: int
    task_id: str
    phase: str
    start: int
    end: int


@dataclass
class ScheduleScenario:
    """Arrival and end time of every job, grouped per task in arrival order."""

    arrivals: Dict[str, Tuple[int, ...]]
    ends: Dict[str, Tuple[int, ...]]
    intervals: Optional[List[Interval]] = field(default=None, repr=False)

    def tuples(self) -> List[Tuple[str, int, int]]:
        rows = [(tid, a, e) for tid in self.arrivals for a, e in zip(self.arrivals[tid], self.ends[tid])]
        rows.sort(key=lambda r: (r[1], r[0]))
        return rows

    def dist(self, spec: SystemSpec, task_id: str, k: int) -> int:
        """Signed distance of the k-th (1-based) job's end from its absolute deadline."""
        arr = self.arrivals[task_id]
        if not 1 <= k <= len(arr):
            raise IndexError(f"task {task_id} has no arrival {k}")
        return self.ends[task_id][k - 1] - (arr[k - 1] + spec.task(task_id).deadline)

    def distances(self, spec: SystemSpec, task_id: str) -> List[int]:
        d = spec.task(task_id).deadline
        return [e - a - d for a, e in zip(self.arrivals[task_id], self.ends[task_id])]

    def mu_pattern(self, spec: SystemSpec, task_id: str) -> Tuple[int, ...]:
        return tuple(1 if x > 0 else 0 for x in self.distances(spec, task_id))


@dataclass(frozen=True)
class Verdict:
    schedulable: bool
    task_id: Optional[str] = None
    window_start: Optional[int] = None  # 1-based arrival index of the first offending window

    def __bool__(self) -> bool:
        return self.schedulable


def validate_test_case(spec: SystemSpec, tc: TestCase) -> None:
    """Raise ``ValueError`` unless ``tc`` is a valid test case for ``spec``."""
    for name in ("startup", "exit", "ipi"):
        lo, hi = getattr(spec.ctx, name)
        v = getattr(tc, name)
        if not lo <= v <= hi:
            raise ValueError(f"{name} time {v} outside [{lo}, {hi}]")
    t_end = spec.sim_horizon
    if set(tc.arrivals) != {t.id for t in spec.tasks}:
        raise ValueError("test case arrivals do not cover exactly the system's tasks")
    for task in spec.tasks:
        seq = tc.arrivals[task.id]
        if task.periodic:
            expected = tuple(range(task.offset, t_end, task.period))
            if seq != expected:
                raise ValueError(f"task {task.id}: periodic arrivals differ from O + (k-1)T")
            continue
        lo, hi = task.min_interarrival, task.max_interarrival
        prev = 0
        for a in seq:
            if not lo <= a - prev <= hi:
                raise ValueError(f"task {task.id}: inter-arrival {a - prev} outside [{lo}, {hi}]")
            if a >= t_end:
                raise ValueError(f"task {task.id}: arrival {a} not before the horizon")
            prev = a
        if prev + lo < t_end:
            raise ValueError(f"task {task.id}: arrival sequence is not maximal")


def _wcet_list(spec: SystemSpec, wcets: "Mapping[str, int] | Sequence[int]") -> List[int]:
    if isinstance(wcets, Mapping):
        return [wcets[t.id] for t in spec.tasks]
    return list(wcets)


def validate_wcets(spec: SystemSpec, wcets: "Mapping[str, int] | Sequence[int]") -> None:
    for t, c in zip(spec.tasks, _wcet_list(spec, wcets)):
        if not t.wcet_min <= c <= t.wcet_max:
            raise ValueError(f"task {t.id}: WCET {c} outside [{t.wcet_min}, {t.wcet_max}]")


def simulate(
    spec: SystemSpec,
    tc: TestCase,
    wcets: "Mapping[str, int] | Sequence[int]",
    record: bool = False,
) -> ScheduleScenario:
    """Run one deterministic schedule of ``tc`` with the given WCETs.

    ``wcets`` maps task id to a WCET in resolution units (or lists them in
    task order).  With ``record=True`` the scenario also carries every core
    occupancy interval, which the invariant tests inspect.
    """
    tasks = spec.tasks
    n = len(tasks)
    ncores = spec.num_cores
    cost = _wcet_list(spec, wcets)
    prio = [t.priority for t in tasks]
    is_rr = [t.policy == ROUND_ROBIN for t in tasks]
    all_cores = tuple(range(ncores))
    allowed = [(t.core,) if t.core is not None else all_cores for t in tasks]
    lam_s, lam_x, lam_p = tc.startup, tc.exit, tc.ipi
    timeslice = spec.sched.rr_timeslice

    # partitions and budget ledger
    pindex = {p.id: j for j, p in enumerate(spec.partitions)}
    npart = len(spec.partitions)
    part = [pindex[t.partition] for t in tasks]
    budgeted = npart > 1
    tick = spec.sched.tick
    window_ticks = max(1, spec.sched.partition_window // tick)
    capacity = spec.sched.partition_window * ncores
    budget = [float(p.budget_percent) / 100.0 * capacity for p in spec.partitions]
    exhausted = [False] * npart
    ledger: deque = deque()
    window_sum = [0] * npart
    bucket = [0] * npart
    next_tick = tick

    events = sorted((a, i) for i, t in enumerate(tasks) for a in tc.arrivals[t.id])
    nev = len(events)
    epos = 0

    pending: List[deque] = [deque() for _ in range(n)]
    ends: List[List[int]] = [[] for _ in range(n)]
    remaining = [0] * n
    tstate = [_IDLE] * n
    seq = [0] * n
    seq_counter = 0
    last_core = [-1] * n

    c_task = [-1] * ncores
    c_phase = [_FREE] * ncores
    c_end = [0] * ncores
    c_start = [0] * ncores
    c_reserved = [-1] * ncores
    c_done = [False] * ncores
    c_slice = [_INF] * ncores
    intervals: Optional[List[Interval]] = [] if record else None

    def log(c: int, u: int) -> None:
        if u > c_start[c]:
            intervals.append(Interval(c, tasks[c_task[c]].id, PHASE_NAMES[c_phase[c]], c_start[c], u))

    def start(i: int, c: int, u: int) -> None:
        tstate[i] = _ON_CORE
        c_task[c] = i
        c_phase[c] = _STARTUP
        c_start[c] = u
        dur = lam_s
        if last_core[i] >= 0 and last_core[i] != c:
            dur += lam_p
        c_end[c] = u + dur
        last_core[i] = c
        c_done[c] = False
        c_slice[c] = _INF

    def begin_exit(c: int, u: int, done: bool) -> None:
        if record:
            log(c, u)
        c_phase[c] = _EXIT
        c_start[c] = u
        c_end[c] = u + lam_x
        c_done[c] = done
        c_slice[c] = _INF

    def preempt(c: int, u: int) -> None:
        i = c_task[c]
        remaining[i] -= u - c_start[c]
        begin_exit(c, u, False)

    u = 0
    dirty = False  # set whenever the outcome of a dispatch pass could differ
    while True:
        changed = True
        while changed:
            changed = False
            # phase completions, exits before dispatches
            for c in range(ncores):
                ph = c_phase[c]
                if ph == _FREE or c_end[c] > u:
                    continue
                changed = True
                i = c_task[c]
                if ph == _STARTUP:
                    if record:
                        log(c, u)
                    c_phase[c] = _EXEC
                    c_start[c] = u
                    c_end[c] = u + remaining[i]
                    dirty = True
                    if is_rr[i] and u + timeslice < c_end[c]:
                        c_slice[c] = u + timeslice
                elif ph == _EXEC:
                    remaining[i] = 0
                    begin_exit(c, u, True)
                else:
                    if record:
                        log(c, u)
                    if c_done[c]:
                        ends[i].append(u)
                        pending[i].popleft()
                        last_core[i] = -1
                        if pending[i]:
                            remaining[i] = cost[i]
                            tstate[i] = _READY
                            seq_counter += 1
                            seq[i] = seq_counter
                        else:
                            tstate[i] = _IDLE
                    else:
                        tstate[i] = _READY
                        seq_counter += 1
                        seq[i] = seq_counter
                    c_phase[c] = _FREE
                    c_task[c] = -1
                    dirty = True
                    r = c_reserved[c]
                    if r >= 0:
                        c_reserved[c] = -1
                        start(r, c, u)

            # arrivals
            while epos < nev and events[epos][0] <= u:
                i = events[epos][1]
                epos += 1
                changed = True
                pending[i].append(u)
                dirty = True
                if tstate[i] == _IDLE:
                    remaining[i] = cost[i]
                    tstate[i] = _READY
                    seq_counter += 1
                    seq[i] = seq_counter

            # round-robin timeslice expiry
            for c in range(ncores):
                if c_phase[c] != _EXEC or c_slice[c] > u:
                    continue
                i = c_task[c]
                rival = -1
                for j in range(n):
                    if (
                        tstate[j] == _READY
                        and is_rr[j]
                        and prio[j] == prio[i]
                        and exhausted[part[j]] == exhausted[part[i]]
                        and c in allowed[j]
                        and (rival < 0 or seq[j] < seq[rival])
                    ):
                        rival = j
                if rival >= 0:
                    preempt(c, u)
                    c_reserved[c] = rival
                    tstate[rival] = _RESERVED
                    changed = True
                else:
                    nxt_slice = c_slice[c] + timeslice
                    c_slice[c] = nxt_slice if nxt_slice < c_end[c] else _INF

            # dispatch
            if not dirty:
                continue
            dirty = False
            ready = [i for i in range(n) if tstate[i] == _READY]
            if ready:
                if budgeted:
                    ready.sort(key=lambda i: (exhausted[part[i]], -prio[i], seq[i]))
                else:
                    ready.sort(key=lambda i: (-prio[i], seq[i]))
                for i in ready:
                    best = -1
                    lc = last_core[i]
                    for c in allowed[i]:
                        if c_phase[c] == _FREE:
                            if c == lc:
                                best = c
                                break
                            if best < 0:
                                best = c
                    if best >= 0:
                        start(i, best, u)
                        changed = True
                        continue
                    ki = (not exhausted[part[i]], prio[i])
                    victim = -1
                    vkey = None
                    for c in allowed[i]:
                        if c_phase[c] != _EXEC or c_reserved[c] >= 0:
                            continue
                        j = c_task[c]
                        kj = (not exhausted[part[j]], prio[j])
                        if kj < ki and (vkey is None or kj <= vkey):
                            victim, vkey = c, kj
                    if victim >= 0:
                        preempt(victim, u)
                        c_reserved[victim] = i
                        tstate[i] = _RESERVED
                        changed = True

        # next event
        nxt = events[epos][0] if epos < nev else _INF
        busy = False
        for c in range(ncores):
            if c_phase[c] != _FREE:
                busy = True
                if c_end[c] < nxt:
                    nxt = c_end[c]
                if c_slice[c] < nxt:
                    nxt = c_slice[c]
        if nxt == _INF:
            break
        if budgeted:
            if busy and next_tick < nxt:
                nxt = next_tick
            dt = nxt - u
            if busy:
                for c in range(ncores):
                    if c_phase[c] != _FREE:
                        bucket[part[c_task[c]]] += dt
            if nxt >= next_tick:
                skipped = (nxt - next_tick) // tick
                if skipped >= window_ticks:
                    ledger.clear()
                    window_sum = [0] * npart
                    bucket = [0] * npart
                    next_tick += skipped * tick
                while next_tick <= nxt:
                    ledger.append(bucket)
                    for p in range(npart):
                        window_sum[p] += bucket[p]
                    if len(ledger) > window_ticks:
                        old = ledger.popleft()
                        for p in range(npart):
                            window_sum[p] -= old[p]
                    bucket = [0] * npart
                    next_tick += tick
                for p in range(npart):
                    ex = window_sum[p] >= budget[p]
                    if ex != exhausted[p]:
                        exhausted[p] = ex
                        dirty = True
        u = nxt

    scen = ScheduleScenario(
        arrivals={t.id: tuple(tc.arrivals[t.id]) for t in tasks},
        ends={t.id: tuple(ends[i]) for i, t in enumerate(tasks)},
        intervals=intervals,
    )
    return scen


def max_consecutive_misses(pattern: Iterable[int]) -> Tuple[int, int]:
    """Longest run of 1s and the 0-based start of the first run reaching it."""
    best = run = 0
    best_start = start = -1
    for idx, bit in enumerate(pattern):
        if bit:
            if run == 0:
                start = idx
            run += 1
            if run > best:
                best, best_start = run, start
        else:
            run = 0
    return best, best_start


def violation_window(pattern: Sequence[int], m: int, k: int) -> Optional[int]:
    """0-based start of the first window of ``k`` arrivals holding more than
    ``m`` consecutive misses, or ``None`` if the (m, K) constraint holds.

    A run of ``m + 1`` misses always fits in some window when ``m < K``, so the
    check reduces to locating the first such run.
    """
    run = 0
    for idx, bit in enumerate(pattern):
        run = run + 1 if bit else 0
        if run > m:
            return max(0, idx - k + 1)
    return None


def check_schedulability(
    spec: SystemSpec, scenario: ScheduleScenario, targets: Optional[Iterable[str]] = None
) -> Verdict:
    """First (m, K) violation among ``targets`` (default: the system's target tasks)."""
    ids = list(spec.target_tasks if targets is None else targets)
    for tid in ids:
        task = spec.task(tid)
        if tid not in scenario.arrivals:
            raise KeyError(f"scenario has no arrivals for task {tid!r}")
        start = violation_window(scenario.mu_pattern(spec, tid), task.m, task.k)
        if start is not None:
            return Verdict(False, tid, start + 1)
    return Verdict(True)


def label(spec: SystemSpec, scenario: ScheduleScenario, targets: Optional[Iterable[str]] = None) -> str:
    return SAFE if check_schedulability(spec, scenario, targets) else UNSAFE


def format_trace(spec: SystemSpec, scenario: ScheduleScenario) -> str:
    """One ``task_id,a,e,missed`` line per job, in arrival order."""
    lines = []
    for tid, a, e in scenario.tuples():
        missed = 1 if e - a - spec.task(tid).deadline > 0 else 0
        lines.append(f"{tid},{format_ms(a, spec.resolution)},{format_ms(e, spec.resolution)},{missed}")
    return "\n".join(lines) + "\n"
