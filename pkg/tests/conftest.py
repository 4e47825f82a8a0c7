import math
from decimal import Decimal

import numpy as np
import pytest

from safewcet.model import APERIODIC, PERIODIC, ContextSwitchRanges, PartitionSpec, SystemSpec, Task

MS = 1000  # units per millisecond at the default resolution


def periodic(tid, period, c, prio, cmax=None, partition="P", m=0, k=1, **kw):
    return Task(tid, PERIODIC, c, cmax if cmax is not None else c, kw.pop("deadline", period), prio,
                partition, period=period, m=m, k=k, **kw)


def aperiodic(tid, lo, hi, c, prio, cmax=None, partition="P", m=0, k=1, **kw):
    return Task(tid, APERIODIC, c, cmax if cmax is not None else c, kw.pop("deadline", lo), prio,
                partition, min_interarrival=lo, max_interarrival=hi, m=m, k=k, **kw)


def system(tasks, cores=1, partitions=None, ctx=(0, 0, 0), horizon=None, **kw):
    parts = partitions or (PartitionSpec("P", Decimal(100)),)
    c = ContextSwitchRanges(*[(v, v) if isinstance(v, int) else tuple(v) for v in ctx])
    return SystemSpec(tuple(tasks), tuple(parts), num_cores=cores, ctx=c, sim_horizon=horizon, **kw).validate()


def brute_force_ends(spec, tc, wcets):
    """Reference uniprocessor fixed-priority preemptive schedule, stepped one tick at a time.

    The tick is the gcd of every time quantity, so stepping loses nothing.
    Jobs of one task run in arrival order, one at a time.
    """
    c = [wcets[t.id] for t in spec.tasks]
    step = math.gcd(*c, *(a for seq in tc.arrivals.values() for a in seq))
    queues = {t.id: [] for t in spec.tasks}
    ends = {t.id: [] for t in spec.tasks}
    arrivals = sorted((a, t.id) for t in spec.tasks for a in tc.arrivals[t.id])
    left = {t.id: c[i] for i, t in enumerate(spec.tasks)}
    prio = {t.id: t.priority for t in spec.tasks}
    pos, now, total = 0, 0, len(arrivals)
    done = 0
    while done < total:
        while pos < total and arrivals[pos][0] <= now:
            queues[arrivals[pos][1]].append(arrivals[pos][0])
            pos += 1
        ready = [tid for tid, q in queues.items() if q]
        if ready:
            tid = max(ready, key=lambda x: prio[x])
            left[tid] -= step
            if left[tid] == 0:
                ends[tid].append(now + step)
                queues[tid].pop(0)
                left[tid] = wcets[tid]
                done += 1
        now += step
    return ends


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, repeated in the terminal summary
VERDICTS = []


@pytest.fixture
def verdict(capsys):
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        VERDICTS.append((number, line))
        with capsys.disabled():
            print("\n" + line, flush=True)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)
