"""Study subjects derived from a synthetic base system, plus the bundled fixtures.

The three variants exercise partition budgets, equal-priority policies and a
two-core platform with core affinities.
"""

from __future__ import annotations

from dataclasses import replace
from decimal import Decimal
from importlib import resources
from typing import List

import numpy as np

from .model import FIFO, ROUND_ROBIN, PartitionSpec, SystemSpec, load_system
from .synthetic import GenConfig, generate_system

FIXTURES = ("two_core", "partition", "policy", "multicore")


def base_config(seed: int = 0) -> GenConfig:
    """The 25-task single-core base system: half aperiodic, every task with a WCET range."""
    return GenConfig(
        n=25, u_target=0.9, t_min=10.0, t_max=1000.0, g=10.0, theta=0.0, gamma=0.5, mu=0.25,
        omega=25, lam=None, rho=1, m=0, k=10, nw=10, num_cores=1, seed=seed, horizon=5000.0,
    )


def _by_priority(spec: SystemSpec) -> List[int]:
    return sorted(range(len(spec.tasks)), key=lambda i: -spec.tasks[i].priority)


def partition_subject(base: SystemSpec, high: int = 19, budgets=(60, 40)) -> SystemSpec:
    """Two partitions; the ``high`` highest-priority tasks go to the first."""
    order = _by_priority(base)
    first = set(order[:high])
    parts = (PartitionSpec("P1", Decimal(budgets[0])), PartitionSpec("P2", Decimal(budgets[1])))
    tasks = [replace(t, partition="P1" if i in first else "P2") for i, t in enumerate(base.tasks)]
    return replace(base, tasks=tuple(tasks), partitions=parts).validate()


def policy_subject(base: SystemSpec, seed: int = 0) -> SystemSpec:
    """Two random task pairs share a priority; one pair is FIFO, the other round-robin."""
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(base.tasks), size=4, replace=False).tolist()
    tasks = list(base.tasks)
    for (a, b), policy in (((picks[0], picks[1]), FIFO), ((picks[2], picks[3]), ROUND_ROBIN)):
        prio = max(tasks[a].priority, tasks[b].priority)
        tasks[a] = replace(tasks[a], priority=prio, policy=policy)
        tasks[b] = replace(tasks[b], priority=prio, policy=policy)
    return replace(base, tasks=tuple(tasks)).validate()


def multicore_subject(base: SystemSpec, seed: int = 0, per_core: int = 8) -> SystemSpec:
    """Two cores, every WCET doubled, ``per_core`` tasks pinned to each core.

    A doubled maximum WCET is capped just below the deadline so the task
    stays valid.
    """
    rng = np.random.default_rng(seed)
    tasks = []
    for t in base.tasks:
        hi = min(2 * t.wcet_max, t.deadline)
        lo = min(2 * t.wcet_min, hi)
        tasks.append(replace(t, wcet_min=lo, wcet_max=hi))
    perm = rng.permutation(len(tasks)).tolist()
    for j, i in enumerate(perm[: 2 * per_core]):
        tasks[i] = replace(tasks[i], core=0 if j < per_core else 1)
    return replace(base, tasks=tuple(tasks), num_cores=2).validate()


def load_fixture(name: str) -> SystemSpec:
    """One of the bundled example systems by name (see ``FIXTURES``)."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    path = resources.files("safewcet").joinpath("fixtures", f"{name}.json")
    with resources.as_file(path) as p:
        return load_system(p)


def build_fixtures(seed: int = 0) -> dict:
    """Rebuild the three derived subjects from the base configuration."""
    base = generate_system(base_config(seed))
    return {
        "partition": partition_subject(base),
        "policy": policy_subject(base, seed),
        "multicore": multicore_subject(base, seed),
    }
