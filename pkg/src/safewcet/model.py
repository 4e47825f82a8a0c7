"""Task, partition and system descriptions plus their JSON file format.

Times are integer units of ``SystemSpec.resolution`` milliseconds (see
:mod:`safewcet.timebase`).  A point WCET is a degenerate range with
``wcet_min == wcet_max``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from decimal import Decimal
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import jsonschema

from .timebase import DEFAULT_RESOLUTION, TimeError, format_ms, to_ms, to_units

PERIODIC = "periodic"
APERIODIC = "aperiodic"

PRIORITY = "priority"
FIFO = "fifo"
ROUND_ROBIN = "round_robin"
POLICIES = (PRIORITY, FIFO, ROUND_ROBIN)


class SystemFormatError(ValueError):
    """The system file cannot be parsed."""


class ValidationError(ValueError):
    """A system description violates a model invariant."""

    def __init__(self, message: str, task_id: Optional[str] = None):
        self.task_id = task_id
        prefix = f"task {task_id}: " if task_id is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Task:
    id: str
    kind: str
    wcet_min: int
    wcet_max: int
    deadline: int
    priority: int
    partition: str
    period: Optional[int] = None
    offset: int = 0
    min_interarrival: Optional[int] = None
    max_interarrival: Optional[int] = None
    policy: str = PRIORITY
    m: int = 0
    k: int = 1
    core: Optional[int] = None

    @property
    def periodic(self) -> bool:
        return self.kind == PERIODIC

    @property
    def has_range(self) -> bool:
        return self.wcet_min < self.wcet_max

    def validate(self) -> None:
        tid = self.id
        if self.kind not in (PERIODIC, APERIODIC):
            raise ValidationError(f"unknown kind {self.kind!r}", tid)
        if self.policy not in POLICIES:
            raise ValidationError(f"unknown policy {self.policy!r}", tid)
        if self.wcet_min <= 0:
            raise ValidationError("minimum WCET must be positive", tid)
        if self.wcet_min > self.wcet_max:
            raise ValidationError("minimum WCET exceeds maximum WCET", tid)
        if self.deadline < self.wcet_max:
            raise ValidationError("deadline < max WCET", tid)
        if not 0 <= self.m < self.k:
            raise ValidationError(f"(m, K) = ({self.m}, {self.k}) violates 0 <= m < K", tid)
        if self.periodic:
            if self.period is None or self.period <= 0:
                raise ValidationError("periodic task needs a positive period", tid)
            if self.offset < 0:
                raise ValidationError("offset must be non-negative", tid)
            if self.min_interarrival is not None or self.max_interarrival is not None:
                raise ValidationError("periodic task cannot have an inter-arrival range", tid)
        else:
            lo, hi = self.min_interarrival, self.max_interarrival
            if lo is None or hi is None or not 0 < lo <= hi:
                raise ValidationError("aperiodic task needs 0 < T_min <= T_max", tid)
            if self.period is not None:
                raise ValidationError("aperiodic task cannot have a period", tid)
            if self.offset != 0:
                raise ValidationError("aperiodic task cannot have an offset", tid)


@dataclass(frozen=True)
class PartitionSpec:
    id: str
    budget_percent: Decimal


@dataclass(frozen=True)
class ContextSwitchRanges:
    """Inclusive [min, max] unit ranges of start-up, exit and IPI times."""

    startup: Tuple[int, int] = (0, 0)
    exit: Tuple[int, int] = (0, 0)
    ipi: Tuple[int, int] = (0, 0)

    def validate(self) -> None:
        for name in ("startup", "exit", "ipi"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValidationError(f"context switch range {name} = [{lo}, {hi}] is invalid")


@dataclass(frozen=True)
class SchedulerConfig:
    partition_window: int = 100_000
    rr_timeslice: int = 4_000
    tick: int = 1_000


@dataclass(frozen=True)
class SystemSpec:
    tasks: Tuple[Task, ...]
    partitions: Tuple[PartitionSpec, ...]
    num_cores: int = 1
    ctx: ContextSwitchRanges = field(default_factory=ContextSwitchRanges)
    sched: SchedulerConfig = field(default_factory=SchedulerConfig)
    sim_horizon: Optional[int] = None
    target_tasks: Tuple[str, ...] = ()
    resolution: Decimal = DEFAULT_RESOLUTION

    def __post_init__(self) -> None:
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "partitions", tuple(self.partitions))
        if not self.target_tasks:
            object.__setattr__(self, "target_tasks", tuple(t.id for t in self.tasks))
        else:
            object.__setattr__(self, "target_tasks", tuple(self.target_tasks))
        if self.sim_horizon is None:
            object.__setattr__(self, "sim_horizon", compute_sim_horizon(self))

    @cached_property
    def task_index(self) -> Dict[str, int]:
        return {t.id: i for i, t in enumerate(self.tasks)}

    def task(self, task_id: str) -> Task:
        try:
            return self.tasks[self.task_index[task_id]]
        except KeyError:
            raise KeyError(f"unknown task id {task_id!r}") from None

    @property
    def range_tasks(self) -> List[Task]:
        """Tasks whose WCET is a proper range; these are the learning features."""
        return [t for t in self.tasks if t.has_range]

    @property
    def aperiodic_tasks(self) -> List[Task]:
        return [t for t in self.tasks if not t.periodic]

    def units(self, value: Any) -> int:
        return to_units(value, self.resolution)

    def ms(self, units: int) -> float:
        return to_ms(units, self.resolution)

    def with_tasks(self, tasks: Sequence[Task], **changes: Any) -> "SystemSpec":
        return replace(self, tasks=tuple(tasks), **changes)

    def with_constraint(self, m: int, k: Optional[int] = None, task_ids: Optional[Sequence[str]] = None) -> "SystemSpec":
        """Copy with the (m, K) constraint replaced on ``task_ids`` (default: all tasks)."""
        ids = set(task_ids) if task_ids is not None else {t.id for t in self.tasks}
        tasks = [replace(t, m=m, k=k if k is not None else t.k) if t.id in ids else t for t in self.tasks]
        return replace(self, tasks=tuple(tasks))

    def validate(self) -> "SystemSpec":
        if self.num_cores < 1:
            raise ValidationError("number of cores must be positive")
        if not self.tasks:
            raise ValidationError("system has no tasks")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValidationError("task ids are not unique")
        self.ctx.validate()
        for t in self.tasks:
            t.validate()
            if t.core is not None and not 0 <= t.core < self.num_cores:
                raise ValidationError(f"core affinity {t.core} outside 0..{self.num_cores - 1}", t.id)

        by_priority: Dict[int, List[Task]] = {}
        for t in self.tasks:
            by_priority.setdefault(t.priority, []).append(t)
        for prio, group in by_priority.items():
            if len(group) > 1:
                policies = {t.policy for t in group}
                if len(policies) != 1 or policies & {PRIORITY}:
                    raise ValidationError(
                        f"priority {prio} is shared by tasks that are not a FIFO or round-robin group",
                        group[1].id,
                    )

        pids = [p.id for p in self.partitions]
        if not pids or len(set(pids)) != len(pids):
            raise ValidationError("partition ids must be non-empty and unique")
        for p in self.partitions:
            if not 0 < p.budget_percent <= 100:
                raise ValidationError(f"partition {p.id} budget must be in (0, 100]")
        if sum(p.budget_percent for p in self.partitions) != 100:
            raise ValidationError("partition budgets must sum to 100")
        used = {t.partition for t in self.tasks}
        for t in self.tasks:
            if t.partition not in pids:
                raise ValidationError(f"unknown partition {t.partition!r}", t.id)
        for pid in pids:
            if pid not in used:
                raise ValidationError(f"partition {pid} has no task")

        for tid in self.target_tasks:
            if tid not in self.task_index:
                raise ValidationError(f"unknown target task {tid!r}")
        s = self.sched
        if s.partition_window <= 0 or s.rr_timeslice <= 0 or s.tick <= 0:
            raise ValidationError("scheduler window, timeslice and tick must be positive")
        if self.sim_horizon is None or self.sim_horizon <= 0:
            raise ValidationError("simulation horizon must be positive")
        return self


def compute_sim_horizon(spec: SystemSpec) -> int:
    """LCM of the periods, stretched to the largest maximum inter-arrival time.

    Both are in resolution units, so the LCM is exact.
    """
    periods = [t.period for t in spec.tasks if t.periodic and t.period]
    horizon = math.lcm(*periods) if periods else 0
    aperiodic = [t.max_interarrival for t in spec.tasks if not t.periodic and t.max_interarrival]
    if aperiodic:
        horizon = max(horizon, max(aperiodic))
    return horizon


# ---------------------------------------------------------------------------
# file format

_SCHEMA_NAME = "system.schema.json"


def system_schema() -> Dict[str, Any]:
    text = resources.files("safewcet").joinpath("schemas", _SCHEMA_NAME).read_text()
    return json.loads(text)


def _pair(raw: Sequence[Any], res: Decimal) -> Tuple[int, int]:
    return to_units(raw[0], res), to_units(raw[1], res)


def system_from_dict(doc: Dict[str, Any]) -> SystemSpec:
    """Build and validate a :class:`SystemSpec` from a parsed JSON document."""
    try:
        jsonschema.validate(doc, system_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise SystemFormatError(f"{path or '<root>'}: {exc.message}") from None

    try:
        res = Decimal(doc.get("resolution", str(DEFAULT_RESOLUTION)))
        tasks = []
        for raw in doc["tasks"]:
            cmin, cmax = _pair(raw["wcet"], res)
            if raw["kind"] == PERIODIC:
                period = to_units(raw["period"], res)
                inter = (None, None)
                default_deadline = period
            else:
                period = None
                inter = _pair(raw["interarrival"], res)
                default_deadline = inter[0]
            m, k = raw.get("constraint", [0, 1])
            tasks.append(
                Task(
                    id=raw["id"],
                    kind=raw["kind"],
                    wcet_min=cmin,
                    wcet_max=cmax,
                    deadline=to_units(raw["deadline"], res) if "deadline" in raw else default_deadline,
                    priority=raw["priority"],
                    partition=raw["partition"],
                    period=period,
                    offset=to_units(raw.get("offset", "0"), res),
                    min_interarrival=inter[0],
                    max_interarrival=inter[1],
                    policy=raw.get("policy", PRIORITY),
                    m=m,
                    k=k,
                    core=raw.get("core"),
                )
            )
        partitions = [PartitionSpec(p["id"], Decimal(p["budget_percent"])) for p in doc["partitions"]]
        cs = doc.get("context_switch", {})
        ctx = ContextSwitchRanges(
            startup=_pair(cs.get("startup", ["0", "0"]), res),
            exit=_pair(cs.get("exit", ["0", "0"]), res),
            ipi=_pair(cs.get("ipi", ["0", "0"]), res),
        )
        sc = doc.get("scheduler", {})
        defaults = {"partition_window": "100", "rr_timeslice": "4", "tick": "1"}
        sched = SchedulerConfig(**{key: to_units(sc.get(key, dv), res) for key, dv in defaults.items()})
        horizon = doc.get("sim_horizon")
        spec = SystemSpec(
            tasks=tuple(tasks),
            partitions=tuple(partitions),
            num_cores=doc["cores"],
            ctx=ctx,
            sched=sched,
            sim_horizon=to_units(horizon, res) if horizon is not None else None,
            target_tasks=tuple(doc.get("target_tasks", ())),
            resolution=res,
        )
    except TimeError as exc:
        raise SystemFormatError(str(exc)) from None
    return spec.validate()


def system_to_dict(spec: SystemSpec) -> Dict[str, Any]:
    res = spec.resolution
    f = lambda u: format_ms(u, res)  # noqa: E731
    tasks = []
    for t in spec.tasks:
        raw: Dict[str, Any] = {"id": t.id, "kind": t.kind}
        if t.periodic:
            raw["period"] = f(t.period)
            raw["offset"] = f(t.offset)
        else:
            raw["interarrival"] = [f(t.min_interarrival), f(t.max_interarrival)]
        raw["wcet"] = [f(t.wcet_min), f(t.wcet_max)]
        raw["deadline"] = f(t.deadline)
        raw["priority"] = t.priority
        raw["policy"] = t.policy
        raw["constraint"] = [t.m, t.k]
        raw["partition"] = t.partition
        if t.core is not None:
            raw["core"] = t.core
        tasks.append(raw)
    return {
        "resolution": str(res),
        "cores": spec.num_cores,
        "context_switch": {
            "startup": [f(v) for v in spec.ctx.startup],
            "exit": [f(v) for v in spec.ctx.exit],
            "ipi": [f(v) for v in spec.ctx.ipi],
        },
        "scheduler": {
            "partition_window": f(spec.sched.partition_window),
            "rr_timeslice": f(spec.sched.rr_timeslice),
            "tick": f(spec.sched.tick),
        },
        "partitions": [{"id": p.id, "budget_percent": str(p.budget_percent)} for p in spec.partitions],
        "tasks": tasks,
        "target_tasks": list(spec.target_tasks),
        "sim_horizon": f(spec.sim_horizon),
    }


def dumps_system(spec: SystemSpec) -> str:
    return json.dumps(system_to_dict(spec), indent=2) + "\n"


def save_system(spec: SystemSpec, path: "str | Path") -> None:
    Path(path).write_text(dumps_system(spec))


def load_system(path: "str | Path") -> SystemSpec:
    """Read and validate a system description file.

    Raises:
        FileNotFoundError: the file does not exist.
        SystemFormatError: the file is not valid JSON or does not match the schema.
        ValidationError: a model invariant is violated.
    """
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SystemFormatError(f"{path}: {exc}") from None
    return system_from_dict(doc)
