"""
Simulating a two-core schedule
==============================

Load the bundled four-task system, replay one test case and check the
weakly hard constraint of the lowest-priority task.
"""

import json
from importlib import resources

from safewcet.simulator import TestCase, check_schedulability, format_trace, max_consecutive_misses, simulate
from safewcet.subjects import load_fixture
from safewcet.timebase import to_units

spec = load_fixture("two_core")
for t in spec.tasks:
    print(t.id, t.kind, "wcet", spec.ms(t.wcet_min), "..", spec.ms(t.wcet_max), "prio", t.priority)

# the test case fixes arrivals and context switching times; WCETs are chosen separately
doc = json.loads(resources.files("safewcet").joinpath("fixtures", "two_core_trace.json").read_text())
tc = TestCase.from_dict(doc["test_case"], spec.resolution)
wcets = {k: to_units(v, spec.resolution) for k, v in doc["wcets"].items()}

scen = simulate(spec, tc, wcets)
print(format_trace(spec, scen))

# two misses in a row: too many for (1, 4), fine for (2, 4)
pattern = scen.mu_pattern(spec, "t4")
print("t4 miss pattern", pattern, "longest run", max_consecutive_misses(pattern)[0])
for m in (1, 2):
    verdict = check_schedulability(spec.with_constraint(m, 4), scen, ["t4"])
    print(f"(m, K) = ({m}, 4):", "satisfied" if verdict else f"violated from arrival {verdict.window_start}")
