"""
From stress tests to a safe WCET border
=======================================

A small synthetic system goes through the evolutionary search, the
logistic border is learned from the labeled runs, and the resulting safe
box is checked by plain random simulation.
"""

import sys
import warnings

from safewcet.evaluation import empirical_probability, hyperbox_volume
from safewcet.learning import LearnParams, learn
from safewcet.search import SearchParams, nsga2_search
from safewcet.synthetic import GenConfig, generate_system

warnings.simplefilter("ignore", RuntimeWarning)
iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 20

# ten tasks, three of them with uncertain WCETs, hard deadlines everywhere
spec = generate_system(GenConfig(n=10, omega=3, lam=None, nw=10, m=0, seed=1, horizon=400.0, t_max=100.0))
for t in spec.range_tasks:
    print(f"{t.id}: WCET in [{spec.ms(t.wcet_min)}, {spec.ms(t.wcet_max)}] ms, deadline {spec.ms(t.deadline)} ms")

# search: each generation evaluates ten test cases with five random WCET draws each
result = nsga2_search(spec, SearchParams(np=10, ns=5, iterations=iterations), seed=0)
data = result.dataset
print(f"{len(data)} labeled runs, {data.unsafe.mean():.1%} unsafe")
best = result.best_by_fd(1)[0]
print("most stressful test case", best.id, "fd", round(best.fd, 3), "fc", round(best.fc, 3))

# learning: feature reduction, stepwise logistic fit, then a few refinement rounds
tcs = [(ind.id, ind.tc) for ind in result.best_by_fd(5)]
border, training = learn(spec, data, tcs, LearnParams(updates=3, samples=30, test_cases=5), seed=0)
print("features", border.features, "p_s", round(border.p_s, 4), "precision", round(border.precision, 4))
m = border.model
print("logit p =", " + ".join(f"{c:.4g}*{n or '1'}" for c, n, keep in zip(m.coef, m.term_names, m.selected) if keep))

box = border.safe_box(spec)
print("safe upper WCETs (ms):", {k: spec.ms(v) for k, v in box.items()})
print("volume", hyperbox_volume(box, spec))

# independent check: random test cases with WCETs drawn inside the box
check = empirical_probability(spec, box, runs=300, seed=1)
print(f"empirical violation rate inside the box: {check.probability:.4f} (model p_s {border.p_s:.4f})")
