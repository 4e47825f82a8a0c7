"""
Against random search, and how the runtime grows
================================================

A handful of desk-scale runs compare the learned box with the largest safe
box random search finds under the same labeling budget.  The second half
times the pipeline as the system grows.
"""

import sys
import warnings

import numpy as np

from safewcet.evaluation import compare
from safewcet.experiments import comparison_runs, scaling_runtime

warnings.simplefilter("ignore", RuntimeWarning)
runs = int(sys.argv[1]) if len(sys.argv) > 1 else 2

records = comparison_runs(ms=(0, 2), runs=runs, log=print)
for m in (0, 2):
    ours = [r.sweak_volume for r in records if r.m == m]
    base = [r.baseline_volume for r in records if r.m == m]
    c = compare(ours, base)
    print(f"m={m}: median {np.median(ours):.4g} vs {np.median(base):.4g}, A12 {c.a12:.2f}, p {c.p_value:.3g}")

# runtime against task count and against the number of uncertain WCETs
print("seconds by n:", scaling_runtime("n", [5, 15, 25], repeats=1))
print("seconds by omega:", scaling_runtime("omega", [1, 3, 5], repeats=1))
