"""Random-search baseline: fresh random test cases each generation, no
genetic operators, and the largest safe hyperbox read off the raw dataset."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .dataset import LabeledDataset
from .model import SystemSpec
from .search import (
    STAGE_EVAL,
    STAGE_RANDOM,
    SearchParams,
    cell_rng,
    evaluate_population,
    random_test_case,
)


def random_search(
    spec: SystemSpec,
    params: SearchParams = SearchParams(iterations=1500),
    seed: int = 0,
    jobs: int = 1,
) -> LabeledDataset:
    """``iterations * np * ns`` labeled rows from independently drawn test cases.

    Rows are labeled exactly as in the evolutionary search.
    """
    params.validate()
    columns = [t.id for t in spec.range_tasks]
    rows: list = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for gen in range(params.iterations):
            rng = cell_rng(seed, STAGE_RANDOM, gen)
            population = [random_test_case(spec, rng) for _ in range(params.np)]
            for ev in evaluate_population(spec, population, params.ns, seed, STAGE_EVAL, gen, jobs, pool):
                rows.extend(ev.rows)
    finally:
        if pool is not None:
            pool.shutdown()
    return LabeledDataset.from_rows(columns, rows, spec.resolution)


class NoSafeHyperbox(ValueError):
    pass


@dataclass
class Hyperbox:
    upper: Dict[str, int]
    volume: float
    row: int


def max_safe_hyperbox(dataset: LabeledDataset, cmin: Optional[Dict[str, int]] = None) -> Hyperbox:
    """Safe row ``W`` maximizing ``prod(W_i - C_min_i)`` with no unsafe row ``<= W`` coordinate-wise.

    ``cmin`` defaults to the column minima of the dataset.  Volume is in
    ``ms^d``.  Candidates are scanned by decreasing volume, so the scan stops
    at the first qualifying one.
    """
    W = dataset.wcets
    if cmin is None:
        lo = W.min(axis=0) if len(W) else np.zeros(len(dataset.columns), np.int64)
    else:
        lo = np.array([cmin[c] for c in dataset.columns], np.int64)
    res = float(dataset.resolution)
    safe_idx = np.flatnonzero(~dataset.unsafe)
    if safe_idx.size == 0:
        raise NoSafeHyperbox("no safe hyperbox: the dataset has no safe tuple")
    unsafe_pts = np.unique(W[dataset.unsafe], axis=0)
    vols = np.prod((W[safe_idx] - lo) * res, axis=1)
    order = safe_idx[np.lexsort((safe_idx, -vols))]
    bad: List[np.ndarray] = []
    for r in order:
        w = W[r]
        # dominance pruning: a box containing a known unsafe witness is out
        if any(np.all(b <= w) for b in bad):
            continue
        witness = unsafe_pts[np.all(unsafe_pts <= w, axis=1)] if len(unsafe_pts) else unsafe_pts
        if len(witness):
            bad.append(witness[0])
            continue
        vol = float(np.prod((w - lo) * res))
        return Hyperbox(dict(zip(dataset.columns, (int(v) for v in w))), vol, int(r))
    raise NoSafeHyperbox("no safe hyperbox: every safe tuple contains an unsafe one")
