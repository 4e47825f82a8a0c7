import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import MS, periodic, system
from safewcet.baseline import NoSafeHyperbox, max_safe_hyperbox, random_search
from safewcet.dataset import LabeledDataset
from safewcet.search import SearchParams, random_test_case
from safewcet.simulator import validate_test_case


def data(points, unsafe):
    cols = [f"c{i}" for i in range(len(points[0]))]
    return LabeledDataset(cols, np.array(points) * MS, np.array(unsafe, bool))


def brute_force_box(points, unsafe, lo):
    """Largest-volume safe point whose lower box holds no unsafe point (ties: first row)."""
    best = None
    for i, (p, u) in enumerate(zip(points, unsafe)):
        if u:
            continue
        if any(uu and all(q <= pp for q, pp in zip(pt, p)) for pt, uu in zip(points, unsafe)):
            continue
        vol = float(np.prod([pp - ll for pp, ll in zip(p, lo)]))
        if best is None or vol > best[0]:
            best = (vol, i)
    return best


def test_single_safe_tuple():
    box = max_safe_hyperbox(data([[3, 2]], [False]), {"c0": 0, "c1": 0})
    assert box.upper == {"c0": 3 * MS, "c1": 2 * MS}
    assert box.volume == pytest.approx(6.0)


def test_contained_unsafe_disqualifies():
    d = data([[3, 3], [2, 2], [4, 1]], [False, True, False])
    box = max_safe_hyperbox(d, {"c0": 0, "c1": 0})
    assert box.row == 2
    assert box.volume == pytest.approx(4.0)


def test_larger_volume_wins():
    d = data([[2, 3], [2, 4]], [False, False])
    assert max_safe_hyperbox(d, {"c0": 0, "c1": 0}).volume == pytest.approx(8.0)


def test_no_safe_box():
    with pytest.raises(NoSafeHyperbox):
        max_safe_hyperbox(data([[1, 1]], [True]))
    with pytest.raises(NoSafeHyperbox):
        max_safe_hyperbox(data([[2, 2], [1, 1]], [False, True]), {"c0": 0, "c1": 0})


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_matches_brute_force(seed, dims):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 25))
    pts = rng.integers(1, 8, size=(n, dims)).tolist()
    uns = (rng.random(n) < 0.4).tolist()
    lo = [0] * dims
    want = brute_force_box(pts, uns, lo)
    d = data(pts, uns)
    cmin = {c: 0 for c in d.columns}
    if want is None:
        with pytest.raises(NoSafeHyperbox):
            max_safe_hyperbox(d, cmin)
        return
    got = max_safe_hyperbox(d, cmin)
    assert got.volume == pytest.approx(want[0])
    # the returned box holds no unsafe tuple
    w = d.wcets[got.row]
    assert not np.any(np.all(d.wcets[d.unsafe] <= w, axis=1))


def _tiny():
    return system([periodic("a", 10 * MS, 3 * MS, 2, cmax=6 * MS), periodic("b", 20 * MS, 5 * MS, 1, cmax=9 * MS)],
                  ctx=((10, 30), (10, 30), (0, 0)), horizon=40 * MS)


@pytest.mark.parametrize("iterations", [1, 3])
def test_dataset_size_formula(iterations):
    params = SearchParams(np=4, ns=3, iterations=iterations)
    assert len(random_search(_tiny(), params, seed=1)) == iterations * 4 * 3


def test_random_search_is_deterministic():
    params = SearchParams(np=3, ns=2, iterations=2)
    a, b = random_search(_tiny(), params, seed=5), random_search(_tiny(), params, seed=5)
    assert a.to_csv() == b.to_csv()


def test_random_test_cases_validate():
    spec = _tiny()
    rng = np.random.default_rng(2)
    for _ in range(20):
        validate_test_case(spec, random_test_case(spec, rng))


def test_exhaustive_small_grid_against_brute_force():
    # every labeling of a 2x2 grid
    pts = [list(p) for p in itertools.product((1, 2), repeat=2)]
    for labels in itertools.product((False, True), repeat=4):
        want = brute_force_box(pts, labels, [0, 0])
        d = data(pts, labels)
        if want is None:
            with pytest.raises(NoSafeHyperbox):
                max_safe_hyperbox(d, {"c0": 0, "c1": 0})
        else:
            assert max_safe_hyperbox(d, {"c0": 0, "c1": 0}).volume == pytest.approx(want[0])
