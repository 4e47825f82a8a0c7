import json
from decimal import Decimal
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit, logit

from conftest import MS, periodic, system
from safewcet.dataset import LabeledDataset
from safewcet.learning import (
    LearnParams,
    LearningError,
    RsmModel,
    SafeBorderModel,
    best_size_point,
    border_weights,
    contour_grid,
    design_matrix,
    distance_sample,
    feature_matrix,
    first_upcrossing,
    fit_rsm_logit,
    full_terms,
    irls,
    learn,
    prune_by_intercepts,
    reduce_features,
    threshold_no_false_negative,
    threshold_no_false_positive,
)
from safewcet.search import SearchParams, nsga2_search


def _model(features, coef):
    return RsmModel(tuple(features), np.asarray(coef, float), tuple(True for _ in coef))


def two_task_spec():
    # unsafe exactly when C_l > 6 ms; h runs alone on the other core and is noise.
    # A 0.1 ms grid keeps the number of distinct WCET values small.
    u = 10
    return system(
        [periodic("h", 10 * u, 2 * u, 3, cmax=7 * u, core=0),
         periodic("f", 10 * u, 4 * u, 2, core=1),
         periodic("l", 10 * u, 2 * u, 1, cmax=8 * u, core=1)],
        cores=2, resolution=Decimal("0.1"),
    )


@pytest.fixture(scope="module")
def learned():
    spec = two_task_spec()
    res = nsga2_search(spec, SearchParams(np=4, ns=25, iterations=5), seed=2)
    tcs = [(ind.id, ind.tc) for ind in res.best_by_fd(2)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        border, data = learn(spec, res.dataset, tcs, LearnParams(updates=5, samples=20, trees=30, test_cases=2, target_precision=1.0), seed=4)
    return spec, res, border, data


# ---------------------------------------------------------------------------
# feature reduction

def test_reduce_features_finds_the_informative_column(rng):
    X = rng.integers(1000, 5000, size=(600, 3))
    unsafe = X[:, 1] > np.median(X[:, 1])
    ds = LabeledDataset(("a", "b", "c"), X, unsafe)
    assert reduce_features(ds, trees=50, seed=1) == ("b",)


def test_reduce_features_keeps_one_on_noise(rng):
    X = rng.integers(1000, 5000, size=(200, 4))
    ds = LabeledDataset(("a", "b", "c", "d"), X, rng.random(200) < 0.5)
    assert len(reduce_features(ds, trees=20, seed=1, threshold=1.0)) == 1


def test_reduce_features_rejects_single_label(rng):
    ds = LabeledDataset(("a",), rng.integers(1, 9, size=(10, 1)), np.zeros(10, bool))
    with pytest.raises(LearningError, match="degenerate labels"):
        reduce_features(ds)


# ---------------------------------------------------------------------------
# RSM logistic fit

@pytest.mark.parametrize("d", [1, 2, 3, 5, 25])
def test_full_term_count(d):
    assert len(full_terms(d)) == 1 + d + d + d * (d - 1) // 2


def test_zero_polynomial_gives_half():
    m = _model(["a", "b"], np.zeros(6))
    assert m.predict([[3.0, 4.0]])[0] == 0.5


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.lists(st.floats(0, 20), min_size=2, max_size=2))
def test_logit_round_trip(coef, x):
    m = _model(["a", "b"], coef)
    p = m.predict([x])[0]
    assert 0 < p < 1 or abs(m.logit([x])[0]) > 30
    direct = coef[0] + coef[1] * x[0] + coef[2] * x[1] + coef[3] * x[0] ** 2 + coef[4] * x[1] ** 2 + coef[5] * x[0] * x[1]
    assert m.logit([x])[0] == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_irls_matches_statsmodels(rng):
    sm = pytest.importorskip("statsmodels.api")
    X = rng.normal(size=(800, 2))
    Z = design_matrix(X, full_terms(2))
    y = (rng.random(800) < expit(0.3 + X[:, 0] - 0.5 * X[:, 1] + 0.4 * X[:, 0] * X[:, 1])).astype(float)
    ours = irls(Z, y)
    ref = sm.Logit(y, Z).fit(disp=0, tol=1e-12, maxiter=200)
    assert ours.converged
    assert np.allclose(ours.beta, ref.params, atol=1e-6)
    assert ours.loglik == pytest.approx(ref.llf, rel=1e-9)


def test_recovers_one_dimensional_model(rng):
    v = rng.uniform(-1, 4, 10_000)
    y = rng.random(v.size) < expit(-3 + 2 * v)
    m = fit_rsm_logit(v[:, None], y, ["v"])
    assert m.coef == pytest.approx([-3, 2, 0], abs=0.2)


def test_recovers_two_dimensional_model(rng):
    X = rng.uniform(-2, 2, size=(10_000, 2))
    truth = [0.5, 1.5, -1.0, 0.0, 0.0, 0.8]
    y = rng.random(len(X)) < expit(design_matrix(X, full_terms(2)) @ truth)
    m = fit_rsm_logit(X, y, ["a", "b"])
    assert m.coef == pytest.approx(truth, abs=0.2)


def test_aic_descent_is_monotone(rng):
    X = rng.uniform(0, 5, size=(2000, 3))
    y = rng.random(len(X)) < expit(-4 + X[:, 0] + 0.2 * X[:, 1])
    m = fit_rsm_logit(X, y, ["a", "b", "c"])
    assert len(m.aic_trace) > 1, "some useless terms should go"
    assert all(b < a for a, b in zip(m.aic_trace, m.aic_trace[1:]))
    assert m.selected[0], "the intercept is never removed"


def test_separable_data_falls_back_to_ridge():
    v = np.linspace(0, 10, 50)
    with pytest.warns(RuntimeWarning):
        m = fit_rsm_logit(v[:, None], v > 5, ["v"], stepwise=False)
    assert m.ridge
    p = m.predict(v[:, None])
    assert np.all(p[v > 5] > 0.5) and np.all(p[v < 5] < 0.5)


def test_fit_rejects_one_label():
    with pytest.raises(LearningError):
        fit_rsm_logit(np.ones((4, 1)), np.zeros(4), ["v"])


# ---------------------------------------------------------------------------
# thresholds

def brute_p_u(p, unsafe):
    """Smallest candidate threshold whose upper set holds no safe instance."""
    cands = sorted({np.nextafter(x, np.inf) for x in p} | set(p))
    ok = [c for c in cands if not np.any((p >= c) & ~unsafe)]
    return min(ok)


def brute_p_s(p, unsafe):
    cands = sorted(set(p) | {1.0})
    ok = [c for c in cands if not np.any((p < c) & unsafe)]
    return max(ok)


def test_threshold_examples():
    p = np.array([0.1, 0.6, 0.7, 0.9])
    unsafe = np.array([False, False, True, True])
    assert threshold_no_false_negative(p, unsafe).value == np.nextafter(0.6, 1)
    assert threshold_no_false_positive(p, unsafe).value == 0.7


def test_threshold_degenerate_case():
    t = threshold_no_false_negative(np.array([0.2, 0.9, 0.5]), np.array([True, False, False]))
    assert t.degenerate and t.value == 0.9999


@given(st.lists(st.tuples(st.floats(0.001, 0.999), st.booleans()), min_size=2, max_size=40))
def test_thresholds_match_brute_force(rows):
    p = np.array([r[0] for r in rows])
    unsafe = np.array([r[1] for r in rows])
    if unsafe.all() or not unsafe.any():
        return
    pu = threshold_no_false_negative(p, unsafe)
    if not pu.degenerate:
        assert pu.value == min(brute_p_u(p, unsafe), max(brute_p_u(p, unsafe), 0.9999)) or pu.value == brute_p_u(p, unsafe)
    assert not np.any((p >= pu.value) & ~unsafe)
    ps = threshold_no_false_positive(p, unsafe)
    assert ps.value == brute_p_s(p, unsafe)
    assert not np.any((p < ps.value) & unsafe)


# ---------------------------------------------------------------------------
# pruning

def test_first_upcrossing_on_line_and_parabola():
    assert first_upcrossing(0, 2, 0, 1, 0, 5) == pytest.approx(0.5)
    assert first_upcrossing(1, 0, 0, 4, 0, 5) == pytest.approx(2.0)
    assert first_upcrossing(0, 0, 0, 1, 0, 5) is None
    assert first_upcrossing(-1, 0, 0, 1, -5, 5) is None


def test_prune_inverts_monotone_model():
    spec = system([periodic("a", 20 * MS, 5 * MS, 1, cmax=10 * MS)])
    p_u = 0.9
    # logit = 3 (v - 7.25) + logit(p_u): crosses p_u at exactly 7.25 ms
    m = _model(["a"], [logit(p_u) - 3 * 7.25, 3.0, 0.0])
    a, b, c = m.axis_quadratic(0, np.array([5.0]))
    t = first_upcrossing(a, b, c, logit(p_u), 0.0, 5.0)
    assert 5.0 + t == pytest.approx(7.25, abs=1e-6 * 5)
    X = np.array([[7000], [7250], [7251], [9000]])
    ds = LabeledDataset(("a",), X, [False, False, True, True])
    ranges, pruned = prune_by_intercepts(m, p_u, ds, spec)
    assert ranges["a"][1] in (7249, 7250)
    assert len(pruned) == 2 and pruned.wcets.max() <= ranges["a"][1]


def test_prune_without_dependence_keeps_range():
    spec = system([periodic("a", 20 * MS, 5 * MS, 1, cmax=10 * MS)])
    m = _model(["a"], [-1.0, 0.0, 0.0])
    ranges, pruned = prune_by_intercepts(m, 0.9, LabeledDataset(("a",), [[6000]], [True]), spec)
    assert ranges["a"] == (5 * MS, 10 * MS) and len(pruned) == 1


# ---------------------------------------------------------------------------
# distance sampling

def test_border_weights():
    m = _model(["a"], [-5.0, 1.0, 0.0])
    w = border_weights(m, np.array([[5.0], [6.0], [7.0], [3.0]]), 0.5)
    assert w[0] == 1.0
    assert w[0] > w[1] > w[2]
    assert w[3] == pytest.approx(w[2])


def test_distance_sample_concentrates_near_border():
    m = _model(["a", "b"], [-8.0, 1.0, 1.0, 0, 0, 0])
    ranges = {"a": (0, 10_000), "b": (0, 10_000)}
    better = 0
    for s in range(30):
        rng = np.random.default_rng(s)
        pts = distance_sample(m, 0.5, ranges, 50, rng)
        assert pts.shape == (50, 2) and pts.min() >= 0 and pts.max() <= 10_000
        pool = np.random.default_rng(1000 + s).integers(0, 10_001, size=(500, 2))
        near = np.mean(np.abs(m.predict(pts * 0.001) - 0.5))
        raw = np.mean(np.abs(m.predict(pool * 0.001) - 0.5))
        better += near < raw
    assert better == 30


# ---------------------------------------------------------------------------
# best-size point

def grid_best_volume(model, p_s, ranges, n=1000):
    lo = np.array([ranges[f][0] for f in model.features]) * 0.001
    hi = np.array([ranges[f][1] for f in model.features]) * 0.001
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = model.predict(pts) < p_s
    vol = (pts[:, 0] - lo[0]) * (pts[:, 1] - lo[1])
    return vol[inside].max()


def test_best_point_symmetric_border():
    m = _model(["a", "b"], [-10.0, 1.0, 1.0, 0, 0, 0.1])
    ranges = {"a": (0, 10_000), "b": (0, 10_000)}
    bp = best_size_point(m, 0.5, ranges)
    assert bp.status == "ok"
    assert abs(bp.point[0] - bp.point[1]) < 1e-4
    assert abs(m.predict(bp.point)[0] - 0.5) <= 1e-6


@pytest.mark.parametrize("coef", [
    [-6.0, 0.8, 1.5, 0.0, 0.0, 0.0],
    [-5.0, 0.2, 0.4, 0.05, 0.1, 0.02],
    [-3.0, 1.0, -0.2, -0.05, 0.06, 0.1],
])
def test_best_point_beats_dense_grid(coef):
    m = _model(["a", "b"], coef)
    ranges = {"a": (0, 10_000), "b": (1000, 8000)}
    bp = best_size_point(m, 0.3, ranges, rng=np.random.default_rng(0))
    assert bp.status in ("ok", "box")
    assert abs(m.predict(bp.point)[0] - 0.3) <= 1e-6 or bp.status == "box"
    grid = grid_best_volume(m, 0.3, ranges)
    assert bp.volume >= 0.99 * grid
    assert bp.volume <= 1.01 * grid


def test_best_point_unconstrained_and_infeasible():
    ranges = {"a": (1000, 2000)}
    low = _model(["a"], [-20.0, 0.0, 0.0])
    assert best_size_point(low, 0.5, ranges).status == "unconstrained"
    high = _model(["a"], [20.0, 0.0, 0.0])
    assert best_size_point(high, 0.5, ranges).status == "infeasible"


# ---------------------------------------------------------------------------
# the whole learning stage

def check_learner_guarantees(border, data):
    p = border.model.predict(feature_matrix(data, border.features))
    assert not np.any((p < border.p_s) & data.unsafe), "an unsafe training row sits below p_s"
    assert not np.any((p >= border.p_u) & ~data.unsafe), "a safe training row sits at or above p_u"


def test_learn_guarantees_and_invariants(learned):
    spec, _, border, data = learned
    check_learner_guarantees(border, data)
    assert 0 < border.p_s <= border.p_u < 1
    for f, (lo, hi) in border.ranges.items():
        t = spec.task(f)
        assert t.wcet_min <= lo <= hi <= t.wcet_max
    if border.best_status == "ok":
        x = np.array([border.best_point[f] for f in border.features])
        assert abs(border.model.predict(x)[0] - border.p_s) <= 1e-6


def test_separable_labeler_reaches_full_precision(learned):
    _, _, border, _ = learned
    assert border.counts["updates"] <= 5
    assert border.precision == 1.0


def test_refinement_growth_bookkeeping():
    spec = two_task_spec()
    res = nsga2_search(spec, SearchParams(np=4, ns=10, iterations=3), seed=3)
    tcs = [(ind.id, ind.tc) for ind in res.best_by_fd(2)]
    params = LearnParams(updates=3, samples=7, trees=20, test_cases=2, target_precision=2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        border, data = learn(spec, res.dataset, tcs, params, seed=1)
    rows = [h["rows"] for h in border.history]
    assert border.counts["updates"] == 3
    assert all(b - a == 7 * 2 for a, b in zip(rows, rows[1:]))
    check_learner_guarantees(border, data)


def test_zero_updates_returns_initial_fit():
    spec = two_task_spec()
    res = nsga2_search(spec, SearchParams(np=4, ns=10, iterations=3), seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        border, data = learn(spec, res.dataset, [], LearnParams(updates=0, trees=20), seed=1)
    assert border.counts["updates"] == 0 and len(border.history) == 1
    assert border.counts["final"] == border.counts["pruned"]


def test_learning_is_deterministic(learned):
    spec, res, border, _ = learned
    tcs = [(ind.id, ind.tc) for ind in res.best_by_fd(2)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        again, _ = learn(spec, res.dataset, tcs, LearnParams(updates=5, samples=20, trees=30, test_cases=2, target_precision=1.0), seed=4)
    assert again.to_json(spec) == border.to_json(spec)


def test_border_json_round_trip(learned, tmp_path):
    spec, _, border, _ = learned
    path = tmp_path / "border.json"
    path.write_text(border.to_json(spec))
    back = SafeBorderModel.load(path, spec)
    assert back.to_json(spec) == border.to_json(spec)
    doc = json.loads(path.read_text())
    assert {"features", "model", "p_u", "p_s", "reduced_ranges", "best_size_point", "precision", "counts"} <= set(doc)


def test_contour_grid_shape(learned):
    spec, _, border, _ = learned
    text = contour_grid(border, spec, ("h", "l"), steps=5)
    lines = text.strip().splitlines()
    assert lines[0] == "h,l,p,safe" and len(lines) == 26
