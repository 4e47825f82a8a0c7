"""Safe WCET border inference from labeled simulation data.

The steps are feature reduction with a random forest, a second-order
response-surface logistic model trimmed by stepwise AIC, an imbalance
threshold that prunes the WCET ranges, and a refinement loop that samples near
the border.  The result is the border ``p(C) = p_s`` plus the point on it that
spans the largest safe hyperbox.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .dataset import LabeledDataset
from .model import SystemSpec
from .search import cell_rng
from .simulator import TestCase, check_schedulability, simulate
from .timebase import format_ms

STAGE_FOREST = 11
STAGE_SAMPLE = 12
STAGE_LABEL = 13
STAGE_FOLD = 14
STAGE_BEST = 15

P_CLAMP = 0.9999


class LearningError(ValueError):
    pass


# ---------------------------------------------------------------------------
# feature reduction

def reduce_features(
    dataset: LabeledDataset,
    trees: int = 100,
    depth: Optional[int] = None,
    threshold: Optional[float] = None,
    seed: int = 0,
    jobs: int = 1,
) -> Tuple[str, ...]:
    """Range tasks whose mean Gini importance exceeds ``threshold``.

    ``threshold`` defaults to the mean importance; the most important feature
    is kept when nothing passes.  Depth defaults to ``ceil(sqrt(|F|))``.
    """
    from sklearn.ensemble import RandomForestClassifier

    y = dataset.unsafe
    if y.all() or not y.any():
        raise LearningError("degenerate labels: the dataset holds a single class")
    nf = len(dataset.columns)
    if nf == 0:
        raise LearningError("dataset has no WCET range columns")
    forest = RandomForestClassifier(
        n_estimators=trees,
        criterion="gini",
        max_depth=depth or math.ceil(math.sqrt(nf)),
        random_state=int(cell_rng(seed, STAGE_FOREST).integers(2**31 - 1)),
        n_jobs=jobs,
    )
    forest.fit(dataset.X, y)
    imp = forest.feature_importances_
    cut = imp.mean() if threshold is None else threshold
    keep = [c for c, v in zip(dataset.columns, imp) if v > cut]
    if not keep:
        keep = [dataset.columns[int(np.argmax(imp))]]
    return tuple(keep)


# ---------------------------------------------------------------------------
# response surface logistic model

Term = Tuple[int, ...]


def full_terms(d: int) -> List[Term]:
    """Intercept, linear, quadratic and interaction terms over ``d`` variables."""
    terms: List[Term] = [()]
    terms += [(i,) for i in range(d)]
    terms += [(i, i) for i in range(d)]
    terms += list(itertools.combinations(range(d), 2))
    return terms


def design_matrix(X: np.ndarray, terms: Sequence[Term]) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    cols = [np.prod(X[:, list(t)], axis=1) if t else np.ones(len(X)) for t in terms]
    return np.column_stack(cols) if cols else np.zeros((len(X), 0))


def term_name(term: Term, features: Sequence[str]) -> str:
    if not term:
        return "1"
    if len(term) == 1:
        return features[term[0]]
    if term[0] == term[1]:
        return f"{features[term[0]]}^2"
    return f"{features[term[0]]}*{features[term[1]]}"


def _log_likelihood(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


@dataclass
class IrlsFit:
    beta: np.ndarray
    loglik: float
    converged: bool
    steps: int


def irls(
    Z: np.ndarray,
    y: np.ndarray,
    ridge: float = 0.0,
    beta0: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_steps: int = 100,
) -> IrlsFit:
    """Newton-Raphson for logistic regression, with step halving.

    ``ridge`` penalises every coefficient except the first (the intercept).
    Converged means the largest coefficient change fell below ``tol``.
    """
    n, k = Z.shape
    beta = np.zeros(k) if beta0 is None else beta0.astype(float).copy()
    pen = np.full(k, ridge)
    if k:
        pen[0] = 0.0

    def objective(b):
        eta = Z @ b
        return _log_likelihood(eta, y) - 0.5 * float(np.sum(pen * b * b)), eta

    obj, eta = objective(beta)
    converged = False
    step = 0
    for step in range(1, max_steps + 1):
        p = expit(eta)
        w = p * (1.0 - p)
        grad = Z.T @ (y - p) - pen * beta
        H = (Z * w[:, None]).T @ Z + np.diag(pen)
        try:
            delta = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(H, grad, rcond=None)[0]
        if not np.all(np.isfinite(delta)):
            break
        t = 1.0
        while True:
            cand = beta + t * delta
            cobj, ceta = objective(cand)
            if cobj >= obj - 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        change = float(np.max(np.abs(cand - beta))) if k else 0.0
        beta, obj, eta = cand, cobj, ceta
        if change < tol:
            converged = True
            break
    if converged and ridge == 0.0 and k:
        # a separated sample drives the estimates off to infinity; Newton then
        # stalls on a flat likelihood and only looks converged
        residual = float(np.max(np.abs(y - expit(eta)))) if n else 0.0
        converged = residual > 1e-6 and float(np.max(np.abs(beta))) < 1e3
    return IrlsFit(beta, _log_likelihood(eta, y), converged, step)


@dataclass(frozen=True)
class RsmModel:
    """Logistic model ``logit p = sum_t coef_t * term_t(x)`` in raw milliseconds.

    ``coef`` covers every term of the full second-order surface; ``selected``
    marks the terms that survived elimination in the standardized fit (a
    dropped standardized term can still leave raw lower-order terms).
    """

    features: Tuple[str, ...]
    coef: np.ndarray
    selected: Tuple[bool, ...]
    aic: float = float("nan")
    ridge: bool = False
    aic_trace: Tuple[float, ...] = ()

    @property
    def terms(self) -> List[Term]:
        return full_terms(len(self.features))

    @property
    def term_names(self) -> List[str]:
        return [term_name(t, self.features) for t in self.terms]

    def logit(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return design_matrix(X, self.terms) @ self.coef

    def predict(self, X) -> np.ndarray:
        return expit(self.logit(X))

    def axis_quadratic(self, i: int, base: np.ndarray) -> Tuple[float, float, float]:
        """``logit(base + t * e_i)`` as ``a t^2 + b t + c``."""
        return self.line_quadratic(base, np.eye(len(self.features))[i])

    def line_quadratic(self, origin: np.ndarray, direction: np.ndarray) -> Tuple[float, float, float]:
        """Coefficients of ``logit(origin + t * direction)`` as ``a t^2 + b t + c``."""
        a = b = 0.0
        c = 0.0
        o, d = np.asarray(origin, float), np.asarray(direction, float)
        for term, beta in zip(self.terms, self.coef):
            if beta == 0.0:
                continue
            if not term:
                c += beta
            elif len(term) == 1:
                i = term[0]
                b += beta * d[i]
                c += beta * o[i]
            else:
                i, j = term
                a += beta * d[i] * d[j]
                b += beta * (o[i] * d[j] + d[i] * o[j])
                c += beta * o[i] * o[j]
        return a, b, c

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "terms": self.term_names,
            "coefficients": [float(c) for c in self.coef],
            "selected": list(self.selected),
            "aic": self.aic,
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RsmModel":
        return cls(
            tuple(doc["features"]),
            np.asarray(doc["coefficients"], dtype=float),
            tuple(doc["selected"]),
            float(doc.get("aic", float("nan"))),
            bool(doc.get("ridge", False)),
        )


def _to_raw(beta_z: np.ndarray, terms: Sequence[Term], mean: np.ndarray, scale: np.ndarray, d: int) -> np.ndarray:
    """Expand a polynomial in standardized variables into raw-unit coefficients."""
    all_terms = full_terms(d)
    index = {t: k for k, t in enumerate(all_terms)}
    raw = np.zeros(len(all_terms))
    for term, b in zip(terms, beta_z):
        if not term:
            raw[index[()]] += b
        elif len(term) == 1:
            i = term[0]
            raw[index[(i,)]] += b / scale[i]
            raw[index[()]] -= b * mean[i] / scale[i]
        else:
            i, j = term
            f = b / (scale[i] * scale[j])
            raw[index[(i, j)]] += f
            raw[index[(i,)]] -= f * mean[j]
            raw[index[(j,)]] -= f * mean[i]
            raw[index[()]] += f * mean[i] * mean[j]
    return raw


def _aic(loglik: float, k: int) -> float:
    return 2.0 * k - 2.0 * loglik


def fit_rsm_logit(
    X: np.ndarray,
    y: np.ndarray,
    features: Sequence[str],
    stepwise: bool = True,
    ridge_fallback: float = 1e-6,
) -> RsmModel:
    """Fit the full second-order surface by IRLS, then drop terms by backward AIC.

    Columns are standardized for the fit only.  If the plain fit does not
    converge (perfect separation) every fit uses a ridge penalty of
    ``ridge_fallback`` and the model is flagged.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        raise LearningError("degenerate labels: need at least one instance of each label")
    d = X.shape[1]
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Zs = (X - mean) / scale
    terms = full_terms(d)
    Z = design_matrix(Zs, terms)

    fit = irls(Z, y)
    ridge = 0.0
    if not fit.converged:
        ridge = ridge_fallback
        fit = irls(Z, y, ridge=ridge, beta0=fit.beta)
        warnings.warn("perfect separation: fell back to a ridge-stabilised fit", RuntimeWarning)

    active = list(range(len(terms)))
    beta = fit.beta
    aic = _aic(fit.loglik, len(active))
    trace = [aic]
    while stepwise and len(active) > 1:
        best = None
        for pos in range(1, len(active)):
            cols = active[:pos] + active[pos + 1:]
            b0 = np.delete(beta, pos)
            f = irls(Z[:, cols], y, ridge=ridge, beta0=b0)
            a = _aic(f.loglik, len(cols))
            if best is None or a < best[0]:
                best = (a, cols, f.beta)
        if best[0] >= aic:
            break
        aic, active, beta = best
        trace.append(aic)

    kept = [terms[k] for k in active]
    raw = _to_raw(beta, kept, mean, scale, d)
    selected = tuple(k in active for k in range(len(terms)))
    return RsmModel(tuple(features), raw, selected, aic, ridge > 0, tuple(trace))


# ---------------------------------------------------------------------------
# thresholds and pruning

@dataclass(frozen=True)
class Threshold:
    value: float
    degenerate: bool = False


def threshold_no_false_negative(p: np.ndarray, unsafe: np.ndarray) -> Threshold:
    """Smallest probability above every safe instance, clamped to 0.9999 where that stays safe-free.

    Degenerate when no unsafe instance reaches it.
    """
    p = np.asarray(p, dtype=float)
    unsafe = np.asarray(unsafe, dtype=bool)
    safe_p = p[~unsafe]
    top = float(safe_p.max()) if safe_p.size else 0.0
    raw = float(np.nextafter(top, np.inf))
    value = min(raw, P_CLAMP) if P_CLAMP > top else raw
    degenerate = not bool(np.any(p[unsafe] >= value))
    if degenerate:
        value = max(value, P_CLAMP)
    return Threshold(value, degenerate)


def threshold_no_false_positive(p: np.ndarray, unsafe: np.ndarray) -> Threshold:
    """Largest threshold whose open sublevel set holds no unsafe instance."""
    p = np.asarray(p, dtype=float)
    unsafe = np.asarray(unsafe, dtype=bool)
    if not unsafe.any():
        return Threshold(P_CLAMP, True)
    return Threshold(float(p[unsafe].min()))


def first_upcrossing(a: float, b: float, c: float, level: float, lo: float, hi: float) -> Optional[float]:
    """Smallest ``x`` in ``[lo, hi]`` where ``a x^2 + b x + c`` reaches ``level`` from below.

    ``None`` when the polynomial stays below ``level`` on the interval.  The
    caller guarantees the polynomial is below ``level`` at ``lo``.
    """
    c = c - level
    if a == 0.0:
        roots = [] if b == 0.0 else [-c / b]
    else:
        disc = b * b - 4 * a * c
        if disc < 0:
            roots = []
        else:
            s = math.sqrt(disc)
            # numerically stable pair
            q = -0.5 * (b + math.copysign(s, b)) if b != 0 else -0.5 * s
            roots = [q / a, c / q] if q != 0 else [0.0]
    roots = sorted(r for r in roots if lo <= r <= hi)
    return roots[0] if roots else None


def prune_by_intercepts(
    model: RsmModel,
    p_u: float,
    dataset: LabeledDataset,
    spec: SystemSpec,
) -> Tuple[Dict[str, Tuple[int, int]], LabeledDataset]:
    """Reduced ranges ``[C_min, C']`` from the axis intercepts of ``p = p_u``.

    Along each feature axis, with the other features at their minimum WCETs,
    ``C'`` is the first point where the probability reaches ``p_u``; ``C_max``
    when it never does (or is already reached at ``C_min``).  Rows with any
    feature above its ``C'`` are dropped.
    """
    feats = model.features
    cmin = np.array([spec.ms(spec.task(f).wcet_min) for f in feats])
    cmax = np.array([spec.ms(spec.task(f).wcet_max) for f in feats])
    level = float(np.log(p_u) - np.log1p(-p_u))
    ranges: Dict[str, Tuple[int, int]] = {}
    for i, f in enumerate(feats):
        a, b, c = model.axis_quadratic(i, cmin)
        t = None if c >= level else first_upcrossing(a, b, c, level, 0.0, cmax[i] - cmin[i])
        x = None if t is None else cmin[i] + t
        task = spec.task(f)
        if x is None:
            ranges[f] = (task.wcet_min, task.wcet_max)
        else:
            # floor to the time grid so the reduced range stays inside the safe side
            units = int(math.floor(x / float(spec.resolution) + 1e-9))
            ranges[f] = (task.wcet_min, max(task.wcet_min, min(units, task.wcet_max)))
    keep = np.ones(len(dataset), dtype=bool)
    for f in feats:
        keep &= dataset.wcets[:, dataset.columns.index(f)] <= ranges[f][1]
    return ranges, dataset.subset(keep)


# ---------------------------------------------------------------------------
# sampling near the border

def border_weights(model: RsmModel, X: np.ndarray, p_s: float) -> np.ndarray:
    target = math.log(p_s) - math.log1p(-p_s)
    return np.exp(-np.abs(model.logit(X) - target))


def distance_sample(
    model: RsmModel,
    p_s: float,
    ranges: Dict[str, Tuple[int, int]],
    count: int,
    rng: np.random.Generator,
    resolution: float = 0.001,
) -> np.ndarray:
    """``count`` feature points (integer units) drawn near the border ``p = p_s``.

    Draws ``10 * count`` uniform candidates in ``ranges`` and keeps ``count``
    of them without replacement, with probability proportional to
    ``exp(-|logit p(x) - logit p_s|)``.
    """
    feats = model.features
    lo = np.array([ranges[f][0] for f in feats])
    hi = np.array([ranges[f][1] for f in feats])
    pool = rng.integers(lo, hi + 1, size=(10 * count, len(feats)))
    w = border_weights(model, pool * resolution, p_s)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        prob = None
    else:
        prob = w / total
        # choice without replacement needs at least `count` non-zero weights
        if np.count_nonzero(prob) < count:
            prob = (prob + 1e-300) / (prob + 1e-300).sum()
    idx = rng.choice(len(pool), size=count, replace=False, p=prob)
    return pool[np.sort(idx)]


# ---------------------------------------------------------------------------
# best-size point

@dataclass
class BestPoint:
    point: np.ndarray
    volume: float
    status: str


def _ray_hit(model: RsmModel, cmin, width, u, level) -> Tuple[np.ndarray, bool]:
    """First point on ``cmin + t * u * width`` reaching ``level`` before the ray leaves the box."""
    direction = u * width
    t_max = 1.0 / float(np.max(u))
    a, b, c = model.line_quadratic(cmin, direction)
    t = first_upcrossing(a, b, c, level, 0.0, t_max)
    if t is None:
        return cmin + t_max * direction, False
    return cmin + t * direction, True


def best_size_point(
    model: RsmModel,
    p_s: float,
    ranges: Dict[str, Tuple[int, int]],
    resolution: float = 0.001,
    starts: int = 20,
    rng: Optional[np.random.Generator] = None,
) -> BestPoint:
    """Point on ``p = p_s`` maximizing ``prod(C_i - C_min_i)`` inside ``ranges``.

    Candidate points are parametrized by a direction ``u`` in the simplex:
    each is the first border crossing of the ray from the minimum corner, so
    feasibility is exact.  The log volume is maximized over ``u`` from
    ``starts`` random directions (plus the box diagonal) with Nelder-Mead.
    Returns the box corner with status ``unconstrained`` when the corner is
    itself below ``p_s``, and the minimum corner with status ``infeasible``
    when that is already above it.
    """
    feats = model.features
    cmin = np.array([ranges[f][0] for f in feats], float) * resolution
    cmax = np.array([ranges[f][1] for f in feats], float) * resolution
    width = cmax - cmin
    level = math.log(p_s) - math.log1p(-p_s)
    if float(model.logit(cmax)[0]) < level:
        return BestPoint(cmax, float(np.prod(width)), "unconstrained")
    if float(model.logit(cmin)[0]) >= level or np.any(width <= 0):
        return BestPoint(cmin, 0.0, "infeasible")
    d = len(feats)
    rng = rng or np.random.default_rng(0)

    def point(z):
        u = np.exp(z - np.max(z))
        u /= u.sum()
        return _ray_hit(model, cmin, width, u, level)

    def neg_logvol(z):
        x, _ = point(z)
        gap = x - cmin
        if np.any(gap <= 0):
            return 1e12
        return -float(np.sum(np.log(gap)))

    if d == 1:
        x, _ = point(np.zeros(1))
        return BestPoint(x, float(x[0] - cmin[0]), "ok")

    inits = [np.zeros(d)] + [np.log(rng.dirichlet(np.ones(d))) for _ in range(starts)]
    best_z, best_f = None, math.inf
    for z0 in inits:
        res = minimize(neg_logvol, z0, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 400 * d})
        if res.fun < best_f:
            best_z, best_f = res.x, res.fun
    x, hit = point(best_z)
    return BestPoint(x, float(np.prod(x - cmin)), "ok" if hit else "box")


# ---------------------------------------------------------------------------
# border model and refinement

@dataclass
class SafeBorderModel:
    model: RsmModel
    p_u: float
    p_s: float
    ranges: Dict[str, Tuple[int, int]]
    best_point: Dict[str, float]
    best_status: str
    precision: float
    counts: Dict[str, int] = field(default_factory=dict)
    p_u_prune: float = float("nan")
    flags: List[str] = field(default_factory=list)
    history: List[dict] = field(default_factory=list)

    @property
    def features(self) -> Tuple[str, ...]:
        return self.model.features

    def safe_box(self, spec: SystemSpec) -> Dict[str, int]:
        """Upper WCET (units) per range task: the best point on features, ``C_max`` elsewhere."""
        box = {}
        for t in spec.range_tasks:
            if t.id in self.best_point:
                units = int(math.floor(self.best_point[t.id] / float(spec.resolution) + 1e-9))
                box[t.id] = max(t.wcet_min, min(units, t.wcet_max))
            else:
                box[t.id] = t.wcet_max
        return box

    def to_dict(self, spec: Optional[SystemSpec] = None) -> dict:
        res = spec.resolution if spec is not None else None
        fmt = (lambda v: format_ms(v, res)) if res is not None else (lambda v: v)
        doc = {
            "features": list(self.features),
            "model": self.model.to_dict(),
            "p_u": self.p_u,
            "p_u_prune": self.p_u_prune,
            "p_s": self.p_s,
            "reduced_ranges": {f: [fmt(lo), fmt(hi)] for f, (lo, hi) in self.ranges.items()},
            "best_size_point": {f: round(v, 9) for f, v in self.best_point.items()},
            "best_size_status": self.best_status,
            "precision": self.precision,
            "counts": dict(self.counts),
            "flags": list(self.flags),
            "history": list(self.history),
        }
        if spec is not None:
            doc["safe_box"] = {tid: format_ms(v, spec.resolution) for tid, v in self.safe_box(spec).items()}
        return doc

    def to_json(self, spec: Optional[SystemSpec] = None) -> str:
        return json.dumps(self.to_dict(spec), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict, spec: SystemSpec) -> "SafeBorderModel":
        ranges = {f: (spec.units(lo), spec.units(hi)) for f, (lo, hi) in doc["reduced_ranges"].items()}
        return cls(
            model=RsmModel.from_dict(doc["model"]),
            p_u=float(doc["p_u"]),
            p_s=float(doc["p_s"]),
            ranges=ranges,
            best_point={k: float(v) for k, v in doc["best_size_point"].items()},
            best_status=doc["best_size_status"],
            precision=float(doc["precision"]),
            counts=dict(doc.get("counts", {})),
            p_u_prune=float(doc.get("p_u_prune", float("nan"))),
            flags=list(doc.get("flags", [])),
            history=list(doc.get("history", [])),
        )

    @classmethod
    def load(cls, path: "str | Path", spec: SystemSpec) -> "SafeBorderModel":
        return cls.from_dict(json.loads(Path(path).read_text()), spec)


@dataclass
class LearnParams:
    updates: int = 100
    samples: int = 100
    kfold: int = 5
    target_precision: float = 0.99
    trees: int = 100
    test_cases: int = 10
    stepwise: bool = True
    importance_threshold: Optional[float] = None  # None: mean importance


def feature_matrix(dataset: LabeledDataset, features: Sequence[str]) -> np.ndarray:
    idx = [dataset.columns.index(f) for f in features]
    return dataset.X[:, idx]


def kfold_precision(
    dataset: LabeledDataset,
    model: RsmModel,
    k: int,
    rng: np.random.Generator,
) -> float:
    """Pooled precision of the predicted-safe region ``{p < p_s}`` under stratified k-fold.

    Each fold refits the coefficients on the term set already chosen for
    ``model`` and takes ``p_s`` from its training part.  Returns 0 when no
    held-out instance is predicted safe.
    """
    X = feature_matrix(dataset, model.features)
    y = dataset.unsafe
    folds = np.empty(len(y), dtype=int)
    for cls in (False, True):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % k
    terms = [t for t, s in zip(model.terms, model.selected) if s]
    tp = predicted = 0
    for f in range(k):
        train, test = folds != f, folds == f
        if not test.any() or y[train].all() or not y[train].any():
            continue
        mean = X[train].mean(axis=0)
        scale = X[train].std(axis=0)
        scale[scale == 0] = 1.0
        Z = design_matrix((X[train] - mean) / scale, terms)
        fit = irls(Z, y[train].astype(float))
        if not fit.converged:
            fit = irls(Z, y[train].astype(float), ridge=1e-6, beta0=fit.beta)
        raw = _to_raw(fit.beta, terms, mean, scale, X.shape[1])
        fm = RsmModel(model.features, raw, model.selected)
        p_s = threshold_no_false_positive(fm.predict(X[train]), y[train]).value
        pred_safe = fm.predict(X[test]) < p_s
        predicted += int(pred_safe.sum())
        tp += int((pred_safe & ~y[test]).sum())
    return tp / predicted if predicted else 0.0


def label_points(
    spec: SystemSpec,
    features: Sequence[str],
    points: np.ndarray,
    test_cases: Sequence[Tuple[str, TestCase]],
    seed: int,
    path: Tuple[int, ...],
) -> List[Tuple[List[int], bool, str, str]]:
    """Simulate every point against every test case; one dataset row per pair.

    Range tasks outside ``features`` get a WCET uniform over their full range.
    """
    pos = {f: j for j, f in enumerate(features)}
    range_ids = [t.id for t in spec.range_tasks]
    rows = []
    for pi, pt in enumerate(points):
        for ti, (tc_id, tc) in enumerate(test_cases):
            cell = (*path, pi, ti)
            rng = cell_rng(seed, *cell)
            w = []
            for t in spec.tasks:
                if t.id in pos:
                    w.append(int(pt[pos[t.id]]))
                elif t.has_range:
                    w.append(int(rng.integers(t.wcet_min, t.wcet_max + 1)))
                else:
                    w.append(t.wcet_min)
            scen = simulate(spec, tc, w)
            unsafe = not check_schedulability(spec, scen)
            wmap = dict(zip((t.id for t in spec.tasks), w))
            rows.append(([wmap[r] for r in range_ids], unsafe, tc_id, ":".join(map(str, (seed, *cell)))))
    return rows


def learn(
    spec: SystemSpec,
    dataset: LabeledDataset,
    test_cases: Sequence[Tuple[str, TestCase]],
    params: LearnParams = LearnParams(),
    seed: int = 0,
    jobs: int = 1,
) -> Tuple[SafeBorderModel, LabeledDataset]:
    """Full learning stage: reduce, fit, prune, refine and extract the best-size point.

    ``test_cases`` are the (id, test case) pairs used to label refinement
    samples.  Returns the border and the final training data.
    """
    res = float(spec.resolution)
    feats = reduce_features(dataset, trees=params.trees, threshold=params.importance_threshold, seed=seed, jobs=jobs)
    model0 = fit_rsm_logit(feature_matrix(dataset, feats), dataset.y, feats, params.stepwise)
    prune_thr = threshold_no_false_negative(model0.predict(feature_matrix(dataset, feats)), dataset.unsafe)
    ranges, data = prune_by_intercepts(model0, prune_thr.value, dataset, spec)
    flags = ["degenerate_p_u"] if prune_thr.degenerate else []
    if data.unsafe.all() or not data.unsafe.any():
        # separable data: the unsafe area held every unsafe row, nothing left to learn from
        ranges = {f: (spec.task(f).wcet_min, spec.task(f).wcet_max) for f in feats}
        data = dataset
        flags.append("prune_skipped")
    counts = {"initial": len(dataset), "pruned": len(data)}
    history: List[dict] = []

    update = 0
    while True:
        if data.unsafe.all() or not data.unsafe.any():
            raise LearningError(f"update {update}: pruned data holds a single class")
        model = fit_rsm_logit(feature_matrix(data, feats), data.y, feats, params.stepwise)
        p_train = model.predict(feature_matrix(data, feats))
        ps = threshold_no_false_positive(p_train, data.unsafe)
        precision = kfold_precision(data, model, params.kfold, cell_rng(seed, STAGE_FOLD, update))
        history.append({"update": update, "rows": len(data), "p_s": ps.value, "precision": precision})
        if update >= params.updates or precision >= params.target_precision:
            break
        pts = distance_sample(model, ps.value, ranges, params.samples, cell_rng(seed, STAGE_SAMPLE, update), res)
        rows = label_points(spec, feats, pts, test_cases, seed, (STAGE_LABEL, update))
        data = data.concat(LabeledDataset.from_rows(data.columns, rows, spec.resolution))
        update += 1

    pu = threshold_no_false_negative(p_train, data.unsafe)
    if pu.degenerate:
        flags.append("degenerate_p_u_final")
    if pu.value < ps.value:
        # labels separate: p_u can move up to p_s and still see no safe row
        pu = Threshold(ps.value, pu.degenerate)
        flags.append("separable")
    if ps.degenerate:
        flags.append("degenerate_p_s")
    if model.ridge or model0.ridge:
        flags.append("ridge_fallback")
    best = best_size_point(model, ps.value, ranges, res, rng=cell_rng(seed, STAGE_BEST))
    counts.update(final=len(data), unsafe=int(data.unsafe.sum()), safe=int((~data.unsafe).sum()), updates=update)
    border = SafeBorderModel(
        model=model,
        p_u=pu.value,
        p_s=ps.value,
        ranges=ranges,
        best_point={f: float(v) for f, v in zip(feats, best.point)},
        best_status=best.status,
        precision=precision,
        counts=counts,
        p_u_prune=prune_thr.value,
        flags=flags,
        history=history,
    )
    return border, data


def contour_grid(
    border: SafeBorderModel,
    spec: SystemSpec,
    pair: Tuple[str, str],
    steps: int = 50,
) -> str:
    """CSV grid of ``p`` over two features, others fixed at their minimum WCET.

    Columns: ``x, y, p, safe`` where ``safe`` is 1 below ``p_s``.  Features
    outside the model contribute nothing to ``p`` but may still be chosen.
    """
    a, b = pair
    feats = border.features

    def axis(tid):
        t = spec.task(tid)
        return np.linspace(spec.ms(t.wcet_min), spec.ms(t.wcet_max), steps)

    base = np.array([spec.ms(spec.task(f).wcet_min) for f in feats])
    xs, ys = axis(a), axis(b)
    lines = [f"{a},{b},p,safe"]
    for x in xs:
        for yv in ys:
            pt = base.copy()
            if a in feats:
                pt[feats.index(a)] = x
            if b in feats:
                pt[feats.index(b)] = yv
            p = float(border.model.predict(pt)[0])
            lines.append(f"{x:.6f},{yv:.6f},{p:.9g},{int(p < border.p_s)}")
    return "\n".join(lines) + "\n"
