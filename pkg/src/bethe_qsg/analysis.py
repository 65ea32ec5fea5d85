"""Disorder averages and the fits of the finite-size analysis."""

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import curve_fit, minimize_scalar


class InsufficientRealizations(ValueError):
    pass


class NoInteriorMaximum(ValueError):
    pass


class NonPositiveData(ValueError):
    pass


class DegenerateDesign(ValueError):
    pass


class NoOnsetDetected(ValueError):
    pass


@dataclass
class Record:
    instance_seed: int
    controls: dict
    observable: str
    value: float
    stderr: float = float("nan")


@dataclass
class DisorderEnsemble:
    records: list = field(default_factory=list)

    def add(self, instance_seed, controls, observable, value, stderr=float("nan")):
        self.records.append(Record(int(instance_seed), dict(controls), observable, float(value),
                                   float(stderr)))

    def keys(self):
        out = []
        for r in self.records:
            k = (r.observable, tuple(sorted(r.controls.items())))
            if k not in out:
                out.append(k)
        return out

    def select(self, observable, **controls):
        return [r for r in self.records if r.observable == observable
                and all(r.controls.get(c) == v for c, v in controls.items())]

    def groups(self, observable, by):
        """{value of control `by`: records} restricted to `observable`."""
        g = defaultdict(list)
        for r in self.records:
            if r.observable == observable:
                g[r.controls[by]].append(r)
        return dict(sorted(g.items()))


@dataclass
class Average:
    mean: float
    stderr: float  # sample std over realizations / sqrt(n)
    inner_err: float  # per-realization errors propagated in quadrature, divided by n
    n: int


def disorder_average(ensemble, key):
    """Unweighted mean over realizations sharing identical controls.

    `key` is (observable, controls-dict) or a plain list of records.
    """
    if isinstance(key, tuple):
        observable, controls = key
        controls = dict(controls)
        records = [r for r in ensemble.records
                   if r.observable == observable and r.controls == controls]
    else:
        records = list(key)
    if len(records) < 2:
        raise InsufficientRealizations(f"{len(records)} realizations, need at least 2")
    v = np.array([r.value for r in records])
    e = np.array([r.stderr for r in records])
    inner = float(np.sqrt(np.nansum(e**2)) / len(v)) if np.any(np.isfinite(e)) else float("nan")
    return Average(float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v))), inner, len(v))


@dataclass
class FitResult:
    params: dict
    errors: dict
    covariance: np.ndarray
    residual: float  # weighted residual sum of squares
    window: tuple
    systematic: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self):
        d = asdict(self)
        d["covariance"] = np.asarray(self.covariance).tolist()
        d["window"] = [float(w) for w in self.window]
        return d

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, default=float)


def _weights(errs, n):
    if errs is None:
        return np.ones(n), False
    errs = np.asarray(errs, dtype=float)
    if np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        raise ValueError("errors must be positive and finite")
    return 1 / errs**2, True


def _linear_lsq(design, y, w):
    """Weighted least squares; covariance is (X^T W X)^-1 (absolute errors)."""
    xtw = design.T * w
    cov = np.linalg.inv(xtw @ design)
    beta = cov @ (xtw @ y)
    resid = float(np.sum(w * (y - design @ beta) ** 2))
    return beta, cov, resid


def _peak_window(x, y, fraction, min_points):
    i = int(np.argmax(y))
    if i == 0 or i == len(x) - 1:
        raise NoInteriorMaximum("largest value sits at the edge of the scanned range")
    thresh = y[i] - fraction * abs(y[i])
    lo = i
    while lo > 0 and y[lo - 1] >= thresh:
        lo -= 1
    hi = i
    while hi < len(x) - 1 and y[hi + 1] >= thresh:
        hi += 1
    while hi - lo + 1 < min_points and (lo > 0 or hi < len(x) - 1):
        # grow towards the side with the larger neighbour
        left = y[lo - 1] if lo > 0 else -np.inf
        right = y[hi + 1] if hi < len(x) - 1 else -np.inf
        if left >= right:
            lo -= 1
        else:
            hi += 1
    return lo, hi


def _parabola(x, y, w, weighted):
    design = np.column_stack([np.ones_like(x), x, x**2])
    beta, cov, resid = _linear_lsq(design, y, w)
    p0, p1, p2 = beta
    if p2 >= 0:
        raise NoInteriorMaximum("fitted curvature is not negative")
    x0 = -p1 / (2 * p2)
    c = p0 - p1**2 / (4 * p2)
    # Jacobian of (x0, c, a) with respect to (p0, p1, p2)
    jac = np.array([[0, -1 / (2 * p2), p1 / (2 * p2**2)],
                    [1, -p1 / (2 * p2), p1**2 / (4 * p2**2)],
                    [0, 0, 1]])
    if not weighted and len(x) > 3:
        cov = cov * resid / (len(x) - 3)
    return np.array([x0, c, p2]), jac @ cov @ jac.T, resid


def parabola_peak(xs, ys, errs=None, fraction=0.1, min_points=4, bootstrap=0, seed=0):
    """Vertex of y = a (x - x0)^2 + c, a < 0, fitted around the largest data point.

    The window is the contiguous run of points within `fraction` (relative) of
    the maximum, grown to at least `min_points`. Shifting either window edge by
    one point gives the `window_shift` systematic.
    """
    order = np.argsort(xs)
    x = np.asarray(xs, dtype=float)[order]
    y = np.asarray(ys, dtype=float)[order]
    e = None if errs is None else np.asarray(errs, dtype=float)[order]
    if len(x) < 4:
        raise ValueError("need at least four points")
    lo, hi = _peak_window(x, y, fraction, min_points)
    w, weighted = _weights(None if e is None else e[lo:hi + 1], hi - lo + 1)
    est, cov, resid = _parabola(x[lo:hi + 1], y[lo:hi + 1], w, weighted)
    x0, c, a = est
    if not x[lo] <= x0 <= x[hi]:
        raise NoInteriorMaximum(f"vertex {x0:.4g} outside the fit window [{x[lo]:.4g}, {x[hi]:.4g}]")
    shifts = []
    for dlo, dhi in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        l2, h2 = lo + dlo, hi + dhi
        if l2 < 0 or h2 >= len(x) or h2 - l2 + 1 < 4:
            continue
        try:
            w2, _ = _weights(None if e is None else e[l2:h2 + 1], h2 - l2 + 1)
            shifts.append(abs(_parabola(x[l2:h2 + 1], y[l2:h2 + 1], w2, weighted)[0][0] - x0))
        except NoInteriorMaximum:
            continue
    systematic = {"window_shift": float(max(shifts)) if shifts else float("nan")}
    if bootstrap and e is not None:
        rng = np.random.default_rng(seed)
        draws = []
        for _ in range(bootstrap):
            yb = y + rng.standard_normal(len(y)) * e
            try:
                draws.append(_parabola(x[lo:hi + 1], yb[lo:hi + 1], w, weighted)[0][0])
            except NoInteriorMaximum:
                pass
        systematic["bootstrap_x0_std"] = float(np.std(draws, ddof=1)) if len(draws) > 1 else float("nan")
    errors = np.sqrt(np.diag(cov))
    return FitResult({"x0": x0, "height": c, "curvature": a},
                     {"x0": errors[0], "height": errors[1], "curvature": errors[2]},
                     cov, resid, (x[lo], x[hi]), systematic)


def _stretched_log(r, log_c0, xi, a):
    return log_c0 - (r / xi) ** a


def stretched_exponential_fit(r, c, errs=None):
    """Fit C(r) = C0 exp(-(r/xi)^a) by least squares on ln C.

    A coarse scan over `a` (linear least squares in (1, r^a) at each value)
    seeds the nonlinear fit. `flags["degenerate"]` marks an ill-conditioned
    covariance, e.g. for flat data where a -> 0.
    """
    r = np.asarray(r, dtype=float)
    c = np.asarray(c, dtype=float)
    keep = r > 0
    r, c = r[keep], c[keep]
    if len(r) < 3:
        raise ValueError("need at least three distances r > 0")
    if np.any(c <= 0):
        raise NonPositiveData("correlations must be positive for a log-space fit")
    y = np.log(c)
    sigma = None
    if errs is not None:
        sigma = np.asarray(errs, dtype=float)[keep] / c  # error of ln C
    w = np.ones_like(y) if sigma is None else 1 / sigma**2
    best = None
    for a in np.geomspace(0.02, 5, 200):
        design = np.column_stack([np.ones_like(r), -(r**a)])
        beta, _, resid = _linear_lsq(design, y, w)
        if beta[1] > 1e-12 and (best is None or resid < best[0]):
            with np.errstate(over="ignore"):
                xi = beta[1] ** (-1 / a)
            if np.isfinite(xi):
                best = (resid, beta[0], xi, a)
    p0 = best[1:] if best is not None else (y[0], 1.0, 1.0)
    flags = {}
    try:
        popt, pcov = curve_fit(_stretched_log, r, y, p0=p0, sigma=sigma, absolute_sigma=sigma is not None,
                               bounds=([-np.inf, 1e-12, 1e-6], [np.inf, np.inf, 50]),
                               ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=20000)
    except RuntimeError:
        popt, pcov = np.array(p0, dtype=float), np.full((3, 3), np.inf)
        flags["converged"] = False
    resid = float(np.sum(w * (y - _stretched_log(r, *popt)) ** 2))
    finite = np.all(np.isfinite(pcov))
    cond = np.linalg.cond(pcov) if finite else np.inf
    rel = np.sqrt(np.abs(np.diag(pcov))) / np.maximum(np.abs(popt), 1e-300) if finite else np.inf
    flags["degenerate"] = bool(not finite or cond > 1e12 or np.any(rel > 1e3) or popt[2] < 1e-3)
    errors = np.sqrt(np.abs(np.diag(pcov))) if finite else np.full(3, np.inf)
    params = {"amplitude": float(np.exp(popt[0])), "xi": float(popt[1]), "a": float(popt[2])}
    errs_out = {"amplitude": float(params["amplitude"] * errors[0]), "xi": float(errors[1]),
                "a": float(errors[2])}
    return FitResult(params, errs_out, pcov, resid, (r.min(), r.max()), flags=flags)


def one_over_n_extrapolation(sizes, values, errs=None):
    """Weighted linear fit of values = gamma_c + delta / N."""
    n = np.asarray(sizes, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(n) < 3:
        raise ValueError("need at least three sizes")
    if np.allclose(n, n[0]):
        raise DegenerateDesign("all sizes are equal")
    w, weighted = _weights(errs, len(n))
    design = np.column_stack([np.ones_like(n), 1 / n])
    beta, cov, resid = _linear_lsq(design, y, w)
    if not weighted and len(n) > 2:
        cov = cov * resid / (len(n) - 2)
    err = np.sqrt(np.diag(cov))
    return FitResult({"gamma_c": beta[0], "delta": beta[1]}, {"gamma_c": err[0], "delta": err[1]},
                     cov, resid, (n.min(), n.max()))


def _onset_points(g, q, e, threshold, n_fit):
    """Indices of the n_fit points nearest the onset: largest gammas with q above threshold."""
    order = np.argsort(g)[::-1]  # from the paramagnet downwards
    above = [i for i in order if q[i] > threshold]
    if not above:
        return None
    start = list(order).index(above[0])
    return order[start:start + n_fit]


def qea_onset_estimator(curves, n_fit=4, threshold_factor=2.0):
    """Per-size x-intercepts of q_EA(gamma) = s (gamma_c(N) - gamma) with a common slope s.

    `curves` maps N to (gammas, q, q_err). Each curve is first fitted on its
    onset window (the `n_fit` largest-gamma points exceeding `threshold_factor`
    times the pooled standard error); aligning the curves at those intercepts
    and fitting the accumulated data gives the common slope, with which every
    curve is refitted.
    """
    if len(curves) < 2:
        raise ValueError("need curves for at least two sizes")
    windows = {}
    for n, (g, q, e) in curves.items():
        g, q, e = (np.asarray(a, dtype=float) for a in (g, q, e))
        pooled = float(np.sqrt(np.mean(e**2)))
        idx = _onset_points(g, q, e, threshold_factor * pooled, n_fit)
        if idx is None or len(idx) < 2:
            raise NoOnsetDetected(f"N={n}: q_EA never exceeds {threshold_factor} x pooled error")
        windows[n] = (g[idx], q[idx], e[idx])
    # free fits give the alignment shifts
    shifts = {}
    for n, (g, q, e) in windows.items():
        w = 1 / np.maximum(e, 1e-300) ** 2 if np.all(e > 0) else np.ones_like(q)
        beta, _, _ = _linear_lsq(np.column_stack([np.ones_like(g), g]), q, w)
        if beta[1] >= 0:
            raise NoOnsetDetected(f"N={n}: q_EA does not grow as gamma decreases")
        shifts[n] = -beta[0] / beta[1]
    # common slope from the aligned data, q = s (shift - gamma), with per-curve offsets
    sizes = list(windows)
    rows, ys, ws = [], [], []
    for k, n in enumerate(sizes):
        g, q, e = windows[n]
        for gi, qi, ei in zip(g, q, e):
            row = np.zeros(len(sizes) + 1)
            row[0] = -(gi - shifts[n])
            row[1 + k] = 1.0
            rows.append(row)
            ys.append(qi)
            ws.append(1 / ei**2 if ei > 0 else 1.0)
    beta, cov, _ = _linear_lsq(np.array(rows), np.array(ys), np.array(ws))
    s = beta[0]
    gc, gc_err = {}, {}
    for n in sizes:
        g, q, e = windows[n]
        w = 1 / e**2 if np.all(e > 0) else np.ones_like(q)
        est = g + q / s  # x-intercept implied by each point at fixed slope
        gc[n] = float(np.sum(w * est) / np.sum(w))
        gc_err[n] = float(1 / np.sqrt(np.sum(w)) / abs(s)) if np.all(e > 0) else float("nan")
    params = {"slope": float(s), **{f"gamma_c_{n}": v for n, v in gc.items()}}
    errors = {"slope": float(np.sqrt(cov[0, 0])), **{f"gamma_c_{n}": v for n, v in gc_err.items()}}
    res = FitResult(params, errors, cov, 0.0, (min(min(w[0]) for w in windows.values()),
                                               max(max(w[0]) for w in windows.values())))
    res.flags["gamma_c"] = gc
    return res


def _master_curve_residual(x, y, labels):
    """Mean squared distance of each point to the piecewise-linear curves of the
    other sizes (where they overlap), normalized by the variance of y."""
    curves = {}
    for lab in np.unique(labels):
        sel = labels == lab
        order = np.argsort(x[sel])
        curves[lab] = (x[sel][order], y[sel][order])
    sq, count = 0.0, 0
    for lab, (xa, ya) in curves.items():
        for other, (xb, yb) in curves.items():
            if other == lab:
                continue
            inside = (xa >= xb[0]) & (xa <= xb[-1])
            if inside.any():
                sq += float(np.sum((ya[inside] - np.interp(xa[inside], xb, yb)) ** 2))
                count += int(inside.sum())
    var = float(np.var(y))
    if count == 0:
        return float("inf")
    return sq / count / var if var > 0 else 0.0


def collapse_quality(data, gc_table, a, b):
    """Normalized distance of the rescaled points to the master curve.

    `data` is an iterable of (N, gamma, S2). Points are mapped to
    (gamma - gamma_c(N), S2 / (a N + b)); the master curve at each point is the
    piecewise-linear interpolation of the other sizes' rescaled data. The score
    is divided by the variance of the rescaled values, so a common rescaling of
    S2 leaves it unchanged.
    """
    arr = np.asarray(data, dtype=float)
    n, g, s = arr[:, 0], arr[:, 1], arr[:, 2]
    x = g - np.array([gc_table[int(k)] for k in n])
    scale = a * n + b
    if np.any(scale <= 0):
        return float("inf")
    return _master_curve_residual(x, s / scale, n)


def optimize_collapse(data, gc_table, ratio_bounds=(-0.9, 50.0)):
    """Best b/a for the collapse (a fixed to 1; only the ratio is identifiable).

    The search variable is b / (a N_min), bounded by `ratio_bounds`.
    """
    arr = np.asarray(data, dtype=float)
    nmin = arr[:, 0].min()
    lo = max(ratio_bounds[0], -0.999)  # a N + b must stay positive at the smallest size
    res = minimize_scalar(lambda r: collapse_quality(arr, gc_table, 1.0, r * nmin),
                          bounds=(lo, ratio_bounds[1]), method="bounded",
                          options={"xatol": 1e-8})
    b = float(res.x * nmin)
    return FitResult({"a": 1.0, "b": b}, {"a": 0.0, "b": float("nan")}, np.zeros((2, 2)),
                     float(res.fun), (float(arr[:, 1].min()), float(arr[:, 1].max())))


def collapse_permutation_test(data, gc_table, a, b, n_perm=200, seed=0):
    """Fraction of gamma-label shuffles (within each size) scoring at least as well."""
    arr = np.asarray(data, dtype=float)
    base = collapse_quality(arr, gc_table, a, b)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        shuffled = arr.copy()
        for n in np.unique(arr[:, 0]):
            sel = np.nonzero(arr[:, 0] == n)[0]
            shuffled[sel, 1] = rng.permutation(arr[sel, 1])
        hits += collapse_quality(shuffled, gc_table, a, b) <= base
    return base, (hits + 1) / (n_perm + 1)


def write_curve_csv(path, xs, ys, yerr=None, series=""):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("series", "x", "y", "yerr"))
        for i, (x, y) in enumerate(zip(xs, ys)):
            w.writerow((series, repr(float(x)), repr(float(y)),
                        "" if yerr is None else repr(float(yerr[i]))))


def sample_fitted_curve(kind, result, grid):
    """Fitted curve values on `grid` for plot overlays."""
    p = result.params
    grid = np.asarray(grid, dtype=float)
    if kind == "parabola":
        return p["curvature"] * (grid - p["x0"]) ** 2 + p["height"]
    if kind == "stretched_exponential":
        return p["amplitude"] * np.exp(-((grid / p["xi"]) ** p["a"]))
    if kind == "one_over_n":
        return p["gamma_c"] + p["delta"] / grid
    raise ValueError(f"unknown curve kind {kind!r}")
