"""Classical (gamma = 0) cavity method for the ±J spin glass on the Bethe lattice."""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .graph import subseed


class NonFiniteInput(ValueError):
    pass


def cavity_update(h_in, j_in, beta):
    """Cavity field of spin 0 from its K descendants (last axis of the inputs)."""
    h_in = np.asarray(h_in, dtype=float)
    j_in = np.asarray(j_in, dtype=float)
    if not (np.all(np.isfinite(h_in)) and np.all(np.isfinite(j_in)) and math.isfinite(beta)):
        raise NonFiniteInput("cavity fields and couplings must be finite")
    # atanh(tanh a tanh b) = [ln cosh(a + b) - ln cosh(a - b)] / 2, finite even where
    # tanh(beta J) rounds to one at large beta
    a, b = beta * j_in, beta * h_in
    return (_log_cosh(a + b) - _log_cosh(a - b)).sum(axis=-1) / (2 * beta)


def _log_cosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2 * x)) - math.log(2)


@dataclass(frozen=True, eq=False)
class FieldPopulation:
    fields: np.ndarray
    beta: float
    j: float = 1.0
    k: int = 2

    def __post_init__(self):
        if not np.all(np.isfinite(self.fields)):
            raise NonFiniteInput("population contains non-finite fields")

    @property
    def size(self):
        return len(self.fields)

    @property
    def mean(self):
        return float(self.fields.mean())

    @property
    def second_moment(self):
        return float(np.mean(self.fields**2))


def population_step(pop, rng):
    """Replace every member by the cavity update of K random members with random ±J."""
    p, k = pop.size, pop.k
    idx = rng.integers(p, size=(p, k))
    signs = np.where(rng.random((p, k)) < 0.5, pop.j, -pop.j)
    new = cavity_update(pop.fields[idx], signs, pop.beta)
    return FieldPopulation(new, pop.beta, pop.j, k)


def classical_tc(k, j=1.0):
    """Spin-glass temperature where K tanh^2(J/T) = 1."""
    if k < 2:
        raise ValueError("branching number must be at least 2")
    return j / math.atanh(1 / math.sqrt(k))


def classical_tc_root(k, j=1.0):
    """Same temperature by root-finding, as an independent check of the closed form."""
    return brentq(lambda t: k * math.tanh(j / t) ** 2 - 1, 1e-3 * j, 1e3 * j * k, xtol=1e-14)


def typical_correlation_decay(beta, j, k, distance):
    """Typical |C| at hop distance L: K^(L/2) tanh(beta J)^L."""
    if np.any(np.asarray(distance) < 1):
        raise ValueError("distance must be at least 1")
    return k ** (np.asarray(distance) / 2) * np.tanh(beta * j) ** np.asarray(distance)


def linear_growth_factor(beta, k, j=1.0):
    return k * math.tanh(beta * j) ** 2


def variance_trajectory(beta, k, j=1.0, size=100_000, steps=40, init_var=1e-6, seed=0):
    """Second moment of the field population after each step, starting from Gaussian fields."""
    rng = np.random.default_rng(subseed(seed, k, int(round(beta * 1e9))))
    pop = FieldPopulation(rng.normal(0, math.sqrt(init_var), size), beta, j, k)
    out = [pop.second_moment]
    for _ in range(steps):
        pop = population_step(pop, rng)
        out.append(pop.second_moment)
    return np.array(out)


def variance_growth_rate(beta, k, j=1.0, size=100_000, steps=40, window=(1e-8, 1e-4), seed=0):
    """Per-step multiplier of <h^2> fitted on the log scale inside `window`."""
    traj = variance_trajectory(beta, k, j, size, steps, math.sqrt(window[0] * window[1]), seed)
    t = np.arange(len(traj))
    ok = (traj >= window[0]) & (traj <= window[1])
    if ok.sum() < 3:
        raise RuntimeError("too few points inside the fit window")
    slope = np.polyfit(t[ok], np.log(traj[ok]), 1)[0]
    return math.exp(slope)


def stability_crossover_tc(k, j=1.0, size=100_000, steps=40, seed=0, bracket=(0.5, 2.0)):
    """Temperature where the fitted growth rate of <h^2> crosses one.

    `bracket` is in units of the closed-form T_c; the rate is evaluated on a
    grid, and the crossing is located by linear interpolation of ln(rate).
    """
    tc0 = classical_tc(k, j)
    temps = tc0 * np.linspace(bracket[0], bracket[1], 31)
    lr = np.array([math.log(variance_growth_rate(1 / t, k, j, size, steps, seed=seed)) for t in temps])
    sign = np.sign(lr)
    idx = np.nonzero(sign[:-1] != sign[1:])[0]
    if not len(idx):
        raise RuntimeError("no stability crossover inside the bracket")
    i = idx[0]
    # refine on a fine local grid
    fine = np.linspace(temps[i], temps[i + 1], 11)
    lf = np.array([math.log(variance_growth_rate(1 / t, k, j, size, steps, seed=seed)) for t in fine])
    s = np.sign(lf)
    i2 = np.nonzero(s[:-1] != s[1:])[0]
    if not len(i2):
        return float(np.interp(0.0, [lr[i + 1], lr[i]], [temps[i + 1], temps[i]]))
    a = i2[0]
    t0, t1, l0, l1 = fine[a], fine[a + 1], lf[a], lf[a + 1]
    return float(t0 - l0 * (t1 - t0) / (l1 - l0))


def phase_scan(betas, k, j=1.0, size=100_000, steps=40, seed=0, path=None):
    """Rows (beta, k, j, variance_multiplier, stable) for a list of inverse temperatures."""
    rows = []
    for beta in betas:
        rate = variance_growth_rate(beta, k, j, size, steps, seed=seed)
        rows.append((float(beta), int(k), float(j), rate, int(rate < 1)))
    if path is not None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("beta", "k", "j", "variance_multiplier", "stable"))
            w.writerows(rows)
    return rows
