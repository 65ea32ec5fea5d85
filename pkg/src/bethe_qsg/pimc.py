"""Path-integral Monte Carlo in the primitive Trotter approximation.

The sampled weight is exp(-S) with the dimensionless action

    S = -dtau * sum_m [ sum_<ij> J_ij s_i^m s_j^m + h sum_i s_i^m ]
        - k_perp * sum_m sum_i s_i^m s_i^{m+1},

dtau = beta / M and k_perp = dtau * j_perp = -ln(tanh(dtau * gamma)) / 2.
Spins are stored as an (N, M) int8 array; slice M wraps to slice 0.
"""

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .graph import bfs_distances, subseed

UNIFORMS_PER_BLOCK = 1 << 20


class InsufficientSamples(RuntimeError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class PimcParams:
    beta: float
    m_slices: int
    gamma: float
    h: float = 0.0
    sweeps: int = 10000
    thermalization_sweeps: int = None  # None: first half of `sweeps`
    n_chains: int = 10
    seed: int = 0
    measure_every: int = 1
    min_samples: int = 10

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("PIMC needs gamma > 0 (the time coupling diverges at gamma = 0)")
        if self.m_slices < 2:
            raise ValueError("need at least two time slices")
        if self.thermalization_sweeps is None:
            object.__setattr__(self, "thermalization_sweeps", self.sweeps // 2)

    @property
    def temperature(self):
        return 1.0 / self.beta

    @property
    def dtau(self):
        return self.beta / self.m_slices

    @property
    def j_perp(self):
        mt = self.m_slices * self.temperature
        return -(mt / 2) * math.log(math.tanh(self.gamma / mt))

    @property
    def k_perp(self):
        return -0.5 * math.log(math.tanh(self.dtau * self.gamma))

    @property
    def norm_c(self):
        return math.sqrt(0.5 * math.sinh(2 * self.gamma / (self.m_slices * self.temperature)))

    @property
    def measured_sweeps(self):
        return self.sweeps - self.thermalization_sweeps


@dataclass
class PathConfiguration:
    spins: np.ndarray  # (N, M) of ±1
    instance: object

    def __post_init__(self):
        self.spins = np.ascontiguousarray(self.spins, dtype=np.int8)
        if not np.all(np.abs(self.spins) == 1):
            raise ValueError("spins must be ±1")

    @classmethod
    def random(cls, instance, m_slices, rng):
        s = np.where(rng.random((instance.n, m_slices)) < 0.5, 1, -1).astype(np.int8)
        return cls(s, instance)

    @property
    def shape(self):
        return self.spins.shape


def action(spins, instance, params):
    """Full dimensionless action of a configuration (no normalization constant)."""
    s = spins.astype(float)
    i, k = instance.edges.T
    spatial = np.sum(instance.couplings[:, None] * s[i] * s[k]) + params.h * s.sum()
    temporal = np.sum(s * np.roll(s, -1, axis=1))
    return -params.dtau * spatial - params.k_perp * temporal


def local_action_delta(config, params, site, slice_):
    """Change of the action when spin (site, slice_) is flipped."""
    n, m = config.spins.shape
    if not (0 <= site < n and 0 <= slice_ < m):
        raise IndexOutOfRange(f"({site}, {slice_}) outside {n}x{m} lattice")
    nbr, cpl = config.instance.coupling_table()
    s = config.spins
    local = params.h + sum(c * s[j, slice_] for j, c in zip(nbr[site], cpl[site]))
    temporal = s[site, (slice_ - 1) % m] + s[site, (slice_ + 1) % m]
    return float(2 * s[site, slice_] * (params.dtau * local + params.k_perp * temporal))


def kernel_arrays(instance):
    """Neighbor indices (int32) and coupling signs (int8) in the layout the kernels expect."""
    nbr, cpl = instance.coupling_table()
    return np.ascontiguousarray(nbr, dtype=np.int32), np.sign(cpl).astype(np.int8)


def acceptance_table(params, j, degree):
    """min(1, exp(-dS)) indexed by [(s + 1) / 2, sum_a sign_a s_a + degree, (s_prev + s_next) / 2 + 1].

    With ±J couplings the flip cost takes only these few values, so the
    kernels never call exp.
    """
    table = np.empty((2, 2 * degree + 1, 3))
    for si, s in enumerate((-1, 1)):
        for l in range(2 * degree + 1):
            for ti, tp in enumerate((-2, 0, 2)):
                ds = 2.0 * s * (params.dtau * (params.h + j * (l - degree)) + params.k_perp * tp)
                table[si, l, ti] = min(1.0, math.exp(-ds))
    return table


@njit(cache=True)
def _sweep_block(spins, nbr, sgn, table, u, shift, measure, mag, zz, kinks):
    """Run u.shape[0] sequential-scan Metropolis sweeps; accumulate measurements
    after every sweep whose `measure` flag is set. Returns accepted flips.

    Sweep b visits slices in the cyclic order shift[b], shift[b] + 1, ... With a
    fixed starting slice, zero-cost moves next to a kink are always accepted in
    the same order, so both walls of a domain advance in lockstep and its length
    never changes; a random start breaks that drift.
    """
    n, m = spins.shape
    deg = nbr.shape[1]
    accepted = 0
    for b in range(u.shape[0]):
        for i in range(n):
            for tt in range(m):
                t = tt + shift[b]
                if t >= m:
                    t -= m
                s = spins[i, t]
                loc = 0
                for a in range(deg):
                    loc += sgn[i, a] * spins[nbr[i, a], t]
                tp = spins[i, t - 1 if t > 0 else m - 1] + spins[i, t + 1 if t < m - 1 else 0]
                p = table[(s + 1) >> 1, loc + deg, (tp >> 1) + 1]
                if p >= 1.0 or u[b, i, t] < p:
                    spins[i, t] = -s
                    accepted += 1
        if measure[b] >= 1:
            for i in range(n):
                acc = 0
                kk = 0
                for t in range(m):
                    acc += spins[i, t]
                    if spins[i, t] != spins[i, t + 1 if t < m - 1 else 0]:
                        kk += 1
                mag[i] += acc
                kinks[i] += kk
        if measure[b] == 2:
            for i in range(n):
                for j in range(i, n):
                    c = 0
                    for t in range(m):
                        c += spins[i, t] * spins[j, t]
                    zz[i, j] += c
    return accepted


def metropolis_sweep(config, params, rng):
    """One sequential (i, m) Metropolis pass from a random starting slice; returns the acceptance rate."""
    nbr, sgn = kernel_arrays(config.instance)
    table = acceptance_table(params, config.instance.j, nbr.shape[1])
    n, m = config.spins.shape
    u = rng.random((1, n, m))
    shift = rng.integers(m, size=1)
    dummy = np.zeros(n)
    acc = _sweep_block(config.spins, nbr, sgn, table, u, shift, np.zeros(1, np.int8), dummy,
                       np.zeros((1, 1)), dummy.copy())
    return acc / (n * m)


@dataclass
class ChainResult:
    chain_id: int
    mag: np.ndarray  # per-site <s_i>, averaged over slices and measured sweeps
    zz: np.ndarray  # <s_i s_j> equal-slice, or None
    sigma_x: np.ndarray  # per-site slice-pair estimator of <sigma^x_i>
    n_samples: int
    n_corr_samples: int
    acceptance: float
    final: np.ndarray = field(repr=False, default=None)


def run_chain(instance, params, chain_id, correlations=True, raw_writer=None, init=None):
    """Run one chain; deterministic in (params.seed, chain_id)."""
    rng = np.random.default_rng(subseed(params.seed, chain_id))
    n, m = instance.n, params.m_slices
    if init is None:
        config = PathConfiguration.random(instance, m, rng)
    else:
        config = PathConfiguration(np.array(init, dtype=np.int8), instance)
    nbr, sgn = kernel_arrays(instance)
    table = acceptance_table(params, instance.j, nbr.shape[1])
    spins = config.spins
    mag = np.zeros(n)
    kinks = np.zeros(n)
    zz = np.zeros((n, n)) if correlations else np.zeros((1, 1))
    flags = np.zeros(params.sweeps, dtype=np.int8)
    measured = np.arange(params.thermalization_sweeps, params.sweeps)
    flags[measured] = 1
    n_corr = 0
    if correlations:
        corr_sweeps = measured[(measured - params.thermalization_sweeps) % params.measure_every == 0]
        flags[corr_sweeps] = 2
        n_corr = len(corr_sweeps)
    block = max(1, UNIFORMS_PER_BLOCK // (n * m))
    if raw_writer is not None:
        block = max(1, min(block, params.measure_every))
    accepted = 0
    for start in range(0, params.sweeps, block):
        stop = min(start + block, params.sweeps)
        u = rng.random((stop - start, n, m))
        shift = rng.integers(m, size=stop - start)
        accepted += _sweep_block(spins, nbr, sgn, table, u, shift, flags[start:stop], mag, zz, kinks)
        if raw_writer is not None and stop > params.thermalization_sweeps:
            raw_writer.write_configuration(instance.seed, chain_id, stop, spins)
    n_samples = len(measured)
    if n_samples < params.min_samples:
        raise InsufficientSamples(f"{n_samples} measured sweeps < {params.min_samples}")
    mag /= n_samples * m
    frac = kinks / (n_samples * m)
    a = params.dtau * params.gamma
    sigma_x = (1 - frac) * math.tanh(a) + frac / math.tanh(a)
    zz_out = None
    if correlations:
        zz = zz / (n_corr * m)
        zz_out = np.triu(zz) + np.triu(zz, 1).T
    return ChainResult(chain_id, mag, zz_out, sigma_x, n_samples, n_corr,
                       accepted / (params.sweeps * n * m), spins.copy())


@dataclass
class PimcResult:
    chains: list
    params: PimcParams

    @property
    def n_chains(self):
        return len(self.chains)


def run_pimc(instance, params, correlations=True, raw_writer=None):
    chains = [run_chain(instance, params, c, correlations, raw_writer)
              for c in range(params.n_chains)]
    return PimcResult(chains, params)


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    k = values.shape[0]
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.full_like(mean, np.nan)
    return mean, se


def measure_magnetizations(result):
    """Per-site <sigma^z_i>: (mean over chains, standard error over chains, per-chain array)."""
    chains = result.chains if isinstance(result, PimcResult) else result
    for c in chains:
        if c.n_samples < 1:
            raise InsufficientSamples("chain has no measured sweeps")
    per_chain = np.array([c.mag for c in chains])
    mean, se = _mean_se(per_chain)
    return mean, se, per_chain


def measure_sigma_x(result):
    chains = result.chains if isinstance(result, PimcResult) else result
    return _mean_se([c.sigma_x for c in chains])


@dataclass
class QeaEstimate:
    q_ea: float
    q_ea_err: float
    q_overlap: float
    q_overlap_err: float


def measure_qea(magnetizations):
    """Edwards-Anderson parameter from per-chain site magnetizations.

    `magnetizations` is a (chains, N) array, or a single length-N vector.
    q_ea is the chain average of (1/N) sum_i m_i^2; q_overlap averages
    (1/N) sum_i m_i^a m_i^b over distinct chain pairs.
    """
    m = np.atleast_2d(np.asarray(magnetizations, dtype=float))
    per_chain = np.mean(m**2, axis=1)
    q, q_err = _mean_se(per_chain) if len(per_chain) > 1 else (per_chain[0], np.nan)
    pairs = [np.mean(m[a] * m[b]) for a, b in itertools.combinations(range(len(m)), 2)]
    if pairs:
        qo = float(np.mean(pairs))
        # pairs are not independent; per-chain averages of pair overlaps are
        per = [np.mean([np.mean(m[a] * m[b]) for b in range(len(m)) if b != a]) for a in range(len(m))]
        qo_err = float(np.std(per, ddof=1) / np.sqrt(len(per)))
    else:
        qo, qo_err = float("nan"), float("nan")
    return QeaEstimate(float(q), float(q_err), qo, qo_err)


@dataclass
class CorrelationEstimate:
    c: np.ndarray  # connected correlations, chain mean
    c_err: np.ndarray
    center: int
    c_mean: dict  # r -> mean |C_center,j| over the distance-r shell
    c_max: dict


def shell_profiles(c_row, distances):
    c_mean, c_max = {}, {}
    for r in range(1, int(distances.max()) + 1):
        shell = np.abs(c_row[distances == r])
        if shell.size:
            c_mean[r] = float(shell.mean())
            c_max[r] = float(shell.max())
    return c_mean, c_max


def measure_correlations(result, graph, center):
    chains = result.chains if isinstance(result, PimcResult) else result
    per_chain = np.array([c.zz - np.outer(c.mag, c.mag) for c in chains])
    c, c_err = _mean_se(per_chain)
    dist = bfs_distances(graph, center)
    c_mean, c_max = shell_profiles(c[center], dist)
    return CorrelationEstimate(c, c_err, int(center), c_mean, c_max)


def trotter_exact_moments(instance, params):
    """(<z_i>, <z_i z_j>) of the discretized model by dense transfer matrices (N <= 10).

    The sampled weight equals Tr (D X)^M with D the diagonal factor of one slice
    and X the slice-to-slice kernel; diagonal observables at any slice are
    Tr(O (D X)^M) / Tr (D X)^M, free of sampling error but with the same
    Trotter bias as the Monte Carlo.
    """
    from .exact import HamiltonianSpec, spin_values

    n = instance.n
    if n > 10:
        raise ValueError("dense transfer matrices limited to N <= 10")
    diag = HamiltonianSpec(instance, params.gamma, params.h).diagonal()
    d = np.exp(-params.dtau * (diag - diag.min()))
    x1 = np.exp(params.k_perp * np.array([[1.0, -1.0], [-1.0, 1.0]]))
    x = np.ones((1, 1))
    for _ in range(n):
        x = np.kron(x, x1 / x1.max())
    t = d[:, None] * x
    rho = np.linalg.matrix_power(t / np.abs(t).max(), params.m_slices)
    p = np.diag(rho) / np.trace(rho)
    z = spin_values(n).astype(float)
    return z @ p, (z * p) @ z.T


class RawStreamWriter:
    """Optional CSV stream of slice-averaged site magnetizations during sampling."""

    columns = ("instance_seed", "chain_id", "sweep", "observable_name", "site_or_pair", "value")

    def __init__(self, path):
        self._f = open(path, "w", newline="")
        self._w = csv.writer(self._f)
        self._w.writerow(self.columns)

    def write_configuration(self, instance_seed, chain_id, sweep, spins):
        m = spins.mean(axis=1)
        for i, v in enumerate(m):
            self._w.writerow((instance_seed, chain_id, sweep, "mz", i, repr(float(v))))

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
