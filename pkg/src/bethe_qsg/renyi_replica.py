"""Renyi-2 entropy from a two-replica extended configuration space.

The chain moves between the DISCONNECTED sector (weight of Z^2: both replicas
periodic in imaginary time) and the CONNECTED sector (weight of Z_A^(2): for
sites in A the last slice of each replica is bonded to the first slice of the
other). The ratio of visit counts estimates Z_A^(2) / Z^2 = exp(-S_2).
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .graph import subseed
from .pimc import UNIFORMS_PER_BLOCK, PathConfiguration, acceptance_table, kernel_arrays

DISCONNECTED = 0
CONNECTED = 1


class Sector(enum.IntEnum):
    DISCONNECTED = DISCONNECTED
    CONNECTED = CONNECTED


class SectorStarvation(RuntimeError):
    pass


@dataclass
class ReplicaConfiguration:
    replica_1: PathConfiguration
    replica_2: PathConfiguration
    sector: Sector
    region: object  # graph.Region

    @classmethod
    def from_single(cls, config, region, sector=Sector.DISCONNECTED):
        return cls(PathConfiguration(config.spins.copy(), config.instance),
                   PathConfiguration(config.spins.copy(), config.instance), Sector(sector), region)

    @property
    def instance(self):
        return self.replica_1.instance

    def stacked(self):
        return np.ascontiguousarray(np.stack([self.replica_1.spins, self.replica_2.spins]))

    def in_region(self):
        return self.region.mask(self.instance.n).astype(np.int8)


@njit(cache=True)
def _seam_log_weight(spins, in_a, k_perp):
    m = spins.shape[2]
    tot = 0
    for i in range(spins.shape[1]):
        if in_a[i]:
            a_last, a_first = spins[0, i, m - 1], spins[0, i, 0]
            b_last, b_first = spins[1, i, m - 1], spins[1, i, 0]
            tot += a_last * b_first + b_last * a_first - a_last * a_first - b_last * b_first
    return k_perp * tot


def sector_switch_log_weight(config, params):
    """ln[p_A(Sigma) / p(Sigma)]: only the seam bonds of region A differ between sectors."""
    return float(_seam_log_weight(config.stacked(), config.in_region(), params.k_perp))


def replica_action(spins, instance, params, in_a, sector):
    """From-scratch action of a two-replica configuration under the given wiring."""
    s = spins.astype(float)
    i, k = instance.edges.T
    total = 0.0
    for r in range(2):
        total -= params.dtau * (np.sum(instance.couplings[:, None] * s[r, i] * s[r, k])
                                + params.h * s[r].sum())
        total -= params.k_perp * np.sum(s[r, :, :-1] * s[r, :, 1:])
    a = np.asarray(in_a, dtype=bool) if sector == CONNECTED else np.zeros(instance.n, bool)
    last, first = s[:, :, -1], s[:, :, 0]
    seam = np.where(a, last[0] * first[1] + last[1] * first[0],
                    last[0] * first[0] + last[1] * first[1])
    return total - params.k_perp * seam.sum()


@njit(cache=True)
def _replica_block(spins, nbr, sgn, table, k_perp, in_a, state, u, shift, us, count, trace, offset):
    """Sweeps over both replicas plus one sector-switch attempt per sweep.

    state = [sector, switch proposals accepted]; u is (B, 2, N, M), us is (B, 2);
    shift (B, 2) is the starting slice of each replica's scan.
    """
    _, n, m = spins.shape
    deg = nbr.shape[1]
    accepted = 0
    for b in range(u.shape[0]):
        conn = state[0] == 1
        for r in range(2):
            for i in range(n):
                cross = conn and in_a[i] == 1
                for tt in range(m):
                    t = tt + shift[b, r]
                    if t >= m:
                        t -= m
                    s = spins[r, i, t]
                    loc = 0
                    for a in range(deg):
                        loc += sgn[i, a] * spins[r, nbr[i, a], t]
                    if t > 0:
                        prev = spins[r, i, t - 1]
                    elif cross:
                        prev = spins[1 - r, i, m - 1]
                    else:
                        prev = spins[r, i, m - 1]
                    if t < m - 1:
                        nxt = spins[r, i, t + 1]
                    elif cross:
                        nxt = spins[1 - r, i, 0]
                    else:
                        nxt = spins[r, i, 0]
                    p = table[(s + 1) >> 1, loc + deg, ((prev + nxt) >> 1) + 1]
                    if p >= 1.0 or u[b, r, i, t] < p:
                        spins[r, i, t] = -s
                        accepted += 1
        # fair-coin direction, so both kinds of proposal are equally frequent
        to_connected = us[b, 0] < 0.5
        if to_connected != conn:
            lw = _seam_log_weight(spins, in_a, k_perp)
            if not to_connected:
                lw = -lw
            if lw >= 0.0 or us[b, 1] < math.exp(lw):
                state[0] = 1 - state[0]
                state[1] += 1
        if count[b]:
            trace[offset + b] = state[0]
    return accepted


def attempt_sector_switch(config, params, rng):
    """Propose the sector change in a fair-coin direction; True if the sector changed."""
    spins = config.stacked()
    in_a = config.in_region()
    to_connected = rng.random() < 0.5
    if to_connected == (config.sector == Sector.CONNECTED):
        return False
    lw = float(_seam_log_weight(spins, in_a, params.k_perp))
    if not to_connected:
        lw = -lw
    if lw >= 0 or rng.random() < math.exp(lw):
        config.sector = Sector.CONNECTED if to_connected else Sector.DISCONNECTED
        return True
    return False


def replica_sweep(config, params, rng):
    """One sweep over both replicas plus one switch attempt, in place.

    Returns (spin acceptance rate, whether the sector changed).
    """
    nbr, sgn = kernel_arrays(config.instance)
    table = acceptance_table(params, config.instance.j, nbr.shape[1])
    spins = config.stacked()
    _, n, m = spins.shape
    state = np.array([int(config.sector), 0], dtype=np.int64)
    u = rng.random((1, 2, n, m))
    shift = rng.integers(m, size=(1, 2))
    us = rng.random((1, 2))
    acc = _replica_block(spins, nbr, sgn, table, params.k_perp, config.in_region(), state, u, shift, us,
                         np.zeros(1, np.int8), np.zeros(1, np.int8), 0)
    config.replica_1.spins[:] = spins[0]
    config.replica_2.spins[:] = spins[1]
    config.sector = Sector(int(state[0]))
    return acc / (2 * n * m), bool(state[1])


@dataclass
class ChainCounts:
    chain_id: int
    n_connected: int
    n_disconnected: int
    s2: float
    stderr: float  # batch-means error of this chain's -ln ratio
    switch_rate: float
    acceptance: float


@dataclass
class RatioEstimate:
    n_connected: int
    n_disconnected: int
    ratio: float  # pooled n_connected / n_disconnected
    s2: float  # mean of per-chain -ln ratio
    stderr: float  # standard error over chains
    s2_pooled: float
    chains: list = field(default_factory=list)
    disagreement: bool = False  # pooled and per-chain estimators differ by more than 2 sigma


def _batch_error(trace, n_batches=20):
    if len(trace) < n_batches * 2:
        return float("nan")
    b = np.array_split(trace.astype(float), n_batches)
    conn = np.array([x.sum() for x in b])
    disc = np.array([len(x) - x.sum() for x in b])
    if np.any(disc == 0) or conn.sum() == 0:
        return float("nan")
    ratios = conn / disc
    r = conn.sum() / disc.sum()
    return float(ratios.std(ddof=1) / np.sqrt(n_batches) / r)


def run_replica_chain(instance, region, params, chain_id, init=None):
    rng = np.random.default_rng(subseed(params.seed, chain_id))
    n, m = instance.n, params.m_slices
    single = PathConfiguration.random(instance, m, rng) if init is None else init
    config = ReplicaConfiguration.from_single(single, region)
    spins = config.stacked()
    in_a = config.in_region()
    nbr, sgn = kernel_arrays(instance)
    table = acceptance_table(params, instance.j, nbr.shape[1])
    state = np.array([DISCONNECTED, 0], dtype=np.int64)
    count = np.zeros(params.sweeps, dtype=np.int8)
    count[params.thermalization_sweeps:] = 1
    trace = np.zeros(params.sweeps, dtype=np.int8)
    block = max(1, UNIFORMS_PER_BLOCK // (2 * n * m))
    accepted = 0
    for start in range(0, params.sweeps, block):
        stop = min(start + block, params.sweeps)
        u = rng.random((stop - start, 2, n, m))
        shift = rng.integers(m, size=(stop - start, 2))
        us = rng.random((stop - start, 2))
        accepted += _replica_block(spins, nbr, sgn, table, params.k_perp, in_a, state, u, shift, us,
                                   count[start:stop], trace, start)
    measured = trace[params.thermalization_sweeps:]
    n_conn = int(measured.sum())
    n_disc = int(len(measured) - n_conn)
    s2 = -math.log(n_conn / n_disc) if n_conn and n_disc else float("nan")
    return ChainCounts(chain_id, n_conn, n_disc, s2, _batch_error(measured),
                       state[1] / params.sweeps, accepted / (params.sweeps * 2 * n * m))


def estimate_renyi2(instance, region, params):
    """S_2 of `region`: mean over chains of -ln(N_A / N_empty), with standard error."""
    chains = [run_replica_chain(instance, region, params, c) for c in range(params.n_chains)]
    return combine_chains(chains)


def combine_chains(chains):
    starving = [c.chain_id for c in chains if c.n_connected == 0 or c.n_disconnected == 0]
    if starving:
        raise SectorStarvation(f"chains {starving} never visited one of the sectors")
    n_conn = sum(c.n_connected for c in chains)
    n_disc = sum(c.n_disconnected for c in chains)
    s2s = np.array([c.s2 for c in chains])
    s2 = float(s2s.mean())
    err = float(s2s.std(ddof=1) / np.sqrt(len(s2s))) if len(s2s) > 1 else float("nan")
    pooled = -math.log(n_conn / n_disc)
    disagree = bool(np.isfinite(err) and abs(pooled - s2) > 2 * err)
    return RatioEstimate(n_conn, n_disc, n_conn / n_disc, s2, err, pooled, chains, disagree)


def trotter_renyi2_ratio(instance, region, params):
    """Exact Z_A^(2) / Z^2 of the discretized model via dense transfer matrices (small N only).

    With rho = (D X)^M, D the diagonal Boltzmann factor of one slice and X the
    slice-to-slice kernel exp(k_perp sum_i s_i s_i'), the ratio is
    Tr(rho_A^2) / (Tr rho)^2.
    """
    from .exact import HamiltonianSpec

    n = instance.n
    if n > 10:
        raise ValueError("dense transfer matrices limited to N <= 10")
    diag = HamiltonianSpec(instance, params.gamma, params.h).diagonal()
    d = np.exp(-params.dtau * diag)
    x1 = np.array([[math.exp(params.k_perp), math.exp(-params.k_perp)],
                   [math.exp(-params.k_perp), math.exp(params.k_perp)]])
    X = np.ones((1, 1))
    for _ in range(n):
        X = np.kron(X, x1)
    T = d[:, None] * X
    T /= np.abs(T).max()
    rho = np.linalg.matrix_power(T, params.m_slices)
    rho = rho / np.trace(rho)
    return _partial_trace_purity(rho, list(region.vertices), n)


def _partial_trace_purity(rho, vertices, n):
    """Tr(rho_A^2) for a (not necessarily symmetric) operator normalized to unit trace."""
    t = rho.reshape((2,) * (2 * n))
    a_axes = [n - 1 - v for v in vertices]
    b_axes = [ax for ax in range(n) if ax not in a_axes]
    perm = a_axes + b_axes + [n + ax for ax in a_axes] + [n + ax for ax in b_axes]
    da, db = 2 ** len(a_axes), 2 ** len(b_axes)
    t = t.transpose(perm).reshape(da, db, da, db)
    rho_a = np.einsum("ibjb->ij", t)
    return float(np.trace(rho_a @ rho_a))
