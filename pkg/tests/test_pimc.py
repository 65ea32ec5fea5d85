import csv
import itertools
import math

import numpy as np
import pytest

from bethe_qsg.exact import spin_values
from bethe_qsg.graph import make_instance
from bethe_qsg.meanfield import gauge_transform
from bethe_qsg.pimc import (
    IndexOutOfRange,
    InsufficientSamples,
    PathConfiguration,
    PimcParams,
    RawStreamWriter,
    acceptance_table,
    action,
    kernel_arrays,
    local_action_delta,
    measure_correlations,
    measure_magnetizations,
    measure_qea,
    measure_sigma_x,
    metropolis_sweep,
    run_chain,
    run_pimc,
    shell_profiles,
    trotter_exact_moments,
)

from conftest import instance_from_edges


def single_spin():
    return instance_from_edges(1, 0, [], [])


def k4():
    return instance_from_edges(4, 3, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
                               [1.0, -1.0, 1.0, 1.0, -1.0, -1.0])


class AlmostOne:
    """rng stand-in whose uniforms sit just below 1: only moves with dS <= 0 pass."""

    def __init__(self, rng):
        self._rng = rng

    def random(self, size):
        return np.full(size, 1 - 1e-12)

    def integers(self, high, size):
        return self._rng.integers(high, size=size)


# ---------------------------------------------------------------- parameters

def test_params_couplings_match_closed_forms():
    p = PimcParams(beta=15, m_slices=150, gamma=1.7)
    t = 1 / 15
    assert p.dtau == pytest.approx(0.1)
    assert p.j_perp == pytest.approx(-(150 * t / 2) * math.log(math.tanh(1.7 / (150 * t))))
    assert p.j_perp > 0
    assert p.k_perp == pytest.approx(p.dtau * p.j_perp, rel=1e-12)
    assert p.norm_c == pytest.approx(math.sqrt(0.5 * math.sinh(2 * 1.7 / (150 * t))))


def test_params_limits():
    assert PimcParams(beta=1, m_slices=4, gamma=1e3).j_perp < 1e-12
    assert PimcParams(beta=1, m_slices=4, gamma=1e-8).j_perp > 30
    assert PimcParams(beta=1, m_slices=4, gamma=1, sweeps=100).thermalization_sweeps == 50
    with pytest.raises(ValueError):
        PimcParams(beta=1, m_slices=4, gamma=0)
    with pytest.raises(ValueError):
        PimcParams(beta=1, m_slices=1, gamma=1)


def test_path_configuration_rejects_non_spins():
    with pytest.raises(ValueError):
        PathConfiguration(np.zeros((2, 3)), None)


# ---------------------------------------------------------------- local moves

def test_local_delta_equals_action_difference(rng):
    inst = make_instance(10, 3, 4)
    p = PimcParams(beta=3, m_slices=12, gamma=0.8, h=0.37)
    for _ in range(200):
        cfg = PathConfiguration.random(inst, 12, rng)
        i, t = rng.integers(10), rng.integers(12)
        flipped = cfg.spins.copy()
        flipped[i, t] *= -1
        want = action(flipped, inst, p) - action(cfg.spins, inst, p)
        assert local_action_delta(cfg, p, i, t) == pytest.approx(want, abs=1e-12)


def test_acceptance_table_matches_local_delta(rng):
    inst = make_instance(8, 3, 3)
    p = PimcParams(beta=4, m_slices=10, gamma=1.2, h=0.3)
    nbr, sgn = kernel_arrays(inst)
    table = acceptance_table(p, inst.j, 3)
    for _ in range(300):
        cfg = PathConfiguration.random(inst, 10, rng)
        i, t = rng.integers(8), rng.integers(10)
        s = cfg.spins
        loc = int(sum(sgn[i, a] * s[nbr[i, a], t] for a in range(3)))
        tp = int(s[i, t - 1]) + int(s[i, (t + 1) % 10])
        got = table[(int(s[i, t]) + 1) >> 1, loc + 3, (tp >> 1) + 1]
        assert got == pytest.approx(min(1.0, math.exp(-local_action_delta(cfg, p, i, t))), rel=1e-12)


def test_flip_twice_is_zero(rng):
    inst = make_instance(8, 3, 0)
    p = PimcParams(beta=2, m_slices=6, gamma=1.1, h=0.2)
    cfg = PathConfiguration.random(inst, 6, rng)
    d1 = local_action_delta(cfg, p, 3, 2)
    cfg.spins[3, 2] *= -1
    d2 = local_action_delta(cfg, p, 3, 2)
    assert d1 + d2 == pytest.approx(0, abs=1e-14)


def test_local_delta_index_checks(rng):
    inst = make_instance(6, 3, 0)
    cfg = PathConfiguration.random(inst, 4, rng)
    p = PimcParams(beta=1, m_slices=4, gamma=1)
    for site, sl in [(6, 0), (-1, 0), (0, 4), (0, -1)]:
        with pytest.raises(IndexOutOfRange):
            local_action_delta(cfg, p, site, sl)


def test_time_coupling_decouples_at_large_gamma(rng):
    inst = single_spin()
    p = PimcParams(beta=1, m_slices=8, gamma=1e3)
    cfg = PathConfiguration.random(inst, 8, rng)
    assert abs(local_action_delta(cfg, p, 0, 3)) < 1e-12


def test_downhill_moves_always_accepted(rng):
    # with uniforms pinned just below one, only dS <= 0 moves pass, so S never increases
    inst = make_instance(10, 3, 2)
    p = PimcParams(beta=3, m_slices=8, gamma=0.9, h=0.1)
    cfg = PathConfiguration.random(inst, 8, rng)
    s_prev = action(cfg.spins, inst, p)
    rate = metropolis_sweep(cfg, p, AlmostOne(rng))
    assert rate > 0
    for _ in range(20):
        metropolis_sweep(cfg, p, AlmostOne(rng))
        s_now = action(cfg.spins, inst, p)
        assert s_now <= s_prev + 1e-12
        s_prev = s_now


# ---------------------------------------------------------------- exact small chains

def _batch_z(states, weights, visits, n_batches=50):
    """z-scores of visit frequencies against exact weights with batch-means errors."""
    batches = np.array_split(visits, n_batches)
    freq = np.array([np.bincount(b, minlength=len(weights)) / len(b) for b in batches])
    mean = freq.mean(axis=0)
    se = freq.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return (mean - weights) / np.maximum(se, 1e-12)


def _code(spins):
    return int("".join("1" if v > 0 else "0" for v in spins.ravel()), 2)


def _enumerate(inst, p):
    n, m = inst.n, p.m_slices
    # product order matches _code: first spin is the most significant bit, +1 -> 1
    states = [np.array(c, dtype=np.int8).reshape(n, m) for c in itertools.product((-1, 1), repeat=n * m)]
    w = np.array([math.exp(-action(s, inst, p)) for s in states])
    return states, w / w.sum()


def test_detailed_balance_two_state_reduced_chain(rng):
    # one spin, two slices: four configurations, each visited in proportion to exp(-S)
    inst = single_spin()
    p = PimcParams(beta=1.0, m_slices=2, gamma=0.8, h=0.4)
    states, w = _enumerate(inst, p)
    cfg = PathConfiguration.random(inst, 2, rng)
    visits = np.empty(100_000, dtype=np.int64)
    for k in range(len(visits)):
        metropolis_sweep(cfg, p, rng)
        visits[k] = _code(cfg.spins)
    z = _batch_z(states, w, visits)
    assert np.all(np.abs(z) < 3), z


def test_stationary_distribution_two_sites(rng):
    inst = instance_from_edges(2, 1, [(0, 1)], [-1.0])
    p = PimcParams(beta=1.2, m_slices=3, gamma=1.0, h=0.3)
    states, w = _enumerate(inst, p)
    cfg = PathConfiguration.random(inst, 3, rng)
    visits = np.empty(100_000, dtype=np.int64)
    for k in range(len(visits)):
        metropolis_sweep(cfg, p, rng)
        visits[k] = _code(cfg.spins)
    z = _batch_z(states, w, visits)
    # 64 simultaneous comparisons: Bonferroni level for a 1% family-wise error
    assert np.all(np.abs(z) < 3.8), z


def test_transfer_matrix_moments_match_enumeration():
    inst = k4()
    p = PimcParams(beta=1.2, m_slices=3, gamma=1.0, h=0.3)
    states, w = _enumerate(inst, p)
    arr = np.array(states, dtype=float)
    mz = np.einsum("k,kit->i", w, arr) / 3
    zz = np.einsum("k,kit,kjt->ij", w, arr, arr) / 3
    got_m, got_zz = trotter_exact_moments(inst, p)
    np.testing.assert_allclose(got_m, mz, atol=1e-12)
    np.testing.assert_allclose(got_zz, zz, atol=1e-12)


def test_transfer_matrix_moments_approach_thermal_state():
    inst = make_instance(6, 3, 5)
    from bethe_qsg.exact import HamiltonianSpec

    h = HamiltonianSpec(inst, 1.0, 0.3).dense()
    e, v = np.linalg.eigh(h)
    w = np.exp(-4 * (e - e[0]))
    rho = (v * w) @ v.T / w.sum()
    z = spin_values(6).astype(float)
    exact = z @ np.diag(rho)
    errs = []
    for m in (20, 40, 80):
        mz, _ = trotter_exact_moments(inst, PimcParams(beta=4, m_slices=m, gamma=1.0, h=0.3))
        errs.append(np.abs(mz - exact).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.15)


# ---------------------------------------------------------------- estimators

def test_single_spin_sigma_x_matches_tanh():
    p = PimcParams(beta=4, m_slices=64, gamma=1.0, sweeps=20000, n_chains=10, seed=3)
    sx, se = measure_sigma_x(run_pimc(single_spin(), p, correlations=False))
    assert abs(sx[0] - math.tanh(4)) < 3 * se[0]


def test_single_spin_in_field_matches_transfer_matrix():
    p = PimcParams(beta=4, m_slices=16, gamma=1.0, h=0.5, sweeps=20000, n_chains=10, seed=4)
    m, se, _ = measure_magnetizations(run_pimc(single_spin(), p, correlations=False))
    want, _ = trotter_exact_moments(single_spin(), p)
    assert abs(m[0] - want[0]) < 3 * se[0]


def test_n8_moments_match_transfer_matrix():
    inst = make_instance(8, 3, 3)
    p = PimcParams(beta=4, m_slices=10, gamma=1.0, h=0.3, sweeps=20000, n_chains=10, seed=2)
    res = run_pimc(inst, p)
    m, se, _ = measure_magnetizations(res)
    mz, zz = trotter_exact_moments(inst, p)
    assert np.all(np.abs(m - mz) < 3 * se), (m - mz) / se
    corr = measure_correlations(res, inst.graph, 0)
    c_exact = zz - np.outer(mz, mz)
    iu = np.triu_indices(8, 1)
    z = (corr.c - c_exact)[iu] / corr.c_err[iu]
    # 28 pair comparisons: Bonferroni level for a 5% family-wise error
    assert np.all(np.abs(z) < 3.2), z


def test_polarized_limit():
    inst = make_instance(8, 3, 1)
    p = PimcParams(beta=2, m_slices=16, gamma=0.1, h=5.0, sweeps=400, n_chains=3, seed=0)
    m, _, _ = measure_magnetizations(run_pimc(inst, p, correlations=False))
    assert np.all(m > 0.99)


def test_paramagnet_limit():
    inst = make_instance(8, 3, 1)
    # small dtau keeps the equal-slice coupling weak; residual C ~ J / (2 gamma)
    p = PimcParams(beta=2, m_slices=200, gamma=20.0, h=0.0, sweeps=2000, n_chains=10, seed=0)
    res = run_pimc(inst, p)
    m, se, _ = measure_magnetizations(res)
    assert np.all(np.abs(m) < 3 * se + 1e-3)
    corr = measure_correlations(res, inst.graph, 0)
    off = ~np.eye(8, dtype=bool)
    assert np.all(np.abs(corr.c[off]) < 3 * corr.c_err[off] + 0.04)


def test_insufficient_samples():
    p = PimcParams(beta=1, m_slices=4, gamma=1, sweeps=12, thermalization_sweeps=10, min_samples=5)
    with pytest.raises(InsufficientSamples):
        run_chain(single_spin(), p, 0)


def test_qea_trivial_values():
    assert measure_qea(np.zeros((3, 5))).q_ea == 0
    pm = np.where(np.arange(10) % 3, 1.0, -1.0)
    est = measure_qea(np.stack([pm, pm, pm]))
    assert est.q_ea == 1 and est.q_overlap == 1
    flipped = measure_qea(np.stack([pm, -pm]))
    assert flipped.q_ea == 1 and flipped.q_overlap == -1


def test_qea_single_vector():
    est = measure_qea([0.5, -0.5])
    assert est.q_ea == pytest.approx(0.25)
    assert math.isnan(est.q_overlap)


def test_qea_deep_paramagnet():
    inst = make_instance(8, 3, 0)
    p = PimcParams(beta=40, m_slices=320, gamma=3.0, sweeps=2000, n_chains=10, seed=5)
    _, _, per_chain = measure_magnetizations(run_pimc(inst, p, correlations=False))
    assert measure_qea(per_chain).q_ea <= 0.02


def test_shell_profiles_omit_empty_shells():
    row = np.array([1.0, -0.5, 0.25, 0.1, -0.3])
    dist = np.array([0, 1, 1, 3, 3])
    c_mean, c_max = shell_profiles(row, dist)
    assert sorted(c_mean) == [1, 3]
    assert c_mean[1] == pytest.approx(0.375) and c_max[1] == 0.5
    assert c_mean[3] == pytest.approx(0.2) and c_max[3] == 0.3


def test_correlation_profile_shells_cover_graph():
    inst = make_instance(20, 3, 0)
    p = PimcParams(beta=2, m_slices=8, gamma=1.5, sweeps=200, n_chains=2, seed=0)
    est = measure_correlations(run_pimc(inst, p), inst.graph, 4)
    assert est.center == 4
    assert min(est.c_mean) == 1
    assert all(est.c_max[r] >= est.c_mean[r] >= 0 for r in est.c_mean)


# ---------------------------------------------------------------- properties

def test_chain_determinism():
    inst = make_instance(10, 3, 0)
    p = PimcParams(beta=2, m_slices=8, gamma=1.2, h=0.1, sweeps=300, n_chains=2, seed=17)
    a, b = run_chain(inst, p, 1), run_chain(inst, p, 1)
    np.testing.assert_array_equal(a.mag, b.mag)
    np.testing.assert_array_equal(a.zz, b.zz)
    np.testing.assert_array_equal(a.final, b.final)
    c = run_chain(inst, p, 0)
    assert not np.array_equal(a.final, c.final)


def test_gauge_covariance_of_qea(rng):
    inst = make_instance(12, 3, 6)
    flipped = [0, 3, 4, 9]
    eps = np.ones(12)
    eps[flipped] = -1
    gauged = gauge_transform(inst, flipped)
    init = PathConfiguration.random(inst, 8, rng).spins
    p = PimcParams(beta=2, m_slices=8, gamma=1.0, h=0.0, sweeps=400, n_chains=1, seed=9)
    a = run_chain(inst, p, 0, init=init)
    b = run_chain(gauged, p, 0, init=(eps[:, None] * init).astype(np.int8))
    np.testing.assert_array_equal(b.mag, eps * a.mag)
    np.testing.assert_array_equal(b.final, (eps[:, None] * a.final).astype(np.int8))
    assert measure_qea(b.mag).q_ea == measure_qea(a.mag).q_ea


def test_error_bars_bracket_truth():
    inst = instance_from_edges(2, 1, [(0, 1)], [1.0])
    base = dict(beta=2, m_slices=8, gamma=1.0, h=0.2, sweeps=600, n_chains=10)
    want, _ = trotter_exact_moments(inst, PimcParams(**base))
    hits = []
    for trial in range(40):
        m, se, _ = measure_magnetizations(run_pimc(inst, PimcParams(**base, seed=trial), correlations=False))
        hits.extend(np.abs(m - want) < 3 * se)
    assert np.mean(hits) >= 0.95


def test_raw_stream(tmp_path):
    inst = make_instance(6, 3, 0)
    p = PimcParams(beta=1, m_slices=4, gamma=1, sweeps=40, n_chains=1, measure_every=10)
    path = tmp_path / "raw.csv"
    with RawStreamWriter(path) as w:
        run_chain(inst, p, 0, raw_writer=w)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == RawStreamWriter.columns
    assert len(rows) > 1 and all(r[3] == "mz" for r in rows[1:])
    assert all(abs(float(r[5])) <= 1 for r in rows[1:])
