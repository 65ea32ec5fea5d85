import csv
import math

import numpy as np
import pytest

from bethe_qsg.cavity import (
    FieldPopulation,
    NonFiniteInput,
    cavity_update,
    classical_tc,
    classical_tc_root,
    linear_growth_factor,
    phase_scan,
    population_step,
    stability_crossover_tc,
    typical_correlation_decay,
    variance_growth_rate,
    variance_trajectory,
)


def test_zero_fields_are_fixed_point():
    assert cavity_update([0.0, 0.0], [1.0, -1.0], 2.0) == 0


def test_zero_temperature_limit():
    assert cavity_update([5.0], [1.0], 50.0) == pytest.approx(1.0, abs=1e-9)
    assert cavity_update([-5.0], [1.0], 50.0) == pytest.approx(-1.0, abs=1e-9)
    assert cavity_update([0.3], [1.0], 50.0) == pytest.approx(0.3, abs=1e-9)


def test_linearized_recursion(rng):
    beta, j = 0.8, np.array([1.0, -1.0, 1.0])
    h = 1e-3 * rng.standard_normal(3)
    lin = np.sum(np.tanh(beta * j) * h)
    assert cavity_update(h, j, beta) == pytest.approx(lin, abs=1e-8)


def test_update_is_vectorized_over_leading_axes(rng):
    h = rng.standard_normal((5, 2))
    j = np.where(rng.random((5, 2)) < 0.5, 1.0, -1.0)
    out = cavity_update(h, j, 1.3)
    for r in range(5):
        assert out[r] == pytest.approx(cavity_update(h[r], j[r], 1.3))


def test_non_finite_inputs():
    with pytest.raises(NonFiniteInput):
        cavity_update([np.nan, 0.0], [1.0, 1.0], 1.0)
    with pytest.raises(NonFiniteInput):
        cavity_update([0.0], [np.inf], 1.0)
    with pytest.raises(NonFiniteInput):
        FieldPopulation(np.array([0.0, np.inf]), 1.0)


def test_population_step_preserves_zero_population(rng):
    pop = FieldPopulation(np.zeros(1000), 2.0, 1.0, 2)
    new = population_step(pop, rng)
    assert new.size == 1000
    assert np.all(new.fields == 0)


def test_population_step_preserves_size_and_finiteness(rng):
    pop = FieldPopulation(rng.standard_normal(5000) * 3, 3.0, 1.0, 2)
    for _ in range(5):
        pop = population_step(pop, rng)
    assert pop.size == 5000
    assert np.all(np.isfinite(pop.fields))
    assert np.all(np.abs(pop.fields) <= pop.k * pop.j + 1e-12)


def test_tc_closed_form_and_root():
    assert classical_tc(2) == pytest.approx(1.1346, abs=5e-5)
    for k in (2, 3, 5, 10):
        assert classical_tc(k) == pytest.approx(classical_tc_root(k), abs=1e-10)
    assert classical_tc(2, j=2.0) == pytest.approx(2 * classical_tc(2))
    with pytest.raises(ValueError):
        classical_tc(1)


def test_tc_large_k_asymptotics():
    ratios = [classical_tc(k) / math.sqrt(k) for k in (10, 100, 10_000)]
    assert abs(ratios[-1] - 1) < 1e-4
    assert abs(ratios[0] - 1) > abs(ratios[1] - 1) > abs(ratios[2] - 1)


def test_typical_correlation_decay():
    tc = classical_tc(2)
    np.testing.assert_allclose(typical_correlation_decay(1 / tc, 1.0, 2, np.arange(1, 8)), 1.0, rtol=1e-12)
    vals = typical_correlation_decay(0.5, 1.0, 2, np.arange(1, 12))
    assert np.all(np.diff(vals) < 0)
    assert typical_correlation_decay(0.5, 1.0, 2, 10) == pytest.approx((math.sqrt(2) * math.tanh(0.5)) ** 10)
    with pytest.raises(ValueError):
        typical_correlation_decay(0.5, 1.0, 2, 0)


def test_variance_decays_above_tc():
    beta = 0.5
    traj = variance_trajectory(beta, 2, size=100_000, steps=12, init_var=1.0, seed=1)
    assert np.all(np.diff(traj) < 0)
    # once fields are small the per-step factor approaches the linear value
    late = traj[-1] / traj[-2]
    assert late == pytest.approx(linear_growth_factor(beta, 2), rel=0.03)


def test_variance_grows_below_tc():
    traj = variance_trajectory(1.5, 2, size=100_000, steps=6, init_var=1e-6, seed=2)
    assert np.all(np.diff(traj) > 0)


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.7])
def test_growth_rate_matches_linear_stability(beta):
    rate = variance_growth_rate(beta, 2, seed=3)
    assert rate == pytest.approx(linear_growth_factor(beta, 2), rel=0.02)


@pytest.mark.parametrize("k", [2, 3])
def test_stability_crossover_near_closed_form(k):
    assert stability_crossover_tc(k, seed=4) == pytest.approx(classical_tc(k), rel=0.01)


def test_phase_scan_csv(tmp_path):
    path = tmp_path / "scan.csv"
    rows = phase_scan([0.4, 1.2], 2, size=20_000, path=path)
    assert [r[4] for r in rows] == [1, 0]
    with open(path) as f:
        table = list(csv.reader(f))
    assert table[0] == ["beta", "k", "j", "variance_multiplier", "stable"]
    assert len(table) == 3
    assert float(table[1][3]) == pytest.approx(rows[0][3])
