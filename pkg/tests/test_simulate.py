import math

import numpy as np
import pytest
from scipy import stats

from nlbranch.errors import DomainError, ValidationError
from nlbranch.model import (CoefficientSet, StableTruncatedMeasure,
                            cir_coefficients)
from nlbranch.simulate import (SimConfig, read_ensemble, simulate_coupled,
                               simulate_single, write_ensemble,
                               write_ensemble_csv)

STABLE15 = StableTruncatedMeasure(alpha=1.5, c0=1.0, zmax=1.0)


def linear_branching():
    return CoefficientSet(
        gamma0=lambda x: -np.asarray(x, dtype=float),
        gamma1=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        gamma2=lambda x: np.asarray(x, dtype=float))


def pure_drift():
    return CoefficientSet(
        gamma0=lambda x: -np.asarray(x, dtype=float),
        gamma1=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        gamma2=lambda x: np.zeros_like(np.asarray(x, dtype=float)))


# ---------------------------------------------------------------------------
# configuration


def test_sim_config_validation():
    with pytest.raises(DomainError):
        SimConfig(h=-1e-3)
    with pytest.raises(DomainError):
        SimConfig(n_paths=0)
    with pytest.raises(DomainError):
        SimConfig(kappa=0.0)
    with pytest.raises(DomainError):
        SimConfig(small_jump_policy="ignore")
    with pytest.raises(DomainError):
        SimConfig(boundary="reflect")
    with pytest.raises(DomainError):
        SimConfig(coupling="independent")
    with pytest.raises(DomainError):
        SimConfig(record_times=[0.5, 2.0], t_end=1.0).resolved_record_times()


def test_sim_config_echo_roundtrips_record_times():
    cfg = SimConfig(t_end=2.0, record_times=[0.0, 1.0, 2.0])
    echo = cfg.echo()
    assert echo["record_times"] == [0.0, 1.0, 2.0]
    assert cfg.resolved_delta_c(1.0) == pytest.approx(2e-6)
    assert SimConfig(delta_c=1e-4).resolved_delta_c(1.0) == 1e-4


# ---------------------------------------------------------------------------
# determinism


def test_simulation_is_bit_identical_for_fixed_seed():
    cfg = SimConfig(h=1e-2, eps=0.1, t_end=0.5, n_paths=200, seed=7,
                    record_times=[0.0, 0.25, 0.5])
    a = simulate_coupled(linear_branching(), STABLE15, 1.0, 0.5, cfg)
    b = simulate_coupled(linear_branching(), STABLE15, 1.0, 0.5, cfg)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    assert np.array_equal(a.coalescence, b.coalescence)
    c = simulate_single(linear_branching(), STABLE15, 1.0, cfg)
    d = simulate_single(linear_branching(), STABLE15, 1.0, cfg)
    assert np.array_equal(c.X, d.X)


def test_different_seeds_differ():
    cfg = SimConfig(h=1e-2, eps=0.1, t_end=0.5, n_paths=200, seed=7)
    cfg2 = SimConfig(h=1e-2, eps=0.1, t_end=0.5, n_paths=200, seed=8)
    a = simulate_single(linear_branching(), STABLE15, 1.0, cfg)
    b = simulate_single(linear_branching(), STABLE15, 1.0, cfg2)
    assert not np.array_equal(a.X[-1], b.X[-1])


# ---------------------------------------------------------------------------
# marginal oracles


def test_pure_drift_matches_ode():
    # dX = -X dt from 1: X(t) = e^-t, Euler error O(h)
    cfg = SimConfig(h=1e-3, t_end=1.0, n_paths=3, seed=1)
    ens = simulate_single(pure_drift(), None, 1.0, cfg)
    final = ens.at(1.0)
    assert np.allclose(final, math.exp(-1.0), atol=5e-3)
    assert np.all(final == final[0])  # no noise: identical paths


def test_cir_mean_matches_ode():
    # E X(t) solves m' = d - b m: m(t) = d/b + (x0 - d/b) e^(-b t)
    cfg = SimConfig(h=1e-3, t_end=1.0, n_paths=20_000, seed=3,
                    record_times=[0.0, 0.5, 1.0])
    ens = simulate_single(cir_coefficients(1.0, 1.0, 1.0), None, 2.0, cfg)
    for t in (0.5, 1.0):
        xs = ens.at(t)
        expect = 1.0 + math.exp(-t)
        se = float(np.std(xs)) / math.sqrt(xs.size)
        assert abs(float(np.mean(xs)) - expect) < 3.0 * se + 2e-3


def test_jump_count_thinning_poisson():
    # constant jump rate and a single atom: N(t) ~ Poisson(rate * t)
    rate = 2.0
    from nlbranch.model import AtomicMeasure
    nu = AtomicMeasure([1.0], [1.0])
    coeffs = CoefficientSet(
        gamma0=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        gamma1=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        gamma2=lambda x: np.full_like(np.asarray(x, dtype=float), rate),
        gamma2_vanishes_at_zero=False)
    cfg = SimConfig(h=1e-3, eps=0.5, t_end=1.0, n_paths=20_000, seed=11)
    x0 = 100.0  # large start so the compensator drift never clamps at zero
    ens = simulate_single(coeffs, nu, x0, cfg)
    # every jump adds exactly 1; compensator removes rate * mean * t
    drift = rate * nu.mean_above(0.5) * 1.0
    counts = np.round(ens.at(1.0) - x0 + drift).astype(int)
    lam = rate * nu.tail_mass(0.5) * 1.0
    assert float(np.mean(counts)) == pytest.approx(lam, abs=0.05)
    assert float(np.var(counts)) == pytest.approx(lam, abs=0.1)
    ks = np.arange(0, 12)
    observed = np.array([np.sum(counts == k) for k in ks], dtype=float)
    expected = stats.poisson.pmf(ks, lam) * counts.size
    keep = expected > 5
    chi2 = float(np.sum((observed[keep] - expected[keep]) ** 2 / expected[keep]))
    assert chi2 < stats.chi2.ppf(0.999, int(np.sum(keep)) - 1)


def test_boundary_clamps_to_zero():
    cfg = SimConfig(h=1e-2, t_end=2.0, n_paths=500, seed=5)
    ens = simulate_single(cir_coefficients(2.0, 1.0, 0.1), None, 0.5, cfg)
    assert np.all(ens.X >= 0.0)


def test_blow_up_paths_are_flagged():
    coeffs = CoefficientSet(
        gamma0=lambda x: np.asarray(x, dtype=float) ** 3,
        gamma1=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        gamma2=lambda x: np.zeros_like(np.asarray(x, dtype=float)))
    cfg = SimConfig(h=1e-2, t_end=5.0, n_paths=4, seed=1)
    ens = simulate_single(coeffs, None, 10.0, cfg)
    assert np.all(ens.flagged)
    assert np.all(np.isnan(ens.at(5.0)))


def test_at_rejects_unrecorded_time():
    cfg = SimConfig(h=1e-2, t_end=1.0, n_paths=3, seed=1,
                    record_times=[0.0, 1.0])
    ens = simulate_single(pure_drift(), None, 1.0, cfg)
    with pytest.raises(DomainError):
        ens.at(0.37)


# ---------------------------------------------------------------------------
# coupled structure


def test_equal_starts_coalesce_immediately():
    cfg = SimConfig(h=1e-2, eps=0.1, t_end=0.5, n_paths=100, seed=2)
    ens = simulate_coupled(linear_branching(), STABLE15, 1.0, 1.0, cfg)
    assert np.all(ens.coalescence == 0.0)
    assert np.array_equal(ens.X, ens.Y)


def test_coupled_rejects_bad_starts():
    cfg = SimConfig(n_paths=1)
    with pytest.raises(DomainError):
        simulate_coupled(linear_branching(), STABLE15, 0.5, 1.0, cfg)
    with pytest.raises(DomainError):
        simulate_coupled(linear_branching(), STABLE15, 1.0, -0.1, cfg)


def test_order_and_permanence_case2(case2):
    cfg = case2.sim
    from dataclasses import replace
    cfg = replace(cfg, n_paths=500, t_end=2.0,
                  record_times=[0.0, 0.5, 1.0, 2.0])
    ens = simulate_coupled(case2.coeffs, case2.nu, case2.x0, case2.y0, cfg)
    assert ens.order_violations == 0
    # permanence: gap identically zero from the coalescence time onward
    for t in (0.5, 1.0, 2.0):
        gap = ens.gap_at(t)
        done = (ens.coalescence <= t) & ~ens.flagged
        assert np.all(gap[done] == 0.0)
        assert np.all(gap[~ens.flagged] >= 0.0)
    assert np.mean(np.isfinite(ens.coalescence)) > 0.1


def test_synchronous_coupling_shares_noise():
    # with gamma1 constant the shared Brownian increment cancels in the gap,
    # which then follows the deterministic ODE gap' = -gap on every path;
    # starting far from zero keeps the boundary clamp out of play
    coeffs = CoefficientSet(
        gamma0=lambda x: -np.asarray(x, dtype=float),
        gamma1=lambda x: np.full_like(np.asarray(x, dtype=float), 1.0),
        gamma2=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        gamma1_vanishes_at_zero=False)
    cfg = SimConfig(h=1e-3, t_end=1.0, n_paths=50, seed=9,
                    coupling="synchronous", delta_c=1e-12)
    ens = simulate_coupled(coeffs, None, 20.0, 19.0, cfg)
    gap = ens.gap_at(1.0)
    alivemask = ~np.isfinite(ens.coalescence)
    assert np.allclose(gap[alivemask], math.exp(-1.0), atol=5e-3)


# ---------------------------------------------------------------------------
# serialization


def test_ensemble_roundtrip(tmp_path):
    cfg = SimConfig(h=1e-2, eps=0.1, t_end=0.5, n_paths=50, seed=4,
                    record_times=[0.0, 0.25, 0.5])
    ens = simulate_coupled(linear_branching(), STABLE15, 1.0, 0.5, cfg)
    path = tmp_path / "ens.nlbe"
    write_ensemble(path, ens)
    back = read_ensemble(path)
    assert np.array_equal(back.X, ens.X)
    assert np.array_equal(back.Y, ens.Y)
    assert np.array_equal(back.coalescence, ens.coalescence)
    assert back.x0 == ens.x0 and back.y0 == ens.y0
    assert list(back.times) == list(ens.times)


def test_read_ensemble_rejects_bad_magic(tmp_path):
    path = tmp_path / "bogus.nlbe"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValidationError):
        read_ensemble(path)


def test_csv_export(tmp_path):
    cfg = SimConfig(h=1e-2, eps=0.1, t_end=0.2, n_paths=5, seed=4,
                    record_times=[0.0, 0.2])
    ens = simulate_coupled(linear_branching(), STABLE15, 1.0, 0.5, cfg)
    path = tmp_path / "ens.csv"
    write_ensemble_csv(path, ens)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "path,t,X,Y,coalescence"
    assert len(lines) == 1 + 5 * 2
