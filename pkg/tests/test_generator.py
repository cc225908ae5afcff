import math

import numpy as np
import pytest

from nlbranch.errors import DomainError
from nlbranch.generator import (FAILS, HOLDS, INAPPLICABLE, ConditionReport,
                                apply_L, apply_coupling_L,
                                apply_coupling_L_sum, apply_synchronous_L,
                                check_drift_condition, check_noise_conditions,
                                cir_expected_hitting_time,
                                invariant_density_residual,
                                invariant_measure_mass, verify_lyapunov)
from nlbranch.model import (CoefficientSet, StableTruncatedMeasure,
                            cir_coefficients, dyadic_atoms)
from nlbranch.testfn import DriftModulus, phi1_zero

STABLE15 = StableTruncatedMeasure(alpha=1.5, c0=1.0, zmax=1.0)

QUADRATIC = (lambda x: x * x, lambda x: 2.0 * x, lambda x: 2.0)
LINEAR = (lambda x: x, lambda x: 1.0, lambda x: 0.0)
CONST = (lambda x: 1.0, lambda x: 0.0, lambda x: 0.0)


def linear_branching():
    """gamma0 = -x, gamma1 = 0, gamma2 = x."""
    return CoefficientSet(
        gamma0=lambda x: -np.asarray(x, dtype=float),
        gamma1=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        gamma2=lambda x: np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# generator oracles


def test_apply_L_constant_function_vanishes():
    assert apply_L(CONST, 2.0, linear_branching(), STABLE15) == pytest.approx(0.0, abs=1e-10)


def test_apply_L_linear_function_is_drift():
    # jumps are compensated, so L x = gamma0(x)
    val = apply_L(LINEAR, 2.0, linear_branching(), STABLE15)
    assert val == pytest.approx(-2.0, rel=1e-8)


def test_apply_L_cir_quadratic_oracle():
    # L x^2 = 2 x (d - b x) + gamma1(x) for the mean-reverting diffusion
    coeffs = cir_coefficients(1.0, 1.0, 1.0)
    for x in (0.5, 1.0, 3.0):
        expect = 2.0 * x * (1.0 - x) + float(coeffs.gamma1(np.asarray(x)))
        assert apply_L(QUADRATIC, x, coeffs, STABLE15) == pytest.approx(expect, rel=1e-10)


def test_apply_L_quadratic_jump_oracle():
    # f = x^2: the compensated jump integral is gamma2(x) int z^2 nu(dz)
    coeffs = linear_branching()
    x = 2.0
    expect = -2.0 * x * x + x * STABLE15.trunc_second_moment(1.0)
    assert apply_L(QUADRATIC, x, coeffs, STABLE15) == pytest.approx(expect, rel=1e-8)


def test_apply_L_rejects_negative_state():
    with pytest.raises(DomainError):
        apply_L(QUADRATIC, -1.0, linear_branching(), STABLE15)


# ---------------------------------------------------------------------------
# coupling operators


def test_coupling_pure_drift_transport():
    # gamma1 = gamma2 = 0: the reduced operator is (gamma0(x) - gamma0(y)) f'(r)
    coeffs = CoefficientSet(
        gamma0=lambda x: -np.asarray(x, dtype=float) ** 2,
        gamma1=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        gamma2=lambda x: np.zeros_like(np.asarray(x, dtype=float)))
    x, y = 2.0, 0.5
    expect = (-x ** 2 + y ** 2) * 1.0
    assert apply_coupling_L(LINEAR, x, y, coeffs, STABLE15, kappa=0.5) \
        == pytest.approx(expect, rel=1e-12)
    assert apply_synchronous_L(LINEAR, x, y, coeffs, STABLE15) \
        == pytest.approx(expect, rel=1e-12)


def test_coupling_constant_gamma2_linear_f():
    # with gamma2 constant the excess term vanishes and f(r) = r kills the
    # overlap bracket: only the drift transport survives
    coeffs = CoefficientSet(
        gamma0=lambda x: -np.asarray(x, dtype=float),
        gamma1=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        gamma2=lambda x: np.full_like(np.asarray(x, dtype=float), 2.0),
        gamma2_vanishes_at_zero=False)
    val = apply_coupling_L(LINEAR, 1.5, 0.5, coeffs, STABLE15, kappa=0.5)
    assert val == pytest.approx(-1.0, rel=1e-10)


def test_coupling_needs_ordered_pair():
    with pytest.raises(DomainError):
        apply_coupling_L(LINEAR, 0.5, 1.0, linear_branching(), STABLE15, kappa=0.5)
    with pytest.raises(DomainError):
        apply_coupling_L(LINEAR, 1.0, 0.5, linear_branching(), STABLE15, kappa=-1.0)


@pytest.mark.parametrize("synchronous", [False, True])
def test_coupling_marginal_consistency(rng, synchronous):
    """L-tilde (f (+) g)(x, y) = L f(x) + L g(y): the row rates of the coupling
    must sum to the marginal jump rates."""
    coeffs = linear_branching()
    smooth = [
        (lambda x: x * x, lambda x: 2.0 * x, lambda x: 2.0),
        (lambda x: math.exp(-x), lambda x: -math.exp(-x), lambda x: math.exp(-x)),
        (lambda x: x / (1.0 + x), lambda x: 1.0 / (1.0 + x) ** 2,
         lambda x: -2.0 / (1.0 + x) ** 3),
    ]
    pairs = [(float(a), float(b)) for a, b in
             np.sort(rng.uniform(0.1, 4.0, size=(7, 2)), axis=1)[:, ::-1]]
    for f in smooth:
        for g in smooth:
            for x, y in pairs:
                if x == y:
                    continue
                lhs = apply_coupling_L_sum(f, g, x, y, coeffs, STABLE15,
                                           kappa=0.5, synchronous=synchronous)
                rhs = apply_L(f, x, coeffs, STABLE15) + apply_L(g, y, coeffs, STABLE15)
                assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-9)


def test_coupling_sum_symmetric_in_arguments():
    coeffs = linear_branching()
    f = QUADRATIC
    g = (lambda x: math.exp(-x), lambda x: -math.exp(-x), lambda x: math.exp(-x))
    a = apply_coupling_L_sum(f, g, 2.0, 0.7, coeffs, STABLE15, kappa=0.5)
    b = apply_coupling_L_sum(g, f, 0.7, 2.0, coeffs, STABLE15, kappa=0.5)
    assert a == pytest.approx(b, rel=1e-10)


# ---------------------------------------------------------------------------
# drift / noise condition checks


def test_drift_condition_linear_branching():
    coeffs = linear_branching()
    mod = DriftModulus(phi1=phi1_zero(), l0=1.0, k2=1.0)
    rep = check_drift_condition(coeffs, mod)
    assert rep.holds
    assert rep.derived["worst_margin"] <= 1e-9


def test_drift_condition_pure_growth_fails_with_witnesses():
    coeffs = CoefficientSet(
        gamma0=lambda x: np.asarray(x, dtype=float),
        gamma1=lambda x: np.asarray(x, dtype=float),
        gamma2=lambda x: np.asarray(x, dtype=float))
    mod = DriftModulus(phi1=phi1_zero(), l0=1.0, k2=1.0)
    rep = check_drift_condition(coeffs, mod)
    assert rep.verdict == FAILS
    assert rep.witnesses
    (x, y), margin = rep.witnesses[0]
    assert x > y and margin > 0
    assert "witness" in rep.to_text()


def test_noise_condition_a1_sqrt_diffusion():
    # gamma1 = x: (sqrt(x) + sqrt(y))^2 >= x - y with equality at y = 0
    coeffs = CoefficientSet(
        gamma0=lambda x: -np.asarray(x, dtype=float),
        gamma1=lambda x: np.asarray(x, dtype=float),
        gamma2=lambda x: np.zeros_like(np.asarray(x, dtype=float)))
    rep = check_noise_conditions(coeffs, None, "A1", beta=1.0)
    assert rep.holds
    assert rep.derived["k3"] == pytest.approx(1.0, rel=1e-9)


def test_noise_condition_a1_no_diffusion_fails():
    rep = check_noise_conditions(linear_branching(), None, "A1", beta=1.0)
    assert rep.verdict == FAILS


def test_noise_condition_a2_stable():
    rep = check_noise_conditions(linear_branching(), STABLE15, "A2",
                                 alpha=1.5, beta=1.0, kappa=0.5)
    assert rep.holds
    assert rep.derived["k3"] == pytest.approx(1.0, rel=1e-9)
    # moment route certified by the closed form C_star = c0 / (2 - alpha)
    assert rep.derived["C_star_moment"] == pytest.approx(2.0, rel=1e-6)
    assert rep.derived["C_star"] > 0


def test_noise_condition_a2_dyadic_overlap_routes():
    nu = dyadic_atoms(alpha=1.5, jmax=60)
    # dyadic shifts align atoms, so the overlap route survives at kappa = 1/2
    rep = check_noise_conditions(linear_branching(), nu, "A2",
                                 alpha=1.5, beta=1.0, kappa=0.5)
    assert rep.holds
    assert rep.derived["C_star"] > 0
    # a non-dyadic kappa never aligns atoms: the overlap route degenerates and
    # the moment route must carry the certificate alone
    rep2 = check_noise_conditions(linear_branching(), nu, "A2",
                                  alpha=1.5, beta=1.0, kappa=0.3)
    assert rep2.holds
    assert rep2.derived.get("overlap_route") == INAPPLICABLE
    assert rep2.derived["C_star"] == pytest.approx(rep2.derived["C_star_moment"])


def test_noise_condition_rejects_bad_inputs():
    with pytest.raises(DomainError):
        check_noise_conditions(linear_branching(), STABLE15, "A2", alpha=1.5)
    with pytest.raises(DomainError):
        check_noise_conditions(linear_branching(), None, "bogus")
    with pytest.raises(DomainError):
        check_noise_conditions(linear_branching(), None, "A1", beta=2.5)


def test_condition_report_requires_witness_on_failure():
    with pytest.raises(DomainError):
        ConditionReport("x", FAILS)
    rep = ConditionReport("x", HOLDS, derived={"a": 1.0})
    assert "x.verdict" in rep.to_keyvalue()


# ---------------------------------------------------------------------------
# Lyapunov verification


def small_grid():
    return np.logspace(-2, 0.5, 25)


def test_verify_lyapunov_case2_holds(case2, case2_assembled):
    consts, psi = case2_assembled
    rep = verify_lyapunov(psi, consts, case2.coeffs, case2.nu,
                          case2.params["kappa"], r_grid=small_grid())
    assert rep.holds
    assert rep.derived["max_margin"] <= 1e-6


def test_verify_lyapunov_monotone_in_lambda(case2, case2_assembled):
    consts, psi = case2_assembled
    grid = small_grid()

    def margin(lam):
        rep = verify_lyapunov(psi, lam, case2.coeffs, case2.nu,
                              case2.params["kappa"], r_grid=grid)
        return rep.derived["max_margin"]

    m1 = margin(consts.lam)
    m2 = margin(10.0 * consts.lam)
    m3 = margin(200.0 * consts.lam)
    assert m1 < m2 < m3


def test_verify_lyapunov_inflated_lambda_fails(case2, case2_assembled):
    consts, psi = case2_assembled
    rep = verify_lyapunov(psi, 200.0 * consts.lam, case2.coeffs,
                          case2.nu, case2.params["kappa"],
                          r_grid=small_grid())
    assert rep.verdict == FAILS
    assert rep.witnesses


def test_verify_lyapunov_uniform_mode(case2, case2_assembled):
    consts, psi = case2_assembled
    # with lam = 0 the uniform-mode margin is just the sup of L-tilde psi < 0
    rep = verify_lyapunov(psi, 0.0, case2.coeffs, case2.nu,
                          case2.params["kappa"], r_grid=small_grid(),
                          mode="uniform")
    assert rep.holds
    assert rep.derived["mode"] == "uniform"


# ---------------------------------------------------------------------------
# counterexample computations


def test_invariant_density_residual_gaussian():
    f = (lambda x: math.exp(-x * x),
         lambda x: -2.0 * x * math.exp(-x * x),
         lambda x: (4.0 * x * x - 2.0) * math.exp(-x * x))
    assert abs(invariant_density_residual(f)) <= 1e-6


def test_invariant_density_residual_constant_zero():
    assert invariant_density_residual(CONST) == pytest.approx(0.0, abs=1e-12)


def test_invariant_density_residual_needs_flat_origin():
    with pytest.raises(DomainError):
        invariant_density_residual(LINEAR)


def test_invariant_measure_mass_diverges():
    assert invariant_measure_mass() == math.inf


def test_cir_hitting_time_log_oracle():
    assert cir_expected_hitting_time(1.0, 1.0, 1.0, 1.0) == 0.0
    for x in (2.0, 10.0, 100.0):
        assert cir_expected_hitting_time(x, 1.0, 1.0, 1.0) \
            == pytest.approx(math.log(x), rel=1e-8)


def test_cir_hitting_time_monotone_unbounded():
    vals = [cir_expected_hitting_time(x, 1.0, 2.0, 1.5) for x in (10.0, 1e2, 1e3, 1e4)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert cir_expected_hitting_time(1e6, 1.0, 2.0, 1.5) > 2.0 * vals[0]


def test_cir_hitting_time_rejects_bad_inputs():
    with pytest.raises(DomainError):
        cir_expected_hitting_time(0.5, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        cir_expected_hitting_time(2.0, -1.0, 1.0, 1.0)
