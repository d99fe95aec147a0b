import math

import numpy as np
import pytest

from carnot.algebra import abelian, heisenberg, quasi_norm
from carnot.errors import MissingConstant, NonFiniteSample, OutOfRange, ParseError, RateViolation
from carnot.expr import parse_expression
from carnot.potentials import (
    Criterion,
    Potential,
    admissibility_threshold,
    check_admissibility,
    default_cloud,
    euler_derivative,
    indicator_well,
    make_potential,
    radial_limit,
    smoothed_power_potential,
    vertical_profile_potential,
    zero_potential,
)


def _degree_zero(alg):
    """``t / rho^2`` on a Heisenberg group: homogeneous of degree 0, so ``E U = 0``."""
    d = alg.heisenberg_degree
    rho2 = lambda x: quasi_norm(alg, x, "heisenberg_rho") ** 2
    z = lambda x: np.zeros(np.shape(x)[:-1])
    return Potential(alg, lambda x: np.asarray(x)[..., 2 * d] / rho2(x), z, z, 1.0, "degree0")


@pytest.fixture(scope="module")
def h2_cloud():
    return default_cloud(heisenberg(2), n_annulus=500)


def test_euler_derivative_of_homogeneous_functions():
    h = heisenberg(1)
    x = np.random.default_rng(0).normal(size=(20, 3))
    s = 1.5
    rho = lambda y: quasi_norm(h, y, "heisenberg_rho")
    np.testing.assert_allclose(euler_derivative(h, lambda y: rho(y) ** s, x), s * rho(x) ** s, rtol=1e-7)
    np.testing.assert_allclose(euler_derivative(h, lambda y: rho(y) ** s, x, 2), s**2 * rho(x) ** s, rtol=1e-5)
    np.testing.assert_allclose(euler_derivative(h, lambda y: y[:, 2] / rho(y) ** 2, x), 0, atol=1e-8)
    with pytest.raises(ValueError):
        euler_derivative(h, rho, x, 3)


def test_euler_derivative_rejects_nonfinite_points():
    with pytest.raises(NonFiniteSample):
        euler_derivative(abelian(2), lambda y: y[:, 0], np.array([[np.nan, 1.0]]))


@pytest.mark.parametrize("profile", ["lorentzian", "arctan", "constant"])
def test_vertical_profile_closed_form(profile):
    alg = heisenberg(2)
    V = vertical_profile_potential(alg, 0.7, profile)
    x = V.probe_points(64, seed=3)
    s = np.sum(x[:, :4] ** 2, axis=1)
    assert V.verify(x) < 1e-6
    np.testing.assert_allclose(V.scaled(2.0)(x), 2 * V(x), rtol=1e-15)
    if profile == "constant":
        np.testing.assert_allclose(V(x), 0.7 / (1 + s), rtol=1e-15)
        np.testing.assert_allclose(V.euler1(x), -1.4 * s / (1 + s) ** 2, rtol=1e-12)


def test_catalogue_potentials_pass_construction_check():
    for alg in (heisenberg(1), heisenberg(2)):
        vertical_profile_potential(alg)
        smoothed_power_potential(alg, 0.5, 1.5)
    smoothed_power_potential(abelian(3), 1.0, 2.0, quasi_norm_kind="euclidean")


def test_wrong_euler_callback_rejected():
    alg = heisenberg(1)
    good = smoothed_power_potential(alg, 1.0, 2.0)
    with pytest.raises(ValueError):
        Potential(alg, good.value, lambda x: 1.01 * good.euler1(x), name="bad")
    with pytest.raises(ValueError):
        Potential(alg, good.value, good.euler1, lambda x: -good.euler2(x), name="bad2")


def test_make_potential_lookup():
    alg = heisenberg(1)
    assert make_potential(alg, "zero").name == "zero"
    V = make_potential(alg, "expr", expression="1/(1+qnorm^2)")
    assert V(np.zeros((1, 3)))[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        make_potential(alg, "nope")


def test_zero_potential_thm2_1():
    alg = abelian(3)
    cloud = default_cloud(alg, n_annulus=200)
    for alpha in (1.0, 2.0):
        rep = check_admissibility(alg, zero_potential(alg), Criterion("thm2_1", alpha), cloud, {"kappa": 1.3})
        assert rep.passed
        assert rep.epsilon_margin == pytest.approx(alpha * 1.3**-2, rel=1e-14)
        assert rep.B_estimate == 0


def test_zero_potential_all_applicable_criteria(h2_cloud):
    alg = heisenberg(2)
    V = zero_potential(alg)
    consts = {"kappa": 1.5, "E_alpha": 0.8}
    for crit in ("thm4_1", "thm4_2", "thm4_4(2)", "combined(0.3,0.3,0.3)"):
        assert check_admissibility(alg, V, crit, h2_cloud, consts).passed


def test_criterion_ranges_and_constants():
    h1 = heisenberg(1)
    cloud = default_cloud(h1, n_annulus=50)
    V = zero_potential(h1)
    with pytest.raises(OutOfRange):
        check_admissibility(h1, V, "thm4_2", cloud)
    with pytest.raises(OutOfRange):
        check_admissibility(h1, V, "thm2_1(4)", cloud, {"kappa": 1.0})
    with pytest.raises(MissingConstant):
        check_admissibility(h1, V, "thm2_1(2)", cloud)
    with pytest.raises(MissingConstant):
        check_admissibility(h1, V, "thm4_4(2)", cloud)
    with pytest.raises(OutOfRange):
        check_admissibility(abelian(2), zero_potential(abelian(2)), "thm4_1", default_cloud(abelian(2), n_annulus=20))


def test_criterion_parsing():
    assert Criterion.parse("thm2_1(1.5)") == Criterion("thm2_1", 1.5)
    assert Criterion.parse("combined(0.2, 0.3, 0.4)").thetas == (0.2, 0.3, 0.4)
    assert Criterion.parse("THM4_1").label() == "thm4_1"
    with pytest.raises(ValueError, match="theta"):
        Criterion.parse("combined(0.5,0.3,0.3)")
    with pytest.raises(ValueError):
        Criterion.parse("thm9")


def test_pass_set_is_an_interval(h2_cloud):
    alg = heisenberg(2)
    base = vertical_profile_potential(alg, 1.0)
    gstar = admissibility_threshold(alg, base, "thm4_2", h2_cloud)
    assert 0 < gstar < math.inf
    gammas = np.linspace(-3 * gstar, 3 * gstar, 25)
    verdicts = [check_admissibility(alg, base.scaled(g), "thm4_2", h2_cloud).passed for g in gammas]
    passing = np.flatnonzero(verdicts)
    assert np.all(np.diff(passing) == 1)
    assert verdicts[12]
    assert all(v == (abs(g) < gstar) for g, v in zip(gammas, verdicts) if abs(abs(g) - gstar) > 1e-9 * gstar)


def test_large_smoothed_power_fails():
    alg = abelian(3)
    cloud = default_cloud(alg, n_annulus=300)
    small = check_admissibility(alg, smoothed_power_potential(alg, 0.05), "thm2_1(2)", cloud, {"kappa": 2.0})
    big = check_admissibility(alg, smoothed_power_potential(alg, 50.0), "thm2_1(2)", cloud, {"kappa": 2.0})
    assert small.passed and not big.passed
    assert big.epsilon_margin < 0


def test_adding_degree_zero_term_leaves_report_unchanged(h2_cloud):
    alg = heisenberg(2)
    V = vertical_profile_potential(alg, 0.3)
    U = _degree_zero(alg)
    for crit in ("thm4_1", "thm4_2", "combined(0.3,0.3,0.3)"):
        a = check_admissibility(alg, V, crit, h2_cloud, {"kappa": 1.5})
        b = check_admissibility(alg, V.plus(U), crit, h2_cloud, {"kappa": 1.5})
        assert a.verdict == b.verdict
        assert b.epsilon_margin == pytest.approx(a.epsilon_margin, abs=1e-8)
        assert b.B_estimate == pytest.approx(a.B_estimate, abs=1e-8)
        np.testing.assert_allclose(b.worst_points, a.worst_points)


def test_degree_zero_orbit_derivative_vanishes():
    alg = heisenberg(2)
    U = _degree_zero(alg)
    x = U.probe_points(64)
    assert np.max(np.abs(euler_derivative(alg, U.value, x))) < 1e-8


def test_radial_limit_degree_zero_is_exact():
    alg = heisenberg(1)
    U = _degree_zero(alg)
    omega = np.array([0.3, 0.2, 0.9])
    probe = radial_limit(alg, U, omega, 2.0, 1e-6)
    unit = probe.direction
    assert probe.limit == pytest.approx(float(U(unit[None, :])[0]), abs=1e-12)
    assert probe.bound_holds


def test_radial_limit_rate_bound():
    alg = abelian(3)
    f0 = 0.4
    V = Potential(alg, lambda x: f0 + np.sum(x**2, axis=-1) ** -1.0,
                  lambda x: -2 * np.sum(x**2, axis=-1) ** -1.0, name="shifted")
    probe = radial_limit(alg, V, [1.0, 2.0, 2.0], 2.0, 2.0, quasi_norm_kind="euclidean")
    assert probe.limit == pytest.approx(f0, abs=1e-10)
    assert probe.rate_constant == 1.0
    assert probe.bound_holds
    np.testing.assert_allclose(probe.deviations, probe.radii**-2.0, rtol=1e-8)


def test_radial_limit_vertical_profile():
    alg = heisenberg(1)
    V = vertical_profile_potential(alg, 1.0)
    # off the centre the potential decays like |z|^-2; along the t-axis it tends to 0 like t^-2 too
    probe = radial_limit(alg, V, [1.0, 0.5, 0.3], 2.0, 10.0)
    assert probe.limit == pytest.approx(0.0, abs=1e-9)
    assert probe.bound_holds


def test_radial_limit_rate_violation():
    alg = abelian(3)
    V = Potential(alg, lambda x: np.sum(x**2, axis=-1) ** -0.5,
                  lambda x: -np.sum(x**2, axis=-1) ** -0.5, name="slow")
    with pytest.raises(RateViolation) as info:
        radial_limit(alg, V, [1.0, 0.0, 0.0], 2.0, 1.0, quasi_norm_kind="euclidean")
    assert info.value.args


def test_indicator_well_values():
    V = indicator_well(abelian(1), 2.0, 1.0)
    np.testing.assert_array_equal(V(np.array([[0.0], [1.0], [1.5]])), [-2.0, -2.0, 0.0])


def test_expression_parser():
    alg = heisenberg(1)
    e = parse_expression("exp(-x1^2) * cos(pi*x3) + 1/(1+rho^4) - hnorm", alg)
    x = np.array([[0.5, 0.0, 1.0]])
    # rho^4 = |z|^4 + t^2
    ref = -math.exp(-0.25) + 1 / (1 + 0.5**4 + 1.0) - 0.5
    assert e(x)[0] == pytest.approx(ref)
    for bad, col in (("x1 + __import__('os')", 6), ("x1 ** 2", 4), ("foo(x1)", 1), ("x9", 1), ("x1[0]", 1)):
        with pytest.raises(ParseError) as info:
            parse_expression(bad, alg)
        assert info.value.column == col
    with pytest.raises(ParseError):
        parse_expression("x1 +", alg)
