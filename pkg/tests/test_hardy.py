import numpy as np
import pytest
import scipy.linalg

from carnot.algebra import abelian, heisenberg, quasi_norm
from carnot.errors import OutOfRange
from carnot.hardy import (
    HardyWeight,
    WeightKind,
    compare_weights,
    estimate_E_alpha,
    estimate_kappa,
    hardy_operator,
    kappa_on_lattice,
    optimal_constant,
    positivity_problem,
    weight_values,
    weighted_positivity,
)
from carnot.lattice import LatticeSpec, build_lattice, sublaplacian
from carnot.spectral import as_dense


@pytest.fixture(scope="module")
def a3():
    return build_lattice(abelian(3), LatticeSpec(2.0, 0.5))


def test_zero_constant_margin_is_bottom_of_spectrum(a3):
    margin = weighted_positivity(a3, HardyWeight.qnorm_power(2.0), 0.0)
    assert margin == pytest.approx(np.linalg.eigvalsh(sublaplacian(a3).toarray())[0], rel=1e-8)
    assert margin > 0


def test_subcritical_constant_certified():
    latt = build_lattice(abelian(3), LatticeSpec(4.0, 0.5))
    assert weighted_positivity(latt, HardyWeight.qnorm_power(2.0), 0.2) >= -1e-8


@pytest.mark.parametrize("alg,weight", [
    (abelian(3), HardyWeight.qnorm_power(2.0)),
    (heisenberg(1), HardyWeight.heisenberg_fractional(2.0)),
    (heisenberg(1), HardyWeight.rho_gradient()),
    (heisenberg(1), HardyWeight.qnorm_power(1.0)),
])
def test_optimal_constant_matches_generalized_eigensolve(alg, weight):
    latt = build_lattice(alg, LatticeSpec(2.0, 0.5))
    problem = positivity_problem(latt, weight)
    lo, hi, _ = problem.bisect()
    w, _ = weight.on_lattice(latt)
    op = as_dense(hardy_operator(latt, weight.alpha))
    # smallest generalized Rayleigh quotient <u, Op u> / <u, W u> = 1 / max eig(W, Op)
    top = scipy.linalg.eigh(np.diag(w), 0.5 * (op + op.T), eigvals_only=True).max()
    ref = 1.0 / top
    assert lo <= ref * (1 + 1e-9)
    assert (ref - lo) / ref <= 1.1e-3
    assert hi >= lo
    assert problem.generalized_optimum() == pytest.approx(ref, rel=1e-8)


def test_kappa_and_optimal_constant_reciprocal(a3):
    kappa = kappa_on_lattice(a3, 1.0)
    lo, _ = optimal_constant(a3, HardyWeight.qnorm_power(2.0))
    assert lo == pytest.approx(kappa**-2, rel=0.05)


def test_kappa_ladder_monotone_on_halving_and_nested_grids():
    alg = abelian(3)
    halving = estimate_kappa([build_lattice(alg, LatticeSpec(4.0, h)) for h in (1.0, 0.5, 0.25)], 1.0)
    values = [v for _, v in halving.ladder]
    assert all(b >= a for a, b in zip(values, values[1:]))
    # offset grids refined by 3 are exactly nested: (j + 1/2) h = (3j + 1 + 1/2) h / 3
    nested = estimate_kappa([build_lattice(alg, LatticeSpec(3.0, h)) for h in (0.75, 0.25)], 1.0)
    coarse, fine = (v for _, v in nested.ladder)
    assert fine >= coarse
    coarse_axis = LatticeSpec(3.0, 0.75).axis()
    fine_axis = LatticeSpec(3.0, 0.25).axis()
    assert np.all(np.isin(np.round(coarse_axis, 12), np.round(fine_axis, 12)))


def test_kappa_small_beta_tends_to_one(a3):
    assert kappa_on_lattice(a3, 1e-3) == pytest.approx(1.0, abs=5e-3)


def test_kappa_abelian4_trend():
    est = estimate_kappa([build_lattice(abelian(4), LatticeSpec(2.0, h)) for h in (0.5, 0.25)], 1.0)
    values = [v for _, v in est.ladder]
    assert values[0] < values[1] < 1.0


def test_kappa_range_checked(a3):
    with pytest.raises(OutOfRange):
        kappa_on_lattice(a3, 1.5)


def test_E_alpha_small_alpha_and_sandwich():
    latt = build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5))
    est_small = estimate_E_alpha([latt], 1e-3)
    assert est_small.constant == pytest.approx(1.0, abs=5e-3)
    est = estimate_E_alpha([latt], 2.0)
    w = quasi_norm(latt.alg, latt.coords, "heisenberg_rho") ** -2.0
    L = sublaplacian(latt)
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = rng.standard_normal(latt.n)
        assert 0 <= est.constant <= (u @ (L @ u)) / (u @ (w * u))
    with pytest.raises(OutOfRange):
        estimate_E_alpha([latt], 4.0)


def test_weight_values_examples():
    h = heisenberg(1)
    vals = weight_values(h, np.array([[1.0, 0, 0], [0.5, 0, 2.0]]))
    np.testing.assert_allclose([vals[k][0] for k in ("inverse_rho_sq", "rho_gradient", "horizontal_inverse")], 1.0)
    assert vals["inverse_rho_sq"][1] == pytest.approx(1 / np.sqrt(0.0625 + 4))
    assert vals["horizontal_inverse"][1] == pytest.approx(4.0)


def test_compare_weights_pointwise():
    rep = compare_weights(build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5)))
    assert rep.pointwise_ok
    assert rep.inverse_rho_sq_le_horizontal == 1.0 and rep.gradient_le_horizontal == 1.0
    # on heisenberg(1) the horizontal constant (m1 - 2)^2 / 2 vanishes
    assert rep.horizontal_constant == 0 and rep.horizontal_side_larger == 0


def test_weight_parse_and_exclusion():
    w = HardyWeight.parse("horizontal_inverse")
    assert w.kind is WeightKind.HORIZONTAL_INVERSE and w.alpha == 2
    latt = build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5, offset=False))
    values, excluded = w.on_lattice(latt)
    on_axis = np.sum(np.all(latt.coords[:, :2] == 0, axis=1))
    assert excluded == on_axis > 0
    assert np.all(np.isfinite(values))
    assert w.on_lattice(build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5)))[1] == 0
