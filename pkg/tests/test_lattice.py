import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from carnot.algebra import abelian, dilate, heisenberg, quasi_norm
from carnot.errors import BudgetExceeded, NonFiniteSample, UnsupportedStep
from carnot.lattice import (
    GridFunction,
    LatticeSpec,
    build_lattice,
    dilation_pullback,
    euler_operator,
    field_operator,
    generator_A,
    gradient_factors,
    horizontal_field_operator,
    is_symmetric,
    multiplication_operator,
    sample,
    sublaplacian,
)

from oracles import filiform_algebra


def _interior(latt, layers):
    return latt.boundary_distance() > layers * latt.h


def test_enumeration_examples():
    latt = build_lattice(abelian(1), LatticeSpec(2.0, 1.0, min_ratio=2.0))
    np.testing.assert_array_equal(latt.coords[:, 0], [-1.5, -0.5, 0.5, 1.5])
    assert build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5)).n == 512


def test_offset_lattice_avoids_identity_and_hyperplanes():
    latt = build_lattice(heisenberg(2), LatticeSpec(2.0, 0.5))
    assert np.all(quasi_norm(latt.alg, latt.coords) > 0)
    assert np.all(latt.coords != 0)


def test_lattice_guards():
    with pytest.raises(ValueError):
        build_lattice(abelian(2), LatticeSpec(1.0, 0.5))
    with pytest.raises(BudgetExceeded):
        build_lattice(abelian(3), LatticeSpec(8.0, 0.125, max_nodes=10_000))


def test_grid_function_inner_product():
    latt = build_lattice(abelian(2), LatticeSpec(2.0, 0.5))
    u = sample(latt, lambda x: np.ones(len(x)))
    assert u.norm() ** 2 == pytest.approx(16.0)
    assert u.inner(u) == pytest.approx(16.0)
    with pytest.raises(ValueError):
        GridFunction(np.ones(3), latt)


def test_centered_difference_exact_on_affine():
    latt = build_lattice(abelian(2), LatticeSpec(2.0, 0.25))
    inside = _interior(latt, 1.5)
    for j in (1, 2):
        xj = latt.coords[:, j - 1]
        np.testing.assert_allclose((horizontal_field_operator(latt, j) @ xj)[inside], 1.0, rtol=1e-13)
    with pytest.raises(ValueError):
        horizontal_field_operator(latt, 3)


def test_heisenberg_field_stencil_uses_node_coordinate():
    latt = build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5))
    x1 = field_operator(latt, 1)
    t = latt.coords[:, 2]
    inside = _interior(latt, 1.5)
    # X1 t = 2 x2 exactly (centered difference is exact on affine t)
    np.testing.assert_allclose((x1 @ t)[inside], 2 * latt.coords[inside, 1], atol=1e-12)


def _bump(x):
    return np.exp(-np.sum(x**2, axis=1))


def test_field_commutator_converges_to_vertical_derivative():
    errs = []
    for h in (0.25, 0.125):
        latt = build_lattice(heisenberg(1), LatticeSpec(3.0, h))
        u = _bump(latt.coords)
        x1, x2 = field_operator(latt, 1), field_operator(latt, 2)
        comm = x1 @ (x2 @ u) - x2 @ (x1 @ u)
        dt = -2 * latt.coords[:, 2] * u
        inside = _interior(latt, 3)
        errs.append(np.max(np.abs(comm - (-4) * dt)[inside]) / np.max(np.abs(4 * dt)))
    assert errs[1] < errs[0] / 3


@pytest.mark.parametrize("alg", [abelian(1), abelian(2), heisenberg(1), filiform_algebra()])
def test_sublaplacian_psd_and_sum_of_squares(alg):
    latt = build_lattice(alg, LatticeSpec(2.0, 0.5))
    L = sublaplacian(latt)
    assert is_symmetric(L)
    rng = np.random.default_rng(0)
    factors = gradient_factors(latt)
    for _ in range(100):
        u = rng.standard_normal(latt.n)
        q = u @ (L @ u)
        assert q >= 0
        ref = sum(float(np.sum((d @ u) ** 2)) for d in factors)
        assert q == pytest.approx(ref, rel=1e-12)


def test_one_dimensional_dirichlet_chain():
    latt = build_lattice(abelian(1), LatticeSpec(4.0, 0.5))
    n, h = latt.n, latt.h
    ref = (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h**2
    np.testing.assert_allclose(sublaplacian(latt).toarray(), ref, atol=1e-12)
    lam = np.linalg.eigvalsh(ref)
    assert lam[0] == pytest.approx(4 / h**2 * math.sin(math.pi / (2 * (n + 1))) ** 2, rel=1e-12)


def test_smallest_dirichlet_eigenvalue_limit():
    R = 4.0
    vals = []
    for h in (0.25, 0.0625):
        latt = build_lattice(abelian(1), LatticeSpec(R, h))
        vals.append(np.linalg.eigvalsh(sublaplacian(latt).toarray())[0])
    target = math.pi**2 / (2 * R) ** 2
    assert abs(vals[1] - target) < abs(vals[0] - target)
    assert vals[1] == pytest.approx(target, rel=0.02)


def test_five_point_stencil_spectrum():
    latt = build_lattice(abelian(2), LatticeSpec(2.0, 0.5))
    lam = np.linalg.eigvalsh(sublaplacian(latt).toarray())
    assert lam.min() > 0 and lam.max() <= 8 / latt.h**2
    L = sublaplacian(latt).toarray()
    assert L[0, 0] == pytest.approx(4 / latt.h**2)


def _heisenberg_laplacian_of_gaussian(x):
    x1, x2, t = x.T
    f = -2 * x1 - 4 * x2 * t
    g = -2 * x2 + 4 * x1 * t
    return (-4 - 8 * x1**2 - 8 * x2**2 + f**2 + g**2) * np.exp(-(x1**2 + x2**2 + t**2))


@pytest.mark.parametrize("alg,exact", [
    (abelian(2), lambda x: (4 - 4 * np.sum(x**2, axis=1)) * np.exp(-np.sum(x**2, axis=1))),
    (heisenberg(1), lambda x: -_heisenberg_laplacian_of_gaussian(x)),
])
def test_sublaplacian_second_order_convergence(alg, exact):
    errs = []
    for h in (0.25, 0.125):
        latt = build_lattice(alg, LatticeSpec(4.0, h))
        u = np.exp(-np.sum(latt.coords**2, axis=1))
        inside = np.all(np.abs(latt.coords) < 2.0, axis=1)
        errs.append(np.max(np.abs(sublaplacian(latt) @ u - exact(latt.coords))[inside]))
    assert 3.0 < errs[0] / errs[1] < 5.0


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.7, 0.7))
def test_dilation_covariance_exact(t):
    latt = build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5))
    lhs = sublaplacian(latt.dilated(t))
    rhs = math.exp(2 * t) * sublaplacian(latt)
    assert abs(lhs - rhs).max() <= 1e-12 * abs(rhs).max()


def test_generator_hermitian_and_euler_adjoint():
    defects = []
    for h in (0.25, 0.125):
        latt = build_lattice(abelian(2), LatticeSpec(4.0, h))
        A = generator_A(latt)
        assert abs(A - A.conj().T).max() == 0
        E = euler_operator(latt)
        u = np.exp(-np.sum(latt.coords**2, axis=1))
        r = (E + E.T) @ u + latt.alg.homogeneous_dimension * u
        defects.append(np.max(np.abs(r)))
    assert defects[1] < defects[0] / 3


def test_generator_hermitian_heisenberg():
    latt = build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5))
    A = generator_A(latt)
    assert abs(A - A.conj().T).max() == 0


def test_euler_operator_needs_callback_for_step3():
    with pytest.raises(UnsupportedStep):
        euler_operator(build_lattice(filiform_algebra(), LatticeSpec(2.0, 0.5)))


def _euler_errors(F, target):
    errs = []
    for h in (0.25, 0.125):
        latt = build_lattice(heisenberg(1), LatticeSpec(3.0, h))
        E = euler_operator(latt)
        x = latt.coords
        keep = _interior(latt, 2) & (quasi_norm(latt.alg, x, "heisenberg_rho") > 1.0)
        errs.append(np.max(np.abs(E @ F(x) - target(x))[keep]))
    return errs


def test_euler_operator_on_homogeneous_functions():
    s = 1.5
    rho = lambda x: quasi_norm(heisenberg(1), x, "heisenberg_rho")
    errs = _euler_errors(lambda x: rho(x) ** s, lambda x: s * rho(x) ** s)
    assert errs[1] < errs[0] / 3
    errs0 = _euler_errors(lambda x: x[:, 2] / rho(x) ** 2, lambda x: np.zeros(len(x)))
    assert errs0[1] < errs0[0] / 3


def test_dilation_pullback_identity_and_near_unitarity():
    latt = build_lattice(heisenberg(1), LatticeSpec(3.0, 0.25))
    assert abs(dilation_pullback(latt, 0.0) - sp.identity(latt.n)).max() == 0
    u = np.exp(-2 * np.sum(latt.coords**2, axis=1))
    for t in (-0.2, 0.1, 0.2):
        ratio = np.linalg.norm(dilation_pullback(latt, t) @ u) / np.linalg.norm(u)
        assert abs(ratio - 1) < 0.05


def test_dilation_pullback_dyadic_exactness():
    latt = build_lattice(abelian(1), LatticeSpec(4.0, 0.25, offset=False))
    P = dilation_pullback(latt, math.log(2))
    # every row hits one node with weight sqrt(2) (or leaves the box)
    np.testing.assert_allclose(P.data, math.sqrt(2), rtol=1e-14)
    assert np.all(np.diff(P.indptr) <= 1)
    u = np.exp(-latt.coords[:, 0] ** 2)
    inside = np.abs(latt.coords[:, 0]) <= 1.75
    np.testing.assert_allclose((P @ u)[inside], math.sqrt(2) * np.exp(-4 * latt.coords[inside, 0] ** 2), rtol=1e-12)
    # relabelled lattice: the same values with the dilated cell volume are exactly unitary
    moved = latt.dilated(math.log(2))
    v = math.exp(latt.alg.homogeneous_dimension * math.log(2) / 2) * u
    assert moved.cell_volume * v @ v == pytest.approx(latt.cell_volume * u @ u, rel=1e-12)


def test_multiplication_operator():
    latt = build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5))
    one = multiplication_operator(latt, lambda x: np.ones(len(x)))
    assert abs(one - sp.identity(latt.n)).max() == 0
    a = multiplication_operator(latt, lambda x: x[:, 0])
    b = multiplication_operator(latt, lambda x: x[:, 2] ** 2)
    assert abs(a @ b - b @ a).max() == 0
    w = multiplication_operator(latt, lambda x: quasi_norm(latt.alg, x) ** -2.5).diagonal()
    assert np.all(np.isfinite(w)) and np.all(w > 0)
    with pytest.raises(NonFiniteSample):
        multiplication_operator(latt, lambda x: np.full(len(x), np.nan))


def test_dilate_consistent_with_relabelled_lattice():
    latt = build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5))
    t = 0.3
    np.testing.assert_allclose(latt.dilated(t).coords, dilate(latt.alg, -t, latt.coords), rtol=1e-14)
