"""Hardy-type inequalities on lattices: operator norms, optimal constants, weights.

Conventions: ``kappa_{2 beta} = || qnorm^{-beta} (-Delta)^{-beta/2} ||`` so that
``<L^alpha u, u> >= kappa_alpha^{-2} <qnorm^{-alpha} u, u>`` with ``alpha = 2 beta``.

Bias of the discrete numbers: Dirichlet truncation raises Rayleigh quotients
(optimal constants biased up, kappa biased down); the grid error has no sign.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .algebra import (
    QuasiNorm,
    StratifiedAlgebra,
    as_quasi_norm,
    horizontal_part,
    quasi_norm,
    rho_gradient_weight,
)
from .errors import FactorizationFailure, NonConvergence, OutOfRange
from .lattice import Lattice, sublaplacian
from .spectral import (
    DenseFactorization,
    SeparableFactorization,
    SpectralPower,
    as_dense,
    largest_eigenvalue,
    lowest_eigenpairs,
    sublaplacian_factorization,
)

EIG_TOL = 1e-9
BISECT_RTOL = 1e-3


class WeightKind(enum.Enum):
    QNORM_POWER = "qnorm_power"
    RHO_GRADIENT = "rho_gradient"
    HORIZONTAL_INVERSE = "horizontal_inverse"
    HEISENBERG_FRACTIONAL = "heisenberg_fractional"


@dataclass(frozen=True)
class HardyWeight:
    """Singular weight ``W`` in an inequality ``L^alpha >= c W``.

    ``alpha`` is the power of ``-Delta^{1/2}`` on the left; the gradient and
    horizontal weights always pair with ``alpha = 2``.
    """

    kind: WeightKind
    alpha: float = 2.0
    quasi_norm: QuasiNorm = field(default_factory=QuasiNorm)

    @classmethod
    def qnorm_power(cls, alpha: float, quasi_norm="power_sum") -> "HardyWeight":
        return cls(WeightKind.QNORM_POWER, float(alpha), as_quasi_norm(quasi_norm))

    @classmethod
    def rho_gradient(cls) -> "HardyWeight":
        return cls(WeightKind.RHO_GRADIENT, 2.0)

    @classmethod
    def horizontal_inverse(cls) -> "HardyWeight":
        return cls(WeightKind.HORIZONTAL_INVERSE, 2.0)

    @classmethod
    def heisenberg_fractional(cls, alpha: float) -> "HardyWeight":
        return cls(WeightKind.HEISENBERG_FRACTIONAL, float(alpha))

    @classmethod
    def parse(cls, kind: str, alpha: float = 2.0, quasi_norm="power_sum") -> "HardyWeight":
        kind = WeightKind(kind)
        if kind is WeightKind.QNORM_POWER:
            return cls.qnorm_power(alpha, quasi_norm)
        if kind is WeightKind.HEISENBERG_FRACTIONAL:
            return cls.heisenberg_fractional(alpha)
        return cls(kind, 2.0)

    def evaluate(self, alg: StratifiedAlgebra, x) -> np.ndarray:
        """Continuum weight at points ``x`` (``inf`` on the singular set)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind is WeightKind.QNORM_POWER:
                return quasi_norm(alg, x, self.quasi_norm) ** (-self.alpha)
            if self.kind is WeightKind.RHO_GRADIENT:
                return rho_gradient_weight(alg, x)
            if self.kind is WeightKind.HORIZONTAL_INVERSE:
                return horizontal_part(alg, x)[1] ** -2.0
            return quasi_norm(alg, x, "heisenberg_rho") ** (-self.alpha)

    def on_lattice(self, lattice: Lattice) -> tuple[np.ndarray, int]:
        """Nodal values and the number of excluded nodes.

        The horizontal weight is singular on a plane; nodes with ``|x~| < h/2``
        get weight 0 (this only weakens the inequality being certified).
        """
        w = self.evaluate(lattice.alg, lattice.coords)
        excluded = 0
        if self.kind is WeightKind.HORIZONTAL_INVERSE:
            hnorm = horizontal_part(lattice.alg, lattice.coords)[1]
            mask = hnorm < lattice.h / 2
            excluded = int(mask.sum())
            w = np.where(mask, 0.0, w)
        if not np.all(np.isfinite(w)):
            raise FactorizationFailure("weight is not finite on the lattice")
        return w, excluded

    def label(self) -> str:
        if self.kind in (WeightKind.QNORM_POWER, WeightKind.HEISENBERG_FRACTIONAL):
            return f"{self.kind.value}({self.alpha:g})"
        return self.kind.value


@dataclass
class HardyEstimate:
    weight: HardyWeight
    exponent: float
    constant: float
    ladder: list[tuple[float, float]]
    converged: bool
    quantity: str = "kappa"
    levels: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "weight": self.weight.label(),
            "exponent": self.exponent,
            "quantity": self.quantity,
            "constant": self.constant,
            "converged": self.converged,
            "ladder": [list(p) for p in self.ladder],
        }


def _converged(values, rtol) -> bool:
    if len(values) < 2:
        return False
    a, b = values[-2], values[-1]
    return abs(b - a) <= rtol * max(abs(b), 1e-300)


# --------------------------------------------------------------------------- kappa

def kappa_on_lattice(lattice: Lattice, beta: float, quasi_norm="power_sum", fact=None, seed: int = 0) -> float:
    """Largest singular value of ``qnorm^{-beta} (-Delta)^{-beta/2}`` on one lattice."""
    alg = lattice.alg
    if not 0 < beta < alg.homogeneous_dimension / 2:
        raise OutOfRange(f"beta={beta} outside (0, M/2) = (0, {alg.homogeneous_dimension / 2})")
    fact = sublaplacian_factorization(lattice) if fact is None else fact
    w2 = quasi_norm_values(lattice, quasi_norm) ** (-2.0 * beta)

    def mv(v):
        p = fact.apply(np.asarray(v).ravel(), -beta / 2)
        return fact.apply(w2 * p, -beta / 2)

    op = spla.LinearOperator((lattice.n, lattice.n), matvec=mv, dtype=float)
    lam, _ = largest_eigenvalue(op, tol=1e-10, seed=seed)
    return math.sqrt(lam)


def quasi_norm_values(lattice: Lattice, kind="power_sum") -> np.ndarray:
    return quasi_norm(lattice.alg, lattice.coords, kind)


def estimate_kappa(lattices, beta: float, quasi_norm="power_sum", rtol: float = 0.05, seed: int = 0) -> HardyEstimate:
    """``kappa_{2 beta}`` along a refinement ladder of lattices."""
    ladder, levels = [], []
    for latt in lattices:
        t0 = time.perf_counter()
        k = kappa_on_lattice(latt, beta, quasi_norm, seed=seed)
        ladder.append((latt.h, k))
        levels.append({"h": latt.h, "n": latt.n, "estimate": k, "seconds": time.perf_counter() - t0})
    values = [v for _, v in ladder]
    return HardyEstimate(
        HardyWeight.qnorm_power(2 * beta, quasi_norm), beta, values[-1], ladder,
        _converged(values, rtol), "kappa", levels,
    )


# --------------------------------------------------------------------------- positivity

def hardy_operator(lattice: Lattice, alpha: float, fact=None):
    """``L^alpha`` on the lattice: sparse ``-Delta`` for ``alpha = 2`` else a spectral power."""
    if alpha == 2:
        return sublaplacian(lattice)
    fact = sublaplacian_factorization(lattice) if fact is None else fact
    return SpectralPower(fact, alpha / 2)


def _preconditioner(lattice: Lattice, alpha: float, op, fact=None):
    """Approximate inverse of ``L^alpha`` used by LOBPCG."""
    n = lattice.n
    if fact is None and lattice.alg.is_abelian and lattice.fields is None:
        fact = SeparableFactorization(lattice.shape, lattice.spacings)
    if isinstance(fact, (SeparableFactorization, DenseFactorization)):
        return spla.LinearOperator((n, n), matvec=lambda v: fact.apply(np.asarray(v).ravel(), -alpha / 2),
                                   matmat=lambda v: fact.apply(np.asarray(v), -alpha / 2), dtype=float)
    if sp.issparse(op):
        return amg_preconditioner(op)
    if lattice.n <= 200_000:
        return amg_preconditioner(sublaplacian(lattice))
    return None


def amg_preconditioner(op) -> spla.LinearOperator:
    """One smoothed-aggregation V-cycle as an approximate inverse of a sparse SPD operator."""
    try:
        ml = pyamg.smoothed_aggregation_solver(sp.csr_matrix(op), symmetry="symmetric")
    except Exception as exc:
        raise FactorizationFailure(f"multigrid setup failed: {exc}") from exc
    return ml.aspreconditioner(cycle="V")


class PositivityProblem:
    """Smallest eigenvalue of ``Op - c W`` for a fixed operator and diagonal weight.

    ``Op`` may be sparse, dense or a linear operator.  Small problems are solved
    densely; larger ones with preconditioned LOBPCG, warm-started from the
    previous eigenvector.
    """

    def __init__(self, op, weight_values, precond=None, dense_limit: int = 1500, seed: int = 0,
                 tol: float = EIG_TOL):
        self.op = op
        self.w = np.asarray(weight_values, dtype=float)
        self.n = len(self.w)
        self.precond = precond
        self.dense_limit = dense_limit
        self.seed = seed
        self.tol = tol
        self._dense = as_dense(op) if self.n <= dense_limit else None
        if self._dense is not None:
            self._dense = 0.5 * (self._dense + self._dense.T)
        self._last = None

    def shifted(self, c: float):
        if self._dense is not None:
            return self._dense - c * np.diag(self.w)
        if sp.issparse(self.op):
            return (self.op - c * sp.diags(self.w)).tocsr()
        return spla.aslinearoperator(self.op) - c * spla.aslinearoperator(sp.diags(self.w))

    def margin(self, c: float) -> tuple[float, np.ndarray]:
        res = lowest_eigenpairs(self.shifted(c), 1, precond=self.precond, x0=self._last,
                                tol=self.tol, dense_limit=self.dense_limit, seed=self.seed)
        self._last = res.vectors[:, 0]
        return float(res.values[0]), res.vectors[:, 0]

    def apply_op(self, u):
        return self._dense @ u if self._dense is not None else self.op @ u

    def rayleigh(self, u) -> float:
        u = np.asarray(u)
        return float(np.vdot(u, self.apply_op(u)).real / np.vdot(u, self.w * u).real)

    def generalized_optimum(self) -> float:
        """Direct route: ``1 / max eig(W, Op)`` (dense; for cross-checks on small lattices)."""
        mat = self._dense if self._dense is not None else as_dense(self.op)
        mu = scipy.linalg.eigh(np.diag(self.w), 0.5 * (mat + mat.T), eigvals_only=True)
        return float(1.0 / mu.max())

    def bisect(self, rtol: float = BISECT_RTOL, margin_tol: float = 0.0, max_steps: int = 60):
        """Largest certified ``c`` with ``margin(c) >= -margin_tol``.

        Returns ``(lo, hi, witness)``: ``lo`` is certified, ``hi`` is the
        Rayleigh quotient of an explicit trial vector ``witness``.
        """
        m0, v0 = self.margin(0.0)
        if m0 < -margin_tol:
            raise FactorizationFailure(f"operator is not positive: smallest eigenvalue {m0:.3e}")
        lo, hi, witness = 0.0, self.rayleigh(v0), v0
        for _ in range(max_steps):
            if hi - lo <= rtol * hi:
                break
            c = 0.5 * (lo + hi) if lo > 0 else 0.5 * hi
            m, v = self.margin(c)
            if m >= -margin_tol:
                lo = c
            else:
                rq = self.rayleigh(v)
                if rq < hi:
                    hi, witness = rq, v
                else:
                    hi = c
        else:
            raise NonConvergence("bisection did not reach the requested tolerance")
        return lo, hi, witness


def positivity_problem(lattice: Lattice, weight: HardyWeight, alpha: float | None = None, fact=None,
                       dense_limit: int = 1500, seed: int = 0) -> PositivityProblem:
    alpha = weight.alpha if alpha is None else alpha
    op = hardy_operator(lattice, alpha, fact)
    w, _ = weight.on_lattice(lattice)
    precond = None if lattice.n <= dense_limit else _preconditioner(lattice, alpha, op, fact)
    return PositivityProblem(op, w, precond, dense_limit=dense_limit, seed=seed)


def weighted_positivity(lattice: Lattice, weight: HardyWeight, c: float, alpha: float | None = None,
                        fact=None, seed: int = 0) -> float:
    """Smallest eigenvalue of ``L^alpha - c W``; nonnegative means ``L^alpha >= c W`` holds on the grid."""
    return positivity_problem(lattice, weight, alpha, fact, seed=seed).margin(c)[0]


def optimal_constant(lattice: Lattice, weight: HardyWeight, alpha: float | None = None, fact=None,
                     rtol: float = BISECT_RTOL, seed: int = 0) -> tuple[float, float]:
    """Bracket ``(certified, witnessed)`` around the discrete optimal constant."""
    lo, hi, _ = positivity_problem(lattice, weight, alpha, fact, seed=seed).bisect(rtol)
    return lo, hi


def estimate_E_alpha(lattices, alpha: float, rtol: float = 0.1, seed: int = 0) -> HardyEstimate:
    """Discrete best constant in ``(-Delta)^{alpha/2} >= E rho^{-alpha}`` on Heisenberg lattices."""
    ladder, levels = [], []
    weight = HardyWeight.heisenberg_fractional(alpha)
    for latt in lattices:
        d = latt.alg.heisenberg_degree
        if d is None:
            raise OutOfRange("E_alpha is defined on Heisenberg groups")
        if not 0 < alpha < 2 * d + 2:
            raise OutOfRange(f"alpha={alpha} outside (0, {2 * d + 2})")
        t0 = time.perf_counter()
        lo, hi = optimal_constant(latt, weight, alpha, seed=seed)
        ladder.append((latt.h, lo))
        levels.append({"h": latt.h, "n": latt.n, "estimate": lo, "witness": hi,
                       "seconds": time.perf_counter() - t0})
    values = [v for _, v in ladder]
    return HardyEstimate(weight, alpha, values[-1], ladder, _converged(values, rtol), "E_alpha", levels)


def estimate_optimal_constant(lattices, weight: HardyWeight, rtol: float = 0.1, seed: int = 0) -> HardyEstimate:
    """Ladder of discrete optimal constants for any weight paired with its natural power."""
    ladder, levels = [], []
    for latt in lattices:
        t0 = time.perf_counter()
        lo, hi = optimal_constant(latt, weight, seed=seed)
        excluded = weight.on_lattice(latt)[1]
        ladder.append((latt.h, lo))
        levels.append({"h": latt.h, "n": latt.n, "estimate": lo, "witness": hi, "excluded": excluded,
                       "seconds": time.perf_counter() - t0})
    values = [v for _, v in ladder]
    return HardyEstimate(weight, weight.alpha, values[-1], ladder, _converged(values, rtol), "optimal_constant",
                         levels)


# --------------------------------------------------------------------------- weight comparison

@dataclass
class WeightComparison:
    n_nodes: int
    inverse_rho_sq_le_horizontal: float
    gradient_le_horizontal: float
    gradient_constant: float
    horizontal_constant: float
    gradient_side_larger: int
    horizontal_side_larger: int
    witness_gradient_larger: list | None
    witness_horizontal_larger: list | None

    @property
    def pointwise_ok(self) -> bool:
        return self.inverse_rho_sq_le_horizontal == 1.0 and self.gradient_le_horizontal == 1.0

    @property
    def incomparable(self) -> bool:
        return self.gradient_side_larger > 0 and self.horizontal_side_larger > 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__} | {
            "pointwise_ok": self.pointwise_ok, "incomparable": self.incomparable}


def weight_values(alg: StratifiedAlgebra, x) -> dict[str, np.ndarray]:
    """``1/rho^2``, ``(grad rho)^2/rho^2`` and ``1/|x~|^2`` at points ``x``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return {
            "inverse_rho_sq": quasi_norm(alg, x, "heisenberg_rho") ** -2.0,
            "rho_gradient": rho_gradient_weight(alg, x),
            "horizontal_inverse": horizontal_part(alg, x)[1] ** -2.0,
        }


def compare_weights(lattice: Lattice, rtol: float = 1e-12) -> WeightComparison:
    """Nodewise comparison of the gradient and horizontal weights on a Heisenberg lattice.

    The weighted sides carry their optimal Hardy constants,
    ``(M-2)^2/2`` and ``(m1-2)^2/2``.
    """
    alg = lattice.alg
    if alg.heisenberg_degree is None:
        raise ValueError("weight comparison needs a Heisenberg lattice")
    vals = weight_values(alg, lattice.coords)
    hor = vals["horizontal_inverse"]
    slack = 1 + rtol
    c1 = (alg.homogeneous_dimension - 2) ** 2 / 2
    c2 = (alg.first_layer_dim - 2) ** 2 / 2
    lhs, rhs = c1 * vals["rho_gradient"], c2 * hor
    first, second = lhs > rhs, rhs > lhs

    def witness(mask):
        if not mask.any():
            return None
        idx = int(np.argmax(np.where(mask, np.abs(lhs - rhs), -np.inf)))
        return lattice.coords[idx].tolist()

    return WeightComparison(
        lattice.n,
        float(np.mean(vals["inverse_rho_sq"] <= slack * hor)),
        float(np.mean(vals["rho_gradient"] <= slack * hor)),
        c1, c2, int(first.sum()), int(second.sum()), witness(first), witness(second),
    )
