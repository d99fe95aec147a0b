"""Spectral calculus for the discrete sublaplacian and eigen-solvers.

Three factorizations are provided, all exposing ``apply(v, s)`` for ``Op^s v``:

* :class:`DenseFactorization` - full ``eigh``; used up to a few thousand nodes.
* :class:`SeparableFactorization` - Kronecker-sum operators (abelian algebras),
  diagonalized exactly by the orthonormal type-I sine transform.
* :class:`LanczosFactorization` - Krylov approximation of ``f(Op) v`` for large
  non-separable operators, with a reported convergence estimate.
"""
from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import FactorizationFailure, NegativeEigenvalue, NonConvergence
from .lattice import Lattice, sublaplacian

NEG_TOL = 1e-10
DENSE_LIMIT = 5000


def _power(lam: np.ndarray, s: float) -> np.ndarray:
    if s == 0:
        return np.ones_like(lam)
    lam = np.clip(lam, 0.0, None)
    if s < 0 and np.any(lam == 0):
        raise NegativeEigenvalue("negative power of an operator with a kernel")
    return lam**s


def _check_spectrum(lam: np.ndarray, scale: float):
    if lam.size and lam.min() < -NEG_TOL * max(scale, 1.0):
        raise NegativeEigenvalue(f"smallest eigenvalue {lam.min():.3e} below tolerance")


class DenseFactorization:
    """``Op = Q diag(lam) Q^T`` from a dense symmetric eigendecomposition."""

    def __init__(self, op):
        mat = op.toarray() if sp.issparse(op) else np.asarray(op, dtype=float)
        mat = 0.5 * (mat + mat.T)
        try:
            lam, q = scipy.linalg.eigh(mat)
        except np.linalg.LinAlgError as exc:
            raise FactorizationFailure(str(exc)) from exc
        _check_spectrum(lam, np.abs(lam).max(initial=0.0))
        self.eigenvalues = lam
        self.eigenvectors = q
        self.n = len(lam)

    def apply(self, v, s: float):
        v = np.asarray(v)
        if s == 0:
            return v.copy()
        q = self.eigenvectors
        out = q @ (_power(self.eigenvalues, s)[:, None] * (q.T @ v.reshape(self.n, -1)))
        return out.reshape(v.shape)

    def matrix(self, s: float) -> np.ndarray:
        q = self.eigenvectors
        return (q * _power(self.eigenvalues, s)) @ q.T

    def reconstruction_error(self, op) -> float:
        mat = op.toarray() if sp.issparse(op) else np.asarray(op)
        return float(np.linalg.norm(self.matrix(1.0) - mat, 2) / max(np.linalg.norm(mat, 2), 1e-300))

    def orthonormality_error(self) -> float:
        q = self.eigenvectors
        return float(np.abs(q.T @ q - np.eye(self.n)).max())


class SeparableFactorization:
    """Dirichlet Kronecker-sum Laplacian on a tensor grid.

    Axis ``k`` with ``N`` nodes and spacing ``h`` contributes eigenvalues
    ``4/h^2 sin^2(j pi / (2(N+1)))``; eigenvectors are the DST-I modes.
    """

    def __init__(self, shape, spacings):
        self.shape = tuple(int(n) for n in shape)
        self.spacings = np.asarray(spacings, dtype=float)
        self.n = int(np.prod(self.shape))
        self.axis_eigenvalues = [
            4.0 / h**2 * np.sin(np.arange(1, n + 1) * np.pi / (2 * (n + 1))) ** 2
            for n, h in zip(self.shape, self.spacings)
        ]

    @functools.cached_property
    def eigenvalues_grid(self) -> np.ndarray:
        total = np.zeros(self.shape)
        for k, lam in enumerate(self.axis_eigenvalues):
            idx = [None] * len(self.shape)
            idx[k] = slice(None)
            total = total + lam[tuple(idx)]
        return total

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.sort(self.eigenvalues_grid.ravel())

    def apply(self, v, s: float):
        v = np.asarray(v)
        if s == 0:
            return v.copy()
        if v.ndim == 2:
            return np.stack([self.apply(v[:, i], s) for i in range(v.shape[1])], axis=1)
        g = scipy.fft.dstn(v.reshape(self.shape), type=1, norm="ortho")
        g *= _power(self.eigenvalues_grid, s)
        return scipy.fft.dstn(g, type=1, norm="ortho").reshape(v.shape)

    def matrix(self, s: float) -> np.ndarray:
        return self.apply(np.eye(self.n), s)

    def apply_function(self, v, func):
        """``func(Op) v`` for a vectorized scalar function ``func``."""
        g = scipy.fft.dstn(np.asarray(v).reshape(self.shape), type=1, norm="ortho")
        g *= func(self.eigenvalues_grid)
        return scipy.fft.dstn(g, type=1, norm="ortho").reshape(np.shape(v))


class LanczosFactorization:
    """Krylov evaluation of ``Op^s v`` with full reorthogonalization.

    ``last_error`` holds the relative change between the last two Krylov
    approximations of the most recent call (the reported error estimate).
    """

    def __init__(self, op, maxiter: int = 400, tol: float = 1e-10):
        self.op = sp.csr_matrix(op)
        self.n = self.op.shape[0]
        self.maxiter = maxiter
        self.tol = tol
        self.last_error = 0.0
        self.last_steps = 0

    def _apply_real(self, v, s):
        beta0 = np.linalg.norm(v)
        if beta0 == 0:
            return np.zeros_like(v)
        kmax = min(self.maxiter, self.n)
        q = np.empty((kmax + 1, self.n))
        q[0] = v / beta0
        alphas, betas = [], []
        prev = None
        err = np.inf
        for k in range(kmax):
            w = self.op @ q[k]
            a = float(q[k] @ w)
            alphas.append(a)
            w -= q[: k + 1].T @ (q[: k + 1] @ w)
            w -= q[: k + 1].T @ (q[: k + 1] @ w)
            b = float(np.linalg.norm(w))
            done = b <= 1e-13 * max(abs(a), 1.0)
            if done or k % 5 == 4 or k == kmax - 1:
                theta, z = scipy.linalg.eigh_tridiagonal(np.array(alphas), np.array(betas))
                if theta.min() < -NEG_TOL * max(abs(theta).max(), 1.0):
                    raise NegativeEigenvalue("Krylov Ritz value below zero")
                y = beta0 * (q[: k + 1].T @ (z @ (_power(theta, s) * z[0])))
                if prev is not None:
                    err = np.linalg.norm(y - prev) / max(np.linalg.norm(y), 1e-300)
                prev = y
                if done or err <= self.tol:
                    self.last_error = 0.0 if done else float(err)
                    self.last_steps = k + 1
                    return y
            betas.append(b)
            q[k + 1] = w / b
        raise NonConvergence(f"Lanczos f(A)v stalled at relative change {err:.2e} after {kmax} steps")

    def apply(self, v, s: float):
        v = np.asarray(v)
        if s == 0:
            return v.copy()
        if v.ndim == 2:
            return np.stack([self.apply(v[:, i], s) for i in range(v.shape[1])], axis=1)
        if s == 1:
            return self.op @ v
        if np.iscomplexobj(v):
            return self._apply_real(v.real.copy(), s) + 1j * self._apply_real(v.imag.copy(), s)
        return self._apply_real(v.astype(float), s)


def factorize(op, dense_limit: int = DENSE_LIMIT):
    n = op.shape[0]
    if n <= dense_limit:
        return DenseFactorization(op)
    return LanczosFactorization(op)


def sublaplacian_factorization(lattice: Lattice, dense_limit: int = DENSE_LIMIT, op=None):
    """Factorization of ``-Delta`` on ``lattice``, separable whenever the algebra is abelian."""
    if lattice.alg.is_abelian and lattice.fields is None:
        return SeparableFactorization(lattice.shape, lattice.spacings)
    return factorize(sublaplacian(lattice) if op is None else op, dense_limit)


class SpectralPower(spla.LinearOperator):
    """``Op^s`` as a linear operator backed by a factorization."""

    def __init__(self, fact, s: float):
        self.fact = fact
        self.s = float(s)
        super().__init__(dtype=np.float64, shape=(fact.n, fact.n))

    def _matvec(self, v):
        return self.fact.apply(np.asarray(v).ravel(), self.s)

    def _matmat(self, v):
        return self.fact.apply(np.asarray(v), self.s)

    def _rmatvec(self, v):
        return self._matvec(v)

    def dense(self) -> np.ndarray:
        if isinstance(self.fact, (DenseFactorization, SeparableFactorization)):
            return self.fact.matrix(self.s)
        return self.fact.apply(np.eye(self.fact.n), self.s)


def fractional_power(fact, s: float):
    """``Op^s`` for ``s >= 0`` (negative ``s`` gives the inverse powers used internally)."""
    if s == 1 and isinstance(fact, LanczosFactorization):
        return fact.op
    return SpectralPower(fact, s)


def sobolev_norm(fact, u, sigma: float, cell_volume: float = 1.0) -> float:
    """Homogeneous Sobolev norm ``||(-Delta)^{sigma/2} u||`` in the lattice inner product."""
    return float(np.sqrt(cell_volume) * np.linalg.norm(fact.apply(np.asarray(u), sigma / 2.0)))


# --------------------------------------------------------------------------- eigen-solvers

def as_dense(op) -> np.ndarray:
    if sp.issparse(op):
        return op.toarray()
    if isinstance(op, SpectralPower):
        return op.dense()
    if isinstance(op, spla.LinearOperator):
        return op @ np.eye(op.shape[0])
    return np.asarray(op)


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _sum_operator(op, diag):
    """``op + diag(diag)`` keeping sparse operators sparse."""
    if sp.issparse(op):
        return (op + sp.diags(diag)).tocsr()
    if isinstance(op, np.ndarray):
        return op + np.diag(diag)
    return spla.aslinearoperator(op) + spla.aslinearoperator(sp.diags(diag))


def lowest_eigenpairs(
    op,
    k: int = 1,
    precond=None,
    x0=None,
    tol: float = 1e-9,
    maxiter: int = 1000,
    dense_limit: int = 1500,
    seed: int = 0,
) -> EigenResult:
    """Smallest ``k`` eigenpairs of a real symmetric operator.

    Dense ``eigh`` below ``dense_limit``; otherwise LOBPCG with the given
    preconditioner, seeded for reproducibility.  ``tol`` is relative to the
    operator scale estimated from the Ritz values.
    """
    n = op.shape[0]
    if n <= dense_limit:
        mat = as_dense(op)
        mat = 0.5 * (mat + mat.T)
        lam, vec = scipy.linalg.eigh(mat, subset_by_index=[0, min(k, n) - 1])
        return EigenResult(lam, vec, np.zeros(len(lam)))
    rng = np.random.default_rng(seed)
    block = max(k, 1) + 2
    x = rng.standard_normal((n, block))
    if x0 is not None:
        x0 = np.asarray(x0).reshape(n, -1)
        x[:, : x0.shape[1]] = x0
    a = spla.aslinearoperator(op)
    m = spla.aslinearoperator(precond) if precond is not None else None
    lam, vec = None, None
    for _ in range(3):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            lam, vec = spla.lobpcg(a, x, M=m, tol=tol, maxiter=maxiter, largest=False, verbosityLevel=0)
        order = np.argsort(lam)
        lam, vec = lam[order], vec[:, order]
        r = a @ vec - vec * lam
        res = np.linalg.norm(r, axis=0) / np.linalg.norm(vec, axis=0)
        scale = max(np.abs(lam).max(), 1.0)
        if np.all(res[:k] <= tol * scale * 10) or np.all(res[:k] <= 1e-7 * scale):
            return EigenResult(lam[:k], vec[:, :k], res[:k])
        x = vec
    raise NonConvergence(f"LOBPCG residuals {res[:k]} above tolerance")


def largest_eigenvalue(op, tol: float = 1e-10, dense_limit: int = 1500, seed: int = 0) -> tuple[float, np.ndarray]:
    n = op.shape[0]
    if n <= dense_limit:
        mat = as_dense(op)
        lam, vec = scipy.linalg.eigh(0.5 * (mat + mat.T), subset_by_index=[n - 1, n - 1])
        return float(lam[0]), vec[:, 0]
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        lam, vec = spla.eigsh(spla.aslinearoperator(op), k=1, which="LA", tol=tol, v0=v0, maxiter=20 * n)
    except spla.ArpackNoConvergence as exc:
        raise NonConvergence(str(exc)) from exc
    return float(lam[0]), vec[:, 0]
