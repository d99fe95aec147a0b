"""Finite-difference realization of left-invariant operators on a box of the group.

Nodes live on a tensor grid in exponential coordinates.  Boundary handling is
Dirichlet: grid functions vanish on the ghost layer one spacing beyond the
outermost nodes on every axis.  Node ordering is C order over the axes.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .algebra import StratifiedAlgebra, dilate, vector_field_coefficients
from .errors import BudgetExceeded, NonFiniteSample, UnsupportedStep

FieldCallback = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LatticeSpec:
    """Box ``[-R, R]^m`` sampled with spacing ``h``.

    With ``offset`` the grid is shifted by ``h/2`` so that no node sits on a
    coordinate hyperplane (in particular not at the identity).
    """

    radius: float
    spacing: float
    offset: bool = True
    max_nodes: int = 4_000_000
    min_ratio: float = 4.0

    def axis(self) -> np.ndarray:
        r, h = float(self.radius), float(self.spacing)
        if self.offset:
            count = 2 * int(math.floor(r / h + 1e-9))
            return (np.arange(count) - (count - 1) / 2.0) * h
        k = int(math.ceil(r / h - 1e-9)) - 1
        return np.arange(-k, k + 1) * h


class Lattice:
    """Tensor grid of nodes for a given algebra.

    ``fields`` optionally overrides the left-invariant coefficient map; it must
    return an array ``a[..., k, j]`` (coefficient of ``d/dx_k`` in ``X_j``).
    """

    def __init__(
        self,
        alg: StratifiedAlgebra,
        axes: Sequence[np.ndarray],
        spacings: Sequence[float],
        spec: LatticeSpec | None = None,
        fields: FieldCallback | None = None,
    ):
        if len(axes) != alg.dim or len(spacings) != alg.dim:
            raise ValueError("need one axis per coordinate")
        self.alg = alg
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.spacings = np.asarray(spacings, dtype=float)
        self.spec = spec
        self.fields = fields

    # ---- geometry
    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def n(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dim(self) -> int:
        return self.alg.dim

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def h(self) -> float:
        """Spacing of the first axis (the uniform spacing for isotropic grids)."""
        return float(self.spacings[0])

    @functools.cached_property
    def coords(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @functools.cached_property
    def ext_axes(self) -> tuple[np.ndarray, ...]:
        """Axes extended by the low ghost layer (base points of forward differences)."""
        return tuple(np.concatenate([[a[0] - h], a]) for a, h in zip(self.axes, self.spacings))

    def boundary_distance(self) -> np.ndarray:
        """Distance from each node to the nearest ghost hyperplane, in units of each axis."""
        dist = np.full(self.n, np.inf)
        grids = np.meshgrid(*self.axes, indexing="ij")
        for g, a, h in zip(grids, self.axes, self.spacings):
            lo, hi = a[0] - h, a[-1] + h
            dist = np.minimum(dist, np.minimum(g.ravel() - lo, hi - g.ravel()))
        return dist

    def field_coefficients(self, points) -> np.ndarray:
        if self.fields is not None:
            return np.asarray(self.fields(points), dtype=float)
        return vector_field_coefficients(self.alg, points)

    def dilated(self, t: float) -> "Lattice":
        """Lattice whose node ``i`` sits at ``dil_{-t}`` of node ``i`` here.

        Under this node identification ``Dil(t)`` is the exact unitary map
        ``u -> exp(M t / 2) u`` (cell volumes scale by ``exp(-M t)``).
        """
        s = np.exp(-t * self.alg.weights)
        return Lattice(self.alg, [a * f for a, f in zip(self.axes, s)], self.spacings * s,
                       spec=None, fields=self.fields)

    def __repr__(self):
        return f"Lattice({self.alg!r}, shape={self.shape}, h={self.spacings.tolist()})"


def build_lattice(alg: StratifiedAlgebra, spec: LatticeSpec, fields: FieldCallback | None = None) -> Lattice:
    if spec.radius <= 0 or spec.spacing <= 0:
        raise ValueError("radius and spacing must be positive")
    if spec.radius / spec.spacing < spec.min_ratio - 1e-12:
        raise ValueError(f"R/h = {spec.radius / spec.spacing:.3g} < {spec.min_ratio:g}")
    axis = spec.axis()
    count = len(axis) ** alg.dim
    if count > spec.max_nodes:
        raise BudgetExceeded(f"{count} nodes exceed the budget of {spec.max_nodes}")
    return Lattice(alg, [axis] * alg.dim, [spec.spacing] * alg.dim, spec=spec, fields=fields)


# --------------------------------------------------------------------------- grid functions

@dataclass
class GridFunction:
    values: np.ndarray
    lattice: Lattice

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.lattice.n,):
            raise ValueError(f"expected {self.lattice.n} values, got {self.values.shape}")

    def inner(self, other: "GridFunction") -> complex:
        return self.lattice.cell_volume * np.vdot(self.values, other.values)

    def norm(self) -> float:
        return math.sqrt(self.lattice.cell_volume) * float(np.linalg.norm(self.values))


def sample(lattice: Lattice, func: Callable[[np.ndarray], np.ndarray]) -> GridFunction:
    return GridFunction(np.asarray(func(lattice.coords)), lattice)


# --------------------------------------------------------------------------- operators

def _kron_all(mats):
    return functools.reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


def _centered(lattice: Lattice, k: int) -> sp.csr_matrix:
    mats = []
    for axis, (a, h) in enumerate(zip(lattice.axes, lattice.spacings)):
        n = len(a)
        if axis == k:
            mats.append(sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1]) / (2 * h))
        else:
            mats.append(sp.identity(n))
    return _kron_all(mats)


def _forward_parts(lattice: Lattice, k: int):
    """(shift_k, embed) mapping node values to ghost-extended base points."""
    shift, embed = [], []
    for axis, a in enumerate(lattice.axes):
        n = len(a)
        e = sp.eye(n + 1, n, k=-1)
        embed.append(e)
        shift.append(sp.eye(n + 1, n, k=0) if axis == k else e)
    return _kron_all(shift), _kron_all(embed)


def _active_directions(coeffs: np.ndarray, j: int, tol: float = 0.0):
    return [k for k in range(coeffs.shape[-2]) if np.any(np.abs(coeffs[:, k, j]) > tol)]


def field_operator(lattice: Lattice, j: int) -> sp.csr_matrix:
    """Centered-difference discretization of ``X_j`` (``j`` is 1-based)."""
    coeffs = lattice.field_coefficients(lattice.coords)
    col = j - 1
    op = sp.csr_matrix((lattice.n, lattice.n))
    for k in _active_directions(coeffs, col):
        op = op + sp.diags(coeffs[:, k, col]) @ _centered(lattice, k)
    return op.tocsr()


def horizontal_field_operator(lattice: Lattice, j: int) -> sp.csr_matrix:
    if not 1 <= j <= lattice.alg.first_layer_dim:
        raise ValueError(f"horizontal index j={j} outside 1..{lattice.alg.first_layer_dim}")
    return field_operator(lattice, j)


def gradient_factors(lattice: Lattice) -> list[sp.csr_matrix]:
    """One-sided factors ``D_j`` with ``-Delta = sum_j D_j^T D_j``.

    ``(D_j u)(x) = sum_k a_kj(x) (u(x + h_k e_k) - u(x)) / h_k`` evaluated at every
    node and at the low ghost layer, so both ends of every axis are Dirichlet.
    """
    ext_grid = np.meshgrid(*lattice.ext_axes, indexing="ij")
    ext = np.stack([g.ravel() for g in ext_grid], axis=-1)
    coeffs = lattice.field_coefficients(ext)
    factors = []
    cache = {}
    for j in range(lattice.alg.first_layer_dim):
        d = None
        for k in _active_directions(coeffs, j):
            if k not in cache:
                cache[k] = _forward_parts(lattice, k)
            shift, embed = cache[k]
            term = sp.diags(coeffs[:, k, j] / lattice.spacings[k]) @ (shift - embed)
            d = term if d is None else d + term
        factors.append(d.tocsr())
    return factors


def sublaplacian(lattice: Lattice) -> sp.csr_matrix:
    """Positive semidefinite ``-Delta`` assembled as a sum of squares."""
    out = None
    for d in gradient_factors(lattice):
        term = (d.T @ d).tocsr()
        out = term if out is None else out + term
    out = out.tocsr()
    out.sum_duplicates()
    return out


def euler_operator(lattice: Lattice) -> sp.csr_matrix:
    """``E = sum_j nu_j x_j X_j`` with centered-difference fields.

    For step > 2 the literal formula no longer matches the dilation generator in
    exponential coordinates, so a ``fields`` callback is required there.
    """
    alg = lattice.alg
    if alg.step > 2 and lattice.fields is None:
        raise UnsupportedStep("Euler operator needs a field callback for step > 2")
    coeffs = lattice.field_coefficients(lattice.coords)
    x = lattice.coords
    op = sp.csr_matrix((lattice.n, lattice.n))
    centered = {}
    for j in range(alg.dim):
        for k in _active_directions(coeffs, j):
            if k not in centered:
                centered[k] = _centered(lattice, k)
            op = op + sp.diags(alg.weights[j] * x[:, j] * coeffs[:, k, j]) @ centered[k]
    return op.tocsr()


def generator_A(lattice: Lattice, euler: sp.spmatrix | None = None) -> sp.csr_matrix:
    """Hermitian dilation generator ``A = (E - E^T) / (2i)``."""
    e = euler_operator(lattice) if euler is None else euler
    return ((e - e.T) / 2j).tocsr()


def dilation_pullback(lattice: Lattice, t: float) -> sp.csr_matrix:
    """``[Dil(t) u](x) = exp(M t / 2) u(dil_t x)`` by multilinear interpolation.

    Ghost nodes carry the value 0, so the interpolant decays linearly to zero
    across the last cell and vanishes outside the box.
    """
    alg = lattice.alg
    y = dilate(alg, t, lattice.coords)
    n, m = y.shape
    frac = np.empty_like(y)
    for k, (a, h) in enumerate(zip(lattice.axes, lattice.spacings)):
        frac[:, k] = (y[:, k] - a[0]) / h
    # snap to the grid so exact node hits do not pick up rounding noise
    snapped = np.round(frac)
    frac = np.where(np.abs(frac - snapped) < 1e-10, snapped, frac)
    base = np.floor(frac).astype(np.int64)
    wgt = frac - base
    shape = np.array(lattice.shape)
    strides = np.array([int(np.prod(shape[k + 1:])) for k in range(m)], dtype=np.int64)
    rows, cols, vals = [], [], []
    row_idx = np.arange(n)
    for corner in range(2**m):
        bits = np.array([(corner >> k) & 1 for k in range(m)])
        idx = base + bits
        w = np.prod(np.where(bits, wgt, 1.0 - wgt), axis=1)
        ok = np.all((idx >= 0) & (idx < shape), axis=1) & (w != 0)
        rows.append(row_idx[ok])
        cols.append(idx[ok] @ strides)
        vals.append(w[ok])
    scale = math.exp(alg.homogeneous_dimension * t / 2.0)
    mat = sp.csr_matrix(
        (scale * np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    mat.sum_duplicates()
    return mat


def multiplication_operator(lattice: Lattice, f: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> sp.csr_matrix:
    values = np.asarray(f(lattice.coords) if callable(f) else f, dtype=float)
    if values.shape != (lattice.n,):
        values = np.broadcast_to(values, (lattice.n,)).copy()
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.isfinite(values)))
        raise NonFiniteSample(f"non-finite sample at node {lattice.coords[bad].tolist()}")
    return sp.diags(values).tocsr()


def is_symmetric(op, rtol: float = 1e-12) -> bool:
    op = sp.csr_matrix(op)
    scale = abs(op).max() if op.nnz else 0.0
    diff = op - op.T.conj()
    return (abs(diff).max() if diff.nnz else 0.0) <= rtol * max(scale, 1e-300)
