"""Commutator, positivity and resolvent diagnostics for ``H = L^alpha + V`` on a lattice.

What the finite matrices can and cannot say: every report checks the
hypotheses of the conjugate-operator argument (first commutator identity and
positivity, second-commutator domination) and collects spectral evidence
(boundary values of the resolvent, spectral measures, eigenvalue persistence
under refinement).  None of this certifies the spectral type of the continuum
operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    MatchingAmbiguous,
    NonFiniteSample,
    OutOfRange,
    PencilSingular,
    SolveFailure,
    SupportViolation,
    UnsupportedStep,
)
from .hardy import HardyWeight, PositivityProblem, _preconditioner, amg_preconditioner
from .lattice import Lattice, LatticeSpec, build_lattice, dilation_pullback, generator_A, sublaplacian
from .potentials import Potential, euler_derivative, zero_potential
from .spectral import (
    DenseFactorization,
    SeparableFactorization,
    SpectralPower,
    as_dense,
    largest_eigenvalue,
    lowest_eigenpairs,
    sublaplacian_factorization,
)

REPORT_HEADER = (
    "Finite-dimensional surrogate: hypothesis checks, persistence and resolvent trends on a "
    "truncated lattice; no statement about the continuum spectral type is certified."
)


# --------------------------------------------------------------------------- assembly

def _add_diag(op, d):
    if sp.issparse(op):
        return (op + sp.diags(d)).tocsr()
    if isinstance(op, np.ndarray):
        return op + np.diag(d)
    return spla.aslinearoperator(op) + spla.aslinearoperator(sp.diags(d))


def _scale(op, c):
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return c * op
    return c * spla.aslinearoperator(op)


@dataclass
class OperatorTriple:
    """``H = L^a + V``, ``K = a L^a - E V`` and ``K2 = a^2 L^a + E(E V)`` sharing one ``L^a``."""

    lattice: Lattice
    alpha: float
    potential: Potential
    L: object
    H: object
    K: object
    K2: object
    A: object
    v: np.ndarray
    ev: np.ndarray
    eev: np.ndarray
    fact: object = None

    @property
    def n(self) -> int:
        return self.lattice.n


def power_operator(lattice: Lattice, alpha: float, fact=None, dense_limit: int = 5000):
    """``L^alpha`` with the representation best suited to the lattice size.

    Returns ``(operator, factorization)``; the factorization is ``None`` for the
    sparse ``alpha = 2`` case on non-abelian lattices.
    """
    if alpha == 2 and fact is None and not (lattice.alg.is_abelian and lattice.fields is None):
        return sublaplacian(lattice), None
    if alpha == 2 and fact is None:
        return sublaplacian(lattice), SeparableFactorization(lattice.shape, lattice.spacings)
    fact = sublaplacian_factorization(lattice, dense_limit) if fact is None else fact
    if isinstance(fact, DenseFactorization) or (isinstance(fact, SeparableFactorization) and lattice.n <= dense_limit):
        return fact.matrix(alpha / 2), fact
    return SpectralPower(fact, alpha / 2), fact


def assemble_hamiltonian(lattice: Lattice, alpha: float, V: Potential | None = None, fact=None,
                         with_generator: bool = True, check_range: bool = True) -> OperatorTriple:
    """Assemble the triple; ``check_range=False`` admits ``alpha >= M`` (low-dimensional probes)."""
    M = lattice.alg.homogeneous_dimension
    if alpha <= 0 or (check_range and alpha >= M):
        raise OutOfRange(f"alpha={alpha} outside (0, M={M})")
    V = zero_potential(lattice.alg) if V is None else V
    x = lattice.coords
    v = np.asarray(V(x), dtype=float)
    if not np.all(np.isfinite(v)):
        raise NonFiniteSample("potential is not finite on the lattice")
    if V.name == "zero":
        ev = eev = np.zeros(lattice.n)
    else:
        ev = euler_derivative(lattice.alg, V, x, 1)
        eev = euler_derivative(lattice.alg, V, x, 2)
    L, fact = power_operator(lattice, alpha, fact)
    A = None
    if with_generator:
        try:
            A = generator_A(lattice)
        except UnsupportedStep:
            A = None
    return OperatorTriple(
        lattice, float(alpha), V, L,
        _add_diag(L, v), _add_diag(_scale(L, alpha), -ev), _add_diag(_scale(L, alpha**2), eev),
        A, v, ev, eev, fact,
    )


# --------------------------------------------------------------------------- first commutator

@dataclass
class CommutatorCheck:
    t: float
    form: float
    dilation: float
    dilation_interpolated: float
    generator: float | None
    defects: dict = field(default_factory=dict)


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _quad(op, u):
    return float(np.real(np.vdot(u, op @ u)))


def verify_commutator(triple: OperatorTriple, u, t: float = 1e-2, buffer: float = 4.0) -> CommutatorCheck:
    """Three routes to ``<u, [H, iA] u>``.

    (a) ``<u, K u>`` from the assembled K;
    (b) ``(<Dil(t)u, H Dil(t)u> - <Dil(-t)u, H Dil(-t)u>) / 2t`` with the
        dilation realized exactly by relabelling nodes onto the dilated lattice
        (and, for reference, by multilinear interpolation on the same lattice);
    (c) ``<Hu, iAu> + <iAu, Hu>`` from the discrete generator.
    """
    latt = triple.lattice
    u = np.asarray(u.values if hasattr(u, "values") else u)
    support = np.abs(u) > 1e-12 * np.abs(u).max()
    if np.any(latt.boundary_distance()[support] < buffer * latt.h):
        raise SupportViolation(f"u must vanish within {buffer:g}h of the boundary")
    vol = latt.cell_volume
    form = vol * _quad(triple.K, u)

    def relabelled(s):
        sub = latt.dilated(s)
        L, _ = power_operator(sub, triple.alpha)
        H = _add_diag(L, np.asarray(triple.potential(sub.coords), dtype=float))
        return vol * _quad(H, u)

    dil = (relabelled(t) - relabelled(-t)) / (2 * t)

    def interpolated(s):
        w = dilation_pullback(latt, s) @ u
        return vol * _quad(triple.H, w)

    dil_interp = (interpolated(t) - interpolated(-t)) / (2 * t)
    gen = None
    if triple.A is not None:
        hu = triple.H @ u
        iau = 1j * (triple.A @ u)
        gen = float(np.real(vol * (np.vdot(hu, iau) + np.vdot(iau, hu))))
    defects = {"a_b": _rel(form, dil), "a_b_interpolated": _rel(form, dil_interp)}
    if gen is not None:
        defects |= {"a_c": _rel(form, gen), "b_c": _rel(dil, gen)}
    return CommutatorCheck(t, form, dil, dil_interp, gen, defects)


# --------------------------------------------------------------------------- positivity

def positivity_margin(triple: OperatorTriple, weight: HardyWeight | np.ndarray, eps: float,
                      seed: int = 0) -> float:
    """Smallest eigenvalue of ``K - eps W``."""
    latt = triple.lattice
    w = weight.on_lattice(latt)[0] if isinstance(weight, HardyWeight) else np.asarray(weight, dtype=float)
    precond = None
    if latt.n > 1500:
        precond = _preconditioner(latt, triple.alpha, triple.L if sp.issparse(triple.L) else None, triple.fact)
    return PositivityProblem(triple.K, w, precond, seed=seed).margin(eps)[0]


# --------------------------------------------------------------------------- second commutator

@dataclass
class DominationResult:
    C: float
    nu_min: float
    nu_max: float
    verdict: str


def _smallest_power_eigenvalue(triple: OperatorTriple) -> tuple[float, float]:
    fact = triple.fact
    if isinstance(fact, (DenseFactorization, SeparableFactorization)):
        lam = fact.eigenvalues
        p = triple.alpha / 2
        return float(lam.min() ** p), float(lam.max() ** p)
    lmax, _ = largest_eigenvalue(triple.L)
    precond = amg_preconditioner(triple.L) if sp.issparse(triple.L) else None
    return float(lowest_eigenpairs(triple.L, 1, precond=precond).values[0]), lmax


def second_commutator_domination(triple: OperatorTriple, tol: float = 1e-12) -> DominationResult:
    """Smallest ``C`` with ``-C L^a <= K2 <= C L^a``.

    Since ``K2 = a^2 L^a + D`` with ``D = diag(E(E V))``, the pencil extremes are
    ``a^2 + nu`` where ``nu`` ranges over the eigenvalues of ``(D, L^a)``.
    """
    a2 = triple.alpha**2
    lmin, lmax = _smallest_power_eigenvalue(triple)
    if lmin <= tol * lmax:
        raise PencilSingular(f"L^alpha has a numerical kernel (lambda_min = {lmin:.3e})")
    d = triple.eev
    if not np.any(d):
        return DominationResult(a2, 0.0, 0.0, "pass")
    n = triple.n
    fact = triple.fact
    if n <= 1500:
        mat = as_dense(triple.L)
        nu = scipy.linalg.eigh(np.diag(d), 0.5 * (mat + mat.T), eigvals_only=True)
        nu_min, nu_max = float(nu.min()), float(nu.max())
    elif fact is not None:
        p = -triple.alpha / 4

        def mv(v):
            return fact.apply(d * fact.apply(np.asarray(v).ravel(), p), p)

        op = spla.LinearOperator((n, n), matvec=mv, dtype=float)
        nu_max = largest_eigenvalue(op)[0]
        nu_min = -largest_eigenvalue(-op)[0]
    else:
        dm = sp.diags(d).tocsc()
        lcsc = sp.csc_matrix(triple.L)
        v0 = np.random.default_rng(0).standard_normal(n)
        nu_max = float(spla.eigsh(dm, k=1, M=lcsc, which="LA", v0=v0, tol=1e-10)[0][0])
        nu_min = float(spla.eigsh(dm, k=1, M=lcsc, which="SA", v0=v0, tol=1e-10)[0][0])
    C = max(abs(a2 + nu_min), abs(a2 + nu_max))
    return DominationResult(float(C), nu_min, nu_max, "pass" if np.isfinite(C) else "fail")


# --------------------------------------------------------------------------- resolvent probes

@dataclass
class LapCurve:
    lam: float
    eps: np.ndarray
    values: np.ndarray
    slope: float
    classification: str


def level_spacing_floor(eigenvalues) -> float:
    gaps = np.diff(np.sort(np.asarray(eigenvalues)))
    gaps = gaps[gaps > 0]
    return float(np.median(gaps) / 10) if gaps.size else 1e-6


def default_eps_schedule(eigenvalues=None, top: float = 1e-1, steps: int = 6) -> np.ndarray:
    """Geometric schedule from ``top`` down to the level-spacing floor (median gap / 10)."""
    floor = 1e-6 if eigenvalues is None else min(level_spacing_floor(eigenvalues), top / 10)
    return np.geomspace(top, floor, steps)


def classify_slope(eps, values, window: int = 3) -> tuple[float, str]:
    eps, values = np.asarray(eps), np.asarray(values)
    if np.all(values <= 1e-300):
        return 1.0, "bounded"
    idx = np.argsort(eps)[:window]
    keep = values[idx] > 0
    if keep.sum() < 2:
        return float("nan"), "inconclusive"
    slope = float(np.polyfit(np.log(eps[idx][keep]), np.log(values[idx][keep]), 1)[0])
    if slope > -0.2:
        return slope, "bounded"
    if slope < -0.8:
        return slope, "divergent"
    return slope, "inconclusive"


def lap_probe(H, u, lambdas, eps_schedule=None) -> list[LapCurve]:
    """``Im <u, (H - lambda - i eps)^{-1} u>`` by complex-shifted solves."""
    u = np.asarray(u, dtype=complex)
    n = len(u)
    if eps_schedule is None:
        ev = np.linalg.eigvalsh(as_dense(H)) if n <= 3000 else None
        eps_schedule = default_eps_schedule(ev)
    eps_schedule = np.asarray(eps_schedule, dtype=float)
    dense = None if sp.issparse(H) else as_dense(H).astype(complex)
    curves = []
    for lam in np.atleast_1d(lambdas):
        vals = []
        for eps in eps_schedule:
            z = lam + 1j * eps
            try:
                if dense is not None:
                    x = scipy.linalg.solve(dense - z * np.eye(n), u, assume_a="sym")
                else:
                    x = spla.splu(sp.csc_matrix(H, dtype=complex) - z * sp.identity(n, format="csc")).solve(u)
            except (np.linalg.LinAlgError, RuntimeError) as exc:
                raise SolveFailure(f"shifted solve failed at lambda={lam}, eps={eps}: {exc}") from exc
            vals.append(float(np.vdot(u, x).imag))
        vals = np.asarray(vals)
        slope, cls = classify_slope(eps_schedule, vals)
        curves.append(LapCurve(float(lam), eps_schedule.copy(), vals, slope, cls))
    return curves


@dataclass
class SpectralMeasure:
    eigenvalues: np.ndarray
    weights: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.eigenvalues.tolist(), self.weights.tolist()))

    def mass(self, lo: float, hi: float) -> float:
        """Measure of the half-open interval ``[lo, hi)``."""
        sel = (self.eigenvalues >= lo) & (self.eigenvalues < hi)
        return float(self.weights[sel].sum())


def spectral_measure(H, u, fact=None) -> SpectralMeasure:
    """Atomic measure ``sum_i |<v_i, u>|^2 delta_{lambda_i}`` of ``u`` for symmetric ``H``."""
    if fact is None:
        mat = as_dense(H)
        lam, q = scipy.linalg.eigh(0.5 * (mat + mat.T))
    else:
        lam, q = fact.eigenvalues, fact.eigenvectors
    c = q.T @ np.asarray(u)
    return SpectralMeasure(lam, np.abs(c) ** 2)


# --------------------------------------------------------------------------- persistence

@dataclass
class RefinementLadder:
    """Nested lattices (``h`` halving at fixed ``R``) followed by one ``R``-doubling level."""

    specs: list[LatticeSpec]

    @classmethod
    def standard(cls, radius: float, spacing: float, refinements: int = 2, r_doubling: bool = True,
                 offset: bool = True, max_nodes: int = 4_000_000) -> "RefinementLadder":
        specs = [LatticeSpec(radius, spacing / 2**k, offset, max_nodes) for k in range(refinements + 1)]
        if r_doubling:
            specs.append(LatticeSpec(2 * radius, specs[-1].spacing, offset, max_nodes))
        return cls(specs)


@dataclass
class Track:
    values: list[float]
    localization: float
    cauchy: list[float]
    verdict: str


@dataclass
class PersistenceReport:
    window: tuple[float, float]
    levels: list[dict]
    tracks: list[Track]
    header: str = REPORT_HEADER

    @property
    def persistent(self) -> list[float]:
        return [t.values[-1] for t in self.tracks if t.verdict == "persistent"]

    def as_dict(self) -> dict:
        return {
            "header": self.header,
            "window": list(self.window),
            "levels": self.levels,
            "tracks": [t.__dict__ for t in self.tracks],
            "persistent": self.persistent,
        }


def _shift_preconditioner(lattice: Lattice, shift: float):
    n = lattice.n
    if lattice.alg.is_abelian and lattice.fields is None:
        fact = SeparableFactorization(lattice.shape, lattice.spacings)
        f = lambda lam: 1.0 / (lam + shift)
        return spla.LinearOperator((n, n), matvec=lambda v: fact.apply_function(np.asarray(v).ravel(), f),
                                   matmat=lambda v: np.stack([fact.apply_function(c, f) for c in np.asarray(v).T], 1),
                                   dtype=float)
    return amg_preconditioner(sublaplacian(lattice) + shift * sp.identity(n))


def window_eigenpairs(lattice: Lattice, H, window, k: int = 4, k_max: int = 32, seed: int = 0):
    """Eigenpairs of ``H`` inside ``window``, growing the block until one lies above it."""
    lo, hi = window
    shift = 1.0
    if sp.issparse(H):
        shift += max(0.0, -float(H.diagonal().min()))
    precond = None if lattice.n <= 1500 else _shift_preconditioner(lattice, shift)
    while True:
        res = lowest_eigenpairs(H, min(k, lattice.n), precond=precond, seed=seed, tol=1e-10)
        if res.values[-1] >= hi or k >= min(k_max, lattice.n):
            break
        k *= 2
    sel = (res.values > lo) & (res.values < hi)
    return res.values[sel], res.vectors[:, sel]


def _match(prev: list[float], cur: list[float], radius) -> dict[int, int]:
    """Injective nearest-neighbour matching ``cur index -> prev index``."""
    pairs = {}
    used = {}
    for j, b in enumerate(cur):
        cand = [i for i, a in enumerate(prev) if abs(a - b) <= radius(b)]
        if len(cand) > 1:
            raise MatchingAmbiguous(f"eigenvalue {b:.6g} is within the gap threshold of several predecessors")
        if cand:
            i = cand[0]
            if i in used:
                raise MatchingAmbiguous(f"two eigenvalues match {prev[i]:.6g}")
            used[i] = j
            pairs[j] = i
    return pairs


def eigenvalue_persistence(ladder: RefinementLadder | list[Lattice], alg, hamiltonian: Callable[[Lattice], object],
                           window=(-np.inf, 0.0), cauchy_rtol: float = 1e-2, localization: float = 0.99,
                           match_rtol: float = 0.25, seed: int = 0) -> PersistenceReport:
    """Track eigenvalues of ``hamiltonian(lattice)`` in ``window`` across a refinement ladder.

    A track is ``persistent`` when it is present at every level, consecutive
    values agree to ``cauchy_rtol``, and its finest-level eigenvector keeps at
    least ``localization`` of its mass farther than ``2h`` from the boundary.
    """
    if isinstance(ladder, RefinementLadder):
        lattices = [build_lattice(alg, s) for s in ladder.specs]
    else:
        lattices = list(ladder)
    levels, per_level, locs = [], [], []
    for latt in lattices:
        vals, vecs = window_eigenpairs(latt, hamiltonian(latt), window, seed=seed)
        interior = latt.boundary_distance() > 2 * latt.h
        mass = (vecs**2)
        loc = (mass[interior].sum(axis=0) / mass.sum(axis=0)) if vals.size else np.zeros(0)
        per_level.append(vals.tolist())
        locs.append(loc.tolist())
        levels.append({"radius": float(np.max(np.abs(latt.axes[0])) + latt.h / 2), "h": latt.h, "n": latt.n,
                       "eigenvalues": vals.tolist(), "localization": loc.tolist()})
    radius = lambda b: match_rtol * abs(b) + 1e-12
    tracks: list[list[int | None]] = [[j] for j in range(len(per_level[0]))]
    for lvl in range(1, len(per_level)):
        pairs = _match(per_level[lvl - 1], per_level[lvl], radius)
        inverse = {i: j for j, i in pairs.items()}
        for tr in tracks:
            last = tr[-1]
            tr.append(inverse.get(last) if last is not None else None)
        for j in range(len(per_level[lvl])):
            if j not in pairs:
                tracks.append([None] * lvl + [j])
    out = []
    for tr in tracks:
        values = [per_level[l][j] if j is not None else float("nan") for l, j in enumerate(tr)]
        complete = all(j is not None for j in tr)
        cauchy = [abs(values[i + 1] - values[i]) / max(abs(values[i + 1]), 1e-300) for i in range(len(values) - 1)]
        loc = locs[-1][tr[-1]] if tr[-1] is not None else 0.0
        ok = complete and all(c <= cauchy_rtol for c in cauchy) and loc >= localization
        out.append(Track(values, float(loc), cauchy, "persistent" if ok else "artifact"))
    return PersistenceReport((float(window[0]), float(window[1])), levels, out)
