"""Stratified Lie algebras: bracket tables, BCH group law, dilations, quasi-norms.

Group elements are stored in exponential coordinates of the first kind, i.e.
``x = exp(sum_j x[j] X_j)``.  Every function accepts arrays whose last axis has
length ``m`` and broadcasts over the leading axes.
"""
from __future__ import annotations

import enum
import functools
import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    AntisymmetryViolation,
    DimensionMismatch,
    GradingViolation,
    JacobiViolation,
    OriginSingular,
    ParseError,
)

MAX_STEP = 6


@dataclass(frozen=True, eq=False)
class StratifiedAlgebra:
    """Graded nilpotent Lie algebra ``v_1 + ... + v_r`` with a fixed adapted basis.

    ``structure_constants[i, j, k]`` is the coefficient of ``X_k`` in ``[X_i, X_j]``
    (0-based indices).
    """

    layer_dims: tuple[int, ...]
    structure_constants: np.ndarray
    name: str = ""

    def __post_init__(self):
        c = np.array(self.structure_constants, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "structure_constants", c)
        w = np.repeat(np.arange(1, len(self.layer_dims) + 1), self.layer_dims)
        w.setflags(write=False)
        object.__setattr__(self, "_weights", w)

    @property
    def step(self) -> int:
        return len(self.layer_dims)

    @property
    def dim(self) -> int:
        return int(sum(self.layer_dims))

    @property
    def first_layer_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def homogeneous_dimension(self) -> int:
        return int(sum((k + 1) * mk for k, mk in enumerate(self.layer_dims)))

    @property
    def is_abelian(self) -> bool:
        return not np.any(self.structure_constants)

    @property
    def heisenberg_degree(self) -> int | None:
        """``d`` if this is the Heisenberg preset ``H_d`` (same basis), else ``None``."""
        if len(self.layer_dims) != 2 or self.layer_dims[1] != 1 or self.layer_dims[0] % 2:
            return None
        d = self.layer_dims[0] // 2
        if np.array_equal(self.structure_constants, _heisenberg_table(d)):
            return d
        return None

    def bracket(self, x, y) -> np.ndarray:
        return np.einsum("...i,...j,ijk->...k", x, y, self.structure_constants)

    def ad(self, x) -> np.ndarray:
        """Matrix of ``ad_x``: ``ad(x)[..., k, j]`` is the ``X_k`` coefficient of ``[x, X_j]``."""
        return np.einsum("...i,ijk->...kj", x, self.structure_constants)

    def __repr__(self):
        label = self.name or f"layers={self.layer_dims}"
        return f"StratifiedAlgebra({label})"


# --------------------------------------------------------------------------- build

def _heisenberg_table(d: int) -> np.ndarray:
    m = 2 * d + 1
    c = np.zeros((m, m, m))
    for j in range(d):
        # X_j = d_j + 2 x_{j+d} d_t,  X_{j+d} = d_{j+d} - 2 x_j d_t  =>  [X_j, X_{j+d}] = -4 d_t
        c[j, j + d, 2 * d] = -4.0
        c[j + d, j, 2 * d] = 4.0
    return c


def heisenberg(d: int = 1) -> StratifiedAlgebra:
    """Heisenberg algebra ``h_d`` with ``[X_j, X_{j+d}] = -4 T``."""
    if d < 1:
        raise DimensionMismatch("heisenberg(d) needs d >= 1")
    return StratifiedAlgebra((2 * d, 1), _heisenberg_table(d), name=f"heisenberg({d})")


def abelian(m: int) -> StratifiedAlgebra:
    if m < 1:
        raise DimensionMismatch("abelian(m) needs m >= 1")
    return StratifiedAlgebra((m,), np.zeros((m, m, m)), name=f"abelian({m})")


_PRESET_RE = re.compile(r"^\s*(heisenberg|abelian)\s*\(\s*(\d+)\s*\)\s*$")


def preset_algebra(spec: str) -> StratifiedAlgebra:
    match = _PRESET_RE.match(spec)
    if not match:
        raise ValueError(f"unknown preset {spec!r}; expected 'heisenberg(d)' or 'abelian(m)'")
    kind, n = match.group(1), int(match.group(2))
    return heisenberg(n) if kind == "heisenberg" else abelian(n)


def _table_from_brackets(m: int, brackets) -> np.ndarray:
    c = np.zeros((m, m, m))
    for entry in brackets:
        if len(entry) != 4:
            raise DimensionMismatch(f"bracket entry {entry!r} must be (i, j, k, value)")
        i, j, k, value = entry
        i, j, k = int(i) - 1, int(j) - 1, int(k) - 1
        if not all(0 <= q < m for q in (i, j, k)):
            raise DimensionMismatch(f"bracket entry {entry!r} has an index outside 1..{m}")
        if i == j:
            if value != 0:
                raise AntisymmetryViolation(f"[X_{i+1}, X_{i+1}] must vanish")
            continue
        if i > j:
            i, j, value = j, i, -value
        c[i, j, k] += value
        c[j, i, k] -= value
    return c


def _complete_dense(c: np.ndarray, m: int) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape != (m, m, m):
        raise DimensionMismatch(f"structure constants have shape {c.shape}, expected {(m, m, m)}")
    lower = np.tril_indices(m)
    if not np.any(c[lower[0], lower[1], :]):
        c = c - np.swapaxes(c, 0, 1)
    return c


def validate_algebra(alg: StratifiedAlgebra, rtol: float = 1e-12) -> None:
    """Raise unless antisymmetry, the Jacobi identity and grading compatibility hold."""
    c = alg.structure_constants
    m = alg.dim
    if c.shape != (m, m, m):
        raise DimensionMismatch(f"structure constants have shape {c.shape}, expected {(m, m, m)}")
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    if np.max(np.abs(c + np.swapaxes(c, 0, 1)), initial=0.0) > rtol * scale:
        raise AntisymmetryViolation("structure constants are not antisymmetric in (i, j)")
    nu = alg.weights
    allowed = (nu[:, None, None] + nu[None, :, None]) == nu[None, None, :]
    bad = np.argwhere((np.abs(c) > rtol * scale) & ~allowed)
    if len(bad):
        i, j, k = bad[0]
        raise GradingViolation(
            f"[X_{i+1}, X_{j+1}] has an X_{k+1} component but weights are "
            f"{nu[i]} + {nu[j]} != {nu[k]}"
        )
    # [[X_i, X_j], X_k] + cyclic
    jac = (
        np.einsum("ijl,lkn->ijkn", c, c)
        + np.einsum("jkl,lin->ijkn", c, c)
        + np.einsum("kil,ljn->ijkn", c, c)
    )
    worst = np.max(np.abs(jac), initial=0.0)
    if worst > rtol * scale**2:
        idx = np.unravel_index(np.argmax(np.abs(jac)), jac.shape)
        raise JacobiViolation(
            f"Jacobi identity fails for (X_{idx[0]+1}, X_{idx[1]+1}, X_{idx[2]+1}) by {worst:.3g}"
        )


def build_algebra(
    layer_dims: Sequence[int] | None = None,
    structure_constants=None,
    preset: str | None = None,
    name: str = "",
) -> StratifiedAlgebra:
    """Build and eagerly validate a stratified algebra.

    ``structure_constants`` is either a dense ``(m, m, m)`` array (if its
    ``i >= j`` part is empty the antisymmetric half is filled in) or an iterable
    of 1-based ``(i, j, k, value)`` entries meaning ``[X_i, X_j] += value X_k``.
    A ``preset`` (``'heisenberg(d)'`` / ``'abelian(m)'``) ignores the table.
    """
    if preset is not None:
        return preset_algebra(preset)
    if layer_dims is None or len(layer_dims) == 0:
        raise DimensionMismatch("layer_dims must be a nonempty list")
    dims = tuple(int(d) for d in layer_dims)
    if any(d < 1 for d in dims):
        raise DimensionMismatch(f"layer dimensions must be positive, got {dims}")
    if len(dims) > MAX_STEP:
        raise DimensionMismatch(f"step {len(dims)} exceeds the supported maximum {MAX_STEP}")
    m = sum(dims)
    if structure_constants is None:
        c = np.zeros((m, m, m))
    elif isinstance(structure_constants, np.ndarray) and structure_constants.ndim == 3:
        c = _complete_dense(structure_constants, m)
    else:
        c = _table_from_brackets(m, structure_constants)
    alg = StratifiedAlgebra(dims, c, name=name)
    validate_algebra(alg)
    return alg


def homogeneous_dimension(alg: StratifiedAlgebra) -> tuple[int, np.ndarray]:
    return alg.homogeneous_dimension, alg.weights.copy()


ALGEBRA_KEYS = frozenset({"layers", "brackets", "preset", "name"})


def algebra_from_mapping(data: dict) -> StratifiedAlgebra:
    unknown = set(data) - ALGEBRA_KEYS
    if unknown:
        raise ParseError(f"unknown algebra keys {sorted(unknown)}; allowed {sorted(ALGEBRA_KEYS)}")
    if "preset" in data and data["preset"] is not None:
        return preset_algebra(str(data["preset"]))
    if "layers" not in data:
        raise ParseError("algebra definition needs 'layers' or 'preset'")
    return build_algebra(data["layers"], data.get("brackets", []), name=data.get("name", ""))


def load_algebra(path) -> StratifiedAlgebra:
    """Read an algebra definition (YAML or JSON) with keys ``layers``, ``brackets``, ``preset``."""
    import yaml

    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ParseError(str(exc.problem), mark.line + 1, mark.column + 1) from exc
    if not isinstance(data, dict):
        raise ParseError("algebra file must hold a mapping")
    return algebra_from_mapping(data)


# --------------------------------------------------------------------------- BCH

@functools.lru_cache(maxsize=None)
def dynkin_table(depth: int) -> tuple[tuple[tuple[int, ...], Fraction], ...]:
    """Right-nested bracket words in X (0) and Y (1) with their Dynkin coefficients.

    ``log(e^X e^Y) = sum coeff * [w_1, [w_2, ... [w_{N-1}, w_N]]]`` truncated at
    bracket length ``depth``.
    """
    coeffs: dict[tuple[int, ...], Fraction] = {}

    def pairs(budget):
        for total in range(1, budget + 1):
            for r in range(total + 1):
                yield r, total - r

    def walk(n, budget, word, denom):
        # word built from n pairs so far, denom = prod r_i! s_i!
        if n > 0:
            N = len(word)
            if N == 1 or word[-1] != word[-2]:
                c = Fraction((-1) ** (n - 1), n) / (N * denom)
                coeffs[word] = coeffs.get(word, Fraction(0)) + c
        for r, s in pairs(budget):
            walk(n + 1, budget - r - s, word + (0,) * r + (1,) * s,
                 denom * math.factorial(r) * math.factorial(s))

    walk(0, depth, (), 1)
    return tuple((w, c) for w, c in sorted(coeffs.items(), key=lambda t: (len(t[0]), t[0])) if c)


def bch_multiply(alg: StratifiedAlgebra, x, y) -> np.ndarray:
    """Group product in exponential coordinates via the truncated BCH series."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != alg.dim or y.shape[-1] != alg.dim:
        raise DimensionMismatch(f"group elements need {alg.dim} coordinates")
    x, y = np.broadcast_arrays(x, y)
    letters = (x, y)
    memo: dict[tuple[int, ...], np.ndarray] = {}

    def nested(word):
        if len(word) == 1:
            return letters[word[0]]
        if word not in memo:
            memo[word] = alg.bracket(letters[word[0]], nested(word[1:]))
        return memo[word]

    out = np.zeros_like(x)
    for word, coeff in dynkin_table(alg.step):
        out = out + float(coeff) * nested(word)
    return out


def group_inverse(x) -> np.ndarray:
    return -np.asarray(x, dtype=float)


@functools.lru_cache(maxsize=None)
def _psi_coefficients(order: int) -> tuple[float, ...]:
    # z / (1 - e^{-z}) = sum_n B_n^+ z^n / n!  with B_1^+ = +1/2
    b = [Fraction(1)]
    for n in range(1, order + 1):
        b.append(-sum(math.comb(n + 1, k) * b[k] for k in range(n)) / (n + 1))
    if order >= 1:
        b[1] = -b[1]
    return tuple(float(bn / math.factorial(n)) for n, bn in enumerate(b))


def vector_field_coefficients(alg: StratifiedAlgebra, x) -> np.ndarray:
    """Left-invariant fields in exponential coordinates.

    Returns ``a`` with ``a[..., k, j]`` the coefficient of ``d/dx_k`` in ``X_j`` at
    ``x``; this is the matrix of ``ad_x / (1 - exp(-ad_x))``.
    """
    x = np.asarray(x, dtype=float)
    ad = alg.ad(x)
    eye = np.broadcast_to(np.eye(alg.dim), ad.shape)
    out = eye.copy()
    power = eye
    for coeff in _psi_coefficients(alg.step - 1)[1:]:
        power = power @ ad
        if coeff:
            out = out + coeff * power
    return out


# --------------------------------------------------------------------------- dilations, norms

def dilate(alg: StratifiedAlgebra, t: float, x) -> np.ndarray:
    """``dil_t``: scale coordinate ``j`` by ``exp(nu_j t)``."""
    return np.asarray(x, dtype=float) * np.exp(np.asarray(t, dtype=float)[..., None] * alg.weights)


def horizontal_part(alg: StratifiedAlgebra, x) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(x, dtype=float)[..., : alg.first_layer_dim]
    return z, np.linalg.norm(z, axis=-1)


class QuasiNormKind(enum.Enum):
    POWER_SUM = "power_sum"
    HEISENBERG_RHO = "heisenberg_rho"
    EUCLIDEAN = "euclidean"
    USER = "user"


@dataclass(frozen=True)
class QuasiNorm:
    kind: QuasiNormKind = QuasiNormKind.POWER_SUM
    callback: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def user(cls, alg: StratifiedAlgebra, func, n_probe: int = 64, rtol: float = 1e-9, seed: int = 0):
        """Wrap ``func`` after checking degree-1 homogeneity and positivity on probes."""
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n_probe, alg.dim))
        t = rng.uniform(-2, 2, size=n_probe)
        base = np.asarray(func(x), dtype=float)
        if np.any(base <= 0) or not np.all(np.isfinite(base)):
            raise ValueError("user quasi-norm must be finite and positive away from the identity")
        scaled = np.asarray(func(dilate(alg, t, x)), dtype=float)
        err = np.max(np.abs(scaled - np.exp(t) * base) / (np.exp(t) * base))
        if err > rtol:
            raise ValueError(f"user quasi-norm is not homogeneous of degree 1 (rel. error {err:.2e})")
        zero = np.asarray(func(np.zeros((1, alg.dim))), dtype=float)
        if np.any(zero != 0):
            raise ValueError("user quasi-norm must vanish at the identity")
        return cls(QuasiNormKind.USER, func)


def as_quasi_norm(kind) -> QuasiNorm:
    if isinstance(kind, QuasiNorm):
        return kind
    if isinstance(kind, QuasiNormKind):
        return QuasiNorm(kind)
    return QuasiNorm(QuasiNormKind(str(kind)))


def _require_heisenberg(alg: StratifiedAlgebra) -> int:
    d = alg.heisenberg_degree
    if d is None:
        raise ValueError(f"{alg!r} is not a Heisenberg preset; rho needs the closed form")
    return d


def quasi_norm(alg: StratifiedAlgebra, x, kind="power_sum") -> np.ndarray:
    """Homogeneous quasi-norm of ``x`` (degree 1 under ``dil_t``)."""
    qn = as_quasi_norm(kind)
    x = np.asarray(x, dtype=float)
    if qn.kind is QuasiNormKind.POWER_SUM:
        p = 2 * math.factorial(alg.step)
        s = np.abs(x) ** (1.0 / alg.weights)
        top = np.max(s, axis=-1, keepdims=True)
        safe = np.where(top > 0, top, 1.0)
        return top[..., 0] * np.sum((s / safe) ** p, axis=-1) ** (1.0 / p)
    if qn.kind is QuasiNormKind.HEISENBERG_RHO:
        d = _require_heisenberg(alg)
        z2 = np.sum(x[..., : 2 * d] ** 2, axis=-1)
        return np.sqrt(np.hypot(z2, x[..., 2 * d]))
    if qn.kind is QuasiNormKind.EUCLIDEAN:
        if alg.step != 1:
            raise ValueError("the Euclidean norm is homogeneous only on Abelian groups")
        return np.linalg.norm(x, axis=-1)
    return np.asarray(qn.callback(x), dtype=float)


def _gauge_parts(alg: StratifiedAlgebra, x):
    """Return (|x~|^2, rho) for the fundamental-solution gauge (Heisenberg or Abelian)."""
    x = np.asarray(x, dtype=float)
    if alg.step == 1:
        r2 = np.sum(x**2, axis=-1)
        return r2, np.sqrt(r2)
    d = _require_heisenberg(alg)
    z2 = np.sum(x[..., : 2 * d] ** 2, axis=-1)
    return z2, np.sqrt(np.hypot(z2, x[..., 2 * d]))


def gradient_rho(alg: StratifiedAlgebra, x) -> np.ndarray:
    """Horizontal gradient length ``|grad rho|`` of the gauge ``rho = (|z|^4 + t^2)^(1/4)``.

    On Abelian groups the gauge is the Euclidean norm and the result is 1.
    """
    z2, rho = _gauge_parts(alg, x)
    if np.any(rho == 0):
        raise OriginSingular("|grad rho| is undefined at the identity")
    return np.sqrt(z2) / rho


def rho_gradient_weight(alg: StratifiedAlgebra, x) -> np.ndarray:
    """``(grad rho)^2 / rho^2``; equals ``|z|^2 / (|z|^4 + t^2)`` on Heisenberg groups."""
    z2, rho = _gauge_parts(alg, x)
    if np.any(rho == 0):
        raise OriginSingular("(grad rho)^2/rho^2 is singular at the identity")
    return z2 / rho**4


def quasi_norm_gradient(alg: StratifiedAlgebra, x, kind="power_sum") -> np.ndarray:
    """Euclidean gradient (in exponential coordinates) of the built-in quasi-norms."""
    qn = as_quasi_norm(kind)
    x = np.asarray(x, dtype=float)
    q = quasi_norm(alg, x, qn)[..., None]
    if np.any(q == 0):
        raise OriginSingular("quasi-norm gradient is undefined at the identity")
    if qn.kind is QuasiNormKind.POWER_SUM:
        p = 2 * math.factorial(alg.step)
        e = p / alg.weights
        # d q / d x_k = q^{1-p} |x_k|^{e_k - 1} sign(x_k) / nu_k, scaled to avoid overflow
        return (np.abs(x / q) ** (e - 1)) * np.sign(x) / alg.weights * q ** (e - p)
    if qn.kind is QuasiNormKind.HEISENBERG_RHO:
        d = _require_heisenberg(alg)
        z = x[..., : 2 * d]
        z2 = np.sum(z**2, axis=-1, keepdims=True)
        g = np.concatenate([4 * z2 * z, 2 * x[..., 2 * d:]], axis=-1)
        return g / (4 * q**3)
    if qn.kind is QuasiNormKind.EUCLIDEAN:
        return x / q
    raise ValueError("no analytic gradient for user-supplied quasi-norms")
