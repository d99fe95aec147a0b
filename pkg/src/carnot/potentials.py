"""Potentials, Euler derivatives along dilation orbits, and admissibility criteria.

The Euler operator is the generator of dilations: ``(E F)(x) = d/ds F(dil_s x)`` at
``s = 0``.  Without an analytic callback it is evaluated by central differences
along the orbit, which needs no spatial stencil.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.integrate

from .algebra import (
    QuasiNorm,
    StratifiedAlgebra,
    as_quasi_norm,
    dilate,
    horizontal_part,
    quasi_norm,
    rho_gradient_weight,
    vector_field_coefficients,
)
from .errors import MissingConstant, NonFiniteSample, OriginSingular, OutOfRange, RateViolation
from .expr import parse_expression

Field = Callable[[np.ndarray], np.ndarray]

DELTA_1 = 1e-5
DELTA_2 = 1e-3
CONSTRUCTION_RTOL = 1e-6


# --------------------------------------------------------------------------- Euler derivatives

def _check_points(x: np.ndarray):
    if np.any(np.all(x == 0, axis=-1)):
        raise OriginSingular("Euler derivative requested at the identity")


def _finite(values: np.ndarray, x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        bad = np.argmax(~np.isfinite(np.atleast_1d(values)))
        pt = np.atleast_2d(x)[bad].tolist()
        raise NonFiniteSample(f"{what} is not finite at {pt}")
    return values


def orbit_derivative(alg: StratifiedAlgebra, func: Field, x, delta: float = DELTA_1) -> np.ndarray:
    """Central difference of ``s -> func(dil_s x)`` with one Richardson step."""
    x = np.asarray(x, dtype=float)

    def central(d):
        return (func(dilate(alg, d, x)) - func(dilate(alg, -d, x))) / (2 * d)

    return (4 * central(delta / 2) - central(delta)) / 3


def orbit_second_derivative(alg: StratifiedAlgebra, func: Field, x, delta: float = DELTA_2) -> np.ndarray:
    """Second central difference along the orbit, i.e. ``E(E func)``, with one Richardson step."""
    x = np.asarray(x, dtype=float)
    f0 = func(x)

    def second(d):
        return (func(dilate(alg, d, x)) - 2 * f0 + func(dilate(alg, -d, x))) / d**2

    return (4 * second(delta / 2) - second(delta)) / 3


def euler_from_gradient(alg: StratifiedAlgebra, grad: Field, x) -> np.ndarray:
    """``sum_j nu_j x_j (X_j F)(x)`` from the Euclidean gradient of ``F`` (literal field formula)."""
    x = np.asarray(x, dtype=float)
    a = vector_field_coefficients(alg, x)
    xf = np.einsum("...kj,...j->...k", a, alg.weights * x)
    return np.einsum("...k,...k->...", xf, np.asarray(grad(x), dtype=float))


@dataclass
class Potential:
    """Scalar field ``V`` with optional analytic Euler derivatives.

    Supplied derivatives are compared with orbit finite differences on a probe
    set at construction (relative tolerance ``1e-6``).
    """

    alg: StratifiedAlgebra
    value: Field
    euler1: Field | None = None
    euler2: Field | None = None
    bounded_claim: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    check: bool = True

    def __post_init__(self):
        if self.check and (self.euler1 is not None or self.euler2 is not None):
            self.verify()

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.value(np.asarray(x, dtype=float)), dtype=float)

    def probe_points(self, n: int = 32, seed: int = 1234) -> np.ndarray:
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, self.alg.dim))
        return dilate(self.alg, rng.uniform(-1.0, 1.5, size=n), x)

    def verify(self, points=None, rtol: float = CONSTRUCTION_RTOL) -> float:
        x = self.probe_points() if points is None else np.asarray(points, dtype=float)
        worst = 0.0
        pairs = []
        if self.euler1 is not None:
            pairs.append(("euler1", self.euler1(x), orbit_derivative(self.alg, self.value, x)))
        if self.euler2 is not None:
            ref = (orbit_derivative(self.alg, self.euler1, x) if self.euler1 is not None
                   else orbit_second_derivative(self.alg, self.value, x))
            pairs.append(("euler2", self.euler2(x), ref))
        for label, exact, approx in pairs:
            exact = np.asarray(exact, dtype=float)
            scale = np.maximum(np.abs(exact), 1e-2 * np.abs(exact).max(initial=0.0))
            scale = np.where(scale > 0, scale, 1.0)
            err = float(np.max(np.abs(exact - approx) / scale))
            worst = max(worst, err)
            if err > rtol:
                raise ValueError(f"{label} of {self.name} disagrees with the orbit derivative (rel. {err:.2e})")
        return worst

    def scaled(self, gamma: float) -> "Potential":
        g = float(gamma)
        return Potential(
            self.alg,
            lambda x, f=self.value: g * f(x),
            None if self.euler1 is None else (lambda x, f=self.euler1: g * f(x)),
            None if self.euler2 is None else (lambda x, f=self.euler2: g * f(x)),
            None if self.bounded_claim is None else abs(g) * self.bounded_claim,
            self.name, {**self.params, "scale": g * self.params.get("scale", 1.0)}, check=False,
        )

    def plus(self, other: "Potential") -> "Potential":
        def both(a, b):
            if a is None or b is None:
                return None
            return lambda x: a(x) + b(x)

        return Potential(self.alg, lambda x: self.value(x) + other.value(x), both(self.euler1, other.euler1),
                         both(self.euler2, other.euler2), None, f"{self.name}+{other.name}", check=False)


def euler_derivative(alg: StratifiedAlgebra, F, x, order: int = 1, delta: float | None = None) -> np.ndarray:
    """``E F`` (order 1) or ``E(E F)`` (order 2) at the points ``x``."""
    x = np.asarray(x, dtype=float)
    _check_points(x)
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if isinstance(F, Potential):
        if order == 1 and F.euler1 is not None:
            return _finite(np.asarray(F.euler1(x), dtype=float), x, "E V")
        if order == 2 and F.euler2 is not None:
            return _finite(np.asarray(F.euler2(x), dtype=float), x, "E(E V)")
        if order == 2 and F.euler1 is not None:
            return _finite(orbit_derivative(alg, F.euler1, x, delta or DELTA_1), x, "E(E V)")
        func = F.value
    else:
        func = F
    if order == 1:
        out = orbit_derivative(alg, func, x, delta or DELTA_1)
    else:
        out = orbit_second_derivative(alg, func, x, delta or DELTA_2)
    return _finite(out, x, "Euler derivative")


# --------------------------------------------------------------------------- catalogue

def zero_potential(alg: StratifiedAlgebra) -> Potential:
    z = lambda x: np.zeros(np.shape(x)[:-1])
    return Potential(alg, z, z, z, 0.0, "zero", check=False)


# profiles U(t) with first and second derivatives
PROFILES: dict[str, tuple[Field, Field, Field]] = {
    "lorentzian": (
        lambda t: 1 / (1 + t**2),
        lambda t: -2 * t / (1 + t**2) ** 2,
        lambda t: (6 * t**2 - 2) / (1 + t**2) ** 3,
    ),
    "arctan": (
        np.arctan,
        lambda t: 1 / (1 + t**2),
        lambda t: -2 * t / (1 + t**2) ** 2,
    ),
    "constant": (
        lambda t: np.ones_like(t),
        lambda t: np.zeros_like(t),
        lambda t: np.zeros_like(t),
    ),
}


def vertical_profile_potential(alg: StratifiedAlgebra, gamma: float = 1.0, profile: str = "lorentzian") -> Potential:
    """``V = gamma U(t) / (1 + |z|^2)`` on a Heisenberg group.

    With ``s = |z|^2``: ``E V = (2 gamma / (1+s)) [t U' - s U / (1+s)]``.
    """
    d = alg.heisenberg_degree
    if d is None:
        raise ValueError("the vertical-profile family lives on Heisenberg groups")
    try:
        u, du, ddu = PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}") from None
    g = float(gamma)

    def split(x):
        x = np.asarray(x, dtype=float)
        return np.sum(x[..., : 2 * d] ** 2, axis=-1), x[..., 2 * d]

    def value(x):
        s, t = split(x)
        return g * u(t) / (1 + s)

    def euler1(x):
        s, t = split(x)
        return 2 * g / (1 + s) * (t * du(t) - s * u(t) / (1 + s))

    def euler2(x):
        s, t = split(x)
        a = t * du(t) + t**2 * ddu(t)
        return g * (4 * a / (1 + s) - 8 * s * t * du(t) / (1 + s) ** 2 - 4 * s * (1 - s) * u(t) / (1 + s) ** 3)

    bound = float(np.max(np.abs(u(np.linspace(-50, 50, 20001))))) * abs(g)
    return Potential(alg, value, euler1, euler2, bound, f"vertical_profile[{profile}]",
                     {"gamma": g, "profile": profile})


def smoothed_power_potential(alg: StratifiedAlgebra, c: float = 1.0, alpha: float = 2.0, core: float = 1.0,
                             quasi_norm_kind="power_sum") -> Potential:
    """``V = c (qnorm^2 + a^2)^{-alpha/2}``; ``E V = -c alpha q^2 (q^2 + a^2)^{-alpha/2 - 1}``."""
    qn = as_quasi_norm(quasi_norm_kind)
    a2 = float(core) ** 2
    c, alpha = float(c), float(alpha)

    def q2(x):
        return quasi_norm(alg, x, qn) ** 2

    def value(x):
        return c * (q2(x) + a2) ** (-alpha / 2)

    def euler1(x):
        q = q2(x)
        return -c * alpha * q * (q + a2) ** (-alpha / 2 - 1)

    def euler2(x):
        q = q2(x)
        return -2 * c * alpha * q * ((q + a2) ** (-alpha / 2 - 1) - (alpha / 2 + 1) * q * (q + a2) ** (-alpha / 2 - 2))

    return Potential(alg, value, euler1, euler2, abs(c) * a2 ** (-alpha / 2), "smoothed_power",
                     {"c": c, "alpha": alpha, "core": core})


def indicator_well(alg: StratifiedAlgebra, depth: float, radius: float = 1.0) -> Potential:
    """``V = -depth`` on the coordinate box ``|x_j| <= radius`` and 0 elsewhere (no Euler callbacks)."""
    depth, radius = float(depth), float(radius)

    def value(x):
        inside = np.all(np.abs(np.asarray(x)) <= radius + 1e-12, axis=-1)
        return np.where(inside, -depth, 0.0)

    return Potential(alg, value, None, None, abs(depth), "indicator_well", {"depth": depth, "radius": radius},
                     check=False)


def expression_potential(alg: StratifiedAlgebra, text: str) -> Potential:
    expr = parse_expression(text, alg)
    return Potential(alg, expr, name=f"expr[{text}]", params={"expression": text}, check=False)


CATALOGUE = {
    "zero": zero_potential,
    "vertical_profile": vertical_profile_potential,
    "smoothed_power": smoothed_power_potential,
    "indicator_well": indicator_well,
}


def make_potential(alg: StratifiedAlgebra, name: str, **params) -> Potential:
    """Catalogue lookup; ``name="expr"`` takes an ``expression`` parameter."""
    if name == "expr":
        return expression_potential(alg, params["expression"])
    try:
        return CATALOGUE[name](alg, **params)
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(CATALOGUE) + ['expr']}") from None


# --------------------------------------------------------------------------- criteria

TAGS = ("thm2_1", "thm4_1", "thm4_2", "thm4_4", "combined")


@dataclass(frozen=True)
class Criterion:
    """Admissibility criterion: tag plus exponent or weights."""

    tag: str
    alpha: float = 2.0
    thetas: tuple[float, ...] = ()

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown criterion {self.tag!r}; choose from {TAGS}")
        if self.tag == "combined":
            if len(self.thetas) != 3 or min(self.thetas) <= 0:
                raise ValueError("combined criterion needs three positive weights")
            if sum(self.thetas) >= 1:
                raise ValueError("theta1+theta2+theta3 < 1 required")

    @classmethod
    def parse(cls, text: str) -> "Criterion":
        text = text.strip().lower().replace(" ", "")
        head, _, rest = text.partition("(")
        args = [float(a) for a in rest.rstrip(")").split(",") if a] if rest else []
        if head == "combined":
            return cls(head, 2.0, tuple(args))
        return cls(head, args[0] if args else 2.0)

    def label(self) -> str:
        if self.tag == "combined":
            return "combined(" + ",".join(f"{t:g}" for t in self.thetas) + ")"
        if self.tag in ("thm2_1", "thm4_4"):
            return f"{self.tag}({self.alpha:g})"
        return self.tag


def _gauge_ok(alg: StratifiedAlgebra):
    if alg.step != 1 and alg.heisenberg_degree is None:
        raise OutOfRange("the gradient weight needs the closed-form gauge (Abelian or Heisenberg)")


def criterion_weight(alg: StratifiedAlgebra, crit: Criterion, x, constants: dict | None = None,
                     quasi_norm_kind="power_sum"):
    """Return ``(cap, w(x), w_ii(x))``: condition (i) reads ``|E V| <= (cap - eps) w``,
    condition (ii) reads ``|E(E V)| <= B w_ii``."""
    constants = constants or {}
    x = np.asarray(x, dtype=float)
    M, m1 = alg.homogeneous_dimension, alg.first_layer_dim
    with np.errstate(divide="ignore"):
        if crit.tag == "thm2_1":
            if not 0 < crit.alpha < M:
                raise OutOfRange(f"alpha={crit.alpha} outside (0, M={M})")
            if constants.get("kappa") is None:
                raise MissingConstant("kappa_alpha is required for this criterion")
            w = quasi_norm(alg, x, quasi_norm_kind) ** (-crit.alpha)
            return crit.alpha * constants["kappa"] ** -2, w, w
        if crit.tag == "thm4_1":
            if M < 3:
                raise OutOfRange("this criterion needs M >= 3")
            _gauge_ok(alg)
            w = rho_gradient_weight(alg, x)
            return (M - 2) ** 2 / 2, w, w
        if crit.tag == "thm4_2":
            if m1 < 3:
                raise OutOfRange(f"this criterion needs m1 >= 3 (m1 = {m1})")
            w = horizontal_part(alg, x)[1] ** -2.0
            return (m1 - 2) ** 2 / 2, w, w
        if crit.tag == "thm4_4":
            d = alg.heisenberg_degree
            if d is None:
                raise OutOfRange("this criterion lives on Heisenberg groups")
            if not 0 < crit.alpha < 2 * d + 2:
                raise OutOfRange(f"alpha={crit.alpha} outside (0, {2 * d + 2})")
            if constants.get("E_alpha") is None:
                raise MissingConstant("E_alpha is required for this criterion")
            w = quasi_norm(alg, x, "heisenberg_rho") ** (-crit.alpha)
            return constants["E_alpha"], w, w
        # combined
        if M < 3:
            raise OutOfRange("the combined criterion needs M >= 3")
        _gauge_ok(alg)
        if constants.get("kappa") is None:
            raise MissingConstant("kappa_2 is required for the combined criterion")
        t1 = 2 * constants["kappa"] ** -2 * quasi_norm(alg, x, quasi_norm_kind) ** -2.0
        t2 = (M - 2) ** 2 / 2 * rho_gradient_weight(alg, x)
        t3 = (m1 - 2) ** 2 / 2 * horizontal_part(alg, x)[1] ** -2.0
        th = crit.thetas
        return 1.0, th[0] * t1 + th[1] * t2 + th[2] * t3, t1 + t2 + t3


@dataclass
class AdmissibilityReport:
    criterion: str
    epsilon_margin: float
    B_estimate: float
    verdict: str
    worst_points: list
    cap: float
    sup_ratio: float
    sup_V: float
    sup_EV: float
    side_conditions_ok: bool
    n_points: int

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _ratio(num: np.ndarray, w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(np.isinf(w), 0.0, num / w)
    return np.where((num == 0) & (w == 0), 0.0, r)


def check_admissibility(alg: StratifiedAlgebra, V: Potential, criterion: Criterion | str, sample,
                        constants: dict | None = None, quasi_norm_kind="power_sum", n_worst: int = 5
                        ) -> AdmissibilityReport:
    """Best ``eps`` and ``B`` that the potential achieves on the sample cloud."""
    crit = Criterion.parse(criterion) if isinstance(criterion, str) else criterion
    x = np.asarray(sample, dtype=float)
    _check_points(x)
    cap, w, w2 = criterion_weight(alg, crit, x, constants, quasi_norm_kind)
    v = _finite(V(x), x, "V")
    ev = np.abs(euler_derivative(alg, V, x, 1))
    eev = np.abs(euler_derivative(alg, V, x, 2))
    r1 = _ratio(ev, w)
    r2 = _ratio(eev, w2)
    sup1 = float(r1.max(initial=0.0))
    eps = cap - sup1 if crit.tag != "combined" else 1.0 - sup1
    B = float(r2.max(initial=0.0))
    order = np.argsort(-r1)[:n_worst]
    sup_v, sup_ev = float(np.abs(v).max(initial=0.0)), float(ev.max(initial=0.0))
    side = np.isfinite(sup_v) and np.isfinite(sup_ev)
    if V.bounded_claim is not None:
        side = side and sup_v <= V.bounded_claim * (1 + 1e-9)
    verdict = "pass" if (eps > 0 and np.isfinite(B)) else "fail"
    return AdmissibilityReport(crit.label(), float(eps), B, verdict, x[order].tolist(), float(cap), sup1,
                               sup_v, sup_ev, bool(side), len(x))


def admissibility_threshold(alg: StratifiedAlgebra, V0: Potential, criterion: Criterion | str, sample,
                            constants: dict | None = None, quasi_norm_kind="power_sum") -> float:
    """Largest ``|gamma|`` such that ``gamma V0`` satisfies condition (i) on the sample."""
    rep = check_admissibility(alg, V0, criterion, sample, constants, quasi_norm_kind)
    return math.inf if rep.sup_ratio == 0 else rep.cap / rep.sup_ratio


# --------------------------------------------------------------------------- sample clouds

def unit_direction(alg: StratifiedAlgebra, omega, quasi_norm_kind="power_sum") -> np.ndarray:
    """Dilate ``omega`` onto the unit quasi-sphere."""
    omega = np.asarray(omega, dtype=float)
    q = quasi_norm(alg, omega, quasi_norm_kind)
    if np.any(q == 0):
        raise OriginSingular("direction must differ from the identity")
    return dilate(alg, -np.log(q), omega)


def quasi_annulus(alg: StratifiedAlgebra, n: int = 1000, r_min: float = 1e-2, r_max: float = 1e3,
                  seed: int = 0, quasi_norm_kind="power_sum") -> np.ndarray:
    """``n`` points with log-spaced quasi-radii in ``[r_min, r_max]`` and random directions."""
    rng = np.random.default_rng(seed)
    omega = unit_direction(alg, rng.normal(size=(n, alg.dim)), quasi_norm_kind)
    radii = np.geomspace(r_min, r_max, n)
    return dilate(alg, np.log(radii), omega)


def default_cloud(alg: StratifiedAlgebra, lattice=None, n_annulus: int = 1000, r_max: float = 1e3,
                  seed: int = 0, quasi_norm_kind="power_sum") -> np.ndarray:
    """Lattice nodes (if given) plus a quasi-annulus reaching radius ``r_max``."""
    pts = [quasi_annulus(alg, n_annulus, 1e-2, r_max, seed, quasi_norm_kind)]
    if lattice is not None:
        pts.insert(0, lattice.coords)
    return np.concatenate(pts, axis=0)


# --------------------------------------------------------------------------- radial limits

@dataclass
class RadialProbe:
    direction: np.ndarray
    radii: np.ndarray
    values: np.ndarray
    limit: float
    rate_constant: float
    deviations: np.ndarray
    bounds: np.ndarray

    @property
    def bound_holds(self) -> bool:
        return bool(np.all(self.deviations <= self.bounds))


def radial_limit(alg: StratifiedAlgebra, F, omega, alpha: float, D: float, radii=None,
                 quasi_norm_kind="power_sum") -> RadialProbe:
    """Limit of ``F(r . omega)`` as ``r -> inf`` and the rate ``|F(r.omega) - f| <= (D/alpha) r^-alpha``.

    The limit comes from ``f = F(r0 . omega) + int_{ln r0}^inf (E F)(e^s . omega) ds``
    at the largest probed radius ``r0``.
    """
    if alpha <= 0 or D < 0:
        raise ValueError("need alpha > 0 and D >= 0")
    omega = unit_direction(alg, omega, quasi_norm_kind)
    radii = np.geomspace(1.0, 2.0**12, 13) if radii is None else np.asarray(radii, dtype=float)
    pts = dilate(alg, np.log(radii), omega[None, :])
    func = F.value if isinstance(F, Potential) else F
    values = _finite(np.asarray(func(pts), dtype=float), pts, "F")
    ef = np.abs(euler_derivative(alg, F, pts, 1))
    premise = D * radii ** (-alpha)
    slack = 1e-6 * premise + 1e-12 * np.abs(values).max(initial=0.0)
    bad = ef > premise + slack
    if np.any(bad):
        i = int(np.argmax(bad))
        raise RateViolation(f"|E F| = {ef[i]:.3e} exceeds D r^-alpha = {premise[i]:.3e} at r = {radii[i]:g}",
                            float(radii[i]), float(ef[i] / premise[i]))

    def integrand(s):
        return float(euler_derivative(alg, F, dilate(alg, s, omega)[None, :], 1)[0])

    s0 = float(np.log(radii.max()))
    # beyond s_max the tail is below (D/alpha) e^{-alpha s_max}; stop before coordinates overflow
    s_max = max(s0, 150.0 / float(np.max(alg.weights)))
    tail, _ = scipy.integrate.quad(integrand, s0, s_max, limit=200, epsabs=1e-14, epsrel=1e-12)
    limit = float(values[np.argmax(radii)] + tail)
    deviations = np.abs(values - limit)
    rate = D / alpha
    bounds = rate * radii ** (-alpha) * (1 + 1e-6) + 8 * np.finfo(float).eps * (np.abs(values) + abs(limit))
    return RadialProbe(omega, radii, values, limit, rate, deviations, bounds)
