"""Experiment configuration: one YAML (or JSON) file drives one task run.

Every key, its meaning and the precondition it is validated against are listed
in :data:`KEYS`; the CLI help is generated from the same table.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .algebra import StratifiedAlgebra, load_algebra, preset_algebra
from .errors import ParseError, ValidationError
from .expr import parse_expression
from .hardy import WeightKind
from .potentials import CATALOGUE, PROFILES, TAGS

TASKS = ("estimate-hardy", "check-potential", "spectrum", "lap-probe", "persistence", "compare-weights")

KEYS = {
    "task": "one of " + ", ".join(TASKS),
    "algebra": "preset 'heisenberg(d)' / 'abelian(m)' or path to an algebra file (must exist)",
    "ladder": "list of {radius, spacing} lattice levels; R/h >= 4, node count <= max_nodes",
    "offset": "half-spacing grid offset (default true)",
    "max_nodes": "node budget per lattice level",
    "alpha": "operator power; spectrum: 0 < alpha < M; estimate-hardy qnorm_power: 0 < alpha < M; "
             "heisenberg_fractional: 0 < alpha < 2d+2; rho_gradient/horizontal_inverse: alpha = 2",
    "weight": "Hardy weight: " + ", ".join(k.value for k in WeightKind),
    "quasi_norm": "power_sum, heisenberg_rho or euclidean",
    "criterion": "admissibility criterion: " + ", ".join(TAGS),
    "theta": "three positive weights with theta1+theta2+theta3 < 1 (combined criterion)",
    "potential": "catalogue name (" + ", ".join(sorted(CATALOGUE)) + ") or 'expr'",
    "potential_params": "keyword parameters of the potential (expr: {expression: '...'}; "
                        "vertical_profile profile: " + ", ".join(sorted(PROFILES)) + ")",
    "window": "[lo, hi] eigenvalue window, lo < hi (persistence)",
    "lambdas": "spectral points for lap-probe",
    "eps": "strictly decreasing positive epsilon schedule for lap-probe (default: down to median gap / 10)",
    "vector": "lap-probe trial vector: gaussian or random (seeded)",
    "points": "point-cloud file for check-potential (must exist; default: lattice nodes + quasi-annulus)",
    "kappa": "kappa_alpha for check-potential (estimated on the first ladder level when omitted)",
    "E_alpha": "E_alpha for check-potential thm4_4 (estimated on the first ladder level when omitted)",
    "r_doubling": "persistence: append a level with doubled radius at the finest spacing",
    "n_eigen": "number of eigenvalues reported per level (spectrum)",
    "output": "output directory for summary.json and tables",
    "seed": "integer seed for every randomized trial vector",
}


@dataclass
class ExperimentConfig:
    task: str = "estimate-hardy"
    algebra: str = "heisenberg(1)"
    ladder: list = field(default_factory=lambda: [{"radius": 2.0, "spacing": 0.5}])
    offset: bool = True
    max_nodes: int = 4_000_000
    alpha: float = 2.0
    weight: str = "qnorm_power"
    quasi_norm: str = "power_sum"
    criterion: str = "thm2_1"
    theta: list | None = None
    potential: str = "zero"
    potential_params: dict = field(default_factory=dict)
    window: list = field(default_factory=lambda: [-math.inf, 0.0])
    lambdas: list | None = None
    eps: list | None = None
    vector: str = "gaussian"
    points: str | None = None
    kappa: float | None = None
    E_alpha: float | None = None
    r_doubling: bool = True
    n_eigen: int = 6
    output: str = "carnot-out"
    seed: int = 0
    base_dir: str = field(default=".", repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def build_algebra(self) -> StratifiedAlgebra:
        text = str(self.algebra).strip()
        if "(" in text and not Path(text).suffix:
            return preset_algebra(text)
        return load_algebra(self.resolve(text))

    def ladder_pairs(self) -> list[tuple[float, float]]:
        return [(float(s["radius"]), float(s["spacing"])) for s in self.ladder]


CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)} - {"base_dir"}


def _normalize_ladder(value):
    out = []
    for step in value:
        if isinstance(step, dict):
            out.append(dict(step))
        elif isinstance(step, (list, tuple)) and len(step) == 2:
            out.append({"radius": step[0], "spacing": step[1]})
        else:
            out.append(step)
    return out


def config_from_mapping(data: dict, base_dir: str = ".") -> ExperimentConfig:
    """Build and validate a config; raises :class:`ValidationError` listing every violation."""
    violations = []
    if not isinstance(data, dict):
        raise ValidationError([("<root>", "configuration must be a mapping")])
    for key in data:
        if key not in CONFIG_FIELDS:
            violations.append((key, "unknown key"))
    known = {k: v for k, v in data.items() if k in CONFIG_FIELDS}
    if "ladder" in known and isinstance(known["ladder"], list):
        known["ladder"] = _normalize_ladder(known["ladder"])
    cfg = ExperimentConfig(**known, base_dir=str(base_dir))
    violations += validate(cfg)
    if violations:
        raise ValidationError(violations)
    return cfg


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """All precondition violations of ``cfg`` (empty when valid)."""
    bad = []
    if cfg.task not in TASKS:
        bad.append(("task", f"must be one of {TASKS}"))
    alg = None
    try:
        alg = cfg.build_algebra()
    except FileNotFoundError:
        bad.append(("algebra", f"file {cfg.algebra!r} does not exist"))
    except Exception as exc:  # any algebra error is a validation failure here
        bad.append(("algebra", str(exc)))
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        bad.append(("seed", "must be an integer"))
    if not isinstance(cfg.max_nodes, int) or cfg.max_nodes <= 0:
        bad.append(("max_nodes", "must be a positive integer"))
    if not isinstance(cfg.ladder, list) or not cfg.ladder:
        bad.append(("ladder", "must be a nonempty list of {radius, spacing}"))
    else:
        for i, step in enumerate(cfg.ladder):
            path = f"ladder[{i}]"
            if not isinstance(step, dict) or set(step) != {"radius", "spacing"}:
                bad.append((path, "needs exactly the keys radius and spacing"))
                continue
            r, h = step["radius"], step["spacing"]
            if not (_number(r) and _number(h) and r > 0 and h > 0):
                bad.append((path, "radius and spacing must be positive numbers"))
                continue
            if r / h < 4 - 1e-12:
                bad.append((path, f"R/h = {r / h:g} < 4 (at least 8 nodes per axis)"))
            elif alg is not None and isinstance(cfg.max_nodes, int):
                per_axis = 2 * math.floor(r / h + 1e-9) if cfg.offset else 2 * (math.ceil(r / h - 1e-9) - 1) + 1
                if per_axis**alg.dim > cfg.max_nodes:
                    bad.append((path, f"{per_axis ** alg.dim} nodes exceed max_nodes = {cfg.max_nodes}"))
    if not _number(cfg.alpha):
        bad.append(("alpha", "must be a number"))
    elif alg is not None:
        bad += _validate_task(cfg, alg)
    return bad


def _validate_task(cfg: ExperimentConfig, alg: StratifiedAlgebra) -> list[tuple[str, str]]:
    bad = []
    M, m1, d = alg.homogeneous_dimension, alg.first_layer_dim, alg.heisenberg_degree
    a = cfg.alpha
    if cfg.quasi_norm not in ("power_sum", "heisenberg_rho", "euclidean"):
        bad.append(("quasi_norm", "must be power_sum, heisenberg_rho or euclidean"))
    elif cfg.quasi_norm == "heisenberg_rho" and d is None:
        bad.append(("quasi_norm", "heisenberg_rho needs a Heisenberg algebra"))
    elif cfg.quasi_norm == "euclidean" and alg.step != 1:
        bad.append(("quasi_norm", "euclidean is homogeneous only on Abelian algebras"))
    if cfg.task == "estimate-hardy":
        try:
            kind = WeightKind(cfg.weight)
        except ValueError:
            bad.append(("weight", f"must be one of {[k.value for k in WeightKind]}"))
            return bad
        if kind is WeightKind.QNORM_POWER and not 0 < a < M:
            bad.append(("alpha", f"kappa_alpha needs beta = alpha/2 in (0, M/2): 0 < alpha < {M}"))
        if kind in (WeightKind.RHO_GRADIENT, WeightKind.HORIZONTAL_INVERSE) and a != 2:
            bad.append(("alpha", f"{kind.value} pairs with -Delta: alpha must be 2"))
        if kind is WeightKind.RHO_GRADIENT and alg.step != 1 and d is None:
            bad.append(("weight", "rho_gradient needs the closed-form gauge (Abelian or Heisenberg)"))
        if kind is WeightKind.HEISENBERG_FRACTIONAL:
            if d is None:
                bad.append(("weight", "heisenberg_fractional needs a Heisenberg algebra"))
            elif not 0 < a < 2 * d + 2:
                bad.append(("alpha", f"E_alpha needs 0 < alpha < 2d+2 = {2 * d + 2}"))
    elif cfg.task == "check-potential":
        tag = str(cfg.criterion).lower()
        if tag not in TAGS:
            bad.append(("criterion", f"must be one of {TAGS}"))
        elif tag == "thm2_1" and not 0 < a < M:
            bad.append(("alpha", f"requires 0 < alpha < M = {M}"))
        elif tag == "thm4_4" and (d is None or not 0 < a < 2 * d + 2):
            bad.append(("alpha", "thm4_4 needs a Heisenberg algebra and 0 < alpha < 2d+2"))
        elif tag in ("thm4_1", "combined") and M < 3:
            bad.append(("criterion", f"{tag} requires M >= 3"))
        elif tag == "thm4_2" and m1 < 3:
            bad.append(("criterion", f"thm4_2 requires m1 >= 3 (m1 = {m1})"))
        if tag == "combined":
            th = cfg.theta
            if not (isinstance(th, list) and len(th) == 3 and all(_number(t) and t > 0 for t in th)):
                bad.append(("theta", "combined criterion needs three positive weights"))
            elif sum(th) >= 1:
                bad.append(("theta", "θ₁+θ₂+θ₃ < 1 required (theta1+theta2+theta3 < 1)"))
        if cfg.points is not None and not cfg.resolve(cfg.points).exists():
            bad.append(("points", f"file {cfg.points!r} does not exist"))
        for key in ("kappa", "E_alpha"):
            v = getattr(cfg, key)
            if v is not None and not (_number(v) and v > 0):
                bad.append((key, "must be a positive number"))
    elif cfg.task == "spectrum":
        if not 0 < a < M:
            bad.append(("alpha", f"requires 0 < alpha < M = {M}"))
        if not isinstance(cfg.n_eigen, int) or cfg.n_eigen < 1:
            bad.append(("n_eigen", "must be a positive integer"))
    elif cfg.task in ("lap-probe", "persistence"):
        if a <= 0:
            bad.append(("alpha", "must be positive"))
    elif cfg.task == "compare-weights" and d is None:
        bad.append(("algebra", "compare-weights needs a Heisenberg algebra"))
    if cfg.task in ("check-potential", "spectrum", "lap-probe", "persistence"):
        bad += _validate_potential(cfg, alg)
    if cfg.task == "persistence":
        w = cfg.window
        if not (isinstance(w, list) and len(w) == 2 and all(_number(x) for x in w) and w[0] < w[1]):
            bad.append(("window", "must be [lo, hi] with lo < hi"))
    if cfg.task == "lap-probe":
        if cfg.lambdas is not None and not (isinstance(cfg.lambdas, list) and all(_number(x) for x in cfg.lambdas)):
            bad.append(("lambdas", "must be a list of numbers"))
        if cfg.eps is not None:
            e = cfg.eps
            if not (isinstance(e, list) and e and all(_number(x) and x > 0 for x in e)
                    and all(x > y for x, y in zip(e, e[1:]))):
                bad.append(("eps", "must be a strictly decreasing list of positive numbers"))
        if cfg.vector not in ("gaussian", "random"):
            bad.append(("vector", "must be gaussian or random"))
    return bad


def _validate_potential(cfg: ExperimentConfig, alg: StratifiedAlgebra) -> list[tuple[str, str]]:
    name, params = cfg.potential, cfg.potential_params
    if not isinstance(params, dict):
        return [("potential_params", "must be a mapping")]
    if name == "expr":
        if "expression" not in params:
            return [("potential_params.expression", "expr potential needs an expression")]
        try:
            parse_expression(str(params["expression"]), alg)
        except ParseError as exc:
            return [("potential_params.expression", str(exc))]
        return []
    if name not in CATALOGUE:
        return [("potential", f"must be one of {sorted(CATALOGUE) + ['expr']}")]
    if name == "vertical_profile" and alg.heisenberg_degree is None:
        return [("potential", "vertical_profile lives on Heisenberg algebras")]
    if name == "vertical_profile" and params.get("profile", "lorentzian") not in PROFILES:
        return [("potential_params.profile", f"must be one of {sorted(PROFILES)}")]
    return []


def load_mapping(path) -> dict:
    """Read YAML/JSON text; syntax errors become :class:`ParseError` with line and column."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else 0
        col = mark.column + 1 if mark else 0
        raise ParseError(exc.problem or str(exc), line, col) from exc
    return {} if data is None else data


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    return config_from_mapping(load_mapping(path), base_dir=str(path.parent))


def default_config(task: str = "estimate-hardy") -> dict:
    """A small config that runs in seconds for ``task``."""
    base = {"task": task, "algebra": "heisenberg(1)", "ladder": [{"radius": 2.0, "spacing": 0.5}],
            "alpha": 2.0, "seed": 0, "output": "carnot-out"}
    if task == "estimate-hardy":
        base |= {"algebra": "abelian(3)", "weight": "qnorm_power",
                 "ladder": [{"radius": 4.0, "spacing": 1.0}, {"radius": 4.0, "spacing": 0.5}]}
    elif task == "check-potential":
        base |= {"algebra": "heisenberg(2)", "criterion": "thm4_2", "potential": "vertical_profile",
                 "potential_params": {"gamma": 0.25}, "ladder": [{"radius": 2.0, "spacing": 0.5}]}
    elif task == "spectrum":
        base |= {"alpha": 2.0, "potential": "vertical_profile", "potential_params": {"gamma": 0.1}}
    elif task == "lap-probe":
        base |= {"algebra": "abelian(1)", "ladder": [{"radius": 16.0, "spacing": 0.25}],
                 "lambdas": [-1.0, 0.5, 2.0]}
    elif task == "persistence":
        base |= {"algebra": "abelian(1)", "potential": "indicator_well",
                 "potential_params": {"depth": 0.1, "radius": 1.0}, "window": [-1.0, 0.0],
                 "ladder": [{"radius": 64.0, "spacing": 0.5}, {"radius": 64.0, "spacing": 0.25}]}
    return base


def dump_config(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=False)
