"""Command-line front end and task orchestration.

Each run writes ``summary.json`` (task, inputs, verdicts, constants, provenance)
and one CSV table per result family into the output directory.  Tables are
rewritten after every ladder level, so an interrupted run leaves the levels it
finished on disk.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    KEYS,
    TASKS,
    ExperimentConfig,
    config_from_mapping,
    default_config,
    dump_config,
    load_mapping,
)
from .diagnostics import (
    REPORT_HEADER,
    RefinementLadder,
    assemble_hamiltonian,
    eigenvalue_persistence,
    lap_probe,
    positivity_margin,
    second_commutator_domination,
)
from .errors import CarnotError, ParseError, ValidationError
from .hardy import (
    HardyWeight,
    WeightKind,
    compare_weights,
    kappa_on_lattice,
    optimal_constant,
)
from .io import read_points, write_table
from .lattice import LatticeSpec, build_lattice
from .potentials import Criterion, check_admissibility, default_cloud, make_potential
from .spectral import lowest_eigenpairs


@dataclass
class ReportBundle:
    task: str
    summary: dict
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    verdicts: dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def record(self) -> dict:
        return {"task": self.task, "header": REPORT_HEADER, "summary": self.summary,
                "verdicts": {k: ("pass" if v else "fail") for k, v in self.verdicts.items()},
                "passed": self.passed, "provenance": self.provenance}

    def write(self, outdir: Path):
        outdir.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in self.tables.items():
            write_table(outdir / f"{name}.csv", header, rows)
        (outdir / "summary.json").write_text(json.dumps(_jsonable(self.record()), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def config_hash(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d.pop("output", None)
    return hashlib.sha256(json.dumps(_jsonable(d), sort_keys=True).encode()).hexdigest()


# --------------------------------------------------------------------------- tasks

def _lattices(cfg: ExperimentConfig, alg):
    return [build_lattice(alg, LatticeSpec(r, h, cfg.offset, cfg.max_nodes)) for r, h in cfg.ladder_pairs()]


def _potential(cfg: ExperimentConfig, alg):
    return make_potential(alg, cfg.potential, **cfg.potential_params)


def _task_estimate_hardy(cfg, alg, bundle, flush):
    weight = HardyWeight.parse(cfg.weight, cfg.alpha, cfg.quasi_norm)
    rows = []
    header = ["radius", "spacing", "nodes", "estimate"]
    values = []
    for r, h in cfg.ladder_pairs():
        latt = build_lattice(alg, LatticeSpec(r, h, cfg.offset, cfg.max_nodes))
        if weight.kind is WeightKind.QNORM_POWER:
            est = kappa_on_lattice(latt, cfg.alpha / 2, cfg.quasi_norm, seed=cfg.seed)
        else:
            est = optimal_constant(latt, weight, seed=cfg.seed)[0]
        values.append(est)
        rows.append([r, h, latt.n, est])
        bundle.tables["ladder"] = (header, rows)
        flush()
    quantity = "kappa" if weight.kind is WeightKind.QNORM_POWER else "optimal_constant"
    monotone = all(b >= a for a, b in zip(values, values[1:])) if quantity == "kappa" else True
    bundle.summary |= {
        "quantity": quantity, "weight": weight.label(), "alpha": cfg.alpha, "constant": values[-1],
        "converged": len(values) > 1 and abs(values[-1] - values[-2]) <= 0.05 * abs(values[-1]),
        "monotone": monotone,
    }
    if quantity == "kappa":
        bundle.summary["implied_optimal_constant"] = values[-1] ** -2
    bundle.verdicts["finite_positive"] = all(np.isfinite(v) and v > 0 for v in values)
    bundle.verdicts["monotone"] = monotone


def _constants_for(cfg, alg, crit, lattice):
    consts = {"kappa": cfg.kappa, "E_alpha": cfg.E_alpha}
    if crit.tag in ("thm2_1", "combined") and consts["kappa"] is None:
        beta = crit.alpha / 2 if crit.tag == "thm2_1" else 1.0
        consts["kappa"] = kappa_on_lattice(lattice, beta, cfg.quasi_norm, seed=cfg.seed)
    if crit.tag == "thm4_4" and consts["E_alpha"] is None:
        consts["E_alpha"] = optimal_constant(lattice, HardyWeight.heisenberg_fractional(crit.alpha),
                                             seed=cfg.seed)[0]
    return consts


def _task_check_potential(cfg, alg, bundle, flush):
    crit = Criterion(cfg.criterion.lower(), cfg.alpha, tuple(cfg.theta or ()))
    lattice = _lattices(cfg, alg)[0]
    V = _potential(cfg, alg)
    if cfg.points is not None:
        sample, cloud = read_points(cfg.resolve(cfg.points)), f"file:{cfg.points}"
    else:
        sample = default_cloud(alg, lattice, seed=cfg.seed, quasi_norm_kind=cfg.quasi_norm)
        cloud = "lattice nodes of the first ladder level + 1000 quasi-annulus points up to radius 1e3"
    consts = _constants_for(cfg, alg, crit, lattice)
    rep = check_admissibility(alg, V, crit, sample, consts, cfg.quasi_norm)
    bundle.tables["admissibility"] = (
        ["criterion", "epsilon_margin", "B_estimate", "cap", "sup_ratio", "sup_V", "sup_EV", "verdict"],
        [[rep.criterion, rep.epsilon_margin, rep.B_estimate, rep.cap, rep.sup_ratio, rep.sup_V, rep.sup_EV,
          rep.verdict]],
    )
    bundle.tables["worst_points"] = ([f"x{k + 1}" for k in range(alg.dim)], rep.worst_points)
    bundle.summary |= {"report": rep.as_dict(), "constants": consts, "cloud": cloud, "potential": V.name}
    bundle.verdicts["admissible"] = rep.passed
    bundle.verdicts["side_conditions"] = rep.side_conditions_ok


def _task_spectrum(cfg, alg, bundle, flush):
    V = _potential(cfg, alg)
    weight = HardyWeight.qnorm_power(cfg.alpha, cfg.quasi_norm)
    eig_rows, diag_rows = [], []
    for level, latt in enumerate(_lattices(cfg, alg)):
        triple = assemble_hamiltonian(latt, cfg.alpha, V, with_generator=False)
        res = lowest_eigenpairs(triple.H, min(cfg.n_eigen, latt.n), seed=cfg.seed)
        for i, lam in enumerate(res.values):
            eig_rows.append([level, latt.h, i, float(lam)])
        margin = positivity_margin(triple, weight, 0.0, seed=cfg.seed)
        dom = second_commutator_domination(triple)
        diag_rows.append([level, latt.h, latt.n, margin, dom.C])
        bundle.tables["eigenvalues"] = (["level", "spacing", "index", "eigenvalue"], eig_rows)
        bundle.tables["diagnostics"] = (["level", "spacing", "nodes", "positivity_margin", "domination_C"],
                                        diag_rows)
        flush()
    bundle.summary |= {"potential": V.name, "alpha": cfg.alpha,
                       "positivity_margins": [r[3] for r in diag_rows], "domination_C": [r[4] for r in diag_rows]}
    bundle.verdicts["commutator_positive"] = all(r[3] >= -1e-8 for r in diag_rows)
    bundle.verdicts["second_commutator_finite"] = all(np.isfinite(r[4]) for r in diag_rows)


def _trial_vector(cfg, latt):
    if cfg.vector == "random":
        u = np.random.default_rng(cfg.seed).standard_normal(latt.n)
    else:
        u = np.exp(-0.5 * np.sum(latt.coords**2, axis=1))
    return u / np.linalg.norm(u)


def _task_lap_probe(cfg, alg, bundle, flush):
    latt = _lattices(cfg, alg)[-1]
    V = _potential(cfg, alg)
    H = assemble_hamiltonian(latt, cfg.alpha, V, with_generator=False, check_range=False).H
    u = _trial_vector(cfg, latt)
    lambdas = cfg.lambdas if cfg.lambdas is not None else [-1.0, 0.5, 2.0]
    curves = lap_probe(H, u, lambdas, cfg.eps)
    rows = [[c.lam, e, val, c.classification] for c in curves for e, val in zip(c.eps, c.values)]
    bundle.tables["lap_curves"] = (["lambda", "epsilon", "value", "classification"], rows)
    bundle.summary |= {"curves": [{"lambda": c.lam, "slope": c.slope, "classification": c.classification}
                                  for c in curves], "nodes": latt.n, "potential": V.name}
    bundle.verdicts["herglotz_nonnegative"] = all(np.all(c.values >= -1e-12 * np.abs(c.values).max(initial=1.0))
                                                  for c in curves)


def _task_persistence(cfg, alg, bundle, flush):
    V = _potential(cfg, alg)
    specs = [LatticeSpec(r, h, cfg.offset, cfg.max_nodes) for r, h in cfg.ladder_pairs()]
    if cfg.r_doubling:
        specs.append(LatticeSpec(2 * specs[-1].radius, specs[-1].spacing, cfg.offset, cfg.max_nodes))

    def hamiltonian(latt):
        return assemble_hamiltonian(latt, cfg.alpha, V, with_generator=False, check_range=False).H

    rep = eigenvalue_persistence(RefinementLadder(specs), alg, hamiltonian, tuple(cfg.window), seed=cfg.seed)
    rows = []
    for level, info in enumerate(rep.levels):
        for lam, loc in zip(info["eigenvalues"], info["localization"]):
            rows.append([level, specs[level].radius, info["h"], info["n"], lam, loc])
    bundle.tables["levels"] = (["level", "radius", "spacing", "nodes", "eigenvalue", "localization"], rows)
    bundle.tables["tracks"] = (["track", "level", "value", "verdict"],
                               [[i, l, v, t.verdict] for i, t in enumerate(rep.tracks) for l, v in enumerate(t.values)])
    bundle.summary |= {"window": list(rep.window), "persistent": rep.persistent,
                       "n_persistent": len(rep.persistent), "potential": V.name}
    bundle.verdicts["no_persistent_eigenvalue"] = not rep.persistent


def _task_compare_weights(cfg, alg, bundle, flush):
    rows = []
    reports = []
    for latt in _lattices(cfg, alg):
        rep = compare_weights(latt)
        reports.append(rep.as_dict())
        rows.append([latt.h, rep.n_nodes, rep.inverse_rho_sq_le_horizontal, rep.gradient_le_horizontal,
                     rep.gradient_side_larger, rep.horizontal_side_larger])
        bundle.tables["comparison"] = (["spacing", "nodes", "frac_inverse_rho_sq_le_horizontal",
                                        "frac_gradient_le_horizontal", "gradient_side_larger",
                                        "horizontal_side_larger"], rows)
        flush()
    bundle.summary |= {"levels": reports}
    bundle.verdicts["pointwise_inequalities"] = all(r["pointwise_ok"] for r in reports)


TASK_RUNNERS = {
    "estimate-hardy": _task_estimate_hardy,
    "check-potential": _task_check_potential,
    "spectrum": _task_spectrum,
    "lap-probe": _task_lap_probe,
    "persistence": _task_persistence,
    "compare-weights": _task_compare_weights,
}


def run(cfg: ExperimentConfig, write: bool = True) -> ReportBundle:
    """Execute one task; deterministic for a fixed config (seed included)."""
    alg = cfg.build_algebra()
    bundle = ReportBundle(cfg.task, {"inputs": cfg.to_dict(), "algebra": repr(alg)})
    bundle.provenance = {"config_sha256": config_hash(cfg), "version": __version__}
    outdir = cfg.resolve(cfg.output)
    t0 = time.perf_counter()

    def flush():
        if write:
            bundle.provenance["wall_time_s"] = time.perf_counter() - t0
            bundle.write(outdir)

    status = "complete"
    try:
        TASK_RUNNERS[cfg.task](cfg, alg, bundle, flush)
    except KeyboardInterrupt:
        status = "interrupted"
        bundle.verdicts["completed"] = False
        raise
    except CarnotError as exc:
        status = "error"
        bundle.verdicts["completed"] = False
        exc.args = (f"[task {cfg.task}] {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
        raise
    finally:
        bundle.provenance["status"] = status
        flush()
    return bundle


# --------------------------------------------------------------------------- CLI

def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML/JSON config; flags below override its keys")
    p.add_argument("--algebra", help=KEYS["algebra"])
    p.add_argument("--radius", type=float, help="box radius R used with --ladder")
    p.add_argument("--ladder", help="comma-separated spacings h1,h2,... (with --radius); " + KEYS["ladder"])
    p.add_argument("--offset", action=argparse.BooleanOptionalAction, default=None, help=KEYS["offset"])
    p.add_argument("--max-nodes", dest="max_nodes", type=int, help=KEYS["max_nodes"])
    p.add_argument("--alpha", type=float, help=KEYS["alpha"])
    p.add_argument("--quasi-norm", dest="quasi_norm", help=KEYS["quasi_norm"])
    p.add_argument("--potential", help=KEYS["potential"])
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="potential parameter (repeatable); " + KEYS["potential_params"])
    p.add_argument("--output", help=KEYS["output"])
    p.add_argument("--seed", type=int, help=KEYS["seed"])


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys:\n" + "\n".join(f"  {k:<17} {v}" for k, v in KEYS.items())
    parser = argparse.ArgumentParser(prog="carnot", description=__doc__.splitlines()[0], epilog=epilog,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the task named in a config file", epilog=epilog,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_common(p)
    p.add_argument("--task", choices=TASKS)
    p = sub.add_parser("default-config", help="print a small runnable config")
    p.add_argument("--task", choices=TASKS, default="estimate-hardy")
    for task in TASKS:
        p = sub.add_parser(task, help=f"run the {task} task", epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _add_common(p)
        if task == "estimate-hardy":
            p.add_argument("--weight", help=KEYS["weight"])
        if task == "check-potential":
            p.add_argument("--criterion", help=KEYS["criterion"])
            p.add_argument("--theta", help=KEYS["theta"])
            p.add_argument("--points", help=KEYS["points"])
            p.add_argument("--kappa", type=float, help=KEYS["kappa"])
            p.add_argument("--E-alpha", dest="E_alpha", type=float, help=KEYS["E_alpha"])
        if task == "spectrum":
            p.add_argument("--n-eigen", dest="n_eigen", type=int, help=KEYS["n_eigen"])
        if task == "lap-probe":
            p.add_argument("--lambdas", help=KEYS["lambdas"])
            p.add_argument("--eps", help=KEYS["eps"])
            p.add_argument("--vector", help=KEYS["vector"])
        if task == "persistence":
            p.add_argument("--window", help=KEYS["window"])
            p.add_argument("--r-doubling", dest="r_doubling", action=argparse.BooleanOptionalAction, default=None,
                           help=KEYS["r_doubling"])
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def mapping_from_args(args: argparse.Namespace) -> tuple[dict, str]:
    data, base = {}, "."
    if getattr(args, "config", None):
        data = load_mapping(args.config)
        base = str(Path(args.config).parent)
    if args.command != "run":
        data["task"] = args.command
    elif args.task:
        data["task"] = args.task
    simple = ["algebra", "offset", "max_nodes", "alpha", "quasi_norm", "potential", "output", "seed", "weight",
              "criterion", "points", "kappa", "E_alpha", "n_eigen", "vector", "r_doubling"]
    for key in simple:
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if args.ladder:
        radius = args.radius if args.radius is not None else (data.get("ladder") or [{"radius": 2.0}])[0]["radius"]
        data["ladder"] = [{"radius": radius, "spacing": h} for h in _floats(args.ladder)]
    elif args.radius is not None and data.get("ladder"):
        data["ladder"] = [{"radius": args.radius, "spacing": s["spacing"]} for s in data["ladder"]]
    for key in ("theta", "window", "lambdas", "eps"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = _floats(val)
    if args.param:
        params = dict(data.get("potential_params") or {})
        for item in args.param:
            k, _, v = item.partition("=")
            params[k] = _parse_value(v)
        data["potential_params"] = params
    return data, base


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(dump_config(default_config(args.task)))
        return 0
    try:
        data, base = mapping_from_args(args)
        if "task" not in data:
            parser.error("no task given (use --task or a config with a task key)")
        cfg = config_from_mapping(data, base)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        bundle = run(cfg)
    except CarnotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_jsonable(bundle.record()["verdicts"]), sort_keys=True))
    return 0 if bundle.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
