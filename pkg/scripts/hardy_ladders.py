"""Refinement ladders for the Euclidean kappa_2 and the Heisenberg E_2 constants.

    python scripts/hardy_ladders.py kappa --radius 8 --spacings 0.5,0.25,0.125
    python scripts/hardy_ladders.py e-alpha --write-baseline tests/data/e_alpha_baseline.json
"""
import argparse
import json
import time
from datetime import date

from carnot.algebra import abelian, heisenberg
from carnot.hardy import estimate_E_alpha, estimate_kappa
from carnot.lattice import LatticeSpec, build_lattice


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("constant", choices=["kappa", "e-alpha"])
    p.add_argument("--radius", type=float)
    p.add_argument("--spacings")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--write-baseline")
    args = p.parse_args()

    if args.constant == "kappa":
        radius = args.radius or 8.0
        spacings = [float(h) for h in (args.spacings or "0.5,0.25,0.125").split(",")]
        lattices = [build_lattice(abelian(3), LatticeSpec(radius, h)) for h in spacings]
        t0 = time.perf_counter()
        est = estimate_kappa(lattices, beta=args.alpha / 2)
    else:
        radius = args.radius or 6.0
        spacings = [float(h) for h in (args.spacings or "0.75,0.5,0.375").split(",")]
        lattices = [build_lattice(heisenberg(1), LatticeSpec(radius, h)) for h in spacings]
        t0 = time.perf_counter()
        est = estimate_E_alpha(lattices, args.alpha, seed=args.seed)
    wall = time.perf_counter() - t0
    for (h, v), latt in zip(est.ladder, lattices):
        print(f"h = {h:<8g} n = {latt.n:<8d} estimate = {v:.10f}")
    print(f"wall time {wall:.1f}s")

    if args.write_baseline:
        if args.constant != "e-alpha":
            p.error("--write-baseline applies to e-alpha")
        record = {"algebra": "heisenberg(1)", "alpha": args.alpha, "radius": radius, "spacings": spacings,
                  "seed": args.seed, "estimates": [v for _, v in est.ladder],
                  "recorded": f"{date.today().isoformat()}, scripts/hardy_ladders.py"}
        with open(args.write_baseline, "w") as fh:
            json.dump(record, fh, indent=2)
            fh.write("\n")


if __name__ == "__main__":
    main()
