"""Positivity margin of K - eps W for multiples of the admissibility threshold.

Base potential: vertical profile with gamma = -1 on heisenberg(2), horizontal
weight |z|^-2.  The threshold gamma* is the largest |gamma| meeting the first
horizontal condition on the default sample cloud.

    python scripts/threshold_scan.py --radius 2 --spacing 0.5 --multiples 0.5,1,4,16
"""
import argparse
import time

from carnot.algebra import heisenberg
from carnot.diagnostics import assemble_hamiltonian, positivity_margin
from carnot.hardy import HardyWeight
from carnot.lattice import LatticeSpec, build_lattice
from carnot.potentials import admissibility_threshold, check_admissibility, default_cloud, vertical_profile_potential


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--spacing", type=float, default=0.5)
    p.add_argument("--multiples", default="0.5,1,4,16")
    p.add_argument("--profile", default="lorentzian")
    args = p.parse_args()

    alg = heisenberg(2)
    latt = build_lattice(alg, LatticeSpec(args.radius, args.spacing))
    cloud = default_cloud(alg, latt)
    base = vertical_profile_potential(alg, -1.0, args.profile)
    gstar = admissibility_threshold(alg, base, "thm4_2", cloud)
    weight = HardyWeight.horizontal_inverse()
    print(f"nodes {latt.n}, threshold gamma* = {gstar:.6f}")
    print(f"{'multiple':>8} {'eps':>10} {'margin(eps)':>12} {'margin(0)':>12} {'time':>7}")
    for m in (float(x) for x in args.multiples.split(",")):
        V = base.scaled(m * gstar)
        rep = check_admissibility(alg, V, "thm4_2", cloud)
        t0 = time.perf_counter()
        tri = assemble_hamiltonian(latt, 2.0, V, with_generator=False)
        at_zero = positivity_margin(tri, weight, 0.0)
        at_eps = positivity_margin(tri, weight, rep.epsilon_margin) if rep.epsilon_margin > 0 else float("nan")
        print(f"{m:>8g} {rep.epsilon_margin:>10.4g} {at_eps:>12.5g} {at_zero:>12.5g} {time.perf_counter() - t0:>6.0f}s",
              flush=True)


if __name__ == "__main__":
    main()
