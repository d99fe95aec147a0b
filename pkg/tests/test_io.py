import csv

import numpy as np
import scipy.sparse as sp

from carnot.algebra import heisenberg
from carnot.io import (
    load_grid_function,
    load_operator,
    read_points,
    save_grid_function,
    save_operator,
    write_grid_function_csv,
    write_operator_csv,
)
from carnot.lattice import GridFunction, LatticeSpec, build_lattice, sublaplacian


def test_operator_round_trips(tmp_path):
    L = sublaplacian(build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5)))
    back = load_operator(save_operator(tmp_path / "L.npz", L))
    assert abs(back - L).max() == 0
    with open(write_operator_csv(tmp_path / "L.csv", L)) as fh:
        rows = list(csv.reader(fh))[1:]
    rebuilt = sp.coo_matrix(([float(v) for _, _, v in rows], ([int(i) for i, _, _ in rows], [int(j) for _, j, _ in rows])),
                            shape=L.shape)
    assert abs(rebuilt - L).max() == 0


def test_grid_function_round_trips(tmp_path):
    latt = build_lattice(heisenberg(1), LatticeSpec(2.0, 0.5))
    u = GridFunction(np.exp(-np.sum(latt.coords**2, axis=1)) * (1 + 0.5j), latt)
    data = load_grid_function(save_grid_function(tmp_path / "u.npz", u))
    np.testing.assert_array_equal(data["values"], u.values)
    np.testing.assert_array_equal(data["coords"], latt.coords)
    table = np.loadtxt(write_grid_function_csv(tmp_path / "u.csv", u), delimiter=",", skiprows=1)
    np.testing.assert_array_equal(table[:, :3], latt.coords)
    np.testing.assert_array_equal(table[:, 3] + 1j * table[:, 4], u.values)


def test_read_points(tmp_path):
    p = tmp_path / "pts.csv"
    p.write_text("x1,x2,x3\n# comment\n1,2,3\n0.5 0.25 -1\n")
    np.testing.assert_array_equal(read_points(p), [[1, 2, 3], [0.5, 0.25, -1]])
