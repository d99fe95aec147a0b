"""Export of operators and grid functions.

Binary format: operators go through ``scipy.sparse.save_npz``; grid functions are
``.npz`` archives with arrays ``coords`` (n x m), ``values`` (n) and ``spacings`` (m).
Text format: comma-separated, one node per row, columns ``x1..xm,value`` (complex
values add ``value_imag``); sparse operators as ``row,col,value`` triplets.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .lattice import GridFunction, Lattice


def save_operator(path, op) -> Path:
    path = Path(path)
    sp.save_npz(path, sp.csr_matrix(op))
    return path


def load_operator(path) -> sp.csr_matrix:
    return sp.load_npz(path).tocsr()


def save_grid_function(path, u: GridFunction) -> Path:
    path = Path(path)
    np.savez(path, coords=u.lattice.coords, values=u.values, spacings=u.lattice.spacings)
    return path


def load_grid_function(path) -> dict[str, np.ndarray]:
    with np.load(path) as data:
        return {k: data[k] for k in data.files}


def write_operator_csv(path, op) -> Path:
    coo = sp.coo_matrix(op)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for i, j, v in zip(coo.row, coo.col, coo.data):
            w.writerow([int(i), int(j), repr(float(v))])
    return path


def write_grid_function_csv(path, u: GridFunction) -> Path:
    latt: Lattice = u.lattice
    path = Path(path)
    cplx = np.iscomplexobj(u.values)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(latt.dim)] + ["value"] + (["value_imag"] if cplx else []))
        for x, v in zip(latt.coords, u.values):
            row = [repr(float(c)) for c in x] + [repr(float(np.real(v)))]
            if cplx:
                row.append(repr(float(np.imag(v))))
            w.writerow(row)
    return path


def write_table(path, header, rows) -> Path:
    """Comma-separated table with a header row; floats written with ``repr`` for exact round trips."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in row])
    return path


def read_points(path) -> np.ndarray:
    """Point cloud from a comma- or whitespace-separated file (header lines starting with a letter skipped)."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line[0].isalpha() or line.startswith("#"):
            continue
        rows.append([float(c) for c in line.replace(",", " ").split()])
    return np.asarray(rows, dtype=float)
