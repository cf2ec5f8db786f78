"""CSV tables, legacy VTK snapshots and MatrixMarket dumps."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import scipy.io

from .fespace import DGSpace
from .harness import ConvergenceRow, ConvergenceTable

CSV_HEADER = ("cells", "dofs", "err_L2S", "rate_L2S", "err_LinfL2", "rate_LinfL2")

# reference corners of a quad, counter-clockwise
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class IoError(OSError):
    pass


def _fmt_err(x: float) -> str:
    return f"{x:.3e}"


def _fmt_rate(x: float | None) -> str:
    return "" if x is None else f"{x:.2f}"


def write_csv(table: ConvergenceTable, path) -> None:
    """Write a convergence table; the first row's rates are empty fields."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in table.rows:
                w.writerow([r.cells, r.dofs, _fmt_err(r.err_L2S), _fmt_rate(r.rate_L2S),
                            _fmt_err(r.err_LinfL2), _fmt_rate(r.rate_LinfL2)])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_csv(path, degree: int = 0) -> ConvergenceTable:
    table = ConvergenceTable(degree)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise IoError(f"{path}: unexpected header")
    opt = lambda s: None if s == "" else float(s)  # noqa: E731
    for line in rows[1:]:
        if len(line) != len(CSV_HEADER):
            raise IoError(f"{path}: expected {len(CSV_HEADER)} columns, got {len(line)}")
        table.rows.append(ConvergenceRow(int(line[0]), int(line[1]), float(line[2]),
                                         opt(line[3]), float(line[4]), opt(line[5])))
    return table


def format_table(table: ConvergenceTable) -> str:
    return table.to_text()


# -- VTK ---------------------------------------------------------------------------------


def corner_values(space: DGSpace, U) -> np.ndarray:
    """Per-element corner values, shape ``(n_components, n_elements, 4)``."""
    ne = space.mesh.n_elements
    e = np.repeat(np.arange(ne), 4)
    val, _, _ = space.evaluation_matrices(e, np.tile(_CORNERS[:, 0], ne),
                                          np.tile(_CORNERS[:, 1], ne))
    return np.stack([(val @ u).reshape(ne, 4) for u in space.split(U)])


def write_vtk(space: DGSpace, U, path, fields: list[str] | None = None,
              title: str = "membrane_dg") -> None:
    """Legacy ASCII unstructured grid with one point per element corner.

    Corners are duplicated per element so discontinuities across faces and
    across the membrane survive in the output.
    """
    mesh = space.mesh
    ne = mesh.n_elements
    n = space.n_components
    names = fields or [f"u{c}" for c in range(n)]
    if len(names) != n:
        raise ValueError(f"need {n} field names, got {len(names)}")
    vals = corner_values(space, U)
    pts = mesh.vertices[mesh.elements].reshape(-1, 2)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {4 * ne} double"]
    lines += [f"{x:.16e} {y:.16e} 0.0" for x, y in pts]
    lines.append(f"CELLS {ne} {5 * ne}")
    lines += [f"4 {4 * e} {4 * e + 1} {4 * e + 2} {4 * e + 3}" for e in range(ne)]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["9"] * ne
    lines.append(f"CELL_DATA {ne}")
    lines += ["SCALARS subdomain int 1", "LOOKUP_TABLE default"]
    lines += [str(int(s)) for s in mesh.element_subdomain]
    lines.append(f"POINT_DATA {4 * ne}")
    for name, v in zip(names, vals):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{x:.16e}" for x in v.ravel()]
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_vtk(path) -> dict:
    """Parse files produced by :func:`write_vtk`.

    Returns a dict with ``points``, ``cells``, ``cell_types``, ``cell_data``
    and ``point_data``.  Raises ``IoError`` on any structural mismatch.
    """
    tokens = Path(path).read_text(encoding="ascii").split("\n")
    if not tokens[0].startswith("# vtk DataFile"):
        raise IoError("missing VTK signature")
    if tokens[2].strip() != "ASCII" or tokens[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise IoError("not an ASCII unstructured grid")
    words = " ".join(tokens[4:]).split()
    pos = 0

    def take(k):
        nonlocal pos
        out = words[pos:pos + k]
        if len(out) != k:
            raise IoError("truncated file")
        pos += k
        return out

    out = dict(cell_data={}, point_data={})
    section = None
    while pos < len(words):
        key = take(1)[0]
        if key == "POINTS":
            npts, _ = take(2)
            out["points"] = np.array(take(3 * int(npts)), float).reshape(-1, 3)
        elif key == "CELLS":
            nc, size = map(int, take(2))
            raw = np.array(take(size), int)
            cells = []
            i = 0
            while i < size:
                cells.append(raw[i + 1:i + 1 + raw[i]])
                i += 1 + raw[i]
            if len(cells) != nc:
                raise IoError("cell count mismatch")
            out["cells"] = np.array(cells)
        elif key == "CELL_TYPES":
            nc = int(take(1)[0])
            out["cell_types"] = np.array(take(nc), int)
        elif key in ("CELL_DATA", "POINT_DATA"):
            section = (key, int(take(1)[0]))
        elif key == "SCALARS":
            name, dtype, _ = take(3)
            if take(2) != ["LOOKUP_TABLE", "default"]:
                raise IoError("expected default lookup table")
            if section is None:
                raise IoError("SCALARS outside a data section")
            kind, count = section
            data = np.array(take(count), float)
            store = out["cell_data" if kind == "CELL_DATA" else "point_data"]
            store[name] = data.astype(int) if dtype == "int" else data
        else:
            raise IoError(f"unexpected keyword {key!r}")
    if len(out.get("points", ())) != 4 * len(out.get("cells", ())):
        raise IoError("point count does not match duplicated corners")
    return out


def write_matrix_market(matrix, path, comment: str = "") -> None:
    try:
        scipy.io.mmwrite(str(path), matrix, comment=comment)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def finite_or_raise(x: float, what: str) -> float:
    if not math.isfinite(x):
        raise FloatingPointError(f"{what} is not finite")
    return x
