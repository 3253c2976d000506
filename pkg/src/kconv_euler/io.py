"""CSV and legacy-VTK writers with fixed 17-significant-digit formatting."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .mesh import Mesh

FLOAT_FMT = "%.17g"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return FLOAT_FMT % float(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def field_header(dim: int) -> list[str]:
    return (
        ["t", "cell_index"]
        + [f"x{i}" for i in range(dim)]
        + ["rho"]
        + [f"u{i}" for i in range(dim)]
        + [f"m{i}" for i in range(dim)]
    )


def field_rows(t: float, mesh: Mesh, rho, u):
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float).reshape(rho.size, -1)
    m = rho[:, None] * u
    for k in range(mesh.n_cells):
        yield [t, k, *mesh.centers[k], rho[k], *u[k], *m[k]]


def field_csv(t: float, mesh: Mesh, rho, u) -> str:
    return csv_text(field_header(mesh.dim), field_rows(t, mesh, rho, u))


def phase_to_primitive(U):
    U = np.asarray(U, dtype=float)
    rho = U[:, 0]
    u = U[:, 1:] / rho[:, None]
    return rho, u


LEDGER_HEADER = ["step", "t", "E", "dtE", "D_num", "rhs_lo", "rhs_hi", "audit_pass"]


def ledger_csv(rows) -> str:
    return csv_text(LEDGER_HEADER, rows)


def vtk_text(mesh: Mesh, rho, u, title: str = "kconv_euler field") -> str:
    """Legacy ASCII VTK STRUCTURED_POINTS with cell data (2D meshes only)."""
    if mesh.dim != 2:
        raise ValueError("legacy VTK export is implemented for 2D meshes")
    nx, ny = mesh.shape
    hx, hy = mesh.spec.h_axis
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float).reshape(rho.size, 2)
    # cells are stored with the last axis fastest; VTK wants x fastest
    order = np.arange(mesh.n_cells).reshape(nx, ny).T.ravel()
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx + 1} {ny + 1} 1",
        f"ORIGIN {fmt(-1.0)} {fmt(-1.0)} {fmt(0.0)}",
        f"SPACING {fmt(hx)} {fmt(hy)} {fmt(1.0)}",
        f"CELL_DATA {mesh.n_cells}",
        "SCALARS rho double 1",
        "LOOKUP_TABLE default",
    ]
    lines += [fmt(rho[k]) for k in order]
    lines.append("VECTORS u double")
    lines += [f"{fmt(u[k, 0])} {fmt(u[k, 1])} {fmt(0.0)}" for k in order]
    return "\n".join(lines) + "\n"
