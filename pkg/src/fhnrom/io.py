"""On-disk formats: binary matrices, legacy VTK meshes and small CSV tables.

Binary matrix layout (little endian)::

    8 bytes   magic b"FHNMAT01"
    uint64    rows
    uint64    cols
    uint64    column stride (distance in values between column starts, >= rows)
    float64   values, column-major, cols * stride entries
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .mesh import Mesh

__all__ = ["MAGIC", "write_matrix", "read_matrix", "write_vtk", "read_vtk_cell_count", "write_csv"]

MAGIC = b"FHNMAT01"
_HEADER = struct.Struct("<8sQQQ")


def write_matrix(path, matrix: np.ndarray) -> None:
    a = np.asarray(matrix, dtype="<f8")
    if a.ndim == 1:
        a = a[:, None]
    rows, cols = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, rows, cols, rows))
        fh.write(np.asfortranarray(a).tobytes(order="F"))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, rows, cols, stride = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if stride < rows:
            raise ValueError(f"{path}: column stride {stride} < rows {rows}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != stride * cols:
        raise ValueError(f"{path}: expected {stride * cols} values, found {data.size}")
    return np.ascontiguousarray(data.reshape(cols, stride)[:, :rows].T, dtype=float)


def write_vtk(path, mesh: Mesh, cell_data: dict | None = None, title="fhnrom") -> None:
    """Legacy ASCII VTK unstructured grid with optional scalar cell fields."""
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {4 * ne}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["5"] * ne
    if cell_data:
        lines.append(f"CELL_DATA {ne}")
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (ne,):
                raise ValueError(f"cell field {name!r} has shape {values.shape}, expected ({ne},)")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_cell_count(path) -> int:
    """Parse a legacy VTK file far enough to return its cell count."""
    tokens = Path(path).read_text().split()
    ncells = int(tokens[tokens.index("CELLS") + 1])
    types = tokens.index("CELL_TYPES")
    if int(tokens[types + 1]) != ncells:
        raise ValueError(f"{path}: CELLS and CELL_TYPES disagree")
    return ncells


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
