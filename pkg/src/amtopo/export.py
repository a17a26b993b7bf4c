"""VTK legacy ASCII fields and CSV iteration history."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import Mesh

VTK_QUAD = 9


def _fmt(values) -> str:
    return " ".join(format(float(v), ".12g") for v in np.ravel(values))


def _section(name: str, data: np.ndarray, count: int, lines: list) -> None:
    if data.ndim == 1:
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt([v]) for v in data)
    elif data.ndim == 2 and data.shape[1] in (2, 3):
        pad = np.zeros((count, 3))
        pad[:, : data.shape[1]] = data
        lines.append(f"VECTORS {name} double")
        lines.extend(_fmt(row) for row in pad)
    else:
        raise ValueError(f"field {name!r} must be scalar or 2/3-vector, got shape {data.shape}")


def write_vtk(mesh: Mesh, fields: dict, path, title: str = "amtopo") -> None:
    """Write node and element fields as a legacy ASCII unstructured grid.

    A field whose leading dimension equals the node count goes to POINT_DATA,
    one matching the element count to CELL_DATA. Field names must not
    contain whitespace.
    """
    point, cell = {}, {}
    for name, values in fields.items():
        if any(ch.isspace() for ch in name) or not name:
            raise ValueError(f"invalid field name {name!r}")
        data = np.asarray(values, dtype=float)
        if data.ndim == 1 and data.size == 2 * mesh.n_nodes and data.size != mesh.n_elements:
            data = data.reshape(-1, 2)
        if data.shape[0] == mesh.n_nodes:
            point[name] = data
        elif data.shape[0] == mesh.n_elements:
            cell[name] = data
        else:
            raise ValueError(
                f"field {name!r} has {data.shape[0]} entries; expected "
                f"{mesh.n_nodes} (nodes) or {mesh.n_elements} (elements)"
            )

    lines = ["# vtk DataFile Version 3.0", title.splitlines()[0][:255] if title else "amtopo", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    for x, y in mesh.node_coords:
        lines.append(_fmt([x, y, 0.0]))
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {5 * ne}")
    lines.extend("4 " + " ".join(str(int(n)) for n in el) for el in mesh.elements)
    lines.append(f"CELL_TYPES {ne}")
    lines.extend([str(VTK_QUAD)] * ne)
    if point:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, data in point.items():
            _section(name, data, mesh.n_nodes, lines)
    if cell:
        lines.append(f"CELL_DATA {ne}")
        for name, data in cell.items():
            _section(name, data, ne, lines)
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_counts(path) -> tuple[int, int]:
    """Node and cell counts declared in a legacy VTK file."""
    n_points = n_cells = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("POINTS "):
                n_points = int(line.split()[1])
            elif line.startswith("CELLS "):
                n_cells = int(line.split()[1])
    if n_points is None or n_cells is None:
        raise ValueError(f"{path}: not an unstructured-grid VTK file")
    return n_points, n_cells


def write_history(records, path, timing: bool = False) -> None:
    """One CSV row per iteration record, header first.

    Wall-clock time is left out unless ``timing`` is set, so that repeated
    runs write identical bytes.
    """
    from .optimizer import IterationRecord

    columns = [f for f in IterationRecord.FIELDS if timing or f != "wall_time"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([_csv_value(getattr(rec, f)) for f in columns])


def _csv_value(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return repr(float(v))
