"""Legacy VTK ASCII output (unstructured grid, HEX8 cell type 12).

Floats are printed with 17 significant digits so coordinates and
fields survive a write/parse round trip exactly.
"""

import numpy as np

from .mesh import Mesh

_VTK_HEX = 12


class VtkWriteError(ValueError):
    pass


def _fmt(x) -> str:
    return f"{x:.17g}"


def write_vtk(mesh: Mesh, point_data=None, cell_data=None, path=None) -> None:
    """Write the mesh plus named point/cell fields.

    point_data values may be (N,) scalars or (N, 3) vectors; cell_data
    values are (N_e,) scalars. Field length mismatches are rejected.
    """
    point_data = dict(point_data or {})
    cell_data = dict(cell_data or {})
    for name, arr in point_data.items():
        arr = np.asarray(arr)
        if arr.shape not in ((mesh.n_nodes,), (mesh.n_nodes, 3)):
            raise VtkWriteError(
                f"point field {name!r} has shape {arr.shape}; expected "
                f"({mesh.n_nodes},) or ({mesh.n_nodes}, 3)"
            )
    for name, arr in cell_data.items():
        arr = np.asarray(arr)
        if arr.shape != (mesh.n_cells,):
            raise VtkWriteError(
                f"cell field {name!r} has shape {arr.shape}; expected ({mesh.n_cells},)"
            )

    lines = [
        "# vtk DataFile Version 3.0",
        "gradfem output",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    for p in mesh.nodes:
        lines.append(" ".join(_fmt(v) for v in p))
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * 9}")
    for c in mesh.cells:
        lines.append("8 " + " ".join(str(v) for v in c))
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines.extend([str(_VTK_HEX)] * mesh.n_cells)

    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in arr)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(" ".join(_fmt(v) for v in row) for row in arr)
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_cells}")
        for name, arr in cell_data.items():
            arr = np.asarray(arr, dtype=np.float64)
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in arr)

    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise IOError(f"cannot write VTK file {path}: {err}") from err


def read_vtk_points(path) -> np.ndarray:
    """Parse back the POINTS block (round-trip checks, small files)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    for i, ln in enumerate(lines):
        if ln.startswith("POINTS"):
            n = int(ln.split()[1])
            vals = " ".join(lines[i + 1 : i + 1 + n]).split()
            return np.array(vals, dtype=np.float64).reshape(n, 3)
    raise VtkWriteError(f"no POINTS block in {path}")
