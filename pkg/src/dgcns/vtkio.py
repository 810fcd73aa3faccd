"""Legacy ASCII VTK writers for triangle meshes and discontinuous fields.

Discontinuous fields cannot be written as ordinary vertex data: the six
lattice values of an element belong to that element alone.  The field
writer therefore emits a once-refined visualization mesh in which every
element contributes its own copy of its six lattice points, so jumps
across edges survive in the file instead of being averaged away.
"""

from __future__ import annotations

import numpy as np

from .fespace import FieldCoeffs, dubiner_table
from .mesh import Mesh2D

__all__ = ["write_mesh_vtk", "write_fields_vtk"]

# degree-2 lattice on the reference triangle and its four-way split
_VIZ_REF = np.array(
    [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
_VIZ_TRIS = np.array([[0, 3, 5], [3, 1, 4], [5, 4, 2], [3, 4, 5]])


def _header(fh, title: str, points: np.ndarray) -> None:
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write(title + "\n")
    fh.write("ASCII\n")
    fh.write("DATASET UNSTRUCTURED_GRID\n")
    fh.write(f"POINTS {points.shape[0]} double\n")
    for x, y in points:
        fh.write(f"{x:.12e} {y:.12e} 0.000000000000e+00\n")


def _cells(fh, tris: np.ndarray) -> None:
    n = tris.shape[0]
    fh.write(f"CELLS {n} {4 * n}\n")
    for a, b, c in tris:
        fh.write(f"3 {a} {b} {c}\n")
    fh.write(f"CELL_TYPES {n}\n")
    fh.write("5\n" * n)


def write_mesh_vtk(path, mesh: Mesh2D) -> None:
    """Dump the triangulation itself (shared vertices, no field data)."""
    with open(path, "w", encoding="ascii") as fh:
        _header(fh, "triangulation", mesh.vertices)
        _cells(fh, mesh.triangles)


def _lattice_values(field: FieldCoeffs) -> np.ndarray:
    """Per-component field values at the six lattice points, shape (ncomp, ne, 6)."""
    sp = field.space
    table, _ = dubiner_table(sp.degree, _VIZ_REF)      # (6, nb)
    out = np.empty((sp.ncomp, sp.mesh.n_elements, len(_VIZ_REF)))
    for comp in range(sp.ncomp):
        coeffs = field.component(comp).reshape(sp.mesh.n_elements, sp.nb)
        out[comp] = coeffs @ table.T
    return out


def write_fields_vtk(path, rho: FieldCoeffs, c: FieldCoeffs, u: FieldCoeffs,
                     p: FieldCoeffs, time: float | None = None) -> None:
    """Write one snapshot with rho/c/p as scalars and u as a vector field.

    All fields must live on the same mesh; degrees may differ (the
    pressure is one below the rest), each is evaluated with its own basis.
    """
    mesh = rho.space.mesh
    for other in (c, u, p):
        if other.space.mesh is not mesh:
            raise ValueError("snapshot fields must share one mesh")
    if u.space.ncomp != 2:
        raise ValueError("u must be a two-component field")

    # duplicated points: element e owns rows 6e..6e+5
    pts = mesh.origin[:, None, :] + np.einsum("eij,qj->eqi", mesh.jac, _VIZ_REF)
    pts = pts.reshape(-1, 2)
    base = 6 * np.arange(mesh.n_elements)
    tris = (base[:, None, None] + _VIZ_TRIS[None, :, :]).reshape(-1, 3)

    t = time if time is not None else rho.time
    title = "fields" if t is None else f"fields t={t:.10e}"
    with open(path, "w", encoding="ascii") as fh:
        _header(fh, title, pts)
        _cells(fh, tris)
        fh.write(f"POINT_DATA {pts.shape[0]}\n")
        for name, field in (("rho", rho), ("c", c), ("p", p)):
            vals = _lattice_values(field)[0].ravel()
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in vals:
                fh.write(f"{v:.12e}\n")
        ux, uy = _lattice_values(u)
        fh.write("VECTORS u double\n")
        for vx, vy in zip(ux.ravel(), uy.ravel()):
            fh.write(f"{vx:.12e} {vy:.12e} 0.000000000000e+00\n")
