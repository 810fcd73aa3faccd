"""Conforming triangular meshes of axis-aligned rectangles.

Uniform grids are split cell-by-cell along the bottom-left to top-right
diagonal, which keeps refinements nested.  Edge connectivity is stored with
the orientation conventions interior-penalty assembly needs: every interior
edge knows its left/right elements and carries the unit normal pointing from
left to right (left = smaller element id).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


class MeshError(ValueError):
    pass


@dataclass
class Mesh2D:
    vertices: NDArray[np.float64]       # (nv, 2)
    triangles: NDArray[np.int64]        # (nt, 3) vertex ids, counter-clockwise

    # interior edges, sorted by (left element, right element)
    iedge_elems: NDArray[np.int64] = field(init=False)    # (ni, 2) left, right
    iedge_local: NDArray[np.int64] = field(init=False)    # (ni, 2) local edge id per side
    iedge_verts: NDArray[np.int64] = field(init=False)    # (ni, 2) endpoint vertex ids
    iedge_normal: NDArray[np.float64] = field(init=False) # (ni, 2) unit, left -> right
    iedge_length: NDArray[np.float64] = field(init=False) # (ni,)

    # boundary edges, sorted by (element, local id)
    bedge_elem: NDArray[np.int64] = field(init=False)
    bedge_local: NDArray[np.int64] = field(init=False)
    bedge_verts: NDArray[np.int64] = field(init=False)
    bedge_normal: NDArray[np.float64] = field(init=False) # outward unit
    bedge_length: NDArray[np.float64] = field(init=False)

    # per-element geometry of the affine map x = v0 + B @ xhat
    origin: NDArray[np.float64] = field(init=False)       # (nt, 2) first vertex
    jac: NDArray[np.float64] = field(init=False)          # (nt, 2, 2) columns v1-v0, v2-v0
    jac_inv: NDArray[np.float64] = field(init=False)
    det: NDArray[np.float64] = field(init=False)          # (nt,) = 2*area, positive
    areas: NDArray[np.float64] = field(init=False)
    diameters: NDArray[np.float64] = field(init=False)    # h_E = longest edge
    inradii: NDArray[np.float64] = field(init=False)

    h: float = 0.0            # mesh size: longest grid-cell edge for built meshes
    shape_regularity: float = field(init=False)  # m1 = max h_E / inradius, reported not asserted
    domain_area: float = field(init=False)

    def __post_init__(self) -> None:
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self._element_geometry()
        self._edge_connectivity()
        if self.h == 0.0:
            self.h = float(self.diameters.max())
        self.shape_regularity = float((self.diameters / self.inradii).max())
        self.domain_area = float(self.areas.sum())
        for arr in (self.vertices, self.triangles, self.iedge_elems, self.iedge_local,
                    self.iedge_verts, self.iedge_normal, self.iedge_length,
                    self.bedge_elem, self.bedge_local, self.bedge_verts,
                    self.bedge_normal, self.bedge_length, self.origin, self.jac,
                    self.jac_inv, self.det, self.areas, self.diameters, self.inradii):
            arr.flags.writeable = False

    @property
    def n_elements(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_interior_edges(self) -> int:
        return self.iedge_elems.shape[0]

    @property
    def n_boundary_edges(self) -> int:
        return self.bedge_elem.shape[0]

    def _element_geometry(self) -> None:
        p = self.vertices[self.triangles]            # (nt, 3, 2)
        v0, v1, v2 = p[:, 0], p[:, 1], p[:, 2]
        self.origin = v0.copy()
        self.jac = np.stack([v1 - v0, v2 - v0], axis=-1)
        self.det = self.jac[:, 0, 0] * self.jac[:, 1, 1] - self.jac[:, 0, 1] * self.jac[:, 1, 0]
        if np.any(self.det <= 0):
            raise MeshError("triangles must be counter-clockwise with positive area")
        self.areas = 0.5 * self.det
        inv = np.empty_like(self.jac)
        inv[:, 0, 0] = self.jac[:, 1, 1]
        inv[:, 0, 1] = -self.jac[:, 0, 1]
        inv[:, 1, 0] = -self.jac[:, 1, 0]
        inv[:, 1, 1] = self.jac[:, 0, 0]
        self.jac_inv = inv / self.det[:, None, None]
        e0 = np.linalg.norm(v2 - v1, axis=1)
        e1 = np.linalg.norm(v0 - v2, axis=1)
        e2 = np.linalg.norm(v1 - v0, axis=1)
        lengths = np.stack([e0, e1, e2], axis=1)
        self.diameters = lengths.max(axis=1)
        # r = area / semiperimeter
        self.inradii = self.areas / (0.5 * lengths.sum(axis=1))

    def _edge_connectivity(self) -> None:
        nt = self.n_elements
        tri = self.triangles
        # local edge j runs from vertex j to vertex (j+1) % 3
        ends = np.stack([tri, np.roll(tri, -1, axis=1)], axis=-1)  # (nt, 3, 2)
        flat = ends.reshape(-1, 2)                                 # row = 3*elem + local
        key = np.sort(flat, axis=1)
        order = np.lexsort((key[:, 1], key[:, 0]))
        k = key[order]
        same = np.all(k[:-1] == k[1:], axis=1)

        pair_first = np.flatnonzero(np.concatenate([same, [False]]))
        paired = np.zeros(len(order), dtype=bool)
        paired[pair_first] = True
        paired[pair_first + 1] = True

        a, b = order[pair_first], order[pair_first + 1]
        ea, eb = a // 3, b // 3
        la, lb = a % 3, b % 3
        left_is_a = ea < eb
        left = np.where(left_is_a, ea, eb)
        right = np.where(left_is_a, eb, ea)
        lloc = np.where(left_is_a, la, lb)
        rloc = np.where(left_is_a, lb, la)
        srt = np.lexsort((right, left))
        self.iedge_elems = np.stack([left, right], axis=1)[srt]
        self.iedge_local = np.stack([lloc, rloc], axis=1)[srt]
        # endpoints in the left element's traversal order
        self.iedge_verts = flat[self.iedge_elems[:, 0] * 3 + self.iedge_local[:, 0]]

        bidx = order[~paired]
        bsrt = np.lexsort((bidx % 3, bidx // 3))
        bidx = bidx[bsrt]
        self.bedge_elem = bidx // 3
        self.bedge_local = bidx % 3
        self.bedge_verts = flat[bidx]

        def edge_geom(verts: NDArray, elems: NDArray) -> tuple[NDArray, NDArray]:
            t = self.vertices[verts[:, 1]] - self.vertices[verts[:, 0]]
            length = np.linalg.norm(t, axis=1)
            n = np.stack([t[:, 1], -t[:, 0]], axis=1) / length[:, None]
            # orient away from the owning element's centroid
            mid = 0.5 * (self.vertices[verts[:, 0]] + self.vertices[verts[:, 1]])
            cen = self.vertices[self.triangles[elems]].mean(axis=1)
            flip = np.einsum("ij,ij->i", n, mid - cen) < 0
            n[flip] *= -1.0
            return n, length

        self.iedge_normal, self.iedge_length = edge_geom(self.iedge_verts, self.iedge_elems[:, 0])
        self.bedge_normal, self.bedge_length = edge_geom(self.bedge_verts, self.bedge_elem)


@dataclass(frozen=True)
class ElementGeometry:
    area: float
    diameter: float
    inradius: float
    origin: NDArray[np.float64]
    jacobian: NDArray[np.float64]
    jacobian_inv: NDArray[np.float64]
    det: float

    def to_physical(self, ref: NDArray) -> NDArray:
        return self.origin + np.asarray(ref) @ self.jacobian.T

    def to_reference(self, phys: NDArray) -> NDArray:
        return (np.asarray(phys) - self.origin) @ self.jacobian_inv.T


def build_rect_mesh(nx: int, ny: int,
                    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)) -> Mesh2D:
    """Uniform triangulation of [x0,x1] x [y0,y1], two triangles per grid cell.

    Each cell is split along its bottom-left to top-right diagonal; both
    triangles are counter-clockwise.  h is the longest grid-cell edge.
    """
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {domain!r}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    ix, iy = ix.ravel(), iy.ravel()
    a = iy * (nx + 1) + ix          # bottom-left
    b = a + 1                       # bottom-right
    c = b + (nx + 1)                # top-right
    d = a + (nx + 1)                # top-left
    lower = np.stack([a, b, c], axis=1)
    upper = np.stack([a, c, d], axis=1)
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    mesh = Mesh2D(vertices, triangles, h=max((x1 - x0) / nx, (y1 - y0) / ny))
    return mesh


def element_geometry(mesh: Mesh2D, element: int) -> ElementGeometry:
    if not 0 <= element < mesh.n_elements:
        raise IndexError(f"element {element} out of range [0, {mesh.n_elements})")
    return ElementGeometry(
        area=float(mesh.areas[element]),
        diameter=float(mesh.diameters[element]),
        inradius=float(mesh.inradii[element]),
        origin=mesh.origin[element],
        jacobian=mesh.jac[element],
        jacobian_inv=mesh.jac_inv[element],
        det=float(mesh.det[element]),
    )


def element_neighbors(mesh: Mesh2D) -> NDArray[np.int64]:
    """Element adjacency across interior edges: (nt, 3), padded with -1."""
    pairs = np.concatenate([mesh.iedge_elems, mesh.iedge_elems[:, ::-1]])
    order = np.argsort(pairs[:, 0], kind="stable")
    src, dst = pairs[order, 0], pairs[order, 1]
    slot = np.arange(len(src)) - np.searchsorted(src, src)
    nbr = np.full((mesh.n_elements, 3), -1, dtype=np.int64)
    nbr[src, slot] = dst
    return nbr


def nested_dissection_order(mesh: Mesh2D, leaf: int = 24) -> NDArray[np.int64]:
    """Element ordering that keeps natural-order block LU fill low.

    Recursive coordinate bisection of the element centroids; at every split
    the elements of the first half that touch the second half across an edge
    form a separator and are ordered after both halves.  Factoring any
    per-element block matrix in this order without further column
    permutation then fills roughly like nested dissection, which is what the
    time-stepping solves rely on.  `leaf` is the recursion cutoff.
    """
    if leaf < 1:
        raise ValueError(f"leaf must be at least 1, got {leaf}")
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    nbr = element_neighbors(mesh)
    out: list[NDArray[np.int64]] = []

    def rec(idx: NDArray[np.int64]) -> None:
        if len(idx) <= leaf:
            out.append(np.sort(idx))
            return
        ext = cen[idx].max(axis=0) - cen[idx].min(axis=0)
        axis = int(ext[1] > ext[0])
        halves = idx[np.argsort(cen[idx, axis], kind="stable")]
        a, b = halves[:len(halves) // 2], halves[len(halves) // 2:]
        # one extra slot so the -1 neighbor padding reads as "not in b"
        in_b = np.zeros(mesh.n_elements + 1, dtype=bool)
        in_b[b] = True
        sep = in_b[nbr[a]].any(axis=1)
        rec(a[~sep])
        rec(b)
        out.append(np.sort(a[sep]))

    rec(np.arange(mesh.n_elements, dtype=np.int64))
    return np.concatenate(out)


def mesh_hash(mesh: Mesh2D) -> str:
    """Stable digest of the geometry, used by checkpoints to refuse mismatched meshes."""
    m = hashlib.sha256()
    m.update(np.ascontiguousarray(mesh.vertices).tobytes())
    m.update(np.ascontiguousarray(mesh.triangles).tobytes())
    return m.hexdigest()
