"""Broken polynomial spaces on triangles: basis, quadrature, projection.

The reference basis is the orthonormal (Dubiner) modal basis, assembled from
Jacobi polynomials through the collapsed-coordinate construction.  It is
orthonormal on the unit reference triangle {x,y >= 0, x+y <= 1}, so the
physical element mass matrix is det(B) * I and local projections are a single
weighted dot product.  Triangle quadrature is a Duffy-collapsed tensor rule
(Gauss-Legendre x Gauss-Jacobi), edge quadrature plain Gauss-Legendre.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import ceil

import numpy as np
from numpy.typing import NDArray
from scipy.special import eval_jacobi, gammaln, roots_jacobi, roots_legendre

from .mesh import Mesh2D

MAX_EXACTNESS = 99
SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# reference basis

def _jacobi_norm(n: int, alpha: int, beta: int) -> float:
    # L2 norm of P_n^(alpha,beta) on [-1,1] with weight (1-x)^alpha (1+x)^beta
    ln = ((alpha + beta + 1) * np.log(2.0)
          + gammaln(n + alpha + 1) + gammaln(n + beta + 1)
          - np.log(2 * n + alpha + beta + 1)
          - gammaln(n + alpha + beta + 1) - gammaln(n + 1))
    return float(np.exp(0.5 * ln))


def _jacobi(x: NDArray, n: int, alpha: int, beta: int) -> NDArray:
    return eval_jacobi(n, alpha, beta, x) / _jacobi_norm(n, alpha, beta)


def _grad_jacobi(x: NDArray, n: int, alpha: int, beta: int) -> NDArray:
    if n == 0:
        return np.zeros_like(x)
    return np.sqrt(n * (n + alpha + beta + 1)) * _jacobi(x, n - 1, alpha + 1, beta + 1)


def basis_modes(k: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(k + 1) for j in range(k + 1 - i)]


def n_modes(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def dubiner_table(k: int, pts: NDArray) -> tuple[NDArray, NDArray]:
    """Values and gradients of the orthonormal basis on the unit triangle.

    pts: (npts, 2) inside the closed unit triangle.  Returns values
    (npts, nb) and gradients (npts, nb, 2).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    r = 2.0 * pts[:, 0] - 1.0
    s = 2.0 * pts[:, 1] - 1.0
    # collapsed coordinates; the top vertex s=1 takes the limit a=-1
    b = s
    denom = 1.0 - s
    a = np.where(denom > 1e-14, 2.0 * (1.0 + r) / np.where(denom > 1e-14, denom, 1.0) - 1.0, -1.0)

    modes = basis_modes(k)
    nb = len(modes)
    vals = np.empty((pts.shape[0], nb))
    grads = np.empty((pts.shape[0], nb, 2))
    half1mb = 0.5 * (1.0 - b)
    for m, (i, j) in enumerate(modes):
        fa = _jacobi(a, i, 0, 0)
        dfa = _grad_jacobi(a, i, 0, 0)
        gb = _jacobi(b, j, 2 * i + 1, 0)
        dgb = _grad_jacobi(b, j, 2 * i + 1, 0)

        # biunit-triangle mode and its (r, s) derivatives
        mode = SQRT2 * fa * gb * (1.0 - b) ** i
        dmodedr = dfa * gb
        dmodeds = dfa * (gb * 0.5 * (1.0 + a))
        if i > 0:
            dmodedr = dmodedr * half1mb ** (i - 1)
            dmodeds = dmodeds * half1mb ** (i - 1)
        tmp = dgb * half1mb ** i
        if i > 0:
            tmp = tmp - 0.5 * i * gb * half1mb ** (i - 1)
        dmodeds = dmodeds + fa * tmp
        scale = 2.0 ** (i + 0.5)

        # unit-triangle basis is 2 * mode(2x-1, 2y-1): factor 2 keeps it
        # orthonormal, the chain rule adds another 2 on each derivative
        vals[:, m] = 2.0 * mode
        grads[:, m, 0] = 4.0 * scale * dmodedr
        grads[:, m, 1] = 4.0 * scale * dmodeds
    return vals, grads


def eval_basis(k: int, ref_point) -> tuple[NDArray, NDArray]:
    """Basis values and reference gradients at one point of the closed reference triangle."""
    p = np.asarray(ref_point, dtype=np.float64).reshape(2)
    if p[0] < -1e-12 or p[1] < -1e-12 or p[0] + p[1] > 1.0 + 1e-12:
        raise ValueError(f"point {p} outside the reference triangle")
    vals, grads = dubiner_table(k, p[None, :])
    return vals[0], grads[0]


# ---------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True)
class QuadratureRule:
    points: NDArray[np.float64]   # (nq, 2) triangle, (nq, 1) edge, on the unit cell
    weights: NDArray[np.float64]
    exactness: int                # requested degree
    actual_exactness: int         # what the node count delivers (2n-1 per direction)


@lru_cache(maxsize=None)
def make_quadrature(kind: str, exactness: int) -> QuadratureRule:
    if not 1 <= exactness <= MAX_EXACTNESS:
        raise ValueError(f"exactness {exactness} unsupported; supported range is 1..{MAX_EXACTNESS}")
    n = ceil((exactness + 1) / 2)
    tgl, wgl = roots_legendre(n)
    xg = 0.5 * (tgl + 1.0)
    wg = 0.5 * wgl
    if kind == "edge":
        return QuadratureRule(xg[:, None].copy(), wg.copy(), exactness, 2 * n - 1)
    if kind == "triangle":
        tgj, wgj = roots_jacobi(n, 1.0, 0.0)
        yg = 0.5 * (tgj + 1.0)
        wj = 0.25 * wgj          # absorbs the Duffy factor (1-y)
        X = np.outer(xg, 1.0 - yg).ravel()
        Y = np.tile(yg, n)
        W = np.outer(wg, wj).ravel()
        pts = np.stack([X, Y], axis=1)
        return QuadratureRule(pts, W, exactness, 2 * n - 1)
    raise ValueError(f"unknown quadrature kind {kind!r}")


def volume_exactness(k: int) -> int:
    # 2k+2 covers bilinear products with margin; trilinear edge/volume terms need 3k
    return max(2 * k + 2, 3 * k)


# ---------------------------------------------------------------------------
# the broken space and its precomputed tables

@dataclass(eq=False)
class DgSpace:
    mesh: Mesh2D
    degree: int
    ncomp: int = 1
    exactness: int | None = None   # quadrature override, e.g. to share a finer space's rule

    nb: int = field(init=False)
    nscalar: int = field(init=False)         # dofs of one component
    total_dofs: int = field(init=False)

    rule: QuadratureRule = field(init=False)
    edge_rule: QuadratureRule = field(init=False)
    ref_vals: NDArray = field(init=False)    # (nq, nb)
    ref_grads: NDArray = field(init=False)   # (nq, nb, 2)
    phys_grads: NDArray = field(init=False)  # (ne, nq, nb, 2)
    qpoints: NDArray = field(init=False)     # (ne, nq, 2) physical
    # interior edge traces: side 0 = left element, side 1 = right
    tr_vals: NDArray = field(init=False)     # (ni, 2, nqe, nb)
    tr_grads: NDArray = field(init=False)    # (ni, 2, nqe, nb, 2) physical gradients
    iq_points: NDArray = field(init=False)   # (ni, nqe, 2)
    btr_vals: NDArray = field(init=False)    # (nbed, nqe, nb)
    btr_grads: NDArray = field(init=False)
    bq_points: NDArray = field(init=False)

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.ncomp not in (1, 2):
            raise ValueError("ncomp must be 1 or 2")
        k, mesh = self.degree, self.mesh
        self.nb = n_modes(k)
        self.nscalar = self.nb * mesh.n_elements
        self.total_dofs = self.ncomp * self.nscalar

        ex = self.exactness if self.exactness is not None else volume_exactness(k)
        self.rule = make_quadrature("triangle", ex)
        self.edge_rule = make_quadrature("edge", ex)
        self.ref_vals, self.ref_grads = dubiner_table(k, self.rule.points)
        # physical gradient push-forward: grad_x = B^{-T} grad_ref
        self.phys_grads = np.einsum("edi,qbd->eqbi", mesh.jac_inv, self.ref_grads)
        self.qpoints = mesh.origin[:, None, :] + np.einsum(
            "eij,qj->eqi", mesh.jac, self.rule.points)

        t = self.edge_rule.points[:, 0]
        nqe = t.shape[0]

        def traces(everts, elems):
            p0 = mesh.vertices[everts[:, 0]]
            p1 = mesh.vertices[everts[:, 1]]
            pts = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]  # (ne?, nqe, 2)
            ref = np.einsum("edi,eqi->eqd", mesh.jac_inv[elems], pts - mesh.origin[elems][:, None, :])
            v, g = dubiner_table(k, ref.reshape(-1, 2))
            v = v.reshape(len(elems), nqe, self.nb)
            g = g.reshape(len(elems), nqe, self.nb, 2)
            gph = np.einsum("edi,eqbd->eqbi", mesh.jac_inv[elems], g)
            return pts, v, gph

        ni = mesh.n_interior_edges
        self.tr_vals = np.empty((ni, 2, nqe, self.nb))
        self.tr_grads = np.empty((ni, 2, nqe, self.nb, 2))
        for side in (0, 1):
            self.iq_points, v, g = traces(mesh.iedge_verts, mesh.iedge_elems[:, side])
            self.tr_vals[:, side] = v
            self.tr_grads[:, side] = g
        self.bq_points, self.btr_vals, self.btr_grads = traces(mesh.bedge_verts, mesh.bedge_elem)

    def dof_slice(self, comp: int) -> slice:
        return slice(comp * self.nscalar, (comp + 1) * self.nscalar)


@dataclass
class FieldCoeffs:
    space: DgSpace
    values: NDArray[np.float64]
    time: float | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.space.total_dofs,):
            raise ValueError(
                f"coefficient vector has length {self.values.shape}, expected {self.space.total_dofs}")

    def copy(self) -> "FieldCoeffs":
        return FieldCoeffs(self.space, self.values.copy(), self.time)

    def component(self, c: int) -> NDArray:
        return self.values[self.space.dof_slice(c)]


def zeros(space: DgSpace, time: float | None = None) -> FieldCoeffs:
    return FieldCoeffs(space, np.zeros(space.total_dofs), time)


def _call_on_grid(f, pts: NDArray, ncomp: int) -> NDArray:
    out = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=np.float64)
    if ncomp == 1:
        return np.broadcast_to(out, pts.shape[:-1]).astype(np.float64, copy=False)
    return np.broadcast_to(out, pts.shape[:-1] + (2,)).astype(np.float64, copy=False)


def l2_project(f, space: DgSpace, time: float | None = None) -> FieldCoeffs:
    """Element-local L2 projection of f(x, y) (vector-valued iff the space is)."""
    F = _call_on_grid(f, space.qpoints, space.ncomp)
    w = space.rule.weights
    if space.ncomp == 1:
        coeffs = np.einsum("q,eq,qm->em", w, F, space.ref_vals)
        return FieldCoeffs(space, coeffs.ravel(), time)
    parts = [np.einsum("q,eq,qm->em", w, F[..., c], space.ref_vals).ravel() for c in range(2)]
    return FieldCoeffs(space, np.concatenate(parts), time)


def eval_field(coeffs: FieldCoeffs, element: int, ref_point, with_grad: bool = False):
    """Value (and optionally the physical gradient) of a discrete field inside one element."""
    sp = coeffs.space
    if not 0 <= element < sp.mesh.n_elements:
        raise IndexError(f"element {element} out of range")
    vals, grads = eval_basis(sp.degree, ref_point)
    gph = grads @ sp.mesh.jac_inv[element]          # grad_x = B^{-T} grad_ref
    out_v, out_g = [], []
    for c in range(sp.ncomp):
        ce = coeffs.component(c)[element * sp.nb:(element + 1) * sp.nb]
        out_v.append(ce @ vals)
        out_g.append(ce @ gph)
    if sp.ncomp == 1:
        return (out_v[0], out_g[0]) if with_grad else out_v[0]
    v = np.array(out_v)
    return (v, np.array(out_g)) if with_grad else v


def scalar_at_qpoints(values: NDArray, space: DgSpace, grad: bool = False):
    """One component's values (ne, nq) and optionally gradients (ne, nq, 2) at volume points."""
    C = values.reshape(space.mesh.n_elements, space.nb)
    v = C @ space.ref_vals.T
    if not grad:
        return v
    g = np.einsum("eqmd,em->eqd", space.phys_grads, C)
    return v, g


def scalar_on_edges(values: NDArray, space: DgSpace, grad: bool = False):
    """Traces on interior edges (ni, 2, nqe) / boundary edges (nbed, nqe)."""
    mesh = space.mesh
    C = values.reshape(mesh.n_elements, space.nb)
    ci = C[mesh.iedge_elems]                        # (ni, 2, nb)
    vi = np.einsum("isqm,ism->isq", space.tr_vals, ci)
    cb = C[mesh.bedge_elem]
    vb = np.einsum("bqm,bm->bq", space.btr_vals, cb)
    if not grad:
        return vi, vb
    gi = np.einsum("isqmd,ism->isqd", space.tr_grads, ci)
    gb = np.einsum("bqmd,bm->bqd", space.btr_grads, cb)
    return (vi, vb), (gi, gb)


def mean_value(coeffs: FieldCoeffs) -> float:
    """Domain mean; exact because only the constant mode carries area integral."""
    sp = coeffs.space
    if sp.ncomp != 1:
        raise ValueError("mean_value expects a scalar space")
    c0 = coeffs.values.reshape(sp.mesh.n_elements, sp.nb)[:, 0]
    return float((sp.mesh.det * c0).sum() / (SQRT2 * sp.mesh.domain_area))


def total_integral(coeffs: FieldCoeffs) -> float:
    return mean_value(coeffs) * coeffs.space.mesh.domain_area


def shift_mean(coeffs: FieldCoeffs, delta: float) -> None:
    """Add the constant delta to the field, in place."""
    sp = coeffs.space
    view = coeffs.values.reshape(sp.mesh.n_elements, sp.nb)
    view[:, 0] += delta / SQRT2
