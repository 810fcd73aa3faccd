"""Assembly of the variational forms on broken spaces.

Matrix convention throughout: rows index the test function, columns the
trial function, so a form value is test_vec @ A @ trial_vec.  All assemblers
emit COO triplets in a fixed element/edge order and canonicalize to CSR, so
repeated assembly is bit-identical.

Edge sets follow the operator: the scalar diffusion forms and the chemotaxis
form touch interior edges only (flux boundary conditions are natural), the
vector diffusion form and the divergence coupling include boundary edges
(velocity Dirichlet data is enforced weakly).  The convection forms carry
their interior average/jump corrections plus a -1/2 (v.n) boundary term,
which is what makes them algebraically skew-symmetric in the last two
arguments for any discrete transport field; the term vanishes for the
no-slip exact velocity, so consistency is untouched.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy import sparse as sp

from .fespace import DgSpace, FieldCoeffs, scalar_at_qpoints, scalar_on_edges

SIGNS = np.array([1.0, -1.0])     # jump sign of side 0 (left) / side 1 (right)


@dataclass(frozen=True)
class PenaltyConfig:
    sigma_rho: float
    sigma_c: float
    sigma_u: float

    def __post_init__(self) -> None:
        if min(self.sigma_rho, self.sigma_c, self.sigma_u) <= 0:
            raise ValueError("penalty parameters must be strictly positive")

    @classmethod
    def for_degree(cls, k: int, scale: float = 10.0) -> "PenaltyConfig":
        s = scale * k * k
        return cls(s, s, s)


@dataclass(frozen=True)
class PhysParams:
    mu: float
    kappa: float
    nu: float
    beta: float
    gamma: float
    grad_phi: Callable    # (x, y) -> potential gradient, broadcasting over arrays

    def __post_init__(self) -> None:
        if min(self.mu, self.kappa, self.nu) <= 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("diffusivities must be positive, beta/gamma nonnegative")


# ---------------------------------------------------------------------------
# scatter helpers

def _csr(rows, cols, vals, shape) -> sp.csr_array:
    A = sp.coo_array((np.concatenate([v.ravel() for v in vals]),
                      (np.concatenate([r.ravel() for r in rows]),
                       np.concatenate([c.ravel() for c in cols]))), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A

def _vol_indices(space: DgSpace):
    nb = space.nb
    shape = (space.mesh.n_elements, nb, nb)
    base = np.arange(space.mesh.n_elements)[:, None, None] * nb
    i = np.arange(nb)
    return (np.broadcast_to(base + i[None, :, None], shape),    # rows (e, i, j)
            np.broadcast_to(base + i[None, None, :], shape))

def _edge_indices(space: DgSpace):
    nb = space.nb
    base = space.mesh.iedge_elems * nb                         # (ni, 2)
    i = np.arange(nb)
    rows = base[:, :, None, None, None] + i[None, None, :, None, None]
    cols = base[:, None, None, :, None] + i[None, None, None, None, :]
    shape = (space.mesh.n_interior_edges, 2, nb, 2, nb)
    return (np.broadcast_to(rows, shape), np.broadcast_to(cols, shape))

def _bedge_indices(space: DgSpace):
    nb = space.nb
    shape = (space.mesh.n_boundary_edges, nb, nb)
    base = space.mesh.bedge_elem * nb
    i = np.arange(nb)
    return (np.broadcast_to(base[:, None, None] + i[None, :, None], shape),
            np.broadcast_to(base[:, None, None] + i[None, None, :], shape))

def _edge_weights(space: DgSpace):
    wq = space.edge_rule.weights
    return (space.mesh.iedge_length[:, None] * wq[None, :],
            space.mesh.bedge_length[:, None] * wq[None, :])

def _block_diag2(A: sp.csr_array) -> sp.csr_array:
    B = sp.block_diag((A, A), format="csr")
    B.sort_indices()
    return B


_EINSUM_PATHS: dict = {}

def _es(subscripts: str, *ops):
    # einsum with the contraction path cached per shape signature; the path
    # search otherwise reruns on every assembly inside the time loop
    key = (subscripts, tuple(op.shape for op in ops))
    path = _EINSUM_PATHS.get(key)
    if path is None:
        path = np.einsum_path(subscripts, *ops, optimize="optimal")[0]
        _EINSUM_PATHS[key] = path
    return np.einsum(subscripts, *ops, optimize=path)


# ---------------------------------------------------------------------------
# transport-field evaluation (velocity coefficients on another space's points)

def _check_same_rule(a: DgSpace, b: DgSpace) -> None:
    if a.mesh is not b.mesh or a.rule is not b.rule or a.edge_rule is not b.edge_rule:
        raise ValueError("spaces must share one mesh and one quadrature rule")

def velocity_at_volume(u: FieldCoeffs) -> tuple[NDArray, NDArray]:
    """Values (ne, nq, 2) and divergence (ne, nq) of a velocity field."""
    spu = u.space
    vals, divs = [], []
    for c in range(2):
        v, g = scalar_at_qpoints(u.component(c), spu, grad=True)
        vals.append(v)
        divs.append(g[..., c])
    return np.stack(vals, axis=-1), divs[0] + divs[1]

def velocity_on_edges(u: FieldCoeffs) -> tuple[NDArray, NDArray]:
    """Interior traces (ni, 2, nqe, 2) and boundary traces (nbed, nqe, 2)."""
    spu = u.space
    ui, ub = [], []
    for c in range(2):
        vi, vb = scalar_on_edges(u.component(c), spu)
        ui.append(vi)
        ub.append(vb)
    return np.stack(ui, axis=-1), np.stack(ub, axis=-1)


# ---------------------------------------------------------------------------
# SIPG diffusion

def _sipg_scalar_blocks(space: DgSpace, sigma: float, boundary: str):
    mesh = space.mesh
    w = space.rule.weights
    G = space.phys_grads
    vol = np.einsum("q,eqid,eqjd->eij", w, G, G, optimize=True) * mesh.det[:, None, None]

    WE, WB = _edge_weights(space)
    tv = space.tr_vals
    tgn = np.einsum("esqmd,ed->esqm", space.tr_grads, mesh.iedge_normal)
    cons = np.einsum("eq,esqi,etqj->esitj", WE, tv, tgn, optimize=True)
    sym = np.einsum("eq,esqi,etqj->esitj", WE, tgn, tv, optimize=True)
    pen = np.einsum("e,eq,esqi,etqj->esitj", sigma / mesh.iedge_length, WE, tv, tv,
                    optimize=True)
    sg_test = SIGNS[None, :, None, None, None]
    sg_trial = SIGNS[None, None, None, :, None]
    Z = -0.5 * cons * sg_test - 0.5 * sym * sg_trial + pen * sg_test * sg_trial

    pieces = [vol, Z]
    if boundary == "all":
        tb = space.btr_vals
        tbgn = np.einsum("bqmd,bd->bqm", space.btr_grads, mesh.bedge_normal)
        consb = np.einsum("bq,bqi,bqj->bij", WB, tb, tbgn, optimize=True)
        penb = np.einsum("b,bq,bqi,bqj->bij", sigma / mesh.bedge_length, WB, tb, tb,
                         optimize=True)
        pieces.append(-consb - consb.transpose(0, 2, 1) + penb)
    elif boundary != "interior":
        raise ValueError("boundary must be 'interior' or 'all'")
    return pieces


def assemble_sipg_scalar(space: DgSpace, diffusivity: float, sigma: float,
                         boundary: str = "interior") -> sp.csr_array:
    """Interior-penalty diffusion form; constants lie in the kernel iff boundary=='interior'."""
    pieces = _sipg_scalar_blocks(space, sigma, boundary)
    n = space.nscalar
    vr, vc = _vol_indices(space)
    er, ec = _edge_indices(space)
    rows, cols, vals = [vr, er], [vc, ec], [pieces[0], pieces[1]]
    if len(pieces) == 3:
        br, bc = _bedge_indices(space)
        rows.append(br); cols.append(bc); vals.append(pieces[2])
    A = _csr(rows, cols, vals, (n, n))
    A *= diffusivity
    return A


def assemble_sipg_vector(space: DgSpace, nu: float, sigma: float) -> sp.csr_array:
    """Vector diffusion with weak Dirichlet boundary; block diagonal over components."""
    if space.ncomp != 2:
        raise ValueError("expected a two-component space")
    return _block_diag2(assemble_sipg_scalar(space, nu, sigma, boundary="all"))


# ---------------------------------------------------------------------------
# divergence coupling d(v, q)

def assemble_div(vspace: DgSpace, pspace: DgSpace, variant: int = 1) -> sp.csr_array:
    """d(v, q) = q^T B v.  variant=1 integrates q div v, variant=2 the
    integrated-by-parts twin; both must agree to rounding."""
    _check_same_rule(vspace, pspace)
    mesh = vspace.mesh
    w = vspace.rule.weights
    npr, nvs = pspace.nscalar, vspace.nscalar
    nbp, nbv = pspace.nb, vspace.nb
    WE, WB = _edge_weights(vspace)
    ne, ni, nbed = mesh.n_elements, mesh.n_interior_edges, mesh.n_boundary_edges
    ip, iv = np.arange(nbp), np.arange(nbv)

    rows, cols, vals = [], [], []
    pvr = np.broadcast_to((np.arange(ne)[:, None, None] * nbp) + ip[None, :, None],
                          (ne, nbp, nbv))
    vvc = np.broadcast_to((np.arange(ne)[:, None, None] * nbv) + iv[None, None, :],
                          (ne, nbp, nbv))
    eshape = (ni, 2, nbp, 2, nbv)
    per = np.broadcast_to((mesh.iedge_elems * nbp)[:, :, None, None, None]
                          + ip[None, None, :, None, None], eshape)
    vec = np.broadcast_to((mesh.iedge_elems * nbv)[:, None, None, :, None]
                          + iv[None, None, None, None, :], eshape)
    pbr = np.broadcast_to((mesh.bedge_elem * nbp)[:, None, None] + ip[None, :, None],
                          (nbed, nbp, nbv))
    vbc = np.broadcast_to((mesh.bedge_elem * nbv)[:, None, None] + iv[None, None, :],
                          (nbed, nbp, nbv))

    for c in range(2):
        off = c * nvs
        if variant == 1:
            volc = np.einsum("q,qi,eqj->eij", w, pspace.ref_vals,
                             vspace.phys_grads[..., c], optimize=True) * mesh.det[:, None, None]
            # - sum over all edges of {q} n_c [v]
            Z = np.einsum("eq,esqi,etqj->esitj", WE, pspace.tr_vals, vspace.tr_vals,
                          optimize=True)
            Z = Z * (-0.5) * mesh.iedge_normal[:, c][:, None, None, None, None] \
                * SIGNS[None, None, None, :, None]
            Zb = np.einsum("bq,bqi,bqj->bij", WB, pspace.btr_vals, vspace.btr_vals,
                           optimize=True) * (-mesh.bedge_normal[:, c][:, None, None])
            rows += [pvr, per, pbr]
            cols += [vvc + off, vec + off, vbc + off]
            vals += [volc, Z, Zb]
        elif variant == 2:
            pgrad = np.einsum("edi,qbd->eqbi", mesh.jac_inv, pspace.ref_grads)
            volc = -np.einsum("q,eqi,qj->eij", w, pgrad[..., c], vspace.ref_vals,
                              optimize=True) * mesh.det[:, None, None]
            # + interior {v} n_c [q]; the boundary has no pressure jump
            Z = np.einsum("eq,esqi,etqj->esitj", WE, pspace.tr_vals, vspace.tr_vals,
                          optimize=True)
            Z = Z * 0.5 * mesh.iedge_normal[:, c][:, None, None, None, None] \
                * SIGNS[None, :, None, None, None]
            rows += [pvr, per]
            cols += [vvc + off, vec + off]
            vals += [volc, Z]
        else:
            raise ValueError("variant must be 1 or 2")
    return _csr(rows, cols, vals, (npr, 2 * nvs))


# ---------------------------------------------------------------------------
# skew-symmetrized convection

def _convection_scalar_blocks(space: DgSpace, U, divU, Ui, Ub):
    """Core of b1/b2 on one scalar component; returns (vol, interior, boundary)."""
    mesh = space.mesh
    w = space.rule.weights
    V = space.ref_vals
    G = space.phys_grads
    UG = _es("eqd,eqjd->eqj", U, G)
    vol = (_es("q,qi,eqj->eij", w, V, UG)
           + 0.5 * _es("q,eq,qi,qj->eij", w, divU, V, V)) \
        * mesh.det[:, None, None]

    WE, WB = _edge_weights(space)
    tv = space.tr_vals
    un = _es("esqd,ed->esq", Ui, mesh.iedge_normal)         # per-side u.n traces
    uan = 0.5 * (un[:, 0] + un[:, 1])                       # {u}.n
    ujn = un[:, 0] - un[:, 1]                               # [u].n
    # -({u}.n) [psi] {phi}
    Z = _es("eq,eq,esqi,etqj->esitj", WE, uan, tv, tv)
    Z = Z * (-0.5) * SIGNS[None, None, None, :, None]
    # -1/2 ([u].n) {psi phi}: same-side products only
    D = _es("eq,eq,esqi,esqj->esij", WE, ujn, tv, tv) * (-0.25)
    for s in (0, 1):
        Z[:, s, :, s, :] += D[:, s]

    ubn = _es("bqd,bd->bq", Ub, mesh.bedge_normal)
    Zb = _es("bq,bq,bqi,bqj->bij", WB, ubn, space.btr_vals, space.btr_vals) \
        * (-0.5)
    return vol, Z, Zb


def _assemble_convection(space: DgSpace, U, divU, Ui, Ub) -> sp.csr_array:
    vol, Z, Zb = _convection_scalar_blocks(space, U, divU, Ui, Ub)
    vr, vc = _vol_indices(space)
    er, ec = _edge_indices(space)
    br, bc = _bedge_indices(space)
    n = space.nscalar
    return _csr([vr, er, br], [vc, ec, bc], [vol, Z, Zb], (n, n))


def assemble_convection_b1(u: FieldCoeffs, space: DgSpace) -> sp.csr_array:
    """b1(u, psi, phi) = phi^T N psi on a scalar space; N is skew-symmetric."""
    _check_same_rule(u.space, space)
    U, divU = velocity_at_volume(u)
    Ui, Ub = velocity_on_edges(u)
    return _assemble_convection(space, U, divU, Ui, Ub)


def _b2_scalar(u: FieldCoeffs) -> sp.csr_array:
    """One-component block of b2; the full form repeats it per component."""
    spu = u.space
    U, divU = velocity_at_volume(u)
    Ui, Ub = velocity_on_edges(u)
    return _assemble_convection(spu, U, divU, Ui, Ub)


def assemble_convection_b2(u: FieldCoeffs) -> sp.csr_array:
    """b2(u, w, v) on the velocity space itself; acts componentwise."""
    return _block_diag2(_b2_scalar(u))


# ---------------------------------------------------------------------------
# chemotaxis coupling g(weight, c, chi)

def assemble_chemotaxis_g(weight: FieldCoeffs, shift: float, space: DgSpace) -> sp.csr_array:
    """g(w, psi, phi) = phi^T G psi with w = weight + shift; no penalty term.

    Composite averages {w grad psi} are used verbatim: each side contributes
    its own weight times its own gradient.
    """
    _check_same_rule(weight.space, space)
    mesh = space.mesh
    wq = space.rule.weights
    wf = scalar_at_qpoints(weight.values, weight.space) + shift
    wi, _ = scalar_on_edges(weight.values, weight.space)
    wi = wi + shift
    G = space.phys_grads
    vol = _es("q,eq,eqid,eqjd->eij", wq, wf, G, G) * mesh.det[:, None, None]

    WE, _ = _edge_weights(space)
    tv = space.tr_vals
    tgn = _es("esqmd,ed->esqm", space.tr_grads, mesh.iedge_normal)
    wtgn = wi[:, :, :, None] * tgn
    cons = _es("eq,esqi,etqj->esitj", WE, tv, wtgn)
    sym = _es("eq,esqi,etqj->esitj", WE, wtgn, tv)
    Z = -0.5 * cons * SIGNS[None, :, None, None, None] \
        - 0.5 * sym * SIGNS[None, None, None, :, None]

    vr, vc = _vol_indices(space)
    er, ec = _edge_indices(space)
    n = space.nscalar
    return _csr([vr, er], [vc, ec], [vol, Z], (n, n))


# ---------------------------------------------------------------------------
# mass matrices and load vectors

def assemble_mass(space: DgSpace) -> sp.csr_array:
    d = np.repeat(space.mesh.det, space.nb)
    if space.ncomp == 2:
        d = np.concatenate([d, d])
    return sp.diags_array(d, format="csr")


def assemble_weighted_mass(weight: FieldCoeffs, shift: float, space: DgSpace) -> sp.csr_array:
    _check_same_rule(weight.space, space)
    wf = scalar_at_qpoints(weight.values, weight.space) + shift
    vol = _es("q,eq,qi,qj->eij", space.rule.weights, wf,
              space.ref_vals, space.ref_vals) * space.mesh.det[:, None, None]
    vr, vc = _vol_indices(space)
    n = space.nscalar
    return _csr([vr], [vc], [vol], (n, n))


def assemble_load(f, space: DgSpace) -> NDArray:
    """(f, phi) for every test function; f(x, y) vector-valued iff the space is."""
    w = space.rule.weights
    if space.ncomp == 1:
        F = np.asarray(f(space.qpoints[..., 0], space.qpoints[..., 1]), dtype=np.float64)
        F = np.broadcast_to(F, space.qpoints.shape[:2])
        return (np.einsum("q,eq,qm->em", w, F, space.ref_vals) *
                space.mesh.det[:, None]).ravel()
    F = np.asarray(f(space.qpoints[..., 0], space.qpoints[..., 1]), dtype=np.float64)
    F = np.broadcast_to(F, space.qpoints.shape[:2] + (2,))
    parts = [(np.einsum("q,eq,qm->em", w, F[..., c], space.ref_vals) *
              space.mesh.det[:, None]).ravel() for c in range(2)]
    return np.concatenate(parts)


def assemble_buoyancy(weight: FieldCoeffs, shift: float, grad_phi,
                      vspace: DgSpace) -> NDArray:
    """((weight + shift) grad(Phi), v) over the velocity test space."""
    _check_same_rule(weight.space, vspace)
    wf = scalar_at_qpoints(weight.values, weight.space) + shift
    gp = np.asarray(grad_phi(vspace.qpoints[..., 0], vspace.qpoints[..., 1]),
                    dtype=np.float64)
    gp = np.broadcast_to(gp, vspace.qpoints.shape[:2] + (2,))
    w = vspace.rule.weights
    parts = [(np.einsum("q,eq,eq,qm->em", w, wf, gp[..., c], vspace.ref_vals) *
              vspace.mesh.det[:, None]).ravel() for c in range(2)]
    return np.concatenate(parts)


def assemble_neumann_load(space: DgSpace, flux, scale: float = 1.0) -> NDArray:
    """Boundary term scale * int_dOmega flux * phi for natural flux data.

    flux(x, y, nx, ny) is the prescribed normal derivative on the boundary.
    """
    mesh = space.mesh
    _, WB = _edge_weights(space)
    x, y = space.bq_points[..., 0], space.bq_points[..., 1]
    nx = np.broadcast_to(mesh.bedge_normal[:, 0][:, None], x.shape)
    ny = np.broadcast_to(mesh.bedge_normal[:, 1][:, None], x.shape)
    g = np.broadcast_to(np.asarray(flux(x, y, nx, ny), dtype=np.float64), x.shape)
    contrib = scale * np.einsum("bq,bq,bqm->bm", WB, g, space.btr_vals)
    out = np.zeros(space.nscalar)
    np.add.at(out.reshape(mesh.n_elements, space.nb), mesh.bedge_elem, contrib)
    return out


def assemble_dirichlet_rhs(vspace: DgSpace, g, nu: float, sigma: float) -> NDArray:
    """Weak-Dirichlet lift: nu * (-(grad v . n) . g + sigma/h g . v) on the boundary."""
    mesh = vspace.mesh
    _, WB = _edge_weights(vspace)
    x, y = vspace.bq_points[..., 0], vspace.bq_points[..., 1]
    gv = np.broadcast_to(np.asarray(g(x, y), dtype=np.float64), x.shape + (2,))
    tbgn = np.einsum("bqmd,bd->bqm", vspace.btr_grads, mesh.bedge_normal)
    out = np.zeros(vspace.total_dofs)
    for c in range(2):
        contrib = nu * (np.einsum("bq,bq,bqm->bm", WB, gv[..., c], -tbgn)
                        + np.einsum("b,bq,bq,bqm->bm", sigma / mesh.bedge_length,
                                    WB, gv[..., c], vspace.btr_vals))
        np.add.at(out[vspace.dof_slice(c)].reshape(mesh.n_elements, vspace.nb),
                  mesh.bedge_elem, contrib)
    return out
