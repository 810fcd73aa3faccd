"""Semi-implicit backward-Euler time stepping for the coupled system.

Each step solves, in order, the velocity-pressure saddle system (with Picard
iteration on the implicit convection), then the concentration equation, then
the shifted cell density.  The chemotaxis weight, the reaction weight and the
buoyancy density are all lagged to the previous density, which is exactly what
lets the three solves decouple while still satisfying the coupled discrete
equations simultaneously.

The shifted density rho_tilde is kept mean-zero through a Lagrange multiplier
whenever the problem is source-free; with manufactured volume sources the mean
of the exact shifted density moves in time, so the constraint is dropped there
(mass bookkeeping is only claimed for the source-free system anyway).
"""
from __future__ import annotations

import dataclasses
import io

import numpy as np
import scipy.sparse as sp

from . import forms
from .fespace import (DgSpace, FieldCoeffs, SQRT2, l2_project, make_quadrature,
                      mean_value, shift_mean, volume_exactness, zeros)
from .mesh import Mesh2D, mesh_hash, nested_dissection_order
from .sparse import (BlockSystem, LuCache, SolverError, _saddle_residual_failure,
                     bordered_matrix, csr_block_slots)

CHECKPOINT_MAGIC = "dgcns-checkpoint 1"


class PicardError(SolverError):
    """Picard iteration for the convection fixed point did not converge.

    `history` holds the relative update norm of every iterate.
    """

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class CheckpointError(Exception):
    """Checkpoint file malformed or inconsistent with the discretization."""


@dataclasses.dataclass
class SchemeConfig:
    """Time-step size plus the solver knobs of the scheme."""

    dt: float
    penalty: forms.PenaltyConfig
    picard_tol: float = 1e-10
    picard_max: int = 50
    solver: str = "direct"
    constrain_rho: bool | None = None   # None: constrain iff source-free

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.picard_tol <= 0.0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max < 1:
            raise ValueError("picard_max must be at least 1")
        if self.solver not in ("direct", "gmres"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclasses.dataclass
class State:
    """Discrete fields at one time level.

    rho_tilde is the mean-shifted density; the physical density is
    rho_tilde + m0.  In constrained (source-free) runs mean_value(rho_tilde)
    and mean_value(p) stay at zero up to solver tolerance.
    """

    rho_tilde: FieldCoeffs
    c: FieldCoeffs
    u: FieldCoeffs
    p: FieldCoeffs
    m0: float
    t: float
    n: int

    def rho(self):
        """Physical density rho_tilde + m0 (the Step II shift)."""
        out = self.rho_tilde.copy()
        shift_mean(out, self.m0)
        return out


def integrate_over_mesh(f, mesh, exactness=14):
    """Integral of f(x, y) over the mesh with a fixed-order volume rule."""
    rule = make_quadrature("triangle", exactness)
    # map reference points through every element affine map at once
    phys = mesh.origin[:, None, :] + np.einsum("eij,qj->eqi", mesh.jac, rule.points)
    vals = np.asarray(f(phys[..., 0], phys[..., 1]), dtype=np.float64)
    vals = np.broadcast_to(vals, phys.shape[:2])
    return float(np.einsum("q,eq,e->", rule.weights, vals, mesh.det))


class Discretization:
    """Spaces, constant matrices and factorization caches for one mesh/degree.

    Mutable solver caches live here so repeated `advance` calls amortize the
    sparse factorizations; the matrices themselves never change after
    construction except through reassembly of the convection blocks.
    """

    def __init__(self, problem, mesh: Mesh2D, degree: int, config: SchemeConfig):
        if degree < 1:
            raise ValueError(f"polynomial degree must be >= 1, got {degree}")
        self.problem = problem
        self.mesh = mesh
        self.degree = degree
        self.config = config
        self.params = problem.params

        self.xh = DgSpace(mesh, degree)
        self.vh = DgSpace(mesh, degree, ncomp=2)
        self.mh = DgSpace(mesh, degree - 1, exactness=volume_exactness(degree))

        pen = config.penalty
        self.mass_x = forms.assemble_mass(self.xh)
        self.mass_v = forms.assemble_mass(self.vh)
        self.a_rho = forms.assemble_sipg_scalar(self.xh, self.params.mu,
                                                pen.sigma_rho)
        self.a_c = forms.assemble_sipg_scalar(self.xh, self.params.kappa,
                                              pen.sigma_c)
        self.a_u = forms.assemble_sipg_vector(self.vh, self.params.nu,
                                              pen.sigma_u)
        self.b_div = forms.assemble_div(self.vh, self.mh)

        # integral functionals: only the constant mode integrates to det/sqrt2
        self.mean_p = np.zeros(self.mh.total_dofs)
        self.mean_p[0::self.mh.nb] = mesh.det / SQRT2
        self.mean_x = np.zeros(self.xh.total_dofs)
        self.mean_x[0::self.xh.nb] = mesh.det / SQRT2

        self._mdiag_x = self.mass_x.diagonal()
        self._mdiag_v = self.mass_v.diagonal()
        # degree 1 spends its time in saddle factorizations over many small
        # blocks, where the mesh-aware element ordering beats the generic
        # SuperLU column orderings severalfold; fatter blocks do better with
        # minimum degree on A^T A
        if degree == 1:
            order = nested_dissection_order(mesh)
            self._saddle_cache = LuCache(
                perm=_saddle_permutation(order, self.vh, self.mh))
            xperm = (order[:, None] * self.xh.nb + np.arange(self.xh.nb)).ravel()
            self._c_cache = LuCache(perm=xperm)
            if self.constrain_rho():
                xperm = np.concatenate([xperm, [self.xh.total_dofs]])
            self._rho_cache = LuCache(perm=xperm)
        else:
            self._saddle_cache = LuCache(permc_spec="MMD_ATA")
            self._c_cache = LuCache(permc_spec="MMD_AT_PLUS_A")
            self._rho_cache = LuCache(permc_spec="MMD_AT_PLUS_A")
        self._ns_driver = None
        self.last_picard_iterations = 0

    def constrain_rho(self):
        if self.config.constrain_rho is not None:
            return self.config.constrain_rho
        return not self.problem.has_sources

    def l2_norm_u(self, vec):
        return float(np.sqrt(vec @ (self._mdiag_v * vec)))

    def l2_norm_x(self, vec):
        return float(np.sqrt(vec @ (self._mdiag_x * vec)))

    def _source(self, name, t, space):
        src = self.problem.sources
        if src is None or name not in src:
            return 0.0
        f = src[name]
        return forms.assemble_load(lambda x, y: f(x, y, t), space)

    def _flux(self, name, t, scale, space):
        fl = self.problem.fluxes
        if fl is None or name not in fl:
            return 0.0
        f = fl[name]
        return forms.assemble_neumann_load(
            space, lambda x, y, nx, ny: f(x, y, nx, ny, t), scale)

    def _velocity_bc(self, t):
        if self.problem.u_bc is None:
            return None
        g = self.problem.u_bc
        return lambda x, y: g(x, y, t)


def initialize(disc: Discretization) -> State:
    """Project the initial data and compute the density mean.

    m0 comes from a high-order quadrature of rho0 so the shift is accurate
    beyond the projection order; the projected shifted density is then
    re-centered so its discrete mean is zero to rounding.
    """
    problem = disc.problem
    k = disc.degree
    m0 = integrate_over_mesh(problem.rho0, disc.mesh,
                             exactness=max(2 * k + 2, 14)) / disc.mesh.domain_area
    rho_t = l2_project(lambda x, y: problem.rho0(x, y) - m0, disc.xh, time=0.0)
    shift_mean(rho_t, -mean_value(rho_t))
    c0 = l2_project(problem.c0, disc.xh, time=0.0)
    u0 = l2_project(problem.u0, disc.vh, time=0.0)
    p0 = zeros(disc.mh)
    p0.time = 0.0
    return State(rho_t, c0, u0, p0, m0, 0.0, 0)


def _saddle_permutation(order, vh, mh):
    """Bordered-saddle dof order: per element (in the given element order)
    both velocity components then pressure, multiplier second to last.

    The multiplier must be eliminated before the final pressure dof: once
    every velocity is gone the pressure Schur complement is exactly rank
    deficient (constant kernel), so its last natural pivot is zero, while
    the multiplier's accumulated diagonal is not, and eliminating it first
    restores a nonzero final pivot without any row pivoting.
    """
    nvs, nu = vh.nscalar, 2 * vh.nscalar
    iv, ip = np.arange(vh.nb), np.arange(mh.nb)
    blocks = np.concatenate([order[:, None] * vh.nb + iv,
                             nvs + order[:, None] * vh.nb + iv,
                             nu + order[:, None] * mh.nb + ip], axis=1)
    flat = blocks.ravel()
    return np.concatenate([flat[:-1], [nu + mh.total_dofs], flat[-1:]])


class _SaddleDriver:
    """Bordered saddle matrix with in-place convection updates.

    The sparsity of mass/dt + viscous + convection is fixed by the mesh, so
    the Picard loop rewrites the value array of one pre-assembled bordered
    matrix through scatter maps instead of re-running sparse addition every
    iteration, and keeps the block norms the residual checks need.
    """

    def __init__(self, disc):
        vh = disc.vh
        self.dt = disc.config.dt
        k0 = (disc.mass_v / self.dt + disc.a_u).tocsr()
        k0.sort_indices()
        zero_cs = forms._b2_scalar(FieldCoeffs(vh, np.zeros(vh.total_dofs)))
        # sparse addition would prune the explicit zeros, so the pattern
        # union goes through a triplet concatenation instead
        k0c = k0.tocoo()
        c2c = forms._block_diag2(zero_cs).tocoo()
        kpat = sp.coo_array(
            (np.concatenate([k0c.data, c2c.data]),
             (np.concatenate([k0c.row, c2c.row]),
              np.concatenate([k0c.col, c2c.col]))), shape=k0.shape).tocsr()
        kpat.sum_duplicates()
        kpat.sort_indices()
        self.n_u = 2 * vh.nscalar
        self.n_p = disc.mh.total_dofs
        self.matrix = bordered_matrix(BlockSystem(kpat, disc.b_div, disc.mean_p))
        self.base = self.matrix.data.copy()   # viscous part, convection slots zero
        self.cs_indptr = zero_cs.indptr
        self.cs_indices = zero_cs.indices
        self.slots = (csr_block_slots(self.matrix, zero_cs),
                      csr_block_slots(self.matrix, zero_cs,
                                      vh.nscalar, vh.nscalar))
        # velocity-block entries come first in each bordered row (their
        # columns precede the -B^T ones), so segment sums give exact norms
        seg = np.empty(2 * self.n_u, dtype=np.int64)
        seg[0::2] = self.matrix.indptr[:self.n_u]
        seg[1::2] = seg[0::2] + np.diff(kpat.indptr)
        self._k_segments = seg
        bt = abs(disc.b_div)
        self._bt_rowsums = np.asarray(bt.sum(axis=0)).ravel()
        b_rowsums = np.asarray(bt.sum(axis=1)).ravel()
        mean_abs = np.abs(disc.mean_p)
        self.mean_max = float(mean_abs.max(initial=0.0))
        self.mean_scale = float(mean_abs.sum())
        self.bt_norm = float(self._bt_rowsums.max(initial=0.0))
        self.b_norm = float(b_rowsums.max(initial=0.0))
        self._rest_norm = max(float((b_rowsums + mean_abs).max(initial=0.0)),
                              self.mean_scale)
        self.k_norm = 0.0
        self.a_norm = 0.0
        self.last_solution = None   # warm start carried across steps

    def set_convection(self, cs):
        """Write mass/dt + viscous + convection into the bordered matrix."""
        if not (np.array_equal(cs.indptr, self.cs_indptr)
                and np.array_equal(cs.indices, self.cs_indices)):
            raise SolverError("convection sparsity changed between iterations")
        data = self.matrix.data
        data[:] = self.base
        data[self.slots[0]] += cs.data
        data[self.slots[1]] += cs.data
        ksums = np.add.reduceat(np.abs(data), self._k_segments)[0::2]
        self.k_norm = float(ksums.max())
        self.a_norm = max(float((ksums + self._bt_rowsums).max()),
                          self._rest_norm)


def _continuity_data(disc, g_trace):
    """Boundary contribution -sum_bdy q (g.n) to the continuity equation."""
    if g_trace is None:
        return None
    psp = disc.mh
    mesh = disc.mesh
    xb, yb = psp.bq_points[..., 0], psp.bq_points[..., 1]
    gv = np.broadcast_to(np.asarray(g_trace(xb, yb), dtype=np.float64),
                         xb.shape + (2,))
    gdotn = np.einsum("bqc,bc->bq", gv, mesh.bedge_normal)
    wb = mesh.bedge_length[:, None] * psp.edge_rule.weights[None, :]
    contrib = -np.einsum("bq,bq,bqj->bj", wb, gdotn, psp.btr_vals)
    out = np.zeros((mesh.n_elements, psp.nb))
    np.add.at(out, mesh.bedge_elem, contrib)
    return out.ravel()


def step_ns(state: State, disc: Discretization):
    """Advance velocity and pressure one step by Picard iteration.

    Freezes the transport slot of the trilinear convection at the previous
    iterate, solves the linear saddle system, and repeats until the relative
    velocity update drops below the Picard tolerance.  Returns
    (u, p, iterations).
    """
    cfg = disc.config
    dt = cfg.dt
    t_new = state.t + dt
    params = disc.params
    drv = disc._ns_driver
    if drv is None or drv.dt != dt:
        drv = disc._ns_driver = _SaddleDriver(disc)

    rhs = disc.mass_v @ state.u.values / dt
    rhs = rhs + forms.assemble_buoyancy(state.rho_tilde, state.m0,
                                        params.grad_phi, disc.vh)
    src = disc._source("u", t_new, disc.vh)
    if np.ndim(src):
        rhs = rhs + src
    g_trace = disc._velocity_bc(t_new)
    if g_trace is not None:
        rhs = rhs + forms.assemble_dirichlet_rhs(disc.vh, g_trace, params.nu,
                                                 cfg.penalty.sigma_u)
    g_q = _continuity_data(disc, g_trace)
    if g_q is None:
        g_q = np.zeros(disc.mh.total_dofs)
    rhs_full = np.concatenate([rhs, g_q, [0.0]])
    fmax = float(np.abs(rhs).max(initial=0.0))
    gmax = float(np.abs(g_q).max(initial=0.0))
    nu_dofs = drv.n_u

    def accept(x, r):
        return _saddle_residual_failure(
            x, r, nu_dofs, fmax, gmax, drv.k_norm, drv.bt_norm, drv.b_norm,
            drv.mean_max, drv.mean_scale, slack=0.1) is None

    guess = state.u.values
    history = []
    converged = False
    sol = drv.last_solution
    p_vals = None
    for it in range(cfg.picard_max + 1):
        cs = forms._b2_scalar(FieldCoeffs(disc.vh, guess))
        drv.set_convection(cs)
        if converged:
            # coupled momentum residual with the convection re-evaluated at
            # the accepted velocity itself
            r = rhs_full - drv.matrix @ sol
            scale = max(fmax,
                        drv.k_norm * float(np.abs(guess).max(initial=0.0)),
                        drv.bt_norm * float(np.abs(p_vals).max(initial=0.0)),
                        1e-300)
            if float(np.abs(r[:nu_dofs]).max(initial=0.0)) > 1e-8 * scale:
                raise PicardError("converged Picard pair fails the momentum "
                                  "residual check at 1e-8 relative", history)
            drv.last_solution = sol
            break
        if it == cfg.picard_max:
            raise PicardError(
                f"Picard stalled after {cfg.picard_max} iterations "
                f"(last update {history[-1]:.3e})", history)
        sol = disc._saddle_cache.solve(drv.matrix, rhs_full, accept=accept,
                                       x0=sol)
        msg = _saddle_residual_failure(
            sol, disc._saddle_cache.last_residual, nu_dofs, fmax, gmax,
            drv.k_norm, drv.bt_norm, drv.b_norm, drv.mean_max, drv.mean_scale)
        if msg is not None:
            raise SolverError(msg)
        u_vals = sol[:nu_dofs]
        p_vals = sol[nu_dofs:nu_dofs + drv.n_p]
        du = disc.l2_norm_u(u_vals - guess)
        un = disc.l2_norm_u(u_vals)
        history.append(du / max(un, 1e-300))
        guess = u_vals
        converged = du <= cfg.picard_tol * max(un, 1e-300)
    disc.last_picard_iterations = len(history)
    u_new = FieldCoeffs(disc.vh, guess, time=t_new)
    p_new = FieldCoeffs(disc.mh, p_vals, time=t_new)
    return u_new, p_new, len(history)


def step_c(state: State, u_new: FieldCoeffs, disc: Discretization,
           conv=None) -> FieldCoeffs:
    """Advance the concentration with fresh velocity and lagged density.

    conv, when given, must be the convection matrix of u_new on the scalar
    space; advance() assembles it once and shares it with the density step.
    """
    cfg = disc.config
    dt = cfg.dt
    t_new = state.t + dt
    params = disc.params
    if conv is None:
        conv = forms.assemble_convection_b1(u_new, disc.xh)
    react = forms.assemble_weighted_mass(state.rho_tilde, state.m0, disc.xh)
    a_sys = (disc.mass_x / dt + disc.a_c + conv
             + params.gamma * react).tocsr()
    rhs = disc.mass_x @ state.c.values / dt
    src = disc._source("c", t_new, disc.xh)
    if np.ndim(src):
        rhs = rhs + src
    fl = disc._flux("c", t_new, params.kappa, disc.xh)
    if np.ndim(fl):
        rhs = rhs + fl
    vals = disc._c_cache.solve(a_sys, rhs)
    return FieldCoeffs(disc.xh, vals, time=t_new)


def step_rho(state: State, u_new: FieldCoeffs, c_new: FieldCoeffs,
             disc: Discretization, conv=None) -> FieldCoeffs:
    """Advance the shifted density; chemotaxis weight lagged one level."""
    cfg = disc.config
    dt = cfg.dt
    t_new = state.t + dt
    params = disc.params
    if conv is None:
        conv = forms.assemble_convection_b1(u_new, disc.xh)
    a_sys = (disc.mass_x / dt + disc.a_rho + conv).tocsr()
    chemo = forms.assemble_chemotaxis_g(state.rho_tilde, state.m0, disc.xh)
    rhs = disc.mass_x @ state.rho_tilde.values / dt \
        + params.beta * (chemo @ c_new.values)
    src = disc._source("rho", t_new, disc.xh)
    if np.ndim(src):
        rhs = rhs + src
    fl = disc._flux("rho", t_new, params.mu, disc.xh)
    if np.ndim(fl):
        rhs = rhs + fl

    if disc.constrain_rho():
        n = disc.xh.total_dofs
        col = sp.csr_array(disc.mean_x.reshape(-1, 1))
        bordered = sp.block_array([[a_sys, col], [col.T, None]], format="csr")
        sol = disc._rho_cache.solve(bordered, np.concatenate([rhs, [0.0]]))
        vals = sol[:n]
        out = FieldCoeffs(disc.xh, vals, time=t_new)
        mv = mean_value(out)
        if abs(mv) > 1e-10 * max(1.0, float(np.abs(vals).max(initial=0.0))):
            raise SolverError(f"constrained density mean {mv:.3e} "
                              "not zero at tolerance")
        return out
    vals = disc._rho_cache.solve(a_sys, rhs)
    return FieldCoeffs(disc.xh, vals, time=t_new)


def advance(state: State, disc: Discretization) -> State:
    """One full step: velocity/pressure, then concentration, then density."""
    u_new, p_new, _ = step_ns(state, disc)
    conv = forms.assemble_convection_b1(u_new, disc.xh)
    c_new = step_c(state, u_new, disc, conv=conv)
    rho_new = step_rho(state, u_new, c_new, disc, conv=conv)
    return State(rho_new, c_new, u_new, p_new, state.m0,
                 state.t + disc.config.dt, state.n + 1)


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(path, state: State, disc: Discretization) -> None:
    """Write a restart file: text header, then the coefficient arrays."""
    header = (f"{CHECKPOINT_MAGIC}\n"
              f"mesh {mesh_hash(disc.mesh)}\n"
              f"degree {disc.degree}\n"
              f"step {state.n}\n"
              f"time {state.t!r}\n"
              f"m0 {state.m0!r}\n"
              "payload npy rho_tilde c u p\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for arr in (state.rho_tilde.values, state.c.values,
                    state.u.values, state.p.values):
            np.save(fh, arr)


def load_checkpoint(path, disc: Discretization) -> State:
    """Read a restart file, verifying it matches this discretization."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head_end = 0
    lines = []
    for _ in range(7):
        nl = raw.index(b"\n", head_end)
        lines.append(raw[head_end:nl].decode("ascii"))
        head_end = nl + 1
    if lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {lines[0]!r}")
    meta = dict(line.split(maxsplit=1) for line in lines[1:6])
    if meta["mesh"] != mesh_hash(disc.mesh):
        raise CheckpointError("checkpoint was written for a different mesh")
    if int(meta["degree"]) != disc.degree:
        raise CheckpointError(
            f"checkpoint degree {meta['degree']} != {disc.degree}")
    buf = io.BytesIO(raw[head_end:])
    arrays = [np.load(buf) for _ in range(4)]
    t = float(meta["time"])
    n = int(meta["step"])
    return State(FieldCoeffs(disc.xh, arrays[0], time=t),
                 FieldCoeffs(disc.xh, arrays[1], time=t),
                 FieldCoeffs(disc.vh, arrays[2], time=t),
                 FieldCoeffs(disc.mh, arrays[3], time=t),
                 float(meta["m0"]), t, n)
