"""Sparse linear algebra: CSR operators, direct and Krylov solves, saddle systems.

The direct path (UMFPACK-style supernodal LU through SuperLU with COLAMD
ordering) is the default for every solve in this package; GMRES with an
optional ILU(0) preconditioner exists as a fallback for the largest runs.
Velocity-pressure systems carry a one-dimensional pressure kernel, handled
by bordering the matrix with the discrete mean functional as a Lagrange
multiplier row.  `LuCache` amortizes factorizations across time steps by
refining stale-factor solves against the current matrix; a cache can carry
its own fill-reducing ordering where COLAMD is a poor fit for the block
structure.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

CsrMatrix = sp.csr_array


class SolverError(Exception):
    """Base class for linear-solver failures."""


class SingularMatrixError(SolverError):
    """Matrix singular to working precision.

    Attributes
    ----------
    pivot_index : int or None
        Position of the offending pivot, when the factorization got far
        enough to identify one.
    pivot_value : float or None
        Magnitude of that pivot relative to the largest one.
    """

    def __init__(self, message, pivot_index=None, pivot_value=None):
        super().__init__(message)
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value


class GmresBreakdownError(SolverError):
    """GMRES hit an exact breakdown or was fed an ill-formed system."""


class GmresConvergenceError(SolverError):
    """GMRES exhausted its iteration budget.

    Carries the best iterate reached (`best`), the iteration count and the
    final relative residual so callers can decide whether to accept it.
    """

    def __init__(self, message, best, iterations, residual):
        super().__init__(message)
        self.best = best
        self.iterations = iterations
        self.residual = residual


def make_csr(rows, cols, vals, shape):
    """Assemble a CSR matrix from triplets, summing duplicate entries."""
    m = sp.coo_array((np.asarray(vals, dtype=float),
                      (np.asarray(rows), np.asarray(cols))), shape=shape).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def _inf_norm(a):
    if a.shape[0] == 0:
        return 0.0
    return float(abs(a).sum(axis=1).max())


def csr_block_slots(parent, sub, row_offset=0, col_offset=0):
    """Positions in parent.data of sub's entries placed at a block offset.

    Both matrices must be canonical CSR (sorted, deduplicated); every entry
    of sub must exist in the parent pattern.  The returned index array lets
    time loops update a large assembled matrix in place:
    ``parent.data[slots] += sub.data``.
    """
    ncol = parent.shape[1]
    prows = np.repeat(np.arange(parent.shape[0], dtype=np.int64),
                      np.diff(parent.indptr))
    pkeys = prows * ncol + parent.indices
    srows = np.repeat(np.arange(sub.shape[0], dtype=np.int64) + row_offset,
                      np.diff(sub.indptr))
    skeys = srows * ncol + (sub.indices + col_offset)
    pos = np.searchsorted(pkeys, skeys)
    if pos.size and (int(pos.max()) >= pkeys.size
                     or not np.array_equal(pkeys[pos], skeys)):
        raise ValueError("sub-block pattern is not contained in the parent")
    return pos


def _check_square(a, b):
    n, m = a.shape
    if n != m:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if b.shape != (n,):
        raise ValueError(f"rhs length {b.shape} does not match matrix size {n}")


def _factorize(a_csc, permc_spec="COLAMD", options=None):
    """SuperLU factorization with a singularity check on the U diagonal."""
    try:
        lu = spla.splu(a_csc, permc_spec=permc_spec, options=options or {})
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SingularMatrixError(f"sparse LU failed: {exc}") from exc
    udiag = np.abs(lu.U.diagonal())
    dmax = udiag.max() if udiag.size else 0.0
    if dmax == 0.0:
        raise SingularMatrixError("sparse LU produced an identically zero pivot",
                                  pivot_index=0, pivot_value=0.0)
    worst = int(np.argmin(udiag))
    ratio = udiag[worst] / dmax
    if ratio < 1e3 * np.finfo(float).eps:
        raise SingularMatrixError(
            f"matrix singular to working precision: pivot {worst} has relative "
            f"magnitude {ratio:.3e}", pivot_index=worst, pivot_value=float(ratio))
    return lu


def solve_direct(a, b):
    """Solve the square system a x = b by sparse LU.

    Guarantees ``norm(a x - b, inf) <= 1e-10 (norm(a, inf) norm(x, inf)
    + norm(b, inf))``, applying iterative refinement if the first triangular
    solve falls short.  Raises SingularMatrixError when the matrix is
    singular to working precision.
    """
    a = sp.csr_array(a)
    b = np.asarray(b, dtype=float)
    _check_square(a, b)
    if a.shape[0] == 0:
        return np.zeros(0)
    lu = _factorize(a.tocsc())
    x = lu.solve(b)
    anorm = _inf_norm(a)
    bnorm = float(np.abs(b).max()) if b.size else 0.0
    for _ in range(3):
        r = b - a @ x
        scale = anorm * float(np.abs(x).max(initial=0.0)) + bnorm
        if float(np.abs(r).max(initial=0.0)) <= 1e-10 * scale:
            return x
        x = x + lu.solve(r)
    r = b - a @ x
    scale = anorm * float(np.abs(x).max(initial=0.0)) + bnorm
    if float(np.abs(r).max(initial=0.0)) <= 1e-10 * scale:
        return x
    raise SolverError("direct solve residual did not reach tolerance; matrix "
                      "is likely too ill-conditioned for double precision")


@dataclasses.dataclass
class GmresResult:
    x: np.ndarray
    iterations: int


def _ilu0_preconditioner(a_csc):
    # drop_tol=0 with fill_factor=1 keeps the factor on the sparsity
    # pattern of A, the classical ILU(0)
    try:
        ilu = spla.spilu(a_csc, drop_tol=0.0, fill_factor=1.0)
    except RuntimeError as exc:
        raise GmresBreakdownError(f"ILU(0) factorization broke down: {exc}") from exc
    n = a_csc.shape[0]
    return spla.LinearOperator((n, n), matvec=ilu.solve)


def solve_gmres(a, b, preconditioner="none", tol=1e-10, max_iter=None):
    """Solve a x = b with restarted GMRES.

    `preconditioner` is "none" or "ilu0".  Returns a GmresResult carrying
    the solution and the inner-iteration count.  Non-convergence raises
    GmresConvergenceError with the best iterate attached; breakdowns and
    malformed systems raise GmresBreakdownError.
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    a = sp.csr_array(a)
    b = np.asarray(b, dtype=float)
    _check_square(a, b)
    n = a.shape[0]
    if n == 0:
        return GmresResult(np.zeros(0), 0)
    if not np.abs(b).max() > 0.0:
        return GmresResult(np.zeros(n), 0)
    if preconditioner == "ilu0":
        m_op = _ilu0_preconditioner(a.tocsc())
    elif preconditioner == "none":
        m_op = None
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}; "
                         "expected 'none' or 'ilu0'")
    if max_iter is None:
        max_iter = 10 * n
    count = [0]

    def tick(_pr_norm):
        count[0] += 1

    # full (unrestarted) Krylov spaces up to dimension 200 so small systems
    # enjoy exact termination; beyond that restart to bound memory
    restart = max(1, min(n, 200, max_iter))
    x, info = spla.gmres(a, b, rtol=tol, atol=0.0, restart=restart,
                         maxiter=max(1, max_iter // restart), M=m_op,
                         callback=tick, callback_type="pr_norm")
    if info < 0:
        raise GmresBreakdownError(f"GMRES breakdown (info={info})")
    res = float(np.linalg.norm(b - a @ x) / np.linalg.norm(b))
    if info > 0 and res > tol:
        raise GmresConvergenceError(
            f"GMRES did not reach tol={tol:.2e} in {count[0]} iterations "
            f"(relative residual {res:.3e})", best=x, iterations=count[0],
            residual=res)
    return GmresResult(x, count[0])


class LuCache:
    """Reuses a sparse LU factorization across slowly varying matrices.

    `solve(a, b)` refines the stale-factor solve against the current matrix
    until the residual meets the direct-solve contract; when refinement
    stalls (the matrix drifted too far) it refactors and tries once more.

    `perm` is an optional symmetric row/column pre-ordering; the permuted
    matrix is then factorized in natural order with symmetric-mode threshold
    pivoting, which is how a fill-reducing ordering computed outside SuperLU
    is kept intact.  `permc_spec`/`options` override the SuperLU defaults for
    the unpermuted path.

    Refinement progress is judged componentwise (residual against
    |A| |x| + |b|), so block systems with wildly different row scales do not
    read as stalled while their small rows still improve.  `accept(x, r)`
    replaces the default normwise stopping test when the caller needs a
    stronger, system-specific criterion; the residual of the returned
    solution is kept in `last_residual`.
    """

    def __init__(self, max_rounds=10, perm=None, permc_spec=None, options=None):
        self._lu = None
        self._shape = None
        self.max_rounds = max_rounds
        self.factor_count = 0
        self.solve_count = 0
        self.last_residual = None
        self._perm = None if perm is None else np.asarray(perm, dtype=np.int64)
        self._permc_spec = permc_spec
        self._options = options
        if self._perm is not None and self._permc_spec is None:
            self._permc_spec = "NATURAL"
            if options is None:
                # static pivoting: threshold pivoting reorders rows when a
                # diagonal looks weak (viscosity-dominated blocks trip it)
                # and the row swaps wreck the pre-ordering's fill bound, an
                # order-of-magnitude blowup; refinement plus the acceptance
                # test covers the lost stability margin
                self._options = {"SymmetricMode": True, "DiagPivotThresh": 0.0}

    def invalidate(self):
        self._lu = None

    def _refactor(self, a, options=None):
        if self._perm is not None:
            if self._perm.shape[0] != a.shape[0]:
                raise ValueError(f"permutation length {self._perm.shape[0]} "
                                 f"does not match matrix size {a.shape[0]}")
            a = a[self._perm][:, self._perm]
        self._lu = _factorize(a.tocsc(), self._permc_spec or "COLAMD",
                              options if options is not None else self._options)
        self._shape = a.shape
        self.factor_count += 1

    def _apply(self, b):
        if self._perm is None:
            return self._lu.solve(b)
        x = np.empty_like(b)
        x[self._perm] = self._lu.solve(b[self._perm])
        return x

    def _refine(self, a, b, accept, x=None, r=None):
        if x is None:
            x = self._apply(b)
        denom = None
        prev = np.inf
        for _ in range(self.max_rounds):
            if r is None:
                r = b - a @ x
            if accept(x, r):
                self.last_residual = r
                return x
            if denom is None:
                a_abs = sp.csr_array((np.abs(a.data), a.indices, a.indptr),
                                     shape=a.shape)
                denom = a_abs @ np.abs(x) + np.abs(b) + 1e-300
            omega = float((np.abs(r) / denom).max(initial=0.0))
            if omega > 0.5 * prev:  # stalled: factor too stale
                return None
            prev = omega
            x = x + self._apply(r)
            r = None
        return None

    def solve(self, a, b, anorm=None, accept=None, x0=None):
        """Solve a x = b, refining until `accept` (default: normwise 1e-12).

        x0 is an optional warm start; when its residual already passes the
        acceptance test no triangular solve happens at all, which is what
        fixed-point loops with slowly moving matrices want.
        """
        a = sp.csr_array(a)
        b = np.asarray(b, dtype=float)
        _check_square(a, b)
        self.solve_count += 1
        if accept is None:
            if anorm is None:
                anorm = _inf_norm(a)
            bnorm = float(np.abs(b).max()) if b.size else 0.0

            def accept(x, r):
                scale = anorm * float(np.abs(x).max(initial=0.0)) + bnorm
                return float(np.abs(r).max(initial=0.0)) <= 1e-12 * scale

        r0 = None
        if x0 is not None:
            x0 = np.asarray(x0, dtype=float)
            if x0.shape != b.shape:
                raise ValueError(f"warm start length {x0.shape} does not "
                                 f"match rhs {b.shape}")
            r0 = b - a @ x0
            if accept(x0, r0):
                self.last_residual = r0
                return x0
        if self._lu is None or self._shape != a.shape:
            self._refactor(a)
        x = self._refine(a, b, accept, x0, r0)
        if x is None:
            self._refactor(a)
            x = self._refine(a, b, accept)
        if x is None and self._options is not None \
                and self._options.get("DiagPivotThresh", 1.0) < 1.0:
            # static pivoting was not stable enough for this matrix: pay for
            # one fully pivoted factorization, then drop it so the fast
            # setting is tried again on the next system
            self._refactor(a, options={**self._options,
                                       "DiagPivotThresh": 1.0})
            x = self._refine(a, b, accept)
            self._lu = None
        if x is None:
            raise SolverError("LU refinement failed even after refactoring")
        return x


@dataclasses.dataclass
class BlockSystem:
    """Velocity-pressure saddle structure with a pressure mean constraint.

    k is the velocity-velocity block, b the divergence coupling with
    pressure-test rows, and mean the vector of basis integrals realizing
    the discrete functional q -> integral of q.
    """

    k: CsrMatrix
    b: CsrMatrix
    mean: np.ndarray

    def __post_init__(self):
        nu = self.k.shape[0]
        if self.k.shape[1] != nu:
            raise ValueError(f"velocity block must be square, got {self.k.shape}")
        if self.b.shape[1] != nu:
            raise ValueError(
                f"divergence block has {self.b.shape[1]} columns, expected {nu}")
        if self.mean.shape != (self.b.shape[0],):
            raise ValueError(
                f"mean vector length {self.mean.shape} does not match "
                f"{self.b.shape[0]} pressure dofs")

    @property
    def n_velocity(self):
        return self.k.shape[0]

    @property
    def n_pressure(self):
        return self.b.shape[0]


@dataclasses.dataclass
class SaddleSolution:
    u: np.ndarray
    p: np.ndarray
    multiplier: float


def bordered_matrix(system):
    """Assemble [[K, -B^T, 0], [B, 0, m], [0, m^T, 0]] in CSR form."""
    m_col = sp.csr_array(system.mean.reshape(-1, 1))
    a = sp.block_array(
        [[system.k, -system.b.T, None],
         [system.b, None, m_col],
         [None, m_col.T, None]], format="csr")
    a.sort_indices()
    return a


def _saddle_residual_failure(x, r, nu, fmax, gmax, knorm, btnorm, bnorm,
                             mean_max, mean_scale, slack=1.0):
    """Blockwise backward-error test of a bordered-system residual.

    r is the full residual rhs - A x.  Each block equation is held to its own
    normwise scale (momentum and continuity at slack * 1e-9, the mean row at
    slack * 1e-10); returns a failure message or None.  slack < 1 turns the
    same test into a stricter refinement target.
    """
    u = x[:nu]
    p = x[nu:-1]
    umax = float(np.abs(u).max(initial=0.0))
    pmax = float(np.abs(p).max(initial=0.0))
    scale_mom = max(fmax, knorm * umax, btnorm * pmax, 1e-300)
    if float(np.abs(r[:nu]).max(initial=0.0)) > slack * 1e-9 * scale_mom:
        return "saddle momentum residual exceeds 1e-9 relative"
    scale_div = max(gmax, bnorm * umax, abs(float(x[-1])) * mean_max, 1e-300)
    if float(np.abs(r[nu:-1]).max(initial=0.0)) > slack * 1e-9 * scale_div:
        return "saddle continuity residual exceeds 1e-9 relative"
    # the last residual entry is -m.p; normalized it reads as a mean value
    mean_p = abs(float(r[-1])) / max(mean_scale, 1e-300)
    if mean_p > slack * 1e-10 * max(1.0, pmax):
        return f"pressure mean {mean_p:.3e} not zero at tolerance"
    return None


def solve_saddle(system, f, g=None, lu_cache=None):
    """Solve the constrained saddle system for velocity and mean-zero pressure.

    Solves K u - B^T p = f, B u + lam m = g, m . p = 0 through the bordered
    matrix.  The multiplier lam compensates any nonzero mean in g; for the
    discrete divergence equation it comes out at rounding level.  The solve
    is refined until momentum and continuity residuals pass 1e-9 relative
    blockwise and the pressure mean sits below 1e-10, then those bounds are
    enforced as post-checks.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (system.n_velocity,):
        raise ValueError(f"momentum rhs length {f.shape} does not match "
                         f"{system.n_velocity} velocity dofs")
    if g is None:
        g = np.zeros(system.n_pressure)
    else:
        g = np.asarray(g, dtype=float)
        if g.shape != (system.n_pressure,):
            raise ValueError(f"continuity rhs length {g.shape} does not match "
                             f"{system.n_pressure} pressure dofs")
    a_full = bordered_matrix(system)
    rhs = np.concatenate([f, g, [0.0]])
    nu, npr = system.n_velocity, system.n_pressure

    knorm = _inf_norm(system.k)
    btnorm = _inf_norm(system.b.T)
    bnorm = _inf_norm(system.b)
    mean_max = float(np.abs(system.mean).max(initial=0.0))
    mean_scale = float(np.abs(system.mean).sum())
    fmax = float(np.abs(f).max(initial=0.0))
    gmax = float(np.abs(g).max(initial=0.0))

    def accept(x, r):
        return _saddle_residual_failure(x, r, nu, fmax, gmax, knorm, btnorm,
                                        bnorm, mean_max, mean_scale,
                                        slack=0.1) is None

    cache = lu_cache if lu_cache is not None else LuCache()
    sol = cache.solve(a_full, rhs, accept=accept)
    msg = _saddle_residual_failure(sol, cache.last_residual, nu, fmax, gmax,
                                   knorm, btnorm, bnorm, mean_max, mean_scale)
    if msg is not None:
        raise SolverError(msg)
    return SaddleSolution(sol[:nu], sol[nu:nu + npr], float(sol[-1]))


def write_matrix(path, a):
    """Write a sparse matrix as MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_array(a))


def read_matrix(path):
    """Read a MatrixMarket file back as CSR."""
    return sp.csr_array(scipy.io.mmread(str(path)))
