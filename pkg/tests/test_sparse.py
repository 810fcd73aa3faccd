"""Direct, Krylov, and constrained saddle solves against dense oracles."""
import numpy as np
import pytest
import scipy.sparse as sp

import oracles
from dgcns import forms
from dgcns.fespace import DgSpace, l2_project, mean_value, shift_mean
from dgcns.sparse import (BlockSystem, GmresBreakdownError,
                          GmresConvergenceError, LuCache, SingularMatrixError,
                          SolverError, csr_block_slots, make_csr, read_matrix,
                          solve_direct, solve_gmres, solve_saddle, write_matrix)


def _random_sparse(rng, n, density=0.2):
    """Random sparse matrix made comfortably nonsingular by a diagonal shift."""
    mask = rng.random((n, n)) < density
    a = np.where(mask, rng.standard_normal((n, n)), 0.0)
    a[np.diag_indices(n)] += n
    return sp.csr_array(a)


# ---------------------------------------------------------------------------
# direct solve

def test_direct_identity_returns_rhs(rng):
    b = rng.standard_normal(7)
    x = solve_direct(sp.eye_array(7).tocsr(), b)
    assert np.array_equal(x, b)


def test_direct_two_by_two_diagonal():
    a = make_csr([0, 1], [0, 1], [2.0, 4.0], (2, 2))
    assert np.allclose(solve_direct(a, np.array([2.0, 8.0])), [1.0, 2.0],
                       atol=1e-15)


def test_direct_matches_dense_oracle(rng):
    a = _random_sparse(rng, 50)
    b = rng.standard_normal(50)
    x = solve_direct(a, b)
    want = oracles.dense_solve(a, b)
    assert np.abs(x - want).max() <= 1e-9 * np.abs(want).max()


def test_direct_residual_contract(rng):
    a = _random_sparse(rng, 80, density=0.1)
    b = rng.standard_normal(80)
    x = solve_direct(a, b)
    r = np.abs(b - a @ x).max()
    scale = float(abs(a).sum(axis=1).max()) * np.abs(x).max() + np.abs(b).max()
    assert r <= 1e-10 * scale


def test_direct_singular_matrix_reports_pivot():
    a = make_csr([0, 0, 1, 1], [0, 1, 0, 1], [1.0, 2.0, 2.0, 4.0], (2, 2))
    with pytest.raises(SingularMatrixError) as exc:
        solve_direct(a, np.array([1.0, 2.0]))
    assert exc.value.pivot_index is not None


def test_direct_shape_validation():
    rect = make_csr([0], [0], [1.0], (1, 2))
    with pytest.raises(ValueError):
        solve_direct(rect, np.zeros(1))
    with pytest.raises(ValueError):
        solve_direct(sp.eye_array(3).tocsr(), np.zeros(2))


def test_matvec_matches_dense(rng):
    a = _random_sparse(rng, 40)
    x = rng.standard_normal(40)
    want = np.asarray(a.todense()) @ x
    assert np.abs(a @ x - want).max() <= 1e-13 * np.abs(want).max()


# ---------------------------------------------------------------------------
# GMRES

def test_gmres_spd_diagonal_within_dimension_iterations(rng):
    n = 30
    a = sp.diags_array(np.arange(1.0, n + 1)).tocsr()
    b = rng.standard_normal(n)
    res = solve_gmres(a, b, tol=1e-12)
    assert res.iterations <= n
    assert np.abs(a @ res.x - b).max() <= 1e-10 * np.abs(b).max()


def test_gmres_identity_single_iteration(rng):
    b = rng.standard_normal(12)
    res = solve_gmres(sp.eye_array(12).tocsr(), b, tol=1e-12)
    assert res.iterations == 1


def test_gmres_agrees_with_direct_on_diffusion_system(mesh2, rng):
    space = DgSpace(mesh2, 1)
    a = forms.assemble_mass(space) + forms.assemble_sipg_scalar(space, 1.0, 10.0)
    b = rng.standard_normal(space.total_dofs)
    xd = solve_direct(a, b)
    for pre in ("none", "ilu0"):
        xg = solve_gmres(a, b, preconditioner=pre, tol=1e-12).x
        assert np.abs(xg - xd).max() <= 1e-8 * np.abs(xd).max()


def test_gmres_zero_rhs_short_circuits():
    res = solve_gmres(sp.eye_array(5).tocsr(), np.zeros(5))
    assert res.iterations == 0 and not res.x.any()


def test_gmres_nonconvergence_carries_best_iterate(rng):
    # wide log-spaced spectrum, tiny budget: must fail but hand back progress
    n = 400
    a = sp.diags_array(np.logspace(0, 8, n)).tocsr()
    b = rng.standard_normal(n)
    with pytest.raises(GmresConvergenceError) as exc:
        solve_gmres(a, b, tol=1e-14, max_iter=3)
    err = exc.value
    assert err.best.shape == (n,)
    assert err.iterations >= 1
    assert err.residual > 1e-14


def test_gmres_ilu_breakdown_distinguished():
    a = make_csr([0, 1], [1, 0], [1.0, 1.0], (2, 2))  # no diagonal pattern
    with pytest.raises(GmresBreakdownError):
        solve_gmres(a, np.ones(2), preconditioner="ilu0")


def test_gmres_argument_validation():
    eye = sp.eye_array(3).tocsr()
    with pytest.raises(ValueError):
        solve_gmres(eye, np.zeros(3), tol=0.0)
    with pytest.raises(ValueError):
        solve_gmres(eye, np.zeros(3), preconditioner="jacobi")


# ---------------------------------------------------------------------------
# saddle systems

def _stokes_blocks(mesh, degree):
    vspace = DgSpace(mesh, degree, ncomp=2)
    pspace = DgSpace(mesh, degree - 1, exactness=vspace.rule.exactness)
    k = forms.assemble_sipg_vector(vspace, 1.0, 10.0 * degree * degree)
    b = forms.assemble_div(vspace, pspace)
    mean = np.zeros(pspace.total_dofs)
    mean[0::pspace.nb] = mesh.det / np.sqrt(2.0)
    return vspace, pspace, BlockSystem(k, b, mean)


@pytest.mark.parametrize("degree", [1, 2])
def test_saddle_reproduces_discrete_solution(mesh2, degree):
    vspace, pspace, system = _stokes_blocks(mesh2, degree)
    u_star = l2_project(lambda x, y: (x + 2 * y, 3 * x - y), vspace).values
    p_field = l2_project(lambda x, y: x, pspace)
    shift_mean(p_field, -mean_value(p_field))
    p_star = p_field.values
    f = system.k @ u_star - system.b.T @ p_star
    g = system.b @ u_star
    sol = solve_saddle(system, f, g)
    scale = max(np.abs(u_star).max(), np.abs(p_star).max())
    assert np.abs(sol.u - u_star).max() <= 1e-9 * scale
    assert np.abs(sol.p - p_star).max() <= 1e-9 * scale
    assert abs(system.mean @ sol.p) <= 1e-10 * np.abs(system.mean).sum()


def test_saddle_zero_rhs_gives_zero(mesh2):
    _, _, system = _stokes_blocks(mesh2, 1)
    sol = solve_saddle(system, np.zeros(system.n_velocity))
    assert not sol.u.any() and not sol.p.any()


def test_saddle_constant_continuity_shift_keeps_velocity(mesh2, rng):
    # P0 pressure on a uniform mesh: the all-ones shift is exactly the mean
    # direction, so the multiplier absorbs it and (u, p) stay put
    _, pspace, system = _stokes_blocks(mesh2, 1)
    f = rng.standard_normal(system.n_velocity)
    base = solve_saddle(system, f)
    shifted = solve_saddle(system, f, 0.7 * np.ones(system.n_pressure))
    scale = max(np.abs(base.u).max(), 1.0)
    assert np.abs(shifted.u - base.u).max() <= 1e-10 * scale
    assert np.abs(shifted.p - base.p).max() <= 1e-10 * scale
    assert shifted.multiplier != pytest.approx(base.multiplier, abs=1e-12)


def test_saddle_extra_rank_deficiency_raises(mesh2):
    vspace, pspace, system = _stokes_blocks(mesh2, 1)
    k = system.k.tolil()
    k[0, :] = 0.0
    k[:, 0] = 0.0
    broken = BlockSystem(sp.csr_array(k.tocsr()), system.b, system.mean)
    with pytest.raises(SolverError):
        solve_saddle(broken, np.ones(system.n_velocity))


def test_saddle_rhs_length_validation(mesh2):
    _, _, system = _stokes_blocks(mesh2, 1)
    with pytest.raises(ValueError):
        solve_saddle(system, np.zeros(3))
    with pytest.raises(ValueError):
        solve_saddle(system, np.zeros(system.n_velocity), np.zeros(2))


def test_block_system_shape_validation(mesh2):
    _, _, system = _stokes_blocks(mesh2, 1)
    with pytest.raises(ValueError):
        BlockSystem(system.b, system.b, system.mean)       # k not square
    with pytest.raises(ValueError):
        BlockSystem(system.k, system.b.T, system.mean)     # b transposed
    with pytest.raises(ValueError):
        BlockSystem(system.k, system.b, system.mean[:-1])  # mean too short


# ---------------------------------------------------------------------------
# caching, block updates, and fixtures

def test_block_slots_update_matches_sparse_addition(rng):
    parent = _random_sparse(rng, 12, density=0.5)
    sub = sp.csr_array(np.asarray(parent[3:7, 2:9].todense()))
    slots = csr_block_slots(parent, sub, row_offset=3, col_offset=2)
    updated = parent.copy()
    updated.data[slots] += sub.data
    want = np.asarray(parent.todense())
    want[3:7, 2:9] += np.asarray(sub.todense())
    assert np.abs(updated.todense() - want).max() == 0.0


def test_block_slots_requires_contained_pattern():
    parent = sp.eye_array(4).tocsr()
    sub = make_csr([0], [1], [1.0], (1, 2))
    with pytest.raises(ValueError):
        csr_block_slots(parent, sub)


def test_lucache_reuses_factorization_across_drift(rng):
    a = _random_sparse(rng, 60)
    cache = LuCache()
    b = rng.standard_normal(60)
    x1 = cache.solve(a, b)
    assert cache.factor_count == 1
    # small drift: refinement against the stale factor must absorb it
    drift = a + sp.csr_array(1e-6 * np.diag(rng.standard_normal(60)))
    x2 = cache.solve(drift, b)
    assert cache.factor_count == 1
    r = np.abs(b - drift @ x2).max()
    scale = float(abs(drift).sum(axis=1).max()) * np.abs(x2).max() + np.abs(b).max()
    assert r <= 1e-11 * scale
    # warm start whose residual already passes: no new factorization either
    x3 = cache.solve(drift, b, x0=x2)
    assert x3 is not x1 and cache.factor_count == 1


def test_lucache_perm_length_mismatch():
    cache = LuCache(perm=np.arange(3))
    with pytest.raises(ValueError):
        cache.solve(sp.eye_array(4).tocsr(), np.ones(4))


def test_matrix_market_roundtrip(tmp_path, mesh2):
    space = DgSpace(mesh2, 1)
    a = forms.assemble_sipg_scalar(space, 1.0, 10.0)
    path = tmp_path / "a.mtx"
    write_matrix(path, a)
    back = read_matrix(path)
    assert back.shape == a.shape
    assert np.abs((back - a).todense()).max() <= 1e-14 * np.abs(a.data).max()
