"""Assembled bilinear/trilinear forms against slow direct-quadrature oracles.

Every matrix identity here (symmetry, skew-symmetry, kernels) is checked
relative to the largest matrix entry so the tolerances mean the same thing
on every mesh and degree.
"""
import numpy as np
import pytest
import scipy.linalg

import oracles
from dgcns import forms
from dgcns.analysis import error_energy, error_l2
from dgcns.fespace import (DgSpace, FieldCoeffs, eval_field, l2_project,
                           mean_value, shift_mean, zeros)
from dgcns.mesh import build_rect_mesh
from dgcns.sparse import solve_direct


def _rand(space, rng, scale=1.0):
    return FieldCoeffs(space, scale * rng.standard_normal(space.total_dofs))


def _maxabs(a):
    return float(np.abs(a.data).max()) if a.nnz else 0.0


def _zero(x, y, t=None):
    return np.zeros_like(x)


def _zero_grad(x, y, t=None):
    return np.zeros(np.shape(x) + (2,))


# ---------------------------------------------------------------------------
# SIPG diffusion

@pytest.mark.parametrize("degree", [1, 2])
def test_scalar_diffusion_symmetric(mesh2, degree, rng):
    space = DgSpace(mesh2, degree)
    a = forms.assemble_sipg_scalar(space, 1.7, 10.0 * degree * degree)
    assert _maxabs(a - a.T) <= 1e-12 * _maxabs(a)


def test_scalar_diffusion_kills_constants(mesh2):
    space = DgSpace(mesh2, 1)
    a = forms.assemble_sipg_scalar(space, 1.0, 10.0)
    one = l2_project(lambda x, y: np.ones_like(x), space)
    assert np.abs(a @ one.values).max() <= 1e-12 * _maxabs(a)
    assert one.values @ (a @ one.values) <= 1e-12 * _maxabs(a)


@pytest.mark.parametrize("degree", [1, 2])
def test_scalar_diffusion_coercive_on_mean_zero(mesh2, degree, rng):
    # penalty 10 k^2; the 0.1 margin was measured before being asserted
    sigma = 10.0 * degree * degree
    space = DgSpace(mesh2, degree)
    a = forms.assemble_sipg_scalar(space, 1.0, sigma)
    worst = np.inf
    for _ in range(100):
        chi = _rand(space, rng)
        shift_mean(chi, -mean_value(chi))
        nrm = error_energy(chi, _zero, _zero_grad, t=0.0, kind="rho",
                           sigma=sigma)
        worst = min(worst, float(chi.values @ (a @ chi.values)) / nrm ** 2)
    assert worst >= 0.1


@pytest.mark.parametrize("degree", [1, 2])
def test_scalar_diffusion_matches_brute_force(mesh1, degree, rng):
    space = DgSpace(mesh1, degree)
    a = forms.assemble_sipg_scalar(space, 0.8, 7.0)
    psi, phi = _rand(space, rng), _rand(space, rng)
    got = float(phi.values @ (a @ psi.values))
    want = oracles.oracle_scalar_diffusion(psi, phi, 0.8, 7.0)
    assert got == pytest.approx(want, abs=1e-11 * max(1.0, abs(want)))


def test_vector_diffusion_symmetric_and_penalizes_constants(mesh2):
    vspace = DgSpace(mesh2, 1, ncomp=2)
    a = forms.assemble_sipg_vector(vspace, 2.0, 10.0)
    assert _maxabs(a - a.T) <= 1e-12 * _maxabs(a)
    v = l2_project(lambda x, y: (np.ones_like(x), np.ones_like(y)), vspace)
    # no-slip enters through the boundary penalty, so constants cost energy
    assert v.values @ (a @ v.values) > 1.0


@pytest.mark.parametrize("degree", [1, 2])
def test_vector_diffusion_matches_brute_force(mesh1, degree, rng):
    vspace = DgSpace(mesh1, degree, ncomp=2)
    a = forms.assemble_sipg_vector(vspace, 3.0, 12.5)
    v, w = _rand(vspace, rng), _rand(vspace, rng)
    got = float(w.values @ (a @ v.values))
    want = oracles.oracle_vector_diffusion(v, w, 3.0, 12.5)
    assert got == pytest.approx(want, abs=1e-11 * max(1.0, abs(want)))


def test_vector_diffusion_poisson_rate(rng):
    """Elliptic sanity: weak no-slip solve reproduces O(h^{k+1}) in L2."""
    nu = 1.0

    def exact(x, y, t=None):
        s = np.sin(np.pi * x) * np.sin(np.pi * y)
        return np.stack([s, s], axis=-1)

    def load(x, y):
        s = 2.0 * nu * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)
        return (s, s)

    for degree in (1, 2):
        errs = []
        for nx in (4, 8, 16):
            mesh = build_rect_mesh(nx, nx)
            vspace = DgSpace(mesh, degree, ncomp=2)
            a = forms.assemble_sipg_vector(vspace, nu, 10.0 * degree * degree)
            rhs = forms.assemble_load(load, vspace)
            uh = FieldCoeffs(vspace, solve_direct(a, rhs), time=0.0)
            errs.append(error_l2(uh, exact))
        rate = np.log(errs[-2] / errs[-1]) / np.log(2.0)
        assert rate >= degree + 0.7, (degree, errs)


# ---------------------------------------------------------------------------
# divergence coupling

@pytest.mark.parametrize("degree", [1, 2])
def test_div_variants_agree(mesh2, degree):
    vspace = DgSpace(mesh2, degree, ncomp=2)
    pspace = DgSpace(mesh2, degree - 1,
                     exactness=vspace.rule.exactness)
    b1 = forms.assemble_div(vspace, pspace, variant=1)
    b2 = forms.assemble_div(vspace, pspace, variant=2)
    assert _maxabs(b1 - b2) <= 1e-12 * _maxabs(b1)


def test_div_of_constant_velocity_vanishes(mesh2):
    vspace = DgSpace(mesh2, 1, ncomp=2)
    pspace = DgSpace(mesh2, 0, exactness=vspace.rule.exactness)
    b = forms.assemble_div(vspace, pspace)
    v = l2_project(lambda x, y: (np.ones_like(x), -2.0 * np.ones_like(y)),
                   vspace)
    assert np.abs(b @ v.values).max() <= 1e-12 * _maxabs(b)


def test_div_free_linear_field_against_constant_pressure(mesh3):
    vspace = DgSpace(mesh3, 1, ncomp=2)
    pspace = DgSpace(mesh3, 0, exactness=vspace.rule.exactness)
    b = forms.assemble_div(vspace, pspace)
    v = l2_project(lambda x, y: (x, -y), vspace)
    q = l2_project(lambda x, y: np.ones_like(x), pspace)
    assert q.values @ (b @ v.values) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("degree", [1, 2])
def test_div_matches_brute_force(mesh1, degree, rng):
    vspace = DgSpace(mesh1, degree, ncomp=2)
    pspace = DgSpace(mesh1, degree - 1, exactness=vspace.rule.exactness)
    b = forms.assemble_div(vspace, pspace)
    v, q = _rand(vspace, rng), _rand(pspace, rng)
    got = float(q.values @ (b @ v.values))
    want = oracles.oracle_div(v, q)
    assert got == pytest.approx(want, abs=1e-11 * max(1.0, abs(want)))


# ---------------------------------------------------------------------------
# skew-symmetrized convection

@pytest.mark.parametrize("degree", [1, 2])
def test_scalar_convection_skew(mesh2, degree, rng):
    vspace = DgSpace(mesh2, degree, ncomp=2)
    space = DgSpace(mesh2, degree)
    u = _rand(vspace, rng)
    n = forms.assemble_convection_b1(u, space)
    assert _maxabs(n + n.T) <= 1e-12 * _maxabs(n)
    psi = rng.standard_normal(space.total_dofs)
    assert abs(psi @ (n @ psi)) <= 1e-12 * _maxabs(n) * (psi @ psi)


def test_scalar_convection_zero_velocity(mesh2):
    vspace = DgSpace(mesh2, 1, ncomp=2)
    n = forms.assemble_convection_b1(zeros(vspace), DgSpace(mesh2, 1))
    assert _maxabs(n) == 0.0


@pytest.mark.parametrize("degree", [1, 2])
def test_scalar_convection_matches_brute_force(mesh1, degree, rng):
    vspace = DgSpace(mesh1, degree, ncomp=2)
    space = DgSpace(mesh1, degree)
    u, psi, phi = _rand(vspace, rng), _rand(space, rng), _rand(space, rng)
    got = float(phi.values @ (forms.assemble_convection_b1(u, space) @ psi.values))
    want = oracles.oracle_b1(u, psi, phi)
    assert got == pytest.approx(want, abs=1e-11 * max(1.0, abs(want)))


@pytest.mark.parametrize("degree", [1, 2])
def test_vector_convection_skew(mesh2, degree, rng):
    vspace = DgSpace(mesh2, degree, ncomp=2)
    u = _rand(vspace, rng)
    n = forms.assemble_convection_b2(u)
    assert _maxabs(n + n.T) <= 1e-12 * _maxabs(n)
    w = rng.standard_normal(vspace.total_dofs)
    assert abs(w @ (n @ w)) <= 1e-12 * _maxabs(n) * (w @ w)


def test_vector_convection_zero_velocity(mesh2):
    vspace = DgSpace(mesh2, 1, ncomp=2)
    assert _maxabs(forms.assemble_convection_b2(zeros(vspace))) == 0.0


@pytest.mark.parametrize("degree", [1, 2])
def test_vector_convection_matches_brute_force(mesh1, degree, rng):
    vspace = DgSpace(mesh1, degree, ncomp=2)
    u, w, phi = _rand(vspace, rng), _rand(vspace, rng), _rand(vspace, rng)
    got = float(phi.values @ (forms.assemble_convection_b2(u) @ w.values))
    want = oracles.oracle_b2(u, w, phi)
    assert got == pytest.approx(want, abs=1e-11 * max(1.0, abs(want)))


# ---------------------------------------------------------------------------
# chemotaxis coupling

def test_chemotaxis_constant_weight_matches_brute_force(mesh1, rng):
    space = DgSpace(mesh1, 1)
    g = forms.assemble_chemotaxis_g(zeros(space), 2.3, space)
    c, chi = _rand(space, rng), _rand(space, rng)
    got = float(chi.values @ (g @ c.values))
    want = oracles.oracle_g(zeros(space), 2.3, c, chi)
    assert got == pytest.approx(want, abs=1e-11 * max(1.0, abs(want)))


@pytest.mark.parametrize("degree", [1, 2])
def test_chemotaxis_varying_weight_matches_brute_force(mesh1, degree, rng):
    # the edge flux averages each side's own weight times its own gradient,
    # which only a discontinuous weight can distinguish from the split form
    space = DgSpace(mesh1, degree)
    weight = _rand(space, rng)
    g = forms.assemble_chemotaxis_g(weight, 0.7, space)
    c, chi = _rand(space, rng), _rand(space, rng)
    got = float(chi.values @ (g @ c.values))
    want = oracles.oracle_g(weight, 0.7, c, chi)
    assert got == pytest.approx(want, abs=1e-11 * max(1.0, abs(want)))


def test_chemotaxis_constant_chemical_in_kernel(mesh2, rng):
    space = DgSpace(mesh2, 1)
    g = forms.assemble_chemotaxis_g(_rand(space, rng), 1.5, space)
    const = l2_project(lambda x, y: np.full_like(x, 4.0), space)
    assert np.abs(g @ const.values).max() <= 1e-12 * _maxabs(g)


def test_chemotaxis_zero_weight_zero_matrix(mesh2):
    space = DgSpace(mesh2, 1)
    assert _maxabs(forms.assemble_chemotaxis_g(zeros(space), 0.0, space)) == 0.0


# ---------------------------------------------------------------------------
# mass, loads, buoyancy

def test_mass_is_block_identity_times_det(mesh2):
    space = DgSpace(mesh2, 1)
    m = forms.assemble_mass(space).todense()
    want = np.zeros_like(m)
    for e in range(mesh2.n_elements):
        s = slice(e * space.nb, (e + 1) * space.nb)
        want[s, s] = mesh2.det[e] * np.eye(space.nb)
    assert np.abs(m - want).max() <= 1e-13


def test_weighted_mass_constant_weight_scales_mass(mesh2):
    space = DgSpace(mesh2, 1)
    m = forms.assemble_mass(space)
    w = forms.assemble_weighted_mass(zeros(space), 3.0, space)
    assert _maxabs(w - 3.0 * m) <= 1e-12 * _maxabs(w)


def test_weighted_mass_linear_weight(mesh3, rng):
    from dgcns.mesh import element_geometry
    space = DgSpace(mesh3, 1)
    weight = l2_project(lambda x, y: x, space)
    w = forms.assemble_weighted_mass(weight, 2.0, space)
    psi, phi = _rand(space, rng), _rand(space, rng)

    def vol(e, p):
        geom = element_geometry(mesh3, e)
        ref = geom.to_reference(p)
        return float((p[0] + 2.0) * eval_field(psi, e, ref)
                     * eval_field(phi, e, ref))

    want = oracles._vol_accumulate(mesh3, vol)
    got = float(phi.values @ (w @ psi.values))
    assert got == pytest.approx(want, abs=1e-11 * max(1.0, abs(want)))


def test_load_of_zero_function_is_zero(mesh2):
    space = DgSpace(mesh2, 1)
    rhs = forms.assemble_load(lambda x, y: np.zeros_like(x), space)
    assert np.abs(rhs).max() == 0.0


def test_buoyancy_separates_into_component_load(mesh3):
    vspace = DgSpace(mesh3, 1, ncomp=2)
    space = DgSpace(mesh3, 1)
    vec = forms.assemble_buoyancy(
        zeros(space), 1.0,
        lambda x, y: (np.zeros_like(x), -1000.0 * np.ones_like(y)), vspace)
    comp = forms.assemble_load(lambda x, y: np.ones_like(x), space)
    want = np.concatenate([np.zeros_like(comp), -1000.0 * comp])
    assert np.abs(vec - want).max() <= 1e-12 * np.abs(want).max()


# ---------------------------------------------------------------------------
# inf-sup stability and determinism

def test_pressure_coupling_infsup_stable_under_refinement():
    """Smallest nonzero singular value of the pressure operator holds steady."""
    betas = []
    for nx in (2, 4, 8):
        mesh = build_rect_mesh(nx, nx)
        vspace = DgSpace(mesh, 1, ncomp=2)
        pspace = DgSpace(mesh, 0, exactness=vspace.rule.exactness)
        k = forms.assemble_sipg_vector(vspace, 1.0, 10.0).todense()
        b = forms.assemble_div(vspace, pspace).todense()
        mp = forms.assemble_mass(pspace).todense()
        schur = b @ np.linalg.solve(k, b.T)
        lam = scipy.linalg.eigh(schur, mp, eigvals_only=True)
        # lam[0] is the constant-pressure kernel, numerically ~0
        assert abs(lam[0]) <= 1e-10
        betas.append(float(np.sqrt(lam[1])))
    assert betas[-1] > 0.01
    for coarse, fine in zip(betas, betas[1:]):
        assert abs(fine / coarse - 1.0) <= 0.2, betas


def test_assembly_is_deterministic(mesh2, rng):
    space = DgSpace(mesh2, 1)
    vspace = DgSpace(mesh2, 1, ncomp=2)
    u = _rand(vspace, rng)
    a1 = forms.assemble_sipg_scalar(space, 1.0, 10.0)
    a2 = forms.assemble_sipg_scalar(space, 1.0, 10.0)
    n1 = forms.assemble_convection_b2(u)
    n2 = forms.assemble_convection_b2(u)
    for x, y in ((a1, a2), (n1, n2)):
        assert np.array_equal(x.data, y.data)
        assert np.array_equal(x.indices, y.indices)
        assert np.array_equal(x.indptr, y.indptr)
