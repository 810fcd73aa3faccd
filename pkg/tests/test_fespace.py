"""Reference basis, quadrature, projection, and field evaluation."""
import numpy as np
import pytest

import oracles
from dgcns.fespace import (DgSpace, eval_basis, eval_field, l2_project,
                           make_quadrature, mean_value, n_modes, scalar_at_qpoints,
                           shift_mean, total_integral, volume_exactness, zeros)


# ---------------------------------------------------------------------------
# basis

def test_reference_mass_is_identity_k1():
    rule = make_quadrature("triangle", 4)
    vals = np.stack([eval_basis(1, p)[0] for p in rule.points])
    mass = np.einsum("q,qi,qj->ij", rule.weights, vals, vals)
    assert np.abs(mass - np.eye(3)).max() <= 1e-13


def test_reference_mass_matches_brute_force_gram_k2():
    vals = np.stack([eval_basis(2, p)[0] for p in oracles._TRI_PTS])
    gram = np.einsum("q,qi,qj->ij", oracles._TRI_WTS, vals, vals)
    assert np.abs(gram - np.eye(n_modes(2))).max() <= 1e-12


def test_constant_is_representable_with_zero_gradient(mesh2):
    space = DgSpace(mesh2, 1)
    one = l2_project(lambda x, y: np.ones_like(x), space)
    for e in (0, 3, 7):
        v, g = eval_field(one, e, (0.3, 0.3), with_grad=True)
        assert v == pytest.approx(1.0, abs=1e-13)
        assert np.abs(g).max() <= 1e-12


def test_point_outside_reference_triangle_rejected():
    with pytest.raises(ValueError):
        eval_basis(1, (0.7, 0.7))
    with pytest.raises(ValueError):
        eval_basis(2, (-0.1, 0.2))


# ---------------------------------------------------------------------------
# quadrature

def test_quadrature_closed_form_values():
    tri = make_quadrature("triangle", 3)
    assert tri.weights.sum() == pytest.approx(0.5, abs=1e-14)
    assert tri.weights @ tri.points[:, 0] == pytest.approx(1 / 6, abs=1e-14)
    edge = make_quadrature("edge", 3)
    assert edge.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert edge.weights @ edge.points[:, 0] ** 2 == pytest.approx(1 / 3, abs=1e-14)


@pytest.mark.parametrize("exactness", [2, 4, 7, 11])
def test_quadrature_integrates_monomials(exactness):
    from math import factorial
    tri = make_quadrature("triangle", exactness)
    edge = make_quadrature("edge", exactness)
    for a in range(exactness + 1):
        exact = 1.0 / (a + 1)
        got = edge.weights @ edge.points[:, 0] ** a
        assert abs(got - exact) <= 1e-12 * exact
        for b in range(exactness + 1 - a):
            # int over the unit triangle of x^a y^b
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            got = tri.weights @ (tri.points[:, 0] ** a * tri.points[:, 1] ** b)
            assert abs(got - exact) <= 1e-12 * exact


def test_quadrature_rejects_out_of_range():
    with pytest.raises(ValueError, match="supported range"):
        make_quadrature("triangle", 0)
    with pytest.raises(ValueError):
        make_quadrature("hexagon", 3)


# ---------------------------------------------------------------------------
# projection

def test_projection_reproduces_polynomials(mesh3, rng):
    for k in (1, 2, 3):
        space = DgSpace(mesh3, k)

        def poly(x, y):
            return (x - 0.3) ** k + 2.0 * y ** k - x * y ** (k - 1)

        field = l2_project(poly, space)
        for _ in range(20):
            e = rng.integers(mesh3.n_elements)
            ref = rng.random(2) * 0.5
            phys = mesh3.origin[e] + mesh3.jac[e] @ ref
            assert eval_field(field, e, ref) == pytest.approx(
                poly(*phys), abs=1e-11)


def test_projection_residual_is_orthogonal_to_the_space(mesh2):
    # orthogonality holds in the discrete inner product the projection uses;
    # a finer rule would only measure the quadrature crime on sin*cosh
    space = DgSpace(mesh2, 1)

    def f(x, y):
        return np.sin(2 * np.pi * x) * np.cosh(y)

    field = l2_project(f, space)
    fvals = f(space.qpoints[..., 0], space.qpoints[..., 1])
    pvals = scalar_at_qpoints(field.values, space)
    residual = np.einsum("q,eq,qm->em", space.rule.weights, fvals - pvals,
                         space.ref_vals)
    assert np.abs(residual).max() <= 1e-10


def test_projection_is_idempotent(mesh2, rng):
    space = DgSpace(mesh2, 2)
    coeffs = rng.standard_normal(space.total_dofs)
    field = type(zeros(space))(space, coeffs)

    def evaluate(x, y):
        # pointwise evaluation of the discrete field, element located by brute force
        out = np.zeros_like(np.asarray(x, dtype=float))
        flat_x, flat_y = np.ravel(x), np.ravel(y)
        flat = out.ravel()
        for i, (px, py) in enumerate(zip(flat_x, flat_y)):
            for e in range(space.mesh.n_elements):
                ref = (np.array([px, py]) - space.mesh.origin[e]) @ space.mesh.jac_inv[e].T
                if ref.min() >= -1e-12 and ref.sum() <= 1 + 1e-12:
                    flat[i] = eval_field(field, e, np.clip(ref, 0, 1))
                    break
        return out

    again = l2_project(evaluate, space)
    assert np.abs(again.values - coeffs).max() <= 1e-13


def test_projection_rate_is_k_plus_one():
    errs = {k: [] for k in (1, 2)}
    for nx in (4, 8, 16):
        from dgcns.mesh import build_rect_mesh
        mesh = build_rect_mesh(nx, nx)
        for k in errs:
            space = DgSpace(mesh, k)
            field = l2_project(lambda x, y: np.sin(2 * np.pi * x), space)
            diff = scalar_at_qpoints(field.values, space) \
                - np.sin(2 * np.pi * space.qpoints[..., 0])
            err = np.sqrt(np.einsum("q,eq,e->", space.rule.weights, diff ** 2,
                                    space.mesh.det))
            errs[k].append(err)
    for k, (e0, e1, e2) in errs.items():
        rate = np.log(e1 / e2) / np.log(2.0)
        assert rate == pytest.approx(k + 1, abs=0.1)


# ---------------------------------------------------------------------------
# evaluation and means

def test_linear_field_and_gradient_recovered(mesh2):
    space = DgSpace(mesh2, 1)
    field = l2_project(lambda x, y: x + y, space)
    for e in range(mesh2.n_elements):
        centroid_ref = np.array([1 / 3, 1 / 3])
        phys = mesh2.origin[e] + mesh2.jac[e] @ centroid_ref
        v, g = eval_field(field, e, centroid_ref, with_grad=True)
        assert v == pytest.approx(phys.sum(), abs=1e-12)
        assert np.abs(g - 1.0).max() <= 1e-12


def test_eval_field_rejects_bad_element(mesh1):
    field = zeros(DgSpace(mesh1, 1))
    with pytest.raises(IndexError):
        eval_field(field, 2, (0.1, 0.1))


def test_mean_values(mesh2):
    space = DgSpace(mesh2, 2)
    assert mean_value(l2_project(lambda x, y: 4.2 + 0 * x, space)) == \
        pytest.approx(4.2, abs=1e-13)
    assert abs(mean_value(l2_project(lambda x, y: np.sin(2 * np.pi * x), space))) <= 1e-10
    assert mean_value(l2_project(lambda x, y: x, space)) == pytest.approx(0.5, abs=1e-12)


def test_shift_and_total_integral(mesh3):
    space = DgSpace(mesh3, 1)
    field = l2_project(lambda x, y: x * y, space)
    before = total_integral(field)
    shift_mean(field, -2.0)
    assert total_integral(field) == pytest.approx(
        before - 2.0 * mesh3.domain_area, abs=1e-12)


def test_vector_space_layout(mesh2, rng):
    space = DgSpace(mesh2, 1, ncomp=2)
    assert space.total_dofs == 2 * 3 * mesh2.n_elements

    def f(x, y):
        return np.stack([x, -y], axis=-1)

    field = l2_project(f, space)
    v = eval_field(field, 5, (0.2, 0.2))
    phys = mesh2.origin[5] + mesh2.jac[5] @ np.array([0.2, 0.2])
    assert v == pytest.approx([phys[0], -phys[1]], abs=1e-12)
    with pytest.raises(ValueError):
        mean_value(field)


def test_space_validation(mesh1):
    with pytest.raises(ValueError):
        DgSpace(mesh1, -1)
    with pytest.raises(ValueError):
        DgSpace(mesh1, 1, ncomp=3)
    with pytest.raises(ValueError):
        type(zeros(DgSpace(mesh1, 1)))(DgSpace(mesh1, 1), np.zeros(5))
