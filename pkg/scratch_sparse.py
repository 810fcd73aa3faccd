import numpy as np
import scipy.sparse as sp

from dgcns import fespace, forms, mesh, sparse

rng = np.random.default_rng(7)

# identity / 2x2
x = sparse.solve_direct(sp.eye_array(4, format="csr"), np.array([1.0, 2, 3, 4]))
assert np.array_equal(x, [1, 2, 3, 4]), x
x = sparse.solve_direct(sparse.make_csr([0, 1], [0, 1], [2.0, 4.0], (2, 2)),
                        np.array([2.0, 8.0]))
print("2x2:", x)

# random 50x50 vs dense
n = 50
dense = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.2)
np.fill_diagonal(dense, 5.0 + rng.random(n))
a = sp.csr_array(dense)
b = rng.standard_normal(n)
x = sparse.solve_direct(a, b)
xd = np.linalg.solve(dense, b)
print("dense-oracle err:", np.abs(x - xd).max())

# singular
try:
    sparse.solve_direct(sparse.make_csr([0, 1], [0, 0], [1.0, 1.0], (2, 2)),
                        np.ones(2))
    print("FAIL: no singularity error")
except sparse.SingularMatrixError as e:
    print("singular ok:", e)

# gmres identity -> 1 iteration
r = sparse.solve_gmres(sp.eye_array(30, format="csr"), np.ones(30), tol=1e-12)
print("gmres identity iters:", r.iterations, "err:", np.abs(r.x - 1).max())

# SPD diagonal
d = sp.diags_array(1.0 + rng.random(40))
b = rng.standard_normal(40)
r = sparse.solve_gmres(d, b, tol=1e-11)
print("gmres diag iters:", r.iterations, "<= 40:", r.iterations <= 40)

# ilu0 on an SIPG matrix
msh = mesh.build_rect_mesh(4, 4)
sps = fespace.DgSpace(msh, 2)
a_rho = forms.assemble_sipg_scalar(sps, 1.0, 40.0)
m_mat = forms.assemble_mass(sps)
a_sys = sp.csr_array(a_rho + m_mat)
b = rng.standard_normal(a_sys.shape[0])
xg = sparse.solve_gmres(a_sys, b, preconditioner="ilu0", tol=1e-12)
xd = sparse.solve_direct(a_sys, b)
print("gmres vs direct:", np.abs(xg.x - xd).max() / np.abs(xd).max(),
      "iters:", xg.iterations)

# nonconvergence carries best iterate
try:
    sparse.solve_gmres(a_sys, b, tol=1e-14, max_iter=3)
    print("note: converged in 3 iters anyway")
except sparse.GmresConvergenceError as e:
    print("gmres budget ok:", e.iterations, e.residual, len(e.best))

# LuCache refinement across a drifting matrix
cache = sparse.LuCache()
pert = sp.csr_array(a_sys + sp.random_array(a_sys.shape, density=0.001,
                                            random_state=3) * 1e-3)
x1 = cache.solve(a_sys, b)
x2 = cache.solve(pert, b)
xd2 = sparse.solve_direct(pert, b)
print("cache stale-refine err:", np.abs(x2 - xd2).max() / np.abs(xd2).max(),
      "factors:", cache.factor_count)

# Stokes polynomial exactness, k=2: u=(y^2, x^2), p=x+y-1, nu=1
k = 2
nu_visc = 1.0
vsp = fespace.DgSpace(msh, k, ncomp=2)
psp = fespace.DgSpace(msh, k - 1, exactness=fespace.volume_exactness(k))
sigma = 10.0 * k * k
kmat = forms.assemble_sipg_vector(vsp, nu_visc, sigma)
bmat = forms.assemble_div(vsp, psp)
mean = np.zeros(psp.total_dofs)
mean[0::psp.nb] = msh.det / fespace.SQRT2
sysb = sparse.BlockSystem(sp.csr_array(kmat), sp.csr_array(bmat), mean)


def uex(x, y):
    return np.stack([y**2, x**2], axis=-1)


fvol = forms.assemble_load(lambda x, y: np.stack([1 - 2 * nu_visc + 0 * x,
                                                 1 - 2 * nu_visc + 0 * x],
                                                axis=-1), vsp)
fbc = forms.assemble_dirichlet_rhs(vsp, uex, nu_visc, sigma)

# continuity rhs: -sum_bdy q (g.n)
gq = np.zeros(psp.total_dofs)
xb, yb = psp.bq_points[..., 0], psp.bq_points[..., 1]
gdotn = np.einsum("eqc,ec->eq", uex(xb, yb), msh.bedge_normal)
wb = msh.bedge_length[:, None] * psp.edge_rule.weights[None, :]
vals = -np.einsum("eq,eq,eqj->ej", wb, gdotn, psp.btr_vals)
np.add.at(gq.reshape(msh.n_elements, psp.nb),
          msh.bedge_elem, np.zeros_like(vals))  # placeholder shape check
gq2 = np.zeros((msh.n_elements, psp.nb))
np.add.at(gq2, msh.bedge_elem, vals)
gq = gq2.ravel()

sol = sparse.solve_saddle(sysb, fvol + fbc, gq)
u_ex_c = fespace.l2_project(uex, vsp).values
p_ex_c = fespace.l2_project(lambda x, y: x + y - 1, psp).values
print("stokes u err:", np.abs(sol.u - u_ex_c).max())
print("stokes p err:", np.abs(sol.p - p_ex_c).max())
print("stokes lambda:", sol.multiplier)

# zero rhs -> zero
sol0 = sparse.solve_saddle(sysb, np.zeros(vsp.total_dofs))
print("zero rhs:", np.abs(sol0.u).max(), np.abs(sol0.p).max())

# matrixmarket roundtrip
import tempfile, pathlib
with tempfile.TemporaryDirectory() as td:
    pth = pathlib.Path(td) / "a.mtx"
    sparse.write_matrix(pth, a_sys)
    back = sparse.read_matrix(pth)
    print("mm roundtrip:", abs((back - a_sys)).max())
