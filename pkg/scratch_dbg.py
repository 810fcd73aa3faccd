import numpy as np
import scipy.sparse as sp

from dgcns import forms, mesh, problems, stepper
from dgcns.fespace import FieldCoeffs, mean_value
from dgcns.sparse import BlockSystem, solve_saddle

case = problems.plume_case()
msh = mesh.build_rect_mesh(20, 10, case.domain)
cfg = stepper.SchemeConfig(dt=1e-4, penalty=forms.PenaltyConfig.for_degree(1))
disc = stepper.Discretization(case, msh, 1, cfg)
st = stepper.initialize(disc)

for n in range(12):
    params = disc.params
    dt = cfg.dt
    rhs = disc.mass_v @ st.u.values / dt
    rhs = rhs + forms.assemble_buoyancy(st.rho_tilde, st.m0, params.grad_phi, disc.vh)
    k0 = (disc.mass_v / dt + disc.a_u).tocsr()
    guess = st.u.values
    for m in range(50):
        conv = forms.assemble_convection_b2(FieldCoeffs(disc.vh, guess))
        system = BlockSystem(sp.csr_array(k0 + conv), disc.b_div, disc.mean_p)
        sol = solve_saddle(system, rhs, None, lu_cache=disc._saddle_cache)
        du = disc.l2_norm_u(sol.u - guess)
        un = disc.l2_norm_u(sol.u)
        guess = sol.u
        if du <= cfg.picard_tol * max(un, 1e-300):
            break
    conv2 = forms.assemble_convection_b2(FieldCoeffs(disc.vh, guess))
    r = (k0 + conv2) @ guess - disc.b_div.T @ sol.p - rhs
    ku = (k0 + conv2) @ guess
    scale = max(np.abs(rhs).max(), np.abs(ku).max())
    print(f"step {n}: picard {m+1}  |u| {un:.3e}  |p|inf {np.abs(sol.p).max():.3e}  "
          f"res {np.abs(r).max():.3e}  scale {scale:.3e}  rel {np.abs(r).max()/scale:.3e}  "
          f"factors {disc._saddle_cache.factor_count}")
    u_new = FieldCoeffs(disc.vh, guess, time=st.t + dt)
    p_new = FieldCoeffs(disc.mh, sol.p, time=st.t + dt)
    c_new = stepper.step_c(st, u_new, disc)
    rho_new = stepper.step_rho(st, u_new, c_new, disc)
    st = stepper.State(rho_new, c_new, u_new, p_new, st.m0, st.t + dt, st.n + 1)
