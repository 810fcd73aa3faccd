import time

import numpy as np

from dgcns import forms, mesh, problems, stepper
from dgcns.fespace import l2_project, mean_value

# closed-form sources vs frozen oracle constants
s = problems.mm2d_sources(0.25, 0.25, 0.0)
print("f_rho(0.25,0.25,0):", s["rho"], "want -42.47841760435743472148")
print("f_c  (0.25,0.25,0):", s["c"], "want  56.33682495076764123331")
print("f_u  (0.25,0.25,0):", s["u"], "want [35.4784176043574344685, -35.19523229717784799484]")
s2 = problems.mm2d_sources(0.3, 0.7, 0.5)
print("f_rho(0.3,0.7,0.5):", s2["rho"], "want 22.40318606796269723302")
print("f_c  (0.3,0.7,0.5):", s2["c"], "want -22.76720308122335598104")
print("f_u  (0.3,0.7,0.5):", s2["u"], "want [-37.39454205056245463021, -42.4815336578337269569]")

# plume m0 via package quadrature vs closed form
case = problems.plume_case()
msh_p = mesh.build_rect_mesh(80, 40, case.domain)
m0 = stepper.integrate_over_mesh(case.rho0, msh_p) / msh_p.domain_area
print("plume m0:", m0, "want 16.99372570432234148844;  diff", m0 - 16.99372570432234148844)
print("plume rho0(0.2,1):", problems.plume_rho0(0.2, 1.0))

# one full mm2d step, h=1/8 k=1
case = problems.mm2d_case()
msh = mesh.build_rect_mesh(8, 8)
cfg = stepper.SchemeConfig(dt=1e-3, penalty=forms.PenaltyConfig.for_degree(1))
disc = stepper.Discretization(case, msh, 1, cfg)
print("constrain_rho (mm2d, sourced):", disc.constrain_rho())
state = stepper.initialize(disc)
print("m0 mm2d:", state.m0, " (want 3)")
print("mean rho_tilde0:", mean_value(state.rho_tilde))

t0 = time.time()
state = stepper.advance(state, disc)
print("one step: %.3fs  picard iters %d" % (time.time() - t0, disc.last_picard_iterations))

# compare coefficients against projections of the exact solution at t1
t1 = state.t
for name, field, space in (("rho", state.rho(), disc.xh), ("c", state.c, disc.xh),
                           ("u", state.u, disc.vh), ("p", state.p, disc.mh)):
    ex = case.exact[name]
    proj = l2_project(lambda x, y: ex(x, y, t1), space)
    md = disc._mdiag_x if space.ncomp == 1 and space is disc.xh else space and None
    diff = field.values - proj.values
    m = forms.assemble_mass(space).diagonal()
    print(f"{name}: L2 diff vs projection = {np.sqrt(diff @ (m * diff)):.4e}")

# 5 more steps for stability sanity
for _ in range(5):
    state = stepper.advance(state, disc)
print("after 6 steps: t =", state.t, " picard:", disc.last_picard_iterations)
print("saddle factors:", disc._saddle_cache.factor_count,
      "solves:", disc._saddle_cache.solve_count)
print("c factors:", disc._c_cache.factor_count, "/", disc._c_cache.solve_count,
      " rho factors:", disc._rho_cache.factor_count, "/", disc._rho_cache.solve_count)

# checkpoint roundtrip
import tempfile, pathlib
with tempfile.TemporaryDirectory() as td:
    p = pathlib.Path(td) / "s.chk"
    stepper.save_checkpoint(p, state, disc)
    back = stepper.load_checkpoint(p, disc)
    print("checkpoint roundtrip:",
          np.array_equal(back.rho_tilde.values, state.rho_tilde.values),
          np.array_equal(back.u.values, state.u.values),
          back.t == state.t, back.n == state.n, back.m0 == state.m0)

# plume: constrained run smoke (coarse)
case = problems.plume_case()
msh_p = mesh.build_rect_mesh(20, 10, case.domain)
cfgp = stepper.SchemeConfig(dt=1e-4, penalty=forms.PenaltyConfig.for_degree(1))
discp = stepper.Discretization(case, msh_p, 1, cfgp)
print("constrain_rho (plume):", discp.constrain_rho())
st = stepper.initialize(discp)
mass0 = float(discp.mean_x @ st.rho().values)
t0 = time.time()
for _ in range(10):
    st = stepper.advance(st, discp)
mass10 = float(discp.mean_x @ st.rho().values)
print("plume 10 steps: %.2fs  mass dev %.3e  mean rho~ %.3e  picard %d"
      % (time.time() - t0, mass10 - mass0, mean_value(st.rho_tilde),
         discp.last_picard_iterations))
