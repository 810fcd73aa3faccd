import time

import numpy as np

from dgcns.analysis import EocTable, error_energy, error_l2, measure_errors
from dgcns.forms import PenaltyConfig
from dgcns.mesh import build_rect_mesh
from dgcns.problems import get_case
from dgcns.stepper import Discretization, SchemeConfig, advance, initialize


def run(nx, degree, tfinal, dt):
    case = get_case("mm2d")
    mesh = build_rect_mesh(nx, nx)
    cfg = SchemeConfig(dt=dt, penalty=PenaltyConfig.for_degree(degree))
    disc = Discretization(case, mesh, degree, cfg)
    state = initialize(disc)
    nsteps = int(round(tfinal / dt))
    t0 = time.perf_counter()
    for _ in range(nsteps):
        state = advance(state, disc)
    el = time.perf_counter() - t0
    return state, disc, el, nsteps


# mini study: T=0.1, k=1
reports = []
for nx in (4, 8, 16):
    mesh_h = np.sqrt(2.0) / nx
    dt = mesh_h**2 / 4.0
    nsteps = int(round(0.1 / dt))
    dt = 0.1 / nsteps
    state, disc, el, n = run(nx, 1, 0.1, dt)
    rep = measure_errors(state, disc)
    reports.append(rep)
    print(f"nx={nx:3d} steps={n:5d} {el:6.2f}s  L2_u={rep.L2_u:.3e} L2_rho={rep.L2_rho:.3e} "
          f"L2_c={rep.L2_c:.3e} L2_p={rep.L2_p:.3e} H1_u={rep.H1_u:.3e}")

table = EocTable.from_reports(reports)
for col in ("L2_u", "L2_rho", "L2_c", "L2_p", "H1_u", "H1_rho", "H1_c"):
    print(f"{col:7s} rates:", ["%.2f" % r for r in table.rates[col]])

# timing probe at acceptance scale, k=1 nx=32
mesh_h = np.sqrt(2.0) / 32
dt = mesh_h**2 / 4.0
state, disc, el, n = run(32, 1, 10 * dt, dt)
print(f"\nnx=32 k=1: {el / n:.3f} s/step -> T=1 needs {int(round(1.0 / dt))} steps "
      f"~ {el / n * 1.0 / dt / 60:.1f} min")

# timing probe k=2 nx=16
mesh_h = np.sqrt(2.0) / 16
dt = mesh_h**3
state, disc, el, n = run(16, 2, 10 * dt, dt)
print(f"nx=16 k=2: {el / n:.3f} s/step -> T=1 needs {int(round(1.0 / dt))} steps "
      f"~ {el / n * 1.0 / dt / 60:.1f} min")
