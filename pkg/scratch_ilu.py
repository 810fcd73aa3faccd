import time

import numpy as np
import scipy.sparse.linalg as spla

from dgcns.forms import PenaltyConfig, assemble_convection_b2
from dgcns.mesh import build_rect_mesh
from dgcns.problems import get_case
from dgcns.sparse import BlockSystem, bordered_matrix
from dgcns.stepper import Discretization, SchemeConfig, advance, initialize

nx, degree = 32, 1
case = get_case("mm2d")
mesh = build_rect_mesh(nx, nx)
dt = mesh.h ** 2 / 4.0
cfg = SchemeConfig(dt=dt, penalty=PenaltyConfig.for_degree(degree))
disc = Discretization(case, mesh, degree, cfg)
state = initialize(disc)
state = advance(state, disc)

k0 = disc.mass_v * (1.0 / dt) + disc.a_u
K = (k0 + assemble_convection_b2(state.u)).tocsr()
A = bordered_matrix(BlockSystem(K, disc.b_div, disc.mean_p)).tocsr()
Ac = A.tocsc()
b = np.random.default_rng(0).standard_normal(A.shape[0])
nrm = np.abs(b).max()

for drop, ff in ((1e-4, 8.0), (1e-5, 10.0), (1e-6, 20.0), (1e-7, 30.0)):
    t0 = time.perf_counter()
    ilu = spla.spilu(Ac, drop_tol=drop, fill_factor=ff, permc_spec="MMD_ATA")
    tf = time.perf_counter() - t0
    # defect correction to 1e-11 relative
    t0 = time.perf_counter()
    x = ilu.solve(b)
    rounds = 0
    for it in range(30):
        r = b - A @ x
        if np.abs(r).max() <= 1e-11 * nrm:
            break
        x += ilu.solve(r)
        rounds += 1
    ts = time.perf_counter() - t0
    fill = (ilu.L.nnz + ilu.U.nnz) / A.nnz
    print(f"drop={drop:.0e} ff={ff:4.0f}: factor {tf*1e3:7.1f} ms  fill {fill:5.1f}x  "
          f"solve+{rounds}rounds {ts*1e3:6.2f} ms  res {np.abs(A@x-b).max()/nrm:.1e}")
