import time

import numpy as np
import scipy.sparse.linalg as spla

from dgcns.forms import PenaltyConfig
from dgcns.mesh import build_rect_mesh
from dgcns.problems import get_case
from dgcns.sparse import bordered_matrix, BlockSystem
from dgcns.stepper import Discretization, SchemeConfig, advance, initialize

nx, degree = 32, 1
case = get_case("mm2d")
mesh = build_rect_mesh(nx, nx)
dt = mesh.h ** 2 / 4.0
cfg = SchemeConfig(dt=dt, penalty=PenaltyConfig.for_degree(degree))
disc = Discretization(case, mesh, degree, cfg)
state = initialize(disc)
state = advance(state, disc)

# rebuild the bordered saddle matrix of the last Picard iterate
from dgcns.forms import assemble_convection_b2
k0 = disc.mass_v * (1.0 / dt) + disc.a_u
K = (k0 + assemble_convection_b2(state.u)).tocsr()
A = bordered_matrix(BlockSystem(K, disc.b_div, disc.mean_p)).tocsr()
b = np.random.default_rng(0).standard_normal(A.shape[0])

for spec_name in ("COLAMD", "MMD_AT_PLUS_A", "MMD_ATA", "NATURAL"):
    try:
        t0 = time.perf_counter()
        lu = spla.splu(A.tocsc(), permc_spec=spec_name)
        tf = time.perf_counter() - t0
        t0 = time.perf_counter()
        for _ in range(10):
            x = lu.solve(b)
        ts = (time.perf_counter() - t0) / 10
        fill = lu.L.nnz + lu.U.nnz
        print(f"saddle {spec_name:15s} factor {tf*1e3:7.1f} ms  solve {ts*1e3:6.2f} ms  "
              f"fill {fill/A.nnz:.1f}x  res {np.abs(A @ x - b).max():.1e}")
    except Exception as exc:
        print(f"saddle {spec_name:15s} FAILED {exc}")

# scalar system (c step shape)
from dgcns.forms import assemble_convection_b1
S = (disc.mass_x * (1.0 / dt) + disc.a_c + assemble_convection_b1(state.u, disc.xh)).tocsr()
bs = np.random.default_rng(1).standard_normal(S.shape[0])
for spec_name in ("COLAMD", "MMD_AT_PLUS_A"):
    t0 = time.perf_counter()
    lu = spla.splu(S.tocsc(), permc_spec=spec_name)
    tf = time.perf_counter() - t0
    t0 = time.perf_counter()
    for _ in range(10):
        x = lu.solve(bs)
    ts = (time.perf_counter() - t0) / 10
    print(f"scalar {spec_name:15s} factor {tf*1e3:7.1f} ms  solve {ts*1e3:6.2f} ms  "
          f"fill {(lu.L.nnz+lu.U.nnz)/S.nnz:.1f}x")
