import numpy as np

from dgcns.analysis import error_l2
from dgcns.fespace import DgSpace, FieldCoeffs, volume_exactness
from dgcns.forms import (PenaltyConfig, assemble_div, assemble_load,
                         assemble_sipg_vector)
from dgcns.mesh import build_rect_mesh
from dgcns.problems import mm2d_exact
from dgcns.sparse import BlockSystem, solve_saddle

W = 2 * np.pi


def u_exact(x, y, t):
    return np.stack([mm2d_exact("u1", x, y, t), mm2d_exact("u2", x, y, t)], axis=-1)


def p_exact(x, y, t):
    return mm2d_exact("p", x, y, t)


def stokes_rhs(x, y):
    # -Laplace(u) + grad p at t=0
    lap1 = W**2 * np.sin(W * y) * (2 * np.cos(W * x) - 1)
    lap2 = W**2 * np.sin(W * x) * (1 - 2 * np.cos(W * y))
    px = -W * np.sin(W * x)
    py = W * np.cos(W * y)
    return np.stack([-lap1 + px, -lap2 + py], axis=-1)


for degree in (1, 2):
    print(f"-- degree {degree}")
    pen = PenaltyConfig.for_degree(degree)
    prev = None
    for nx in (4, 8, 16, 32):
        mesh = build_rect_mesh(nx, nx)
        vh = DgSpace(mesh, degree, ncomp=2)
        mh = DgSpace(mesh, degree - 1, exactness=volume_exactness(degree))
        K = assemble_sipg_vector(vh, 1.0, pen.sigma_u)
        B = assemble_div(vh, mh)
        f = assemble_load(lambda x, y: stokes_rhs(x, y), vh)
        stride = mh.nb
        mean = np.zeros(mh.total_dofs)
        mean[::stride] = mesh.det / np.sqrt(2.0)
        sol = solve_saddle(BlockSystem(K, B, mean), f)
        uf = FieldCoeffs(vh, sol.u, time=0.0)
        pf = FieldCoeffs(mh, sol.p, time=0.0)
        eu = error_l2(uf, u_exact)
        ep = error_l2(pf, p_exact)
        em = error_l2(pf, lambda x, y, t: -p_exact(x, y, t))
        line = f"nx={nx:3d}  eu={eu:.3e}  ep={ep:.3e}  ep_neg={em:.3e}"
        if prev is not None:
            line += f"  rate_u={np.log2(prev[0] / eu):.2f} rate_p={np.log2(prev[1] / ep):.2f}"
        prev = (eu, ep)
        print(line)
