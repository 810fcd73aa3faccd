import time

import numpy as np
import scipy.sparse.linalg as spla

from dgcns.forms import PenaltyConfig, assemble_convection_b2
from dgcns.mesh import build_rect_mesh
from dgcns.problems import get_case
from dgcns.sparse import BlockSystem, bordered_matrix
from dgcns.stepper import Discretization, SchemeConfig, advance, initialize


def neighbor_table(mesh):
    nbr = np.full((mesh.n_elements, 3), -1, dtype=np.int64)
    cnt = np.zeros(mesh.n_elements, dtype=np.int64)
    for a, b in mesh.iedge_elems:
        nbr[a, cnt[a]] = b
        cnt[a] += 1
        nbr[b, cnt[b]] = a
        cnt[b] += 1
    return nbr


def nd_element_order(mesh, leaf=24):
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    nbr = neighbor_table(mesh)
    out = []

    def rec(idx):
        if len(idx) <= leaf:
            out.append(np.sort(idx))
            return
        ext = cen[idx].max(axis=0) - cen[idx].min(axis=0)
        ax = int(ext[1] > ext[0])
        order = idx[np.argsort(cen[idx, ax], kind="stable")]
        half = len(order) // 2
        a, b = order[:half], order[half:]
        inb = np.zeros(mesh.n_elements, dtype=bool)
        inb[b] = True
        sep_mask = inb[nbr[a]].any(axis=1)
        rec(a[~sep_mask])
        rec(b)
        out.append(np.sort(a[sep_mask]))

    rec(np.arange(mesh.n_elements))
    return np.concatenate(out)


def saddle_perm(disc):
    vh, mh = disc.vh, disc.mh
    nvs, nbv, nbp = vh.nscalar, vh.nb, mh.nb
    nu = 2 * nvs
    order = nd_element_order(disc.mesh)
    blocks = []
    for e in order:
        blocks.append(np.arange(e * nbv, (e + 1) * nbv))
        blocks.append(nvs + np.arange(e * nbv, (e + 1) * nbv))
        blocks.append(nu + np.arange(e * nbp, (e + 1) * nbp))
    blocks.append(np.array([nu + mh.total_dofs]))
    return np.concatenate(blocks)


def bench(nx, ny, degree, label, domain=(0, 1, 0, 1)):
    case = get_case("mm2d")
    mesh = build_rect_mesh(nx, ny, domain)
    dt = 1e-4
    cfg = SchemeConfig(dt=dt, penalty=PenaltyConfig.for_degree(degree))
    disc = Discretization(case, mesh, degree, cfg)
    state = initialize(disc)
    k0 = disc.mass_v * (1.0 / dt) + disc.a_u
    K = (k0 + assemble_convection_b2(state.u)).tocsr()
    A = bordered_matrix(BlockSystem(K, disc.b_div, disc.mean_p)).tocsr()
    n = A.shape[0]
    b = np.random.default_rng(0).standard_normal(n)

    perm = saddle_perm(disc)
    assert np.array_equal(np.sort(perm), np.arange(n))
    t0 = time.perf_counter()
    Ap = A[perm][:, perm].tocsc()
    tp = time.perf_counter() - t0
    t0 = time.perf_counter()
    lu = spla.splu(Ap, permc_spec="NATURAL")
    tf = time.perf_counter() - t0
    t0 = time.perf_counter()
    for _ in range(10):
        xp = lu.solve(b[perm])
    ts = (time.perf_counter() - t0) / 10
    x = np.empty(n)
    x[perm] = xp
    res = np.abs(A @ x - b).max() / np.abs(b).max()
    print(f"{label}: n={n} permute {tp*1e3:6.1f} ms  factor {tf*1e3:7.1f} ms  "
          f"solve {ts*1e3:6.2f} ms  fill {(lu.L.nnz+lu.U.nnz)/A.nnz:5.1f}x  res {res:.1e}")


# bench(32, 32, 1, "k=1 nx=32 ")
# bench(16, 16, 2, "k=2 nx=16 ")
# bench(80, 40, 1, "k=1 plume ", domain=(0, 2, 0, 1))
# bench(64, 64, 1, "k=1 nx=64 ")
