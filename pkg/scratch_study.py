"""Scratch: run the real convergence studies and print EOC tables."""
import sys
import time

import numpy as np

from dgcns import analysis, forms, problems, stepper
from dgcns.mesh import build_rect_mesh


def run_level(nx, degree, dt, tfinal=1.0):
    prob = problems.get_case("mm2d")
    mesh = build_rect_mesh(nx, nx, prob.domain)
    cfg = stepper.SchemeConfig(dt=dt, penalty=forms.PenaltyConfig.for_degree(degree))
    disc = stepper.Discretization(prob, mesh, degree, cfg)
    st = stepper.initialize(disc)
    nsteps = round(tfinal / dt)
    assert abs(nsteps * dt - tfinal) < 1e-12
    t0 = time.perf_counter()
    for _ in range(nsteps):
        st = stepper.advance(st, disc)
    wall = time.perf_counter() - t0
    rep = analysis.measure_errors(st, disc)
    return rep, wall


def show(tag, reports, walls):
    table = analysis.EocTable.from_reports(reports)
    cols = analysis.ERROR_COLUMNS
    print(f"== {tag} ==")
    print("nx    dt          wall(s)  " + "  ".join(f"{c:>10s}" for c in cols))
    for i, r in enumerate(reports):
        row = "  ".join(f"{r.column(c):10.4e}" for c in cols)
        print(f"{round(1/r.h):<4d}  {r.dt:.4e}  {walls[i]:7.1f}  {row}")
    for i in range(len(reports) - 1):
        row = "  ".join(f"{table.rates[c][i]:10.3f}" for c in cols)
        print(f"rate pair {i}:                     {row}")
    print(f"total wall {sum(walls):.1f}s", flush=True)


def main():
    which = sys.argv[1]
    if which == "k1":
        reports, walls = [], []
        for nx in (4, 8, 16, 32):
            dt = 1.0 / (4 * nx * nx)
            rep, wall = run_level(nx, 1, dt)
            reports.append(rep)
            walls.append(wall)
            print(f"level nx={nx} done in {wall:.1f}s", flush=True)
        show("mm2d k=1 spatial, dt=h^2/4, T=1", reports, walls)
    elif which == "k2":
        reports, walls = [], []
        for nx in (4, 8, 16):
            dt = 1.0 / nx ** 3
            rep, wall = run_level(nx, 2, dt)
            reports.append(rep)
            walls.append(wall)
            print(f"level nx={nx} done in {wall:.1f}s", flush=True)
        show("mm2d k=2 spatial, dt=h^3, T=1", reports, walls)
        # temporal study rides along; rates vs dt not h
        reports, walls = [], []
        for i in range(3, 8):
            dt = 2.0 ** (-i)
            nx = round((0.5 / dt) ** 0.5)
            rep, wall = run_level(nx, 1, dt)
            reports.append(rep)
            walls.append(wall)
            print(f"temporal dt=2^-{i} nx={nx} done in {wall:.1f}s", flush=True)
        cols = analysis.ERROR_COLUMNS
        print("== mm2d k=1 temporal, nx=round((0.5/dt)^(1/2)), T=1 ==")
        print("nx    dt          " + "  ".join(f"{c:>10s}" for c in cols))
        for r in reports:
            row = "  ".join(f"{r.column(c):10.4e}" for c in cols)
            print(f"{round(1/r.h):<4d}  {r.dt:.4e}  {row}")
        for i in range(len(reports) - 1):
            rates = []
            for c in cols:
                e1, e2 = reports[i].column(c), reports[i + 1].column(c)
                rates.append(np.log(e1 / e2) / np.log(2.0))
            print(f"rate pair {i} (vs dt):         "
                  + "  ".join(f"{r:10.3f}" for r in rates))
        print("temporal done", flush=True)


if __name__ == "__main__":
    main()
