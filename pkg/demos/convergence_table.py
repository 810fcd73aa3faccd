"""Manufactured-solution refinement study, printed as a small EOC table.

Runs the mm2d case at three mesh sizes with the step size tied to the
mesh (dt = h^2/4 for degree 1) and prints the observed orders.  Takes
well under a minute; push tfinal to 1.0 and append level 32 to
reproduce the full-length study the acceptance tests run.
"""

import time

from dgcns import analysis, forms, problems, stepper
from dgcns.mesh import build_rect_mesh

TFINAL = 0.25
DEGREE = 1
LEVELS = [4, 8, 16]

case = problems.get_case("mm2d")
reports = []
for nx in LEVELS:
    h = 1.0 / nx
    dt = h * h / 4.0
    mesh = build_rect_mesh(nx, nx, case.domain)
    cfg = stepper.SchemeConfig(dt=dt, penalty=forms.PenaltyConfig.for_degree(DEGREE))
    disc = stepper.Discretization(case, mesh, DEGREE, cfg)

    state = stepper.initialize(disc)
    tic = time.perf_counter()
    for _ in range(round(TFINAL / dt)):
        state = stepper.advance(state, disc)
    print(f"nx={nx:<3d} {round(TFINAL / dt)} steps in {time.perf_counter() - tic:.1f}s")

    reports.append(analysis.measure_errors(state, disc))

table = analysis.EocTable.from_reports(reports)

print()
print("        " + "".join(f"{c:>12s}" for c in analysis.ERROR_COLUMNS))
for i, nx in enumerate(LEVELS):
    row = "".join(f"{table.errors[c][i]:12.3e}" for c in analysis.ERROR_COLUMNS)
    print(f"nx={nx:<5d}{row}")
for i in range(len(LEVELS) - 1):
    row = "".join(f"{table.rates[c][i]:12.2f}" for c in analysis.ERROR_COLUMNS)
    print(f"rate    {row}")

# degree 1 should show order ~2 in the L2 columns and ~1 in the others;
# the pressure column is the slowest to settle on coarse meshes
