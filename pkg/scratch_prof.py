import cProfile
import pstats
import sys

from dgcns.forms import PenaltyConfig
from dgcns.mesh import build_rect_mesh
from dgcns.problems import get_case
from dgcns.stepper import Discretization, SchemeConfig, advance, initialize

nx = int(sys.argv[1]) if len(sys.argv) > 1 else 32
degree = int(sys.argv[2]) if len(sys.argv) > 2 else 1

case = get_case("mm2d")
mesh = build_rect_mesh(nx, nx)
dt = mesh.h ** (degree + 1) / (4.0 if degree == 1 else 1.0)
cfg = SchemeConfig(dt=dt, penalty=PenaltyConfig.for_degree(degree))
disc = Discretization(case, mesh, degree, cfg)
state = initialize(disc)
state = advance(state, disc)  # warm caches

prof = cProfile.Profile()
prof.enable()
for _ in range(15):
    state = advance(state, disc)
prof.disable()
st = pstats.Stats(prof)
st.sort_stats("cumulative").print_stats(28)
print("picard iters last step:", disc.last_picard_iterations)
