"""Error norms, convergence rates, and the mass-deviation time series.

CSV column order (stable contract): h, dt, L2_u, H1_u, L2_rho, H1_rho,
L2_c, H1_c, L2_p; rate files carry the same columns prefixed with rate_.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .fespace import FieldCoeffs, scalar_at_qpoints, scalar_on_edges, total_integral

ERROR_COLUMNS = ("L2_u", "H1_u", "L2_rho", "H1_rho", "L2_c", "H1_c", "L2_p")


def _field_time(field: FieldCoeffs, t):
    if t is not None:
        return t
    if field.time is None:
        raise ValueError("no evaluation time: field.time unset and t omitted")
    return field.time


def error_l2(field: FieldCoeffs, exact, t=None) -> float:
    """L2 norm of field minus exact at time t (vector fields summed)."""
    t = _field_time(field, t)
    space = field.space
    x, y = space.qpoints[..., 0], space.qpoints[..., 1]
    ex = np.asarray(exact(x, y, t), dtype=np.float64)
    total = 0.0
    if space.ncomp == 1:
        diff = scalar_at_qpoints(field.values, space) - np.broadcast_to(ex, x.shape)
        total = np.einsum("q,eq,e->", space.rule.weights, diff * diff,
                          space.mesh.det)
    else:
        ex = np.broadcast_to(ex, x.shape + (2,))
        for c in range(2):
            diff = scalar_at_qpoints(field.component(c), space) - ex[..., c]
            total += np.einsum("q,eq,e->", space.rule.weights, diff * diff,
                               space.mesh.det)
    return float(math.sqrt(max(total, 0.0)))


def error_energy(field: FieldCoeffs, exact, exact_grad, t=None, kind="rho",
                 sigma=1.0, include_boundary=None) -> float:
    """Broken H1 seminorm of the error plus penalty-weighted jumps.

    kind picks the edge set: the scalar norms (rho, c) penalize interior
    jumps only, matching the coercive bilinear forms; the velocity norm
    includes boundary edges, where the error trace is the field minus the
    exact trace.  include_boundary overrides the default edge set.
    """
    if kind not in ("rho", "c", "u"):
        raise ValueError(f"unknown norm kind {kind!r}")
    if include_boundary is None:
        include_boundary = kind == "u"
    t = _field_time(field, t)
    space = field.space
    mesh = space.mesh
    x, y = space.qpoints[..., 0], space.qpoints[..., 1]
    exg = np.asarray(exact_grad(x, y, t), dtype=np.float64)
    total = 0.0
    for c in range(space.ncomp):
        _, grads = scalar_at_qpoints(field.component(c), space, grad=True)
        g_exact = exg if space.ncomp == 1 else exg[..., c, :]
        diff = grads - np.broadcast_to(g_exact, grads.shape)
        total += np.einsum("q,eq,e->", space.rule.weights,
                           (diff * diff).sum(axis=-1), mesh.det)

    # sigma/h_e int_e [err]^2 = sigma * sum_q w_q [err]^2 (edge length cancels)
    xi, yi = space.iq_points[..., 0], space.iq_points[..., 1]
    ex_i = np.asarray(exact(xi, yi, t), dtype=np.float64)
    if space.ncomp == 2:
        ex_i = np.broadcast_to(ex_i, xi.shape + (2,))
    if include_boundary:
        xb, yb = space.bq_points[..., 0], space.bq_points[..., 1]
        ex_b = np.asarray(exact(xb, yb, t), dtype=np.float64)
        if space.ncomp == 2:
            ex_b = np.broadcast_to(ex_b, xb.shape + (2,))
    wq = space.edge_rule.weights
    for c in range(space.ncomp):
        vi, vb = scalar_on_edges(field.component(c), space)
        e_i = ex_i if space.ncomp == 1 else ex_i[..., c]
        jump = (vi[:, 0] - e_i) - (vi[:, 1] - e_i)
        total += sigma * np.einsum("q,iq->", wq, jump * jump)
        if include_boundary:
            e_b = ex_b if space.ncomp == 1 else ex_b[..., c]
            bjump = vb - e_b
            total += sigma * np.einsum("q,bq->", wq, bjump * bjump)
    return float(math.sqrt(max(total, 0.0)))


def eoc(pairs):
    """Rates log(e_i/e_{i+1}) / log(h_i/h_{i+1}) between refinements.

    pairs is a sequence of (h, error) with h strictly decreasing.  A rate
    is None when either error vanishes (undefined, not infinite).
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least two (h, error) pairs")
    hs = [p[0] for p in pairs]
    if any(h2 >= h1 for h1, h2 in zip(hs, hs[1:])):
        raise ValueError("mesh sizes must be strictly decreasing")
    rates = []
    for (h1, e1), (h2, e2) in zip(pairs, pairs[1:]):
        if e1 <= 0.0 or e2 <= 0.0:
            rates.append(None)
        else:
            rates.append(math.log(e1 / e2) / math.log(h1 / h2))
    return rates


def mass_series(states):
    """Deviation of the total density integral from its initial value."""
    states = list(states)
    if not states:
        return []
    base = total_integral(states[0].rho())
    return [total_integral(s.rho()) - base for s in states]


@dataclasses.dataclass
class ErrorReport:
    """Final-time errors of one run; field names follow the CSV columns."""

    h: float
    dt: float
    degree: int
    L2_u: float
    H1_u: float
    L2_rho: float
    H1_rho: float
    L2_c: float
    H1_c: float
    L2_p: float

    def __post_init__(self):
        for name in ERROR_COLUMNS:
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")

    def column(self, name: str) -> float:
        return getattr(self, name)


@dataclasses.dataclass
class EocTable:
    """Errors per refinement level and the rates between consecutive levels."""

    hs: list
    dts: list
    errors: dict
    rates: dict

    @classmethod
    def from_reports(cls, reports):
        reports = list(reports)
        hs = [r.h for r in reports]
        dts = [r.dt for r in reports]
        errors = {c: [r.column(c) for r in reports] for c in ERROR_COLUMNS}
        if len(reports) >= 2:
            rates = {c: eoc(list(zip(hs, errors[c]))) for c in ERROR_COLUMNS}
        else:
            rates = {c: [] for c in ERROR_COLUMNS}
        return cls(hs, dts, errors, rates)

    def finest_rate(self, column: str):
        r = self.rates[column]
        return r[-1] if r else None


def measure_errors(state, disc) -> ErrorReport:
    """Evaluate every acceptance error of one final state against the exact bundle."""
    exact = disc.problem.exact
    if exact is None:
        raise ValueError(f"case {disc.problem.name!r} has no exact solution")
    pen = disc.config.penalty
    rho = state.rho()
    return ErrorReport(
        h=disc.mesh.h, dt=disc.config.dt, degree=disc.degree,
        L2_u=error_l2(state.u, exact["u"]),
        H1_u=error_energy(state.u, exact["u"], exact["grad_u"], kind="u",
                          sigma=pen.sigma_u),
        L2_rho=error_l2(rho, exact["rho"]),
        H1_rho=error_energy(rho, exact["rho"], exact["grad_rho"], kind="rho",
                            sigma=pen.sigma_rho),
        L2_c=error_l2(state.c, exact["c"]),
        H1_c=error_energy(state.c, exact["c"], exact["grad_c"], kind="c",
                          sigma=pen.sigma_c),
        L2_p=error_l2(state.p, exact["p"]),
    )


# ---------------------------------------------------------------------------
# CSV emission

def write_errors_csv(path, reports) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("h,dt," + ",".join(ERROR_COLUMNS) + "\n")
        for r in reports:
            cells = [f"{r.h:.12e}", f"{r.dt:.12e}"]
            cells += [f"{r.column(c):.12e}" for c in ERROR_COLUMNS]
            fh.write(",".join(cells) + "\n")


def write_rates_csv(path, table: EocTable) -> None:
    """One row per refinement pair, indexed by the finer level's h and dt."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("h,dt," + ",".join("rate_" + c for c in ERROR_COLUMNS) + "\n")
        npairs = max(len(table.hs) - 1, 0)
        for i in range(npairs):
            cells = [f"{table.hs[i + 1]:.12e}", f"{table.dts[i + 1]:.12e}"]
            for c in ERROR_COLUMNS:
                r = table.rates[c][i]
                cells.append("nan" if r is None else f"{r:.6f}")
            fh.write(",".join(cells) + "\n")


def write_mass_csv(path, times, deviations) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("t,mass_deviation\n")
        for t, d in zip(times, deviations):
            fh.write(f"{t:.12e},{d:.12e}\n")
