"""Projected primal-dual dynamics and the distributed critical-failure detector.

The controller is modeled as explicit-Euler saddle-point dynamics on the
unified-control Lagrangian over the full variable set (theta, omega, d, f):
injection deviations are projected onto their box at every iterate, and
inequality duals use the positive-part projection, exactly the projected
form of the underlying flow. Constraint rows are normalized to unit norm so
one default step size serves across cases; an augmentation term (a quadratic
penalty on the constraint residuals) damps the zero-curvature oscillation
modes that the plain saddle flow leaves undamped. The augmentation only
alters the primal update, so the dual-growth lower bound that powers
infeasibility detection is untouched.

When the underlying program is infeasible, some dual combination grows at
least linearly (rate `epsilon` from the Farkas certificate), so sustained
threshold exceedance of any dual group flags a critical failure during
normal operation.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .equilibria import (
    CompiledProblem,
    Equilibrium,
    EquilibriumDuals,
    EquilibriumProblem,
    compile_problem,
)
from .errors import GridCascadeError, NonFiniteValue

DUAL_GROUPS = ("secondary", "balance", "flow_definition", "ace", "line_upper", "line_lower")


@dataclass(frozen=True)
class DetectorConfig:
    """Step size, budget, thresholds and confirmation window for detection.

    Thresholds should sit well above transient dual peaks; the default
    (1e3 x (initial dual scale + 1)) is deliberately loose. Tighter values
    detect critical failures sooner at the cost of false alarms.
    """

    step: float = 1e-2
    budget: int = 200_000
    window: int = 200
    tol: float = 1e-7  # residuals this small keep (d, f) within ~1e-5 of the optimum
    thresholds: Mapping[str, float] | None = None
    # augmentation weight; capped at compile time so the explicit-Euler step
    # stays inside the stability region of the damped modes
    augmentation: float = 5.0

    def resolved_thresholds(self, initial_dual_scale: float) -> dict[str, float]:
        base = 1e3 * (initial_dual_scale + 1.0)
        out = {g: base for g in DUAL_GROUPS}
        if self.thresholds:
            out.update(self.thresholds)
        return out


@dataclass
class PDSystem:
    """Compiled full-form constraint data with row normalization."""

    cp: CompiledProblem
    nvar: int
    n: int
    m: int
    C_eq: np.ndarray
    h: np.ndarray
    A_in: np.ndarray
    g: np.ndarray
    eq_norms: np.ndarray
    in_norms: np.ndarray
    eq_groups: dict[str, slice]
    in_groups: dict[str, slice]
    cost: np.ndarray            # quadratic coefficient per variable (d block only)
    d_slice: slice
    lb_d: np.ndarray
    ub_d: np.ndarray
    rho: float
    step: float


@dataclass
class PrimalDualState:
    """One iterate: primal variables, duals, counters and running dual maxima."""

    x: np.ndarray
    lam_eq: np.ndarray
    lam_in: np.ndarray
    iteration: int
    step_size: float
    max_duals: dict[str, float]
    system: PDSystem = field(repr=False)

    def dual_group_max(self) -> dict[str, float]:
        out = {}
        for g, sl in self.system.eq_groups.items():
            arr = self.lam_eq[sl]
            out[g] = float(np.abs(arr).max(initial=0.0))
        for g, sl in self.system.in_groups.items():
            arr = self.lam_in[sl]
            out[g] = float(np.abs(arr).max(initial=0.0))
        return out


@dataclass
class DualTrace:
    """Per-iteration residuals and per-group max |dual|; CSV exportable."""

    iterations: np.ndarray
    primal_residual: np.ndarray
    stationarity_residual: np.ndarray
    complementarity: np.ndarray
    group_max: dict[str, np.ndarray]

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["iteration", "primal_residual", "stationarity_residual", "complementarity"]
        cols += [f"max_dual_{g}" for g in DUAL_GROUPS]
        buf.write(",".join(cols) + "\n")
        for i in range(self.iterations.size):
            row = [
                str(int(self.iterations[i])),
                f"{self.primal_residual[i]:.9g}",
                f"{self.stationarity_residual[i]:.9g}",
                f"{self.complementarity[i]:.9g}",
            ]
            row += [f"{self.group_max[g][i]:.9g}" for g in DUAL_GROUPS]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


@dataclass
class PrimalDualOutcome:
    kind: str  # 'converged' | 'critical' | 'budget'
    equilibrium: Equilibrium | None
    trace: DualTrace
    state: PrimalDualState
    detected_group: str | None = None
    detected_iteration: int | None = None


def compile_dynamics(problem: EquilibriumProblem, config: DetectorConfig | None = None) -> PDSystem:
    """Build normalized full-form constraint matrices for the saddle dynamics."""
    if problem.controller != "uc":
        raise GridCascadeError("primal-dual dynamics are defined for UC instances")
    config = config or DetectorConfig()
    cp = compile_problem(problem)
    net = problem.net
    n, m = cp.n, cp.m
    nvar = 3 * n + m
    sl_theta = slice(0, n)
    sl_omega = slice(n, 2 * n)
    sl_d = slice(2 * n, 3 * n)
    sl_f = slice(3 * n, 3 * n + m)

    C = cp.C
    B = cp.B
    n_groups = len(cp.groups)

    n_eq = 2 * n + m + n_groups
    C_eq = np.zeros((n_eq, nvar))
    h = np.zeros(n_eq)
    # secondary: omega = 0
    C_eq[0:n, sl_omega] = np.eye(n)
    # balance: d - C f = -r
    C_eq[n:2 * n, sl_d] = np.eye(n)
    C_eq[n:2 * n, sl_f] = -C
    h[n:2 * n] = -cp.r
    # flow definition: f - B C' theta = 0
    C_eq[2 * n:2 * n + m, sl_f] = np.eye(m)
    C_eq[2 * n:2 * n + m, sl_theta] = -(B[:, None] * C.T)
    # ACE rows per effective group (raw; redundancy is harmless in dynamics)
    for gi in range(n_groups):
        C_eq[2 * n + m + gi, sl_f] = cp.group_rows[gi]

    A_in = np.zeros((2 * m, nvar))
    g = np.zeros(2 * m)
    A_in[0:m, sl_f] = np.eye(m)
    g[0:m] = cp.f_ub
    A_in[m:2 * m, sl_f] = -np.eye(m)
    g[m:2 * m] = -cp.f_lb

    def normalize(Mat, rhs):
        norms = np.linalg.norm(Mat, axis=1)
        norms[norms == 0.0] = 1.0
        return Mat / norms[:, None], rhs / norms, norms

    C_eq, h, eq_norms = normalize(C_eq, h)
    A_in, g, in_norms = normalize(A_in, g)

    cost = np.zeros(nvar)
    cost[sl_d] = cp.cost_diag

    eq_groups = {
        "secondary": slice(0, n),
        "balance": slice(n, 2 * n),
        "flow_definition": slice(2 * n, 2 * n + m),
        "ace": slice(2 * n + m, 2 * n + m + n_groups),
    }
    in_groups = {"line_upper": slice(0, m), "line_lower": slice(m, 2 * m)}

    # cap the penalty so step * (cost + rho * sigma_max^2) stays well inside
    # the explicit-Euler stability region
    stacked = np.vstack([C_eq, A_in]) if A_in.size else C_eq
    sigma2 = float(np.linalg.norm(stacked, 2)) ** 2
    ceiling = 0.5 / (config.step * max(sigma2, 1e-12))
    rho = min(config.augmentation, ceiling)

    return PDSystem(
        cp=cp, nvar=nvar, n=n, m=m, C_eq=C_eq, h=h, A_in=A_in, g=g,
        eq_norms=eq_norms, in_norms=in_norms,
        eq_groups=eq_groups, in_groups=in_groups,
        cost=cost, d_slice=sl_d, lb_d=cp.d_lb, ub_d=cp.d_ub,
        rho=rho, step=config.step,
    )


def init_state(problem: EquilibriumProblem, config: DetectorConfig | None = None) -> PrimalDualState:
    system = compile_dynamics(problem, config)
    x = np.zeros(system.nvar)
    x[system.d_slice] = np.clip(x[system.d_slice], system.lb_d, system.ub_d)
    return PrimalDualState(
        x=x,
        lam_eq=np.zeros(system.C_eq.shape[0]),
        lam_in=np.zeros(system.A_in.shape[0]),
        iteration=0,
        step_size=system.step,
        max_duals={g: 0.0 for g in DUAL_GROUPS},
        system=system,
    )


def _evaluate(system: PDSystem, x, lam_eq, lam_in):
    """Residuals, KKT metrics and the (augmented) primal gradient at one iterate."""
    resid_eq = system.C_eq @ x - system.h
    viol_in = system.A_in @ x - system.g
    viol_pos = np.maximum(viol_in, 0.0)
    grad_plain = system.cost * x + system.C_eq.T @ lam_eq + system.A_in.T @ lam_in
    grad = grad_plain
    if system.rho:
        grad = grad_plain + system.rho * (
            system.C_eq.T @ resid_eq + system.A_in.T @ viol_pos
        )

    x_proj = x - grad_plain
    dsl = system.d_slice
    x_proj[dsl] = np.clip(x_proj[dsl], system.lb_d, system.ub_d)
    r_stat = float(np.abs(x - x_proj).max(initial=0.0))
    r_prim = max(
        float(np.abs(resid_eq).max(initial=0.0)),
        float(viol_pos.max(initial=0.0)),
    )
    slack = np.maximum(-viol_in, 0.0)
    r_comp = float(np.abs(np.minimum(lam_in, slack)).max(initial=0.0))
    return resid_eq, viol_in, grad, (r_prim, r_stat, r_comp)


def primal_dual_step(state: PrimalDualState, problem: EquilibriumProblem | None = None) -> PrimalDualState:
    """One explicit-Euler step of the projected saddle dynamics.

    The injection block of the primal iterate is projected onto its box and
    inequality duals onto the nonnegative orthant, so both invariants hold at
    literally every iterate. Raises :class:`NonFiniteValue` on divergence,
    distinguishing primal from dual blow-up.
    """
    system = state.system
    eta = state.step_size
    resid_eq, viol_in, grad, _ = _evaluate(system, state.x, state.lam_eq, state.lam_in)

    x_new = state.x - eta * grad
    dsl = system.d_slice
    x_new[dsl] = np.clip(x_new[dsl], system.lb_d, system.ub_d)
    lam_eq_new = state.lam_eq + eta * resid_eq
    lam_in_new = np.maximum(0.0, state.lam_in + eta * viol_in)

    if not np.all(np.isfinite(x_new)):
        raise NonFiniteValue("primal iterate diverged to non-finite values", where="primal")
    if not (np.all(np.isfinite(lam_eq_new)) and np.all(np.isfinite(lam_in_new))):
        raise NonFiniteValue("dual iterate diverged to non-finite values", where="dual")

    new = PrimalDualState(
        x=x_new, lam_eq=lam_eq_new, lam_in=lam_in_new,
        iteration=state.iteration + 1, step_size=eta,
        max_duals=dict(state.max_duals), system=system,
    )
    for g, v in new.dual_group_max().items():
        if v > new.max_duals[g]:
            new.max_duals[g] = v
    return new


def detect_critical(group_max_series: Mapping[str, np.ndarray], config: DetectorConfig,
                    thresholds: Mapping[str, float] | None = None) -> bool:
    """Pure predicate: did any dual group stay above its threshold for a full window?"""
    thr = dict(thresholds) if thresholds else config.resolved_thresholds(0.0)
    for g, series in group_max_series.items():
        level = thr.get(g)
        if level is None or len(series) == 0:
            continue
        run = 0
        for v in series:
            run = run + 1 if v > level else 0
            if run >= config.window:
                return True
    return False


def run_primal_dual(problem: EquilibriumProblem, config: DetectorConfig | None = None) -> PrimalDualOutcome:
    """Iterate the dynamics until convergence, sustained dual divergence, or budget.

    Returns ``kind='converged'`` with an assembled equilibrium when all
    residuals fall below ``config.tol``; ``kind='critical'`` when any dual
    group exceeds its threshold for a full confirmation window (the
    infeasibility signature); ``kind='budget'`` otherwise.
    """
    config = config or DetectorConfig()
    state = init_state(problem, config)
    system = state.system
    thresholds = config.resolved_thresholds(0.0)

    its: list[int] = []
    rp: list[float] = []
    rs: list[float] = []
    rc: list[float] = []
    gmax: dict[str, list[float]] = {g: [] for g in DUAL_GROUPS}
    runs: dict[str, int] = {g: 0 for g in DUAL_GROUPS}

    detected: tuple[str, int] | None = None
    converged = False
    eta = config.step
    dsl = system.d_slice

    # reduceat segments must be non-empty and contiguous-in-order; empty
    # groups (no ace rows, no lines) always report 0
    eq_group_names = [
        g for g in DUAL_GROUPS
        if g in system.eq_groups and system.eq_groups[g].stop > system.eq_groups[g].start
    ]
    in_group_names = [
        g for g in DUAL_GROUPS
        if g in system.in_groups and system.in_groups[g].stop > system.in_groups[g].start
    ]
    eq_bounds = np.array([system.eq_groups[g].start for g in eq_group_names], dtype=int)
    in_bounds = np.array([system.in_groups[g].start for g in in_group_names], dtype=int)

    def group_maxes(lam_eq, lam_in):
        out = dict.fromkeys(DUAL_GROUPS, 0.0)
        if eq_bounds.size:
            vals = np.maximum.reduceat(np.abs(lam_eq), eq_bounds)
            for g, v in zip(eq_group_names, vals):
                out[g] = float(v)
        if in_bounds.size and lam_in.size:
            vals = np.maximum.reduceat(np.abs(lam_in), in_bounds)
            for g, v in zip(in_group_names, vals):
                out[g] = float(v)
        return out

    x, lam_eq, lam_in = state.x, state.lam_eq, state.lam_in
    it = 0
    for it_next in range(1, config.budget + 1):
        resid_eq, viol_in, grad, metrics = _evaluate(system, x, lam_eq, lam_in)
        r_prim, r_stat, r_comp = metrics
        if max(r_prim, r_stat, r_comp) < config.tol:
            converged = True
            break
        it = it_next

        x = x - eta * grad
        x[dsl] = np.clip(x[dsl], system.lb_d, system.ub_d)
        lam_eq = lam_eq + eta * resid_eq
        lam_in = np.maximum(0.0, lam_in + eta * viol_in)
        if not np.all(np.isfinite(x)):
            raise NonFiniteValue("primal iterate diverged to non-finite values", where="primal")
        if not (np.all(np.isfinite(lam_eq)) and np.all(np.isfinite(lam_in))):
            raise NonFiniteValue("dual iterate diverged to non-finite values", where="dual")

        its.append(it)
        rp.append(r_prim)
        rs.append(r_stat)
        rc.append(r_comp)
        cur = group_maxes(lam_eq, lam_in)
        for g in DUAL_GROUPS:
            v = cur[g]
            gmax[g].append(v)
            if v > state.max_duals[g]:
                state.max_duals[g] = v
            runs[g] = runs[g] + 1 if v > thresholds[g] else 0
            if runs[g] >= config.window and detected is None:
                detected = (g, it)
        if detected:
            break

    state = PrimalDualState(
        x=x, lam_eq=lam_eq, lam_in=lam_in, iteration=it,
        step_size=eta, max_duals=state.max_duals, system=system,
    )

    trace = DualTrace(
        iterations=np.array(its, dtype=int),
        primal_residual=np.array(rp),
        stationarity_residual=np.array(rs),
        complementarity=np.array(rc),
        group_max={g: np.array(v) for g, v in gmax.items()},
    )

    if detected:
        return PrimalDualOutcome(
            kind="critical", equilibrium=None, trace=trace, state=state,
            detected_group=detected[0], detected_iteration=detected[1],
        )
    if converged:
        return PrimalDualOutcome(
            kind="converged",
            equilibrium=_equilibrium_from_state(problem, state),
            trace=trace,
            state=state,
        )
    return PrimalDualOutcome(kind="budget", equilibrium=None, trace=trace, state=state)


def _equilibrium_from_state(problem: EquilibriumProblem, state: PrimalDualState) -> Equilibrium:
    system = state.system
    cp = system.cp
    n, m = system.n, system.m
    x = state.x
    theta = x[0:n]
    omega = x[n:2 * n]
    d = x[2 * n:3 * n]
    f = x[3 * n:3 * n + m]

    # duals back in raw row units
    lam_eq_raw = state.lam_eq / system.eq_norms
    lam_in_raw = state.lam_in / system.in_norms
    sec = lam_eq_raw[system.eq_groups["secondary"]]
    mu = lam_eq_raw[system.eq_groups["balance"]]
    nu = lam_eq_raw[system.eq_groups["flow_definition"]]
    ace_vals = lam_eq_raw[system.eq_groups["ace"]]
    rho_up = lam_in_raw[system.in_groups["line_upper"]]
    rho_lo = lam_in_raw[system.in_groups["line_lower"]]

    grad_d = cp.cost_diag * d + mu
    bound_tol = 1e-7
    eta_lo = np.where(np.abs(d - cp.d_lb) <= bound_tol, np.maximum(grad_d, 0.0), 0.0)
    eta_up = np.where(np.abs(cp.d_ub - d) <= bound_tol, np.maximum(-grad_d, 0.0), 0.0)

    duals = EquilibriumDuals(
        secondary={cp.bus_ids[j]: float(sec[j]) for j in range(n)},
        balance={cp.bus_ids[j]: float(mu[j]) for j in range(n)},
        flow_definition={cp.line_ids[e]: float(nu[e]) for e in range(m)},
        ace={tuple(gr): float(ace_vals[gi]) for gi, gr in enumerate(cp.groups)},
        line_upper={cp.line_ids[e]: float(rho_up[e]) for e in range(m)},
        line_lower={cp.line_ids[e]: float(rho_lo[e]) for e in range(m)},
        d_upper={cp.bus_ids[j]: float(eta_up[j]) for j in range(n)},
        d_lower={cp.bus_ids[j]: float(eta_lo[j]) for j in range(n)},
    )
    flows = {cp.line_ids[e]: float(f[e]) for e in range(m)}
    obj = float(0.5 * np.sum(cp.cost_diag * d * d))
    resid_eq = system.C_eq @ x - system.h
    residuals = {
        "balance": float(np.abs(resid_eq[system.eq_groups["balance"]]).max(initial=0.0)),
        "ace": float(np.abs(resid_eq[system.eq_groups["ace"]]).max(initial=0.0)),
        "flow_definition": float(np.abs(resid_eq[system.eq_groups["flow_definition"]]).max(initial=0.0)),
    }
    return Equilibrium(
        status="optimal",
        theta={cp.bus_ids[j]: float(theta[j]) for j in range(n)},
        omega={cp.bus_ids[j]: float(omega[j]) for j in range(n)},
        d={cp.bus_ids[j]: float(d[j]) for j in range(n)},
        flows=flows,
        objective=obj,
        duals=duals,
        residuals=residuals,
    )
