"""Closed-loop steady states of the three frequency controllers.

Each controller's post-contingency equilibrium is the optimizer of a convex
program over the surviving network:

* unified control (``uc``): quadratic deviation cost subject to secondary
  regulation, per-bus balance, DC flow consistency, zero area control error,
  line-deviation limits and injection limits;
* ``agc``: the same program without the line limits;
* ``droop``: primary control only; the weighted deviation cost with frequency
  response, balance coupling d and a common per-island frequency, and
  injection limits (no ACE, no line limits).

Problems are solved in a reduced (d, f[, omega]) space where the per-line
flow-definition rows are replaced by spanning-forest cycle constraints;
angles are recovered afterwards and every dual of the full formulation is
reconstructed exactly, so :func:`verify_kkt` checks the original constraint
set. Infeasibility is decided by a phase-1 bounded least-squares violation
minimization whose optimum yields a Farkas-type certificate with the box
separation face carried explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import qpsolver
from .dcflow import _cycle_rows, connected_components, recover_angles
from .errors import GridCascadeError
from .lifting import ExpandLoadBounds, LiftACE, LiftAction
from .netmodel import (
    DisturbanceVector,
    Network,
    deviation_bounds,
    incidence_matrix,
    susceptance_vector,
)
from .topology import Partition

CONTROLLERS = ("uc", "agc", "droop")

# Max allowed phase-1 violation (relative to disturbance scale) for a problem
# to count as feasible.
FEAS_TOL = 1e-8


@dataclass(frozen=True)
class EquilibriumProblem:
    """One controller's optimization instance on a post-contingency network."""

    net: Network
    partition: Partition
    disturbance: Mapping[int, float]
    controller: str
    lifts: tuple[LiftAction, ...] = ()
    participation: Mapping[int, float] | None = None  # droop Z_j override

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise GridCascadeError(f"unknown controller {self.controller!r}")

    def with_lifts(self, lifts: tuple[LiftAction, ...]) -> "EquilibriumProblem":
        return EquilibriumProblem(
            self.net, self.partition, self.disturbance, self.controller,
            lifts=lifts, participation=self.participation,
        )


def make_problem(
    net: Network,
    partition: Partition,
    disturbance,
    controller: str,
    lifts: tuple[LiftAction, ...] = (),
    participation=None,
) -> EquilibriumProblem:
    if isinstance(disturbance, DisturbanceVector):
        disturbance = dict(disturbance.r)
    return EquilibriumProblem(net, partition, dict(disturbance), controller, tuple(lifts), participation)


@dataclass(frozen=True)
class EquilibriumDuals:
    """Multipliers per constraint group of the full formulation.

    `ace` is keyed by the sorted tuple of original area indices forming each
    effective (possibly merged) balancing group; groups whose row is implied
    by the others carry 0.
    """

    secondary: dict[int, float]
    balance: dict[int, float]
    flow_definition: dict[int, float]
    ace: dict[tuple[int, ...], float]
    line_upper: dict[int, float]
    line_lower: dict[int, float]
    d_upper: dict[int, float]
    d_lower: dict[int, float]


@dataclass(frozen=True)
class FarkasCertificate:
    """Infeasibility witness: multipliers plus the box separation face.

    The nonnegative `line_upper`/`line_lower` weights and the free equality
    weights combine the constraint rows into the hyperplane `box_face` (with
    offset `box_offset`), and the combined right-hand side is `-epsilon < 0`.
    `epsilon` lower-bounds the growth rate of the matching dual combination
    under the projected primal-dual dynamics.
    """

    balance: dict[int, float]
    flow_definition: dict[int, float]
    ace: dict[tuple[int, ...], float]
    line_upper: dict[int, float]
    line_lower: dict[int, float]
    box_face: dict[int, float]          # q, supported on d coordinates
    box_offset: float                   # q0 = sup over the d-box of q'd
    epsilon: float
    epsilon_residual: float             # |phase-1 residual|^2, equals epsilon up to clamping


@dataclass(frozen=True)
class PhaseOneCertificate:
    """Generic certificate for non-controller problems (e.g. DC OPF)."""

    multipliers: np.ndarray
    box_face: np.ndarray
    box_offset: float
    epsilon: float


@dataclass(frozen=True)
class Equilibrium:
    """A solved controller state in deviation coordinates."""

    status: str  # 'optimal' | 'infeasible'
    theta: dict[int, float]
    omega: dict[int, float]
    d: dict[int, float]
    flows: dict[int, float]
    objective: float | None
    duals: EquilibriumDuals | None
    residuals: dict[str, float]
    certificate: FarkasCertificate | None = None


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    violation: float
    certificate: FarkasCertificate | None


@dataclass(frozen=True)
class KKTReport:
    passed: bool
    worst: dict[str, float]


# ---------------------------------------------------------------------------
# problem compilation
# ---------------------------------------------------------------------------

@dataclass
class CompiledProblem:
    problem: EquilibriumProblem
    n: int
    m: int
    lines: tuple
    bus_ids: list[int]
    line_ids: list[int]
    C: np.ndarray
    B: np.ndarray
    r: np.ndarray
    d_lb: np.ndarray
    d_ub: np.ndarray
    f_lb: np.ndarray
    f_ub: np.ndarray
    cost_diag: np.ndarray             # quadratic coefficient per d coordinate
    groups: list[tuple[int, ...]]     # effective ACE groups (sorted member areas)
    group_rows: np.ndarray            # |groups| x m; (E_G C) over in-service lines
    kept_groups: list[int]            # indices into `groups` whose row is enforced
    K: np.ndarray
    Gamma: np.ndarray
    comps: tuple[tuple[int, ...], ...]
    comp_of: dict[int, int]
    omega_comps: list[int]            # components carrying a frequency variable (droop)
    omega_weight: np.ndarray          # total damping per omega component
    nvar: int
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    H: np.ndarray
    g: np.ndarray
    n_ace_rows: int


def _effective_groups(partition: Partition, lifts) -> list[tuple[int, ...]]:
    parent = list(range(partition.size))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for action in lifts:
        if isinstance(action, LiftACE):
            ra, rb = find(action.area_a), find(action.area_b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    members: dict[int, list[int]] = {}
    for a in range(partition.size):
        members.setdefault(find(a), []).append(a)
    return [tuple(sorted(v)) for _, v in sorted(members.items())]


def _apply_bound_lifts(net: Network, lifts) -> tuple[np.ndarray, np.ndarray]:
    d_lb = np.array([b.d_lower for b in net.buses])
    d_ub = np.array([b.d_upper for b in net.buses])
    for action in lifts:
        if isinstance(action, ExpandLoadBounds):
            for bus_id, lo, hi in action.bounds:
                i = net.bus_index[bus_id]
                bus = net.buses[i]
                if bus.kind != "load":
                    raise GridCascadeError(
                        f"ExpandLoadBounds targets non-load bus {bus_id}"
                    )
                if lo > d_lb[i] or hi < d_ub[i]:
                    raise GridCascadeError(
                        f"ExpandLoadBounds may only widen bounds (bus {bus_id})"
                    )
                d_lb[i], d_ub[i] = lo, hi
    return d_lb, d_ub


def _select_independent_rows(K: np.ndarray, rows: np.ndarray) -> list[int]:
    """Indices of `rows` that are independent of K's row space and each other."""
    kept: list[int] = []
    if rows.size == 0:
        return kept
    basis: list[np.ndarray] = []
    if K.shape[0]:
        q, _ = np.linalg.qr(K.T)
        rank = int(np.linalg.matrix_rank(K, tol=1e-10))
        basis = [q[:, i] for i in range(rank)]
    for idx in range(rows.shape[0]):
        v = rows[idx].astype(float)
        norm = np.linalg.norm(v)
        if norm <= 1e-12:
            continue
        res = v.copy()
        for u in basis:
            res -= (u @ res) * u
        if np.linalg.norm(res) > 1e-9 * norm:
            kept.append(idx)
            basis.append(res / np.linalg.norm(res))
    return kept


def compile_problem(problem: EquilibriumProblem) -> CompiledProblem:
    net = problem.net
    lines = net.in_service_lines
    n, m = net.n, len(lines)
    bus_ids = [b.id for b in net.buses]
    line_ids = [ln.id for ln in lines]
    C = incidence_matrix(net)
    B = susceptance_vector(net)

    r = np.zeros(n)
    for bus_id, val in dict(problem.disturbance).items():
        r[net.bus_index[bus_id]] = float(val)

    d_lb, d_ub = _apply_bound_lifts(net, problem.lifts)

    if problem.controller == "uc":
        dev = deviation_bounds(net)
        f_lb = np.array([dev[ln.id][0] for ln in lines])
        f_ub = np.array([dev[ln.id][1] for ln in lines])
    else:
        f_lb = np.full(m, -math.inf)
        f_ub = np.full(m, math.inf)

    K, Gamma = _cycle_rows(net)
    comps = connected_components(net)
    comp_of = {}
    for ci, comp in enumerate(comps):
        for bus in comp:
            comp_of[bus] = ci

    # cost coefficients
    alpha = np.array([b.cost_weight for b in net.buses])
    if problem.controller == "droop":
        Z = np.zeros(n)
        for i, b in enumerate(net.buses):
            default = 1.0 / b.cost_weight if (b.d_lower < 0 or b.d_upper > 0) else 0.0
            Z[i] = float(problem.participation.get(b.id, default)) if problem.participation else default
        cost_diag = np.empty(n)
        for i in range(n):
            if Z[i] > 0:
                cost_diag[i] = 1.0 / Z[i]
            else:
                cost_diag[i] = 1.0  # coordinate pinned below; coefficient inert
                d_lb[i] = 0.0
                d_ub[i] = 0.0
    else:
        cost_diag = alpha.copy()

    # ACE groups (merged by lifts) and their independent-row selection
    if problem.controller in ("uc", "agc"):
        groups = _effective_groups(problem.partition, problem.lifts)
        group_rows = np.zeros((len(groups), m))
        for gi, group in enumerate(groups):
            in_group = set().union(*(problem.partition.areas[a] for a in group))
            for e, ln in enumerate(lines):
                group_rows[gi, e] = (ln.from_bus in in_group) - (ln.to_bus in in_group)
        kept = _select_independent_rows(K, group_rows)
    else:
        groups, group_rows, kept = [], np.zeros((0, m)), []

    # droop frequency variables: one per component with positive total damping
    D = np.array([b.damping for b in net.buses])
    omega_comps: list[int] = []
    omega_weight_list: list[float] = []
    if problem.controller == "droop":
        for ci, comp in enumerate(comps):
            w = float(sum(D[net.bus_index[j]] for j in comp))
            if w > 0.0:
                omega_comps.append(ci)
                omega_weight_list.append(w)
    omega_weight = np.array(omega_weight_list)
    omega_pos = {ci: k for k, ci in enumerate(omega_comps)}

    nvar = n + m + len(omega_comps)
    n_ace = len(kept)
    n_cyc = K.shape[0]
    A_eq = np.zeros((n + n_ace + n_cyc, nvar))
    b_eq = np.zeros(n + n_ace + n_cyc)

    # balance rows: d - C f [- D omega] = -r
    A_eq[:n, :n] = np.eye(n)
    A_eq[:n, n:n + m] = -C
    if omega_comps:
        for i, b in enumerate(net.buses):
            ci = comp_of[b.id]
            if ci in omega_pos and D[i] > 0:
                A_eq[i, n + m + omega_pos[ci]] = -D[i]
    b_eq[:n] = -r
    for row, gi in enumerate(kept):
        A_eq[n + row, n:n + m] = group_rows[gi]
    if n_cyc:
        A_eq[n + n_ace:, n:n + m] = K

    lb = np.concatenate([d_lb, f_lb, np.full(len(omega_comps), -math.inf)])
    ub = np.concatenate([d_ub, f_ub, np.full(len(omega_comps), math.inf)])

    H = np.zeros((nvar, nvar))
    H[:n, :n] = np.diag(cost_diag)
    for k, ci in enumerate(omega_comps):
        H[n + m + k, n + m + k] = omega_weight[k]
    g = np.zeros(nvar)

    return CompiledProblem(
        problem=problem, n=n, m=m, lines=lines, bus_ids=bus_ids, line_ids=line_ids,
        C=C, B=B, r=r, d_lb=d_lb, d_ub=d_ub, f_lb=f_lb, f_ub=f_ub,
        cost_diag=cost_diag, groups=groups, group_rows=group_rows,
        kept_groups=kept, K=K, Gamma=Gamma, comps=comps, comp_of=comp_of,
        omega_comps=omega_comps, omega_weight=omega_weight, nvar=nvar,
        A_eq=A_eq, b_eq=b_eq, lb=lb, ub=ub, H=H, g=g, n_ace_rows=n_ace,
    )


# ---------------------------------------------------------------------------
# phase 1: feasibility and certificates
# ---------------------------------------------------------------------------

def _phase1(cp: CompiledProblem) -> qpsolver.LSQResult:
    x0 = np.zeros(cp.nvar)
    np.clip(x0, cp.lb, cp.ub, out=x0)
    return qpsolver.solve_box_lsq(cp.A_eq, cp.b_eq, cp.lb, cp.ub, x0=x0)


def _feas_scale(cp: CompiledProblem) -> float:
    return max(1.0, float(np.abs(cp.r).max(initial=0.0)))


def _certificate(cp: CompiledProblem, p1: qpsolver.LSQResult) -> FarkasCertificate:
    n, m = cp.n, cp.m
    s = p1.residual
    mu = s[:n]
    xi = s[n:n + cp.n_ace_rows]
    cyc = s[n + cp.n_ace_rows:]
    grad = p1.gradient
    G_d = grad[:n]
    G_f = grad[n:n + m]

    clip = 1e-9 * max(1.0, float(np.abs(grad).max(initial=0.0)))

    nu = (cp.Gamma.T @ cyc) / cp.B if m else np.zeros(0)

    w_up = np.where(-G_f > clip, -G_f, 0.0)
    w_lo = np.where(G_f > clip, G_f, 0.0)
    if cp.problem.controller != "uc":
        # no line-limit rows exist; the f-gradient is ~0 at the optimum
        w_up = np.zeros(m)
        w_lo = np.zeros(m)

    q = np.where(np.abs(G_d) > clip, -G_d, 0.0)
    q0 = 0.0
    for j in range(n):
        if q[j] > 0:
            q0 += q[j] * cp.d_ub[j]
        elif q[j] < 0:
            q0 += q[j] * cp.d_lb[j]

    # epsilon = -(g'w1 + h'w2 + q0); h is -r on balance rows, 0 elsewhere
    gw = 0.0
    for e in range(m):
        if w_up[e] > 0:
            gw += w_up[e] * cp.f_ub[e]
        if w_lo[e] > 0:
            gw += w_lo[e] * (-cp.f_lb[e])
    hw = float(-(cp.r @ mu))
    epsilon = -(gw + hw + q0)

    ace = {tuple(g): 0.0 for g in cp.groups}
    for row, gi in enumerate(cp.kept_groups):
        ace[tuple(cp.groups[gi])] = float(xi[row])

    return FarkasCertificate(
        balance={cp.bus_ids[j]: float(mu[j]) for j in range(n)},
        flow_definition={cp.line_ids[e]: float(nu[e]) for e in range(m)},
        ace=ace,
        line_upper={cp.line_ids[e]: float(w_up[e]) for e in range(m)},
        line_lower={cp.line_ids[e]: float(w_lo[e]) for e in range(m)},
        box_face={cp.bus_ids[j]: float(q[j]) for j in range(n)},
        box_offset=float(q0),
        epsilon=float(epsilon),
        epsilon_residual=float(s @ s),
    )


def phase1_certificate(p1: qpsolver.LSQResult, lb: np.ndarray, ub: np.ndarray) -> PhaseOneCertificate:
    """Generic certificate from any bounded least-squares phase-1 optimum."""
    grad = p1.gradient
    clip = 1e-9 * max(1.0, float(np.abs(grad).max(initial=0.0)))
    q = np.where(np.abs(grad) > clip, -grad, 0.0)
    q0 = 0.0
    for j in range(q.size):
        if q[j] > 0:
            q0 += q[j] * ub[j]
        elif q[j] < 0:
            q0 += q[j] * lb[j]
    return PhaseOneCertificate(
        multipliers=p1.residual.copy(),
        box_face=q,
        box_offset=float(q0),
        epsilon=float(p1.residual @ p1.residual),
    )


def check_feasibility(problem: EquilibriumProblem) -> FeasibilityResult:
    """Exact (to tolerance) feasibility verdict with certificate on failure.

    Minimizes the constraint violation over the injection/flow boxes; a zero
    optimum means feasible, a positive one yields the Farkas certificate.
    """
    cp = compile_problem(problem)
    p1 = _phase1(cp)
    viol = float(np.abs(p1.residual).max(initial=0.0))
    if viol <= FEAS_TOL * _feas_scale(cp):
        return FeasibilityResult(feasible=True, violation=viol, certificate=None)
    return FeasibilityResult(
        feasible=False, violation=viol, certificate=_certificate(cp, p1)
    )


# ---------------------------------------------------------------------------
# equilibrium solves
# ---------------------------------------------------------------------------

def _assemble(cp: CompiledProblem, res: qpsolver.QPResult) -> Equilibrium:
    n, m = cp.n, cp.m
    net = cp.problem.net
    x = res.x
    d = x[:n]
    f = x[n:n + m]

    flows = {cp.line_ids[e]: float(f[e]) for e in range(m)}
    theta = recover_angles(net, flows)

    mu = res.eq_duals[:n]
    xi = res.eq_duals[n:n + cp.n_ace_rows]
    cyc = res.eq_duals[n + cp.n_ace_rows:]
    nu = (cp.Gamma.T @ cyc) / cp.B if m else np.zeros(0)

    omega: dict[int, float] = {}
    if cp.problem.controller == "droop":
        omega_pos = {ci: k for k, ci in enumerate(cp.omega_comps)}
        for j, bus_id in enumerate(cp.bus_ids):
            ci = cp.comp_of[bus_id]
            if ci in omega_pos:
                omega[bus_id] = float(x[n + m + omega_pos[ci]])
            else:
                # zero-damping island: frequency equals the balance dual
                omega[bus_id] = float(mu[j])
    else:
        omega = {bus_id: 0.0 for bus_id in cp.bus_ids}

    ace = {tuple(g): 0.0 for g in cp.groups}
    for row, gi in enumerate(cp.kept_groups):
        ace[tuple(cp.groups[gi])] = float(xi[row])

    is_uc = cp.problem.controller == "uc"
    duals = EquilibriumDuals(
        secondary=(
            {bus_id: 0.0 for bus_id in cp.bus_ids}
            if cp.problem.controller in ("uc", "agc") else {}
        ),
        balance={cp.bus_ids[j]: float(mu[j]) for j in range(n)},
        flow_definition={cp.line_ids[e]: float(nu[e]) for e in range(m)},
        ace=ace,
        line_upper={cp.line_ids[e]: float(res.upper_duals[n + e]) for e in range(m)} if is_uc else {},
        line_lower={cp.line_ids[e]: float(res.lower_duals[n + e]) for e in range(m)} if is_uc else {},
        d_upper={cp.bus_ids[j]: float(res.upper_duals[j]) for j in range(n)},
        d_lower={cp.bus_ids[j]: float(res.lower_duals[j]) for j in range(n)},
    )

    balance_res = float(np.abs(cp.r + d - cp.C @ f
                               - _omega_term(cp, x)).max(initial=0.0))
    ace_res = 0.0
    if cp.n_ace_rows:
        kept_rows = cp.group_rows[cp.kept_groups]
        ace_res = float(np.abs(kept_rows @ f).max(initial=0.0))
    cycle_res = float(np.abs(cp.K @ f).max(initial=0.0)) if cp.K.shape[0] else 0.0

    residuals = {
        "balance": balance_res,
        "ace": ace_res,
        "flow_consistency": cycle_res,
    }

    return Equilibrium(
        status="optimal",
        theta=theta,
        omega=omega,
        d={cp.bus_ids[j]: float(d[j]) for j in range(n)},
        flows=flows,
        objective=float(res.objective),
        duals=duals,
        residuals=residuals,
    )


def _omega_term(cp: CompiledProblem, x: np.ndarray) -> np.ndarray:
    out = np.zeros(cp.n)
    if cp.problem.controller == "droop" and cp.omega_comps:
        omega_pos = {ci: k for k, ci in enumerate(cp.omega_comps)}
        for j, bus in enumerate(cp.problem.net.buses):
            ci = cp.comp_of[bus.id]
            if ci in omega_pos and bus.damping > 0:
                out[j] = bus.damping * x[cp.n + cp.m + omega_pos[ci]]
    return out


def _solve(problem: EquilibriumProblem) -> Equilibrium:
    cp = compile_problem(problem)
    p1 = _phase1(cp)
    viol = float(np.abs(p1.residual).max(initial=0.0))
    if viol > FEAS_TOL * _feas_scale(cp):
        return Equilibrium(
            status="infeasible",
            theta={}, omega={}, d={}, flows={},
            objective=None, duals=None,
            residuals={"phase1_violation": viol},
            certificate=_certificate(cp, p1),
        )
    res = qpsolver.solve_box_qp(
        cp.H, cp.g, cp.A_eq, cp.b_eq, cp.lb, cp.ub, x0=p1.x
    )
    return _assemble(cp, res)


def uc_equilibrium(problem: EquilibriumProblem) -> Equilibrium:
    """Unified-control equilibrium; status 'infeasible' flags a critical failure."""
    if problem.controller != "uc":
        raise GridCascadeError("problem.controller must be 'uc'")
    return _solve(problem)


def agc_equilibrium(problem: EquilibriumProblem) -> Equilibrium:
    """AGC equilibrium: the unified-control program without line limits."""
    if problem.controller != "agc":
        raise GridCascadeError("problem.controller must be 'agc'")
    return _solve(problem)


def droop_equilibrium(problem: EquilibriumProblem) -> Equilibrium:
    """Primary-control equilibrium; per-island frequency, no ACE, no line limits.

    With inactive injection limits the optimizer satisfies the proportional
    closed form per island: d_j = -Z_j * S / sum(Z + D), omega = S / sum(Z + D)
    with S the island's net disturbance (in the package's injection-deviation
    sign convention d enters the balance with a plus sign, which flips the
    sign of d relative to the subtractive-control formulation).
    """
    if problem.controller != "droop":
        raise GridCascadeError("problem.controller must be 'droop'")
    return _solve(problem)


def solve_equilibrium(problem: EquilibriumProblem) -> Equilibrium:
    """Dispatch on problem.controller."""
    return _solve(problem)


# ---------------------------------------------------------------------------
# KKT verification of the full formulation
# ---------------------------------------------------------------------------

def verify_kkt(problem: EquilibriumProblem, point: Equilibrium, tol: float = 1e-6) -> KKTReport:
    """Check stationarity, feasibility and complementarity of `point`.

    The check is on the full formulation (angles, frequencies, injections and
    flows with their per-group duals), independent of how the point was
    produced. Returns a report with the worst residual per group; never
    raises on failure.
    """
    if point.status != "optimal" or point.duals is None:
        return KKTReport(passed=False, worst={"status": math.inf})
    cp = compile_problem(problem)
    net = problem.net
    n, m = cp.n, cp.m
    du = point.duals

    d = np.array([point.d[b] for b in cp.bus_ids])
    f = np.array([point.flows[l] for l in cp.line_ids])
    theta = np.array([point.theta[b] for b in cp.bus_ids])
    omega = np.array([point.omega[b] for b in cp.bus_ids])

    mu = np.array([du.balance[b] for b in cp.bus_ids])
    nu = np.array([du.flow_definition[l] for l in cp.line_ids])
    eta_lo = np.array([du.d_lower[b] for b in cp.bus_ids])
    eta_up = np.array([du.d_upper[b] for b in cp.bus_ids])
    if cp.problem.controller == "uc":
        rho_lo = np.array([du.line_lower[l] for l in cp.line_ids])
        rho_up = np.array([du.line_upper[l] for l in cp.line_ids])
    else:
        rho_lo = np.zeros(m)
        rho_up = np.zeros(m)

    worst: dict[str, float] = {}

    # stationarity
    ace_term = np.zeros(m)
    for group, val in du.ace.items():
        gi = cp.groups.index(tuple(group)) if cp.groups else None
        if gi is not None:
            ace_term += val * cp.group_rows[gi]
    D = np.array([b.damping for b in net.buses])
    stat_d = cp.cost_diag * d + mu - eta_lo + eta_up
    stat_f = -cp.C.T @ mu + nu + ace_term + (rho_up - rho_lo)
    stat_theta = -cp.C @ (cp.B * nu)
    if problem.controller == "droop":
        stat_omega = D * omega - D * mu
    else:
        stat_omega = np.array([du.secondary.get(b, 0.0) for b in cp.bus_ids])
    worst["stationarity_d"] = float(np.abs(stat_d).max(initial=0.0))
    worst["stationarity_f"] = float(np.abs(stat_f).max(initial=0.0))
    worst["stationarity_theta"] = float(np.abs(stat_theta).max(initial=0.0))
    worst["stationarity_omega"] = float(np.abs(stat_omega).max(initial=0.0))

    # primal feasibility
    omega_term = D * omega if problem.controller == "droop" else np.zeros(n)
    worst["balance"] = float(np.abs(cp.r + d - cp.C @ f - omega_term).max(initial=0.0))
    Bvec = cp.B
    dtheta = np.array([theta[net.bus_index[ln.from_bus]] - theta[net.bus_index[ln.to_bus]]
                       for ln in cp.lines])
    worst["flow_definition"] = float(np.abs(f - Bvec * dtheta).max(initial=0.0))
    if problem.controller in ("uc", "agc"):
        worst["secondary"] = float(np.abs(omega).max(initial=0.0))
        ace_res = 0.0
        for gi in cp.kept_groups:
            ace_res = max(ace_res, abs(float(cp.group_rows[gi] @ f)))
        worst["ace"] = ace_res
    box_viol = max(
        float(np.maximum(cp.d_lb - d, 0.0).max(initial=0.0)),
        float(np.maximum(d - cp.d_ub, 0.0).max(initial=0.0)),
    )
    if problem.controller == "uc":
        box_viol = max(
            box_viol,
            float(np.maximum(cp.f_lb - f, 0.0).max(initial=0.0)),
            float(np.maximum(f - cp.f_ub, 0.0).max(initial=0.0)),
        )
    worst["bounds"] = box_viol

    # dual feasibility and complementary slackness
    worst["dual_sign"] = float(max(
        np.maximum(-eta_lo, 0.0).max(initial=0.0),
        np.maximum(-eta_up, 0.0).max(initial=0.0),
        np.maximum(-rho_lo, 0.0).max(initial=0.0),
        np.maximum(-rho_up, 0.0).max(initial=0.0),
    ))
    comp = max(
        float(np.abs(eta_lo * (d - cp.d_lb)).max(initial=0.0)),
        float(np.abs(eta_up * (cp.d_ub - d)).max(initial=0.0)),
    )
    if problem.controller == "uc":
        comp = max(
            comp,
            float(np.abs(rho_lo * (f - cp.f_lb)).max(initial=0.0)),
            float(np.abs(rho_up * (cp.f_ub - f)).max(initial=0.0)),
        )
    worst["complementarity"] = comp

    passed = all(v <= tol for v in worst.values())
    return KKTReport(passed=passed, worst=worst)
