"""Independent reference implementations used as test oracles.

Everything here recomputes from first principles through different code
paths than the package: brute-force graph checks, a generic dense convex
solver (cvxpy) for equilibria, and a from-scratch staged cascade. Oracles
must never call the implementation they check.
"""

from __future__ import annotations

import itertools

import cvxpy as cp
import numpy as np

from gridcascade.lifting import ExpandLoadBounds, LiftACE
from gridcascade.netmodel import Network

SOLVER = cp.CLARABEL


def brute_force_bridges(net: Network) -> frozenset[int]:
    """A line is a bridge iff removing it increases the component count."""

    def count_components(skip: int | None) -> int:
        adj: dict[int, set[int]] = {b.id: set() for b in net.buses}
        for ln in net.in_service_lines:
            if ln.id == skip:
                continue
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        seen: set[int] = set()
        comps = 0
        for b in net.buses:
            if b.id in seen:
                continue
            comps += 1
            stack = [b.id]
            seen.add(b.id)
            while stack:
                u = stack.pop()
                for v in adj[u]:
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
        return comps

    base = count_components(None)
    return frozenset(
        ln.id for ln in net.in_service_lines if count_components(ln.id) > base
    )


def union_find_blocks(net: Network, bridges: frozenset[int]) -> set[frozenset[int]]:
    """2-edge-connected blocks: union over non-bridge in-service lines."""
    parent = {b.id: b.id for b in net.buses}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for ln in net.in_service_lines:
        if ln.id in bridges:
            continue
        ra, rb = find(ln.from_bus), find(ln.to_bus)
        if ra != rb:
            parent[ra] = rb
    groups: dict[int, set[int]] = {}
    for b in net.buses:
        groups.setdefault(find(b.id), set()).add(b.id)
    return {frozenset(v) for v in groups.values()}


def _problem_arrays(problem):
    """Constraint data recomputed independently of equilibria's compiler."""
    net = problem.net
    lines = net.in_service_lines
    n, m = net.n, len(lines)
    bus_pos = {b.id: i for i, b in enumerate(net.buses)}
    C = np.zeros((n, m))
    B = np.zeros(m)
    for e, ln in enumerate(lines):
        C[bus_pos[ln.from_bus], e] = 1.0
        C[bus_pos[ln.to_bus], e] = -1.0
        B[e] = ln.susceptance
    r = np.zeros(n)
    for bus_id, val in dict(problem.disturbance).items():
        r[bus_pos[bus_id]] = val

    d_lb = np.array([b.d_lower for b in net.buses])
    d_ub = np.array([b.d_upper for b in net.buses])
    for action in problem.lifts:
        if isinstance(action, ExpandLoadBounds):
            for bus_id, lo, hi in action.bounds:
                d_lb[bus_pos[bus_id]] = lo
                d_ub[bus_pos[bus_id]] = hi

    # effective area groups under ACE merges
    merged = {i: i for i in range(problem.partition.size)}

    def find(x):
        while merged[x] != x:
            merged[x] = merged[merged[x]]
            x = merged[x]
        return x

    for action in problem.lifts:
        if isinstance(action, LiftACE):
            ra, rb = find(action.area_a), find(action.area_b)
            if ra != rb:
                merged[max(ra, rb)] = min(ra, rb)
    groups: dict[int, set[int]] = {}
    for i in range(problem.partition.size):
        groups.setdefault(find(i), set()).add(i)
    E = np.zeros((len(groups), n))
    for row, (_, areas) in enumerate(sorted(groups.items())):
        for a in areas:
            for bus in problem.partition.areas[a]:
                E[row, bus_pos[bus]] = 1.0

    f_lim_lo = np.array([-ln.thermal_limit - ln.base_flow for ln in lines])
    f_lim_hi = np.array([ln.thermal_limit - ln.base_flow for ln in lines])
    alpha = np.array([b.cost_weight for b in net.buses])
    D = np.array([b.damping for b in net.buses])
    return net, lines, n, m, C, B, r, d_lb, d_ub, E, f_lim_lo, f_lim_hi, alpha, D


def reference_equilibrium(problem, solver=SOLVER):
    """Full-formulation solve by a generic convex solver.

    Returns (status, d, f, omega, objective) with vectors in bus/line order,
    or ('infeasible', None, ...) when the program has no feasible point.
    """
    (net, lines, n, m, C, B, r, d_lb, d_ub, E,
     f_lo, f_hi, alpha, D) = _problem_arrays(problem)

    theta = cp.Variable(n)
    omega = cp.Variable(n)
    d = cp.Variable(n)
    f = cp.Variable(m) if m else None
    flow_term = C @ f if m else np.zeros(n)
    cons = [d >= d_lb, d <= d_ub]

    if problem.controller in ("uc", "agc"):
        cons += [omega == 0, r + d - flow_term == 0]
        if m:
            cons.append(f == cp.multiply(B, C.T @ theta))
            cons.append(E @ (C @ f) == 0)
        if problem.controller == "uc" and m:
            cons += [f >= f_lo, f <= f_hi]
        objective = 0.5 * cp.sum(cp.multiply(alpha, cp.square(d)))
    else:  # droop, subtractive-control form flipped to the package convention
        Z = np.where(d_ub > d_lb, 1.0 / alpha, 0.0)
        if problem.participation:
            bus_pos = {b.id: i for i, b in enumerate(net.buses)}
            for bus_id, z in problem.participation.items():
                Z[bus_pos[bus_id]] = z
        fixed = Z <= 0
        cons.append(r + d - cp.multiply(D, omega) == flow_term)
        if m:
            cons.append(f == cp.multiply(B, C.T @ theta))
        if fixed.any():
            cons.append(d[fixed] == 0)
        zsafe = np.where(Z > 0, Z, 1.0)
        objective = 0.5 * cp.sum(cp.multiply(1.0 / zsafe, cp.square(d))) \
            + 0.5 * cp.sum(cp.multiply(D, cp.square(omega)))

    prob = cp.Problem(cp.Minimize(objective), cons)
    try:
        prob.solve(solver=solver)
    except cp.SolverError:
        prob.solve(solver=cp.SCS)
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        return "infeasible", None, None, None, None
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"reference solver returned {prob.status}")
    f_val = f.value if m else np.zeros(0)
    return "optimal", d.value, f_val, omega.value, float(prob.value)


def reference_feasible(problem) -> bool:
    """Feasibility via the generic solver with a zero objective."""
    (net, lines, n, m, C, B, r, d_lb, d_ub, E,
     f_lo, f_hi, alpha, D) = _problem_arrays(problem)
    if m == 0:
        return bool(((-r >= d_lb - 1e-12) & (-r <= d_ub + 1e-12)).all())
    theta = cp.Variable(n)
    d = cp.Variable(n)
    f = cp.Variable(m)
    cons = [
        d >= d_lb, d <= d_ub,
        r + d - C @ f == 0,
        f == cp.multiply(B, C.T @ theta),
        E @ (C @ f) == 0,
    ]
    if problem.controller == "uc":
        cons += [f >= f_lo, f <= f_hi]
    prob = cp.Problem(cp.Minimize(0), cons)
    prob.solve(solver=SOLVER)
    return prob.status in ("optimal", "optimal_inaccurate")


def grid_feasibility(problem, steps: int = 9) -> bool:
    """Grid-enumeration feasibility for tiny single-area nets.

    One slack bus per component absorbs the exact balance (checked against
    its box); the remaining injections scan their boxes on a grid. A grid
    point is feasible if the implied DC flows meet the limits and every ACE
    row vanishes. Coarse by construction: use on instances with fat margins.
    """
    (net, lines, n, m, C, B, r, d_lb, d_ub, E,
     f_lo, f_hi, alpha, D) = _problem_arrays(problem)

    L = (C * B) @ C.T
    comps = _components_of(net)
    slack = {comp: max(comp, key=lambda j: d_ub[j] - d_lb[j]) for comp in comps}
    slack_set = set(slack.values())
    free = [j for j in range(n) if j not in slack_set]
    axes = [
        np.linspace(d_lb[j], d_ub[j], steps) if d_ub[j] > d_lb[j] else np.array([d_lb[j]])
        for j in free
    ]

    for point in itertools.product(*axes) if free else [()]:
        d = np.zeros(n)
        for j, v in zip(free, point):
            d[j] = v
        ok = True
        for comp in comps:
            s = slack[comp]
            need = -sum(r[j] + d[j] for j in comp if j != s) - r[s]
            if need < d_lb[s] - 1e-12 or need > d_ub[s] + 1e-12:
                ok = False
                break
            d[s] = need
        if not ok:
            continue
        p = r + d
        theta = np.zeros(n)
        solvable = True
        for comp in comps:
            idx = list(comp)
            if len(idx) == 1:
                continue
            keep = idx[1:]
            try:
                theta[keep] = np.linalg.solve(L[np.ix_(keep, keep)], p[keep])
            except np.linalg.LinAlgError:
                solvable = False
                break
        if not solvable:
            continue
        f = B * (C.T @ theta)
        if problem.controller == "uc" and (
            (f < f_lo - 1e-9).any() or (f > f_hi + 1e-9).any()
        ):
            continue
        if E.shape[0] and np.abs(E @ (C @ f)).max(initial=0.0) > 1e-9:
            continue
        return True
    return False


def _components_of(net: Network):
    adj: dict[int, set[int]] = {i: set() for i in range(net.n)}
    pos = {b.id: i for i, b in enumerate(net.buses)}
    for ln in net.in_service_lines:
        adj[pos[ln.from_bus]].add(pos[ln.to_bus])
        adj[pos[ln.to_bus]].add(pos[ln.from_bus])
    seen: set[int] = set()
    comps = []
    for i in range(net.n):
        if i in seen:
            continue
        stack, comp = [i], []
        seen.add(i)
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        comps.append(tuple(sorted(comp)))
    return comps


def brute_force_cascade(net: Network, initial, controller, partition, trip_tol=1e-6):
    """From-scratch staged reference: cvxpy equilibria, explicit trip checks.

    Returns the list of (outage_set, tripped_set) per stage, or the stages
    up to an infeasible one (terminating there like the engine does).
    """
    from gridcascade.equilibria import make_problem

    outages: frozenset[int] = frozenset()
    pending = frozenset(initial)
    stages = []
    for _ in range(net.m + 1):
        outages = outages | pending
        r: dict[int, float] = {}
        for line_id in sorted(outages):
            ln = net.line(line_id)
            r[ln.from_bus] = r.get(ln.from_bus, 0.0) + ln.base_flow
            r[ln.to_bus] = r.get(ln.to_bus, 0.0) - ln.base_flow
        reduced = net.with_lines_out(outages)
        problem = make_problem(reduced, partition, r, controller)
        status, d, f, omega, obj = reference_equilibrium(problem)
        if status == "infeasible":
            stages.append((outages, frozenset()))
            return stages, "infeasible"
        tripped = set()
        for e, ln in enumerate(reduced.in_service_lines):
            if abs(ln.base_flow + f[e]) > ln.thermal_limit + trip_tol:
                tripped.add(ln.id)
        stages.append((outages, frozenset(tripped)))
        if not tripped:
            return stages, "converged"
        pending = frozenset(tripped)
    raise RuntimeError("reference cascade did not terminate")
