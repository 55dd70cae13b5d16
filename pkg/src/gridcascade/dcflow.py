"""Linearized power-flow solves, Laplacian machinery and DC OPF dispatch.

Laplacian systems are solved by a dense factorization with one grounded bus
per connected component (row/column deletion), never a pseudoinverse; the
grounded bus is the lowest-indexed bus of its component, so results are
deterministic and reference-pin invariant up to the stated tolerances.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import qpsolver
from .errors import Infeasible, Singular, Unbalanced
from .netmodel import Network, _components, incidence_matrix, susceptance_vector


@dataclass(frozen=True)
class FlowSolution:
    """Angles (one reference per component pinned to 0) and per-line flows."""

    theta: dict[int, float]
    flows: dict[int, float]


@dataclass(frozen=True)
class DispatchPoint:
    """A DC OPF dispatch: per-bus injections, flows, cost, and solve duals.

    `duals` carries the balance duals (nodal prices) plus the generator and
    flow bound multipliers, enough for an external KKT audit.
    """

    injections: dict[int, float]
    flows: dict[int, float]
    cost: float
    duals: dict[str, dict[int, float]]


def connected_components(net: Network) -> tuple[tuple[int, ...], ...]:
    """Components over in-service lines; deterministic bus-order listing."""
    return tuple(_components(net))


def _as_dense(net: Network, b) -> np.ndarray:
    if isinstance(b, np.ndarray):
        if b.shape != (net.n,):
            raise ValueError(f"expected shape ({net.n},), got {b.shape}")
        return b.astype(float)
    out = np.zeros(net.n)
    for bus_id, val in dict(b).items():
        out[net.bus_index[bus_id]] = float(val)
    return out


def laplacian_solve(net: Network, b, tol: float = 1e-8) -> dict[int, float]:
    """Solve (C B C')theta = b with one grounded bus per component.

    `b` may be a dense array in bus order or a mapping bus id -> value. The
    per-component sums of b must vanish within ``tol`` times the problem
    scale, otherwise :class:`Unbalanced` is raised. The grounded bus of each
    component gets theta = 0.
    """
    b_arr = _as_dense(net, b)
    scale = max(1.0, float(np.abs(b_arr).sum()))
    comps = connected_components(net)
    for comp in comps:
        s = sum(b_arr[net.bus_index[j]] for j in comp)
        if abs(s) > tol * scale:
            raise Unbalanced(
                f"component containing bus {comp[0]}: sum(b) = {s:.3e} != 0"
            )

    C = incidence_matrix(net)
    B = susceptance_vector(net)
    L = (C * B) @ C.T

    theta = np.zeros(net.n)
    for comp in comps:
        idx = np.array([net.bus_index[j] for j in comp])
        if idx.size == 1:
            continue
        keep = idx[1:]  # ground the lowest-indexed bus of the component
        L_red = L[np.ix_(keep, keep)]
        try:
            theta[keep] = np.linalg.solve(L_red, b_arr[keep])
        except np.linalg.LinAlgError as exc:
            raise Singular(f"reduced Laplacian solve failed: {exc}") from exc
    return {bus.id: float(theta[i]) for i, bus in enumerate(net.buses)}


def solve_dc_flow(net: Network, injections) -> FlowSolution:
    """DC power flow: angles from the Laplacian solve, flows f = B C' theta."""
    theta = laplacian_solve(net, injections)
    flows = {
        ln.id: float(ln.susceptance * (theta[ln.from_bus] - theta[ln.to_bus]))
        for ln in net.in_service_lines
    }
    return FlowSolution(theta=theta, flows=flows)


def _cycle_rows(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """(K, Gamma): independent cycle constraints K f = 0 over in-service lines.

    Gamma is the signed {0,+1,-1} cycle-basis matrix from a spanning forest;
    K = Gamma * diag(1/B) expresses that flow/susceptance drops sum to zero
    around each fundamental cycle.
    """
    lines = net.in_service_lines
    col_of = {ln.id: i for i, ln in enumerate(lines)}
    parent: dict[int, tuple[int, int, int] | None] = {}  # bus -> (parent, line, sign)
    depth: dict[int, int] = {}
    chords: list = []
    adj = net.adjacency
    tree_lines: set[int] = set()

    for root_bus in net.buses:
        if root_bus.id in parent:
            continue
        parent[root_bus.id] = None
        depth[root_bus.id] = 0
        queue = deque([root_bus.id])
        while queue:
            u = queue.popleft()
            for v, line_id in adj[u]:
                if v not in parent:
                    ln = net.line(line_id)
                    sign = 1 if (ln.from_bus == u) else -1
                    parent[v] = (u, line_id, sign)
                    depth[v] = depth[u] + 1
                    tree_lines.add(line_id)
                    queue.append(v)

    for ln in lines:
        if ln.id not in tree_lines:
            chords.append(ln)

    # For a tree edge with stored sign s (+1 when oriented parent->child),
    # theta_child - theta_parent = -s * f/B. Telescoping the walks of both
    # chord endpoints to their common ancestor gives, for chord a->b,
    #   f_chord/B_chord + sum_{a-walk} s*f/B - sum_{b-walk} s*f/B = 0.
    Gamma = np.zeros((len(chords), len(lines)))
    for row, ln in enumerate(chords):
        Gamma[row, col_of[ln.id]] = 1.0
        u, v = ln.to_bus, ln.from_bus
        while u != v:
            if depth[u] >= depth[v]:
                pu, line_id, sign = parent[u]
                Gamma[row, col_of[line_id]] -= sign
                u = pu
            else:
                pv, line_id, sign = parent[v]
                Gamma[row, col_of[line_id]] += sign
                v = pv
    B = susceptance_vector(net)
    K = Gamma / B
    return K, Gamma


def recover_angles(net: Network, flows: Mapping[int, float]) -> dict[int, float]:
    """Angles consistent with given in-service flows; lowest bus per component at 0."""
    theta: dict[int, float] = {}
    adj = net.adjacency
    for comp_root in net.buses:
        if comp_root.id in theta:
            continue
        theta[comp_root.id] = 0.0
        queue = deque([comp_root.id])
        while queue:
            u = queue.popleft()
            for v, line_id in adj[u]:
                if v in theta:
                    continue
                ln = net.line(line_id)
                drop = flows[line_id] / ln.susceptance
                theta[v] = theta[u] - drop if ln.from_bus == u else theta[u] + drop
                queue.append(v)
    return theta


def dc_opf(
    net: Network,
    demand: Mapping[int, float],
    gen_bounds: Mapping[int, tuple[float, float]],
    gen_costs: Mapping[int, tuple[float, float]] | float = 1.0,
) -> DispatchPoint:
    """Minimum-cost dispatch under DC flow, thermal limits and gen bounds.

    `demand` maps bus id to consumption (nonnegative); `gen_bounds` maps
    generator bus id to an absolute injection interval; `gen_costs` maps a
    generator to (quadratic, linear) coefficients of
    ``cost(p) = 0.5*quad*p^2 + lin*p`` or gives one scalar quadratic
    coefficient for all. A zero quadratic coefficient yields the linear-cost
    variant. Raises :class:`Infeasible` with a phase-1 certificate.
    """
    lines = net.in_service_lines
    gens = sorted(gen_bounds, key=net.bus_index.__getitem__)
    n, m, ng = net.n, len(lines), len(gens)
    gen_pos = {g: i for i, g in enumerate(gens)}

    C = incidence_matrix(net)
    K, _ = _cycle_rows(net)
    nvar = ng + m

    # rows: per-bus balance  g_j - (C f)_j = demand_j ; then cycle rows.
    A = np.zeros((n + K.shape[0], nvar))
    b = np.zeros(n + K.shape[0])
    for g_id, i in gen_pos.items():
        A[net.bus_index[g_id], i] = 1.0
    A[:n, ng:] = -C
    for j, bus in enumerate(net.buses):
        b[j] = float(demand.get(bus.id, 0.0))
    A[n:, ng:] = K

    lb = np.empty(nvar)
    ub = np.empty(nvar)
    for g_id, i in gen_pos.items():
        lo, hi = gen_bounds[g_id]
        lb[i], ub[i] = float(lo), float(hi)
    for j, ln in enumerate(lines):
        lb[ng + j] = -ln.thermal_limit
        ub[ng + j] = ln.thermal_limit

    H = np.zeros((nvar, nvar))
    gvec = np.zeros(nvar)
    for g_id, i in gen_pos.items():
        if isinstance(gen_costs, Mapping):
            quad, lin = gen_costs.get(g_id, (1.0, 0.0))
        else:
            quad, lin = float(gen_costs), 0.0
        H[i, i] = quad
        gvec[i] = lin

    x0 = np.clip(np.zeros(nvar), lb, ub)
    x0[:ng] = np.clip((lb[:ng] + ub[:ng]) / 2.0, lb[:ng], ub[:ng])
    phase1 = qpsolver.solve_box_lsq(A, b, lb, ub, x0=x0)
    feas_tol = 1e-8 * max(1.0, float(np.abs(b).max(initial=0.0)))
    if float(np.abs(phase1.residual).max(initial=0.0)) > feas_tol:
        from .equilibria import phase1_certificate  # deferred: avoids an import cycle

        cert = phase1_certificate(phase1, lb, ub)
        raise Infeasible("DC OPF has no feasible dispatch", certificate=cert)

    result = qpsolver.solve_box_qp(H, gvec, A, b, lb, ub, x0=phase1.x)
    x = result.x
    injections = {}
    for bus in net.buses:
        gen = x[gen_pos[bus.id]] if bus.id in gen_pos else 0.0
        injections[bus.id] = float(gen - demand.get(bus.id, 0.0))
    flows = {ln.id: float(x[ng + j]) for j, ln in enumerate(lines)}
    cost = float(0.5 * x @ H @ x + gvec @ x)
    duals = {
        "balance": {bus.id: float(result.eq_duals[j]) for j, bus in enumerate(net.buses)},
        "gen_lower": {g_id: float(result.lower_duals[i]) for g_id, i in gen_pos.items()},
        "gen_upper": {g_id: float(result.upper_duals[i]) for g_id, i in gen_pos.items()},
        "flow_lower": {ln.id: float(result.lower_duals[ng + j]) for j, ln in enumerate(lines)},
        "flow_upper": {ln.id: float(result.upper_duals[ng + j]) for j, ln in enumerate(lines)},
        "cycle": {j: float(result.eq_duals[n + j]) for j in range(K.shape[0])},
    }
    return DispatchPoint(injections=injections, flows=flows, cost=cost, duals=duals)
