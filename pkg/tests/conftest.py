"""Shared fixtures: reference networks, random tree-partitioned generators,
and the certified-infeasible instance builder."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from gridcascade import dcflow
from gridcascade.netmodel import BusRecord, LineRecord, Network, build_network


def with_base_flows(net: Network) -> Network:
    """Recompute and store base flows from the base injections."""
    sol = dcflow.solve_dc_flow(net, net.base_injections())
    lines = [
        replace(ln, base_flow=sol.flows[ln.id]) if ln.in_service else ln
        for ln in net.lines
    ]
    return build_network(net.buses, lines)


def triangle_net(limits=(2.0, 2.0, 2.0), d_range=2.0) -> Network:
    """3-bus ring, p0 = (1, 0, -1), B = 1 on every line."""
    buses = [
        BusRecord(id=1, kind="generator", base_injection=1.0,
                  d_lower=-d_range, d_upper=d_range, damping=0.1),
        BusRecord(id=2, kind="passive", base_injection=0.0, damping=0.1),
        BusRecord(id=3, kind="load", base_injection=-1.0,
                  d_lower=-d_range, d_upper=d_range, damping=0.1),
    ]
    lines = [
        LineRecord(id=1, from_bus=1, to_bus=2, susceptance=1.0, thermal_limit=limits[0]),
        LineRecord(id=2, from_bus=2, to_bus=3, susceptance=1.0, thermal_limit=limits[1]),
        LineRecord(id=3, from_bus=1, to_bus=3, susceptance=1.0, thermal_limit=limits[2]),
    ]
    return with_base_flows(build_network(buses, lines))


def two_triangle_net(bridge_limit=2.0, d_range=2.0) -> Network:
    """Two 3-bus rings {1,2,3} and {4,5,6} joined by the bridge (3,4)."""
    inj = {1: 0.8, 2: -0.3, 3: -0.2, 4: 0.2, 5: -0.6, 6: 0.1}
    buses = [
        BusRecord(id=i, kind="generator" if inj[i] > 0 else "load",
                  base_injection=inj[i], d_lower=-d_range, d_upper=d_range,
                  damping=0.1)
        for i in range(1, 7)
    ]
    lines = [
        LineRecord(id=1, from_bus=1, to_bus=2, susceptance=2.0, thermal_limit=2.0),
        LineRecord(id=2, from_bus=2, to_bus=3, susceptance=1.0, thermal_limit=2.0),
        LineRecord(id=3, from_bus=1, to_bus=3, susceptance=1.5, thermal_limit=2.0),
        LineRecord(id=4, from_bus=3, to_bus=4, susceptance=1.0, thermal_limit=bridge_limit),
        LineRecord(id=5, from_bus=4, to_bus=5, susceptance=2.0, thermal_limit=2.0),
        LineRecord(id=6, from_bus=5, to_bus=6, susceptance=1.0, thermal_limit=2.0),
        LineRecord(id=7, from_bus=4, to_bus=6, susceptance=1.0, thermal_limit=2.0),
    ]
    return with_base_flows(build_network(buses, lines))


def random_tree_partitioned_net(
    rng: np.random.Generator,
    n_areas: int | None = None,
    buses_total: int | None = None,
    headroom: float = 2.5,
    d_slack: float = 1.0,
    damping: float = 0.2,
) -> Network:
    """Random network whose bridge blocks form a tree of 2-edge-connected rings.

    Areas are rings with random chords, joined by single tie lines in a random
    tree; injections are balanced, limits leave `headroom` times the base flow
    (floored), and control ranges extend `d_slack` beyond each injection.
    """
    n_areas = int(n_areas if n_areas is not None else rng.integers(2, 6))
    buses_total = int(buses_total if buses_total is not None else rng.integers(10, 41))
    buses_total = max(buses_total, 3 * n_areas)

    sizes = np.full(n_areas, 3)
    extra = buses_total - sizes.sum()
    for _ in range(extra):
        sizes[rng.integers(0, n_areas)] += 1

    bus_id = 0
    area_buses: list[list[int]] = []
    edges: list[tuple[int, int]] = []
    for size in sizes:
        ids = list(range(bus_id + 1, bus_id + int(size) + 1))
        bus_id += int(size)
        area_buses.append(ids)
        k = len(ids)
        for i in range(k):
            edges.append((ids[i], ids[(i + 1) % k]))
        for _ in range(int(rng.integers(0, max(1, k // 2) + 1))):
            a, b = rng.choice(k, 2, replace=False)
            if (ids[a], ids[b]) not in edges and (ids[b], ids[a]) not in edges \
                    and abs(a - b) not in (1, k - 1):
                edges.append((ids[int(a)], ids[int(b)]))

    # bridges forming a random tree over the areas
    for child in range(1, n_areas):
        parent = int(rng.integers(0, child))
        u = int(rng.choice(area_buses[parent]))
        v = int(rng.choice(area_buses[child]))
        edges.append((u, v))

    n = bus_id
    inj = rng.normal(0.0, 0.4, n)
    inj -= inj.mean()
    buses = [
        BusRecord(
            id=i + 1,
            kind="generator" if inj[i] > 0 else ("load" if inj[i] < 0 else "passive"),
            base_injection=float(inj[i]),
            d_lower=-(abs(inj[i]) + d_slack),
            d_upper=abs(inj[i]) + d_slack,
            damping=damping,
            cost_weight=float(rng.uniform(0.5, 2.0)),
        )
        for i in range(n)
    ]
    lines = [
        LineRecord(id=k + 1, from_bus=a, to_bus=b,
                   susceptance=float(rng.uniform(1.0, 5.0)), thermal_limit=np.inf)
        for k, (a, b) in enumerate(edges)
    ]
    net = with_base_flows(build_network(buses, lines))
    lines = [
        replace(ln, thermal_limit=max(abs(ln.base_flow) * headroom, 0.4))
        for ln in net.lines
    ]
    return build_network(net.buses, lines)


def critical_instance(
    rng: np.random.Generator,
    per_row_floor: float = 1.0,
    max_tries: int = 80,
):
    """A certified-infeasible UC instance: a heavily loaded bridge outage
    whose islands lack the control range to rebalance.

    The per-island shortfall is at least `per_row_floor` per island bus, so
    the balance violation cannot dilute below that level when spread across
    buses: both the certificate's epsilon and the dual drift rate under the
    saddle dynamics stay far from numerical noise.

    Returns (net, partition, disturbance, reduced_net).
    """
    from gridcascade import topology
    from gridcascade.cascade import line_outage_disturbance

    for _ in range(max_tries):
        n_buses = int(rng.integers(6, 13))
        net = random_tree_partitioned_net(
            rng, n_areas=2, buses_total=n_buses, d_slack=2.0
        )
        part = topology.bridge_block_decomposition(net)
        if not part.tie_lines:
            continue
        bridge = max(part.tie_lines, key=lambda lid: abs(net.line(lid).base_flow))
        f0 = net.line(bridge).base_flow
        if abs(f0) < 0.3:
            continue
        # scale injections so the bridge carries serious power, then pinch
        # the control ranges to a sliver of it
        boost = (per_row_floor * n_buses + 1.0) / abs(f0) * 1.5
        frac = 0.05
        buses = [
            replace(
                b,
                base_injection=b.base_injection * boost,
                d_lower=-frac * (abs(b.base_injection) * boost + 0.05),
                d_upper=frac * (abs(b.base_injection) * boost + 0.05),
            )
            for b in net.buses
        ]
        lines = [
            replace(ln, base_flow=ln.base_flow * boost,
                    thermal_limit=ln.thermal_limit * boost + 1.0)
            for ln in net.lines
        ]
        scaled = build_network(buses, lines)
        r, reduced = line_outage_disturbance(scaled, {bridge})
        ok = False
        for comp in dcflow.connected_components(reduced):
            need = -sum(r.get(j) for j in comp)
            hi = sum(scaled.bus(j).d_upper for j in comp)
            lo = sum(scaled.bus(j).d_lower for j in comp)
            floor = per_row_floor * len(comp)
            if need - hi >= floor or lo - need >= floor:
                ok = True
        if ok:
            return scaled, part, r, reduced
    raise RuntimeError("could not build a critical instance")


@pytest.fixture
def triangle():
    return triangle_net()


@pytest.fixture
def two_triangles():
    return two_triangle_net()
