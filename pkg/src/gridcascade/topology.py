"""Bridge detection, bridge-block decomposition and balancing-area bookkeeping.

Bridges and blocks are always computed on the in-service multigraph, so
parallel lines are never bridges. Disconnected graphs are handled everywhere
(mid-cascade networks routinely split); the decomposition is then computed per
component and area labels stay stable small integers in first-seen bus order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import dcflow
from .errors import CreatesOverload, DisconnectsLoad, PartitionMismatch, UnknownLine
from .netmodel import BALANCE_RTOL, Network, incidence_matrix


@dataclass(frozen=True)
class Partition:
    """Disjoint bus areas covering the network, with line classification.

    `tie_lines` have endpoints in different areas, `internal_lines` in the
    same one; only in-service lines are classified.
    """

    areas: tuple[frozenset[int], ...]
    tie_lines: frozenset[int]
    internal_lines: frozenset[int]

    @cached_property
    def area_of(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for idx, area in enumerate(self.areas):
            for bus in area:
                out[bus] = idx
        return out

    @property
    def size(self) -> int:
        return len(self.areas)


@dataclass(frozen=True)
class AreaMatrix:
    """0/1 area-membership matrix E (|areas| x n); each column has one 1."""

    matrix: np.ndarray


def build_partition(net: Network, area_of: dict[int, int]) -> Partition:
    """Assemble a :class:`Partition` from explicit bus -> area labels.

    Area indices are renumbered to stable small integers in first-seen bus
    order; raises if labels do not cover every bus.
    """
    missing = [b.id for b in net.buses if b.id not in area_of]
    if missing:
        raise PartitionMismatch(
            f"buses without area label: {missing}", offending_buses=missing
        )
    label_order: dict[int, int] = {}
    for b in net.buses:
        lbl = area_of[b.id]
        if lbl not in label_order:
            label_order[lbl] = len(label_order)
    groups: list[set[int]] = [set() for _ in label_order]
    for b in net.buses:
        groups[label_order[area_of[b.id]]].add(b.id)
    return _classify(net, tuple(frozenset(g) for g in groups))


def _classify(net: Network, areas: tuple[frozenset[int], ...]) -> Partition:
    member: dict[int, int] = {}
    for idx, area in enumerate(areas):
        for bus in area:
            member[bus] = idx
    ties, internal = set(), set()
    for ln in net.in_service_lines:
        if member[ln.from_bus] == member[ln.to_bus]:
            internal.add(ln.id)
        else:
            ties.add(ln.id)
    return Partition(areas, frozenset(ties), frozenset(internal))


def find_bridges(net: Network) -> frozenset[int]:
    """All in-service lines whose removal disconnects their component.

    Iterative DFS low-link on the multigraph; a parallel line is entered by
    its own edge id, so duplicated edges are never reported.
    """
    adj = net.adjacency
    disc: dict[int, int] = {}
    low: dict[int, int] = {}
    bridges: set[int] = set()
    counter = 0

    for root in (b.id for b in net.buses):
        if root in disc:
            continue
        # stack entries: (bus, entering line id, neighbor iterator)
        disc[root] = low[root] = counter
        counter += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            u, in_edge, it = stack[-1]
            advanced = False
            for v, line_id in it:
                if line_id == in_edge:
                    continue
                if v not in disc:
                    disc[v] = low[v] = counter
                    counter += 1
                    stack.append((v, line_id, iter(adj[v])))
                    advanced = True
                    break
                low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[u])
                    if low[u] > disc[parent]:
                        bridges.add(in_edge)
    return frozenset(bridges)


def bridge_block_decomposition(net: Network) -> Partition:
    """The unique partition of buses into 2-edge-connected blocks.

    Union-find over non-bridge in-service lines; the resulting tie lines are
    exactly :func:`find_bridges`. Computed per component on disconnected
    graphs.
    """
    bridges = find_bridges(net)
    parent: dict[int, int] = {b.id: b.id for b in net.buses}

    def find(x: int) -> int:
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
    order: list[int] = []
    for b in net.buses:
        root = find(b.id)
        if root not in groups:
            groups[root] = set()
            order.append(root)
        groups[root].add(b.id)
    areas = tuple(frozenset(groups[r]) for r in order)
    return _classify(net, areas)


def is_tree_partition(net: Network, partition: Partition, diagnose: bool = False) -> bool:
    """True iff `partition` equals the bridge-block decomposition (up to relabeling).

    With ``diagnose=True`` a mismatch raises :class:`PartitionMismatch`
    listing offending buses and the tie/bridge discrepancies.
    """
    ref = bridge_block_decomposition(net)
    same = set(partition.areas) == set(ref.areas)
    if same or not diagnose:
        return same
    ref_of = ref.area_of
    bad_buses = []
    for area in partition.areas:
        labels = {ref_of[b] for b in area}
        if len(labels) > 1:
            bad_buses.extend(sorted(area))
    bad_lines = sorted(partition.tie_lines ^ ref.tie_lines)
    raise PartitionMismatch(
        "partition is not the bridge-block decomposition",
        offending_buses=bad_buses,
        offending_lines=bad_lines,
    )


def area_membership_matrix(partition: Partition, net: Network) -> AreaMatrix:
    """Indicator matrix E with E[l, j] = 1 iff bus j belongs to area l."""
    E = np.zeros((partition.size, net.n))
    for l, area in enumerate(partition.areas):
        for bus in area:
            E[l, net.bus_index[bus]] = 1.0
    return AreaMatrix(E)


def associated_areas(
    net: Network, partition: Partition, failure_set: frozenset[int] | set[int]
) -> frozenset[int]:
    """Indices of areas containing at least one endpoint of a failed line."""
    out: set[int] = set()
    area_of = partition.area_of
    for line_id in failure_set:
        if line_id not in net.line_index:
            raise UnknownLine(f"unknown line id {line_id}")
        ln = net.line(line_id)
        out.add(area_of[ln.from_bus])
        out.add(area_of[ln.to_bus])
    return frozenset(out)


def area_adjacency(net: Network, partition: Partition) -> dict[int, tuple[int, ...]]:
    """Area-level adjacency induced by in-service tie lines."""
    nbrs: dict[int, set[int]] = {i: set() for i in range(partition.size)}
    area_of = partition.area_of
    for line_id in partition.tie_lines:
        ln = net.line(line_id)
        if not ln.in_service:
            continue
        a, b = area_of[ln.from_bus], area_of[ln.to_bus]
        nbrs[a].add(b)
        nbrs[b].add(a)
    return {i: tuple(sorted(v)) for i, v in nbrs.items()}


def switch_off_lines(net: Network, line_ids, force: bool = False) -> Network:
    """Planning-phase switch-off: remove lines and re-anchor the base point.

    Base flows on the surviving lines are recomputed by a DC solve at the base
    injections. Fails with :class:`CreatesOverload` if any recomputed |flow|
    exceeds its limit (suppressed by ``force``), or :class:`DisconnectsLoad`
    if a new island carries a nonzero net base injection (no base-point
    rebalancing is attempted here; re-dispatch belongs to the OPF).
    """
    line_ids = tuple(line_ids)
    for lid in line_ids:
        if lid not in net.line_index or not net.line(lid).in_service:
            raise UnknownLine(f"line {lid} does not exist or is out of service")
    reduced = net.with_lines_out(line_ids)

    injections = reduced.base_injections()
    total_abs = sum(abs(v) for v in injections.values())
    tol = BALANCE_RTOL * total_abs + 1e-12
    for comp in dcflow.connected_components(reduced):
        s = sum(injections[j] for j in comp)
        if abs(s) > tol:
            raise DisconnectsLoad(
                f"switching off {sorted(line_ids)} islands buses {list(comp)} "
                f"with net base injection {s:.3e}"
            )

    solution = dcflow.solve_dc_flow(reduced, injections)
    overloaded = tuple(
        ln.id
        for ln in reduced.in_service_lines
        if abs(solution.flows[ln.id]) > ln.thermal_limit * (1 + 1e-9) + 1e-12
    )
    if overloaded and not force:
        raise CreatesOverload(
            f"switch-off congests lines {sorted(overloaded)}", overloaded
        )

    new_lines = []
    for ln in net.lines:
        if ln.id in set(line_ids):
            new_lines.append(
                type(ln)(
                    id=ln.id, from_bus=ln.from_bus, to_bus=ln.to_bus,
                    susceptance=ln.susceptance, thermal_limit=ln.thermal_limit,
                    base_flow=0.0, in_service=False,
                )
            )
        elif ln.in_service:
            new_lines.append(
                type(ln)(
                    id=ln.id, from_bus=ln.from_bus, to_bus=ln.to_bus,
                    susceptance=ln.susceptance, thermal_limit=ln.thermal_limit,
                    base_flow=solution.flows[ln.id], in_service=True,
                )
            )
        else:
            new_lines.append(ln)
    return Network(net.buses, tuple(new_lines))


def incidence_for(net: Network) -> np.ndarray:
    """Alias kept next to the partition helpers for callers in this module."""
    return incidence_matrix(net)
