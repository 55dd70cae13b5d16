from __future__ import annotations

import itertools

import numpy as np
import pytest

from gridcascade import dcflow
from gridcascade.errors import CreatesOverload, DisconnectsLoad, PartitionMismatch, UnknownLine
from gridcascade.netmodel import BusRecord, LineRecord, build_network
from gridcascade.topology import (
    area_adjacency,
    area_membership_matrix,
    associated_areas,
    bridge_block_decomposition,
    build_partition,
    find_bridges,
    is_tree_partition,
    switch_off_lines,
)

from .conftest import random_tree_partitioned_net, triangle_net, with_base_flows
from .oracles import brute_force_bridges, union_find_blocks


def _net_from_edges(n, edges):
    buses = [BusRecord(id=i, d_lower=-1, d_upper=1) for i in range(1, n + 1)]
    lines = [
        LineRecord(id=k + 1, from_bus=a, to_bus=b, susceptance=1.0)
        for k, (a, b) in enumerate(edges)
    ]
    return build_network(buses, lines)


def test_path_all_bridges():
    net = _net_from_edges(3, [(1, 2), (2, 3)])
    assert find_bridges(net) == {1, 2}


def test_triangle_no_bridges():
    net = _net_from_edges(3, [(1, 2), (2, 3), (1, 3)])
    assert find_bridges(net) == frozenset()


def test_two_triangles_single_bridge(two_triangles):
    assert find_bridges(two_triangles) == {4}
    assert find_bridges(two_triangles) == brute_force_bridges(two_triangles)


def test_parallel_lines_never_bridges():
    net = _net_from_edges(2, [(1, 2), (1, 2)])
    assert find_bridges(net) == frozenset()
    net3 = _net_from_edges(3, [(1, 2), (1, 2), (2, 3)])
    assert find_bridges(net3) == {3}


def test_bridges_exhaustive_small_graphs():
    # all simple graphs on 4 and 5 nodes
    for n in (4, 5):
        pairs = list(itertools.combinations(range(1, n + 1), 2))
        for mask in range(2 ** len(pairs)):
            edges = [p for i, p in enumerate(pairs) if mask >> i & 1]
            net = _net_from_edges(n, edges)
            assert find_bridges(net) == brute_force_bridges(net), edges


from hypothesis import given, settings, strategies as st


@given(
    edges=st.lists(
        st.tuples(st.integers(1, 6), st.integers(1, 6)).filter(lambda e: e[0] != e[1]),
        min_size=1, max_size=12,
    )
)
@settings(max_examples=80, deadline=None)
def test_bridges_match_bruteforce_property(edges):
    net = _net_from_edges(6, edges)
    assert find_bridges(net) == brute_force_bridges(net)


def test_bridges_random_multigraphs():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, 14))
        edges = []
        for _ in range(m):
            a, b = rng.integers(1, n + 1, 2)
            if a != b:
                edges.append((int(a), int(b)))
        if not edges:
            continue
        net = _net_from_edges(n, edges)
        assert find_bridges(net) == brute_force_bridges(net)


def test_decomposition_two_triangles(two_triangles):
    part = bridge_block_decomposition(two_triangles)
    assert set(part.areas) == {frozenset({1, 2, 3}), frozenset({4, 5, 6})}
    assert part.tie_lines == {4}
    assert part.internal_lines == {1, 2, 3, 5, 6, 7}


def test_decomposition_single_cycle():
    net = _net_from_edges(4, [(1, 2), (2, 3), (3, 4), (4, 1)])
    part = bridge_block_decomposition(net)
    assert part.areas == (frozenset({1, 2, 3, 4}),)
    assert not part.tie_lines


def test_decomposition_star():
    net = _net_from_edges(4, [(1, 2), (1, 3), (1, 4)])
    part = bridge_block_decomposition(net)
    assert len(part.areas) == 4
    assert part.tie_lines == {1, 2, 3}


def test_decomposition_matches_union_find_oracle():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(3, 9))
        m = int(rng.integers(2, 14))
        edges = [
            (int(a), int(b))
            for a, b in rng.integers(1, n + 1, (m, 2))
            if a != b
        ]
        if not edges:
            continue
        net = _net_from_edges(n, edges)
        part = bridge_block_decomposition(net)
        oracle_blocks = union_find_blocks(net, brute_force_bridges(net))
        assert set(part.areas) == oracle_blocks
        assert part.tie_lines == brute_force_bridges(net)


def test_decomposition_idempotent_and_stable(two_triangles):
    p1 = bridge_block_decomposition(two_triangles)
    p2 = bridge_block_decomposition(two_triangles)
    assert p1.areas == p2.areas  # identical labeling, not just up to relabel


def test_removal_refines_decomposition():
    rng = np.random.default_rng(11)
    for _ in range(30):
        net = random_tree_partitioned_net(rng, buses_total=14, n_areas=3)
        old = bridge_block_decomposition(net)
        for ln in net.in_service_lines:
            reduced = net.with_lines_out([ln.id])
            new = bridge_block_decomposition(reduced)
            old_of = old.area_of
            for area in new.areas:
                labels = {old_of[b] for b in area}
                assert len(labels) == 1  # every new area inside an old one


def test_is_tree_partition(two_triangles):
    part = bridge_block_decomposition(two_triangles)
    assert is_tree_partition(two_triangles, part)
    bad = build_partition(
        two_triangles,
        {1: 0, 2: 0, 3: 1, 4: 1, 5: 1, 6: 1},
    )
    assert not is_tree_partition(two_triangles, bad)
    with pytest.raises(PartitionMismatch):
        is_tree_partition(two_triangles, bad, diagnose=True)


def test_single_area_mesh_is_tree_partition():
    net = _net_from_edges(4, [(1, 2), (2, 3), (3, 4), (4, 1), (1, 3)])
    part = build_partition(net, {i: 0 for i in range(1, 5)})
    assert is_tree_partition(net, part)


def test_area_membership_matrix(two_triangles):
    part = bridge_block_decomposition(two_triangles)
    E = area_membership_matrix(part, two_triangles).matrix
    assert E.shape == (2, 6)
    assert np.all(E.sum(axis=0) == 1.0)
    # E C column of an internal line is all-zero
    from gridcascade.netmodel import incidence_matrix

    EC = E @ incidence_matrix(two_triangles)
    cols = {ln.id: i for i, ln in enumerate(two_triangles.in_service_lines)}
    for lid in part.internal_lines:
        assert np.abs(EC[:, cols[lid]]).max() == 0.0
    assert np.abs(EC[:, cols[4]]).max() == 1.0


def test_associated_areas(two_triangles):
    part = bridge_block_decomposition(two_triangles)
    area_of = part.area_of
    a1 = area_of[1]
    a2 = area_of[4]
    assert associated_areas(two_triangles, part, {1}) == {a1}
    assert associated_areas(two_triangles, part, {4}) == {a1, a2}
    assert associated_areas(two_triangles, part, {1, 5}) == {a1, a2}
    with pytest.raises(UnknownLine):
        associated_areas(two_triangles, part, {99})


def test_area_adjacency(two_triangles):
    part = bridge_block_decomposition(two_triangles)
    adj = area_adjacency(two_triangles, part)
    assert adj == {0: (1,), 1: (0,)}


def test_switch_off_zero_flow_line():
    # a perfectly symmetric square with a zero-flow diagonal
    buses = [
        BusRecord(id=1, base_injection=1.0, d_lower=-2, d_upper=2),
        BusRecord(id=2, base_injection=0.0),
        BusRecord(id=3, base_injection=-1.0, d_lower=-2, d_upper=2),
        BusRecord(id=4, base_injection=0.0),
    ]
    lines = [
        LineRecord(id=1, from_bus=1, to_bus=2, susceptance=1.0, thermal_limit=2.0),
        LineRecord(id=2, from_bus=2, to_bus=3, susceptance=1.0, thermal_limit=2.0),
        LineRecord(id=3, from_bus=3, to_bus=4, susceptance=1.0, thermal_limit=2.0),
        LineRecord(id=4, from_bus=4, to_bus=1, susceptance=1.0, thermal_limit=2.0),
        LineRecord(id=5, from_bus=2, to_bus=4, susceptance=1.0, thermal_limit=2.0),
    ]
    net = with_base_flows(build_network(buses, lines))
    assert abs(net.line(5).base_flow) < 1e-12
    revised = switch_off_lines(net, [5])
    for lid in (1, 2, 3, 4):
        assert revised.line(lid).base_flow == pytest.approx(net.line(lid).base_flow)


def test_switch_off_triangle_redistributes():
    net = triangle_net(limits=(1.2, 1.2, 1.2))
    revised = switch_off_lines(net, [3])
    assert not revised.line(3).in_service
    assert revised.line(1).base_flow == pytest.approx(1.0)
    assert revised.line(2).base_flow == pytest.approx(1.0)


def test_switch_off_overload_detected():
    net = triangle_net(limits=(0.8, 0.8, 0.8))
    with pytest.raises(CreatesOverload) as err:
        switch_off_lines(net, [3])
    assert set(err.value.line_ids) == {1, 2}


def test_switch_off_disconnecting_load():
    net = triangle_net()
    # removing both lines at bus 3 islands a net consumer
    with pytest.raises(DisconnectsLoad):
        switch_off_lines(net, [2, 3])


def test_switch_off_unknown_line(triangle):
    with pytest.raises(UnknownLine):
        switch_off_lines(triangle, [99])
