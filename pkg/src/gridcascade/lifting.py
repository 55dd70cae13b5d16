"""Constraint-lifting actions and operator policies for critical failures.

Two relaxations restore feasibility after a critical failure: merging the
area-control-error constraint of an adjacent area pair (which coordinates
those areas as one balancing unit), and widening load-bus injection ranges so
demand can be shed. A :class:`LiftingPolicy` is the operator's predetermined
order of such actions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Union

from .errors import GridCascadeError
from .netmodel import Network
from .topology import Partition, area_adjacency, associated_areas

POLICY_NAMES = ("localization-first", "load-loss-first")


@dataclass(frozen=True)
class LiftACE:
    """Drop the zero-ACE coupling between two adjacent balancing areas."""

    area_a: int
    area_b: int

    def __post_init__(self):
        if self.area_a == self.area_b:
            raise GridCascadeError("LiftACE needs two distinct areas")


@dataclass(frozen=True)
class ExpandLoadBounds:
    """Widen load-bus deviation intervals; (bus, new_lower, new_upper) triples.

    Only widens: the new interval must contain the bus's current one. Used to
    allow shedding down to the full base demand.
    """

    bounds: tuple[tuple[int, float, float], ...]


LiftAction = Union[LiftACE, ExpandLoadBounds]


@dataclass(frozen=True)
class LiftingPolicy:
    """Finite ordered sequence of lift actions with a policy name."""

    name: str
    actions: tuple[LiftAction, ...]

    def __len__(self) -> int:
        return len(self.actions)


def full_shed_bounds(net: Network, buses) -> ExpandLoadBounds:
    """Bound expansion letting the given load buses shed down to full demand.

    In injection convention, shedding raises a load bus's injection, so only
    the upper bound widens (to at least the base demand).
    """
    triples = []
    for bus_id in sorted(buses, key=net.bus_index.__getitem__):
        bus = net.bus(bus_id)
        demand = max(0.0, -bus.base_injection)
        triples.append((bus_id, bus.d_lower, max(bus.d_upper, demand)))
    return ExpandLoadBounds(tuple(triples))


def _load_buses(net: Network, area: frozenset[int]) -> list[int]:
    return [
        b.id
        for b in net.buses
        if b.id in area and b.kind == "load" and b.base_injection < 0.0
    ]


def _area_tree_order(
    net: Network, partition: Partition, sources: frozenset[int]
) -> list[tuple[int, int]]:
    """BFS order of area-tree edges expanding outward from the source areas."""
    adj = area_adjacency(net, partition)
    visited = set(sources)
    frontier = deque(sorted(sources))
    edges: list[tuple[int, int]] = []
    while frontier:
        a = frontier.popleft()
        for b in adj[a]:
            if b not in visited:
                visited.add(b)
                edges.append((a, b))
                frontier.append(b)
    return edges


def build_lifting_policy(
    name: str, net: Network, partition: Partition, failure
) -> LiftingPolicy:
    """Instantiate a built-in policy for one initial failure.

    * ``localization-first``: shed load inside the associated areas first;
      only then merge ACE constraints outward along the area tree, unlocking
      each newly joined area's load as it is merged in.
    * ``load-loss-first``: merge all reachable ACE constraints before any
      load bound is widened, so global reserves are pooled and shedding is a
      last resort.

    The terminal state of either policy has every reachable ACE pair merged
    and every load fully sheddable.
    """
    if name not in POLICY_NAMES:
        raise GridCascadeError(f"unknown policy {name!r}; choose from {POLICY_NAMES}")
    assoc = associated_areas(net, partition, frozenset(failure))
    tree_edges = _area_tree_order(net, partition, assoc)
    actions: list[LiftAction] = []

    def expand_for(areas) -> list[LiftAction]:
        out = []
        for a in areas:
            loads = _load_buses(net, partition.areas[a])
            if loads:
                out.append(full_shed_bounds(net, loads))
        return out

    if name == "localization-first":
        actions.extend(expand_for(sorted(assoc)))
        for a, b in tree_edges:
            actions.append(LiftACE(a, b))
            actions.extend(expand_for([b]))
    else:  # load-loss-first
        for a, b in tree_edges:
            actions.append(LiftACE(a, b))
        reached = sorted(assoc) + [b for _, b in tree_edges]
        actions.extend(expand_for(reached))

    # Areas unreachable from the associated set (separate components) still
    # get their loads unlocked last, so the terminal state is complete.
    reached_set = set(assoc) | {b for _, b in tree_edges}
    rest = [i for i in range(partition.size) if i not in reached_set]
    actions.extend(expand_for(rest))

    return LiftingPolicy(name=name, actions=tuple(actions))
