"""Immutable network model: buses, lines, base operating point.

All downstream modules work in *deviation coordinates*: injections, flows and
bounds are measured relative to the stored base point (`base_injection`,
`base_flow`). Networks are frozen after construction and safe to share across
worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    BaseFlowExceedsLimit,
    DanglingEndpoint,
    DuplicateId,
    InvalidRecord,
    NegativeSusceptance,
    UnbalancedBase,
)

# Relative tolerance for the per-component base balance check. Strictly
# tighter than every solver tolerance used downstream.
BALANCE_RTOL = 1e-8
_BALANCE_ATOL = 1e-12

BUS_KINDS = ("generator", "load", "passive")


@dataclass(frozen=True)
class BusRecord:
    """One bus: control range, damping, inertia, cost weight, base injection.

    `d_lower`/`d_upper` bound the injection deviation (per-unit MW),
    `damping` is the frequency-response coefficient D_j, `inertia` M_j is
    carried for completeness but consumed by no steady-state operation.
    """

    id: int
    kind: str = "passive"
    d_lower: float = 0.0
    d_upper: float = 0.0
    damping: float = 0.0
    inertia: float = 0.0
    cost_weight: float = 1.0
    base_injection: float = 0.0
    area_id: int | None = None


@dataclass(frozen=True)
class LineRecord:
    """One transmission line; orientation `from_bus -> to_bus` fixes signs."""

    id: int
    from_bus: int
    to_bus: int
    susceptance: float
    thermal_limit: float = math.inf
    base_flow: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Network:
    """Validated immutable network. Build via :func:`build_network`."""

    buses: tuple[BusRecord, ...]
    lines: tuple[LineRecord, ...]

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def m(self) -> int:
        return len(self.lines)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def line_index(self) -> dict[int, int]:
        return {ln.id: i for i, ln in enumerate(self.lines)}

    @cached_property
    def in_service_lines(self) -> tuple[LineRecord, ...]:
        return tuple(ln for ln in self.lines if ln.in_service)

    def bus(self, bus_id: int) -> BusRecord:
        return self.buses[self.bus_index[bus_id]]

    def line(self, line_id: int) -> LineRecord:
        try:
            return self.lines[self.line_index[line_id]]
        except KeyError:
            raise KeyError(f"unknown line id {line_id}") from None

    @cached_property
    def adjacency(self) -> dict[int, tuple[tuple[int, int], ...]]:
        """bus id -> ((neighbor bus id, line id), ...) over in-service lines."""
        adj: dict[int, list[tuple[int, int]]] = {b.id: [] for b in self.buses}
        for ln in self.in_service_lines:
            adj[ln.from_bus].append((ln.to_bus, ln.id))
            adj[ln.to_bus].append((ln.from_bus, ln.id))
        return {k: tuple(v) for k, v in adj.items()}

    def base_injections(self) -> dict[int, float]:
        return {b.id: b.base_injection for b in self.buses}

    def total_demand(self) -> float:
        """Total base consumption: sum of negative base injections, as a positive number."""
        return float(sum(-b.base_injection for b in self.buses if b.base_injection < 0))

    def with_lines_out(self, line_ids: Iterable[int]) -> "Network":
        """Copy with the given lines switched out of service (flows untouched)."""
        out = set(line_ids)
        unknown = out - set(self.line_index)
        if unknown:
            raise KeyError(f"unknown line ids {sorted(unknown)}")
        lines = tuple(
            replace(ln, in_service=False) if ln.id in out else ln for ln in self.lines
        )
        return Network(self.buses, lines)

    def replace_records(
        self,
        buses: tuple[BusRecord, ...] | None = None,
        lines: tuple[LineRecord, ...] | None = None,
    ) -> "Network":
        """Rebuild with substituted records, re-running full validation."""
        return build_network(
            buses if buses is not None else self.buses,
            lines if lines is not None else self.lines,
        )


def _validate_bus(bus: BusRecord) -> None:
    if bus.kind not in BUS_KINDS:
        raise InvalidRecord(f"bus {bus.id}: unknown kind {bus.kind!r}")
    if not (bus.d_lower <= 0.0 <= bus.d_upper):
        raise InvalidRecord(
            f"bus {bus.id}: deviation bounds [{bus.d_lower}, {bus.d_upper}] must bracket 0"
        )
    if not bus.cost_weight > 0.0:
        raise InvalidRecord(f"bus {bus.id}: cost weight must be positive")
    if bus.damping < 0.0 or bus.inertia < 0.0:
        raise InvalidRecord(f"bus {bus.id}: damping and inertia must be nonnegative")
    for name in ("d_lower", "d_upper", "cost_weight", "base_injection", "damping", "inertia"):
        v = getattr(bus, name)
        if isinstance(v, float) and math.isnan(v):
            raise InvalidRecord(f"bus {bus.id}: {name} is NaN")


def build_network(
    buses: Iterable[BusRecord], lines: Iterable[LineRecord]
) -> Network:
    """Validate records and assemble an immutable :class:`Network`.

    Checks id uniqueness, endpoint existence, positive susceptances and
    per-component base balance (tolerance ``BALANCE_RTOL`` x total |injection|).
    Construction is deterministic: identical input ordering yields identical
    internal indices.
    """
    buses = tuple(buses)
    lines = tuple(lines)

    seen_bus: set[int] = set()
    for b in buses:
        _validate_bus(b)
        if b.id in seen_bus:
            raise DuplicateId(f"duplicate bus id {b.id}")
        seen_bus.add(b.id)

    seen_line: set[int] = set()
    for ln in lines:
        if ln.id in seen_line:
            raise DuplicateId(f"duplicate line id {ln.id}")
        seen_line.add(ln.id)
        if ln.from_bus not in seen_bus or ln.to_bus not in seen_bus:
            raise DanglingEndpoint(
                f"line {ln.id} references missing bus "
                f"({ln.from_bus}, {ln.to_bus})"
            )
        if ln.from_bus == ln.to_bus:
            raise InvalidRecord(f"line {ln.id} is a self-loop at bus {ln.from_bus}")
        if not ln.susceptance > 0.0:
            raise NegativeSusceptance(
                f"line {ln.id}: susceptance {ln.susceptance} must be > 0"
            )
        if ln.thermal_limit < 0.0 or math.isnan(ln.thermal_limit):
            raise InvalidRecord(f"line {ln.id}: thermal limit must be >= 0")

    net = Network(buses, lines)

    total_abs = sum(abs(b.base_injection) for b in buses)
    tol = BALANCE_RTOL * total_abs + _BALANCE_ATOL
    for comp in _components(net):
        s = sum(net.bus(j).base_injection for j in comp)
        if abs(s) > tol:
            raise UnbalancedBase(
                f"component containing bus {comp[0]} has net base injection "
                f"{s:.3e} (tolerance {tol:.3e})"
            )
    return net


def _components(net: Network) -> list[tuple[int, ...]]:
    """Connected components over in-service lines, deterministic by bus order."""
    seen: set[int] = set()
    comps: list[tuple[int, ...]] = []
    adj = net.adjacency
    for b in net.buses:
        if b.id in seen:
            continue
        stack = [b.id]
        seen.add(b.id)
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v, _ in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        comp.sort(key=net.bus_index.__getitem__)
        comps.append(tuple(comp))
    return comps


def incidence_matrix(net: Network) -> np.ndarray:
    """Signed n x m incidence matrix over in-service lines.

    Column order follows the in-service line order; +1 at the source bus,
    -1 at the destination. Out-of-service lines contribute no column.
    """
    lines = net.in_service_lines
    C = np.zeros((net.n, len(lines)))
    for col, ln in enumerate(lines):
        C[net.bus_index[ln.from_bus], col] = 1.0
        C[net.bus_index[ln.to_bus], col] = -1.0
    return C


def susceptance_vector(net: Network) -> np.ndarray:
    """Per in-service line susceptances, aligned with incidence columns."""
    return np.array([ln.susceptance for ln in net.in_service_lines])


def deviation_bounds(net: Network) -> dict[int, tuple[float, float]]:
    """Per-line flow-deviation bounds around the base flow.

    Returns ``{line_id: (lower, upper)}`` with ``lower = -limit - f0`` and
    ``upper = limit - f0`` for every in-service line, so the absolute flow
    stays within ``[-limit, limit]``.

    Raises :class:`BaseFlowExceedsLimit` if any |base flow| > limit.
    """
    bad = tuple(
        ln.id for ln in net.in_service_lines if abs(ln.base_flow) > ln.thermal_limit
    )
    if bad:
        raise BaseFlowExceedsLimit(
            f"base flow exceeds thermal limit on lines {sorted(bad)}", bad
        )
    return {
        ln.id: (-ln.thermal_limit - ln.base_flow, ln.thermal_limit - ln.base_flow)
        for ln in net.in_service_lines
    }


@dataclass(frozen=True)
class DisturbanceVector:
    """Sparse bus-indexed power disturbance; absent ids mean zero."""

    r: Mapping[int, float]

    def dense(self, net: Network) -> np.ndarray:
        out = np.zeros(net.n)
        for bus_id, val in self.r.items():
            out[net.bus_index[bus_id]] = val
        return out

    def get(self, bus_id: int) -> float:
        return float(self.r.get(bus_id, 0.0))
