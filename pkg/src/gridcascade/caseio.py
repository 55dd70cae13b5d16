"""Case-file parsing (native JSON and a MATPOWER-style subset) and report emission.

The native JSON schema is the source of truth; the MATPOWER-subset reader is
a one-way importer for the common `mpc.bus/gen/branch/baseMVA` tables. All
internal quantities are per-unit on the system base. Report serialization is
deterministic: stable key order and 9-significant-digit float formatting.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass

from .errors import (
    CaseSyntaxError,
    SchemaViolation,
    UnsupportedField,
    VersionUnsupported,
)
from .netmodel import BusRecord, LineRecord, Network, build_network

SCHEMA_VERSION = 1

_BUS_FIELDS = {
    "id": int,
    "kind": str,
    "injection": float,
    "d_lower": float,
    "d_upper": float,
    "damping": float,
    "inertia": float,
    "cost_weight": float,
    "area": (int, type(None)),
}
_LINE_FIELDS = {
    "id": int,
    "from": int,
    "to": int,
    "susceptance": float,
    "limit": (float, type(None)),
    "base_flow": (float, type(None)),
    "in_service": bool,
}
_TOP_FIELDS = ("version", "buses", "lines", "switch_off", "name")


@dataclass(frozen=True)
class BusRow:
    id: int
    kind: str = "passive"
    injection: float = 0.0
    d_lower: float = 0.0
    d_upper: float = 0.0
    damping: float = 0.0
    inertia: float = 0.0
    cost_weight: float = 1.0
    area: int | None = None


@dataclass(frozen=True)
class LineRow:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float
    limit: float | None = None        # None = unlimited
    base_flow: float | None = None    # None = compute by DC solve
    in_service: bool = True


@dataclass(frozen=True)
class CaseDocument:
    version: int
    buses: tuple[BusRow, ...]
    lines: tuple[LineRow, ...]
    switch_off: tuple[int, ...] = ()
    name: str | None = None
    warnings: tuple[str, ...] = ()


def _type_ok(value, expected) -> bool:
    if isinstance(expected, tuple):
        return any(_type_ok(value, e) for e in expected)
    if expected is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, expected)


def _check_finite(path: str, value: float):
    if isinstance(value, float) and not math.isfinite(value):
        raise SchemaViolation(path, "value must be finite")


def parse_case_json(data: bytes | str, strict: bool = True) -> CaseDocument:
    """Parse and validate a native JSON case.

    Unknown fields raise :class:`SchemaViolation` in strict mode and are
    collected as warnings otherwise. Structural problems raise
    :class:`CaseSyntaxError` with line/column.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise CaseSyntaxError(str(exc), line=exc.lineno, col=exc.colno) from exc

    if not isinstance(raw, dict):
        raise SchemaViolation("$", "top level must be an object")
    warnings: list[str] = []

    for key in raw:
        if key not in _TOP_FIELDS:
            if strict:
                raise SchemaViolation(key, "unknown top-level field")
            warnings.append(f"ignored unknown top-level field {key!r}")

    version = raw.get("version")
    if version != SCHEMA_VERSION:
        raise VersionUnsupported(f"schema version {version!r} not supported")

    def parse_table(name, rows, fields, row_cls, rename=()):
        if not isinstance(rows, list):
            raise SchemaViolation(name, "must be an array")
        out = []
        rename = dict(rename)
        for i, row in enumerate(rows):
            if not isinstance(row, dict):
                raise SchemaViolation(f"{name}[{i}]", "must be an object")
            kwargs = {}
            for key, value in row.items():
                if key not in fields:
                    if strict:
                        raise SchemaViolation(f"{name}[{i}].{key}", "unknown field")
                    warnings.append(f"ignored unknown field {name}[{i}].{key}")
                    continue
                if not _type_ok(value, fields[key]):
                    raise SchemaViolation(
                        f"{name}[{i}].{key}", f"expected {fields[key]}, got {type(value).__name__}"
                    )
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    _check_finite(f"{name}[{i}].{key}", float(value))
                kwargs[rename.get(key, key)] = value
            try:
                out.append(row_cls(**kwargs))
            except TypeError as exc:
                raise SchemaViolation(f"{name}[{i}]", f"missing required field ({exc})") from exc
        return tuple(out)

    buses = parse_table("buses", raw.get("buses", []), _BUS_FIELDS, BusRow)
    lines = parse_table(
        "lines", raw.get("lines", []), _LINE_FIELDS, LineRow,
        rename=[("from", "from_bus"), ("to", "to_bus")],
    )

    for i, b in enumerate(buses):
        if b.kind not in ("generator", "load", "passive"):
            raise SchemaViolation(f"buses[{i}].kind", f"unknown kind {b.kind!r}")
    for i, ln in enumerate(lines):
        if ln.susceptance <= 0:
            raise SchemaViolation(f"lines[{i}].susceptance", "must be > 0")
        if ln.limit is not None and ln.limit < 0:
            raise SchemaViolation(f"lines[{i}].limit", "must be >= 0")

    switch_off = raw.get("switch_off", [])
    if not isinstance(switch_off, list) or not all(_type_ok(v, int) for v in switch_off):
        raise SchemaViolation("switch_off", "must be an array of line ids")
    name = raw.get("name")
    if name is not None and not isinstance(name, str):
        raise SchemaViolation("name", "must be a string")

    return CaseDocument(
        version=SCHEMA_VERSION, buses=buses, lines=lines,
        switch_off=tuple(switch_off), name=name, warnings=tuple(warnings),
    )


def emit_case_json(doc: CaseDocument) -> bytes:
    """Serialize a case deterministically with exact (round-trippable) floats."""
    out = {
        "version": doc.version,
        "buses": [
            {
                "id": b.id, "kind": b.kind, "injection": b.injection,
                "d_lower": b.d_lower, "d_upper": b.d_upper,
                "damping": b.damping, "inertia": b.inertia,
                "cost_weight": b.cost_weight,
                **({"area": b.area} if b.area is not None else {}),
            }
            for b in doc.buses
        ],
        "lines": [
            {
                "id": ln.id, "from": ln.from_bus, "to": ln.to_bus,
                "susceptance": ln.susceptance,
                **({"limit": ln.limit} if ln.limit is not None else {}),
                **({"base_flow": ln.base_flow} if ln.base_flow is not None else {}),
                "in_service": ln.in_service,
            }
            for ln in doc.lines
        ],
    }
    if doc.switch_off:
        out["switch_off"] = list(doc.switch_off)
    if doc.name is not None:
        out["name"] = doc.name
    return (json.dumps(out, indent=2) + "\n").encode("utf-8")


def case_to_network(doc: CaseDocument, redispatch: bool = False) -> Network:
    """Build a validated :class:`Network` from a case document.

    Missing base flows are computed by a DC solve at the stored injections;
    with ``redispatch=True`` the injections themselves are first replaced by
    a DC OPF dispatch of the document's demands (the protocol for imported
    cases whose raw injections do not balance).
    """
    from . import dcflow

    buses = [
        BusRecord(
            id=b.id, kind=b.kind, d_lower=b.d_lower, d_upper=b.d_upper,
            damping=b.damping, inertia=b.inertia, cost_weight=b.cost_weight,
            base_injection=b.injection, area_id=b.area,
        )
        for b in doc.buses
    ]
    lines = [
        LineRecord(
            id=ln.id, from_bus=ln.from_bus, to_bus=ln.to_bus,
            susceptance=ln.susceptance,
            thermal_limit=math.inf if ln.limit is None else ln.limit,
            base_flow=0.0 if ln.base_flow is None else ln.base_flow,
            in_service=ln.in_service,
        )
        for ln in doc.lines
    ]

    if redispatch:
        demand = {b.id: -b.base_injection for b in buses if b.base_injection < 0}
        gen_bounds = {}
        gen_costs = {}
        for b in buses:
            if b.kind == "generator":
                gen_bounds[b.id] = (
                    b.base_injection + b.d_lower, b.base_injection + b.d_upper
                )
                gen_costs[b.id] = (b.cost_weight, 0.0)
        probe = Network(tuple(buses), tuple(lines))
        dispatch = dcflow.dc_opf(probe, demand, gen_bounds, gen_costs)
        new_buses = []
        for b in buses:
            p = dispatch.injections[b.id]
            if b.id in gen_bounds:
                lo, hi = gen_bounds[b.id]
                gen = p + demand.get(b.id, 0.0)
                b = BusRecord(
                    id=b.id, kind=b.kind, d_lower=lo - gen, d_upper=hi - gen,
                    damping=b.damping, inertia=b.inertia,
                    cost_weight=b.cost_weight, base_injection=p, area_id=b.area_id,
                )
            else:
                b = BusRecord(
                    id=b.id, kind=b.kind, d_lower=b.d_lower, d_upper=b.d_upper,
                    damping=b.damping, inertia=b.inertia,
                    cost_weight=b.cost_weight, base_injection=p, area_id=b.area_id,
                )
            new_buses.append(b)
        buses = new_buses
        lines = [
            LineRecord(
                id=ln.id, from_bus=ln.from_bus, to_bus=ln.to_bus,
                susceptance=ln.susceptance, thermal_limit=ln.thermal_limit,
                base_flow=dispatch.flows.get(ln.id, 0.0), in_service=ln.in_service,
            )
            for ln in lines
        ]
        return build_network(buses, lines)

    needs_flows = any(
        row.base_flow is None and row.in_service for row in doc.lines
    )
    net = build_network(buses, lines)
    if needs_flows:
        solution = dcflow.solve_dc_flow(net, net.base_injections())
        lines = [
            LineRecord(
                id=ln.id, from_bus=ln.from_bus, to_bus=ln.to_bus,
                susceptance=ln.susceptance, thermal_limit=ln.thermal_limit,
                base_flow=solution.flows.get(ln.id, 0.0), in_service=ln.in_service,
            )
            for ln in lines
        ]
        net = build_network(buses, lines)
    return net


def network_to_case(net: Network, name: str | None = None) -> CaseDocument:
    """Case document mirroring a network (used by the planning command)."""
    buses = tuple(
        BusRow(
            id=b.id, kind=b.kind, injection=b.base_injection,
            d_lower=b.d_lower, d_upper=b.d_upper, damping=b.damping,
            inertia=b.inertia, cost_weight=b.cost_weight, area=b.area_id,
        )
        for b in net.buses
    )
    lines = tuple(
        LineRow(
            id=ln.id, from_bus=ln.from_bus, to_bus=ln.to_bus,
            susceptance=ln.susceptance,
            limit=None if math.isinf(ln.thermal_limit) else ln.thermal_limit,
            base_flow=ln.base_flow, in_service=ln.in_service,
        )
        for ln in net.lines
    )
    return CaseDocument(version=SCHEMA_VERSION, buses=buses, lines=lines, name=name)


# ---------------------------------------------------------------------------
# MATPOWER subset
# ---------------------------------------------------------------------------

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[", re.MULTILINE)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([^;\[\]]+);")
_SUPPORTED_TABLES = ("bus", "gen", "branch")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def parse_case_matpower_subset(data: bytes | str) -> CaseDocument:
    """Import the bus/gen/branch/baseMVA tables of a MATPOWER-format case.

    Reactance maps to susceptance as 1/(x * tap), rateA to the thermal limit
    (0 meaning unlimited), and all powers convert to per-unit on baseMVA.
    Branch status is honored; a nonzero phase-shift column is fatal
    (:class:`UnsupportedField`) because it changes the DC model. Other
    sections are skipped with a warning.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    text = _strip_comments(data)
    warnings: list[str] = []

    scalars: dict[str, str] = {}
    for mt in _SCALAR_RE.finditer(text):
        scalars[mt.group(1)] = mt.group(2).strip()

    tables: dict[str, list[list[float]]] = {}
    for mt in _MATRIX_RE.finditer(text):
        name = mt.group(1)
        end = text.find("]", mt.end())
        if end < 0:
            line = text[:mt.start()].count("\n") + 1
            raise CaseSyntaxError(f"unterminated matrix mpc.{name}", line=line)
        body = text[mt.end():end]
        if name not in _SUPPORTED_TABLES:
            warnings.append(f"skipped unsupported section mpc.{name}")
            continue
        rows = []
        for chunk in re.split(r"[;\n]", body):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                rows.append([float(v) for v in chunk.replace(",", " ").split()])
            except ValueError as exc:
                line = text[:mt.end()].count("\n") + 1
                raise CaseSyntaxError(
                    f"bad numeric row in mpc.{name}: {chunk!r}", line=line
                ) from exc
        tables[name] = rows

    for required in ("bus", "branch"):
        if required not in tables:
            raise CaseSyntaxError(f"missing required table mpc.{required}")
    try:
        base_mva = float(scalars.get("baseMVA", "100"))
    except ValueError as exc:
        raise CaseSyntaxError(f"bad baseMVA: {scalars['baseMVA']!r}") from exc

    gen_at: dict[int, list[list[float]]] = {}
    for row in tables.get("gen", []):
        if len(row) < 10:
            raise CaseSyntaxError("gen row needs at least 10 columns")
        gen_at.setdefault(int(row[0]), []).append(row)

    buses = []
    for row in tables["bus"]:
        if len(row) < 13:
            raise CaseSyntaxError("bus row needs at least 13 columns")
        bus_id = int(row[0])
        pd = row[2] / base_mva
        area = int(row[6])
        gens = [g for g in gen_at.get(bus_id, []) if g[7] > 0]  # STATUS column
        pg = sum(g[1] for g in gens) / base_mva
        pmax = sum(g[8] for g in gens) / base_mva
        pmin = sum(g[9] for g in gens) / base_mva
        injection = pg - pd
        if gens:
            kind = "generator"
            d_lower, d_upper = pmin - pg, pmax - pg
            d_lower, d_upper = min(d_lower, 0.0), max(d_upper, 0.0)
        elif pd > 0:
            kind, d_lower, d_upper = "load", 0.0, 0.0
        else:
            kind, d_lower, d_upper = "passive", 0.0, 0.0
        buses.append(BusRow(
            id=bus_id, kind=kind, injection=injection,
            d_lower=d_lower, d_upper=d_upper, area=area,
        ))

    lines = []
    for i, row in enumerate(tables["branch"]):
        if len(row) < 11:
            raise CaseSyntaxError("branch row needs at least 11 columns")
        x, tap, shift, status = row[3], row[8], row[9], row[10]
        if shift != 0.0:
            raise UnsupportedField(
                f"branch {i}: nonzero phase shift {shift} changes the DC model"
            )
        if x <= 0.0:
            raise UnsupportedField(f"branch {i}: nonpositive reactance {x}")
        tap = tap if tap != 0.0 else 1.0
        rate_a = row[5]
        lines.append(LineRow(
            id=i + 1, from_bus=int(row[0]), to_bus=int(row[1]),
            susceptance=1.0 / (x * tap),
            limit=None if rate_a == 0.0 else rate_a / base_mva,
            base_flow=None,
            in_service=status > 0,
        ))

    return CaseDocument(
        version=SCHEMA_VERSION, buses=tuple(buses), lines=tuple(lines),
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# deterministic report emission
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if x != x or math.isinf(x):
        return "null"
    if x == int(x) and abs(x) < 1e15:
        return f"{x:.1f}"
    return f"{x:.9g}"


def _write_json(obj, out: list[str]):
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_fmt_float(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(k)))
            out.append(":")
            _write_json(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _write_json(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(obj) -> str:
    """Deterministic JSON text: insertion key order, floats at 9 significant digits."""
    out: list[str] = []
    _write_json(obj, out)
    return "".join(out)


def report_to_dict(report) -> dict:
    """Canonical dict form of a StudyReport (field order fixed)."""
    return {
        "config": report.config,
        "cells": [asdict(c) for c in report.cells],
        "scenarios": [asdict(s) for s in report.scenarios],
    }


def emit_report(report, format: str = "json") -> bytes:
    """Serialize a study report; `format` is 'json' or 'csv' (per-cell table)."""
    if format == "json":
        payload = report_to_dict(report) if not isinstance(report, dict) else report
        return (dumps_report(payload) + "\n").encode("utf-8")
    if format == "csv":
        rows = [
            "controller,k,alpha,n_profiles,n_scenarios,n_errors,"
            "vulnerable_fraction_avg,vulnerable_fraction_min,vulnerable_fraction_max,"
            "llr_avg,llr_max,mitigated_one_area,mitigated_two_three,mitigated_all"
        ]
        for c in report.cells:
            rows.append(",".join([
                c.controller, str(c.k), _fmt_float(float(c.alpha)),
                str(c.n_profiles), str(c.n_scenarios), str(c.n_errors),
                _fmt_float(c.vulnerable_fraction_avg),
                _fmt_float(c.vulnerable_fraction_min),
                _fmt_float(c.vulnerable_fraction_max),
                _fmt_float(c.llr_avg), _fmt_float(c.llr_max),
                str(c.mitigated_one_area), str(c.mitigated_two_three),
                str(c.mitigated_all),
            ]))
        return ("\n".join(rows) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {format!r}")


def emit_ccdf_csv(points, value_label: str = "value") -> bytes:
    """Two-column CCDF table; second column is non-increasing."""
    rows = [f"{value_label},ccdf"]
    for x, y in points:
        rows.append(f"{_fmt_float(float(x))},{_fmt_float(float(y))}")
    return ("\n".join(rows) + "\n").encode("utf-8")
