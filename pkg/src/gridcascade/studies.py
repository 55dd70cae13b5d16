"""N-k contingency studies: scenario generation, sampling and aggregation.

A study cell is one (controller, k, capacity-scale) combination. For each
cell the harness perturbs load profiles, re-dispatches them by DC OPF against
the scaled limits, enumerates or samples k-line failure sets, runs the
cascade for every scenario and aggregates vulnerable fractions, load-loss
statistics, CCDF sample points and area-involvement counts.

All randomness flows from one seed through named substreams (hashes of the
seed with the profile or sampling role), so reports are byte-identical for a
fixed seed at any parallelism width; aggregation is an ordered reduce over
scenario indices.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from . import cascade as cascade_mod
from . import dcflow, topology
from .cascade import CascadeConfig
from .lifting import LiftACE
from .errors import (
    DispatchInfeasible,
    GridCascadeError,
    Infeasible,
    InsufficientCapacity,
    TooManyRequested,
)
from .netmodel import Network, build_network

DEFAULT_PERTURBATION = 0.25
DEFAULT_RESERVE = 0.20


@dataclass(frozen=True)
class StudyConfig:
    """Knobs of one study run; defaults mirror the reference protocol."""

    controllers: tuple[str, ...] = ("uc", "agc")
    k_values: tuple[int, ...] = (1,)
    profile_counts: tuple[int, ...] = (10,)
    failure_counts: tuple[int | None, ...] = (None,)  # None = exhaustive
    alphas: tuple[float, ...] = (1.0,)
    perturbation: float = DEFAULT_PERTURBATION
    reserve_target: float | None = None
    seed: int = 0
    jobs: int = 1
    switch_off: tuple[int, ...] = ()
    revised_controllers: tuple[str, ...] = ("uc",)
    policy: str = "localization-first"
    shed_tol_factor: float = 1e-8
    adjust_tol: float = 1e-6

    def __post_init__(self):
        if len(self.profile_counts) != len(self.k_values) or len(self.failure_counts) != len(self.k_values):
            raise GridCascadeError("profile_counts and failure_counts must align with k_values")
        if any(c < 1 for c in self.profile_counts):
            raise GridCascadeError("profile counts must be positive")
        if any(c is not None and c < 1 for c in self.failure_counts):
            raise GridCascadeError("failure counts must be positive")
        if not (0.0 <= self.perturbation < 1.0):
            raise GridCascadeError("perturbation must be in [0, 1)")
        for a in self.alphas:
            if not (0.0 < a <= 1.0):
                raise GridCascadeError("capacity scale must be in (0, 1]")


@dataclass(frozen=True)
class ScenarioRecord:
    controller: str
    k: int
    alpha: float
    profile: int
    index: int
    failure: tuple[int, ...]
    stages: int
    load_shed: float
    llr: float
    vulnerable: bool
    areas_involved: int
    areas_total: int
    gens_adjusted: int
    cause: str
    error: str | None = None


@dataclass(frozen=True)
class CellReport:
    controller: str
    k: int
    alpha: float
    n_profiles: int
    n_scenarios: int
    n_errors: int
    vulnerable_fraction_avg: float
    vulnerable_fraction_min: float
    vulnerable_fraction_max: float
    llr_avg: float
    llr_max: float
    ccdf_llr: tuple[tuple[float, float], ...]
    ccdf_gen_adjust: tuple[tuple[float, float], ...]
    area_involvement: tuple[tuple[int, int], ...]   # (#areas, count)
    mitigated_one_area: int
    mitigated_two_three: int
    mitigated_all: int


@dataclass(frozen=True)
class StudyReport:
    config: dict
    cells: tuple[CellReport, ...]
    scenarios: tuple[ScenarioRecord, ...]


def _substream(*key) -> np.random.Generator:
    """Named, versioned substream: PCG64 seeded by a stable hash of the key.

    Uses SHA-256 of the key repr (not Python's randomized hash), so streams
    are identical across processes and runs.
    """
    digest = hashlib.sha256(repr(key).encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def perturb_load_profile(net: Network, magnitude: float, seed) -> Network:
    """Scale each load by an independent uniform factor in [1-m, 1+m], re-dispatch.

    The perturbed demands are re-dispatched by DC OPF (quadratic costs from
    the bus cost weights, capacities from the current dispatch plus deviation
    bounds), and base flows are recomputed, so the result is a consistent
    operating point. Deterministic under `seed`.
    """
    if not (0.0 <= magnitude < 1.0):
        raise GridCascadeError("perturbation magnitude must be in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else _substream("perturb", seed)

    demand: dict[int, float] = {}
    for bus in net.buses:
        if bus.base_injection < 0.0:
            factor = 1.0 + magnitude * float(rng.uniform(-1.0, 1.0))
            demand[bus.id] = -bus.base_injection * factor

    gen_bounds: dict[int, tuple[float, float]] = {}
    gen_costs: dict[int, tuple[float, float]] = {}
    for bus in net.buses:
        if bus.base_injection > 0.0 or (bus.kind == "generator" and bus.d_upper > 0.0):
            gen_bounds[bus.id] = (
                bus.base_injection + bus.d_lower,
                bus.base_injection + bus.d_upper,
            )
            gen_costs[bus.id] = (bus.cost_weight, 0.0)

    try:
        dispatch = dcflow.dc_opf(net, demand, gen_bounds, gen_costs)
    except Infeasible as exc:
        raise DispatchInfeasible(
            "perturbed demand cannot be dispatched", certificate=exc.certificate
        ) from exc

    buses = []
    for bus in net.buses:
        p = dispatch.injections[bus.id]
        if bus.id in gen_bounds:
            lo, hi = gen_bounds[bus.id]
            gen = p + demand.get(bus.id, 0.0)
            d_lower, d_upper = lo - gen, hi - gen
        else:
            d_lower, d_upper = bus.d_lower, bus.d_upper
        buses.append(replace(bus, base_injection=p, d_lower=min(d_lower, 0.0),
                             d_upper=max(d_upper, 0.0)))
    lines = [
        replace(ln, base_flow=dispatch.flows[ln.id]) if ln.in_service else ln
        for ln in net.lines
    ]
    return build_network(buses, lines)


def sample_nk_failures(net: Network, k: int, count: int | None, seed) -> list[tuple[int, ...]]:
    """k-subsets of in-service lines: exhaustive for k=1 (or when count covers
    the full collection), otherwise uniform without replacement; deterministic
    under `seed`."""
    line_ids = [ln.id for ln in net.in_service_lines]
    m = len(line_ids)
    if k > m:
        raise TooManyRequested(f"k={k} exceeds in-service line count {m}")
    total = math.comb(m, k)
    if count is not None and count > total:
        raise TooManyRequested(f"requested {count} subsets, only {total} exist")

    if k == 1:
        return [(lid,) for lid in line_ids]
    if count is None or count == total:
        return [tuple(c) for c in combinations(line_ids, k)]

    rng = seed if isinstance(seed, np.random.Generator) else _substream("nk", seed, k)
    if total <= 200_000:
        all_subsets = list(combinations(line_ids, k))
        idx = rng.choice(total, size=count, replace=False)
        return [tuple(all_subsets[i]) for i in sorted(idx)]
    chosen: set[tuple[int, ...]] = set()
    order: list[tuple[int, ...]] = []
    while len(order) < count:
        pick = tuple(sorted(rng.choice(m, size=k, replace=False)))
        subset = tuple(line_ids[i] for i in pick)
        if subset not in chosen:
            chosen.add(subset)
            order.append(subset)
    return order


def scale_line_capacities(net: Network, alpha: float) -> Network:
    """Thermal limits scaled by alpha; deviation bounds re-derive downstream."""
    if not (0.0 < alpha <= 1.0):
        raise GridCascadeError("alpha must be in (0, 1]")
    lines = [replace(ln, thermal_limit=ln.thermal_limit * alpha) for ln in net.lines]
    net2 = Network(net.buses, tuple(lines))
    from .netmodel import deviation_bounds

    deviation_bounds(net2)  # raises BaseFlowExceedsLimit if scaling broke the base point
    return net2


def scale_generation_reserve(net: Network, target: float, tol: float = 1e-6) -> Network:
    """Uniformly scale generator deviation ranges to hit a reserve target.

    Aggregate generator headroom (sum of upper deviation bounds) is set to
    ``target x total demand``. Bounds are physical ceilings, so only scaling
    down is allowed; a target above the current headroom raises
    :class:`InsufficientCapacity`.
    """
    if not (0.0 < target < 1.0):
        raise GridCascadeError("reserve target must be in (0, 1)")
    demand = net.total_demand()
    gens = [b for b in net.buses if b.kind == "generator"]
    headroom = sum(b.d_upper for b in gens)
    want = target * demand
    if headroom <= 0.0 or want > headroom * (1.0 + tol):
        raise InsufficientCapacity(
            f"target reserve {want:.4g} exceeds available headroom {headroom:.4g}"
        )
    s = want / headroom
    if abs(s - 1.0) <= tol:
        return net
    buses = [
        replace(b, d_lower=b.d_lower * s, d_upper=b.d_upper * s)
        if b.kind == "generator" else b
        for b in net.buses
    ]
    return Network(tuple(buses), net.lines)


# ---------------------------------------------------------------------------
# scenario evaluation
# ---------------------------------------------------------------------------

_WORKER_CTX: dict = {}


def _partition_for(net: Network, controller: str) -> topology.Partition:
    """Balancing areas: declared bus labels when meaningful, else the decomposition.

    A complete declaration with more than one distinct label is honored
    (imported cases routinely carry a constant placeholder area, which is no
    declaration at all). UC requires a tree partition, so a genuine
    declaration that mismatches the bridge blocks raises at study start.
    """
    labels = {b.id: b.area_id for b in net.buses}
    declared = all(v is not None for v in labels.values()) and \
        len(set(labels.values())) > 1
    if declared:
        part = topology.build_partition(net, labels)
    else:
        part = topology.bridge_block_decomposition(net)
    if controller == "uc" and not topology.is_tree_partition(net, part):
        raise GridCascadeError(
            "unified control requires balancing areas equal to the bridge blocks; "
            "switch off tie lines or drop the declared area labels"
        )
    return part


def _scenario_payloads(net: Network, config: StudyConfig):
    """Deterministic flat scenario list plus per-(controller, alpha, profile) nets."""
    nets: dict[tuple, Network] = {}
    partitions: dict[tuple, topology.Partition] = {}
    payloads = []

    base = net
    if config.reserve_target is not None:
        base = scale_generation_reserve(base, config.reserve_target)

    for controller in config.controllers:
        eff = base
        if config.switch_off and controller in config.revised_controllers:
            eff = topology.switch_off_lines(base, config.switch_off)
        partition = _partition_for(eff, controller)
        for ki, k in enumerate(config.k_values):
            n_profiles = config.profile_counts[ki]
            n_failures = config.failure_counts[ki]
            failures = sample_nk_failures(
                eff, k, None if k == 1 else n_failures,
                _substream("nk", config.seed, controller, k),
            )
            for alpha in config.alphas:
                scaled = scale_line_capacities(eff, alpha)
                for p in range(n_profiles):
                    key = (controller, k, alpha, p)
                    rng = _substream("perturb", config.seed, k, p)
                    prof = perturb_load_profile(scaled, config.perturbation, rng)
                    nets[key] = prof
                    partitions[key] = partition
                    for failure in failures:
                        payloads.append({
                            "key": key, "controller": controller, "k": k,
                            "alpha": alpha, "profile": p, "failure": failure,
                            "index": len(payloads),
                        })
    return nets, partitions, payloads


def _evaluate_one(payload, nets, partitions, config: StudyConfig) -> ScenarioRecord:
    key = payload["key"]
    net = nets[key]
    partition = partitions[key]
    controller = payload["controller"]
    failure = payload["failure"]
    base = dict(
        controller=controller, k=payload["k"], alpha=payload["alpha"],
        profile=payload["profile"], index=payload["index"], failure=tuple(failure),
    )
    try:
        trace = cascade_mod.run_cascade(
            net, failure, controller, partition=partition,
            config=CascadeConfig(policy=config.policy, adjust_tol=config.adjust_tol),
        )
    except GridCascadeError as exc:
        return ScenarioRecord(
            **base, stages=0, load_shed=0.0, llr=0.0, vulnerable=True,
            areas_involved=0, areas_total=partition.size, gens_adjusted=0,
            cause="error", error=str(exc),
        )

    shed_tol = config.shed_tol_factor * max(trace.total_demand, 1e-300)
    vulnerable = trace.n_stages > 1 or trace.total_load_shed > shed_tol
    assoc = topology.associated_areas(net, partition, frozenset(failure))
    merged: set[int] = set(assoc)
    for action in trace.lifts:
        if isinstance(action, LiftACE):
            merged.add(action.area_a)
            merged.add(action.area_b)
    gens_adjusted = sum(
        1 for b in trace.adjusted_buses if net.bus(b).kind == "generator"
    )
    return ScenarioRecord(
        **base, stages=trace.n_stages, load_shed=trace.total_load_shed,
        llr=trace.load_loss_rate, vulnerable=vulnerable,
        areas_involved=len(merged), areas_total=partition.size,
        gens_adjusted=gens_adjusted, cause=trace.cause,
    )


def _init_worker(nets, partitions, config):
    _WORKER_CTX["nets"] = nets
    _WORKER_CTX["partitions"] = partitions
    _WORKER_CTX["config"] = config


def _worker(payload):
    return _evaluate_one(
        payload, _WORKER_CTX["nets"], _WORKER_CTX["partitions"], _WORKER_CTX["config"]
    )


def _ccdf(values: list[float]) -> tuple[tuple[float, float], ...]:
    """Sample points (x, P(X > x)) at each distinct value; non-increasing."""
    if not values:
        return ()
    arr = np.sort(np.asarray(values, dtype=float))
    n = arr.size
    points = []
    for x in np.unique(arr):
        points.append((float(x), float(np.sum(arr > x) / n)))
    return tuple(points)


def run_study(net: Network, config: StudyConfig) -> StudyReport:
    """Evaluate the full (controller x k x alpha x profile x failure) grid.

    A scenario is vulnerable iff its cascade has more than one stage or sheds
    load above the noise tolerance. Per-scenario errors are recorded and
    flagged, never propagated. The report is deterministic for a fixed seed
    at any `jobs` width.
    """
    nets, partitions, payloads = _scenario_payloads(net, config)

    if config.jobs > 1:
        with ProcessPoolExecutor(
            max_workers=config.jobs,
            initializer=_init_worker, initargs=(nets, partitions, config),
        ) as pool:
            results = list(pool.map(_worker, payloads, chunksize=16))
    else:
        results = [_evaluate_one(p, nets, partitions, config) for p in payloads]
    results.sort(key=lambda rec: rec.index)

    cells = []
    for controller in config.controllers:
        for ki, k in enumerate(config.k_values):
            for alpha in config.alphas:
                recs = [
                    r for r in results
                    if r.controller == controller and r.k == k and r.alpha == alpha
                ]
                if not recs:
                    continue
                by_profile: dict[int, list[ScenarioRecord]] = {}
                for r in recs:
                    by_profile.setdefault(r.profile, []).append(r)
                fractions = [
                    sum(1 for r in group if r.vulnerable) / len(group)
                    for _, group in sorted(by_profile.items())
                ]
                llrs = [r.llr for r in recs]
                involvement: dict[int, int] = {}
                for r in recs:
                    involvement[r.areas_involved] = involvement.get(r.areas_involved, 0) + 1
                areas_total = max((r.areas_total for r in recs), default=0)
                one = sum(c for a, c in involvement.items() if a <= 1)
                twothree = sum(c for a, c in involvement.items() if a in (2, 3))
                alln = sum(
                    c for a, c in involvement.items()
                    if areas_total > 0 and a == areas_total
                )
                cells.append(CellReport(
                    controller=controller, k=k, alpha=alpha,
                    n_profiles=len(by_profile), n_scenarios=len(recs),
                    n_errors=sum(1 for r in recs if r.error),
                    vulnerable_fraction_avg=float(np.mean(fractions)),
                    vulnerable_fraction_min=float(np.min(fractions)),
                    vulnerable_fraction_max=float(np.max(fractions)),
                    llr_avg=float(np.mean(llrs)),
                    llr_max=float(np.max(llrs)),
                    ccdf_llr=_ccdf(llrs),
                    ccdf_gen_adjust=_ccdf([float(r.gens_adjusted) for r in recs]),
                    area_involvement=tuple(sorted(involvement.items())),
                    mitigated_one_area=one,
                    mitigated_two_three=twothree,
                    mitigated_all=alln,
                ))

    # `jobs` is an execution detail, not part of the study semantics; keeping
    # it out of the echo keeps reports byte-identical at any width.
    cfg_echo = {
        "controllers": list(config.controllers),
        "k_values": list(config.k_values),
        "profile_counts": list(config.profile_counts),
        "failure_counts": [c if c is not None else "exhaustive" for c in config.failure_counts],
        "alphas": list(config.alphas),
        "perturbation": config.perturbation,
        "reserve_target": config.reserve_target,
        "seed": config.seed,
        "switch_off": list(config.switch_off),
        "revised_controllers": list(config.revised_controllers),
        "policy": config.policy,
    }
    return StudyReport(config=cfg_echo, cells=tuple(cells), scenarios=tuple(results))
