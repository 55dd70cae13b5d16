"""Cascading-failure simulation for DC-modeled power grids.

Bridge-block tree partitioning, unified-control / AGC / droop equilibria,
primal-dual critical-failure detection, constraint-lifting mitigation, and an
N-k contingency study harness.
"""

from .netmodel import (
    BusRecord,
    DisturbanceVector,
    LineRecord,
    Network,
    build_network,
    deviation_bounds,
    incidence_matrix,
)
from .topology import (
    AreaMatrix,
    Partition,
    area_membership_matrix,
    associated_areas,
    bridge_block_decomposition,
    build_partition,
    find_bridges,
    is_tree_partition,
    switch_off_lines,
)
from .dcflow import (
    DispatchPoint,
    FlowSolution,
    connected_components,
    dc_opf,
    laplacian_solve,
    solve_dc_flow,
)
from .equilibria import (
    Equilibrium,
    EquilibriumProblem,
    FarkasCertificate,
    agc_equilibrium,
    check_feasibility,
    droop_equilibrium,
    make_problem,
    uc_equilibrium,
    verify_kkt,
)
from .lifting import (
    ExpandLoadBounds,
    LiftACE,
    LiftingPolicy,
    build_lifting_policy,
)
from .primaldual import (
    DetectorConfig,
    PrimalDualState,
    detect_critical,
    primal_dual_step,
    run_primal_dual,
)
from .cascade import (
    CascadeConfig,
    CascadeTrace,
    apply_lifting,
    line_outage_disturbance,
    run_cascade,
    trip_overloaded,
)
from .studies import (
    StudyConfig,
    StudyReport,
    perturb_load_profile,
    run_study,
    sample_nk_failures,
    scale_generation_reserve,
    scale_line_capacities,
)
from .caseio import (
    CaseDocument,
    case_to_network,
    emit_case_json,
    emit_report,
    parse_case_json,
    parse_case_matpower_subset,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
