"""Equilibrium and efficiency analysis for single-commodity routing games."""

from .costs import Affine, CostFunction, PiecewiseLinear, Polynomial, cost_from_json, cost_to_json
from .errors import (
    BisectionFailure,
    ClassificationConflict,
    DegenerateSegmentWarning,
    GridExceedsBreakpointMax,
    NegativeLoad,
    NoPath,
    NonConvergence,
    NotSP,
    PathExplosion,
    PoakitError,
    SignViolation,
    SupportSearchExhausted,
)
from .network import (
    Edge,
    Network,
    PathSet,
    SPLeaf,
    SPParallel,
    SPSeries,
    decompose_series_parallel,
    dump_network,
    enumerate_paths,
    load_network,
)
from .equilibrium import (
    EquilibriumSolution,
    OptimumSolution,
    RegularityReport,
    WardropReport,
    check_regularity,
    solve_affine_exact,
    solve_equilibrium,
    solve_optimum,
    sp_equilibrium,
    verify_wardrop,
)
from .parametric import (
    AffineTrace,
    Breakpoint,
    TraceSegment,
    optimum_breakpoints,
    segment_social_costs,
    segment_solution,
    trace_affine,
    trace_from_json,
    trace_to_completion,
    trace_to_json,
)
from .poa import (
    PoACurve,
    PoAMaximum,
    PoAPiece,
    PoAPoint,
    SweepRow,
    active_set_hash,
    classify_segments,
    compute_poa,
    find_poa_max,
    sweep_csv_text,
    sweep_poa,
    write_sweep_csv,
)

__version__ = "0.1.0"
