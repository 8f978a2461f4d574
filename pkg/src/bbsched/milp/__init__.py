from .model import (
    AdjustedParams,
    MilpModel,
    apply_fixings,
    build_model,
    compute_adjusted_params,
    decode,
    demand_over,
    plan_assignment,
    write_lp,
)
from .backends import (
    BranchBoundBackend,
    MilpInfeasible,
    ScipyMilpBackend,
    Solution,
    SolveLimits,
    get_backend,
)
from .hierarchical import HierarchicalResult, solve_hierarchical

__all__ = [
    "AdjustedParams",
    "MilpModel",
    "apply_fixings",
    "build_model",
    "compute_adjusted_params",
    "decode",
    "demand_over",
    "plan_assignment",
    "write_lp",
    "BranchBoundBackend",
    "MilpInfeasible",
    "ScipyMilpBackend",
    "Solution",
    "SolveLimits",
    "get_backend",
    "HierarchicalResult",
    "solve_hierarchical",
]
