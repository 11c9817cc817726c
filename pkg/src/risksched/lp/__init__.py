"""Embedded sparse LP/MILP layer: model container, simplex, branch and bound."""

from .model import (
    KIND_BINARY,
    KIND_CONTINUOUS,
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    Constraint,
    LpModel,
    MalformedModel,
    Solution,
    VariableRef,
    canonical_dump,
    parse_model,
    write_lp_format,
)
from .simplex import SimplexOptions, solve_lp, verify_kkt
from .branch_bound import NodeLimitExceeded, solve_milp
