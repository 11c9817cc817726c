"""Branch and bound over binary variables on top of the simplex.

Depth-first with periodic best-bound restarts; branching picks the most
fractional binary.  Before branching, each node tries a cheap repair: the
exclusivity binaries this package produces carry no objective weight, so a
rounded assignment that satisfies the constraints at the node's continuous
point closes the node exactly at its relaxation bound.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .model import (
    INFEASIBLE,
    KIND_BINARY,
    OPTIMAL,
    UNBOUNDED,
    LpModel,
    Solution,
)
from .simplex import SimplexOptions, solve_lp, solve_relaxation

__all__ = ["NodeLimitExceeded", "solve_milp"]


class NodeLimitExceeded(RuntimeError):
    """Search budget exhausted before the gap closed; carries the incumbent."""

    def __init__(self, message: str, best: Solution | None) -> None:
        super().__init__(message)
        self.best = best


def _constraints_satisfied(
    A: sp.csr_matrix, model: LpModel, x: np.ndarray, feas_tol: float
) -> bool:
    ax = A @ x
    for i, con in enumerate(model.constraints):
        scale = feas_tol * (1.0 + abs(con.rhs) + abs(ax[i]))
        r = ax[i] - con.rhs
        if con.relation == "<=" and r > scale:
            return False
        if con.relation == ">=" and r < -scale:
            return False
        if con.relation == "=" and abs(r) > scale:
            return False
    return True


def solve_milp(
    model: LpModel,
    tol: float = 1e-7,
    gap: float = 1e-6,
    node_limit: int = 20000,
    options: SimplexOptions | None = None,
) -> Solution:
    """Solve a model whose integrality lives in declared binary variables.

    The returned point is integral within tol and within the relative gap
    of the best bound; its duals come from the final fixed-binary LP.
    """
    binaries = [v.index for v in model.variables if v.kind == KIND_BINARY]
    if not binaries:
        return solve_lp(model, tol, options)
    bin_idx = np.array(binaries, dtype=np.int64)

    sense = 1.0 if model.sense == "min" else -1.0
    c = model.objective_vector()
    rows, cols, data = model.matrix_coo()
    A = sp.csr_matrix((data, (rows, cols)), shape=(model.n_constraints, model.n_variables))
    int_tol = max(tol, 1e-9)

    incumbent_x: np.ndarray | None = None
    incumbent_key = math.inf  # objective in minimization space
    nodes_done = 0
    total_iterations = 0

    root_unbounded = False
    # stack entries: (bound_key, overrides)
    stack: list[tuple[float, dict[int, tuple[float, float]]]] = [(-math.inf, {})]

    def key_of(objective: float) -> float:
        return sense * objective

    def try_repair(sol: Solution, overrides: Mapping[int, tuple[float, float]]) -> None:
        """Round binaries and accept the point if it stays feasible."""
        nonlocal incumbent_x, incumbent_key
        x = sol.x
        up = x.copy()
        up[bin_idx] = np.where(x[bin_idx] > int_tol, 1.0, 0.0)
        near = x.copy()
        near[bin_idx] = np.round(x[bin_idx])
        for cand in (up, near):
            ok = True
            for j, (lo_j, hi_j) in overrides.items():
                if cand[j] < lo_j - int_tol or cand[j] > hi_j + int_tol:
                    ok = False
                    break
            if not ok or not _constraints_satisfied(A, model, cand, tol):
                continue
            cand_key = key_of(float(c @ cand + model.objective_constant))
            if cand_key < incumbent_key - 1e-12 * (1.0 + abs(incumbent_key)):
                incumbent_x = cand
                incumbent_key = cand_key

    while stack:
        nodes_done += 1
        if nodes_done > node_limit:
            best = _polish(model, incumbent_x, bin_idx, tol, options) if incumbent_x is not None else None
            raise NodeLimitExceeded(
                f"node limit {node_limit} reached with gap still open", best
            )
        # periodic best-bound restart keeps the dive from chasing a bad subtree
        if nodes_done % 16 == 0 and len(stack) > 1:
            pick = min(range(len(stack)), key=lambda i: stack[i][0])
            stack.append(stack.pop(pick))
        parent_bound, overrides = stack.pop()
        if incumbent_x is not None and parent_bound >= incumbent_key - gap * (
            1.0 + abs(incumbent_key)
        ):
            continue

        sol = solve_relaxation(model, overrides, tol, options)
        total_iterations += sol.iterations
        if sol.status == INFEASIBLE:
            continue
        if sol.status == UNBOUNDED:
            root_unbounded = True
            break
        bound_key = key_of(sol.objective)
        if incumbent_x is not None and bound_key >= incumbent_key - gap * (
            1.0 + abs(incumbent_key)
        ):
            continue

        frac = np.abs(sol.x[bin_idx] - np.round(sol.x[bin_idx]))
        worst = int(np.argmax(frac))
        if frac[worst] <= int_tol:
            if bound_key < incumbent_key:
                incumbent_x = sol.x.copy()
                incumbent_key = bound_key
            continue

        try_repair(sol, overrides)
        if incumbent_x is not None and bound_key >= incumbent_key - 1e-12 * (
            1.0 + abs(incumbent_key)
        ):
            continue  # repair closed this node at its own bound

        j = int(bin_idx[worst])
        value = sol.x[j]
        first, second = (1.0, 0.0) if value >= 0.5 else (0.0, 1.0)
        far = dict(overrides)
        far[j] = (second, second)
        near_child = dict(overrides)
        near_child[j] = (first, first)
        stack.append((bound_key, far))
        stack.append((bound_key, near_child))  # explored first

    if root_unbounded:
        return Solution(UNBOUNDED, iterations=total_iterations)
    if incumbent_x is None:
        return Solution(INFEASIBLE, iterations=total_iterations)
    out = _polish(model, incumbent_x, bin_idx, tol, options)
    out.iterations = total_iterations + out.iterations
    return out


def _polish(
    model: LpModel,
    x: np.ndarray,
    bin_idx: np.ndarray,
    tol: float,
    options: SimplexOptions | None,
) -> Solution:
    """Re-solve with binaries pinned to the incumbent pattern.

    Gives exact 0/1 values, a clean vertex for the continuous part, and
    the fixed-relaxation duals.
    """
    overrides = {int(j): (float(round(x[j])), float(round(x[j]))) for j in bin_idx}
    sol = solve_relaxation(model, overrides, tol, options)
    if sol.status != OPTIMAL:  # pragma: no cover - incumbent was feasible
        raise RuntimeError("incumbent pattern failed to re-solve")
    return sol
