"""Bounded-variable revised simplex with product-form basis updates.

The solver runs two phases from a crash basis: slacks are made basic and
artificial columns are attached only to rows the crash point violates, so
phase 1 minimizes total artificial mass and phase 2 re-prices the true
objective from the feasible basis.  The basis inverse is held as a sparse
LU factorization plus product-form eta vectors and is refactorized
periodically (and always before a status is declared, so optimality and
unboundedness are confirmed on fresh factors).  The ratio test is a
two-pass Harris variant that admits bound-flip steps; when the objective
stalls long enough on degenerate pivots the engine falls back to Bland's
rule until progress resumes, which guarantees termination on the heavily
degenerate storage-balance structures this package produces.

Dual convention (minimization): a `<=` row carries a nonpositive dual, a
`>=` row a nonnegative one, equalities are free; duals of maximization
models are reported against the stated objective, i.e. with flipped sign
relative to the internal minimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from .model import (
    INFEASIBLE,
    KIND_CONTINUOUS,
    OPTIMAL,
    UNBOUNDED,
    LpModel,
    MalformedModel,
    Solution,
)

__all__ = ["SimplexOptions", "SimplexStalled", "solve_lp", "solve_relaxation", "verify_kkt"]

_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3


@dataclass
class SimplexOptions:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-9
    pivot_tol: float = 1e-9
    refactor_every: int = 100
    stall_limit: int = 1000
    max_iterations: int | None = None


class SimplexStalled(RuntimeError):
    """Iteration budget exhausted or numerical breakdown."""


def solve_lp(model: LpModel, tol: float = 1e-7, options: SimplexOptions | None = None) -> Solution:
    """Solve a continuous LP; infeasible/unbounded come back as statuses."""
    for v in model.variables:
        if v.kind != KIND_CONTINUOUS:
            raise MalformedModel(f"variable {v.name!r} is not continuous; use solve_milp")
    return solve_relaxation(model, None, tol, options)


def solve_relaxation(
    model: LpModel,
    bound_overrides: Mapping[int, tuple[float, float]] | None,
    tol: float = 1e-7,
    options: SimplexOptions | None = None,
) -> Solution:
    """Solve ignoring integrality, optionally with per-variable bound overrides."""
    opts = replace(options) if options is not None else SimplexOptions(feas_tol=tol)
    return _Engine(model, bound_overrides, opts).run()


class _Engine:
    def __init__(
        self,
        model: LpModel,
        overrides: Mapping[int, tuple[float, float]] | None,
        opts: SimplexOptions,
    ) -> None:
        self.opts = opts
        self.n = model.n_variables
        self.m = model.n_constraints
        self.factor = 1.0 if model.sense == "min" else -1.0
        self.const = model.objective_constant
        lo, hi = model.bounds_arrays()
        if overrides:
            for idx, (a, b) in overrides.items():
                lo[idx], hi[idx] = a, b
        if np.any(lo > hi):
            raise MalformedModel("bound override with lower > upper")
        self.c_orig = model.objective_vector()
        self.b = model.rhs_vector()
        self.relations = [c.relation for c in model.constraints]
        rows, cols, data = model.matrix_coo()
        self._A_struct = sp.csc_matrix((data, (rows, cols)), shape=(self.m, self.n))
        self._lo_struct = lo
        self._hi_struct = hi
        self.iterations = 0

    # -- setup ----------------------------------------------------------

    def _setup(self) -> None:
        n, m = self.n, self.m
        slack_lo = np.empty(m)
        slack_hi = np.empty(m)
        for i, rel in enumerate(self.relations):
            if rel == "<=":
                slack_lo[i], slack_hi[i] = 0.0, math.inf
            elif rel == ">=":
                slack_lo[i], slack_hi[i] = -math.inf, 0.0
            else:
                slack_lo[i], slack_hi[i] = 0.0, 0.0

        lo = self._lo_struct
        hi = self._hi_struct
        x_struct = np.zeros(n)
        stat_struct = np.full(n, _FREE, dtype=np.int8)
        for j in range(n):
            lj, uj = lo[j], hi[j]
            if math.isfinite(lj) and (not math.isfinite(uj) or abs(lj) <= abs(uj)):
                x_struct[j], stat_struct[j] = lj, _AT_LOWER
            elif math.isfinite(uj):
                x_struct[j], stat_struct[j] = uj, _AT_UPPER

        resid = self.b - self._A_struct @ x_struct

        basis = np.empty(m, dtype=np.int64)
        slack_x = np.zeros(m)
        slack_stat = np.full(m, _BASIC, dtype=np.int8)
        art_rows: list[int] = []
        art_signs: list[float] = []
        art_vals: list[float] = []
        for i in range(m):
            r = resid[i]
            if slack_lo[i] <= r <= slack_hi[i]:
                basis[i] = n + i
                slack_x[i] = r
            else:
                clamped = slack_lo[i] if r < slack_lo[i] else slack_hi[i]
                slack_x[i] = clamped
                slack_stat[i] = _AT_LOWER if clamped == slack_lo[i] else _AT_UPPER
                gap = r - clamped
                art_rows.append(i)
                art_signs.append(1.0 if gap > 0 else -1.0)
                art_vals.append(abs(gap))
                basis[i] = n + m + len(art_rows) - 1

        k = len(art_rows)
        slack_mat = sp.identity(m, format="csc")
        blocks = [self._A_struct, slack_mat]
        if k:
            art = sp.csc_matrix(
                (np.asarray(art_signs), (np.asarray(art_rows), np.arange(k))),
                shape=(m, k),
            )
            blocks.append(art)
        self.A = sp.hstack(blocks, format="csc")
        self.AT = self.A.T.tocsr()
        self.N = n + m + k
        self.n_art = k
        self.lo = np.concatenate([lo, slack_lo, np.zeros(k)])
        self.hi = np.concatenate([hi, slack_hi, np.full(k, math.inf)])
        self.x = np.concatenate([x_struct, slack_x, np.asarray(art_vals)])
        self.stat = np.concatenate(
            [stat_struct, slack_stat, np.full(k, _BASIC, dtype=np.int8)]
        )
        self.basis = basis
        self.c2 = np.concatenate([self.factor * self.c_orig, np.zeros(m + k)])
        self.etas: list[tuple[int, np.ndarray, float]] = []
        self._movable = self.hi > self.lo
        self._refactor()

    # -- basis algebra ----------------------------------------------------

    def _refactor(self) -> None:
        B = self.A[:, self.basis].tocsc()
        try:
            self.lu = spla.splu(B)
        except RuntimeError as exc:  # pragma: no cover - numerical breakdown
            raise SimplexStalled(f"basis factorization failed: {exc}") from exc
        self.etas = []
        xn = self.x.copy()
        xn[self.basis] = 0.0
        resid = self.b - self.A @ xn
        self.x[self.basis] = self.lu.solve(resid)

    def _ftran(self, v: np.ndarray) -> np.ndarray:
        out = self.lu.solve(v)
        for r, idx, vals, wr in self.etas:
            a = out[r] / wr
            if a != 0.0:
                out[idx] -= a * vals
            out[r] = a
        return out

    def _btran(self, v: np.ndarray) -> np.ndarray:
        out = v.copy()
        for r, idx, vals, wr in reversed(self.etas):
            s = vals @ out[idx]
            out[r] = (out[r] - s + wr * out[r]) / wr
        return self.lu.solve(out, trans="T")

    def _column(self, j: int) -> np.ndarray:
        s, e = self.A.indptr[j], self.A.indptr[j + 1]
        col = np.zeros(self.m)
        col[self.A.indices[s:e]] = self.A.data[s:e]
        return col

    # -- pricing ----------------------------------------------------------

    def _violations(self, d: np.ndarray) -> np.ndarray:
        viol = np.zeros(self.N)
        movable = self._movable
        mask = (self.stat == _AT_LOWER) & movable
        viol[mask] = -d[mask]
        mask = (self.stat == _AT_UPPER) & movable
        viol[mask] = d[mask]
        mask = self.stat == _FREE
        viol[mask] = np.abs(d[mask])
        return viol

    # -- main loop ----------------------------------------------------------

    def _iterate(self, c: np.ndarray, phase: int, max_iter: int) -> str:
        opts = self.opts
        cost_scale = float(np.max(np.abs(c))) if c.size else 0.0
        dtol = opts.opt_tol * (1.0 + cost_scale)
        stall = 0
        bland = False
        while True:
            if self.iterations >= max_iter:
                raise SimplexStalled(
                    f"iteration budget {max_iter} exhausted in phase {phase}"
                )
            self.iterations += 1
            if len(self.etas) >= opts.refactor_every:
                self._refactor()

            y = self._btran(c[self.basis])
            d = c - self.AT @ y
            viol = self._violations(d)
            eligible = viol > dtol
            if not eligible.any():
                if self.etas:
                    self._refactor()
                    continue
                return OPTIMAL

            if bland:
                q = int(np.flatnonzero(eligible)[0])
            else:
                q = int(np.argmax(viol))
            if self.stat[q] == _AT_LOWER:
                sigma = 1.0
            elif self.stat[q] == _AT_UPPER:
                sigma = -1.0
            else:
                sigma = 1.0 if d[q] < 0 else -1.0

            w = self._ftran(self._column(q))
            support = np.flatnonzero(w)
            step = self._ratio_test(q, sigma, w, support, bland)
            if step is None:
                if phase == 1:
                    raise SimplexStalled("phase-1 direction unbounded")
                if self.etas:
                    self._refactor()
                    continue
                return UNBOUNDED

            kind, theta, r, leave_to = step
            progress = abs(d[q]) * theta
            touched = self.basis[support]
            if kind == "flip":
                self.x[touched] -= sigma * theta * w[support]
                self.x[q] = self.hi[q] if self.stat[q] == _AT_LOWER else self.lo[q]
                self.stat[q] = _AT_UPPER if self.stat[q] == _AT_LOWER else _AT_LOWER
            else:
                new_xq = self.x[q] + sigma * theta
                self.x[touched] -= sigma * theta * w[support]
                leaving = self.basis[r]
                self.x[leaving] = leave_to
                self.stat[leaving] = (
                    _AT_LOWER if leave_to == self.lo[leaving] else _AT_UPPER
                )
                self.basis[r] = q
                self.stat[q] = _BASIC
                self.x[q] = new_xq
                self.etas.append((r, support, w[support].copy(), w[r]))

            if progress > 1e-12 * (1.0 + abs(float(c[self.basis] @ self.x[self.basis]))):
                stall = 0
                bland = False
            else:
                stall += 1
                if stall > opts.stall_limit:
                    bland = True

    def _ratio_test(
        self, q: int, sigma: float, w: np.ndarray, support: np.ndarray, bland: bool
    ) -> tuple[str, float, int, float] | None:
        opts = self.opts
        delta = sigma * w[support]
        rows = self.basis[support]
        xB = self.x[rows]
        loB = self.lo[rows]
        hiB = self.hi[rows]
        dec = (delta > opts.pivot_tol) & (loB > -math.inf)
        inc = (delta < -opts.pivot_tol) & (hiB < math.inf)
        theta_bound = self.hi[q] - self.lo[q]
        if not math.isfinite(theta_bound):
            theta_bound = math.inf

        blockers = dec | inc
        if not blockers.any():
            if theta_bound == math.inf:
                return None
            return ("flip", theta_bound, -1, 0.0)

        strict = np.full(support.size, math.inf)
        strict[dec] = (xB[dec] - loB[dec]) / delta[dec]
        strict[inc] = (xB[inc] - hiB[inc]) / delta[inc]
        np.maximum(strict, 0.0, out=strict)

        if bland:
            tmin = float(strict.min())
            if theta_bound <= tmin:
                return ("flip", theta_bound, -1, 0.0)
            ties = np.flatnonzero(blockers & (strict <= tmin + 1e-12))
            k = int(ties[np.argmin(rows[ties])])
        else:
            slack = opts.feas_tol * (1.0 + np.abs(xB))
            relaxed = np.full(support.size, math.inf)
            relaxed[dec] = (xB[dec] - loB[dec] + slack[dec]) / delta[dec]
            relaxed[inc] = (xB[inc] - hiB[inc] - slack[inc]) / delta[inc]
            np.maximum(relaxed, 0.0, out=relaxed)
            tmax = float(relaxed.min())
            cand = np.flatnonzero(blockers & (strict <= tmax))
            if cand.size == 0:
                cand = np.flatnonzero(blockers)
                k = int(cand[np.argmin(strict[cand])])
            else:
                k = int(cand[np.argmax(np.abs(delta[cand]))])
            if theta_bound <= strict[k]:
                return ("flip", theta_bound, -1, 0.0)
        theta = float(strict[k])
        r = int(support[k])
        leave_to = self.lo[self.basis[r]] if delta[k] > 0 else self.hi[self.basis[r]]
        return ("pivot", theta, r, float(leave_to))

    # -- driver ----------------------------------------------------------

    def run(self) -> Solution:
        if self.m == 0:
            return self._solve_unconstrained()
        self._setup()
        opts = self.opts
        max_iter = (
            opts.max_iterations
            if opts.max_iterations is not None
            else 100_000 + 25 * (self.m + self.n)
        )
        if self.n_art:
            c1 = np.zeros(self.N)
            c1[self.n + self.m :] = 1.0
            status = self._iterate(c1, 1, max_iter)
            if status != OPTIMAL:  # pragma: no cover - defensive
                raise SimplexStalled("phase 1 ended without optimum")
            art = slice(self.n + self.m, self.N)
            mass = float(np.sum(self.x[art][self.x[art] > 0]))
            if mass > opts.feas_tol * (1.0 + float(np.max(np.abs(self.b), initial=0.0))):
                return Solution(INFEASIBLE, iterations=self.iterations)
            self.hi[art] = 0.0
            self._movable = self.hi > self.lo
            nonbasic_art = (self.stat[art] != _BASIC)
            idx = np.arange(self.n + self.m, self.N)[nonbasic_art]
            self.x[idx] = 0.0
            self.stat[idx] = _AT_LOWER
        status = self._iterate(self.c2, 2, max_iter)
        if status != OPTIMAL:
            return Solution(status, iterations=self.iterations)
        return self._finalize()

    def _solve_unconstrained(self) -> Solution:
        c = self.factor * self.c_orig
        x = np.zeros(self.n)
        for j in range(self.n):
            lj, uj = self._lo_struct[j], self._hi_struct[j]
            if c[j] > 0:
                if not math.isfinite(lj):
                    return Solution(UNBOUNDED)
                x[j] = lj
            elif c[j] < 0:
                if not math.isfinite(uj):
                    return Solution(UNBOUNDED)
                x[j] = uj
            else:
                x[j] = lj if math.isfinite(lj) else (uj if math.isfinite(uj) else 0.0)
        obj = float(self.c_orig @ x + self.const)
        return Solution(OPTIMAL, obj, x, np.zeros(0), self.factor * c.copy(), 0)

    def _finalize(self) -> Solution:
        self._refactor()
        y = self._btran(self.c2[self.basis])
        d = self.c2 - self.AT @ y
        x_struct = self.x[: self.n].copy()
        obj = float(self.c_orig @ x_struct + self.const)
        return Solution(
            OPTIMAL,
            obj,
            x_struct,
            self.factor * y,
            self.factor * d[: self.n],
            self.iterations,
        )


def verify_kkt(model: LpModel, sol: Solution, tol: float = 1e-6) -> dict[str, float]:
    """Recompute optimality conditions from scratch; returns max violations.

    Keys: primal, bounds, dual_sign, stationarity, complementarity, gap.
    The gap is |c.x - (y.b + d.x)| scaled by 1 + |objective|.
    """
    if sol.status != OPTIMAL or sol.x is None:
        raise ValueError("verify_kkt needs an optimal solution")
    factor = 1.0 if model.sense == "min" else -1.0
    lo, hi = model.bounds_arrays()
    c = factor * model.objective_vector()
    y = factor * np.asarray(sol.duals, dtype=float)
    d = factor * np.asarray(sol.reduced_costs, dtype=float)
    x = np.asarray(sol.x, dtype=float)
    rows, cols, data = model.matrix_coo()
    A = sp.csr_matrix((data, (rows, cols)), shape=(model.n_constraints, model.n_variables))
    ax = A @ x
    b = model.rhs_vector()

    primal = 0.0
    dual_sign = 0.0
    compl_row = 0.0
    for i, con in enumerate(model.constraints):
        scale = 1.0 + abs(b[i]) + abs(ax[i])
        r = ax[i] - b[i]
        if con.relation == "<=":
            primal = max(primal, r / scale)
            dual_sign = max(dual_sign, y[i])
            compl_row = max(compl_row, abs(y[i] * min(0.0, r)) / scale)
        elif con.relation == ">=":
            primal = max(primal, -r / scale)
            dual_sign = max(dual_sign, -y[i])
            compl_row = max(compl_row, abs(y[i] * max(0.0, r)) / scale)
        else:
            primal = max(primal, abs(r) / scale)

    bound_v = 0.0
    compl_col = 0.0
    dual_col = 0.0
    for j in range(model.n_variables):
        scale = 1.0 + abs(x[j])
        if math.isfinite(lo[j]):
            bound_v = max(bound_v, (lo[j] - x[j]) / scale)
        if math.isfinite(hi[j]):
            bound_v = max(bound_v, (x[j] - hi[j]) / scale)
        at_lo = math.isfinite(lo[j]) and x[j] - lo[j] <= tol * scale
        at_hi = math.isfinite(hi[j]) and hi[j] - x[j] <= tol * scale
        if at_lo and at_hi:
            continue
        if at_lo:
            dual_col = max(dual_col, -d[j])
        elif at_hi:
            dual_col = max(dual_col, d[j])
        else:
            compl_col = max(compl_col, abs(d[j]))

    stationarity = float(np.max(np.abs(c - A.T @ y - d), initial=0.0))
    cx = float(c @ x)
    dual_obj = float(y @ b + d @ x)
    gap = abs(cx - dual_obj) / (1.0 + abs(cx))
    return {
        "primal": float(primal),
        "bounds": float(bound_v),
        "dual_sign": float(max(dual_sign, dual_col)),
        "stationarity": stationarity,
        "complementarity": float(max(compl_row, compl_col)),
        "gap": gap,
    }
