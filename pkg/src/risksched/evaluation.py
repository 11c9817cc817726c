"""Tail-risk oracle and stochastic-value metrics.

The CVaR oracle sorts costs and averages the worst 1-alpha probability
mass, putting fractional weight on the boundary atom -- the discrete
convention consistent with minimizing threshold + (1/(1-alpha)) E[cost -
threshold]+ over the threshold.  Everything downstream (constraint
verification, metric reports, frontier rows) recomputes CVaR through this
oracle rather than trusting the monolith's threshold encoding.

Metric conventions (minimization orientation throughout):
    EVPI      = E[SP_eps] - WS          >= 0 against the risk-neutral SP
    VSS       = EEV - E[SP_eps]         may go negative when eps binds
    VSS_CVaR  = VSS + (CVaR_inf - CVaR_eps) + (E[SP_inf] - E[SP_eps])
"""

from __future__ import annotations

import concurrent.futures
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .lp.model import INFEASIBLE, OPTIMAL, Solution
from .markets import Market, PriceSeries
from .scenarios import ScenarioSet, mean_scenario, single_scenario
from .stochastic import (
    ModelTemplate,
    RiskConfig,
    StagedSolution,
    StochasticProgram,
    assemble,
    extract_solution,
    fix_first_stage,
    solve_program,
)
from .markets import TimeGrid

__all__ = [
    "BadProbabilities",
    "MismatchedScenarioSets",
    "oracle_cvar",
    "WsReport",
    "solve_ws",
    "EevReport",
    "solve_eev",
    "MetricReport",
    "compute_metrics",
    "FrontierPoint",
    "FrontierReport",
    "frontier_sweep",
    "write_frontier_csv",
]


class BadProbabilities(ValueError):
    pass


class MismatchedScenarioSets(ValueError):
    pass


def oracle_cvar(
    values: Sequence[float] | np.ndarray,
    probs: Sequence[float] | np.ndarray | None = None,
    alpha: float = 0.95,
) -> float:
    """Expected cost over the worst 1-alpha tail of a discrete distribution."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise BadProbabilities("empty distribution")
    if probs is None:
        p = np.full(v.size, 1.0 / v.size)
    else:
        p = np.asarray(probs, dtype=float).ravel()
    if p.size != v.size:
        raise BadProbabilities(f"{p.size} probabilities for {v.size} values")
    if np.any(p < 0):
        raise BadProbabilities("negative probability")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise BadProbabilities(f"probabilities sum to {p.sum()!r}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    tail = 1.0 - alpha
    order = np.argsort(-v, kind="stable")
    ps = p[order]
    room = tail - np.concatenate(([0.0], np.cumsum(ps)[:-1]))
    w = np.clip(np.minimum(ps, room), 0.0, None)
    return float((w @ v[order]) / tail)


# -- wait-and-see ------------------------------------------------------------


@dataclass
class WsReport:
    """Perfect-information benchmark: one clairvoyant solve per scenario."""

    value: float | None
    per_scenario_objectives: tuple[float | None, ...]
    statuses: tuple[str, ...]
    first_stage: tuple[dict[str, float] | None, ...]

    @property
    def all_optimal(self) -> bool:
        return all(s == OPTIMAL for s in self.statuses)


def _ws_point(args) -> tuple[int, str, float | None, dict[str, float] | None]:
    template, grid, prices, scenarios, s, tol, gap = args
    program = assemble(template, grid, prices, single_scenario(scenarios, s), RiskConfig())
    sol = solve_program(program, tol, gap)
    if sol.status != OPTIMAL:
        return s, sol.status, None, None
    staged = extract_solution(program, sol)
    return s, sol.status, float(sol.objective), staged.first_stage


def solve_ws(
    template: ModelTemplate,
    grid: TimeGrid,
    first_stage_prices: Mapping[Market, PriceSeries],
    scenarios: ScenarioSet,
    tol: float = 1e-7,
    gap: float = 1e-6,
    jobs: int = 1,
) -> WsReport:
    """Solve each scenario with its full trajectory known from the start."""
    args = [
        (template, grid, dict(first_stage_prices), scenarios, s, tol, gap)
        for s in range(scenarios.n_scenarios)
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ws_point, args))
    else:
        results = [_ws_point(a) for a in args]
    results.sort(key=lambda r: r[0])
    statuses = tuple(r[1] for r in results)
    objs = tuple(r[2] for r in results)
    fs = tuple(r[3] for r in results)
    value = None
    if all(s == OPTIMAL for s in statuses):
        value = float(np.dot(scenarios.probabilities, [o for o in objs]))
    return WsReport(value, objs, statuses, fs)


# -- expected-value problem ---------------------------------------------------


@dataclass
class EevReport:
    """Performance of the mean-scenario first stage on the true set.

    Recourse can be infeasible; the value then degrades to +inf with the
    flag set and the offending scenario ids listed.
    """

    value: float
    recourse_infeasible: bool
    infeasible_scenarios: tuple[int, ...]
    ev_first_stage: dict[str, float]


def solve_eev(
    template: ModelTemplate,
    grid: TimeGrid,
    first_stage_prices: Mapping[Market, PriceSeries],
    scenarios: ScenarioSet,
    tol: float = 1e-7,
    gap: float = 1e-6,
) -> EevReport:
    ev_program = assemble(
        template, grid, first_stage_prices, mean_scenario(scenarios), RiskConfig()
    )
    ev_sol = solve_program(ev_program, tol, gap)
    if ev_sol.status != OPTIMAL:
        raise RuntimeError(f"expected-value problem ended {ev_sol.status}")
    ev_first = extract_solution(ev_program, ev_sol).first_stage

    bad: list[int] = []
    total = 0.0
    for s in range(scenarios.n_scenarios):
        program = assemble(
            template, grid, first_stage_prices, single_scenario(scenarios, s), RiskConfig()
        )
        fixed = fix_first_stage(program, ev_first)
        sol = solve_program(fixed, tol, gap)
        if sol.status != OPTIMAL:
            bad.append(s)
        else:
            total += float(scenarios.probabilities[s]) * float(sol.objective)
    if bad:
        return EevReport(math.inf, True, tuple(bad), ev_first)
    return EevReport(total, False, (), ev_first)


# -- summary metrics ---------------------------------------------------------


@dataclass
class MetricReport:
    expected_cost: float
    cvar: float
    ws: float
    eev: float
    evpi: float
    vss: float
    vss_cvar: float
    market_cost_ratio: float | None
    per_scenario_cost: tuple[float, ...]
    alpha: float
    epsilon: float

    def to_json(self, path: str | Path | None = None) -> str:
        payload = {
            "expected_cost": self.expected_cost,
            "cvar": self.cvar,
            "ws": self.ws,
            "eev": self.eev,
            "evpi": self.evpi,
            "vss": self.vss,
            "vss_cvar": self.vss_cvar,
            "market_cost_ratio": self.market_cost_ratio,
            "per_scenario_cost": list(self.per_scenario_cost),
            "alpha": self.alpha,
            "epsilon": "inf" if math.isinf(self.epsilon) else self.epsilon,
        }
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def market_operating_cost(
    program: StochasticProgram, sol: Solution, market: Market
) -> float:
    """Expected price-weighted net draw from one market over both stages."""
    x = sol.x
    total = 0.0
    for idx, coef in program.fs_market_terms.get(market, ()):
        total += coef * x[idx]
    for s in range(program.n_scenarios):
        contrib = 0.0
        for idx, coef in program.ss_market_terms[s].get(market, ()):
            contrib += coef * x[idx]
        total += float(program.pi[s]) * contrib
    return float(total)


def compute_metrics(
    sp_eps: tuple[StochasticProgram, Solution],
    sp_inf: tuple[StochasticProgram, Solution],
    ws: WsReport | float,
    eev: EevReport | float,
) -> MetricReport:
    """Assemble the summary table row for one risk bound."""
    prog_e, sol_e = sp_eps
    prog_i, sol_i = sp_inf
    if prog_e.scenario_fingerprint != prog_i.scenario_fingerprint:
        raise MismatchedScenarioSets("risk-bounded and neutral solves use different sets")
    staged_e = extract_solution(prog_e, sol_e)
    staged_i = extract_solution(prog_i, sol_i)
    ws_value = ws.value if isinstance(ws, WsReport) else float(ws)
    if ws_value is None:
        raise ValueError("wait-and-see report has no value (scenario failures)")
    eev_value = eev.value if isinstance(eev, EevReport) else float(eev)

    expected_e = staged_e.objective
    expected_i = staged_i.objective
    evpi = expected_e - ws_value
    vss = eev_value - expected_e
    vss_cvar = (
        vss
        + (staged_i.realized_cvar - staged_e.realized_cvar)
        + (expected_i - expected_e)
    )
    j_da = market_operating_cost(prog_e, sol_e, Market.DA)
    j_id = market_operating_cost(prog_e, sol_e, Market.ID)
    ratio = None if abs(j_da) < 1e-9 * (1.0 + abs(j_id)) else j_id / j_da
    return MetricReport(
        expected_cost=expected_e,
        cvar=staged_e.realized_cvar,
        ws=ws_value,
        eev=eev_value,
        evpi=evpi,
        vss=vss,
        vss_cvar=vss_cvar,
        market_cost_ratio=ratio,
        per_scenario_cost=tuple(float(v) for v in staged_e.v),
        alpha=prog_e.risk.alpha,
        epsilon=prog_e.risk.epsilon,
    )


# -- risk-reward frontier ------------------------------------------------------


@dataclass(frozen=True)
class FrontierPoint:
    epsilon: float
    expected_cost: float | None
    cvar: float | None
    status: str


@dataclass
class FrontierReport:
    points: tuple[FrontierPoint, ...]

    def feasible_points(self) -> list[FrontierPoint]:
        return [p for p in self.points if p.status == OPTIMAL]


def _frontier_point(args) -> FrontierPoint:
    template, grid, prices, scenarios, eps, alpha, include_fs, tol, gap = args
    risk = RiskConfig(alpha=alpha, epsilon=eps, include_first_stage_cost=include_fs)
    program = assemble(template, grid, prices, scenarios, risk)
    sol = solve_program(program, tol, gap)
    if sol.status != OPTIMAL:
        return FrontierPoint(eps, None, None, sol.status)
    staged = extract_solution(program, sol)
    return FrontierPoint(eps, staged.objective, staged.realized_cvar, OPTIMAL)


def frontier_sweep(
    template: ModelTemplate,
    grid: TimeGrid,
    first_stage_prices: Mapping[Market, PriceSeries],
    scenarios: ScenarioSet,
    eps_ladder: Sequence[float],
    alpha: float = 0.95,
    include_first_stage_cost: bool = False,
    tol: float = 1e-7,
    gap: float = 1e-6,
    jobs: int = 1,
) -> FrontierReport:
    """One independent solve per bound; points never warm-start each other."""
    ladder = [float(e) for e in eps_ladder]
    for a, b in zip(ladder, ladder[1:]):
        if b > a:
            raise ValueError("epsilon ladder must be sorted descending")
    args = [
        (
            template,
            grid,
            dict(first_stage_prices),
            scenarios,
            eps,
            alpha,
            include_first_stage_cost,
            tol,
            gap,
        )
        for eps in ladder
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            points = tuple(pool.map(_frontier_point, args))
    else:
        points = tuple(_frontier_point(a) for a in args)
    return FrontierReport(points)


def write_frontier_csv(report: FrontierReport, path: str | Path) -> None:
    lines = ["epsilon,expected_cost,cvar,status"]
    for p in report.points:
        eps = "inf" if math.isinf(p.epsilon) else repr(p.epsilon)
        exp = "" if p.expected_cost is None else repr(p.expected_cost)
        cv = "" if p.cvar is None else repr(p.cvar)
        lines.append(f"{eps},{exp},{cv},{p.status}")
    Path(path).write_text("\n".join(lines) + "\n")
