"""Two-stage deterministic equivalents with an optional CVaR budget.

A model template describes one copy of the physical system over the grid,
with every variable tagged first or second stage.  Assembly instantiates
the second stage once per scenario (first-stage variables are shared, so
non-anticipativity holds by construction), materializes each scenario's
operating cost in an explicit variable, and, when the risk bound is
finite, attaches the linear tail-risk block

    cost_s - threshold <= excess_s,   excess_s >= 0,
    threshold + (1/(1-alpha)) * sum_s pi_s * excess_s <= epsilon.

The threshold variable is free: the reformulation drives it to an optimal
quantile without explicit bounds.  By default the budget applies to the
scenario-dependent second-stage cost only; the deterministic first-stage
cost can be folded in via the risk config, which shifts the distribution
by a constant for any fixed first stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .lp.branch_bound import solve_milp
from .lp.model import KIND_BINARY, KIND_CONTINUOUS, OPTIMAL, LpModel, Solution
from .lp.simplex import SimplexOptions, solve_lp
from .markets import Market, PriceSeries, TimeGrid
from .scenarios import ScenarioSet

__all__ = [
    "STAGE_FIRST",
    "STAGE_SECOND",
    "TemplateVar",
    "TemplateConstraint",
    "CashflowSlot",
    "ModelTemplate",
    "RiskConfig",
    "CvarBlock",
    "StageStructure",
    "StochasticProgram",
    "StagedSolution",
    "MisalignedScenarioSet",
    "TemplateStageViolation",
    "NotOptimal",
    "OutOfBounds",
    "assemble",
    "extract_solution",
    "fix_first_stage",
    "solve_program",
]

STAGE_FIRST = 1
STAGE_SECOND = 2


class MisalignedScenarioSet(ValueError):
    """Scenario set does not cover the template's uncertain price slots."""


class TemplateStageViolation(ValueError):
    """A first-stage element references second-stage variables."""


class NotOptimal(RuntimeError):
    pass


class OutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class TemplateVar:
    name: str
    lower: float
    upper: float
    kind: str
    stage: int


@dataclass(frozen=True)
class TemplateConstraint:
    name: str
    terms: tuple[tuple[int, float], ...]
    relation: str
    rhs: float


@dataclass(frozen=True)
class CashflowSlot:
    """Net grid draw (MW) priced at one (hour, market) cell."""

    hour: int
    market: Market
    stage: int
    terms: tuple[tuple[int, float], ...]


class ModelTemplate:
    """One system copy over a grid, ready for per-scenario instantiation."""

    def __init__(self, grid: TimeGrid, name: str = "template") -> None:
        self.grid = grid
        self.name = name
        self.vars: list[TemplateVar] = []
        self.constraints: list[TemplateConstraint] = []
        self.capital_terms: list[tuple[int, float]] = []
        self.cashflow: dict[tuple[int, Market], CashflowSlot] = {}
        self._by_name: dict[str, int] = {}

    def add_variable(
        self,
        name: str,
        lower: float = 0.0,
        upper: float = math.inf,
        kind: str = KIND_CONTINUOUS,
        stage: int = STAGE_SECOND,
    ) -> int:
        if name in self._by_name:
            raise ValueError(f"duplicate template variable {name!r}")
        if stage not in (STAGE_FIRST, STAGE_SECOND):
            raise ValueError(f"bad stage {stage}")
        self.vars.append(TemplateVar(name, float(lower), float(upper), kind, stage))
        self._by_name[name] = len(self.vars) - 1
        return len(self.vars) - 1

    def add_constraint(
        self,
        terms: Mapping[int, float],
        relation: str,
        rhs: float,
        name: str = "",
    ) -> None:
        merged: dict[int, float] = {}
        for pos, coef in terms.items():
            if not 0 <= pos < len(self.vars):
                raise ValueError(f"term index {pos} out of range in {name!r}")
            merged[pos] = merged.get(pos, 0.0) + float(coef)
        self.constraints.append(
            TemplateConstraint(
                name,
                tuple(sorted((p, c) for p, c in merged.items() if c != 0.0)),
                relation,
                float(rhs),
            )
        )

    def add_capital_term(self, pos: int, coef: float) -> None:
        self.capital_terms.append((pos, float(coef)))

    def set_cashflow(
        self, hour: int, market: Market, stage: int, terms: Mapping[int, float]
    ) -> None:
        key = (hour, market)
        if key in self.cashflow:
            raise ValueError(f"cashflow slot {key} already set")
        self.cashflow[key] = CashflowSlot(
            hour, market, stage, tuple(sorted(terms.items()))
        )

    def index(self, name: str) -> int:
        return self._by_name[name]

    def stage_of(self, pos: int) -> int:
        return self.vars[pos].stage

    def has_binaries(self) -> bool:
        return any(v.kind == KIND_BINARY for v in self.vars)


@dataclass(frozen=True)
class RiskConfig:
    """Tail-risk percentile and budget.  epsilon = inf disables the block."""

    alpha: float = 0.95
    epsilon: float = math.inf
    include_first_stage_cost: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if math.isnan(self.epsilon) or self.epsilon == -math.inf:
            raise ValueError(f"bad epsilon {self.epsilon}")

    @property
    def active(self) -> bool:
        return math.isfinite(self.epsilon)


@dataclass(frozen=True)
class CvarBlock:
    zeta_index: int
    eta_indices: tuple[int, ...]
    budget_row: int


@dataclass(frozen=True)
class StageStructure:
    first_stage: dict[str, int]
    per_scenario: tuple[dict[str, int], ...]


@dataclass(frozen=True)
class StochasticProgram:
    monolith: LpModel
    grid: TimeGrid
    template: ModelTemplate
    risk: RiskConfig
    pi: np.ndarray
    stages: StageStructure
    v_indices: tuple[int, ...]
    cvar: CvarBlock | None
    first_stage_cost_terms: tuple[tuple[int, float], ...]
    fs_market_terms: dict[Market, tuple[tuple[int, float], ...]]
    ss_market_terms: tuple[dict[Market, tuple[tuple[int, float], ...]], ...]
    scenario_fingerprint: str
    first_stage_prices: dict[Market, PriceSeries]
    scenarios: ScenarioSet

    @property
    def n_scenarios(self) -> int:
        return len(self.pi)


@dataclass
class StagedSolution:
    """Optimal point split back into stages, with audit-ready cost pieces."""

    status: str
    objective: float
    first_stage: dict[str, float]
    scenario_values: tuple[dict[str, float], ...]
    first_stage_cost: float
    v: np.ndarray
    pi: np.ndarray
    expected_second_stage: float
    realized_cvar: float
    alpha: float

    @property
    def expected_cost(self) -> float:
        return self.first_stage_cost + self.expected_second_stage

    def to_json(self, path: str | Path | None = None) -> str:
        payload = {
            "status": self.status,
            "objective": self.objective,
            "X": self.first_stage,
            "Y": [dict(sv) for sv in self.scenario_values],
            "v_s": [float(v) for v in self.v],
            "pi_s": [float(p) for p in self.pi],
            "first_stage_cost": self.first_stage_cost,
            "expected_cost": self.expected_cost,
            "cvar": self.realized_cvar,
            "alpha": self.alpha,
        }
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _check_alignment(
    template: ModelTemplate,
    grid: TimeGrid,
    first_stage_prices: Mapping[Market, PriceSeries],
    scenarios: ScenarioSet,
) -> tuple[list[CashflowSlot], list[CashflowSlot]]:
    if template.grid != grid:
        raise MisalignedScenarioSet("template was built for a different grid")
    fs_slots = [s for s in template.cashflow.values() if s.stage == STAGE_FIRST]
    ss_slots = [s for s in template.cashflow.values() if s.stage == STAGE_SECOND]
    for slot in fs_slots:
        series = first_stage_prices.get(slot.market)
        if series is None or not series.start <= slot.hour <= series.end:
            raise MisalignedScenarioSet(
                f"first-stage prices missing ({slot.hour}, {slot.market.value})"
            )
    if ss_slots:
        ss_markets = {s.market for s in ss_slots}
        hours = [s.hour for s in ss_slots]
        lo, hi = min(hours), max(hours)
        if set(scenarios.markets) != ss_markets:
            raise MisalignedScenarioSet(
                f"scenario markets {[m.value for m in scenarios.markets]} "
                f"!= template uncertain markets {[m.value for m in ss_markets]}"
            )
        if scenarios.start != lo or scenarios.start + scenarios.n_hours - 1 != hi:
            raise MisalignedScenarioSet(
                f"scenario span [{scenarios.start}, "
                f"{scenarios.start + scenarios.n_hours - 1}] != uncertain span [{lo}, {hi}]"
            )
    return fs_slots, ss_slots


def assemble(
    template: ModelTemplate,
    grid: TimeGrid,
    first_stage_prices: Mapping[Market, PriceSeries],
    scenarios: ScenarioSet,
    risk: RiskConfig | None = None,
) -> StochasticProgram:
    """Build the scenario-expanded monolith for the given risk bound."""
    risk = risk or RiskConfig()
    fs_slots, ss_slots = _check_alignment(template, grid, first_stage_prices, scenarios)
    for pos, _ in template.capital_terms:
        if template.stage_of(pos) != STAGE_FIRST:
            raise TemplateStageViolation(
                f"capital term on second-stage variable {template.vars[pos].name!r}"
            )
    for slot in fs_slots:
        for pos, _ in slot.terms:
            if template.stage_of(pos) != STAGE_FIRST:
                raise TemplateStageViolation(
                    f"first-stage cashflow ({slot.hour}, {slot.market.value}) touches "
                    f"second-stage variable {template.vars[pos].name!r}"
                )

    n_s = scenarios.n_scenarios
    pi = scenarios.probabilities
    model = LpModel(f"{template.name}-saa{n_s}")

    fs_map: dict[int, int] = {}
    first_stage_names: dict[str, int] = {}
    for pos, tv in enumerate(template.vars):
        if tv.stage == STAGE_FIRST:
            ref = model.add_variable(tv.name, tv.lower, tv.upper, tv.kind)
            fs_map[pos] = ref.index
            first_stage_names[tv.name] = ref.index

    scen_maps: list[dict[int, int]] = []
    scen_names: list[dict[str, int]] = []
    for s in range(n_s):
        smap: dict[int, int] = dict(fs_map)
        names: dict[str, int] = {}
        for pos, tv in enumerate(template.vars):
            if tv.stage == STAGE_SECOND:
                ref = model.add_variable(f"{tv.name}#s{s}", tv.lower, tv.upper, tv.kind)
                smap[pos] = ref.index
                names[tv.name] = ref.index
        scen_maps.append(smap)
        scen_names.append(names)

    for con in template.constraints:
        if all(template.stage_of(p) == STAGE_FIRST for p, _ in con.terms):
            model.add_constraint(
                {fs_map[p]: c for p, c in con.terms}, con.relation, con.rhs, con.name
            )
        else:
            for s in range(n_s):
                smap = scen_maps[s]
                model.add_constraint(
                    {smap[p]: c for p, c in con.terms},
                    con.relation,
                    con.rhs,
                    f"{con.name}#s{s}" if con.name else "",
                )

    fs_cost: dict[int, float] = {}
    for pos, coef in template.capital_terms:
        idx = fs_map[pos]
        fs_cost[idx] = fs_cost.get(idx, 0.0) + coef
    fs_market: dict[Market, dict[int, float]] = {}
    for slot in fs_slots:
        price = first_stage_prices[slot.market].value_at(slot.hour)
        bucket = fs_market.setdefault(slot.market, {})
        for pos, coef in slot.terms:
            idx = fs_map[pos]
            fs_cost[idx] = fs_cost.get(idx, 0.0) + price * coef
            bucket[idx] = bucket.get(idx, 0.0) + price * coef

    v_indices: list[int] = []
    ss_market_terms: list[dict[Market, tuple[tuple[int, float], ...]]] = []
    for s in range(n_s):
        v_ref = model.add_variable(f"stage2_cost#s{s}", -math.inf, math.inf)
        v_indices.append(v_ref.index)
        row: dict[int, float] = {v_ref.index: 1.0}
        per_market: dict[Market, dict[int, float]] = {}
        for slot in ss_slots:
            price = scenarios.scenarios[s][slot.market].value_at(slot.hour)
            bucket = per_market.setdefault(slot.market, {})
            for pos, coef in slot.terms:
                idx = scen_maps[s][pos]
                row[idx] = row.get(idx, 0.0) - price * coef
                bucket[idx] = bucket.get(idx, 0.0) + price * coef
        model.add_constraint(row, "=", 0.0, f"stage2_cost_def#s{s}")
        ss_market_terms.append(
            {m: tuple(sorted(b.items())) for m, b in per_market.items()}
        )

    objective = dict(fs_cost)
    for s, v_idx in enumerate(v_indices):
        objective[v_idx] = objective.get(v_idx, 0.0) + float(pi[s])
    model.set_objective(objective, 0.0, "min")

    cvar = None
    if risk.active:
        zeta = model.add_variable("risk_threshold", -math.inf, math.inf)
        etas = []
        for s, v_idx in enumerate(v_indices):
            eta = model.add_variable(f"risk_tail_excess#s{s}", 0.0, math.inf)
            etas.append(eta.index)
            row = {v_idx: 1.0, zeta.index: -1.0, eta.index: -1.0}
            if risk.include_first_stage_cost:
                for idx, coef in fs_cost.items():
                    row[idx] = row.get(idx, 0.0) + coef
            model.add_constraint(row, "<=", 0.0, f"risk_excess#s{s}")
        budget = {zeta.index: 1.0}
        for s, eta_idx in enumerate(etas):
            budget[eta_idx] = float(pi[s]) / (1.0 - risk.alpha)
        budget_row = model.add_constraint(budget, "<=", risk.epsilon, "risk_budget")
        cvar = CvarBlock(zeta.index, tuple(etas), budget_row)

    return StochasticProgram(
        monolith=model,
        grid=grid,
        template=template,
        risk=risk,
        pi=np.asarray(pi, dtype=float),
        stages=StageStructure(first_stage_names, tuple(scen_names)),
        v_indices=tuple(v_indices),
        cvar=cvar,
        first_stage_cost_terms=tuple(sorted(fs_cost.items())),
        fs_market_terms={m: tuple(sorted(b.items())) for m, b in fs_market.items()},
        ss_market_terms=tuple(ss_market_terms),
        scenario_fingerprint=scenarios.fingerprint(),
        first_stage_prices=dict(first_stage_prices),
        scenarios=scenarios,
    )


def solve_program(
    program: StochasticProgram,
    tol: float = 1e-7,
    gap: float = 1e-6,
    options: SimplexOptions | None = None,
) -> Solution:
    """Dispatch to the LP or MILP path depending on declared binaries."""
    if program.monolith.has_binaries():
        return solve_milp(program.monolith, tol, gap, options=options)
    return solve_lp(program.monolith, tol, options)


def extract_solution(program: StochasticProgram, sol: Solution) -> StagedSolution:
    """Split an optimal point into stages and recompute its risk numbers.

    The reported CVaR always comes from the sort-based oracle on the
    per-scenario costs, never from the threshold variable, which can be
    slack when the budget is inactive.
    """
    from .evaluation import oracle_cvar

    if sol.status != OPTIMAL or sol.x is None:
        raise NotOptimal(f"cannot extract from status {sol.status!r}")
    x = sol.x
    first = {name: float(x[idx]) for name, idx in program.stages.first_stage.items()}
    per_scen = tuple(
        {name: float(x[idx]) for name, idx in names.items()}
        for names in program.stages.per_scenario
    )
    v = np.array([x[idx] for idx in program.v_indices], dtype=float)
    fs_cost = float(sum(coef * x[idx] for idx, coef in program.first_stage_cost_terms))
    expected_ss = float(program.pi @ v)
    total = fs_cost + expected_ss
    if abs(total - sol.objective) > 1e-6 * (1.0 + abs(sol.objective)):
        raise RuntimeError(
            f"objective decomposition drifted: {total} vs {sol.objective}"
        )
    tail = v + fs_cost if program.risk.include_first_stage_cost else v
    cvar = float(oracle_cvar(tail, program.pi, program.risk.alpha))
    if program.risk.active:
        margin = 1e-6 * max(1.0, abs(program.risk.epsilon))
        if cvar > program.risk.epsilon + margin:
            raise RuntimeError(
                f"tail-risk budget violated: {cvar} > {program.risk.epsilon}"
            )
    return StagedSolution(
        status=sol.status,
        objective=float(sol.objective),
        first_stage=first,
        scenario_values=per_scen,
        first_stage_cost=fs_cost,
        v=v,
        pi=program.pi.copy(),
        expected_second_stage=expected_ss,
        realized_cvar=cvar,
        alpha=program.risk.alpha,
    )


def fix_first_stage(
    program: StochasticProgram, values: Mapping[str, float]
) -> StochasticProgram:
    """Pin first-stage variables to given values (used for EEV and replays)."""
    overrides: dict[int, tuple[float, float]] = {}
    for name, value in values.items():
        idx = program.stages.first_stage.get(name)
        if idx is None:
            raise OutOfBounds(f"{name!r} is not a first-stage variable")
        ref = program.monolith.variables[idx]
        tol = 1e-9 * (1.0 + abs(value))
        if value < ref.lower - tol or value > ref.upper + tol:
            raise OutOfBounds(
                f"{name!r}={value} outside bounds [{ref.lower}, {ref.upper}]"
            )
        pinned = min(max(float(value), ref.lower), ref.upper)
        if ref.kind == KIND_BINARY:
            if abs(pinned - round(pinned)) > 1e-6:
                raise OutOfBounds(f"binary {name!r} fixed to fractional {value}")
            pinned = float(round(pinned))
        overrides[idx] = (pinned, pinned)
    return replace(program, monolith=program.monolith.clone_with_bounds(overrides))
