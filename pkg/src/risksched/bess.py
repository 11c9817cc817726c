"""Battery storage template: charge/discharge arbitrage across two markets.

Power in kW, energy in kWh, prices in currency/MWh (the cashflow slots
carry the 1e-3 kW-to-MW factor).  Charge and discharge are both positive;
per-market indicator binaries forbid simultaneous charge and discharge in
the same market-hour, while cross-market positions in one hour remain
legal and are limited only by the net inverter band.

Parameter defaults are documented assumptions, not published values: the
reference system's constants are proprietary.  Every test parameterizes
over them.

The round-trip efficiency is applied literally per leg of the energy
balance (gain eta per charged kWh, cost 1/eta per discharged kWh), so the
grid-to-grid round trip returns eta squared.

Two stage layouts exist:
  * "time":  dispatch before t_obs is first stage, the rest second stage
             (the open-loop purchasing-agreement setting).
  * "market": day-ahead dispatch over the whole window is first stage and
             intraday dispatch is recourse (the rolling auction setting);
             the state trajectories then live in the second stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

from .markets import MARKET_ORDER, Market, TimeGrid
from .stochastic import STAGE_FIRST, STAGE_SECOND, ModelTemplate, StagedSolution

__all__ = [
    "BessParams",
    "InvalidParams",
    "build_bess_template",
    "BessAuditReport",
    "bess_soc_audit",
]


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class BessParams:
    self_discharge: float = 1e-4  # fraction of state lost per hour
    efficiency: float = 0.92  # applied per leg; round trip = eta**2
    inverter_kw: float = 12500.0
    degradation_per_kwh: float = 5e-5  # capacity lost per kWh discharged
    max_daily_cycles: float = 1.5
    initial_soh_kwh: float = 50000.0
    initial_soc_kwh: float = 0.0
    cyclic_soc: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.self_discharge < 1.0:
            raise InvalidParams(f"self_discharge={self.self_discharge} outside [0, 1)")
        if not 0.0 < self.efficiency <= 1.0:
            raise InvalidParams(f"efficiency={self.efficiency} outside (0, 1]")
        if self.inverter_kw <= 0:
            raise InvalidParams("inverter size must be positive")
        if self.degradation_per_kwh < 0:
            raise InvalidParams("degradation must be nonnegative")
        if self.max_daily_cycles <= 0:
            raise InvalidParams("cycle cap must be positive")
        if self.initial_soh_kwh <= 0:
            raise InvalidParams("initial capacity must be positive")
        if not 0.0 <= self.initial_soc_kwh <= self.initial_soh_kwh:
            raise InvalidParams("initial state of charge outside [0, capacity]")

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "BessParams":
        return cls(**json.loads(Path(path).read_text()))


def build_bess_template(
    params: BessParams,
    grid: TimeGrid,
    stage_mode: str = "time",
    aggregate_hour_binaries: bool = False,
) -> ModelTemplate:
    """Build the battery model over the grid.

    aggregate_hour_binaries replaces the per-market indicator pair with a
    single per-hour pair applied to the market sums; off by default.
    """
    if stage_mode not in ("time", "market"):
        raise InvalidParams(f"unknown stage mode {stage_mode!r}")
    p = params
    tpl = ModelTemplate(grid, "bess")
    eta = p.efficiency
    keep = 1.0 - p.self_discharge

    def dispatch_stage(t: int, m: Market) -> int:
        if stage_mode == "time":
            return STAGE_FIRST if t < grid.t_obs else STAGE_SECOND
        return STAGE_FIRST if m is Market.DA else STAGE_SECOND

    # state trajectories depend on every dispatch decision; under the
    # market split that makes them scenario-dependent everywhere
    def state_stage(t: int) -> int:
        if stage_mode == "time":
            return STAGE_FIRST if t < grid.t_obs else STAGE_SECOND
        return STAGE_SECOND

    charge: dict[tuple[int, Market], int] = {}
    discharge: dict[tuple[int, Market], int] = {}
    soc: dict[int, int] = {}
    soh: dict[int, int] = {}
    cycle_terms: dict[int, float] = {}

    for t in grid.hours:
        for m in MARKET_ORDER:
            st = dispatch_stage(t, m)
            charge[t, m] = tpl.add_variable(f"charge[{t},{m.value}]", 0.0, stage=st)
            discharge[t, m] = tpl.add_variable(f"discharge[{t},{m.value}]", 0.0, stage=st)
        st_state = state_stage(t)
        soc[t] = tpl.add_variable(f"soc[{t}]", 0.0, stage=st_state)
        soh[t] = tpl.add_variable(f"soh[{t}]", 0.0, stage=st_state)

        if aggregate_hour_binaries:
            st_bin = state_stage(t)
            chg_on = tpl.add_variable(f"chg_on[{t}]", 0.0, 1.0, "binary", stage=st_bin)
            dis_on = tpl.add_variable(f"dis_on[{t}]", 0.0, 1.0, "binary", stage=st_bin)
            tpl.add_constraint(
                {charge[t, m]: 1.0 for m in MARKET_ORDER} | {chg_on: -2.0 * p.inverter_kw},
                "<=",
                0.0,
                f"chg_lim[{t}]",
            )
            tpl.add_constraint(
                {discharge[t, m]: 1.0 for m in MARKET_ORDER} | {dis_on: -2.0 * p.inverter_kw},
                "<=",
                0.0,
                f"dis_lim[{t}]",
            )
            tpl.add_constraint(
                {chg_on: 1.0, dis_on: 1.0}, "<=", 1.0, f"exclusive[{t}]"
            )
        else:
            for m in MARKET_ORDER:
                st = dispatch_stage(t, m)
                chg_on = tpl.add_variable(
                    f"chg_on[{t},{m.value}]", 0.0, 1.0, "binary", stage=st
                )
                dis_on = tpl.add_variable(
                    f"dis_on[{t},{m.value}]", 0.0, 1.0, "binary", stage=st
                )
                tpl.add_constraint(
                    {charge[t, m]: 1.0, chg_on: -p.inverter_kw},
                    "<=",
                    0.0,
                    f"chg_lim[{t},{m.value}]",
                )
                tpl.add_constraint(
                    {discharge[t, m]: 1.0, dis_on: -p.inverter_kw},
                    "<=",
                    0.0,
                    f"dis_lim[{t},{m.value}]",
                )
                tpl.add_constraint(
                    {chg_on: 1.0, dis_on: 1.0}, "<=", 1.0, f"exclusive[{t},{m.value}]"
                )

        # energy balance: soc_t = keep*soc_{t-1} + eta*sum(c) - (1/eta)*sum(d)
        bal: dict[int, float] = {soc[t]: 1.0}
        for m in MARKET_ORDER:
            bal[charge[t, m]] = -eta
            bal[discharge[t, m]] = 1.0 / eta
        rhs = 0.0
        if t == grid.t0:
            rhs = keep * p.initial_soc_kwh
        else:
            bal[soc[t - 1]] = -keep
        tpl.add_constraint(bal, "=", rhs, f"soc_balance[{t}]")
        tpl.add_constraint({soc[t]: 1.0, soh[t]: -1.0}, "<=", 0.0, f"soc_cap[{t}]")

        # capacity fade proportional to discharged energy
        fade: dict[int, float] = {soh[t]: 1.0}
        for m in MARKET_ORDER:
            fade[discharge[t, m]] = p.degradation_per_kwh
        if t == grid.t0:
            tpl.add_constraint(fade, "=", p.initial_soh_kwh, f"soh_decay[{t}]")
        else:
            fade[soh[t - 1]] = -1.0
            tpl.add_constraint(fade, "=", 0.0, f"soh_decay[{t}]")

        net: dict[int, float] = {}
        for m in MARKET_ORDER:
            net[charge[t, m]] = 1.0
            net[discharge[t, m]] = -1.0
        tpl.add_constraint(net, "<=", p.inverter_kw, f"net_band_hi[{t}]")
        tpl.add_constraint(
            {k: -v for k, v in net.items()}, "<=", p.inverter_kw, f"net_band_lo[{t}]"
        )

        for m in MARKET_ORDER:
            cycle_terms[discharge[t, m]] = 1.0 / eta
        cycle_terms[soh[t]] = cycle_terms.get(soh[t], 0.0) - p.max_daily_cycles / 24.0

        for m in MARKET_ORDER:
            # kW dispatched for one hour at a currency/MWh price
            tpl.set_cashflow(
                t, m, dispatch_stage(t, m), {charge[t, m]: 1e-3, discharge[t, m]: -1e-3}
            )

    tpl.add_constraint(cycle_terms, "<=", 0.0, "cycle_cap")
    if p.cyclic_soc:
        tpl.add_constraint(
            {soc[grid.t_f]: 1.0}, ">=", p.initial_soc_kwh, "cyclic_soc"
        )
    return tpl


# -- audit -------------------------------------------------------------------


@dataclass
class BessAuditReport:
    """Replay of the state recursions from committed dispatch."""

    max_state_error_kwh: float
    exclusivity_violations: tuple[tuple[int, int, str, float], ...]  # (s, t, market, kW)
    cycle_use: tuple[float, ...]
    cycle_budget: tuple[float, ...]
    soc_bound_violation_kwh: float

    def ok(self, tol: float = 1e-6) -> bool:
        return (
            self.max_state_error_kwh <= tol
            and not self.exclusivity_violations
            and self.soc_bound_violation_kwh <= tol
            and all(u <= b + tol * (1 + abs(b)) for u, b in zip(self.cycle_use, self.cycle_budget))
        )


def bess_soc_audit(
    solution: StagedSolution,
    params: BessParams,
    grid: TimeGrid,
    tol: float = 1e-6,
) -> BessAuditReport:
    p = params
    eta = p.efficiency
    keep = 1.0 - p.self_discharge
    max_err = 0.0
    soc_bound = 0.0
    offenders: list[tuple[int, int, str, float]] = []
    uses: list[float] = []
    budgets: list[float] = []

    for s, scen_vals in enumerate(solution.scenario_values):
        def val(name: str) -> float:
            got = scen_vals.get(name)
            if got is None:
                got = solution.first_stage[name]
            return got

        soc_prev = p.initial_soc_kwh
        soh_prev = p.initial_soh_kwh
        use = 0.0
        budget = 0.0
        for t in grid.hours:
            c = {m: val(f"charge[{t},{m.value}]") for m in MARKET_ORDER}
            d = {m: val(f"discharge[{t},{m.value}]") for m in MARKET_ORDER}
            soc_model = val(f"soc[{t}]")
            soh_model = val(f"soh[{t}]")
            soc_replay = keep * soc_prev + eta * sum(c.values()) - sum(d.values()) / eta
            soh_replay = soh_prev - p.degradation_per_kwh * sum(d.values())
            max_err = max(max_err, abs(soc_model - soc_replay), abs(soh_model - soh_replay))
            soc_bound = max(soc_bound, -soc_model, soc_model - soh_model)
            for m in MARKET_ORDER:
                if c[m] > tol and d[m] > tol:
                    offenders.append((s, t, m.value, min(c[m], d[m])))
            use += sum(d.values()) / eta
            budget += p.max_daily_cycles / 24.0 * soh_model
            soc_prev, soh_prev = soc_replay, soh_replay
        uses.append(use)
        budgets.append(budget)

    return BessAuditReport(
        max_state_error_kwh=max_err,
        exclusivity_violations=tuple(offenders),
        cycle_use=tuple(uses),
        cycle_budget=tuple(budgets),
        soc_bound_violation_kwh=soc_bound,
    )
