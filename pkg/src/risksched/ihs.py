"""Integrated hydrogen plant template: electrolyzer, pressurized storage,
furnace heater, compressor, and fuel cell.

Unit conventions: power in MW, hydrogen flow in kg/h, inventory in kg,
pressure in MPa, one-hour steps.  Grid draws are positive for consumption;
the fuel cell's output variables are nonpositive so its sales enter the
operating cost with the right sign.

Modelling notes baked into the template:
  * The storage balance adds inflow and subtracts outflow; outlet flows
    are positive by convention, so a positive sign on the outflow would
    create mass on discharge.
  * Pressure is affine in inventory once the sizing density is taken at
    the upper pressure bound: p = p_lb + p_ub * I / C_stor.  The window
    constraint is therefore linear after multiplying through by C_stor,
    and empty storage sits exactly at the lower bound.
  * The compressor curve is the isothermal single-stage duty linearized
    around zero inflow at the centroid of the pressure window, evaluated
    at the electrolyzer outlet temperature (taken equal to the storage
    temperature; no separate value is published).
  * Initial inventory is a parameter (default 0) charged with the first
    hour's net flow; the terminal level is free unless the cyclic option
    asks for end >= start.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .markets import MARKET_ORDER, Market, TimeGrid
from .stochastic import STAGE_FIRST, STAGE_SECOND, ModelTemplate, StagedSolution

__all__ = [
    "GAS_CONSTANT",
    "FARADAY",
    "H2_MOLAR_MASS",
    "IhsParams",
    "CostItem",
    "IhsCostParams",
    "CapacityBounds",
    "InvalidBounds",
    "GridTooShort",
    "build_ihs_template",
    "IhsAuditReport",
    "ihs_mass_energy_audit",
]

GAS_CONSTANT = 8.314462618  # J/mol/K
FARADAY = 96485.33212  # C/mol
H2_MOLAR_MASS = 2.016e-3  # kg/mol


class InvalidBounds(ValueError):
    pass


class GridTooShort(ValueError):
    pass


@dataclass(frozen=True)
class IhsParams:
    """Physical plant parameters."""

    rectifier_factor: float = 1.05  # AC drawn per DC delivered
    aux_power_fraction: float = 0.05
    elec_degradation: float = 0.9142
    elec_power_per_kg: float = 0.05  # MW per kg/h of production
    electrolyzer_pressure_mpa: float = 1.0
    storage_temperature_k: float = 298.0
    pressure_lb_mpa: float = 2.0
    pressure_ub_mpa: float = 20.0
    compressibility: float = 1.07
    heater_specific_energy_mj_kg: float = 11.82
    heater_efficiency: float = 0.75
    compressor_efficiency: float = 0.7
    compressor_temperature_k: float = 298.0
    fc_inverter_efficiency: float = 0.95
    fc_degradation: float = 0.9142
    cell_voltage: float = 0.7
    h2_demand_kg_h: float = 150000.0
    initial_inventory_kg: float = 0.0
    cyclic_inventory: bool = False

    def __post_init__(self) -> None:
        if self.rectifier_factor < 1.0:
            raise ValueError("rectifier factor scales AC above DC; must be >= 1")
        for name in (
            "aux_power_fraction",
            "elec_degradation",
            "heater_efficiency",
            "compressor_efficiency",
            "fc_inverter_efficiency",
            "fc_degradation",
        ):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name}={v} outside (0, 1]")
        if self.pressure_lb_mpa >= self.pressure_ub_mpa:
            raise ValueError("pressure window is empty")
        if self.initial_inventory_kg < 0:
            raise ValueError("initial inventory must be nonnegative")

    # derived linear coefficients -------------------------------------

    @property
    def production_kg_per_mw(self) -> float:
        return self.elec_degradation / self.elec_power_per_kg

    @property
    def heater_mw_per_kg_h(self) -> float:
        # MJ/kg * kg/h -> MJ/h; 3600 MJ/h per MW
        return self.heater_specific_energy_mj_kg / (3600.0 * self.heater_efficiency)

    @property
    def compressor_mw_per_kg_h(self) -> float:
        ratio = (self.pressure_lb_mpa + self.pressure_ub_mpa) / (
            2.0 * self.electrolyzer_pressure_mpa
        )
        j_per_mol = (
            GAS_CONSTANT * self.compressor_temperature_k * math.log(ratio)
        ) / self.compressor_efficiency
        return j_per_mol / H2_MOLAR_MASS / 3.6e9  # J/kg -> MW per kg/h

    @property
    def fc_mw_per_kg_h(self) -> float:
        j_per_mol = 2.0 * FARADAY * self.cell_voltage * self.fc_degradation
        return j_per_mol / H2_MOLAR_MASS / 3.6e9

    @property
    def usable_inventory_fraction(self) -> float:
        return 1.0 - self.pressure_lb_mpa / self.pressure_ub_mpa

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "IhsParams":
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CostItem:
    """One row of the capital cost table."""

    unit_price: float  # $/kW or $/kg
    annualization: float
    maintenance: float  # $/kW/y or $/kg/y

    @property
    def annual_rate(self) -> float:
        return self.unit_price * self.annualization + self.maintenance


@dataclass(frozen=True)
class IhsCostParams:
    """Capital cost rows; stack and auxiliary rows of a unit are summed
    into one annualized rate per unit of installed capacity."""

    electrolyzer_stack: CostItem = CostItem(150.0, 0.13, 2.0)
    electrolyzer_aux: CostItem = CostItem(250.0, 0.08, 0.0)
    storage: CostItem = CostItem(1000.0, 0.10, 10.0)
    heater: CostItem = CostItem(50.0, 0.13, 1.0)
    compressor: CostItem = CostItem(50.0, 0.13, 1.0)
    fuel_cell_stack: CostItem = CostItem(150.0, 0.13, 2.0)
    fuel_cell_aux: CostItem = CostItem(250.0, 0.08, 0.0)

    def __post_init__(self) -> None:
        for name, item in asdict(self).items():
            if min(item.values()) < 0:
                raise ValueError(f"negative cost entry in {name}")

    @property
    def electrolyzer_rate_per_mw(self) -> float:
        return 1000.0 * (self.electrolyzer_stack.annual_rate + self.electrolyzer_aux.annual_rate)

    @property
    def storage_rate_per_kg(self) -> float:
        return self.storage.annual_rate

    @property
    def heater_rate_per_mw(self) -> float:
        return 1000.0 * self.heater.annual_rate

    @property
    def compressor_rate_per_mw(self) -> float:
        return 1000.0 * self.compressor.annual_rate

    @property
    def fuel_cell_rate_per_mw(self) -> float:
        return 1000.0 * (self.fuel_cell_stack.annual_rate + self.fuel_cell_aux.annual_rate)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "IhsCostParams":
        raw = json.loads(Path(path).read_text())
        return cls(**{k: CostItem(**v) for k, v in raw.items()})


_UNITS = ("electrolyzer", "storage", "heater", "compressor", "fuel_cell")


@dataclass(frozen=True)
class CapacityBounds:
    """Per-unit capacity bounds.  The compressor floor mirrors the
    exogenous minimum the joint-design runs pin against."""

    electrolyzer: tuple[float, float] = (0.0, math.inf)
    storage: tuple[float, float] = (0.0, math.inf)
    heater: tuple[float, float] = (0.0, math.inf)
    compressor: tuple[float, float] = (100.0, math.inf)
    fuel_cell: tuple[float, float] = (0.0, math.inf)

    def __post_init__(self) -> None:
        for unit in _UNITS:
            lo, hi = getattr(self, unit)
            if lo < 0 or lo > hi:
                raise InvalidBounds(f"{unit} bounds ({lo}, {hi}) invalid")


def build_ihs_template(
    params: IhsParams,
    costs: IhsCostParams,
    grid: TimeGrid,
    bounds: CapacityBounds | None = None,
) -> ModelTemplate:
    """Instantiate the plant over the grid; capacities are always first
    stage, hourly dispatch follows the t_obs split."""
    if grid.n_hours < 2:
        raise GridTooShort("ramp limits need at least two hours")
    bounds = bounds or CapacityBounds()
    tpl = ModelTemplate(grid, "ihs")
    p = params

    cap_rate = {
        "electrolyzer": costs.electrolyzer_rate_per_mw,
        "storage": costs.storage_rate_per_kg,
        "heater": costs.heater_rate_per_mw,
        "compressor": costs.compressor_rate_per_mw,
        "fuel_cell": costs.fuel_cell_rate_per_mw,
    }
    cap: dict[str, int] = {}
    for unit in _UNITS:
        lo, hi = getattr(bounds, unit)
        cap[unit] = tpl.add_variable(f"cap_{unit}", lo, hi, stage=STAGE_FIRST)
        tpl.add_capital_term(cap[unit], cap_rate[unit])

    k_prod = p.production_kg_per_mw
    k_heat = p.heater_mw_per_kg_h
    k_comp = p.compressor_mw_per_kg_h
    k_fc = p.fc_mw_per_kg_h
    ac_factor = p.rectifier_factor + p.aux_power_fraction
    fc_net = p.fc_inverter_efficiency - p.aux_power_fraction
    window = p.pressure_ub_mpa - p.pressure_lb_mpa

    prev_power: int | None = None
    prev_inventory: int | None = None
    first_inventory: int | None = None
    for t in grid.hours:
        stage = STAGE_FIRST if t < grid.t_obs else STAGE_SECOND

        elec_draw = {
            m: tpl.add_variable(f"elec_draw[{t},{m.value}]", 0.0, stage=stage)
            for m in MARKET_ORDER
        }
        power = tpl.add_variable(f"elec_power[{t}]", 0.0, stage=stage)
        produced = tpl.add_variable(f"h2_production[{t}]", 0.0, stage=stage)
        to_storage = tpl.add_variable(f"flow_to_storage[{t}]", 0.0, stage=stage)
        direct_heat = tpl.add_variable(f"flow_heat_direct[{t}]", 0.0, stage=stage)
        storage_out = tpl.add_variable(f"storage_out[{t}]", 0.0, stage=stage)
        to_fc = tpl.add_variable(f"flow_to_fc[{t}]", 0.0, stage=stage)
        stored_heat = tpl.add_variable(f"flow_heat_stored[{t}]", 0.0, stage=stage)
        inventory = tpl.add_variable(f"inventory[{t}]", 0.0, stage=stage)
        heater_draw = {
            m: tpl.add_variable(f"heater_draw[{t},{m.value}]", 0.0, stage=stage)
            for m in MARKET_ORDER
        }
        comp_draw = {
            m: tpl.add_variable(f"comp_draw[{t},{m.value}]", 0.0, stage=stage)
            for m in MARKET_ORDER
        }
        fc_power = tpl.add_variable(f"fc_power[{t}]", -math.inf, 0.0, stage=stage)
        fc_draw = {
            m: tpl.add_variable(f"fc_draw[{t},{m.value}]", -math.inf, 0.0, stage=stage)
            for m in MARKET_ORDER
        }

        tpl.add_constraint(
            {elec_draw[Market.DA]: 1.0, elec_draw[Market.ID]: 1.0, power: -ac_factor},
            "=",
            0.0,
            f"rectifier[{t}]",
        )
        tpl.add_constraint(
            {produced: 1.0, power: -k_prod}, "=", 0.0, f"production[{t}]"
        )
        tpl.add_constraint(
            {produced: 1.0, to_storage: -1.0, direct_heat: -1.0},
            "=",
            0.0,
            f"h2_split[{t}]",
        )
        tpl.add_constraint(
            {power: 1.0, cap["electrolyzer"]: -1.0}, "<=", 0.0, f"elec_cap[{t}]"
        )
        if prev_power is not None:
            tpl.add_constraint(
                {power: 1.0, prev_power: -1.0, cap["electrolyzer"]: -0.2},
                "<=",
                0.0,
                f"ramp_up[{t}]",
            )
            tpl.add_constraint(
                {power: -1.0, prev_power: 1.0, cap["electrolyzer"]: -0.2},
                "<=",
                0.0,
                f"ramp_dn[{t}]",
            )

        bal = {inventory: 1.0, to_storage: -grid.dt, storage_out: grid.dt}
        if prev_inventory is None:
            tpl.add_constraint(bal, "=", p.initial_inventory_kg, f"inventory[{t}]")
        else:
            bal[prev_inventory] = -1.0
            tpl.add_constraint(bal, "=", 0.0, f"inventory[{t}]")
        tpl.add_constraint(
            {storage_out: 1.0, to_fc: -1.0, stored_heat: -1.0},
            "=",
            0.0,
            f"outlet_split[{t}]",
        )
        tpl.add_constraint(
            {inventory: p.pressure_ub_mpa, cap["storage"]: -window},
            "<=",
            0.0,
            f"pressure_window[{t}]",
        )

        tpl.add_constraint(
            {
                heater_draw[Market.DA]: 1.0,
                heater_draw[Market.ID]: 1.0,
                direct_heat: -k_heat,
                stored_heat: -k_heat,
            },
            "=",
            0.0,
            f"heater_duty[{t}]",
        )
        tpl.add_constraint(
            {direct_heat: 1.0, stored_heat: 1.0},
            ">=",
            p.h2_demand_kg_h,
            f"h2_demand[{t}]",
        )
        tpl.add_constraint(
            {heater_draw[Market.DA]: 1.0, heater_draw[Market.ID]: 1.0, cap["heater"]: -1.0},
            "<=",
            0.0,
            f"heater_cap[{t}]",
        )

        tpl.add_constraint(
            {comp_draw[Market.DA]: 1.0, comp_draw[Market.ID]: 1.0, to_storage: -k_comp},
            "=",
            0.0,
            f"comp_duty[{t}]",
        )
        tpl.add_constraint(
            {comp_draw[Market.DA]: 1.0, comp_draw[Market.ID]: 1.0, cap["compressor"]: -1.0},
            "<=",
            0.0,
            f"comp_cap[{t}]",
        )

        tpl.add_constraint(
            {fc_power: -1.0, to_fc: -k_fc}, "=", 0.0, f"fc_output[{t}]"
        )
        tpl.add_constraint(
            {fc_draw[Market.DA]: 1.0, fc_draw[Market.ID]: 1.0, fc_power: -fc_net},
            "=",
            0.0,
            f"fc_inverter[{t}]",
        )
        tpl.add_constraint(
            {fc_power: -1.0, cap["fuel_cell"]: -1.0}, "<=", 0.0, f"fc_cap[{t}]"
        )

        for m in MARKET_ORDER:
            tpl.set_cashflow(
                t,
                m,
                stage,
                {elec_draw[m]: 1.0, heater_draw[m]: 1.0, comp_draw[m]: 1.0, fc_draw[m]: 1.0},
            )

        prev_power = power
        prev_inventory = inventory
        if first_inventory is None:
            first_inventory = inventory

    if p.cyclic_inventory and prev_inventory is not None:
        tpl.add_constraint(
            {prev_inventory: 1.0}, ">=", p.initial_inventory_kg, "cyclic_inventory"
        )
    return tpl


# -- audit -------------------------------------------------------------------


@dataclass
class IhsAuditReport:
    """Independent replay of every plant balance from raw variable values."""

    max_violation: float
    worst: tuple[str, int, int] | None  # (check, scenario, hour)
    per_check: dict[str, float]
    demand_active_hours: tuple[tuple[int, ...], ...]
    pressure_range_mpa: tuple[float, float]
    violations: tuple[tuple[str, int, int, float], ...]

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol


def ihs_mass_energy_audit(
    solution: StagedSolution,
    params: IhsParams,
    grid: TimeGrid,
    tol: float = 1e-6,
) -> IhsAuditReport:
    """Recompute the plant balances scenario by scenario.

    Conversion factors are re-derived here from first principles rather
    than read off the template so a builder slip cannot hide: the heater
    converts MJ/h to MW through 3600, the compressor follows the
    isothermal log-ratio duty per mole, and the fuel cell output comes
    from two electrons per molecule at the cell voltage.
    """
    p = params
    # independent re-derivations (J per kg, then MW per kg/h = (J/kg)/3.6e9)
    heater_j_per_kg = p.heater_specific_energy_mj_kg * 1e6 / p.heater_efficiency
    k_heat = heater_j_per_kg / 3.6e9
    comp_j_per_kg = (
        GAS_CONSTANT
        * p.compressor_temperature_k
        * math.log((p.pressure_lb_mpa + p.pressure_ub_mpa) / (2 * p.electrolyzer_pressure_mpa))
        / (p.compressor_efficiency * H2_MOLAR_MASS)
    )
    k_comp = comp_j_per_kg / 3.6e9
    fc_j_per_kg = 2.0 * FARADAY * p.cell_voltage * p.fc_degradation / H2_MOLAR_MASS
    k_fc = fc_j_per_kg / 3.6e9
    k_prod = p.elec_degradation / p.elec_power_per_kg
    ac_factor = p.rectifier_factor + p.aux_power_fraction
    fc_net = p.fc_inverter_efficiency - p.aux_power_fraction

    per_check: dict[str, float] = {}
    worst: tuple[str, int, int] | None = None
    max_violation = 0.0
    offenders: list[tuple[str, int, int, float]] = []
    demand_active: list[tuple[int, ...]] = []
    p_min, p_max = math.inf, -math.inf

    def record(check: str, s: int, t: int, lhs: float, rhs: float) -> None:
        nonlocal max_violation, worst
        scaled = abs(lhs - rhs) / (1.0 + abs(lhs) + abs(rhs))
        per_check[check] = max(per_check.get(check, 0.0), scaled)
        if scaled > max_violation:
            max_violation = scaled
            worst = (check, s, t)
        if scaled > tol:
            offenders.append((check, s, t, scaled))

    def record_le(check: str, s: int, t: int, lhs: float, rhs: float) -> None:
        nonlocal max_violation, worst
        scaled = max(0.0, lhs - rhs) / (1.0 + abs(lhs) + abs(rhs))
        per_check[check] = max(per_check.get(check, 0.0), scaled)
        if scaled > max_violation:
            max_violation = scaled
            worst = (check, s, t)
        if scaled > tol:
            offenders.append((check, s, t, scaled))

    caps = {u: solution.first_stage[f"cap_{u}"] for u in _UNITS}
    for s, scen_vals in enumerate(solution.scenario_values):
        def val(name: str) -> float:
            got = scen_vals.get(name)
            if got is None:
                got = solution.first_stage[name]
            return got

        active: list[int] = []
        prev_power = None
        prev_inventory = p.initial_inventory_kg
        for t in grid.hours:
            draw = sum(val(f"elec_draw[{t},{m.value}]") for m in MARKET_ORDER)
            power = val(f"elec_power[{t}]")
            produced = val(f"h2_production[{t}]")
            to_storage = val(f"flow_to_storage[{t}]")
            direct = val(f"flow_heat_direct[{t}]")
            out = val(f"storage_out[{t}]")
            to_fc = val(f"flow_to_fc[{t}]")
            stored = val(f"flow_heat_stored[{t}]")
            inventory = val(f"inventory[{t}]")
            heat = sum(val(f"heater_draw[{t},{m.value}]") for m in MARKET_ORDER)
            comp = sum(val(f"comp_draw[{t},{m.value}]") for m in MARKET_ORDER)
            fcp = val(f"fc_power[{t}]")
            fcd = sum(val(f"fc_draw[{t},{m.value}]") for m in MARKET_ORDER)

            record("rectifier", s, t, draw, ac_factor * power)
            record("production", s, t, produced, k_prod * power)
            record("h2_split", s, t, produced, to_storage + direct)
            record_le("elec_cap", s, t, power, caps["electrolyzer"])
            if prev_power is not None:
                record_le("ramp", s, t, abs(power - prev_power), 0.2 * caps["electrolyzer"])
            record("inventory", s, t, inventory, prev_inventory + (to_storage - out) * grid.dt)
            record("outlet_split", s, t, out, to_fc + stored)
            if caps["storage"] > 1e-9:
                pressure = p.pressure_lb_mpa + p.pressure_ub_mpa * inventory / caps["storage"]
            else:
                record("pressure", s, t, inventory, 0.0)
                pressure = p.pressure_lb_mpa
            p_min, p_max = min(p_min, pressure), max(p_max, pressure)
            record_le("pressure", s, t, pressure, p.pressure_ub_mpa)
            record_le("pressure", s, t, p.pressure_lb_mpa, pressure)
            record("heater_duty", s, t, heat, k_heat * (direct + stored))
            record_le("h2_demand", s, t, p.h2_demand_kg_h, direct + stored)
            record_le("heater_cap", s, t, heat, caps["heater"])
            record("comp_duty", s, t, comp, k_comp * to_storage)
            record_le("comp_cap", s, t, comp, caps["compressor"])
            record("fc_output", s, t, -fcp, k_fc * to_fc)
            record("fc_inverter", s, t, fcd, fc_net * fcp)
            record_le("fc_cap", s, t, -fcp, caps["fuel_cell"])

            scale = 1.0 + p.h2_demand_kg_h + direct + stored
            if abs(direct + stored - p.h2_demand_kg_h) <= 100 * tol * scale:
                active.append(t)
            prev_power = power
            prev_inventory = inventory
        demand_active.append(tuple(active))

    return IhsAuditReport(
        max_violation=max_violation,
        worst=worst,
        per_check=per_check,
        demand_active_hours=tuple(demand_active),
        pressure_range_mpa=(p_min, p_max),
        violations=tuple(offenders),
    )
