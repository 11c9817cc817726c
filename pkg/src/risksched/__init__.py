"""Risk-constrained two-stage stochastic scheduling of energy storage.

The package couples an embedded LP/MILP solver with scenario-based
two-stage programs carrying a CVaR budget, plus the surrounding machinery:
price ingestion, Gaussian scenario fans, stochastic-value metrics,
risk-frontier sweeps, and a rolling-horizon trading loop for battery
storage.
"""

from .markets import Market, PriceSeries, TimeGrid, load_prices, split_horizon, write_prices
from .scenarios import ScenarioSet, empirical_moments, sample_scenarios
from .lp.model import LpModel, Solution, VariableRef, canonical_dump, parse_model
from .lp.simplex import solve_lp
from .lp.branch_bound import solve_milp

__version__ = "0.1.0"
