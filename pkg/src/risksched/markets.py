"""Time grids, power markets, and hourly price trajectories.

Hours are 0-based integer indices rather than timestamps, which keeps the
data free of timezone and DST ambiguity.  Day-ahead and intraday prices
live in separate columns of the same grid and never interact through a
currency conversion; the currency tag is a label only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = [
    "Market",
    "MARKET_ORDER",
    "TimeGrid",
    "PriceSeries",
    "PriceDataError",
    "MissingHour",
    "DuplicateEntry",
    "UnknownMarket",
    "NonFiniteValue",
    "load_prices",
    "write_prices",
    "prices_to_csv",
    "split_horizon",
]


class Market(Enum):
    """The two power markets an asset trades in."""

    DA = "DA"
    ID = "ID"


MARKET_ORDER: tuple[Market, Market] = (Market.DA, Market.ID)


class PriceDataError(ValueError):
    """Malformed price input."""


class MissingHour(PriceDataError):
    pass


class DuplicateEntry(PriceDataError):
    pass


class UnknownMarket(PriceDataError):
    pass


class NonFiniteValue(PriceDataError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Hourly horizon [t0, t_f] with the price-reveal hour t_obs.

    Hours in [t0, t_obs) trade at known prices; hours in [t_obs, t_f] see
    prices only through scenarios.  t_obs == t0 makes the whole horizon
    uncertain and t_obs == t_f + 1 makes it fully deterministic.  The step
    is fixed at one hour.
    """

    t0: int
    t_obs: int
    t_f: int
    dt: float = field(default=1.0)

    def __post_init__(self) -> None:
        if self.t0 < 0:
            raise ValueError(f"t0 must be >= 0, got {self.t0}")
        if self.t_f < self.t0:
            raise ValueError(f"t_f={self.t_f} precedes t0={self.t0}")
        if not self.t0 <= self.t_obs <= self.t_f + 1:
            raise ValueError(
                f"t_obs={self.t_obs} outside [{self.t0}, {self.t_f + 1}]"
            )
        if self.dt != 1.0:
            raise ValueError("only hourly steps are supported")

    @property
    def n_hours(self) -> int:
        return self.t_f - self.t0 + 1

    @property
    def hours(self) -> range:
        return range(self.t0, self.t_f + 1)

    @property
    def first_stage_hours(self) -> range:
        """Hours dispatched against known prices."""
        return range(self.t0, self.t_obs)

    @property
    def observed_hours(self) -> range:
        """Hours dispatched under price uncertainty."""
        return range(self.t_obs, self.t_f + 1)


@dataclass(frozen=True)
class PriceSeries:
    """Per-market hourly prices starting at a given hour index.

    Negative prices are accepted without warning: real markets clear
    negative, and the battery exclusivity binaries exist precisely because
    simultaneous charge/discharge can look optimal in that regime.
    """

    market: Market
    start: int
    values: np.ndarray
    currency: str = "USD"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float).copy()
        if vals.ndim != 1:
            raise ValueError("price values must be one-dimensional")
        if vals.size and not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise NonFiniteValue(
                f"non-finite price at hour {self.start + bad} for {self.market.value}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def end(self) -> int:
        """Last hour covered (start - 1 when empty)."""
        return self.start + len(self) - 1

    def value_at(self, hour: int) -> float:
        if not self.start <= hour <= self.end:
            raise KeyError(f"hour {hour} outside [{self.start}, {self.end}]")
        return float(self.values[hour - self.start])

    def slice_hours(self, start: int, stop: int) -> "PriceSeries":
        """Sub-series over [start, stop); empty slices are permitted."""
        if start < self.start or stop > self.end + 1 or stop < start:
            raise ValueError(f"slice [{start}, {stop}) outside series span")
        lo = start - self.start
        return PriceSeries(self.market, start, self.values[lo : lo + (stop - start)], self.currency)


def _parse_market(token: str, row: int) -> Market:
    try:
        return Market(token)
    except ValueError:
        raise UnknownMarket(f"row {row}: unknown market {token!r}") from None


def load_prices(
    path: str | Path, grid: TimeGrid, currency: str = "USD"
) -> dict[Market, PriceSeries]:
    """Read a `hour,market,price` CSV covering every (hour, market) of the grid.

    Every pair must appear exactly once; errors name the offending row.
    """
    path = Path(path)
    n = grid.n_hours
    data = {m: np.full(n, np.nan) for m in MARKET_ORDER}
    seen: set[tuple[int, Market]] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["hour", "market", "price"]:
            raise PriceDataError(f"{path}: expected header 'hour,market,price'")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise PriceDataError(f"row {row_no}: expected 3 fields, got {len(row)}")
            try:
                hour = int(row[0])
            except ValueError:
                raise PriceDataError(f"row {row_no}: bad hour {row[0]!r}") from None
            market = _parse_market(row[1].strip(), row_no)
            try:
                price = float(row[2])
            except ValueError:
                raise NonFiniteValue(f"row {row_no}: bad price {row[2]!r}") from None
            if not math.isfinite(price):
                raise NonFiniteValue(f"row {row_no}: non-finite price {row[2]!r}")
            if not grid.t0 <= hour <= grid.t_f:
                raise PriceDataError(
                    f"row {row_no}: hour {hour} outside grid [{grid.t0}, {grid.t_f}]"
                )
            key = (hour, market)
            if key in seen:
                raise DuplicateEntry(f"row {row_no}: duplicate entry for hour {hour} {market.value}")
            seen.add(key)
            data[market][hour - grid.t0] = price
    for market in MARKET_ORDER:
        missing = np.flatnonzero(np.isnan(data[market]))
        if missing.size:
            hour = grid.t0 + int(missing[0])
            raise MissingHour(f"missing hour {hour} for market {market.value}")
    return {
        m: PriceSeries(m, grid.t0, data[m], currency=currency) for m in MARKET_ORDER
    }


def prices_to_csv(series: Mapping[Market, PriceSeries]) -> str:
    """Canonical CSV text: header plus rows sorted by (hour, market)."""
    if not series:
        return "hour,market,price\n"
    spans = {(s.start, len(s)) for s in series.values()}
    if len(spans) != 1:
        raise ValueError("market series are not aligned")
    lines = ["hour,market,price"]
    start, n = next(iter(spans))
    for i in range(n):
        for market in MARKET_ORDER:
            if market in series:
                lines.append(f"{start + i},{market.value},{series[market].values[i]!r}")
    return "\n".join(lines) + "\n"


def write_prices(series: Mapping[Market, PriceSeries], path: str | Path) -> None:
    Path(path).write_text(prices_to_csv(series))


def split_horizon(series: PriceSeries, grid: TimeGrid) -> tuple[PriceSeries, PriceSeries]:
    """Partition a grid-spanning series at t_obs.

    Concatenating the two outputs reproduces the input exactly; either part
    may be empty at the boundary values of t_obs.
    """
    if series.start != grid.t0 or len(series) != grid.n_hours:
        raise ValueError("series does not span the grid")
    first = series.slice_hours(grid.t0, grid.t_obs)
    second = series.slice_hours(grid.t_obs, grid.t_f + 1)
    return first, second
