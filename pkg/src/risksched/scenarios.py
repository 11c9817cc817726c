"""Gaussian price scenario sets for the uncertain part of the horizon.

Each cell (hour, market) is drawn i.i.d. from a normal centred on the
nominal trajectory with a single standard deviation; no cross-hour or
cross-market correlation is imposed.  Sampling runs on numpy's
counter-based Philox generator seeded through a SeedSequence, so the same
(nominal, sigma, n_s, seed) inputs reproduce the set bit for bit.  The
dump files, not the generator stream, are the portable interchange format:
a solver in another environment ingests the CSV/JSON pair directly.

Draw order: scenario index outermost, then markets in DA/ID order, then
one vector draw per market covering all hours.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .markets import MARKET_ORDER, Market, PriceSeries

__all__ = [
    "ScenarioSet",
    "ScenarioError",
    "InvalidCount",
    "NegativeSigma",
    "InsufficientScenarios",
    "Moments",
    "sample_scenarios",
    "empirical_moments",
    "single_scenario",
    "mean_scenario",
    "dump_scenarios",
    "load_scenarios",
]


class ScenarioError(ValueError):
    pass


class InvalidCount(ScenarioError):
    pass


class NegativeSigma(ScenarioError):
    pass


class InsufficientScenarios(ScenarioError):
    pass


@dataclass(frozen=True)
class ScenarioSet:
    """Sampled price trajectories over the observed hours.

    Probabilities are general, though every sampler here emits the
    equiprobable 1/n_s weighting.
    """

    scenarios: tuple[dict[Market, PriceSeries], ...]
    probabilities: np.ndarray
    seed: int
    sigma_obs: float

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=float).copy()
        if probs.ndim != 1 or probs.size != len(self.scenarios):
            raise ScenarioError("one probability per scenario required")
        if probs.size == 0:
            raise InvalidCount("scenario set may not be empty")
        if np.any(probs <= 0):
            raise ScenarioError("scenario probabilities must be positive")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ScenarioError(f"probabilities sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probabilities", probs)
        ref = self.scenarios[0]
        shape = {m: (s.start, len(s)) for m, s in ref.items()}
        for k, scen in enumerate(self.scenarios):
            if {m: (s.start, len(s)) for m, s in scen.items()} != shape:
                raise ScenarioError(f"scenario {k} shape differs from scenario 0")

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    @property
    def markets(self) -> tuple[Market, ...]:
        return tuple(m for m in MARKET_ORDER if m in self.scenarios[0])

    @property
    def start(self) -> int:
        return self.scenarios[0][self.markets[0]].start

    @property
    def n_hours(self) -> int:
        return len(self.scenarios[0][self.markets[0]])

    def values(self, market: Market) -> np.ndarray:
        """(n_scenarios, n_hours) price matrix for one market."""
        return np.vstack([scen[market].values for scen in self.scenarios])

    def fingerprint(self) -> str:
        """Content hash used to detect mixed-up scenario sets."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.probabilities).tobytes())
        h.update(str(self.start).encode())
        for m in self.markets:
            h.update(m.value.encode())
            h.update(np.ascontiguousarray(self.values(m)).tobytes())
        return h.hexdigest()


def sample_scenarios(
    nominal: Mapping[Market, PriceSeries],
    sigma_obs: float,
    n_s: int,
    seed: int,
) -> ScenarioSet:
    """Draw n_s independent trajectories around the nominal one.

    Sampled prices are not truncated at zero; Gaussian tails may produce
    negative prices, which is physically admissible.
    """
    if n_s < 1:
        raise InvalidCount(f"n_s must be >= 1, got {n_s}")
    if sigma_obs < 0:
        raise NegativeSigma(f"sigma_obs must be >= 0, got {sigma_obs}")
    if not nominal:
        raise ScenarioError("nominal trajectory must cover at least one market")
    markets = [m for m in MARKET_ORDER if m in nominal]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    scenarios = []
    for _ in range(n_s):
        scen: dict[Market, PriceSeries] = {}
        for m in markets:
            base = nominal[m]
            noise = sigma_obs * rng.standard_normal(len(base))
            scen[m] = PriceSeries(m, base.start, base.values + noise, base.currency)
        scenarios.append(scen)
    probs = np.full(n_s, 1.0 / n_s)
    return ScenarioSet(tuple(scenarios), probs, seed=seed, sigma_obs=sigma_obs)


@dataclass(frozen=True)
class Moments:
    mean: dict[Market, np.ndarray]
    variance: dict[Market, np.ndarray]


def empirical_moments(sset: ScenarioSet) -> Moments:
    """Probability-weighted per-cell mean and unbiased variance.

    Uses reliability weights, which reduces to the familiar n-1 divisor
    for equiprobable sets.
    """
    if sset.n_scenarios < 2:
        raise InsufficientScenarios("variance needs at least two scenarios")
    w = sset.probabilities
    denom = 1.0 - float(np.sum(w**2))
    mean: dict[Market, np.ndarray] = {}
    var: dict[Market, np.ndarray] = {}
    for m in sset.markets:
        vals = sset.values(m)
        mu = w @ vals
        var[m] = (w @ (vals - mu) ** 2) / denom
        mean[m] = mu
    return Moments(mean=mean, variance=var)


def single_scenario(sset: ScenarioSet, index: int) -> ScenarioSet:
    """One member of the set as a degenerate (probability 1) set."""
    if not 0 <= index < sset.n_scenarios:
        raise IndexError(f"scenario {index} outside [0, {sset.n_scenarios})")
    return ScenarioSet(
        (sset.scenarios[index],),
        np.array([1.0]),
        seed=sset.seed,
        sigma_obs=sset.sigma_obs,
    )


def mean_scenario(sset: ScenarioSet) -> ScenarioSet:
    """Per-cell probability-weighted mean trajectory as a degenerate set."""
    w = sset.probabilities
    scen: dict[Market, PriceSeries] = {}
    for m in sset.markets:
        ref = sset.scenarios[0][m]
        scen[m] = PriceSeries(m, ref.start, w @ sset.values(m), ref.currency)
    return ScenarioSet((scen,), np.array([1.0]), seed=sset.seed, sigma_obs=0.0)


def dump_scenarios(sset: ScenarioSet, csv_path: str | Path, sidecar_path: str | Path) -> None:
    """Write the `scenario,hour,market,price` CSV plus its JSON sidecar."""
    lines = ["scenario,hour,market,price"]
    for s, scen in enumerate(sset.scenarios):
        for i in range(sset.n_hours):
            for m in sset.markets:
                lines.append(f"{s},{sset.start + i},{m.value},{scen[m].values[i]!r}")
    Path(csv_path).write_text("\n".join(lines) + "\n")
    currency = sset.scenarios[0][sset.markets[0]].currency
    sidecar = {
        "seed": sset.seed,
        "sigma_obs": sset.sigma_obs,
        "n_s": sset.n_scenarios,
        "probabilities": [float(p) for p in sset.probabilities],
        "start": sset.start,
        "markets": [m.value for m in sset.markets],
        "currency": currency,
    }
    Path(sidecar_path).write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def load_scenarios(csv_path: str | Path, sidecar_path: str | Path) -> ScenarioSet:
    """Inverse of dump_scenarios; lets solvers bypass generation."""
    meta = json.loads(Path(sidecar_path).read_text())
    markets = [Market(m) for m in meta["markets"]]
    n_s = int(meta["n_s"])
    start = int(meta["start"])
    currency = meta.get("currency", "USD")
    rows: dict[tuple[int, Market], dict[int, float]] = {}
    import csv as _csv

    with Path(csv_path).open(newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["scenario", "hour", "market", "price"]:
            raise ScenarioError("expected header 'scenario,hour,market,price'")
        for row in reader:
            if not row:
                continue
            s, hour, market, price = int(row[0]), int(row[1]), Market(row[2]), float(row[3])
            rows.setdefault((s, market), {})[hour] = price
    scenarios = []
    for s in range(n_s):
        scen: dict[Market, PriceSeries] = {}
        for m in markets:
            cells = rows.get((s, m), {})
            hours = sorted(cells)
            if hours and (hours[0] != start or hours != list(range(start, start + len(hours)))):
                raise ScenarioError(f"scenario {s} market {m.value} has gaps")
            vals = np.array([cells[h] for h in hours], dtype=float)
            scen[m] = PriceSeries(m, start, vals, currency)
        scenarios.append(scen)
    return ScenarioSet(
        tuple(scenarios),
        np.asarray(meta["probabilities"], dtype=float),
        seed=int(meta["seed"]),
        sigma_obs=float(meta["sigma_obs"]),
    )
