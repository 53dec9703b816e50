"""Battery aging/renewal case study: dynamics, tariff, stage costs, netload
distribution fitting and scenario generation.

State is (soc, health, capacity) in kWh.  Health is the remaining
exchangeable-energy budget: every kWh charged or discharged consumes one kWh
of health; a battery dies when health hits zero.  Renewal at a day boundary
replaces the battery by an empty one of chosen capacity r with health
cycle_count(r) * r.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .core import DiscreteDist

N_SLOTS = 48

OFF_PEAK_RATE = 0.0255
SHOULDER_RATE = 0.0644
PEAK_RATE = 0.2485


def default_cycle_count(capacity: float) -> int:
    """Exchangeable-energy multiple per kWh of capacity (constant by default)."""
    return 4


def zero_final_cost(h: float, c: float) -> float:
    return 0.0


def tariff_for_slots(n_slots: int) -> "Tariff":
    """Time-of-use tariff sampled over n_slots equal slots starting at 00:00:
    off-peak 22:00-7:00, shoulder 7:00-17:00, peak 17:00-22:00."""
    rates = np.empty(n_slots)
    for m in range(n_slots):
        hour = m * 24.0 / n_slots
        if hour >= 22.0 or hour < 7.0:
            rates[m] = OFF_PEAK_RATE
        elif hour < 17.0:
            rates[m] = SHOULDER_RATE
        else:
            rates[m] = PEAK_RATE
    return Tariff(rates)


def default_tariff() -> "Tariff":
    return tariff_for_slots(N_SLOTS)


@dataclass(frozen=True)
class Tariff:
    """Per-slot electricity purchase price ($/kWh); slot 0 starts at 00:00."""

    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 1 or (rates < 0).any():
            raise ValueError("tariff must be a 1-D array of nonnegative rates")
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)

    @property
    def n_slots(self) -> int:
        return len(self.rates)

    def rate(self, m: int) -> float:
        if not 0 <= m < len(self.rates):
            raise ValueError(f"slot {m} out of range [0, {len(self.rates) - 1}]")
        return float(self.rates[m])


def tariff_rate(m: int) -> float:
    """Default tariff's rate for a half-hour slot."""
    return default_tariff().rate(m)


@dataclass(frozen=True)
class BatteryState:
    soc: float
    health: float
    capacity: float

    def check_bounds(self, cfg: "BatteryConfig", tol: float = 1e-9) -> None:
        c = self.capacity
        if not (-tol <= self.soc <= cfg.soc_fraction * c + tol):
            raise ValueError(f"soc {self.soc} outside [0, {cfg.soc_fraction * c}]")
        if not (-tol <= self.health <= cfg.cycle_count(c) * c + tol):
            raise ValueError(f"health {self.health} outside [0, {cfg.cycle_count(c) * c}]")
        if not (-tol <= c <= cfg.max_capacity + tol):
            raise ValueError(f"capacity {c} outside [0, {cfg.max_capacity}]")


@dataclass(frozen=True)
class BatteryConfig:
    charge_eff: float = 0.95
    discharge_eff: float = 0.95
    u_min: float = -150.0
    u_max: float = 150.0
    max_capacity: float = 1500.0
    renewal_grid: tuple = tuple(float(c) for c in range(0, 1600, 100))
    soc_fraction: float = 0.8
    cycle_count: Callable[[float], int] = default_cycle_count
    gamma: float = 0.99986
    final_cost: Callable[[float, float], float] = zero_final_cost
    tariff: Tariff = field(default_factory=default_tariff)

    def __post_init__(self):
        if not (0.0 < self.charge_eff <= 1.0 and 0.0 < self.discharge_eff <= 1.0):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not self.u_min < 0.0 < self.u_max:
            raise ValueError("control bounds must straddle 0")
        if min(self.renewal_grid) < 0 or max(self.renewal_grid) > self.max_capacity:
            raise ValueError("renewal grid must lie in [0, max_capacity]")
        if not (0.0 < self.soc_fraction <= 1.0):
            raise ValueError("soc_fraction must lie in (0, 1]")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")


def fast_dynamics(x: BatteryState, u: float, cfg: BatteryConfig) -> BatteryState:
    """One half-hour transition; no clamping, feasibility is checked upstream."""
    up, um = max(u, 0.0), max(-u, 0.0)
    return BatteryState(
        soc=x.soc + cfg.charge_eff * up - cfg.discharge_eff * um,
        health=x.health - up - um,
        capacity=x.capacity,
    )


def renewal_dynamics(x: BatteryState, r: float, cfg: BatteryConfig) -> BatteryState:
    """Day-boundary renewal: r > 0 installs an empty battery of capacity r."""
    if r not in cfg.renewal_grid:
        raise ValueError(f"renewal size {r} not on the renewal grid")
    if r > 0.0:
        return BatteryState(soc=0.0, health=cfg.cycle_count(r) * r, capacity=r)
    return x


def stage_cost(u: float, w: float, m: int, tariff: Tariff) -> float:
    """Energy bill for one slot: surplus is wasted, only net demand is billed."""
    return tariff.rate(m) * max(0.0, w + u)


@dataclass(frozen=True)
class ScenarioSet:
    """netload: (n_scen, n_days, n_slots); battery_price: (n_scen, n_days), $/kWh."""

    netload: np.ndarray
    battery_price: np.ndarray

    def __post_init__(self):
        netload = np.asarray(self.netload, dtype=float)
        price = np.asarray(self.battery_price, dtype=float)
        if netload.ndim != 3 or price.ndim != 2:
            raise ValueError("netload must be 3-D and battery_price 2-D")
        if netload.shape[:2] != price.shape:
            raise ValueError("scenario/day shapes of netload and price disagree")
        if (price <= 0).any():
            raise ValueError("battery prices must be positive")
        netload.setflags(write=False)
        price.setflags(write=False)
        object.__setattr__(self, "netload", netload)
        object.__setattr__(self, "battery_price", price)

    @property
    def n_scenarios(self) -> int:
        return self.netload.shape[0]

    @property
    def n_days(self) -> int:
        return self.netload.shape[1]

    @property
    def n_slots(self) -> int:
        return self.netload.shape[2]


def kmeans_1d(data: np.ndarray, k: int, max_iter: int = 200) -> DiscreteDist:
    """Deterministic 1-D Lloyd clustering; atoms are centroids, probs are shares.

    Centroids are seeded at evenly spaced quantiles.  An emptied cluster is
    re-seeded at the point farthest from its assigned centroid.
    """
    data = np.asarray(data, dtype=float).ravel()
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(data) < k:
        raise ValueError(f"need at least {k} observations, got {len(data)}")
    centers = np.quantile(np.sort(data), (np.arange(k) + 0.5) / k)
    assign = None
    for _ in range(max_iter):
        dist = np.abs(data[:, None] - centers[None, :])
        new_assign = np.argmin(dist, axis=1)
        for j in range(k):
            mask = new_assign == j
            if mask.any():
                centers[j] = data[mask].mean()
            else:
                far = int(np.argmax(np.abs(data - centers[new_assign])))
                centers[j] = data[far]
                new_assign[far] = j
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    order = np.argsort(centers)
    centers = centers[order]
    counts = np.bincount(order.argsort()[assign], minlength=k)
    probs = counts / counts.sum()
    keep = probs > 0
    return DiscreteDist(centers[keep], probs[keep] / probs[keep].sum())


def fit_netload_distributions(
    scenarios: ScenarioSet, classmap, k: int, seed: int = 0
) -> dict[int, list[DiscreteDist]]:
    """Per (periodicity class, slot) k-means laws from pooled observations."""
    day_class = classmap.day_to_class[: scenarios.n_days]
    laws: dict[int, list[DiscreteDist]] = {}
    missing = []
    for cls in sorted(classmap.representatives):
        days = np.flatnonzero(day_class == cls)
        slot_laws = []
        for m in range(scenarios.n_slots):
            obs = scenarios.netload[:, days, m].ravel()
            if len(obs) < k:
                missing.append((cls, m))
                continue
            slot_laws.append(kmeans_1d(obs, k))
        laws[cls] = slot_laws
    if missing:
        raise ValueError(f"insufficient data (< {k} observations) for (class, slot): {missing}")
    return laws


DEFAULT_PRICE_FORECAST = (0.35, 0.29, 0.24, 0.20, 0.17, 0.14, 0.12, 0.10, 0.08, 0.07)


def interp_price_forecast(forecast: Sequence[float], n_days: int) -> np.ndarray:
    """Daily battery price curve by linear interpolation of a per-year forecast."""
    forecast = np.asarray(forecast, dtype=float)
    years_needed = (n_days - 1) / 365.0
    if len(forecast) - 1 < years_needed:
        raise ValueError(
            f"forecast covers {len(forecast) - 1} years, horizon needs {years_needed:.2f}"
        )
    t = np.arange(n_days) / 365.0
    return np.interp(t, np.arange(len(forecast), dtype=float), forecast)


def gen_battery_price_scenarios(
    forecast: Sequence[float],
    sigma: float,
    n: int,
    n_days: int,
    seed: int,
    floor: float = 0.01,
) -> np.ndarray:
    """(n, n_days) synthetic battery price paths: forecast + Gaussian noise, floored."""
    if sigma < 0 or n < 1 or floor <= 0:
        raise ValueError("need sigma >= 0, n >= 1, floor > 0")
    base = interp_price_forecast(forecast, n_days)
    out = np.empty((n, n_days))
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        out[i] = np.maximum(base + sigma * rng.standard_normal(n_days), floor)
    return out


def battery_price_laws(
    forecast: Sequence[float],
    sigma: float,
    n_days: int,
    floor: float = 0.01,
    n_atoms: int = 5,
) -> list[DiscreteDist]:
    """Per-day discrete battery price law: midpoint-quantile discretization of
    the Gaussian noise around the interpolated forecast, floored."""
    base = interp_price_forecast(forecast, n_days)
    nd = NormalDist()
    z = np.array([nd.inv_cdf((i + 0.5) / n_atoms) for i in range(n_atoms)])
    probs = np.full(n_atoms, 1.0 / n_atoms)
    laws = []
    for d in range(n_days):
        atoms = np.maximum(base[d] + sigma * z, floor)
        atoms, inv = np.unique(atoms, return_inverse=True)
        p = np.bincount(inv, weights=probs)
        laws.append(DiscreteDist(atoms, p / p.sum()))
    return laws


def synthetic_netload_scenarios(
    n: int, n_days: int, n_slots: int, seed: int, base_kw: float = 40.0
) -> np.ndarray:
    """Synthetic netload: morning/evening demand humps, a midday solar dip whose
    depth varies by season, plus Gaussian noise.  Units: kWh per slot."""
    slots = np.arange(n_slots)
    hour = slots * 24.0 / n_slots
    demand = 0.55 + 0.30 * np.exp(-((hour - 8.0) ** 2) / 8.0) + 0.45 * np.exp(
        -((hour - 19.5) ** 2) / 6.0
    )
    solar_shape = np.exp(-((hour - 12.5) ** 2) / 9.0)
    days = np.arange(n_days)
    season = 0.5 - 0.35 * np.cos(2.0 * math.pi * (days % 365) / 365.0)  # summer high
    out = np.empty((n, n_days, n_slots))
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        noise = 0.08 * rng.standard_normal((n_days, n_slots))
        out[i] = base_kw * (
            demand[None, :] - 0.9 * season[:, None] * solar_shape[None, :] + noise
        ) * 0.5
    return out


def load_netload_csv(path, n_slots: int = N_SLOTS) -> np.ndarray:
    """Read `scenario,day,slot,netload_kwh` rows into an (n, days, slots) array."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                (int(rec["scenario"]), int(rec["day"]), int(rec["slot"]), float(rec["netload_kwh"]))
            )
    if not rows:
        raise ValueError(f"no rows in {path}")
    n = max(r[0] for r in rows) + 1
    days = max(r[1] for r in rows) + 1
    out = np.zeros((n, days, n_slots))
    for s, d, m, v in rows:
        out[s, d, m] = v
    return out


def load_price_csv(path) -> np.ndarray:
    """Read `scenario,day,price_usd_per_kwh` rows into an (n, days) array."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["scenario"]), int(rec["day"]), float(rec["price_usd_per_kwh"])))
    if not rows:
        raise ValueError(f"no rows in {path}")
    n = max(r[0] for r in rows) + 1
    days = max(r[1] for r in rows) + 1
    out = np.zeros((n, days))
    for s, d, v in rows:
        out[s, d] = v
    return out


def white_noise_resample(
    laws: dict[int, list[DiscreteDist]],
    price_laws: list[DiscreteDist],
    classmap,
    n: int,
    seed: int,
    n_days: int,
) -> ScenarioSet:
    """Scenarios drawn i.i.d. per (day, slot) from the day's class law, plus a
    daily battery price from its law; per-scenario RNG seeded by (seed, index)."""
    n_slots = len(next(iter(laws.values())))
    day_class = classmap.day_to_class[:n_days]
    netload = np.empty((n, n_days, n_slots))
    price = np.empty((n, n_days))
    price_cums = [np.cumsum(pl.probs) for pl in price_laws]
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        u = rng.random((n_days, n_slots))
        for cls, slot_laws in laws.items():
            days = np.flatnonzero(day_class == cls)
            if len(days) == 0:
                continue
            for m, law in enumerate(slot_laws):
                cum = np.cumsum(law.probs)
                pick = np.searchsorted(cum, u[days, m], side="right")
                pick = np.minimum(pick, len(law.probs) - 1)
                netload[i, days, m] = law.support[pick]
        up = rng.random(n_days)
        for d in range(n_days):
            j = min(np.searchsorted(price_cums[d], up[d], side="right"), len(price_cums[d]) - 1)
            price[i, d] = price_laws[d].support[j]
    return ScenarioSet(netload, price)
