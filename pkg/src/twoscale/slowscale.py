"""Slow-time-scale Bellman recursions and the bound-gap report.

Two bounding sequences are computed backward over days:

- the resource recursion pins tomorrow's health to a deterministic target
  reachable by aging, giving an upper bound;
- the price recursion dualizes the health decrement with a deterministic
  nonnegative surcharge, giving a lower bound via conjugation.

Battery-specific recursions work on an (health, capacity) grid; generic ones
accept any day-decomposed model and are exercised by the desk-scale oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    INF,
    DiscreteDist,
    Grid,
    GridValueFn,
    MULTILINEAR,
    fenchel_conjugate,
    low_add_arrays,
)
from .battery import BatteryConfig
from .intraday import (
    FastStageModel,
    IntradayPriceTable,
    IntradayResourceTable,
    PeriodicityClassMap,
    solve_fast_dp,
)


@dataclass(frozen=True)
class SlowValueSeq:
    """Per-day value functions, index d in 0..D+1; entry D+1 is the final cost."""

    kind: str  # price-lower | resource-upper | exact-oracle
    days: tuple

    def __post_init__(self):
        if self.kind not in ("price-lower", "resource-upper", "exact-oracle"):
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def horizon(self) -> int:
        return len(self.days) - 2

    def __getitem__(self, d: int) -> GridValueFn:
        return self.days[d]


@dataclass(frozen=True)
class BoundReport:
    """Per-day gap summary between a lower and an upper value sequence."""

    max_rel_gap: np.ndarray  # per day, over the whole grid
    gap_at_x0: np.ndarray  # per day, at the designated initial state
    lower_at_x0: np.ndarray
    upper_at_x0: np.ndarray
    violations: int  # grid points with lower > upper beyond tolerance


def final_cost_fn(cfg: BatteryConfig, h_grid: np.ndarray, c_grid: np.ndarray) -> GridValueFn:
    grid = Grid([h_grid, c_grid])
    pts = grid.points()
    vals = np.array([cfg.final_cost(h, c) for h, c in pts])
    return GridValueFn(grid, vals, interp=MULTILINEAR)


def _renewal_values(
    vnext: np.ndarray, h_grid: np.ndarray, c_grid: np.ndarray, cfg: BatteryConfig
) -> np.ndarray:
    """Value of installing a fresh battery of each size r > 0 on the renewal
    grid: vnext at (cycle_count(r) * r, r).  Renewal states must be on-grid."""
    out = []
    for r in cfg.renewal_grid:
        if r <= 0.0:
            continue
        h_new = cfg.cycle_count(r) * r
        hi = np.searchsorted(h_grid, h_new)
        ci = np.searchsorted(c_grid, r)
        if hi >= len(h_grid) or h_grid[hi] != h_new or ci >= len(c_grid) or c_grid[ci] != r:
            raise ValueError(f"renewal state ({h_new}, {r}) is not on the (h, c) grid")
        out.append((r, vnext[hi, ci]))
    return out


def _best_buy_per_atom(renewals, price_law: DiscreteDist) -> tuple[np.ndarray, np.ndarray]:
    """For each battery-price atom: cheapest strictly positive renewal value
    p * r + (discounted) continuation at the fresh state.  The continuation
    values passed in are already discounted.  Returns (probs, best values)."""
    probs, best = [], []
    for p, prob in price_law.atoms():
        p = float(p)
        cands = [p * r + v for r, v in renewals]
        best.append(min(cands) if cands else INF)
        probs.append(prob)
    return np.asarray(probs), np.asarray(best)


def resource_bellman_recursion(
    tables: dict[int, IntradayResourceTable],
    classmap: PeriodicityClassMap,
    price_laws: list[DiscreteDist],
    cfg: BatteryConfig,
    h_grid: np.ndarray,
    c_grid: np.ndarray,
    D: int,
) -> SlowValueSeq:
    """Upper-bound recursion over (health, capacity).

    Each day picks an aging budget dh (tomorrow's health target h - dh >= 0)
    and, per battery-price atom, either keeps the battery or buys a fresh one.
    Day costs are undiscounted; the continuation is scaled by the daily
    discount factor (total cost is sum of gamma^d day costs).
    """
    h_grid = np.asarray(h_grid, dtype=float)
    c_grid = np.asarray(c_grid, dtype=float)
    grid = Grid([h_grid, c_grid])
    days: list[GridValueFn] = [None] * (D + 2)
    days[D + 1] = final_cost_fn(cfg, h_grid, c_grid)
    vnext = days[D + 1].values
    gamma = cfg.gamma
    for d in range(D, -1, -1):
        table = tables[int(classmap.day_to_class[d])]
        dh_grid = table.dh_grid
        disc = gamma * vnext
        renewals = _renewal_values(disc, h_grid, c_grid, cfg)
        probs, best_buy = _best_buy_per_atom(renewals, price_laws[d])
        vals = np.empty((len(h_grid), len(c_grid)))
        # candidate next-day healths per (current h, chosen dh)
        h_next = h_grid[:, None] - dh_grid[None, :]
        feasible = h_next >= -1e-9
        h_next_c = np.clip(h_next, 0.0, None)
        for ci in range(len(c_grid)):
            keep = np.interp(h_next_c, h_grid, disc[:, ci])  # (n_h, n_dh)
            # per price atom, the cheaper of keeping vs buying fresh
            expect = np.zeros_like(keep)
            for p, b in zip(probs, best_buy):
                expect += p * np.minimum(keep, b)
            day_cost = table.table.values[:, ci][None, :]
            q = np.where(feasible, day_cost + expect, INF)
            vals[:, ci] = q.min(axis=1)
        vfn = GridValueFn(grid, vals, interp=MULTILINEAR)
        days[d] = vfn
        vnext = vals
    return SlowValueSeq(kind="resource-upper", days=tuple(days))


def price_bellman_recursion(
    tables: dict[int, IntradayPriceTable],
    classmap: PeriodicityClassMap,
    price_laws: list[DiscreteDist],
    cfg: BatteryConfig,
    h_grid: np.ndarray,
    c_grid: np.ndarray,
    D: int,
) -> SlowValueSeq:
    """Lower-bound recursion over (health, capacity).

    The daily health decrement is dualized with a surcharge pi >= 0; each day
    takes the best surcharge of: intraday cost at pi, plus the cheapest
    end-of-day health consistent with pi, minus pi times current health."""
    h_grid = np.asarray(h_grid, dtype=float)
    c_grid = np.asarray(c_grid, dtype=float)
    grid = Grid([h_grid, c_grid])
    days: list[GridValueFn] = [None] * (D + 2)
    days[D + 1] = final_cost_fn(cfg, h_grid, c_grid)
    vnext = days[D + 1].values
    gamma = cfg.gamma
    for d in range(D, -1, -1):
        table = tables[int(classmap.day_to_class[d])]
        pi_grid = table.pi_grid
        disc = gamma * vnext
        renewals = _renewal_values(disc, h_grid, c_grid, cfg)
        probs, best_buy = _best_buy_per_atom(renewals, price_laws[d])
        vals = np.empty((len(h_grid), len(c_grid)))
        for ci in range(len(c_grid)):
            # expected continuation if the day ends at health h_end (buy or keep)
            expect = np.zeros(len(h_grid))
            for p, b in zip(probs, best_buy):
                expect += p * np.minimum(disc[:, ci], b)
            # inner minimization over end-of-day health, per surcharge
            inner = (pi_grid[:, None] * h_grid[None, :] + expect[None, :]).min(axis=1)
            obj = table.table.values[ci, :][:, None] + inner[:, None] - pi_grid[:, None] * h_grid[None, :]
            vals[:, ci] = obj.max(axis=0)
        vfn = GridValueFn(grid, vals, interp=MULTILINEAR)
        days[d] = vfn
        vnext = vals
    return SlowValueSeq(kind="price-lower", days=tuple(days))


def generic_resource_recursion(problem, kind_check: bool = True) -> SlowValueSeq:
    """Upper bound for a generic day-decomposed model: each day solves a fast DP
    with terminal constraint (end state >= target), then minimizes target cost
    plus the next-day value at the target."""
    states = problem.states
    grid = Grid([states])
    D = problem.D
    days: list[GridValueFn] = [None] * (D + 2)
    vnext = np.asarray(problem.final_cost, dtype=float)
    days[D + 1] = GridValueFn(grid, vnext, interp=MULTILINEAR)
    for d in range(D, -1, -1):
        model = problem.day_model(d)
        # intraday cost as a function of (start state, target): one DP per target
        ell = np.empty((len(states), len(states)))
        for ri, r in enumerate(states):
            term_vals = np.where(states >= r - 1e-12, 0.0, INF)
            terminal = GridValueFn(grid, term_vals, interp=MULTILINEAR)
            ell[:, ri] = solve_fast_dp(model, terminal).values[0].values
        vals = low_add_arrays(ell, vnext[None, :]).min(axis=1)
        days[d] = GridValueFn(grid, vals, interp=MULTILINEAR)
        vnext = vals
    return SlowValueSeq(kind="resource-upper", days=tuple(days))


def generic_price_recursion(problem, price_points: np.ndarray) -> SlowValueSeq:
    """Lower bound for a generic day-decomposed model: dualize the day-boundary
    coupling with nonpositive prices and subtract the conjugate of tomorrow's
    value."""
    price_points = np.asarray(price_points, dtype=float)
    if (price_points > 0).any():
        raise ValueError("price points must be nonpositive")
    states = problem.states
    grid = Grid([states])
    price_grid = Grid([np.sort(price_points)])
    D = problem.D
    days: list[GridValueFn] = [None] * (D + 2)
    vnext_fn = GridValueFn(grid, np.asarray(problem.final_cost, dtype=float), interp=MULTILINEAR)
    days[D + 1] = vnext_fn
    for d in range(D, -1, -1):
        model = problem.day_model(d)
        conj = fenchel_conjugate(vnext_fn, price_grid)
        cand = np.empty((len(price_grid.axes[0]), len(states)))
        for pi, p in enumerate(price_grid.axes[0]):
            terminal = GridValueFn(grid, p * states, interp=MULTILINEAR)
            ell_p = solve_fast_dp(model, terminal).values[0].values
            cv = conj.values[pi]
            neg_conj = -INF if (np.isposinf(cv)) else (INF if np.isneginf(cv) else -cv)
            cand[pi] = low_add_arrays(ell_p, np.full(len(states), neg_conj))
        vals = cand.max(axis=0)
        vnext_fn = GridValueFn(grid, vals, interp=MULTILINEAR)
        days[d] = vnext_fn
    return SlowValueSeq(kind="price-lower", days=tuple(days))


def block_bellman_solve(problem, inequality: bool = False) -> SlowValueSeq:
    """Exact slow-scale value by time blocks: one fast DP per day, chained
    through the day boundary (identity, or a relaxation picking the cheapest
    dominated state when the dynamics are inequalities)."""
    states = problem.states
    grid = Grid([states])
    D = problem.D
    days: list[GridValueFn] = [None] * (D + 2)
    vnext = np.asarray(problem.final_cost, dtype=float)
    days[D + 1] = GridValueFn(grid, vnext, interp=MULTILINEAR)
    for d in range(D, -1, -1):
        boundary = np.minimum.accumulate(vnext) if inequality else vnext
        terminal = GridValueFn(grid, boundary, interp=MULTILINEAR)
        vals = solve_fast_dp(problem.day_model(d), terminal).values[0].values
        days[d] = GridValueFn(grid, vals, interp=MULTILINEAR)
        vnext = vals
    return SlowValueSeq(kind="exact-oracle", days=tuple(days))


def check_sandwich(
    lower: SlowValueSeq, upper: SlowValueSeq, x0, tol: float = 1e-6
) -> BoundReport:
    """Per-day gap report; flags grid points where lower exceeds upper."""
    if len(lower.days) != len(upper.days):
        raise ValueError("sequences cover different horizons")
    n = len(lower.days)
    max_rel = np.empty(n)
    gap0 = np.empty(n)
    lo0 = np.empty(n)
    up0 = np.empty(n)
    violations = 0
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    for d in range(n):
        lo, up = lower.days[d], upper.days[d]
        if lo.grid != up.grid:
            raise ValueError(f"grid mismatch at day {d}")
        lv, uv = lo.values, up.values
        denom = np.maximum(np.abs(lv), 1e-9)
        rel = (uv - lv) / denom
        max_rel[d] = float(rel.max())
        violations += int(np.sum(lv > uv + tol * denom))
        l0 = float(lo.eval_many(x0)[0])
        u0 = float(up.eval_many(x0)[0])
        lo0[d], up0[d] = l0, u0
        gap0[d] = (u0 - l0) / max(abs(l0), 1e-9)
    return BoundReport(
        max_rel_gap=max_rel,
        gap_at_x0=gap0,
        lower_at_x0=lo0,
        upper_at_x0=up0,
        violations=violations,
    )
