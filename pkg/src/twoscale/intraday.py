"""Fast-time-scale backward dynamic programming: the generic solver plus the
battery-specific daily cost tables.

Two families of daily tables are produced per periodicity class:

- resource tables: optimal daily bill as a function of (aging budget, capacity),
  the budget being carried as an explicit remaining-exchangeable-energy state;
- price tables: optimal daily bill plus a per-kWh aging surcharge, as a function
  of (capacity, surcharge).

Both start the day with an empty battery (state of charge pinned to 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    INF,
    DiscreteDist,
    Grid,
    GridValueFn,
    MULTILINEAR,
    low_add_arrays,
)
from .battery import BatteryConfig, Tariff

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class FastStage:
    """One fast step: state grid, control points, noise law and handles.

    cost(states, u, w) -> per-state cost array (may contain +inf for
    infeasible controls); dynamics(states, u, w) -> next-state array.
    ``noise_free_dynamics`` flags dynamics that ignore w, letting the solver
    hoist next-state interpolation out of the noise loop.
    """

    state_grid: Grid
    controls: np.ndarray
    noise: DiscreteDist
    cost: Callable[[np.ndarray, float, float], np.ndarray]
    dynamics: Callable[[np.ndarray, float, float], np.ndarray]
    noise_free_dynamics: bool = False


@dataclass(frozen=True)
class FastStageModel:
    stages: tuple
    terminal_grid: Grid


class FastDpSolution:
    """Backward-induction output: one value function per fast step plus the
    terminal, and a greedy argmin usable at arbitrary states and noises."""

    def __init__(self, model: FastStageModel, values: list[GridValueFn]):
        self.model = model
        self.values = values  # length M+2, index m in 0..M+1

    def argmin_control(self, m: int, x: np.ndarray, w: float) -> tuple[float, float]:
        """Greedy minimizing control at fast step m, state x, realized noise w.

        Returns (control, attained value); ties go to the smallest control index.
        """
        stage = self.model.stages[m]
        vnext = self.values[m + 1]
        x = np.asarray(x, dtype=float).reshape(1, -1)
        best_u, best_q = None, INF
        for u in stage.controls:
            q = float(
                low_add_arrays(
                    stage.cost(x, float(u), w), vnext.eval_many(stage.dynamics(x, float(u), w))
                )[0]
            )
            if best_u is None or q < best_q:
                best_u, best_q = float(u), q
        return best_u, best_q


def _expect_accumulate(total, pos, neg, term: np.ndarray, p: float):
    """Accumulate p * term into (finite total, +inf mask, -inf mask)."""
    pos |= np.isposinf(term)
    neg |= np.isneginf(term)
    fin = np.isfinite(term)
    total += np.where(fin, p * term, 0.0)
    return total, pos, neg


def solve_fast_dp(model: FastStageModel, terminal: GridValueFn) -> FastDpSolution:
    """V_m(x) = E_w[ min_u cost(x,u,w) + V_{m+1}(dynamics(x,u,w)) ].

    All controls infeasible at some (m, x, w) yields V_m(x) = +inf, not an
    error.  Next states are clamped to the following stage's grid box.
    """
    if terminal.grid != model.terminal_grid:
        raise ValueError("terminal function grid does not match the model terminal grid")
    values: list[GridValueFn] = [terminal]
    vnext = terminal
    for stage in reversed(model.stages):
        states = stage.state_grid.points()
        n = states.shape[0]
        total = np.zeros(n)
        pos = np.zeros(n, dtype=bool)
        neg = np.zeros(n, dtype=bool)
        if stage.noise_free_dynamics:
            w0 = stage.noise.support[0]
            cont = [
                vnext.eval_many(stage.dynamics(states, float(u), w0)) for u in stage.controls
            ]
        else:
            cont = None
        for w, p in stage.noise.atoms():
            q_best = None
            for j, u in enumerate(stage.controls):
                cw = cont[j] if cont is not None else vnext.eval_many(
                    stage.dynamics(states, float(u), w)
                )
                q = low_add_arrays(stage.cost(states, float(u), w), cw)
                q_best = q if q_best is None else np.minimum(q_best, q)
            total, pos, neg = _expect_accumulate(total, pos, neg, q_best, p)
        vals = np.where(neg, -INF, np.where(pos, INF, total))
        vnext = GridValueFn(stage.state_grid, vals, interp=MULTILINEAR)
        values.append(vnext)
    values.reverse()
    return FastDpSolution(model, values)


@dataclass(frozen=True)
class PeriodicityClassMap:
    """day -> class id, plus one representative day per class."""

    day_to_class: np.ndarray
    representatives: dict[int, int]

    def __post_init__(self):
        d2c = np.asarray(self.day_to_class, dtype=np.intp)
        d2c.setflags(write=False)
        object.__setattr__(self, "day_to_class", d2c)
        for cls, rep in self.representatives.items():
            if d2c[rep] != cls:
                raise ValueError(f"representative {rep} is not in class {cls}")

    @property
    def n_classes(self) -> int:
        return len(self.representatives)


TRIMESTER_EDGES = (0, 90, 181, 273, 365)


def build_periodicity_classes(
    D: int, I: int, scheme="trimester", custom: Sequence[Sequence[int]] | None = None
) -> PeriodicityClassMap:
    """Map days 0..D to periodicity classes.

    trimester: four day-of-year ranges repeated cyclically over years.
    custom: explicit lists of days forming a partition of 0..D.
    """
    if I < 1:
        raise ValueError("need at least one class")
    days = np.arange(D + 1)
    if scheme == "trimester":
        if I == 1:
            day_to_class = np.ones(D + 1, dtype=np.intp)
        else:
            if I != 4:
                raise ValueError("trimester scheme defines exactly 4 classes")
            doy = days % 365
            day_to_class = np.searchsorted(np.array(TRIMESTER_EDGES[1:-1]), doy, side="right") + 1
    elif scheme == "custom":
        if custom is None or len(custom) != I:
            raise ValueError("custom scheme needs I day lists")
        day_to_class = np.full(D + 1, -1, dtype=np.intp)
        for i, block in enumerate(custom, start=1):
            for d in block:
                if not 0 <= d <= D or day_to_class[d] != -1:
                    raise ValueError("custom lists must partition 0..D")
            day_to_class[list(block)] = i
        if (day_to_class == -1).any():
            raise ValueError("custom lists must partition 0..D")
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    reps = {}
    for cls in np.unique(day_to_class):
        reps[int(cls)] = int(np.flatnonzero(day_to_class == cls)[0])
    return PeriodicityClassMap(day_to_class, reps)


@dataclass(frozen=True)
class IntradayResourceTable:
    """Daily cost by (aging budget dh, capacity c), plus replay tables.

    fast_values[c_index] is None for c = 0 (no control) and otherwise a list of
    per-step value arrays over the (soc, remaining budget) grid.
    """

    class_id: int
    table: GridValueFn  # over (dh, c)
    soc_grids: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    dh_grid: np.ndarray | None = field(default=None, repr=False)
    fast_values: dict[int, list[np.ndarray]] = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class IntradayPriceTable:
    """Daily cost by (capacity c, aging surcharge pi), plus replay tables.

    fast_values[c_index] holds per-step value arrays over the (soc, pi) grid.
    """

    class_id: int
    table: GridValueFn  # over (c, pi)
    soc_grids: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    pi_grid: np.ndarray | None = field(default=None, repr=False)
    fast_values: dict[int, list[np.ndarray]] = field(default_factory=dict, repr=False)


def no_battery_bill(slot_laws: Sequence[DiscreteDist], tariff: Tariff) -> float:
    """Expected daily bill with no battery: sum_m rate(m) * E[max(0, netload)]."""
    total = 0.0
    for m, law in enumerate(slot_laws):
        total += tariff.rate(m) * law.expectation(lambda w: max(0.0, float(w)))
    return total


class _ResourceCost:
    """Stage cost for the (soc, budget) DP: bill plus feasibility mask."""

    def __init__(self, rate, cfg, soc_max):
        self.rate = rate
        self.cfg = cfg
        self.soc_max = soc_max

    def __call__(self, states, u, w):
        cfg = self.cfg
        up, um = max(u, 0.0), max(-u, 0.0)
        soc_next = states[:, 0] + cfg.charge_eff * up - cfg.discharge_eff * um
        budget_next = states[:, 1] - up - um
        bad = (
            (soc_next < -FEAS_TOL)
            | (soc_next > self.soc_max + FEAS_TOL)
            | (budget_next < -FEAS_TOL)
        )
        bill = self.rate * max(0.0, w + u)
        return np.where(bad, INF, bill)


class _ResourceDyn:
    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, states, u, w):
        cfg = self.cfg
        up, um = max(u, 0.0), max(-u, 0.0)
        out = np.empty_like(states)
        out[:, 0] = states[:, 0] + cfg.charge_eff * up - cfg.discharge_eff * um
        out[:, 1] = states[:, 1] - up - um
        return out


class _PriceCost:
    """Stage cost for the (soc, surcharge) DP: bill + pi * |u| + feasibility."""

    def __init__(self, rate, cfg, soc_max):
        self.rate = rate
        self.cfg = cfg
        self.soc_max = soc_max

    def __call__(self, states, u, w):
        cfg = self.cfg
        up, um = max(u, 0.0), max(-u, 0.0)
        soc_next = states[:, 0] + cfg.charge_eff * up - cfg.discharge_eff * um
        bad = (soc_next < -FEAS_TOL) | (soc_next > self.soc_max + FEAS_TOL)
        out = self.rate * max(0.0, w + u) + states[:, 1] * (up + um)
        return np.where(bad, INF, out)


class _PriceDyn:
    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, states, u, w):
        cfg = self.cfg
        up, um = max(u, 0.0), max(-u, 0.0)
        out = states.copy()
        out[:, 0] = states[:, 0] + cfg.charge_eff * up - cfg.discharge_eff * um
        return out


def soc_grid_for(c: float, cfg: BatteryConfig, n_soc: int) -> np.ndarray:
    return np.linspace(0.0, cfg.soc_fraction * c, n_soc)


def control_grid(cfg: BatteryConfig, n_controls: int) -> np.ndarray:
    return np.linspace(cfg.u_min, cfg.u_max, n_controls)


def _resource_cell(cfg, slot_laws, c, dh_grid, n_soc, n_controls):
    """Daily (soc, budget) DP for one capacity; returns (row over dh, value tables)."""
    tariff = cfg.tariff
    n_steps = len(slot_laws)
    soc_max = cfg.soc_fraction * c
    grid = Grid([soc_grid_for(c, cfg, n_soc), dh_grid])
    controls = control_grid(cfg, n_controls)
    stages = tuple(
        FastStage(
            state_grid=grid,
            controls=controls,
            noise=slot_laws[m],
            cost=_ResourceCost(tariff.rate(m), cfg, soc_max),
            dynamics=_ResourceDyn(cfg),
            noise_free_dynamics=True,
        )
        for m in range(n_steps)
    )
    model = FastStageModel(stages=stages, terminal_grid=grid)
    terminal = GridValueFn(grid, np.zeros(grid.shape), interp=MULTILINEAR)
    sol = solve_fast_dp(model, terminal)
    row = sol.values[0].values[0, :].copy()  # soc = 0 start
    tables = [v.values.copy() for v in sol.values]
    return row, tables


def _price_cell(cfg, slot_laws, c, pi_grid, n_soc, n_controls):
    """Daily (soc, surcharge) DP for one capacity; the surcharge is a static
    state axis, so one sweep covers the whole pi grid."""
    tariff = cfg.tariff
    n_steps = len(slot_laws)
    soc_max = cfg.soc_fraction * c
    grid = Grid([soc_grid_for(c, cfg, n_soc), pi_grid])
    controls = control_grid(cfg, n_controls)
    stages = tuple(
        FastStage(
            state_grid=grid,
            controls=controls,
            noise=slot_laws[m],
            cost=_PriceCost(tariff.rate(m), cfg, soc_max),
            dynamics=_PriceDyn(cfg),
            noise_free_dynamics=True,
        )
        for m in range(n_steps)
    )
    model = FastStageModel(stages=stages, terminal_grid=grid)
    terminal = GridValueFn(grid, np.zeros(grid.shape), interp=MULTILINEAR)
    sol = solve_fast_dp(model, terminal)
    row = sol.values[0].values[0, :].copy()  # soc = 0 start, one value per pi
    tables = [v.values.copy() for v in sol.values]
    return row, tables


def compute_resource_intraday(
    class_id: int,
    cfg: BatteryConfig,
    slot_laws: Sequence[DiscreteDist],
    c_grid: np.ndarray,
    dh_grid: np.ndarray,
    n_soc: int = 51,
    n_controls: int = 21,
    cell_results: dict | None = None,
) -> IntradayResourceTable:
    """Resource intraday table for one periodicity class.

    The c = 0 column is the no-battery bill; by construction the dh = 0 row of
    any column equals it too (zero budget forces u = 0).
    ``cell_results`` may hold precomputed per-capacity cells (parallel runs).
    """
    c_grid = np.asarray(c_grid, dtype=float)
    dh_grid = np.asarray(dh_grid, dtype=float)
    values = np.empty((len(dh_grid), len(c_grid)))
    soc_grids = {}
    fast_values = {}
    base = no_battery_bill(slot_laws, cfg.tariff)
    for ci, c in enumerate(c_grid):
        if c == 0.0:
            values[:, ci] = base
            fast_values[ci] = None
            soc_grids[ci] = np.zeros(1)
            continue
        if cell_results is not None and ci in cell_results:
            row, tables = cell_results[ci]
        else:
            row, tables = _resource_cell(cfg, slot_laws, c, dh_grid, n_soc, n_controls)
        values[:, ci] = row
        fast_values[ci] = tables
        soc_grids[ci] = soc_grid_for(c, cfg, n_soc)
    table = GridValueFn(Grid([dh_grid, c_grid]), values, interp=MULTILINEAR)
    return IntradayResourceTable(
        class_id=class_id,
        table=table,
        soc_grids=soc_grids,
        dh_grid=dh_grid.copy(),
        fast_values=fast_values,
    )


def compute_price_intraday(
    class_id: int,
    cfg: BatteryConfig,
    slot_laws: Sequence[DiscreteDist],
    c_grid: np.ndarray,
    pi_grid: np.ndarray,
    n_soc: int = 51,
    n_controls: int = 21,
    cell_results: dict | None = None,
) -> IntradayPriceTable:
    """Price intraday table for one periodicity class: daily bill plus a
    per-kWh aging surcharge pi, starting from an empty battery."""
    c_grid = np.asarray(c_grid, dtype=float)
    pi_grid = np.asarray(pi_grid, dtype=float)
    if (pi_grid < 0).any():
        raise ValueError("aging surcharges must be nonnegative")
    values = np.empty((len(c_grid), len(pi_grid)))
    soc_grids = {}
    fast_values = {}
    base = no_battery_bill(slot_laws, cfg.tariff)
    for ci, c in enumerate(c_grid):
        if c == 0.0:
            values[ci, :] = base
            fast_values[ci] = None
            soc_grids[ci] = np.zeros(1)
            continue
        if cell_results is not None and ci in cell_results:
            row, tables = cell_results[ci]
        else:
            row, tables = _price_cell(cfg, slot_laws, c, pi_grid, n_soc, n_controls)
        values[ci, :] = row
        fast_values[ci] = tables
        soc_grids[ci] = soc_grid_for(c, cfg, n_soc)
    table = GridValueFn(Grid([c_grid, pi_grid]), values, interp=MULTILINEAR)
    return IntradayPriceTable(
        class_id=class_id,
        table=table,
        soc_grids=soc_grids,
        pi_grid=pi_grid.copy(),
        fast_values=fast_values,
    )
