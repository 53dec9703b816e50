"""Desk-scale ground truth: flat dynamic programming over every time step,
pure scenario-tree enumeration, tiny random instance generators and the
operation-count calculator for the decomposed pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import INF, DiscreteDist, Grid, GridValueFn, MULTILINEAR
from .intraday import FastStage, FastStageModel


@dataclass(frozen=True)
class TinyProblem:
    """A small two-scale problem with tabulated costs, solvable exactly.

    States and controls are shared by every step; noise laws are stagewise
    independent.  ``inequality`` relaxes the day-boundary coupling: the next
    day may start from any state dominated by the reached one.
    """

    D: int
    M: int
    states: np.ndarray
    controls: np.ndarray
    noise: list  # noise[d][m] -> DiscreteDist
    cost: Callable[[int, int, float, float, float], float]  # (d, m, x, u, w)
    dynamics: Callable[[int, int, float, float, float], float]
    final_cost: np.ndarray
    inequality: bool = False

    def __post_init__(self):
        steps = (self.D + 1) * (self.M + 1) + 1
        if steps > 17:
            raise ValueError(f"flat step count {steps} exceeds the tiny budget of 17")

    def state_index(self, x: float) -> int:
        i = int(np.argmin(np.abs(self.states - x)))
        return i

    def day_model(self, d: int) -> FastStageModel:
        grid = Grid([self.states])
        stages = []
        for m in range(self.M + 1):
            stages.append(
                FastStage(
                    state_grid=grid,
                    controls=self.controls,
                    noise=self.noise[d][m],
                    cost=_StepCost(self, d, m),
                    dynamics=_StepDyn(self, d, m),
                )
            )
        return FastStageModel(stages=tuple(stages), terminal_grid=grid)


class _StepCost:
    def __init__(self, p, d, m):
        self.p, self.d, self.m = p, d, m

    def __call__(self, states, u, w):
        return np.array(
            [self.p.cost(self.d, self.m, float(x), float(u), float(w)) for x in states[:, 0]]
        )


class _StepDyn:
    def __init__(self, p, d, m):
        self.p, self.d, self.m = p, d, m

    def __call__(self, states, u, w):
        out = np.array(
            [self.p.dynamics(self.d, self.m, float(x), float(u), float(w)) for x in states[:, 0]]
        )
        return out.reshape(-1, 1)


def flat_dp_solve(p: TinyProblem) -> np.ndarray:
    """Exact backward induction over all (day, fast step) pairs; returns the
    value at (0, 0) over the state grid."""
    states = p.states
    v = np.asarray(p.final_cost, dtype=float).copy()
    for d in range(p.D, -1, -1):
        if p.inequality:
            v = np.minimum.accumulate(v)  # start tomorrow at any dominated state
        for m in range(p.M, -1, -1):
            law = p.noise[d][m]
            new_v = np.zeros(len(states))
            for i, x in enumerate(states):
                total = 0.0
                for w, prob in law.atoms():
                    best = INF
                    for u in p.controls:
                        c = p.cost(d, m, float(x), float(u), float(w))
                        nx = p.dynamics(d, m, float(x), float(u), float(w))
                        q = c + v[p.state_index(nx)]
                        if q < best:
                            best = q
                    total += prob * best
                new_v[i] = total
            v = new_v
    return v


def enumerate_tree(p: TinyProblem, x0: float, max_nodes: int = 10**6) -> float:
    """Optimal expected cost by pure recursion over the scenario tree, with no
    memoization: an oracle genuinely independent of the DP code path."""
    branch = 1
    for d in range(p.D + 1):
        for m in range(p.M + 1):
            branch *= max(1, len(p.noise[d][m])) * len(p.controls)
        if p.inequality:
            branch *= len(p.states)
    if branch > max_nodes:
        raise ValueError(f"scenario tree too large: ~{branch} leaves > {max_nodes}")

    states = p.states

    def value(d: int, m: int, x: float) -> float:
        if d == p.D + 1:
            return float(p.final_cost[p.state_index(x)])
        if m == p.M + 1:
            if p.inequality:
                return min(value(d + 1, 0, float(s)) for s in states if s <= x + 1e-12)
            return value(d + 1, 0, x)
        law = p.noise[d][m]
        total = 0.0
        for w, prob in law.atoms():
            best = INF
            for u in p.controls:
                c = p.cost(d, m, x, float(u), float(w))
                nx = float(states[p.state_index(p.dynamics(d, m, x, float(u), float(w)))])
                q = c + value(d, m + 1, nx)
                if q < best:
                    best = q
            total += prob * best
        return total

    return value(0, 0, x0)


@dataclass(frozen=True)
class _TableHandles:
    """Tabulated costs/dynamics for a random tiny instance (picklable)."""

    cost_tables: dict
    shift_tables: dict
    states: np.ndarray

    def cost(self, d, m, x, u, w):
        xi = int(np.argmin(np.abs(self.states - x)))
        return float(self.cost_tables[(d, m)][xi, int(round(u)) + 1, int(round(w)) + 1])

    def dynamics(self, d, m, x, u, w):
        lo, hi = self.states[0], self.states[-1]
        return float(min(max(x + u + w, lo), hi))


def random_tiny_problem(seed: int, monotone: bool = False) -> TinyProblem:
    """Random instance with integer states, shift controls/noises and
    tabulated costs.  ``monotone`` makes stage costs and the final cost
    nonincreasing in the state, so relaxing the day boundary changes nothing."""
    rng = np.random.default_rng(seed)
    D = int(rng.integers(0, 3))
    M = int(rng.integers(0, 3))
    while (D + 1) * (M + 1) > 6:  # keeps the uncached tree oracle fast
        D = int(rng.integers(0, 3))
        M = int(rng.integers(0, 3))
    n_states = int(rng.integers(2, 4))
    states = np.arange(n_states, dtype=float)
    controls = np.array(sorted(rng.choice([-1.0, 0.0, 1.0], size=2, replace=False)))
    noise = []
    cost_tables = {}
    for d in range(D + 1):
        day = []
        for m in range(M + 1):
            n_atoms = int(rng.integers(1, 3))
            atoms = np.array(sorted(rng.choice([-1.0, 0.0, 1.0], size=n_atoms, replace=False)))
            probs = rng.random(n_atoms) + 0.1
            probs = probs / probs.sum()
            day.append(DiscreteDist(atoms, probs))
            tab = rng.uniform(0.0, 2.0, size=(n_states, 3, 3))
            if monotone:
                drop = np.cumsum(rng.uniform(0.0, 1.0, size=n_states))
                tab = rng.uniform(0.0, 2.0, size=(1, 3, 3)) + (drop[-1] - drop)[:, None, None]
            cost_tables[(d, m)] = tab
        noise.append(day)
    if monotone:
        drop = np.cumsum(rng.uniform(0.0, 1.0, size=n_states))
        final = (drop[-1] - drop) + rng.uniform(0.0, 1.0)
    else:
        final = rng.uniform(0.0, 2.0, size=n_states)
    handles = _TableHandles(cost_tables=cost_tables, shift_tables={}, states=states)
    return TinyProblem(
        D=D,
        M=M,
        states=states,
        controls=controls,
        noise=noise,
        cost=handles.cost,
        dynamics=handles.dynamics,
        final_cost=np.asarray(final, dtype=float),
    )


def complexity_estimate(D: int, M: int, I: int, dims: dict | None = None) -> dict:
    """Operation counts for flat DP vs the decomposed algorithms.

    Each one-dimensional variable is discretized in 10^exponent values; the
    exponents (default 1) are the dimensions of: slow state (capacity), slow/
    fast state (health), fast state (charge), slow control (renewal), fast
    control (exchange), slow noise (battery price), fast noise (netload).
    Also returns the two relevance ratios I/D + 1/M and I/D + 10/M.
    """
    if min(D, M, I) < 1:
        raise ValueError("D, M, I must be positive")
    dims = dims or {}
    xs = dims.get("slow_state", 1)
    xsf = dims.get("slowfast_state", 1)
    xff = dims.get("fast_state", 1)
    us = dims.get("slow_control", 1)
    uf = dims.get("fast_control", 1)
    ws = dims.get("slow_noise", 1)
    wf = dims.get("fast_noise", 1)
    flat_ops = (D + 1) * (
        10 ** (xff + xsf + xs + us + ws) + (M + 1) * 10 ** (xff + xsf + xs + uf + wf)
    )
    resource_intraday = I * (M + 1) * 10**xs * 10 ** (xff + xsf + uf + wf)
    resource_recursion = (D + 1) * 10 ** (xsf + xs + xsf + us + ws)
    price_intraday = I * (M + 1) * 10 ** (xs + xsf) * 10 ** (xff + uf + wf)
    price_recursion = (D + 1) * 10 ** (xsf + xs + xsf + xsf + us + ws)
    return {
        "flat_ops": flat_ops,
        "resource_intraday_ops": resource_intraday,
        "resource_recursion_ops": resource_recursion,
        "price_intraday_ops": price_intraday,
        "price_recursion_ops": price_recursion,
        "ratio_R": I / D + 1.0 / M,
        "ratio_P": I / D + 10.0 / M,
    }


def run_verification(n_instances: int = 50, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Cross-checks behind the `verify` CLI stage; returns (name, ok, detail)."""
    from .slowscale import (
        block_bellman_solve,
        generic_price_recursion,
        generic_resource_recursion,
    )

    results = []

    ok, detail = True, ""
    for i in range(n_instances):
        p = random_tiny_problem(seed + i)
        flat = flat_dp_solve(p)
        tree = enumerate_tree(p, float(p.states[0]))
        if abs(flat[0] - tree) > 1e-9:
            ok, detail = False, f"seed {seed + i}: flat {flat[0]} vs tree {tree}"
            break
    results.append(("flat DP equals tree enumeration", ok, detail))

    ok, detail = True, ""
    for i in range(n_instances):
        p = random_tiny_problem(seed + i)
        flat = flat_dp_solve(p)
        block = block_bellman_solve(p, inequality=p.inequality).days[0].values
        if np.max(np.abs(flat - block)) > 1e-9:
            ok, detail = False, f"seed {seed + i}: max err {np.max(np.abs(flat - block))}"
            break
    results.append(("time-block decomposition equals flat DP", ok, detail))

    ok, detail = True, ""
    for i in range(n_instances):
        p = random_tiny_problem(seed + i, monotone=True)
        eq = flat_dp_solve(p)
        iq = flat_dp_solve(TinyProblem(**{**_fields(p), "inequality": True}))
        if np.max(np.abs(eq - iq)) > 1e-9:
            ok, detail = False, f"seed {seed + i}: monotone equality vs inequality differ"
            break
    results.append(("monotone instances: relaxation is tight", ok, detail))

    ok, detail = True, ""
    for i in range(n_instances):
        p = random_tiny_problem(seed + i)
        eq = flat_dp_solve(p)
        iq = flat_dp_solve(TinyProblem(**{**_fields(p), "inequality": True}))
        if np.max(iq - eq) > 1e-9:
            ok, detail = False, f"seed {seed + i}: relaxed value above exact"
            break
    results.append(("relaxed value never exceeds exact value", ok, detail))

    ok, detail = True, ""
    prices = np.array([-2.0, -1.0, -0.5, 0.0])
    for i in range(n_instances // 2):
        p = random_tiny_problem(seed + i, monotone=True)
        p_rel = TinyProblem(**{**_fields(p), "inequality": True})
        exact = flat_dp_solve(p_rel)
        upper = generic_resource_recursion(p_rel).days[0].values
        lower = generic_price_recursion(p_rel, prices).days[0].values
        if np.max(lower - exact) > 1e-9 or np.max(exact - upper) > 1e-9:
            ok, detail = False, f"seed {seed + i}: sandwich violated"
            break
    results.append(("price/resource bounds sandwich the exact value", ok, detail))

    return results


def _fields(p: TinyProblem) -> dict:
    return {
        "D": p.D,
        "M": p.M,
        "states": p.states,
        "controls": p.controls,
        "noise": p.noise,
        "cost": p.cost,
        "dynamics": p.dynamics,
        "final_cost": p.final_cost,
        "inequality": p.inequality,
    }
