"""Numerical substrate: two-scale time indices, extended-real arithmetic,
grid-tabulated functions, discrete distributions and discrete conjugation.

Extended reals are plain IEEE doubles with +-inf, but every addition goes
through :func:`low_add` so that conflicting infinities collapse to -inf
instead of NaN.  All containers are immutable after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

INF = math.inf


class Ordering(Enum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


@dataclass(frozen=True, order=False)
class TwoScaleIndex:
    """Time coordinate (d, m): slow step d, fast step m within the day."""

    d: int
    m: int

    def as_tuple(self) -> tuple[int, int]:
        return (self.d, self.m)


def lex_compare(a: TwoScaleIndex, b: TwoScaleIndex) -> Ordering:
    """Lexicographic comparison, slow index first."""
    ta, tb = a.as_tuple(), b.as_tuple()
    if ta < tb:
        return Ordering.LESS
    if ta > tb:
        return Ordering.GREATER
    return Ordering.EQUAL


def low_add(a: float, b: float) -> float:
    """Lower addition on extended reals: (+inf) + (-inf) = -inf."""
    if math.isinf(a) and math.isinf(b) and (a > 0) != (b > 0):
        return -INF
    return a + b


def low_add_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise lower addition; broadcasting as usual."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):
        out = a + b
    conflict = np.isinf(a) & np.isinf(b) & (np.sign(a) != np.sign(b))
    if conflict.any():
        out = np.where(conflict, -INF, out)
    return out


def _as_axis(points: Iterable[float]) -> np.ndarray:
    axis = np.asarray(points, dtype=float)
    if axis.ndim != 1 or axis.size < 1:
        raise ValueError("grid axis must be a nonempty 1-D array")
    if axis.size > 1 and not np.all(np.diff(axis) > 0):
        raise ValueError("grid axis must be strictly increasing")
    return axis


class Grid:
    """Rectangular grid: one strictly increasing breakpoint array per axis."""

    __slots__ = ("axes",)

    def __init__(self, axes: Sequence[Iterable[float]]):
        axes = tuple(_as_axis(ax) for ax in axes)
        if not axes:
            raise ValueError("grid needs at least one axis")
        for ax in axes:
            ax.setflags(write=False)
        object.__setattr__(self, "axes", axes)

    def __setattr__(self, name, value):
        raise AttributeError("Grid is immutable")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.size for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        """All grid points as a (size, ndim) array, row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def clamp(self, x: np.ndarray) -> np.ndarray:
        """Clamp query points (n, ndim) to the bounding box."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = np.array([ax[0] for ax in self.axes])
        hi = np.array([ax[-1] for ax in self.axes])
        return np.clip(x, lo, hi)

    def nearest_indices(self, x: np.ndarray) -> tuple[np.ndarray, ...]:
        """Nearest grid multi-index per query row; ties go to the smaller index."""
        x = self.clamp(x)
        out = []
        for j, ax in enumerate(self.axes):
            q = x[:, j]
            hi = np.searchsorted(ax, q, side="left")
            hi = np.clip(hi, 0, ax.size - 1)
            lo = np.clip(hi - 1, 0, ax.size - 1)
            pick_lo = (q - ax[lo]) <= (ax[hi] - q)
            out.append(np.where(pick_lo, lo, hi))
        return tuple(out)

    def locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lower cell corner indices and fractional offsets for interpolation."""
        x = self.clamp(x)
        n = x.shape[0]
        idx = np.empty((n, self.ndim), dtype=np.intp)
        frac = np.zeros((n, self.ndim), dtype=float)
        for j, ax in enumerate(self.axes):
            if ax.size == 1:
                idx[:, j] = 0
                continue
            i = np.searchsorted(ax, x[:, j], side="right") - 1
            i = np.clip(i, 0, ax.size - 2)
            idx[:, j] = i
            step = ax[i + 1] - ax[i]
            frac[:, j] = (x[:, j] - ax[i]) / step
        return idx, frac

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and len(self.axes) == len(other.axes)
            and all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes))
        )

    def __hash__(self):
        return hash(tuple(tuple(ax) for ax in self.axes))


NEAREST = "nearest"
MULTILINEAR = "multilinear"


class GridValueFn:
    """Extended-real function tabulated on a Grid.

    Interpolation is either nearest-neighbor (ties to the smaller index) or
    multilinear with infinity propagation: any cell corner carrying +inf with
    a strictly positive convex weight makes the blend +inf, so infeasibility
    is never averaged away; -inf dominates +inf per lower addition.
    """

    __slots__ = ("grid", "values", "interp")

    def __init__(self, grid: Grid, values: np.ndarray, interp: str = MULTILINEAR):
        values = np.asarray(values, dtype=float)
        if values.size != grid.size:
            raise ValueError("values size does not match grid size")
        values = values.reshape(grid.shape)
        values.setflags(write=False)
        if interp not in (NEAREST, MULTILINEAR):
            raise ValueError(f"unknown interpolation mode {interp!r}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "interp", interp)

    def __setattr__(self, name, value):
        raise AttributeError("GridValueFn is immutable")

    def eval_many(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.grid.ndim:
            raise ValueError(
                f"query dimension {x.shape[1]} != grid dimension {self.grid.ndim}"
            )
        if self.interp == NEAREST:
            return self.values[self.grid.nearest_indices(x)]
        return self._multilinear(x)

    def _multilinear(self, x: np.ndarray) -> np.ndarray:
        idx, frac = self.grid.locate(x)
        n = x.shape[0]
        total = np.zeros(n)
        pos_inf = np.zeros(n, dtype=bool)
        neg_inf = np.zeros(n, dtype=bool)
        ndim = self.grid.ndim
        shape = self.grid.shape
        for corner in range(1 << ndim):
            w = np.ones(n)
            ind = []
            for j in range(ndim):
                bit = (corner >> j) & 1
                if bit:
                    w = w * frac[:, j]
                    ind.append(np.minimum(idx[:, j] + 1, shape[j] - 1))
                else:
                    w = w * (1.0 - frac[:, j])
                    ind.append(idx[:, j])
            active = w > 0.0
            if not active.any():
                continue
            v = self.values[tuple(ind)]
            vpos = active & np.isposinf(v)
            vneg = active & np.isneginf(v)
            pos_inf |= vpos
            neg_inf |= vneg
            fin = active & np.isfinite(v)
            total = total + w * np.where(fin, v, 0.0)
        out = np.where(pos_inf, INF, total)
        out = np.where(neg_inf, -INF, out)
        return out

    def __call__(self, x) -> float:
        return float(self.eval_many(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def to_jsonable(self) -> dict:
        def enc(v: float):
            if math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return v

        return {
            "grid": [ax.tolist() for ax in self.grid.axes],
            "values": [enc(v) for v in self.values.ravel()],
            "interp": self.interp,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "GridValueFn":
        def dec(v):
            if v == "inf":
                return INF
            if v == "-inf":
                return -INF
            return float(v)

        grid = Grid(obj["grid"])
        values = np.array([dec(v) for v in obj["values"]])
        return cls(grid, values, obj.get("interp", MULTILINEAR))

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_jsonable(), fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load_json(cls, path) -> "GridValueFn":
        with open(path) as fh:
            return cls.from_jsonable(json.load(fh))


@dataclass(frozen=True)
class DiscreteDist:
    """Finite-support distribution; support rows are atoms (scalars or vectors)."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or len(probs) != len(support):
            raise ValueError("support and probs must have matching lengths")
        if (probs < 0).any():
            raise ValueError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()}, not 1")
        support.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.probs)

    def atoms(self):
        """Yield (atom, prob) pairs, skipping zero-probability atoms."""
        for s, p in zip(self.support, self.probs):
            if p > 0.0:
                yield s, float(p)

    def expectation(self, f: Callable) -> float:
        """E[f] under lower addition; zero-probability atoms never evaluated."""
        total = 0.0
        for s, p in self.atoms():
            v = float(f(s))
            term = INF if (math.isinf(v) and v > 0) else (-INF if math.isinf(v) else p * v)
            total = low_add(total, term)
        return total

    def mean(self) -> float:
        return float(np.dot(self.probs, self.support.reshape(len(self.probs), -1)[:, 0]))


def fenchel_conjugate(f: GridValueFn, price_grid: Grid) -> GridValueFn:
    """Discrete Fenchel conjugate: f*(p) = max over grid x of <p, x> - f(x).

    The subtraction follows lower addition, so the conjugate of the function
    identically +inf is -inf everywhere.
    """
    if price_grid.ndim != f.grid.ndim:
        raise ValueError("price grid dimension must match the state grid")
    states = f.grid.points()
    vals = f.values.ravel()
    neg = np.where(np.isposinf(vals), -INF, np.where(np.isneginf(vals), INF, -vals))
    out = np.empty(price_grid.size)
    for i, p in enumerate(price_grid.points()):
        out[i] = np.max(low_add_arrays(states @ p, neg))
    return GridValueFn(price_grid, out, interp=MULTILINEAR)
