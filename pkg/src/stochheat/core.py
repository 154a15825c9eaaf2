"""Grids, fields and reproducible random streams shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridMismatchError(ValueError):
    """Two objects that must live on the same spatial grid do not."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid on [0, 1] with trapezoid quadrature weights."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes, weights = _frozen(self.nodes), _frozen(self.weights)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ValueError("a grid needs at least two nodes")
        if nodes.shape != weights.shape:
            raise ValueError("nodes and weights must have the same length")
        if nodes[0] != 0.0 or nodes[-1] != 1.0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must increase strictly from 0 to 1")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, n: int) -> "Grid":
        if n < 2:
            raise ValueError(f"grid needs n >= 2 nodes, got {n}")
        nodes = np.linspace(0.0, 1.0, n)
        weights = np.full(n, 1.0 / (n - 1))
        weights[0] = weights[-1] = 0.5 / (n - 1)
        return cls(nodes, weights)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    def same_as(self, other: "Grid") -> bool:
        return self is other or (self.n == other.n and np.array_equal(self.nodes, other.nodes))

    def check(self, other: "Grid") -> None:
        if not self.same_as(other):
            raise GridMismatchError(f"grid mismatch: {self.n} nodes vs {other.n} nodes")

    def field(self, values) -> "Field":
        if callable(values):
            values = values(self.nodes)
        return Field(self, np.broadcast_to(np.asarray(values, dtype=float), (self.n,)))


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @classmethod
    def span(cls, T: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        n = int(round((T - t0) / dt))
        if not np.isclose(t0 + n * dt, T, rtol=1e-9, atol=1e-12):
            raise ValueError(f"T - t0 = {T - t0} is not a whole number of steps dt = {dt}")
        return cls(t0, dt, n)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def T(self) -> float:
        return self.t0 + self.dt * self.n_steps


@dataclass(frozen=True, eq=False)
class Field:
    """Values of a function at the nodes of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.grid.n,):
            raise ValueError(f"field needs {self.grid.n} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A field at every node of a time grid; `values` has shape (n_steps + 1, n)."""

    grid: Grid
    time_grid: TimeGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.time_grid.n_steps + 1, self.grid.n):
            raise ValueError(
                f"trajectory needs shape {(self.time_grid.n_steps + 1, self.grid.n)}, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, k: int) -> Field:
        return Field(self.grid, self.values[k])

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.times

    @property
    def final(self) -> Field:
        return self[-1]


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one independent random stream: (master seed, stream id).

    Streams are counter-based (Philox), so any stream can be regenerated without
    touching the others; this is what makes ensembles reproducible path by path.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.stream < 0:
            raise ValueError("stream id must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream: int) -> "SeedSpec":
        return SeedSpec(self.seed, stream)


def inner_product(f: Field, g: Field) -> float:
    """Trapezoid approximation of the integral of f*g over [0, 1]."""
    f.grid.check(g.grid)
    return float(np.dot(f.grid.weights, f.values * g.values))


def sup_norm(f: Field) -> float:
    return float(np.max(np.abs(f.values)))
