"""Heat kernels of 1/2 d^2/dx^2 on [0, 1] by the method of images.

Each boundary kind is a signed combination of two periodised Gaussian sums,

    S(P, s)(x, y) = sum_k q_t(P k + x - y) + s q_t(P k - x - y),

with period P in {2, 4} and reflection sign s = +-1:

    C1 (Dirichlet-Dirichlet)  S(2, -)
    C2 (Neumann-Neumann)      S(2, +)
    C3 (Dirichlet-Neumann)    2 S(4, -) - S(2, -)
    C4 (Neumann-Dirichlet)    2 S(4, +) - S(2, +)

`spectral_kernel` evaluates the same kernels by eigenfunction expansion and is
only used as an independent oracle in tests and in `kernel-check`.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from stochheat.core import Field, Grid

T_MIN = 1e-6
TERM_FLOOR = 1e-16


class BoundaryKind(enum.Enum):
    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"

    @classmethod
    def parse(cls, value) -> "BoundaryKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown boundary kind {value!r}; expected one of C1, C2, C3, C4") from None

    @property
    def dirichlet_left(self) -> bool:
        return self in (BoundaryKind.C1, BoundaryKind.C3)

    @property
    def dirichlet_right(self) -> bool:
        return self in (BoundaryKind.C1, BoundaryKind.C4)

    @property
    def terms(self) -> tuple[tuple[float, int, int], ...]:
        """(coefficient, period, reflection sign) of each periodised sum."""
        return _TERMS[self]


_TERMS = {
    BoundaryKind.C1: ((1.0, 2, -1),),
    BoundaryKind.C2: ((1.0, 2, +1),),
    BoundaryKind.C3: ((2.0, 4, -1), (-1.0, 2, -1)),
    BoundaryKind.C4: ((2.0, 4, +1), (-1.0, 2, +1)),
}


@dataclass(frozen=True)
class ImageTruncation:
    """Image sums run over |k| <= K; `tail_bound` bounds what was dropped."""

    K: int
    tail_bound: float

    @classmethod
    def for_time(cls, t: float, period: int = 2, floor: float = TERM_FLOOR) -> "ImageTruncation":
        """Smallest K whose first omitted term, q_t(P(K+1) - 2), is below `floor`.

        Images with |k| > K sit at distance >= P|k| - 2 from [0, 1].  The tail
        bound covers both signs of k, both reflections and the |z|/t factor of
        the derivative sums.
        """
        _check_t(t)
        return _truncation(float(t), int(period), float(floor))


@functools.lru_cache(maxsize=4096)
def _truncation(t: float, period: int, floor: float) -> ImageTruncation:
    # start just below the Gaussian-tail estimate of K, then walk up
    z = math.sqrt(max(2.0 * t * math.log(1.0 / floor), 0.0))
    K = max(1, int((z + 2.0) / period) - 2)
    while _tail_term(t, period * (K + 1) - 2) >= floor:
        K += 1
    z = period * np.arange(K + 1, K + 60) - 2.0
    tail = 4.0 * float(np.sum(_q(t, z) * np.maximum(1.0, (z + 2.0) / t)))
    return ImageTruncation(K, tail)


def _tail_term(t: float, z: float) -> float:
    return math.exp(-z * z / (2.0 * t)) / math.sqrt(2.0 * math.pi * t) * max(1.0, (z + 2.0) / t)


def _check_t(t) -> None:
    if isinstance(t, (int, float)):
        if not t > 0:
            raise ValueError(f"kernel time must be positive, got {t}")
    elif not np.all(np.asarray(t) > 0):
        raise ValueError(f"kernel time must be positive, got {t}")


def _q(t, x):
    return np.exp(-np.square(x) / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)


def gaussian_q(t, x):
    """Centered Gaussian density with variance t."""
    _check_t(t)
    return _q(t, x)


def _periodic_sum(fn, t, z, period, K):
    ks = period * np.arange(-K, K + 1)
    z = np.asarray(z, dtype=float)
    return fn(t, z[..., None] + ks).sum(axis=-1)


def _combine(kind, t, x, y, fn, trunc, odd=False):
    """Sum coef * [fn(Pk + x - y) + s fn(Pk - x - y)] over the terms of `kind`.

    With `odd` the function is odd in its argument (a y-derivative), which flips
    the reflection sign picked up by the second family.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = 0.0
    for coef, period, sign in kind.terms:
        K = trunc.K if trunc is not None else ImageTruncation.for_time(t, period).K
        direct = _periodic_sum(fn, t, x - y, period, K)
        # fn(Pk - x - y) summed over k equals (+-) fn(Pk + x + y) summed over k.
        mirror = _periodic_sum(fn, t, x + y, period, K)
        out = out + coef * (direct + (-sign if odd else sign) * mirror)
    return out


def image_kernel(kind: BoundaryKind, t: float, x, y, trunc: ImageTruncation | None = None):
    """Kernel p_t(x, y) of the given boundary kind; broadcasts over x and y."""
    _check_t(t)
    return _combine(BoundaryKind.parse(kind), t, x, y, _q, trunc)


def _dq(t, z):
    # d/dy q_t(z - y) evaluated at z - y = z; odd in z
    return z / t * _q(t, z)


def image_kernel_dy(kind: BoundaryKind, t: float, x, y, trunc: ImageTruncation | None = None):
    """Analytic y-derivative of p_t(x, y), term by term."""
    _check_t(t)
    return _combine(BoundaryKind.parse(kind), t, x, y, _dq, trunc, odd=True)


# Closed forms of int_0^t f(tau) dtau over the Gaussian families:
#   _int_q:   f = q_tau(z)
#   _int_tq:  f = tau q_tau(z)
#   _int_dq:  f = (z / tau) q_tau(z)
#   _int_tdq: f = z q_tau(z)


def _int_q(t, z):
    a = np.abs(z)
    return np.sqrt(2.0 * t / np.pi) * np.exp(-a * a / (2.0 * t)) - a * erfc(a / np.sqrt(2.0 * t))


def _int_tq(t, z):
    a = np.abs(z)
    g = np.sqrt(2.0 * t / np.pi) * np.exp(-a * a / (2.0 * t))
    return (g * (t - a * a) + a**3 * erfc(a / np.sqrt(2.0 * t))) / 3.0


def _int_dq(t, z):
    return np.sign(z) * erfc(np.abs(z) / np.sqrt(2.0 * t))


def _int_tdq(t, z):
    return z * _int_q(t, z)


def integrated_kernel(kind, t, x, y, weighted=False, trunc=None):
    """int_0^t p_tau(x, y) dtau, or int_0^t tau p_tau(x, y) dtau if `weighted`."""
    _check_t(t)
    fn = _int_tq if weighted else _int_q
    return _combine(BoundaryKind.parse(kind), t, x, y, fn, trunc)


def integrated_kernel_dy(kind, t, x, y, weighted=False, trunc=None):
    """int_0^t d/dy p_tau(x, y) dtau, or the tau-weighted version."""
    _check_t(t)
    fn = _int_tdq if weighted else _int_dq
    return _combine(BoundaryKind.parse(kind), t, x, y, fn, trunc, odd=True)


def _n_modes_for(t: float, offset: float) -> int:
    # first omitted factor exp(-((k + offset) pi)^2 t / 2) < TERM_FLOOR
    kmax = math.sqrt(2.0 * math.log(1.0 / TERM_FLOOR) / t) / math.pi
    return int(math.ceil(kmax - offset)) + 2


def spectral_kernel(kind: BoundaryKind, t: float, x, y, n_modes: int | None = None):
    """Eigenfunction expansion of the same kernel (test oracle).

    C1: sin(k pi x), C2: cos(k pi x) with the constant mode, C3: sin((k+1/2) pi x),
    C4: cos((k+1/2) pi x); the mode with frequency w decays as exp(-w^2 t / 2).
    """
    _check_t(t)
    kind = BoundaryKind.parse(kind)
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    offset = 0.5 if kind in (BoundaryKind.C3, BoundaryKind.C4) else 0.0
    n = n_modes if n_modes is not None else _n_modes_for(t, offset)
    k = np.arange(1 if offset == 0.0 else 0, n) + offset
    w = k * np.pi
    decay = np.exp(-w * w * t / 2.0)
    basis = np.sin if kind in (BoundaryKind.C1, BoundaryKind.C3) else np.cos
    out = (2.0 * basis(w * x) * basis(w * y) * decay).sum(axis=-1)
    if kind is BoundaryKind.C2:
        out = out + 1.0
    return out


def spectral_kernel_dy(kind: BoundaryKind, t: float, x, y, n_modes: int | None = None):
    _check_t(t)
    kind = BoundaryKind.parse(kind)
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    offset = 0.5 if kind in (BoundaryKind.C3, BoundaryKind.C4) else 0.0
    n = n_modes if n_modes is not None else _n_modes_for(t, offset) + 4
    k = np.arange(1 if offset == 0.0 else 0, n) + offset
    w = k * np.pi
    decay = np.exp(-w * w * t / 2.0)
    if kind in (BoundaryKind.C1, BoundaryKind.C3):
        terms = 2.0 * np.sin(w * x) * w * np.cos(w * y)
    else:
        terms = -2.0 * np.cos(w * x) * w * np.sin(w * y)
    return (terms * decay).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class KernelTable:
    """p_t tabulated on a grid: matrix[i, j] = p_t(x_i, x_j) plus endpoint data."""

    grid: Grid
    kind: BoundaryKind
    t: float
    matrix: np.ndarray
    left_value: np.ndarray
    right_value: np.ndarray
    left_deriv: np.ndarray
    right_deriv: np.ndarray
    truncation: dict


def _tabulate(grid: Grid, kind: BoundaryKind, fn, t, trunc_by_period, odd=False):
    """Evaluate a kernel-type image sum on all node pairs of a uniform grid.

    Pair values depend only on i - j and i + j, so each periodised sum is
    evaluated on 3n - 2 offsets and then gathered.
    """
    n = grid.n
    offsets = np.arange(-(n - 1), 2 * (n - 1) + 1) * grid.h
    i = np.arange(n)
    diff = (i[:, None] - i[None, :]) + (n - 1)
    summ = (i[:, None] + i[None, :]) + (n - 1)
    out = np.zeros((n, n))
    for coef, period, sign in kind.terms:
        vals = _periodic_sum(fn, t, offsets, period, trunc_by_period[period].K)
        out += coef * (vals[diff] + (-sign if odd else sign) * vals[summ])
    return out


def build_kernel_table(grid: Grid, kind: BoundaryKind, t: float) -> KernelTable:
    kind = BoundaryKind.parse(kind)
    if not t >= T_MIN:
        raise ValueError(f"kernel tables need t >= {T_MIN}; got t = {t}")
    truncs = {p: ImageTruncation.for_time(t, p) for p in {p for _, p, _ in kind.terms}}
    matrix = _tabulate(grid, kind, _q, t, truncs)
    x = grid.nodes
    left = _combine(kind, t, x, 0.0, _q, None)
    right = _combine(kind, t, x, 1.0, _q, None)
    dleft = _combine(kind, t, x, 0.0, _dq, None, odd=True)
    dright = _combine(kind, t, x, 1.0, _dq, None, odd=True)
    arrays = [matrix, left, right, dleft, dright]
    for a in arrays:
        a.flags.writeable = False
    return KernelTable(grid, kind, float(t), *arrays, truncation=truncs)


def apply_semigroup(table: KernelTable, f: Field) -> Field:
    """(P_t f)(y_j) = sum_i w_i p_t(x_i, y_j) f_i."""
    table.grid.check(f.grid)
    return Field(f.grid, (f.grid.weights * f.values) @ table.matrix)


def transition_operator(table: KernelTable) -> np.ndarray:
    """Matrix A with A @ f == apply_semigroup(table, f).values (kernel is symmetric)."""
    return table.matrix * table.grid.weights[None, :]


def averaged_noise_operator(grid: Grid, kind: BoundaryKind, dt: float) -> np.ndarray:
    """Matrix B with B @ B = (1/dt) int_0^dt P_2s ds on the grid.

    B is the square root taken in the weighted inner product, where the
    averaged operator is self-adjoint.  Applied to one white increment it gives
    the covariance of the stochastic convolution over a step of length dt.
    """
    kind = BoundaryKind.parse(kind)
    t = 2.0 * dt
    if not t >= T_MIN:
        raise ValueError(f"averaged operator needs 2 dt >= {T_MIN}; got dt = {dt}")
    truncs = {p: ImageTruncation.for_time(t, p) for p in {p for _, p, _ in kind.terms}}
    M = _tabulate(grid, kind, _int_q, t, truncs) / t
    r = np.sqrt(grid.weights)
    lam, V = np.linalg.eigh(r[:, None] * M * r[None, :])
    root = (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T
    return root * (r[None, :] / r[:, None])


def delta_recovery_check(kind: BoundaryKind, f: Field, t: float) -> float:
    """sup |P_t f - f| over nodes farther than 3 sqrt(t) from both endpoints."""
    if not np.any(f.values):
        return 0.0
    table = build_kernel_table(f.grid, kind, t)
    x = f.grid.nodes
    interior = (x > 3.0 * math.sqrt(t)) & (x < 1.0 - 3.0 * math.sqrt(t))
    if not interior.any():
        raise ValueError(f"t = {t} leaves no interior nodes at distance 3 sqrt(t)")
    err = apply_semigroup(table, f).values - f.values
    return float(np.max(np.abs(err[interior])))


def dump_table_csv(table: KernelTable, path) -> None:
    """Header row of y-nodes, then one row per x-node, round-trip float formatting."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x\\y"] + [repr(float(v)) for v in table.grid.nodes])
        for x, row in zip(table.grid.nodes, table.matrix):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in row])
