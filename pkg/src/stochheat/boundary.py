"""Boundary data mu0, mu1 and the functionals that inject them into the mild form.

For a test function f the boundary functional of each kind is

    C1:  f'(0) mu0 - f'(1) mu1        C2: -f(0) mu0 + f(1) mu1
    C3:  f'(0) mu0 + f(1) mu1         C4: -f(0) mu0 - f'(1) mu1

and the homogeneous part of the solution carries 1/2 int_0^t F_s(p_{t-s}(x, .)) ds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from stochheat.core import Grid, SeedSpec, TimeGrid
from stochheat import kernels
from stochheat.kernels import BoundaryKind
from stochheat.noise import factor_psd

GENERATORS = ("constant", "sinusoid", "brownian", "fbm")
REPORTED_GAMMA_CAP = 0.49


class BoundaryConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class BoundaryPath:
    time_grid: TimeGrid
    mu0: np.ndarray
    mu1: np.ndarray
    generator: str = "constant"
    gamma0: float = REPORTED_GAMMA_CAP
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mu0", "mu1"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (self.time_grid.n_steps + 1,):
                raise ValueError(f"{name} needs one value per time node")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite values")
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.mu0) or np.any(self.mu1))

    @classmethod
    def zero(cls, time_grid: TimeGrid) -> "BoundaryPath":
        z = np.zeros(time_grid.n_steps + 1)
        return cls(time_grid, z, z, "constant", REPORTED_GAMMA_CAP, {"c": 0.0})


def _sides(params) -> tuple[bool, bool]:
    sides = params.get("sides", "both")
    if sides not in ("both", "left", "right"):
        raise ValueError(f"sides must be 'both', 'left' or 'right', got {sides!r}")
    return sides in ("both", "left"), sides in ("both", "right")


def _fbm_factor(times: np.ndarray, hurst: float) -> np.ndarray:
    s, t = np.meshgrid(times, times, indexing="ij")
    cov = 0.5 * (s ** (2 * hurst) + t ** (2 * hurst) - np.abs(t - s) ** (2 * hurst))
    L, _ = factor_psd(cov)
    return L


def generate_boundary(generator: str, params: dict, time_grid: TimeGrid, rng=None) -> BoundaryPath:
    """Draw or build boundary data on `time_grid`.

    constant: c (or c0, c1).  sinusoid: mu_i(t) = a sin(omega t + phase_i).
    brownian / fbm: independent Gaussian paths started at c0, c1 and scaled by
    sigma on the sides selected by `sides`; fbm needs hurst in (0, 1/2).
    """
    params = dict(params or {})
    t = time_grid.times - time_grid.t0
    n = len(t)
    if generator == "constant":
        c = params.get("c", 0.0)
        c0, c1 = params.get("c0", c), params.get("c1", c)
        return BoundaryPath(time_grid, np.full(n, float(c0)), np.full(n, float(c1)), "constant",
                            REPORTED_GAMMA_CAP, params)
    if generator == "sinusoid":
        a, omega = params.get("a", 1.0), params.get("omega", 2 * math.pi)
        p0, p1 = params.get("phase0", 0.0), params.get("phase1", 0.0)
        t_abs = time_grid.times
        return BoundaryPath(time_grid, a * np.sin(omega * t_abs + p0), a * np.sin(omega * t_abs + p1),
                            "sinusoid", REPORTED_GAMMA_CAP, params)
    if generator in ("brownian", "fbm"):
        if rng is None:
            raise ValueError(f"{generator} boundary needs a random stream")
        if isinstance(rng, SeedSpec):
            rng = rng.generator()
        sigma = params.get("sigma", 1.0)
        left, right = _sides(params)
        c0, c1 = params.get("c0", 0.0), params.get("c1", 0.0)
        if generator == "brownian":
            z = rng.standard_normal((2, n - 1)) * math.sqrt(time_grid.dt)
            paths = np.concatenate([np.zeros((2, 1)), np.cumsum(z, axis=1)], axis=1)
            gamma0 = REPORTED_GAMMA_CAP
        else:
            hurst = params.get("hurst")
            if hurst is None or not 0.0 < hurst < 0.5:
                raise ValueError(f"fbm needs a Hurst parameter in (0, 1/2), got {hurst}")
            L = _fbm_factor(t, hurst)
            paths = rng.standard_normal((2, n)) @ L.T
            gamma0 = float(hurst)
        mu0 = c0 + (sigma * paths[0] if left else 0.0)
        mu1 = c1 + (sigma * paths[1] if right else 0.0)
        return BoundaryPath(time_grid, np.broadcast_to(mu0, (n,)), np.broadcast_to(mu1, (n,)), generator,
                            gamma0, params)
    raise ValueError(f"unknown boundary generator {generator!r}; expected one of {GENERATORS}")


@dataclass(frozen=True)
class BoundarySpec:
    """A boundary generator to be drawn once per Monte Carlo path."""

    generator: str
    params: dict = field(default_factory=dict)

    @property
    def stochastic(self) -> bool:
        return self.generator in ("brownian", "fbm")

    def generate(self, time_grid: TimeGrid, rng=None) -> BoundaryPath:
        return generate_boundary(self.generator, self.params, time_grid, rng)

    def describe(self) -> dict:
        return {"kind": self.generator, **self.params}


@dataclass(frozen=True, eq=False)
class BoundaryWeights:
    """Endpoint data of p(x_i, .) per node: values and y-derivatives at 0 and 1."""

    kind: BoundaryKind
    left_value: np.ndarray
    right_value: np.ndarray
    left_deriv: np.ndarray
    right_deriv: np.ndarray

    @classmethod
    def from_table(cls, table: kernels.KernelTable) -> "BoundaryWeights":
        return cls(table.kind, table.left_value, table.right_value, table.left_deriv, table.right_deriv)

    @property
    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node factors multiplying mu0 and mu1 in F."""
        k = self.kind
        if k is BoundaryKind.C1:
            return self.left_deriv, -self.right_deriv
        if k is BoundaryKind.C2:
            return -self.left_value, self.right_value
        if k is BoundaryKind.C3:
            return self.left_deriv, self.right_value
        return -self.left_value, -self.right_deriv


def eval_F(kind, weights: BoundaryWeights, mu0, mu1, x_index=None):
    """F(f) with f = p(x, .), for every node or for one node."""
    kind = BoundaryKind.parse(kind)
    if weights.kind is not kind:
        raise ValueError(f"weights were built for {weights.kind.value}, not {kind.value}")
    a, b = weights.coefficients
    out = np.multiply.outer(np.asarray(mu0, dtype=float), a) + np.multiply.outer(np.asarray(mu1, dtype=float), b)
    return out if x_index is None else out[..., x_index]


def _endpoint_weights(kind, x, t, value_fn, deriv_fn, **kw) -> BoundaryWeights:
    return BoundaryWeights(
        kind,
        value_fn(kind, t, x, 0.0, **kw),
        value_fn(kind, t, x, 1.0, **kw),
        deriv_fn(kind, t, x, 0.0, **kw),
        deriv_fn(kind, t, x, 1.0, **kw),
    )


def integrated_weights(grid: Grid, kind, t: float) -> BoundaryWeights:
    """Endpoint data of int_0^t p_tau(x, .) dtau in closed form."""
    kind = BoundaryKind.parse(kind)
    return _endpoint_weights(kind, grid.nodes, t, kernels.integrated_kernel, kernels.integrated_kernel_dy)


def step_weights(grid: Grid, kind, dt: float) -> tuple[BoundaryWeights, BoundaryWeights]:
    """Exact in-step weights for boundary data linear across one step.

    Over a step of length dt ending at t + dt, with mu linear between mu(t) and
    mu(t + dt), the boundary contribution at t + dt is

        1/2 [F(new; mu(t + dt)) + F(old; mu(t))],

    where `new` and `old` integrate the endpoint data of p_tau over tau in (0, dt]
    against 1 - tau/dt and tau/dt.  Both integrals are closed-form per image.
    """
    kind = BoundaryKind.parse(kind)
    x = grid.nodes
    full = integrated_weights(grid, kind, dt)
    tw = _endpoint_weights(kind, x, dt, kernels.integrated_kernel, kernels.integrated_kernel_dy, weighted=True)
    names = ("left_value", "right_value", "left_deriv", "right_deriv")
    old = BoundaryWeights(kind, *(getattr(tw, n) / dt for n in names))
    new = BoundaryWeights(kind, *(getattr(full, n) - getattr(tw, n) / dt for n in names))
    return new, old


def _panel_moments(grid: Grid, kind: BoundaryKind, dt: float, n_panels: int, order: int, levels: int):
    """Per-panel moments of the mu-coefficients in tau: A_k = int E (1-th), B_k = int E th.

    Panel k covers tau in [(k-1) dt, k dt] with th the position inside it.  The
    first panel is refined geometrically toward tau = 0 and its last piece
    [0, dt 2^-levels] is integrated in closed form.
    """
    x = grid.nodes
    gx, gw = np.polynomial.legendre.leggauss(order)
    gx, gw = 0.5 * (gx + 1.0), 0.5 * gw
    A = np.zeros((n_panels, 2, grid.n))
    B = np.zeros((n_panels, 2, grid.n))

    def coef(tau):
        w = _endpoint_weights(kind, x, tau, kernels.image_kernel, kernels.image_kernel_dy)
        return np.stack(w.coefficients)

    # first panel: dyadic pieces [2^-(j+1), 2^-j] of th
    for j in range(levels):
        lo, hi = 2.0 ** -(j + 1), 2.0 ** -j
        for th_u, w_u in zip(gx, gw):
            th = lo + (hi - lo) * th_u
            e = coef(th * dt) * (w_u * (hi - lo) * dt)
            A[0] += e * (1.0 - th)
            B[0] += e * th
    t_min = dt * 2.0**-levels
    tail = _endpoint_weights(kind, x, t_min, kernels.integrated_kernel, kernels.integrated_kernel_dy)
    A[0] += np.stack(tail.coefficients)
    for k in range(1, n_panels):
        for th, w_u in zip(gx, gw):
            e = coef((k + th) * dt) * (w_u * dt)
            A[k] += e * (1.0 - th)
            B[k] += e * th
    return A, B


def _series(A, B, mu0, mu1, n_out):
    out = np.zeros((n_out, A.shape[-1]))
    for side, mu in ((0, mu0), (1, mu1)):
        if not np.any(mu):
            continue
        a = A[:, side, :]
        b = B[:, side, :]
        conv = fftconvolve(a, mu[1:n_out, None], axes=0)[: n_out - 1]
        conv += fftconvolve(b, mu[: n_out - 1, None], axes=0)[: n_out - 1]
        out[1:] += 0.5 * conv
    return out


def boundary_series(grid: Grid, kind, path: BoundaryPath, n_out: int | None = None, order: int = 8,
                    levels: int = 20, rtol: float = 1e-4) -> np.ndarray:
    """1/2 int_0^{t_n} F_s(p_{t_n - s}(x, .)) ds at every time node and grid node.

    mu is interpolated linearly between time nodes.  The quadrature is repeated
    with twice the Gauss-Legendre order and four more dyadic levels; a relative
    change above `rtol` raises BoundaryConvergenceError.
    """
    kind = BoundaryKind.parse(kind)
    tg = path.time_grid
    n_out = tg.n_steps + 1 if n_out is None else n_out
    if path.is_zero or n_out < 2:
        return np.zeros((n_out, grid.n))
    coarse = _series(*_panel_moments(grid, kind, tg.dt, n_out - 1, order, levels), path.mu0, path.mu1, n_out)
    fine = _series(*_panel_moments(grid, kind, tg.dt, n_out - 1, 2 * order, levels + 4), path.mu0, path.mu1, n_out)
    # endpoint nodes of derivative-type sums are singular as tau -> 0; the solver overwrites them
    inner = slice(1, grid.n - 1)
    scale = max(np.max(np.abs(fine[:, inner])), 1e-300)
    change = np.max(np.abs(fine[:, inner] - coarse[:, inner])) / scale
    if change > rtol:
        raise BoundaryConvergenceError(f"boundary quadrature did not settle: relative change {change:.3g} > {rtol}")
    return fine


def boundary_integral(kind, grid: Grid, path: BoundaryPath, t_index: int, x_index=None, **kw):
    """The boundary part of the homogeneous solution at time node `t_index`."""
    if not 1 <= t_index <= path.time_grid.n_steps:
        raise ValueError(f"t_index must be in [1, {path.time_grid.n_steps}], got {t_index}")
    series = boundary_series(grid, kind, path, n_out=t_index + 1, **kw)
    row = series[t_index]
    return row if x_index is None else float(row[x_index])


def dump_path_csv(path: BoundaryPath, out) -> None:
    import csv

    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mu0", "mu1"])
        for t, a, b in zip(path.time_grid.times, path.mu0, path.mu1):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])
