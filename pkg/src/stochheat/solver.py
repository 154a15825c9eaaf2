"""Mild-form time stepping, the homogeneous part, and Picard iteration at fixed noise.

One step of length dt is an exponential integrator for the mild form,

    Y(t+dt) = P_dt[Y(t) + G(Y(t)) dt] + B[H(Y(t)) dW] + (boundary integral over the step),

with Ito (left-point) evaluation of G and H.  B is the step-averaged noise
operator, B^2 = (1/dt) int_0^dt P_2s ds, which gives the stochastic convolution
over one step its exact covariance for additive white noise; the "left" scheme
uses B = P_dt instead.  Dirichlet endpoints take the
boundary data; Neumann endpoints are filled by a second-order one-sided
extrapolation matching the prescribed gradient.
"""

from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from stochheat import kernels
from stochheat.boundary import (BoundaryPath, BoundarySpec, boundary_series, eval_F, integrated_weights,
                                step_weights)
from stochheat.coefficients import CoefficientPair, MollifiedPair, zero
from stochheat.core import Field, Grid, SeedSpec, TimeGrid, Trajectory
from stochheat.kernels import BoundaryKind
from stochheat.noise import CovFactor, CovKernel, NoiseStreams, build_cov_factor


class SimulationError(RuntimeError):
    pass


class PicardDivergenceError(SimulationError):
    pass


@dataclass(eq=False)
class SolveConfig:
    grid: Grid
    time_grid: TimeGrid
    kind: BoundaryKind
    coefficients: CoefficientPair | MollifiedPair
    kappa: CovKernel
    y0: Field
    boundary: BoundaryPath | BoundarySpec | None = None
    clamp: bool = False
    seed: SeedSpec = field(default_factory=lambda: SeedSpec(0))
    jitter: float = 0.0
    noise_scheme: str = "averaged"

    def __post_init__(self):
        self.kind = BoundaryKind.parse(self.kind)
        if self.noise_scheme not in NOISE_SCHEMES:
            raise ValueError(f"noise_scheme must be one of {NOISE_SCHEMES}, got {self.noise_scheme!r}")
        self.grid.check(self.y0.grid)
        if isinstance(self.boundary, BoundaryPath) and self.boundary.time_grid != self.time_grid:
            raise ValueError("boundary path lives on a different time grid")
        self._factor = None

    def replace(self, **changes) -> "SolveConfig":
        return dataclasses.replace(self, **changes)

    @property
    def pair(self) -> CoefficientPair:
        c = self.coefficients
        return c.pair if isinstance(c, MollifiedPair) else c

    @property
    def factor(self) -> CovFactor:
        if self._factor is None:
            self._factor = build_cov_factor(self.grid, self.kappa, self.jitter)
        return self._factor

    def boundary_for(self, path_seed: SeedSpec | None = None) -> BoundaryPath:
        b = self.boundary
        if b is None:
            return BoundaryPath.zero(self.time_grid)
        if isinstance(b, BoundaryPath):
            return b
        rng = None
        if b.stochastic:
            rng = (path_seed or boundary_seed(self.seed, 0)).generator()
        return b.generate(self.time_grid, rng)

    def describe(self) -> dict:
        b = self.boundary
        if b is None:
            bdesc = {"kind": "constant", "c": 0.0}
        elif isinstance(b, BoundarySpec):
            bdesc = b.describe()
        else:
            bdesc = {"kind": b.generator, **b.params}
        coeffs = self.pair.describe()
        if isinstance(self.coefficients, MollifiedPair):
            coeffs["mollify"] = self.coefficients.n
        return {
            "grid": self.grid.n,
            "t0": self.time_grid.t0,
            "dt": self.time_grid.dt,
            "n_steps": self.time_grid.n_steps,
            "kind": self.kind.value,
            "coefficients": coeffs,
            "kappa": self.kappa.describe(),
            "boundary": bdesc,
            "clamp": self.clamp,
            "noise_scheme": self.noise_scheme,
            "seed": self.seed.seed,
            "stream": self.seed.stream,
            "y0_sha256": hashlib.sha256(self.y0.values.tobytes()).hexdigest(),
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.describe(), sort_keys=True, default=str).encode()).hexdigest()


def noise_seed(seed: SeedSpec, m: int) -> SeedSpec:
    """Noise stream of Monte Carlo path m."""
    return SeedSpec(seed.seed, 2 * (seed.stream + m))


def boundary_seed(seed: SeedSpec, m: int) -> SeedSpec:
    return SeedSpec(seed.seed, 2 * (seed.stream + m) + 1)


NOISE_SCHEMES = ("averaged", "left")


@functools.lru_cache(maxsize=64)
def _operators(n: int, kind: BoundaryKind, dt: float):
    grid = Grid.uniform(n)
    table = kernels.build_kernel_table(grid, kind, dt)
    # rows act on row-vectors of node values: (f @ AT)_i = sum_j w_j p(x_i, x_j) f_j
    AT = np.ascontiguousarray(kernels.transition_operator(table).T)
    AT.flags.writeable = False
    new, old = step_weights(grid, kind, dt)
    return AT, new, old


@functools.lru_cache(maxsize=64)
def _noise_operator(n: int, kind: BoundaryKind, dt: float):
    BT = np.ascontiguousarray(kernels.averaged_noise_operator(Grid.uniform(n), kind, dt).T)
    BT.flags.writeable = False
    return BT


# l = mu0 a(x) + mu1 b(x) carries the boundary data of each kind: values at
# Dirichlet ends, gradients at Neumann ends.  P_dt l = l + dt l''/2 - 1/2 F(I0; mu)
# holds exactly, so the grid quadrature only ever sees Y - l.
_LIFTS = {
    BoundaryKind.C1: lambda x: (1.0 - x, x),
    BoundaryKind.C2: lambda x: (x - 0.5 * x * x, 0.5 * x * x),
    BoundaryKind.C3: lambda x: (np.ones_like(x), x),
    BoundaryKind.C4: lambda x: (x - 1.0, np.ones_like(x)),
}


class _Stepper:
    def __init__(self, grid: Grid, kind: BoundaryKind, dt: float, scheme: str = "averaged"):
        self.grid, self.kind, self.dt = grid, kind, dt
        self.AT, self.w_new, self.w_old = _operators(grid.n, kind, dt)
        self.BT = _noise_operator(grid.n, kind, dt) if scheme == "averaged" else self.AT

    def noise_term(self, pair: CoefficientPair, Y, dW):
        if dW is None or pair.H.name == "zero":
            return None
        return (pair.H(Y) * dW) @ self.BT

    def boundary_term(self, mu0_old, mu1_old, mu0_new, mu1_new):
        return 0.5 * (eval_F(self.kind, self.w_new, mu0_new, mu1_new) + eval_F(self.kind, self.w_old, mu0_old, mu1_old))

    def boundary_increment(self, d0, d1):
        return 0.5 * eval_F(self.kind, self.w_new, d0, d1)

    def lift(self, mu0, mu1):
        a, b = _LIFTS[self.kind](self.grid.nodes)
        return np.multiply.outer(np.asarray(mu0, dtype=float), a) + np.multiply.outer(np.asarray(mu1, dtype=float), b)

    def lift_drift(self, mu0, mu1):
        # dt times half the second derivative of the lift; nonzero only for two Neumann ends
        if self.kind is not BoundaryKind.C2:
            return 0.0
        return (0.5 * self.dt * (np.asarray(mu1, dtype=float) - np.asarray(mu0, dtype=float)))[..., None]

    def fix_endpoints(self, Y, mu0, mu1):
        return fix_endpoints(Y, self.kind, self.grid.h, mu0, mu1)


def fix_endpoints(Y, kind: BoundaryKind, h: float, mu0, mu1):
    """In place on Y (..., n): impose Dirichlet values or extrapolate to the Neumann gradient.

    mu0 and mu1 are scalars or match Y.shape[:-1].
    """
    if kind.dirichlet_left:
        Y[..., 0] = mu0
    else:
        Y[..., 0] = (4.0 * Y[..., 1] - Y[..., 2] - 2.0 * h * np.asarray(mu0)) / 3.0
    if kind.dirichlet_right:
        Y[..., -1] = mu1
    else:
        Y[..., -1] = (4.0 * Y[..., -2] - Y[..., -3] + 2.0 * h * np.asarray(mu1)) / 3.0
    return Y


def step_mild(state: Field, config: SolveConfig, dW, mu_old=(0.0, 0.0), mu_new=(0.0, 0.0), step_index: int = 0) -> Field:
    """One exponential-integrator step from t to t + dt for a single field."""
    config.grid.check(state.grid)
    st = _Stepper(config.grid, config.kind, config.time_grid.dt, config.noise_scheme)
    Y = state.values[None, :]
    out = _advance(st, config.pair, Y, np.asarray(dW, dtype=float)[None, :], mu_old, mu_new, config.clamp, step_index)[0]
    return Field(config.grid, out[0])


def _advance(st: _Stepper, pair: CoefficientPair, Y, dW, mu_old, mu_new, clamp, k):
    dt = st.dt
    mu0_old, mu1_old = mu_old
    mu0_new, mu1_new = mu_new
    inhomogeneous = np.any(mu0_old) or np.any(mu1_old) or np.any(mu0_new) or np.any(mu1_new)
    drive = Y + dt * pair.G(Y) if pair.G.name != "zero" else Y
    if inhomogeneous:
        lift = st.lift(mu0_old, mu1_old)
        out = (drive - lift) @ st.AT + lift + st.lift_drift(mu0_old, mu1_old)
        out += st.boundary_increment(np.subtract(mu0_new, mu0_old), np.subtract(mu1_new, mu1_old))
    else:
        out = drive @ st.AT
    noise = st.noise_term(pair, Y, dW)
    if noise is not None:
        out += noise
    st.fix_endpoints(out, mu0_new, mu1_new)
    if not np.all(np.isfinite(out)):
        raise SimulationError(f"non-finite values produced at step {k + 1}")
    clamped = 0
    if clamp:
        neg = out < 0
        clamped = int(neg.sum())
        if clamped:
            out[neg] = 0.0
    return out, clamped


@dataclass
class EnsembleRun:
    """Recorded values of M paths at selected time nodes: values[m, r, i]."""

    times: np.ndarray
    time_index: np.ndarray
    values: np.ndarray
    clamp_count: int
    seeds: list
    boundaries: list
    noise: np.ndarray | None = None


def run_ensemble(config: SolveConfig, paths: int | list[int] = 1, record=None, noise=None,
                 keep_noise: bool = False) -> EnsembleRun:
    """Simulate M paths side by side.

    Path m uses noise stream `noise_seed(config.seed, m)` and, for random boundary
    generators, boundary stream `boundary_seed(config.seed, m)`; a path's output
    does not depend on the ensemble it is run in, up to rounding in the batched
    matrix products.  `record` lists the time
    indices to keep (default: all).  `noise` replays given increments of shape
    (M, n_steps, n) instead of drawing them.
    """
    ids = list(range(paths)) if isinstance(paths, int) else list(paths)
    M = len(ids)
    tg, grid = config.time_grid, config.grid
    N = tg.n_steps
    rec = np.arange(N + 1) if record is None else np.unique(np.asarray(record, dtype=int))
    if rec.min() < 0 or rec.max() > N:
        raise ValueError("record indices outside the time grid")
    pair = config.pair
    st = _Stepper(grid, config.kind, tg.dt, config.noise_scheme)
    bpaths = [config.boundary_for(boundary_seed(config.seed, m)) for m in ids]
    mu0 = np.stack([b.mu0 for b in bpaths])
    mu1 = np.stack([b.mu1 for b in bpaths])
    stochastic = pair.H.name != "zero"
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (M, N, grid.n):
            raise ValueError(f"noise replay needs shape {(M, N, grid.n)}, got {noise.shape}")
        source = None
    elif stochastic or keep_noise:
        source = NoiseStreams(config.factor, tg.dt, [noise_seed(config.seed, m) for m in ids])
    else:
        source = None
    kept = np.empty((M, N, grid.n)) if keep_noise and noise is None else None

    Y = np.repeat(config.y0.values[None, :], M, axis=0)
    # Dirichlet endpoints carry the boundary data from t0 on
    if config.kind.dirichlet_left:
        Y[:, 0] = mu0[:, 0]
    if config.kind.dirichlet_right:
        Y[:, -1] = mu1[:, 0]
    out = np.empty((M, len(rec), grid.n))
    slot = {int(k): r for r, k in enumerate(rec)}
    if 0 in slot:
        out[:, slot[0]] = Y
    clamped = 0
    for k in range(N):
        if noise is not None:
            dW = noise[:, k]
        elif source is not None:
            dW = source.next()
            if kept is not None:
                kept[:, k] = dW
        else:
            dW = None
        Y, c = _advance(st, pair, Y, dW, (mu0[:, k], mu1[:, k]), (mu0[:, k + 1], mu1[:, k + 1]), config.clamp, k)
        clamped += c
        if k + 1 in slot:
            out[:, slot[k + 1]] = Y
    return EnsembleRun(tg.times[rec], rec, out, clamped, [noise_seed(config.seed, m) for m in ids], bpaths,
                       noise if noise is not None else kept)


def simulate(config: SolveConfig, noise=None) -> tuple[Trajectory, np.ndarray]:
    """One path on every time node, plus the increments it consumed, shape (n_steps, n)."""
    if noise is not None:
        noise = np.asarray(noise, dtype=float)[None]
    run = run_ensemble(config, 1, noise=noise, keep_noise=True)
    meta = {
        "config_sha256": config.digest(),
        "seed": config.seed.seed,
        "stream": config.seed.stream,
        "clamp": config.clamp,
        "clamp_activations": run.clamp_count,
    }
    return Trajectory(config.grid, config.time_grid, run.values[0], meta), run.noise[0]


def homogeneous_solution(config: SolveConfig, boundary: BoundaryPath | None = None) -> Trajectory:
    """The part driven only by Y0 and the boundary data, straight from the mild formula:

        <Y0, p_t(x, .)> + 1/2 int_0^t F_s(p_{t-s}(x, .)) ds

    at every time node, with each kernel tabulated at the full elapsed time.
    """
    grid, tg = config.grid, config.time_grid
    path = boundary if boundary is not None else config.boundary_for()
    vals = np.empty((tg.n_steps + 1, grid.n))
    vals[0] = config.y0.values
    st = _Stepper(grid, config.kind, tg.dt, "left")
    m0, m1 = float(path.mu0[0]), float(path.mu1[0])
    lift = st.lift(m0, m1) if (m0 or m1) else np.zeros(grid.n)
    # P_t Y0 = P_t (Y0 - l) + l + t l''/2 - 1/2 F(I0(t); mu(0)), the last part in closed form
    wy = grid.weights * (config.y0.values - lift)
    for n in range(1, tg.n_steps + 1):
        t = n * tg.dt
        table = kernels.build_kernel_table(grid, config.kind, t)
        vals[n] = wy @ table.matrix
        if m0 or m1:
            weights = integrated_weights(grid, config.kind, t)
            drift = 0.5 * t * (m1 - m0) if config.kind is BoundaryKind.C2 else 0.0
            vals[n] += lift + drift - 0.5 * eval_F(config.kind, weights, m0, m1)
    vals += boundary_series(grid, config.kind, path)
    fix_endpoints(vals, config.kind, grid.h, path.mu0, path.mu1)
    return Trajectory(grid, tg, vals, {"config_sha256": config.digest()})


@dataclass
class PicardReport:
    iterations: int
    distances: list
    converged: bool
    final_time_distances: list = field(default_factory=list)


def picard_solve(config: SolveConfig, noise, n_iter: int = 50, tol: float = 1e-8, start=0.0,
                 boundary: BoundaryPath | None = None) -> tuple[Trajectory, PicardReport]:
    """Fixed-point iteration Y^(n+1) = Ytilde + Phi(Y^(n)) with the noise held fixed.

    Phi(Y)_{k+1} = P_dt[Phi(Y)_k + G(Y_k) dt] + B[H(Y_k) dW_k] is the discrete
    stochastic convolution built from the same one-step kernel as the time
    stepper, so the fixed point is the `simulate` trajectory for the same noise.
    `start` is the initial iterate of the convolution part (scalar or array).
    """
    grid, tg = config.grid, config.time_grid
    N = tg.n_steps
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (N, grid.n):
        raise ValueError(f"noise replay needs shape {(N, grid.n)}, got {noise.shape}")
    pair = config.pair
    st = _Stepper(grid, config.kind, tg.dt, config.noise_scheme)
    path = boundary if boundary is not None else config.boundary_for()
    ytilde = _ytilde(config, path)
    bar = np.broadcast_to(np.asarray(start, dtype=float), (N + 1, grid.n)).copy()
    distances, final = [], []
    grows = 0
    converged = False
    it = 0
    for it in range(1, n_iter + 1):
        Y = bar + ytilde
        S = tg.dt * pair.G(Y[:-1]) if pair.G.name != "zero" else np.zeros((N, grid.n))
        Z = st.noise_term(pair, Y[:-1], noise)
        new = np.empty_like(bar)
        new[0] = 0.0
        for k in range(N):
            u = (new[k] + S[k]) @ st.AT
            if Z is not None:
                u += Z[k]
            st.fix_endpoints(u, 0.0, 0.0)
            new[k + 1] = u
        if not np.all(np.isfinite(new)):
            raise PicardDivergenceError(f"non-finite Picard iterate at iteration {it}")
        d = float(np.max(np.abs(new - bar)))
        final.append(float(np.max(np.abs(new[-1] - bar[-1]))))
        grows = grows + 1 if distances and d > distances[-1] else 0
        distances.append(d)
        bar = new
        if d <= tol:
            converged = True
            break
        if grows >= 3:
            raise PicardDivergenceError(f"Picard distances grew for 3 consecutive iterations: {distances[-4:]}")
    traj = Trajectory(grid, tg, bar + ytilde, {"config_sha256": config.digest(), "picard_iterations": it})
    return traj, PicardReport(it, distances, converged, final)


_ZERO = zero()


def picard_map(config: SolveConfig, trajectory: np.ndarray, noise, boundary: BoundaryPath | None = None) -> np.ndarray:
    """One application of the Picard map to a full trajectory (n_steps + 1, n)."""
    traj, _ = picard_solve(config, noise, n_iter=1, tol=np.inf,
                           start=np.asarray(trajectory) - _ytilde(config, boundary), boundary=boundary)
    return traj.values


def _ytilde(config: SolveConfig, boundary=None) -> np.ndarray:
    """The stepper's homogeneous part: same recursion with G = H = 0."""
    path = boundary if boundary is not None else config.boundary_for()
    det = config.replace(coefficients=CoefficientPair(_ZERO, _ZERO), clamp=False, boundary=path)
    return run_ensemble(det, 1).values[0]


def draw_noise(config: SolveConfig, m: int = 0) -> np.ndarray:
    """The increments path m of `run_ensemble` would consume, shape (n_steps, n)."""
    tg = config.time_grid
    src = NoiseStreams(config.factor, tg.dt, [noise_seed(config.seed, m)])
    return np.stack([src.next()[0] for _ in range(tg.n_steps)])
