"""Gaussian noise that is white in time and colored in space.

Node values of one increment satisfy Cov(dW_i, dW_j) = kappa(x_i, x_j) dt; they
are paired with quadrature weights inside stochastic integrals, so that
sum_ij w_i w_j f_i g_j kappa_ij dt reproduces the covariance functional.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import lapack

from stochheat.core import Field, Grid, SeedSpec

JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class CovKernel:
    """Covariance density kappa(x, y) with its declared bound kappa0 = sup kappa."""

    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    kappa0: float
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x, y):
        return self.evaluator(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def matrix(self, grid: Grid) -> np.ndarray:
        return self(grid.nodes[:, None], grid.nodes[None, :])

    def check(self, grid: Grid) -> None:
        K = self.matrix(grid)
        if np.max(np.abs(K - K.T)) > 1e-12:
            raise ValueError(f"kappa {self.name!r} is not symmetric on the grid")
        if K.min() < 0 or K.max() > self.kappa0 * (1 + 1e-12):
            raise ValueError(f"kappa {self.name!r} leaves [0, kappa0 = {self.kappa0}] on the grid")

    def describe(self) -> dict:
        return {"kind": self.name, **self.params}


def constant_kernel(scale: float = 1.0) -> CovKernel:
    return CovKernel(lambda x, y: np.full(np.broadcast(x, y).shape, float(scale)), scale, "constant", {"scale": scale})


def exponential_kernel(ell: float = 0.2, scale: float = 1.0) -> CovKernel:
    return CovKernel(
        lambda x, y: scale * np.exp(-np.abs(x - y) / ell), scale, "exponential", {"ell": ell, "scale": scale}
    )


def gaussian_kernel(ell: float = 0.1, scale: float = 1.0) -> CovKernel:
    return CovKernel(
        lambda x, y: scale * np.exp(-np.square(x - y) / (2.0 * ell * ell)),
        scale,
        "gaussian",
        {"ell": ell, "scale": scale},
    )


def brownian_kernel(scale: float = 1.0) -> CovKernel:
    return CovKernel(lambda x, y: scale * np.minimum(x, y), scale, "brownian", {"scale": scale})


KERNELS = {
    "constant": constant_kernel,
    "exponential": exponential_kernel,
    "gaussian": gaussian_kernel,
    "brownian": brownian_kernel,
}


def make_kernel(spec: dict) -> CovKernel:
    """Build a kernel from a config table such as {kind = "exponential", ell = 0.2}."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in KERNELS:
        raise ValueError(f"unknown kappa kind {kind!r}; expected one of {sorted(KERNELS)}")
    for key in ("ell", "scale"):
        if key in spec and not spec[key] > 0:
            raise ValueError(f"kappa {key} must be positive, got {spec[key]}")
    try:
        return KERNELS[kind](**spec)
    except TypeError as exc:
        raise ValueError(f"bad parameters for kappa {kind!r}: {exc}") from None


def factor_psd(K: np.ndarray, jitter: float = 0.0) -> tuple[np.ndarray, float]:
    """Lower-triangular L with L L^T = K + jitter I over the non-null nodes.

    Nodes whose row and column of K vanish identically (zero variance, like x = 0
    for a Brownian covariance) get a zero row in L.  Jitter escalates by decades
    up to 1e-6 when needed.
    """
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    null = np.all(K == 0.0, axis=1) & np.all(K == 0.0, axis=0)
    keep = np.flatnonzero(~null)
    sub = K[np.ix_(keep, keep)]
    ladder = [j for j in JITTER_LADDER if j >= jitter]
    if jitter not in ladder:
        ladder.insert(0, jitter)
    info = 0
    for j in ladder:
        c, info = lapack.dpotrf(sub + j * np.eye(len(keep)), lower=1, clean=1)
        if info == 0:
            L = np.zeros((n, n))
            L[np.ix_(keep, keep)] = c
            return L, j
    raise FactorizationError(
        f"covariance is not positive definite even with jitter {ladder[-1]:g}: "
        f"leading minor of order {int(keep[info - 1]) + 1 if info > 0 else '?'} fails"
    )


@dataclass(frozen=True, eq=False)
class CovFactor:
    grid: Grid
    kernel: CovKernel
    factor: np.ndarray
    jitter: float

    def increments(self, z: np.ndarray, dt: float) -> np.ndarray:
        """Map standard normals z (..., n) to increments sqrt(dt) L z."""
        return np.sqrt(dt) * (z @ self.factor.T)


def build_cov_factor(grid: Grid, kappa: CovKernel, jitter: float = 0.0) -> CovFactor:
    K = kappa.matrix(grid)
    L, used = factor_psd(K, jitter)
    if np.max(np.abs(L @ L.T - K)) > 1e-8 + used:
        raise FactorizationError("factor does not reproduce the covariance to 1e-8")
    L.flags.writeable = False
    return CovFactor(grid, kappa, L, used)


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    values: np.ndarray
    dt: float


def sample_increment(factor: CovFactor, dt: float, rng: np.random.Generator | SeedSpec) -> NoiseIncrement:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if isinstance(rng, SeedSpec):
        rng = rng.generator()
    z = rng.standard_normal(factor.grid.n)
    return NoiseIncrement(factor.increments(z, dt), dt)


class NoiseStreams:
    """Per-path increment streams, drawn in blocks of steps for speed.

    Path m draws its standard normals from SeedSpec(seed, streams[m]) in step
    order, so the normals of a path do not depend on the ensemble it runs in.
    """

    def __init__(self, factor: CovFactor, dt: float, seeds: list[SeedSpec], block_steps: int | None = None):
        self.factor = factor
        self.dt = dt
        self.gens = [s.generator() for s in seeds]
        n = factor.grid.n
        self.block = block_steps or max(1, min(256, (1 << 21) // max(1, n * len(seeds))))
        self._buf = None
        self._pos = self.block

    def next(self) -> np.ndarray:
        """Increments for the next step, shape (M, n)."""
        if self._pos == self.block:
            n = self.factor.grid.n
            z = np.stack([g.standard_normal((self.block, n)) for g in self.gens], axis=1)
            self._buf = self.factor.increments(z, self.dt)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def integral_covariance(phi: Field, psi: Field, kappa: CovKernel, T: float) -> float:
    """T * sum_ij w_i w_j phi_i psi_j kappa(x_i, x_j) for time-constant phi, psi."""
    phi.grid.check(psi.grid)
    w = phi.grid.weights
    return float(T * (w * phi.values) @ kappa.matrix(phi.grid) @ (w * psi.values))
