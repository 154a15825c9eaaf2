"""Drift G and diffusion H, their regularity metadata, and Gaussian mollification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Fn = Callable[[np.ndarray], np.ndarray]


def _checked(x):
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        raise ValueError("coefficient evaluated at NaN")
    return x


@dataclass(frozen=True)
class Coefficient:
    """One scalar function with the metadata the theory cares about."""

    fn: Fn
    name: str
    params: dict = field(default_factory=dict)
    holder: float = 1.0
    growth: float = 1.0
    lipschitz: bool = True
    zero_at_zero: bool = False
    note: str = ""

    def __call__(self, x):
        return self.fn(_checked(x))


def zero() -> Coefficient:
    return Coefficient(lambda x: np.zeros_like(x), "zero", lipschitz=True, zero_at_zero=True, growth=0.0)


def constant(c: float = 1.0) -> Coefficient:
    return Coefficient(lambda x: np.full_like(x, float(c)), "constant", {"c": c}, growth=max(abs(c), 1e-300),
                       zero_at_zero=(c == 0))


def linear(a: float = 1.0, b: float = 0.0) -> Coefficient:
    return Coefficient(lambda x: a * x + b, "linear", {"a": a, "b": b}, growth=max(abs(a), abs(b), 1e-300),
                       zero_at_zero=(b == 0))


def logistic(r: float = 1.0) -> Coefficient:
    # quadratic growth: fails the linear growth bound, kept for the library's range
    return Coefficient(lambda x: r * x * (1.0 - x), "logistic", {"r": r}, growth=np.inf, zero_at_zero=True,
                       lipschitz=False, note="locally Lipschitz only")


def sqrt_plus(c: float = 1.0) -> Coefficient:
    return Coefficient(lambda x: c * np.sqrt(np.maximum(x, 0.0)), "sqrt_plus", {"c": c}, holder=0.5,
                       growth=abs(c), lipschitz=False, zero_at_zero=True)


def power(gamma: float = 0.5, c: float = 1.0) -> Coefficient:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"power exponent must lie in (0, 1], got {gamma}")
    return Coefficient(lambda x: c * np.abs(x) ** gamma, "power", {"gamma": gamma, "c": c}, holder=gamma,
                       growth=abs(c), lipschitz=(gamma == 1.0), zero_at_zero=True)


def osgood(c: float = 1.0) -> Coefficient:
    """G(x) = -c x log(e + 1/|x|): continuous, not Lipschitz at 0.

    Illustrative member of the Osgood-type drift class; the modulus condition
    is recorded, never checked.
    """

    def fn(x):
        a = np.abs(x)
        with np.errstate(divide="ignore"):
            return np.where(a > 0, -c * x * np.log(np.e + 1.0 / np.where(a > 0, a, 1.0)), 0.0)

    return Coefficient(fn, "osgood", {"c": c}, growth=np.inf, lipschitz=False, zero_at_zero=True,
                       note="x log(1/x) modulus, Osgood-type; not verified at runtime")


LIBRARY = {
    "zero": zero,
    "constant": constant,
    "linear": linear,
    "logistic": logistic,
    "sqrt_plus": sqrt_plus,
    "power": power,
    "osgood": osgood,
}


def make_coefficient(spec) -> Coefficient:
    """Build from a config table, e.g. {kind = "power", gamma = 0.5}; numbers mean constants."""
    if isinstance(spec, (int, float)):
        return constant(float(spec))
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in LIBRARY:
        raise ValueError(f"unknown coefficient kind {kind!r}; expected one of {sorted(LIBRARY)}")
    try:
        return LIBRARY[kind](**spec)
    except TypeError as exc:
        raise ValueError(f"bad parameters for coefficient {kind!r}: {exc}") from None


@dataclass(frozen=True)
class CoefficientPair:
    G: Coefficient
    H: Coefficient

    @property
    def gamma(self) -> float:
        return self.H.holder

    @property
    def growth(self) -> float:
        return max(self.G.growth, self.H.growth)

    @property
    def lipschitz(self) -> bool:
        return self.G.lipschitz and self.H.lipschitz

    @property
    def zero_at_zero(self) -> bool:
        return self.G.zero_at_zero and self.H.zero_at_zero

    def describe(self) -> dict:
        return {"G": {"kind": self.G.name, **self.G.params}, "H": {"kind": self.H.name, **self.H.params}}

    def check_growth(self, lo=-100.0, hi=100.0, n=2001) -> bool:
        if not np.isfinite(self.growth):
            return False
        x = np.linspace(lo, hi, n)
        bound = self.growth * (np.abs(x) + 1.0) * (1 + 1e-12)
        return bool(np.all(np.abs(self.G(x)) <= bound) and np.all(np.abs(self.H(x)) <= bound))

    def check_holder(self, lo=-10.0, hi=10.0, n=401) -> bool:
        x = np.linspace(lo, hi, n)
        d = np.abs(x[:, None] - x[None, :])
        dh = np.abs(self.H(x)[:, None] - self.H(x)[None, :])
        off = d > 0
        return bool(np.all(dh[off] <= self.H.growth * d[off] ** self.gamma * (1 + 1e-9) + 1e-12))


def eval_G(pair, x):
    return pair.G(x)


def eval_H(pair, x):
    return pair.H(x)


def fitted_holder_exponent(f: Fn, center: float = 0.0, lags=None) -> float:
    """Slope of log max|f(x+r) - f(x)| against log r near `center`."""
    lags = np.geomspace(1e-6, 1e-2, 12) if lags is None else np.asarray(lags)
    x = center + np.linspace(-0.05, 0.05, 201)
    osc = [np.max(np.abs(f(x + r) - f(x))) for r in lags]
    return float(np.polyfit(np.log(lags), np.log(osc), 1)[0])


# composite Gauss-Legendre on the standardized range [-8, 8]
_PANELS = 64
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _smoothing_rule():
    edges = np.linspace(-8.0, 8.0, _PANELS + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    z = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel() * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return z, w


_Z, _W = _smoothing_rule()


def _mollified(fn: Fn, n: int) -> Fn:
    s = 1.0 / np.sqrt(n)

    def smoothed(x):
        x = np.asarray(x, dtype=float)
        vals = np.clip(fn(x[..., None] - s * _Z), -n, n)
        return vals @ _W

    return smoothed


@dataclass(frozen=True)
class MollifiedPair:
    """G_n and H_n: the +-n clipped coefficients smoothed by a Gaussian of variance 1/n."""

    base: CoefficientPair
    n: int

    @property
    def nodes(self) -> np.ndarray:
        return _Z / np.sqrt(self.n)

    @property
    def pair(self) -> CoefficientPair:
        G, H = self.base.G, self.base.H
        note = f"mollified at level {self.n}"
        # |G_n| <= n and Lip(G_n) <= sup|clipped G| * sqrt(2 n / pi)
        return CoefficientPair(
            Coefficient(_mollified(G.fn, self.n), f"{G.name}_n", {**G.params, "n": self.n}, 1.0,
                        G.growth, True, False, note),
            Coefficient(_mollified(H.fn, self.n), f"{H.name}_n", {**H.params, "n": self.n}, 1.0,
                        H.growth, True, False, note),
        )

    @property
    def G(self) -> Coefficient:
        return self.pair.G

    @property
    def H(self) -> Coefficient:
        return self.pair.H


def mollify(pair: CoefficientPair, n: int) -> MollifiedPair:
    if int(n) != n or n < 1:
        raise ValueError(f"mollification level must be a positive integer, got {n}")
    return MollifiedPair(pair, int(n))


def pointwise_convergence_check(pair: CoefficientPair, n_list, x_grid) -> dict[int, tuple[float, float]]:
    """sup over x_grid of |G_n - G| and |H_n - H| for each n."""
    x = np.asarray(x_grid, dtype=float)
    out = {}
    for n in n_list:
        m = mollify(pair, n).pair
        out[int(n)] = (float(np.max(np.abs(m.G(x) - pair.G(x)))), float(np.max(np.abs(m.H(x) - pair.H(x)))))
    return out
