"""Monte Carlo statistics behind the verification suites.

Each test returns a small report object with `rows()` for CSV output and
`passed` for the criterion it checks.  Standard errors are computed over paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from stochheat.boundary import BoundaryPath, BoundarySpec
from stochheat.coefficients import MollifiedPair
from stochheat.core import Field, Grid, SeedSpec, TimeGrid
from stochheat.noise import CovKernel, build_cov_factor, integral_covariance
from stochheat.solver import SolveConfig, draw_noise, picard_solve, run_ensemble

EPS_TOL = 1e-8


class HypothesisError(ValueError):
    """A hypothesis needed by a suite does not hold; `hypothesis` names it."""

    def __init__(self, hypothesis: str, detail: str = ""):
        self.hypothesis = hypothesis
        super().__init__(f"{hypothesis}: {detail}" if detail else hypothesis)


class HolderFitError(ValueError):
    pass


def _mean_se(per_path: np.ndarray) -> tuple[float, float]:
    """Mean over axis 0 with its jackknife standard error (equal to s / sqrt(M) for a mean)."""
    per_path = np.asarray(per_path, dtype=float)
    M = per_path.shape[0]
    mean = per_path.mean(axis=0)
    if M < 2:
        return mean, np.zeros_like(mean)
    loo = (per_path.sum(axis=0) - per_path) / (M - 1)
    se = np.sqrt((M - 1) / M * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return mean, se


# ---------------------------------------------------------------- moments


@dataclass
class EnsembleStats:
    """Pointwise moments and 2p-th increment moments of an ensemble; lags in nodes or steps."""

    M: int
    p: int
    grid: Grid
    dt: float
    times: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    space_lags: np.ndarray
    space_moments: np.ndarray
    space_se: np.ndarray
    time_lags: np.ndarray
    time_moments: np.ndarray
    time_se: np.ndarray

    def rows(self) -> list[dict]:
        out = []
        for L, m, s in zip(self.space_lags, self.space_moments, self.space_se):
            out.append({"variable": "space", "lag": float(L * self.grid.h), "moment": float(m), "se": float(s)})
        for L, m, s in zip(self.time_lags, self.time_moments, self.time_se):
            out.append({"variable": "time", "lag": float(L * self.dt), "moment": float(m), "se": float(s)})
        return out


def _node_range(grid: Grid, x_range) -> np.ndarray:
    lo, hi = x_range
    x = grid.nodes
    return np.flatnonzero((x >= lo - 1e-12) & (x <= hi + 1e-12))


def increment_moments(values, grid: Grid, dt: float, p: int = 2, space_lags=(), time_lags=(),
                      time_index=None, x_range=(0.0, 1.0), pair_inside: bool = True,
                      space_rows=None, time_bases=None, min_paths: int = 100) -> EnsembleStats:
    """Empirical E|Y_t(x+r) - Y_t(x)|^2p and E|Y_{t+s}(x) - Y_t(x)|^2p.

    `values` has shape (M, R, n) at time indices `time_index` (default 0..R-1).
    Spatial increments start at nodes in `x_range`; with `pair_inside` the
    partner node must lie in the range too.  They are averaged over the rows
    `space_rows` (default: the last).  Temporal increments are taken at nodes
    in `x_range` from every base index in `time_bases` whose partner was recorded.
    """
    V = np.asarray(values, dtype=float)
    if V.ndim != 3 or V.shape[2] != grid.n:
        raise ValueError(f"values must have shape (M, R, {grid.n}), got {V.shape}")
    M, R, n = V.shape
    if M < min_paths:
        raise ValueError(f"increment moments need at least {min_paths} paths, got {M}")
    tidx = np.arange(R) if time_index is None else np.asarray(time_index, dtype=int)
    slot = {int(k): r for r, k in enumerate(tidx)}
    base = _node_range(grid, x_range)
    rows = [R - 1] if space_rows is None else list(space_rows)

    s_lags, s_mom, s_se = [], [], []
    for L in np.asarray(space_lags, dtype=int):
        i = base[base + L < n]
        if pair_inside:
            i = i[np.isin(i + L, base)]
        if L < 0 or i.size == 0:
            continue
        d = V[:, rows][:, :, i + L] - V[:, rows][:, :, i]
        m, s = _mean_se(np.mean(np.abs(d) ** (2 * p), axis=(1, 2)))
        s_lags.append(L), s_mom.append(m), s_se.append(s)

    t_lags, t_mom, t_se = [], [], []
    bases = list(tidx) if time_bases is None else [int(b) for b in time_bases]
    for L in np.asarray(time_lags, dtype=int):
        pairs = [(slot[b], slot[b + L]) for b in bases if b in slot and b + L in slot]
        if L < 0 or not pairs:
            continue
        a = np.array([q[0] for q in pairs])
        b = np.array([q[1] for q in pairs])
        d = V[:, b][:, :, base] - V[:, a][:, :, base]
        m, s = _mean_se(np.mean(np.abs(d) ** (2 * p), axis=(1, 2)))
        t_lags.append(L), t_mom.append(m), t_se.append(s)

    return EnsembleStats(M, p, grid, dt, tidx * dt, V.mean(axis=0), V.var(axis=0, ddof=1) if M > 1 else np.zeros((R, n)),
                         np.array(s_lags, dtype=int), np.array(s_mom), np.array(s_se),
                         np.array(t_lags, dtype=int), np.array(t_mom), np.array(t_se))


@dataclass
class HolderFit:
    variable: str
    p: int
    slope: float
    exponent: float
    half_width: float
    lag_range: tuple
    n_lags: int

    def row(self) -> dict:
        return {"variable": self.variable, "p": self.p, "slope": self.slope, "exponent": self.exponent,
                "half_width": self.half_width, "lag_min": self.lag_range[0], "lag_max": self.lag_range[1],
                "n_lags": self.n_lags}


def fit_moment_scaling(lags, moments, p: int, variable: str = "space", window=None) -> HolderFit:
    """Least-squares slope of log moment on log lag; exponent = slope / 2p.

    The half-width is the 95% t-interval from the regression residuals.
    Needs at least 5 positive lags inside `window` spanning a decade.
    """
    lags = np.asarray(lags, dtype=float)
    moments = np.asarray(moments, dtype=float)
    keep = (lags > 0) & (moments > 0)
    if window is not None:
        keep &= (lags >= window[0] * (1 - 1e-9)) & (lags <= window[1] * (1 + 1e-9))
    lags, moments = lags[keep], moments[keep]
    if lags.size < 5:
        raise HolderFitError(f"{variable} fit needs at least 5 usable lags in the window, got {lags.size}")
    if lags.max() / lags.min() < 10 * (1 - 1e-9):
        raise HolderFitError(f"{variable} lags span only {lags.max() / lags.min():.3g}x, need a decade")
    reg = sps.linregress(np.log(lags), np.log(moments))
    half = float(sps.t.ppf(0.975, lags.size - 2) * reg.stderr) if lags.size > 2 else math.inf
    return HolderFit(variable, p, float(reg.slope), float(reg.slope) / (2 * p), half / (2 * p),
                     (float(lags.min()), float(lags.max())), int(lags.size))


def holder_fit(stats: EnsembleStats, variable: str, window) -> HolderFit:
    """Fit in physical lag units; variable is "space" or "time"."""
    if variable == "space":
        return fit_moment_scaling(stats.space_lags * stats.grid.h, stats.space_moments, stats.p, "space", window)
    if variable == "time":
        return fit_moment_scaling(stats.time_lags * stats.dt, stats.time_moments, stats.p, "time", window)
    raise ValueError(f"variable must be 'space' or 'time', got {variable!r}")


def integer_lags(lo: float, hi: float, unit: float, count: int = 10) -> np.ndarray:
    """Distinct integer multiples of `unit`, geometrically spread over [lo, hi]."""
    a, b = math.ceil(lo / unit - 1e-9), math.floor(hi / unit + 1e-9)
    if b < a:
        return np.array([], dtype=int)
    return np.unique(np.round(np.geomspace(a, b, count)).astype(int))


@dataclass
class HolderStudy:
    stats: EnsembleStats
    space: HolderFit | None
    time: HolderFit | None
    space_window: tuple
    time_window: tuple

    def rows(self) -> list[dict]:
        return [f.row() for f in (self.space, self.time) if f is not None]


def holder_study(config: SolveConfig, M: int, p: int = 2, x_range=None, pair_inside=None, n_bases: int = 4,
                 space_window=None, time_window=None, fit_time: bool = True, n_lags: int = 10) -> HolderStudy:
    """Simulate M paths and fit the spatial and temporal exponents.

    Windows default to [4 h, 0.1] in space and [4 dt, 0.05 T] in time.  Spatial
    increments use the final time and the temporal base times, which sit in
    the second half of the run.
    """
    grid, tg = config.grid, config.time_grid
    h, dt, N = grid.h, tg.dt, tg.n_steps
    sw = tuple(space_window or (4 * h, 0.1))
    tw = tuple(time_window or (4 * dt, 0.05 * tg.T))
    if x_range is None:
        x_range = (0.2, 0.8) if config.kind.value == "C2" else (0.0, 0.1)
    if pair_inside is None:
        pair_inside = config.kind.value == "C2"
    s_lags = integer_lags(*sw, h, n_lags)
    t_lags = integer_lags(*tw, dt, n_lags) if fit_time else np.array([], dtype=int)
    Lmax = int(t_lags.max()) if t_lags.size else 0
    stride = max(Lmax + 1, (N // 2) // max(1, n_bases))
    bases = [N - Lmax - j * stride for j in range(n_bases)] if fit_time else []
    bases = [b for b in bases if b >= N // 2]
    record = sorted({N, *bases, *(b + int(L) for b in bases for L in t_lags)})
    run = run_ensemble(config, M, record=record)
    rows = [record.index(b) for b in bases] + [len(record) - 1]
    st = increment_moments(run.values, grid, dt, p, s_lags, t_lags, time_index=run.time_index, x_range=x_range,
                           pair_inside=pair_inside, space_rows=rows, time_bases=bases, min_paths=min(100, M))
    space = holder_fit(st, "space", sw)
    time = holder_fit(st, "time", tw) if fit_time else None
    return HolderStudy(st, space, time, sw, tw)


def path_holder_fit(paths, dt: float, window, p: int = 2, n_lags: int = 10) -> HolderFit:
    """Temporal moment scaling of boundary paths, array (M, N + 1)."""
    P = np.atleast_2d(np.asarray(paths, dtype=float))
    lags = integer_lags(window[0], window[1], dt, n_lags)
    mom = [np.mean(np.abs(P[:, L:] - P[:, :-L]) ** (2 * p)) for L in lags]
    return fit_moment_scaling(lags * dt, mom, p, "time", window)


# ---------------------------------------------------------------- comparison


@dataclass
class ComparisonReport:
    M: int
    n_samples: int
    n_violations: int
    eps: float
    worst: np.ndarray
    min_gap: np.ndarray

    @property
    def fraction(self) -> float:
        return self.n_violations / self.n_samples

    def passed(self, limit: float = 1e-3) -> bool:
        return self.fraction <= limit

    def rows(self) -> list[dict]:
        return [{"path": m, "worst_violation": float(w), "min_gap": float(g)}
                for m, (w, g) in enumerate(zip(self.worst, self.min_gap))]


def _same(a, b) -> bool:
    return a.describe() == b.describe() if hasattr(a, "describe") else a == b


def _boundary_key(cfg: SolveConfig):
    b = cfg.boundary
    if isinstance(b, BoundaryPath):
        return ("path", id(b))
    if isinstance(b, BoundarySpec):
        return ("spec", repr(b.describe()))
    return ("zero",)


def check_comparison_hypotheses(c1: SolveConfig, c2: SolveConfig, lo=-50.0, hi=50.0, n=20001) -> None:
    y = np.linspace(lo, hi, n)
    g1, g2 = c1.pair.G(y), c2.pair.G(y)
    if np.any(g1 > g2 + 1e-12):
        k = int(np.argmax(g1 - g2))
        raise HypothesisError("G₁ ≤ G₂ violated", f"G1({y[k]:.4g}) - G2({y[k]:.4g}) = {g1[k] - g2[k]:.3g}")
    if np.any(c1.y0.values > c2.y0.values):
        raise HypothesisError("Y₀⁽¹⁾ ≤ Y₀⁽²⁾ violated")
    H_same = np.array_equal(c1.pair.H(y), c2.pair.H(y))
    if not (H_same and _same(c1.kappa, c2.kappa) and c1.grid.same_as(c2.grid)
            and c1.time_grid == c2.time_grid and c1.kind == c2.kind and c1.seed == c2.seed
            and c1.noise_scheme == c2.noise_scheme and _boundary_key(c1) == _boundary_key(c2)):
        raise HypothesisError("identical H, κ, grids, boundary and seeds required")


def comparison_test(config1: SolveConfig, config2: SolveConfig, M: int, eps: float = EPS_TOL,
                    batch: int = 50, check: bool = True) -> ComparisonReport:
    """Count (path, t, x) samples with Y1 - Y2 > eps when both share every noise path.

    `check=False` skips the hypothesis guard, for negative controls with the
    two drifts swapped.
    """
    if check:
        check_comparison_hypotheses(config1, config2)
    worst, gap = [], []
    viol = total = 0
    for start in range(0, M, batch):
        ids = list(range(start, min(M, start + batch)))
        a = run_ensemble(config1, ids).values
        b = run_ensemble(config2, ids).values
        d = a - b
        viol += int(np.count_nonzero(d > eps))
        total += d.size
        worst.append(np.maximum(d.max(axis=(1, 2)), 0.0))
        gap.append((-d).min(axis=(1, 2)))
    return ComparisonReport(M, total, viol, eps, np.concatenate(worst), np.concatenate(gap))


# ---------------------------------------------------------------- positivity


def _boundary_is_zero(cfg: SolveConfig) -> bool:
    b = cfg.boundary
    if b is None:
        return True
    if isinstance(b, BoundarySpec):
        if b.stochastic:
            return False
        b = b.generate(cfg.time_grid, None)
    return bool(b.is_zero)


def check_positivity_hypotheses(cfg: SolveConfig) -> None:
    pair = cfg.pair
    zero = np.zeros(1)
    if not (np.all(pair.G(zero) == 0.0) and np.all(pair.H(zero) == 0.0)):
        raise HypothesisError("G(0) = H(0) = 0 required")
    if not _boundary_is_zero(cfg):
        raise HypothesisError("μ ≡ 0 required")
    if cfg.y0.values.min() < 0:
        raise HypothesisError("Y₀ ≥ 0 required", f"min Y0 = {cfg.y0.values.min():.3g}")


LADDER = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


@dataclass
class PositivityReport:
    dt: float
    M: int
    n_samples: int
    path_min: np.ndarray
    below: dict

    @property
    def excursion(self) -> np.ndarray:
        """Per-path negative excursion max(0, -min over t and x)."""
        return np.maximum(0.0, -self.path_min)

    def quantile(self, q: float = 0.99) -> float:
        return float(np.quantile(self.excursion, q))

    def rows(self) -> list[dict]:
        out = [{"dt": self.dt, "statistic": f"fraction_below_{c:g}_sqrt_dt", "value": v} for c, v in self.below.items()]
        out.append({"dt": self.dt, "statistic": "excursion_q99", "value": self.quantile()})
        out.append({"dt": self.dt, "statistic": "min", "value": float(self.path_min.min())})
        return out


def positivity_test(config: SolveConfig, M: int, ladder=LADDER, batch: int = 100) -> PositivityReport:
    """Run with the clamp off and measure how far, and how often, paths go below zero."""
    check_positivity_hypotheses(config)
    cfg = config.replace(clamp=False)
    dt = cfg.time_grid.dt
    counts = dict.fromkeys(ladder, 0)
    mins, total = [], 0
    for start in range(0, M, batch):
        V = run_ensemble(cfg, list(range(start, min(M, start + batch)))).values
        mins.append(V.min(axis=(1, 2)))
        total += V.size
        for c in ladder:
            counts[c] += int(np.count_nonzero(V < -c * math.sqrt(dt)))
    return PositivityReport(dt, M, total, np.concatenate(mins), {c: n / total for c, n in counts.items()})


def positivity_ladder(config: SolveConfig, dts, M: int, ladder=LADDER) -> tuple[list[PositivityReport], list[float]]:
    """positivity_test at each dt on the same time span; ratios of successive 99% excursion quantiles."""
    T, t0 = config.time_grid.T, config.time_grid.t0
    reps = []
    for dt in dts:
        tg = TimeGrid.span(T - t0, dt, t0)
        b = config.boundary
        if isinstance(b, BoundaryPath):
            b = None
        reps.append(positivity_test(config.replace(time_grid=tg, boundary=b), M, ladder))
    ratios = [a.quantile() / b.quantile() if b.quantile() > 0 else math.inf for a, b in zip(reps, reps[1:])]
    return reps, ratios


# ---------------------------------------------------------------- uniqueness


@dataclass
class UniquenessReport:
    tol: float
    distances: np.ndarray
    iterations: list
    control: float | None = None

    @property
    def max_distance(self) -> float:
        return float(self.distances.max())

    def passed(self, factor: float = 10.0, control_floor: float = 1e-2) -> bool:
        ok = self.max_distance <= factor * self.tol
        if self.control is not None:
            ok = ok and self.control >= control_floor
        return bool(ok)

    def rows(self) -> list[dict]:
        out = [{"replay": m, "distance": float(d), "iterations": it}
               for m, (d, it) in enumerate(zip(self.distances, self.iterations))]
        if self.control is not None:
            out.append({"replay": "control", "distance": self.control, "iterations": ""})
        return out


def check_uniqueness_hypotheses(cfg: SolveConfig) -> None:
    if not (isinstance(cfg.coefficients, MollifiedPair) or cfg.pair.lipschitz):
        raise HypothesisError("Lipschitz or mollified coefficients required")


def uniqueness_coupling_test(config: SolveConfig, replays: int = 50, tol: float = 1e-8, starts=(0.0, 1.0),
                             n_iter: int = 200, control: bool = True) -> UniquenessReport:
    """Solve each noise replay by Picard from two starts; sup distance of the limits.

    The control compares the limits for replays 0 and 1, which use different noise.
    """
    check_uniqueness_hypotheses(config)
    path = config.boundary_for()
    dist, iters, first = [], [], []
    for m in range(replays):
        W = draw_noise(config, m)
        a, ra = picard_solve(config, W, n_iter, tol, starts[0], path)
        b, rb = picard_solve(config, W, n_iter, tol, starts[1], path)
        dist.append(float(np.max(np.abs(a.values - b.values))))
        iters.append(f"{ra.iterations}/{rb.iterations}")
        if m < 2:
            first.append(a.values)
    ctrl = None
    if control:
        if len(first) < 2:
            first.append(picard_solve(config, draw_noise(config, 1), n_iter, tol, starts[0], path)[0].values)
        ctrl = float(np.max(np.abs(first[0] - first[1])))
    return UniquenessReport(tol, np.array(dist), iters, ctrl)


# ---------------------------------------------------------------- noise


@dataclass
class CovarianceReport:
    kernel: str
    n_samples: int
    estimate: float
    expected: float
    se: float

    @property
    def z(self) -> float:
        return (self.estimate - self.expected) / self.se

    def passed(self, n_se: float = 4.0) -> bool:
        return abs(self.z) <= n_se

    def row(self) -> dict:
        return {"kappa": self.kernel, "samples": self.n_samples, "estimate": self.estimate,
                "expected": self.expected, "se": self.se, "z": self.z}


def noise_covariance_test(grid: Grid, kappa: CovKernel, phi: Field, psi: Field, n_samples: int = 100_000,
                          dt: float = 1e-3, seed: SeedSpec | None = None, block: int = 10_000) -> CovarianceReport:
    """Sample Cov(<phi, dW>, <psi, dW>) over independent increments against its exact value."""
    factor = build_cov_factor(grid, kappa)
    gen = (seed or SeedSpec(0)).generator()
    w = grid.weights
    a_parts, b_parts = [], []
    for start in range(0, n_samples, block):
        z = gen.standard_normal((min(block, n_samples - start), grid.n))
        dW = factor.increments(z, dt)
        a_parts.append(dW @ (w * phi.values))
        b_parts.append(dW @ (w * psi.values))
    a, b = np.concatenate(a_parts), np.concatenate(b_parts)
    prod = (a - a.mean()) * (b - b.mean())
    n = prod.size
    est = float(prod.sum() / (n - 1))
    se = float(prod.std(ddof=1) / math.sqrt(n))
    return CovarianceReport(kappa.name, n, est, integral_covariance(phi, psi, kappa, dt), se)


@dataclass
class SuiteResult:
    """Named PASS/FAIL lines plus CSV tables keyed by file stem."""

    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append((name, bool(ok), detail))

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def summary(self) -> str:
        return "\n".join(f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in self.checks)


# ---------------------------------------------------------------- kernels


def _alias(t: float, h: float) -> float:
    # trapezoid error scale for a Gaussian of variance t sampled at spacing h
    return 4.0 * math.exp(-2.0 * math.pi ** 2 * t / (h * h))


def kernel_check(grid: Grid, times=(0.01, 0.1, 1.0), kinds=None) -> SuiteResult:
    """Symmetry, mass, boundary behaviour, semigroup property and the spectral cross-oracle.

    Quadrature-based tolerances grow with the trapezoid aliasing error, so
    coarse grids are judged fairly.
    """
    from stochheat import kernels as K

    res = SuiteResult()
    rows = []
    x = grid.nodes
    w = grid.weights
    for kind in kinds or list(K.BoundaryKind):
        kind = K.BoundaryKind.parse(kind)
        for t in times:
            tab = K.build_kernel_table(grid, kind, t)
            P = tab.matrix
            scale = float(np.abs(P).max())
            checks = {}
            checks["oracle"] = (float(np.abs(P - K.spectral_kernel(kind, t, x[:, None], x[None, :])).max()), 1e-9)
            checks["symmetry"] = (float(np.abs(P - P.T).max()), 1e-10)
            checks["abs_mass"] = (float((np.abs(P) * w[None, :]).sum(axis=1).max()), 12.0)
            if kind is K.BoundaryKind.C2:
                checks["neumann_mass"] = (float(np.abs(P @ w - 1.0).max()), 1e-10 + _alias(t, grid.h))
            ends = []
            ends.append(tab.left_value if kind.dirichlet_left else tab.left_deriv)
            ends.append(tab.right_value if kind.dirichlet_right else tab.right_deriv)
            checks["boundary"] = (float(max(np.abs(e).max() for e in ends)), 1e-10 * max(1.0, scale))
            half = K.build_kernel_table(grid, kind, t / 2).matrix
            comp = (half * w[None, :]) @ half
            checks["semigroup"] = (float(np.abs(comp - P).max()), 1e-6 + _alias(t / 4, grid.h) * max(1.0, scale))
            for name, (val, tol) in checks.items():
                ok = val <= tol
                rows.append({"kind": kind.value, "t": t, "check": name, "value": val, "tol": tol,
                             "status": "PASS" if ok else "FAIL"})
                res.add(f"{kind.value} t={t:g} {name}", ok, f"{val:.3e} <= {tol:.3e}")
    res.tables["kernel_check"] = rows
    return res
