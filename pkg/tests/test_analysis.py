import numpy as np
import numpy.testing as npt
import pytest

from stochheat.analysis import (
    HolderFitError,
    HypothesisError,
    SuiteResult,
    _mean_se,
    comparison_test,
    fit_moment_scaling,
    holder_fit,
    holder_study,
    increment_moments,
    integer_lags,
    kernel_check,
    noise_covariance_test,
    path_holder_fit,
    positivity_test,
    uniqueness_coupling_test,
)
from stochheat.boundary import BoundarySpec, generate_boundary
from stochheat.coefficients import CoefficientPair, constant, linear, sqrt_plus, zero
from stochheat.core import Grid, SeedSpec, TimeGrid
from stochheat.noise import constant_kernel, exponential_kernel
from stochheat.solver import SolveConfig


def config(n=33, dt=1e-3, steps=50, kind="C1", G=None, H=None, y0=0.0, **kw):
    g = Grid.uniform(n)
    return SolveConfig(g, TimeGrid(0.0, dt, steps), kind, CoefficientPair(G or zero(), H or zero()),
                       kw.pop("kappa", exponential_kernel(0.2)), g.field(y0), **kw)


def test_mean_se_of_a_mean():
    x = np.random.default_rng(0).standard_normal(500)
    m, s = _mean_se(x)
    npt.assert_allclose(m, x.mean())
    npt.assert_allclose(s, x.std(ddof=1) / np.sqrt(500), rtol=1e-12)


def test_increment_moments_on_known_field():
    g = Grid.uniform(11)
    # Y(t, x) = t + 2 x on every path: spatial increments 2 r, temporal ones s
    t = np.arange(6) * 0.1
    V = np.broadcast_to(t[None, :, None] + 2 * g.nodes[None, None, :], (3, 6, 11))
    st = increment_moments(V, g, 0.1, p=1, space_lags=[1, 2], time_lags=[1, 3], min_paths=1)
    npt.assert_allclose(st.space_moments, [(2 * g.h) ** 2, (4 * g.h) ** 2])
    npt.assert_allclose(st.time_moments, [0.1**2, 0.3**2])
    npt.assert_allclose(st.space_se, 0.0)
    assert st.rows()[0]["lag"] == pytest.approx(g.h)
    with pytest.raises(ValueError):
        increment_moments(V, g, 0.1, min_paths=100)


def test_fit_recovers_power_law():
    r = np.geomspace(1e-3, 1e-1, 8)
    fit = fit_moment_scaling(r, 3.0 * r ** (2 * 2 * 0.37), p=2)
    assert fit.exponent == pytest.approx(0.37, abs=1e-12)
    assert fit.half_width < 1e-10
    assert fit.row()["n_lags"] == 8


@pytest.mark.parametrize(
    "lags, window",
    [(np.geomspace(1e-3, 1e-1, 4), None), (np.geomspace(1e-2, 5e-2, 8), None), (np.geomspace(1e-3, 1e-1, 8), (1e-2, 2e-2))],
)
def test_fit_rejects_thin_lag_sets(lags, window):
    with pytest.raises(HolderFitError):
        fit_moment_scaling(lags, lags**2, p=1, window=window)


def test_integer_lags():
    lags = integer_lags(4e-3, 0.1, 1e-3, 10)
    assert lags[0] == 4 and lags[-1] == 100
    assert np.all(np.diff(lags) > 0)
    assert integer_lags(0.5, 0.4, 1e-3).size == 0


def test_brownian_paths_have_exponent_one_half():
    tg = TimeGrid(0.0, 1e-3, 1000)
    P = np.array([generate_boundary("brownian", {}, tg, SeedSpec(0, m)).mu0 for m in range(200)])
    fit = path_holder_fit(P, tg.dt, (4e-3, 0.1))
    assert abs(fit.exponent - 0.5) <= 0.05


def test_smooth_solution_is_not_rough():
    # no noise: space increments scale linearly, so the fit must find exponent near 1
    cfg = config(129, 1e-3, 200, "C2", y0=lambda x: np.cos(np.pi * x))
    study = holder_study(cfg, 1, x_range=(0.2, 0.8), pair_inside=True, fit_time=False, space_window=(cfg.grid.h, 0.2))
    assert study.space.exponent >= 0.95
    with pytest.raises(ValueError):
        holder_fit(study.stats, "height", (0.0, 1.0))


def test_comparison_equal_drifts_never_violate():
    c = config(33, 1e-3, 50, G=linear(-1.0), H=linear(0.5), y0=lambda x: np.sin(np.pi * x))
    rep = comparison_test(c, c, 20, batch=7)
    assert rep.n_violations == 0 and rep.passed()
    npt.assert_array_equal(rep.min_gap, 0.0)


def test_comparison_gap_is_exact_for_neumann_constant_drift():
    # zero flux, additive difference: Y2 - Y1 = (G2 - G1) t everywhere
    c1 = config(33, 1e-3, 50, "C2", G=constant(-1.0), H=constant(0.3))
    c2 = c1.replace(coefficients=CoefficientPair(constant(1.0), constant(0.3)))
    rep = comparison_test(c1, c2, 10)
    assert rep.fraction == 0.0
    npt.assert_allclose(rep.min_gap, 0.0, atol=1e-14)
    from stochheat.solver import run_ensemble

    d = run_ensemble(c2, 2).values - run_ensemble(c1, 2).values
    npt.assert_allclose(d, 2 * c1.time_grid.times[None, :, None] * np.ones_like(d), atol=1e-12)


def test_comparison_swapped_drifts_violate():
    lo = config(33, 1e-3, 50, G=constant(-1.0), H=linear(0.3), y0=lambda x: np.sin(np.pi * x))
    hi = lo.replace(coefficients=CoefficientPair(constant(1.0), linear(0.3)))
    with pytest.raises(HypothesisError) as err:
        comparison_test(hi, lo, 10)
    assert err.value.hypothesis == "G₁ ≤ G₂ violated"
    rep = comparison_test(hi, lo, 10, check=False)
    # every interior sample after t = 0 is violated
    assert rep.fraction > 0.9


@pytest.mark.parametrize(
    "change, name",
    [
        ({"y0": 2.0}, "Y₀⁽¹⁾ ≤ Y₀⁽²⁾ violated"),
        ({"seed": SeedSpec(1)}, "identical H, κ, grids, boundary and seeds required"),
        ({"kappa": constant_kernel()}, "identical H, κ, grids, boundary and seeds required"),
    ],
)
def test_comparison_hypotheses(change, name):
    a = config(17, 1e-2, 5, H=linear(0.3))
    if "y0" in change:
        change = {"y0": a.grid.field(change["y0"])}
    with pytest.raises(HypothesisError) as err:
        comparison_test(a.replace(**change), a, 2)
    assert err.value.hypothesis == name


def test_positivity_absorbing_start():
    rep = positivity_test(config(33, 1e-3, 50, H=sqrt_plus()), 20)
    npt.assert_array_equal(rep.path_min, 0.0)
    assert all(v == 0.0 for v in rep.below.values())
    assert rep.quantile() == 0.0


def test_positivity_excursions_small():
    cfg = config(33, 1e-3, 100, H=sqrt_plus(), y0=lambda x: 0.05 * np.sin(np.pi * x), clamp=True)
    rep = positivity_test(cfg, 50, batch=25)
    assert rep.below[10.0] == 0.0
    assert rep.path_min.min() < 0  # the clamp was switched off
    assert rep.rows()[-1]["statistic"] == "min"


@pytest.mark.parametrize(
    "cfg, name",
    [
        (dict(G=constant(1.0), H=sqrt_plus()), "G(0) = H(0) = 0 required"),
        (dict(H=sqrt_plus(), y0=-0.1), "Y₀ ≥ 0 required"),
        (dict(H=sqrt_plus(), boundary=BoundarySpec("constant", {"c1": 1.0})), "μ ≡ 0 required"),
        (dict(H=sqrt_plus(), boundary=BoundarySpec("brownian")), "μ ≡ 0 required"),
    ],
)
def test_positivity_hypotheses(cfg, name):
    with pytest.raises(HypothesisError) as err:
        positivity_test(config(17, 1e-2, 5, **cfg), 2)
    assert err.value.hypothesis == name


def test_uniqueness_coupling():
    cfg = config(33, 1e-3, 50, G=linear(-1.0), H=linear(0.5), y0=lambda x: np.sin(np.pi * x))
    rep = uniqueness_coupling_test(cfg, replays=3, tol=1e-10)
    assert rep.max_distance <= 1e-9
    assert rep.control > 1e-2 and rep.passed(control_floor=1e-2)
    assert rep.rows()[-1]["replay"] == "control"
    with pytest.raises(HypothesisError) as err:
        uniqueness_coupling_test(cfg.replace(coefficients=CoefficientPair(zero(), sqrt_plus())), 1)
    assert err.value.hypothesis == "Lipschitz or mollified coefficients required"


def test_noise_covariance_report():
    g = Grid.uniform(33)
    phi, psi = g.field(lambda x: np.sin(np.pi * x)), g.field(lambda x: 1 + x)
    rep = noise_covariance_test(g, exponential_kernel(0.2), phi, psi, 20000, seed=SeedSpec(0))
    assert rep.passed()
    assert rep.se > 0 and rep.row()["samples"] == 20000


@pytest.mark.parametrize("n", [16, 64])
def test_kernel_check_passes(n):
    res = kernel_check(Grid.uniform(n), kinds=["C1", "C2"])
    assert res.passed, res.summary()
    assert len(res.tables["kernel_check"]) == len(res.checks)


def test_suite_result_summary():
    r = SuiteResult()
    r.add("a", True, "x")
    r.add("b", False)
    assert not r.passed
    assert r.summary().splitlines() == ["PASS a: x", "FAIL b: "]
