import numpy as np
import numpy.testing as npt
import pytest
from scipy.special import gamma as gamma_fn

from stochheat.coefficients import (
    CoefficientPair,
    LIBRARY,
    constant,
    fitted_holder_exponent,
    linear,
    logistic,
    make_coefficient,
    mollify,
    osgood,
    pointwise_convergence_check,
    power,
    sqrt_plus,
    zero,
)


@pytest.mark.parametrize(
    "coef, center, expected",
    [
        (sqrt_plus(), 0.0, 0.5),
        (power(0.3), 0.0, 0.3),
        (power(0.75), 0.0, 0.75),
        (linear(2.0, 1.0), 0.3, 1.0),
        (logistic(3.0), 0.5, 1.0),
    ],
)
def test_declared_exponent_matches_fit(coef, center, expected):
    assert abs(fitted_holder_exponent(coef, center) - coef.holder) <= 0.05
    assert coef.holder == pytest.approx(expected)


def test_osgood_shape():
    g = osgood()
    assert g(np.array(0.0)) == 0.0
    x = np.array([1e-8, 1e-4, 0.1])
    assert np.all(g(x) < 0) and np.all(g(-x) > 0)
    # slower than linear near zero: slope grows like log(1/x)
    assert abs(g(1e-8) / 1e-8) > abs(g(1e-4) / 1e-4)
    assert not g.lipschitz


def test_nan_rejected():
    with pytest.raises(ValueError):
        linear()(np.array([0.0, np.nan]))


def test_power_range():
    with pytest.raises(ValueError):
        power(1.5)
    with pytest.raises(ValueError):
        power(0.0)


@pytest.mark.parametrize(
    "spec, x, expected",
    [
        (2.5, 1.0, 2.5),
        ({"kind": "linear", "a": -1.0}, 2.0, -2.0),
        ({"kind": "power", "gamma": 0.5, "c": 2.0}, -4.0, 4.0),
        ({"kind": "zero"}, 3.0, 0.0),
    ],
)
def test_make_coefficient(spec, x, expected):
    assert make_coefficient(spec)(np.array(x)) == pytest.approx(expected)


@pytest.mark.parametrize("spec", [{"kind": "cubic"}, {"kind": "linear", "slope": 1.0}, {}])
def test_make_coefficient_errors(spec):
    with pytest.raises(ValueError):
        make_coefficient(spec)


def test_library_metadata():
    assert set(LIBRARY) >= {"zero", "constant", "linear", "logistic", "sqrt_plus", "power", "osgood"}
    assert CoefficientPair(linear(-1.0), linear(0.5)).check_growth()
    assert CoefficientPair(zero(), sqrt_plus()).check_holder()
    assert not CoefficientPair(logistic(), zero()).check_growth()
    p = CoefficientPair(zero(), sqrt_plus())
    assert p.zero_at_zero and not p.lipschitz and p.gamma == 0.5
    assert not CoefficientPair(constant(1.0), zero()).zero_at_zero


@pytest.mark.parametrize("n", [4, 100, 10000])
def test_mollified_abs_at_zero(n):
    # E|Z| / sqrt(n) for a standard normal Z
    m = mollify(CoefficientPair(power(1.0), zero()), n)
    npt.assert_allclose(m.G(np.array(0.0)), np.sqrt(2 / (np.pi * n)), rtol=1e-10)


@pytest.mark.parametrize("n", [4, 100, 10000])
def test_mollified_sqrt_at_zero(n):
    # quadrature meets the square-root singularity at a panel edge, hence 1e-4
    # E sqrt((Z)^+) = E|Z|^(1/2) / 2 = 2^(1/4) Gamma(3/4) / (2 sqrt(pi))
    half_moment = 2**0.25 * gamma_fn(0.75) / np.sqrt(np.pi) / 2
    m = mollify(CoefficientPair(zero(), sqrt_plus()), n)
    npt.assert_allclose(m.H(np.array(0.0)), half_moment * n**-0.25, rtol=1e-4)


def test_abs_convergence_rate():
    ns = [10, 100, 1000, 10000]
    errs = pointwise_convergence_check(CoefficientPair(power(1.0), zero()), ns, np.linspace(-1, 1, 201))
    slope = np.polyfit(np.log(ns), np.log([errs[n][0] for n in ns]), 1)[0]
    assert abs(slope + 0.5) <= 0.05


def test_clipped_linear_rate_at_the_clip():
    # at x = n the clip is a kink: G_n(n) - n = -E[Z^+] / sqrt(n) = -1 / sqrt(2 pi n)
    ns = np.array([10, 100, 1000, 10000])
    errs = np.array([float(mollify(CoefficientPair(linear(1.0), zero()), n).G(np.array(float(n)))) - n for n in ns])
    npt.assert_allclose(errs, -1 / np.sqrt(2 * np.pi * ns), rtol=1e-7)
    assert abs(np.polyfit(np.log(ns), np.log(-errs), 1)[0] + 0.5) <= 0.05


def test_mollified_linear_is_exact_inside_clip():
    m = mollify(CoefficientPair(linear(2.0, -1.0), zero()), 50)
    x = np.linspace(-5, 5, 41)
    npt.assert_allclose(m.G(x), 2 * x - 1, atol=1e-12)


def test_mollified_bounds():
    n = 9
    m = mollify(CoefficientPair(linear(100.0), logistic(5.0)), n)
    x = np.linspace(-3, 3, 301)
    assert np.abs(m.G(x)).max() <= n and np.abs(m.H(x)).max() <= n
    assert m.pair.lipschitz
    lip = np.abs(np.diff(m.G(x)) / np.diff(x)).max()
    assert lip <= n * np.sqrt(2 * n / np.pi)
    with pytest.raises(ValueError):
        mollify(m.base, 0)
