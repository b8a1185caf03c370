import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from gs2d.core import (RHO_EPS, DegenerateCovarianceError, Gaussian2D, GaussianCloud,
                       RawGaussianParams, ValidationError, activate, activate_array,
                       deactivate_array, eval_contribution, eval_density, reference_grid)

finite = st.floats(-30, 30, allow_nan=False)


def gauss(sx=0.5, sy=0.5, rho=0.0, mu=(0.0, 0.0), alpha=1.0, color=(1.0, 1.0, 1.0)):
    return Gaussian2D(alpha, mu, (sx, sy), rho, color)


def density_oracle(sx, sy, rho, dx, dy):
    """Closed form evaluated at 40 digits."""
    mpmath.mp.dps = 40
    sx, sy, rho, dx, dy = map(mpmath.mpf, (sx, sy, rho, dx, dy))
    d = 1 - rho ** 2
    q = dx ** 2 / sx ** 2 - 2 * rho * dx * dy / (sx * sy) + dy ** 2 / sy ** 2
    return float(mpmath.exp(-q / (2 * d)) / (2 * mpmath.pi * sx * sy * mpmath.sqrt(d)))


def test_activate_examples():
    raw = RawGaussianParams(0.0, (0.0, 0.0), (0.0, 0.0), 0.0, (0.0, 0.0, 0.0))
    g = activate(raw, (3.5, 7.25))
    assert g.rho == 0.0
    assert g.alpha == 0.5
    assert g.mu == (3.5, 7.25)
    assert g.sigma == (0.5, 0.5)


def test_activate_rejects_nonfinite():
    raw = RawGaussianParams(0.0, (0.0, 0.0), (math.nan, 0.0), 0.0, (0.0, 0.0, 0.0))
    with pytest.raises(ValidationError, match="raw_sigma"):
        activate(raw, (0.5, 0.5))


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=9, max_size=9))
def test_activation_ranges(vals):
    g = activate(RawGaussianParams.from_array(vals), (1.0, 2.0))
    assert 0.0 <= g.alpha <= 1.0
    assert all(0.0 <= c <= 1.0 for c in g.color)
    assert all(0.0 <= s <= 1.0 for s in g.sigma)
    assert abs(g.rho) <= 1.0 - RHO_EPS


def test_activation_ranges_open_for_moderate_inputs():
    raw = np.random.default_rng(0).uniform(-15, 15, (500, 9))
    act = activate_array(raw, np.zeros((500, 2)))
    for col in (0, 3, 4, 6, 7, 8):
        assert np.all((act[:, col] > 0) & (act[:, col] < 1))


def test_deactivate_roundtrip():
    rng = np.random.default_rng(3)
    raw = rng.uniform(-4, 4, (50, 9))
    refs = rng.uniform(0, 10, (50, 2))
    back = deactivate_array(activate_array(raw, refs), refs)
    np.testing.assert_allclose(back, raw, atol=1e-9)


def test_density_at_center_unit_sigma():
    assert eval_density(gauss(1.0, 1.0), 0.0, 0.0) == pytest.approx(1 / (2 * math.pi), rel=1e-15)


def test_density_half_sigma_offset_matches_high_precision():
    expected = density_oracle(0.5, 0.5, 0.0, 0.5, 0.5)
    assert expected == pytest.approx(0.2341993261, abs=1e-10)
    assert eval_density(gauss(), 0.5, 0.5) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("sx,sy,rho,dx,dy,rel", [
    (0.3, 0.7, 0.5, 0.2, -0.4, 1e-12),
    (0.9, 0.1, -0.95, 0.05, 0.3, 1e-12),
    # 1 - rho^2 cancels ~4 digits here
    (0.4, 0.4, 0.9999, 1.0, 1.0, 1e-9),
])
def test_density_matches_oracle(sx, sy, rho, dx, dy, rel):
    got = eval_density(gauss(sx, sy, rho, mu=(1.0, 2.0)), 1.0 + dx, 2.0 + dy)
    assert got == pytest.approx(density_oracle(sx, sy, rho, dx, dy), rel=rel)


def test_density_tail():
    g = gauss(0.3, 0.6, 0.2, mu=(4.0, 5.0))
    assert eval_density(g, 4.0 + 3.0, 5.0 + 6.0) < 1e-20 * eval_density(g, 4.0, 5.0)


def test_degenerate_rho():
    with pytest.raises(DegenerateCovarianceError):
        eval_density(gauss(rho=1.0), 0.0, 0.0)


def test_contribution_examples():
    g = gauss(alpha=0.5, color=(1.0, 0.0, 0.0))
    f = eval_density(g, 0.3, 0.1)
    r, gg, b = eval_contribution(g, 0.3, 0.1)
    assert r == pytest.approx(0.5 * f) and gg == 0.0 and b == 0.0
    assert eval_contribution(gauss(alpha=0.0), 0.1, 0.2) == (0.0, 0.0, 0.0)
    center = eval_contribution(gauss(), 0.0, 0.0)
    assert center == pytest.approx((0.63662,) * 3, abs=1e-5)
    assert center[0] == pytest.approx(density_oracle(0.5, 0.5, 0, 0, 0), rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(-3, 3), st.floats(-3, 3))
def test_density_point_symmetry(sx, sy, dx, dy):
    g = gauss(sx, sy, 0.0, mu=(2.0, 3.0))
    assert eval_density(g, 2.0 + dx, 3.0 + dy) == pytest.approx(
        eval_density(g, 2.0 - dx, 3.0 - dy), rel=1e-12, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(-0.99, 0.99),
       st.floats(-2, 2), st.floats(-2, 2))
def test_density_rho_negation(sx, sy, rho, dx, dy):
    a = eval_density(gauss(sx, sy, rho), dx, dy)
    b = eval_density(gauss(sx, sy, -rho), dx, -dy)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(-0.99, 0.99),
       st.floats(0, 2 * math.pi))
def test_density_monotone_along_ray(sx, sy, rho, theta):
    g = gauss(sx, sy, rho)
    ts = np.linspace(0, 5, 200)
    vals = [eval_density(g, t * math.cos(theta), t * math.sin(theta)) for t in ts]
    # rays start at the mean, which is the maximum
    assert all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("sx,sy,rho", [(0.4, 0.4, 0.0), (0.2, 0.7, 0.6), (0.9, 0.3, -0.8)])
def test_density_normalization(sx, sy, rho):
    g = gauss(sx, sy, rho)
    span = 8 * max(sx, sy)
    step = min(sx, sy) / 8
    xs = np.arange(-span, span + step / 2, step)
    vals = np.array([[eval_density(g, x, y) for x in xs] for y in xs])
    total = trapezoid(trapezoid(vals, xs, axis=1), xs)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_reference_grid_m1():
    refs = reference_grid(2, 2, 1)
    assert refs.tolist() == [[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 1.5]]


def test_reference_grid_m4_equal_intervals():
    refs = reference_grid(2, 3, 4)
    assert refs.shape == (24, 2)
    xs = np.unique(refs[:, 0])
    ys = np.unique(refs[:, 1])
    np.testing.assert_allclose(np.diff(xs), 0.5)
    np.testing.assert_allclose(np.diff(ys), 0.5)
    assert xs.min() == 0.25 and xs.max() == 2.75
    assert np.all((refs[:, 0] >= 0) & (refs[:, 0] < 3) & (refs[:, 1] >= 0) & (refs[:, 1] < 2))


def test_cloud_size_contract():
    with pytest.raises(ValidationError, match="perfect square"):
        GaussianCloud(2, 2, 3, np.zeros((12, 9)))
    with pytest.raises(ValidationError):
        GaussianCloud(2, 2, 4, np.zeros((15, 9)))
    c = GaussianCloud(48, 48, 16, np.zeros((36864, 9)))
    assert c.n == 36864
