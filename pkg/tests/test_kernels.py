import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import norm

from core.errors import DimensionError, DomainError, QuadratureDimensionError
from core.kernels import (
    TWO_PI,
    FastLimit,
    TorusKernelService,
    TorusKernelSpec,
    TorusPoint,
    WrappedNormalParams,
    torus_grid,
)


def image_sum(delta, sigma, terms=20):
    m = np.arange(-terms, terms + 1)
    return norm.pdf(np.asarray(delta)[..., None] + TWO_PI * m, scale=sigma).sum(axis=-1)


class TestWrappedNormal:

    @pytest.mark.parametrize("sigma", [0.1, 0.2499, 0.2501, 0.5, 1.0, 3.0])
    def test_matches_image_sum(self, sigma):
        delta = np.linspace(-np.pi, np.pi, 101)
        values = TorusKernelService.wrapped_normal_density(delta, sigma)
        np.testing.assert_allclose(values, image_sum(delta, sigma), atol=1e-10)

    @pytest.mark.parametrize("sigma", [0.1, 0.7, 2.0])
    def test_integrates_to_one(self, sigma):
        points, weight = torus_grid(1, 1024)
        total = TorusKernelService.wrapped_normal_density(points[:, 0], sigma).sum() * weight
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_fast_limit_is_uniform(self):
        values = TorusKernelService.wrapped_normal_density(np.array([0.0, 1.0, -3.0]), FastLimit.INFINITE)
        np.testing.assert_allclose(values, 1.0 / TWO_PI)

    def test_large_sigma_approaches_uniform(self):
        values = TorusKernelService.wrapped_normal_density(np.linspace(-3, 3, 7), 10.0)
        np.testing.assert_allclose(values, 1.0 / TWO_PI, atol=1e-12)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_nonpositive_sigma_rejected(self, sigma):
        with pytest.raises(DomainError):
            TorusKernelService.wrapped_normal_density(0.0, sigma)

    def test_rho(self):
        assert WrappedNormalParams(sigma=2.0).rho == pytest.approx(np.exp(-2.0))


class TestSpec:

    def test_inf_string_is_fast_limit(self):
        spec = TorusKernelSpec(n=2, tau=1.0, sigma="inf")
        assert spec.is_limit
        assert spec.label() == "inf"

    def test_fast_scale(self):
        assert TorusKernelSpec(n=3, tau=0.5, sigma=4.0).fast_scale == pytest.approx(2.0)

    @pytest.mark.parametrize("sigma", [0.0, -2.0])
    def test_invalid_sigma(self, sigma):
        with pytest.raises(ValidationError):
            TorusKernelSpec(n=2, tau=1.0, sigma=sigma)

    def test_torus_point_wraps(self):
        point = TorusPoint(np.array([4.0, -0.5]))
        np.testing.assert_allclose(point.coords, [4.0 - TWO_PI, -0.5])
        assert point.n == 2


class TestKernelDensity:

    @pytest.mark.parametrize("n,nodes", [(1, 256), (2, 128), (3, 32)])
    def test_normalized(self, n, nodes):
        spec = TorusKernelSpec(n=n, tau=1.0, sigma=2.0)
        x = np.linspace(-1.0, 0.7, n)
        assert TorusKernelService.integrate_kernel(spec, x, nodes=nodes) == pytest.approx(1.0, abs=1e-8)

    def test_limit_equals_effective_density(self, torus_limit):
        rng = np.random.default_rng(0)
        x = rng.uniform(-np.pi, np.pi, size=(50, 2))
        y = rng.uniform(-np.pi, np.pi, size=(50, 2))
        np.testing.assert_allclose(
            TorusKernelService.kernel_density(torus_limit, x, y),
            TorusKernelService.effective_density_pL(torus_limit, x[:, 0], y),
            rtol=1e-12
        )

    def test_product_structure(self, torus_spec):
        x, y = np.array([0.2, -1.0]), np.array([1.5, 2.5])
        g = TorusKernelService.wrapped_normal_density
        expected = g(y[0] - x[0], 1.0) * g(y[1] - x[1], 2.0)
        assert TorusKernelService.kernel_density(torus_spec, x, y) == pytest.approx(expected)

    def test_translation_invariant(self, torus_spec):
        x, y, shift = np.array([0.3, 0.4]), np.array([-2.0, 1.0]), np.array([1.1, -0.7])
        assert TorusKernelService.kernel_density(torus_spec, x, y) == pytest.approx(
            TorusKernelService.kernel_density(torus_spec, x + shift, y + shift)
        )

    def test_stationary_uniform(self, torus_spec):
        values = TorusKernelService.stationary_density(torus_spec, np.zeros((4, 2)))
        np.testing.assert_allclose(values, TWO_PI ** -2)

    def test_dimension_mismatch(self, torus_spec):
        with pytest.raises(DimensionError):
            TorusKernelService.kernel_density(torus_spec, np.zeros(3), np.zeros(3))


class TestLumpability:

    def test_zero_in_limit_and_one_dimension(self, torus_limit):
        assert TorusKernelService.lumpability_distance(torus_limit) == 0.0
        assert TorusKernelService.lumpability_distance(TorusKernelSpec(n=1, tau=1.0, sigma=2.0)) == 0.0

    def test_decreasing_in_sigma(self):
        distances = [
            TorusKernelService.lumpability_distance(TorusKernelSpec(n=2, tau=1.0, sigma=s))
            for s in np.arange(1.0, 4.01, 0.25)
        ]
        assert np.all(np.diff(distances) < 0)

    def test_decay_rate(self):
        fit = TorusKernelService.lumpability_decay_fit(2, 1.0, np.arange(2.0, 4.01, 0.25))
        assert fit['slope'] == pytest.approx(fit['expected_slope'], rel=0.2)

    def test_three_dimensions_within_factor_two(self):
        for sigma in [1.5, 2.5, 3.5]:
            d2 = TorusKernelService.lumpability_distance(TorusKernelSpec(n=2, tau=1.0, sigma=sigma))
            d3 = TorusKernelService.lumpability_distance(TorusKernelSpec(n=3, tau=1.0, sigma=sigma))
            assert 0.5 * d2 <= d3 <= 2.0 * d2

    def test_dimension_cap(self):
        spec = TorusKernelSpec(n=3, tau=1.0, sigma=1.0)
        with pytest.raises(QuadratureDimensionError):
            TorusKernelService.lumpability_distance(spec, max_dim=1)

    def test_monte_carlo_fallback(self):
        spec = TorusKernelSpec(n=3, tau=1.0, sigma=1.0)
        exact = TorusKernelService.lumpability_distance(spec, nodes=64)
        estimate = TorusKernelService.lumpability_distance(spec, monte_carlo=True, seed=3)
        assert estimate == pytest.approx(exact, rel=0.05)


def test_uniform_sampler_is_seeded():
    sample = TorusKernelService.uniform_sampler(3)
    a, b = sample(100, 5), sample(100, 5)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (100, 3)
    assert np.all(np.abs(a) <= np.pi)
