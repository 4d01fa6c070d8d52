import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from core.coordinates import LevelSetSample, RcKind, ReactionCoordinate, ReactionCoordinateService
from core.dynamics import LangevinService, SdeConfig, circular_potential
from core.errors import InsufficientSamplesError, LevelSetError
from core.kernels import FastLimit, TorusKernelService, TorusKernelSpec
from core.loss import LOSS_COLUMNS, MC_ERROR_COLUMNS, AccessMode, LossQuadConfig, LossService
from core.oracle import DiscreteOracleService


def torus_setup(n, sigma, tau=1.0):
    access = LossService.analytic_access(TorusKernelSpec(n=n, tau=tau, sigma=sigma))
    return access, TorusKernelService.uniform_sampler(n)


class TestQuadConfig:

    def test_pairs_bounded_by_pool(self):
        with pytest.raises(ValidationError):
            LossQuadConfig(n_level=4, n_pairs=7)
        assert LossQuadConfig(n_level=4, n_pairs=6).n_pairs == 6

    def test_quadrature_shapes(self, small_quad):
        rc = ReactionCoordinateService.linear_rc_alpha(0.4)
        quadrature = LossService.level_set_quadrature(rc, small_quad)
        assert quadrature.points.shape == (8, 32, 2)
        assert quadrature.pairs.shape == (8, 128, 2)
        assert np.all(quadrature.pairs[..., 0] != quadrature.pairs[..., 1])
        np.testing.assert_allclose(rc(quadrature.points), quadrature.levels[:, None], atol=1e-12)


class TestAnalyticAccess:

    def test_ratio_is_scaled_kernel(self, torus_spec):
        access = LossService.analytic_access(torus_spec)
        x, y = np.array([0.1, 0.2]), np.array([[1.0, -1.0], [0.5, 3.0]])
        np.testing.assert_allclose(
            access.ratio(x, y), TorusKernelService.kernel_density(torus_spec, x, y) * (2 * np.pi) ** 2
        )
        assert access.mode == AccessMode.ANALYTIC_TORUS

    def test_l1_of_identical_rows(self, torus_spec):
        access = LossService.analytic_access(torus_spec)
        assert access.l1(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0


class TestDeflatability:

    def test_deterministic_and_thread_independent(self, small_quad):
        rc = ReactionCoordinateService.linear_rc_alpha(0.3)
        access, sampler = torus_setup(2, 2.0)
        serial = LossService.loss_deflat(rc, access, sampler, small_quad)
        again = LossService.loss_deflat(rc, access, sampler, small_quad)
        threaded = LossService.loss_deflat(rc, access, sampler, small_quad, max_workers=4)
        assert serial.value == again.value == threaded.value
        np.testing.assert_array_equal(serial.per_sample_f, threaded.per_sample_f)

    def test_exact_coordinate_in_limit_has_zero_loss(self, small_quad):
        rc = ReactionCoordinateService.linear_rc_alpha(0.0)
        access, sampler = torus_setup(2, FastLimit.INFINITE)
        estimate = LossService.loss_deflat(rc, access, sampler, small_quad)
        assert estimate.value < 1e-10

    def test_fast_direction_is_worst(self, small_quad):
        access, sampler = torus_setup(2, FastLimit.INFINITE)
        good = LossService.loss_deflat(ReactionCoordinateService.linear_rc_alpha(0.0), access, sampler, small_quad)
        bad = LossService.loss_deflat(
            ReactionCoordinateService.linear_rc_alpha(np.pi / 2), access, sampler, small_quad
        )
        assert bad.value > 0.5
        assert bad.value > good.value + 10 * bad.std_error

    def test_bounded_by_two(self, small_quad):
        rc = ReactionCoordinateService.linear_rc_alpha(np.pi / 2)
        access, sampler = torus_setup(2, 1.0)
        assert LossService.loss_deflat(rc, access, sampler, small_quad).value <= 2.0

    def test_integrand_depends_on_slow_angle_only(self, small_quad):
        rc = ReactionCoordinateService.linear_rc((1.0, 1.0))
        access, _ = torus_setup(2, FastLimit.INFINITE)
        quadrature = LossService.level_set_quadrature(rc, small_quad)
        x = np.stack([np.full(9, 0.3), np.linspace(-3.0, 3.0, 9)], axis=-1)
        f = LossService.integrand_f(x, rc, access, small_quad, quadrature)
        assert np.ptp(f) < 1e-12 * max(f.max(), 1.0)

    def test_variance_needs_two_samples(self):
        quad = LossQuadConfig(n_z=4, n_level=8, m_outer=1, n_pairs=8, seed=0)
        access, sampler = torus_setup(2, 2.0)
        estimate = LossService.loss_deflat(ReactionCoordinateService.linear_rc_alpha(0.2), access, sampler, quad)
        with pytest.raises(InsufficientSamplesError):
            LossService.variance_of_f(estimate)

    def test_sampler_failure_carries_level(self, small_quad):
        def failing(z, n, seed):
            raise RuntimeError("no samples")

        rc = ReactionCoordinate("broken", RcKind.CUSTOM, 2, lambda x: x[..., 0], np.ones_like, (0.0, 1.0),
                                sampler=failing)
        with pytest.raises(LevelSetError) as info:
            LossService.level_set_quadrature(rc, small_quad)
        assert info.value.z == pytest.approx(1.0 / 16.0)

    def test_weighted_pools_are_resampled(self, small_quad):
        def weighted(z, n, seed):
            points = np.stack([np.full(n, z), np.arange(n, dtype=float)], axis=-1)
            weights = np.zeros(n)
            weights[0] = 1.0
            return LevelSetSample(z, points, weights)

        rc = ReactionCoordinate("weighted", RcKind.CUSTOM, 2, lambda x: x[..., 0], np.ones_like, (0.0, 1.0),
                                sampler=weighted)
        quadrature = LossService.level_set_quadrature(rc, small_quad)
        np.testing.assert_array_equal(quadrature.points[..., 1], 0.0)


class TestLumpability:

    def test_sandwich(self):
        quad = LossQuadConfig(n_z=6, n_level=64, m_outer=8, n_pairs=2016, seed=3)
        rc = ReactionCoordinateService.linear_rc_alpha(0.6)
        access = LossService.analytic_access(TorusKernelSpec(n=2, tau=1.0, sigma=1.0), nodes=48)
        quadrature = LossService.level_set_quadrature(rc, quad)
        differential = LossService.loss_lump_differential(rc, access, quad, quadrature=quadrature)
        constructive = LossService.loss_lump_constructive(rc, access, quad, quadrature=quadrature)
        assert 0.95 * constructive.value <= differential.value <= 2.1 * constructive.value

    def test_exact_coordinate_in_limit(self, small_quad):
        rc = ReactionCoordinateService.linear_rc_alpha(0.0)
        access = LossService.analytic_access(TorusKernelSpec(n=2, tau=1.0, sigma=FastLimit.INFINITE), nodes=32)
        assert LossService.loss_lump_differential(rc, access, small_quad).value < 1e-10
        assert LossService.loss_lump_constructive(rc, access, small_quad).value < 1e-10


class TestMcError:

    def test_frame_layout(self, small_quad):
        rc = ReactionCoordinateService.linear_rc((1.0, 1.0))
        access, sampler = torus_setup(2, 2.0)
        frame = LossService.mc_error_curve(
            rc, access, sampler, [4, 16], n_trials=5, seed=1, quad=small_quad, reference_factor=10
        )
        assert list(frame.columns) == MC_ERROR_COLUMNS
        assert frame.attrs['reference_m'] == 160
        assert frame.attrs['reference'] > 0
        assert np.all(frame['rel_error'] >= 0)

    def test_error_rate_of_exact_power_law(self):
        frame = pd.DataFrame({'M': [16, 64, 256], 'rel_error': [0.25, 0.125, 0.0625]})
        assert LossService.error_rate(frame) == pytest.approx(-0.5)


class TestRows:

    def test_results_frame(self, small_quad):
        rc = ReactionCoordinateService.linear_rc_alpha(0.1)
        access, sampler = torus_setup(2, FastLimit.INFINITE)
        estimate = LossService.loss_deflat(rc, access, sampler, small_quad)
        row = LossService.loss_row(rc, estimate, FastLimit.INFINITE, 1.0, 7)
        frame = LossService.results_frame([row])
        assert list(frame.columns) == LOSS_COLUMNS
        assert frame.loc[0, 'sigma'] == "inf"
        assert frame.loc[0, 'M'] == small_quad.m_outer
        assert frame.loc[0, 'param'] == pytest.approx(0.1)


class TestEmpiricalAccess:

    def test_small_circular_loss(self):
        potential = circular_potential(10.0)
        config = SdeConfig(dt=1e-3, tau=0.01, seed=2)
        access = LossService.empirical_access(potential, config, n_replicas=50, grid_nodes=24)
        quad = LossQuadConfig(n_z=3, n_level=8, m_outer=4, n_pairs=16, seed=1)
        phi = ReactionCoordinateService.polar_rc("angle")

        def sampler(m, seed):
            return LangevinService.sample_stationary(potential, 1.0, m, seed)

        estimate = LossService.loss_deflat(phi, access, sampler, quad)
        assert np.isfinite(estimate.value) and estimate.value >= 0
        assert access.mode == AccessMode.EMPIRICAL_KDE

    def test_repeated_point_reuses_density(self):
        potential = circular_potential(10.0)
        config = SdeConfig(dt=1e-3, tau=0.01, seed=2)
        access = LossService.empirical_access(potential, config, n_replicas=30, grid_nodes=16)
        x, y = np.array([1.0, 0.1]), np.array([[0.9, 0.2], [1.1, 0.0]])
        np.testing.assert_array_equal(access.forward(x)(y), access.forward(x.copy())(y))


@pytest.mark.slow
class TestTorusStudies:

    def test_landscape_minimum_at_slow_direction(self):
        quad = LossQuadConfig(n_z=11, n_level=32, m_outer=128, n_pairs=256, seed=0)
        alphas = np.linspace(-np.pi / 2, np.pi / 2, 9)
        for sigma in [2.0, FastLimit.INFINITE]:
            access, sampler = torus_setup(2, sigma)
            losses = [
                LossService.loss_deflat(ReactionCoordinateService.linear_rc_alpha(a), access, sampler, quad).value
                for a in alphas
            ]
            assert np.argmin(losses) == 4
            assert np.argmax(losses) in (0, 8)

    def test_chain_estimators_match_exact_sums(self):
        spec = TorusKernelSpec(n=2, tau=1.0, sigma=2.0)
        chain = DiscreteOracleService.discretize_torus_kernel(spec, 8)
        exact = DiscreteOracleService.exact_losses(chain)
        access = LossService.chain_access(chain)
        rc = DiscreteOracleService.label_coordinate(chain)
        sampler = DiscreteOracleService.stationary_sampler(chain)
        quad = LossQuadConfig(n_z=8, n_level=512, m_outer=1024, n_pairs=4096, seed=5)
        quadrature = LossService.level_set_quadrature(rc, quad)

        estimates = {
            'lump_differential': LossService.loss_lump_differential(rc, access, quad, quadrature=quadrature),
            'lump_constructive': LossService.loss_lump_constructive(rc, access, quad, quadrature=quadrature),
            'deflat_differential': LossService.loss_deflat(rc, access, sampler, quad, quadrature=quadrature),
            'deflat_constructive': LossService.loss_deflat_constructive(
                rc, access, sampler, quad, quadrature=quadrature
            ),
        }
        for name, estimate in estimates.items():
            assert estimate.value == pytest.approx(exact[name], rel=0.02), name

    def test_outer_error_rate_on_chain(self):
        chain = DiscreteOracleService.discretize_torus_kernel(TorusKernelSpec(n=2, tau=1.0, sigma=1.0), 8)
        access = LossService.chain_access(chain)
        rc = DiscreteOracleService.label_coordinate(chain)
        sampler = DiscreteOracleService.stationary_sampler(chain)
        quad = LossQuadConfig(n_z=8, n_level=64, m_outer=16, n_pairs=256, seed=2)
        frame = LossService.mc_error_curve(
            rc, access, sampler, [16, 64, 256, 1024], n_trials=100, seed=2, quad=quad, reference_factor=20
        )
        assert LossService.error_rate(frame) == pytest.approx(-0.5, abs=0.1)

    def test_landscape_minimum_on_diagonal_for_slow_fast_mixing(self):
        quad = LossQuadConfig()
        access, sampler = torus_setup(2, 1.0)
        alphas = np.linspace(-np.pi / 2, np.pi / 2, 33)
        estimates = [
            LossService.loss_deflat(ReactionCoordinateService.linear_rc_alpha(a), access, sampler, quad, max_workers=4)
            for a in alphas
        ]
        values = np.array([e.value for e in estimates])
        errors = np.array([e.std_error for e in estimates])

        best = alphas[np.argmin(values)]
        assert abs(abs(best) - np.pi / 4) <= np.pi / 16
        for diagonal in (8, 24):
            for axis in (0, 16, 32):
                gap = values[axis] - values[diagonal]
                assert gap > 3.0 * np.hypot(errors[axis], errors[diagonal])

    def test_torus_error_rate_and_fast_limit_advantage(self):
        quad = LossQuadConfig(n_z=16, n_level=32, n_pairs=128)
        rc = ReactionCoordinateService.linear_rc((1.0, 1.0))
        m_list = [16, 64, 256, 1024]
        frames = {}
        for sigma in [2.0, FastLimit.INFINITE]:
            access, sampler = torus_setup(2, sigma)
            frames[sigma] = LossService.mc_error_curve(
                rc, access, sampler, m_list, n_trials=50, seed=0, quad=quad, max_workers=4
            )
            assert LossService.error_rate(frames[sigma]) == pytest.approx(-0.5, abs=0.1)
        assert np.all(frames[FastLimit.INFINITE]['rel_error'] < frames[2.0]['rel_error'])

    def test_variance_ordering_over_sigma_and_dimension(self):
        quad = LossQuadConfig(m_outer=512)
        coordinates = {
            2: ReactionCoordinateService.linear_rc((1.0, 1.0)),
            3: ReactionCoordinateService.linear_rc((1.0, 1.0, 1.0)),
        }
        variances = {n: [] for n in coordinates}
        for n, rc in coordinates.items():
            for sigma in [1.0, 2.0, 4.0, FastLimit.INFINITE]:
                access, sampler = torus_setup(n, sigma, tau=0.5)
                estimate = LossService.loss_deflat(rc, access, sampler, quad, max_workers=4)
                variances[n].append(LossService.variance_of_f(estimate)[0])
        assert np.all(np.diff(variances[2]) < 0)
        assert np.all(np.array(variances[3]) < np.array(variances[2]))


@pytest.mark.slow
class TestCircularSystem:

    def test_angle_beats_radius(self):
        quad = LossQuadConfig(n_z=16, n_level=32, m_outer=96, n_pairs=128, support_floor=1e-2, seed=0)
        phi = ReactionCoordinateService.polar_rc("angle")
        radius = ReactionCoordinateService.polar_rc("radius")
        angle_losses = []
        for sigma in [1.0, 10.0, 100.0]:
            potential = circular_potential(sigma)
            access = LossService.empirical_access(
                potential, SdeConfig(dt=1e-3, tau=0.1, seed=0), n_replicas=2000, grid_nodes=96
            )

            def sampler(m, seed, potential=potential):
                return LangevinService.sample_stationary(potential, 1.0, m, seed)

            angle = LossService.loss_deflat(phi, access, sampler, quad, max_workers=4)
            radial = LossService.loss_deflat(radius, access, sampler, quad, max_workers=4)
            assert angle.value < 2.0 and radial.value < 2.0
            assert radial.value - angle.value > 3.0 * np.hypot(angle.std_error, radial.std_error)
            angle_losses.append(angle.value)
        assert np.all(np.diff(angle_losses) <= 0)
