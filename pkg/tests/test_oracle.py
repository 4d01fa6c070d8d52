import numpy as np
import pytest

from core.errors import ChainError, DomainError, EmptyLabelClassError, SizeError
from core.kernels import TorusKernelSpec
from core.oracle import DiscreteChain, DiscreteOracleService


class TestChains:

    def test_random_chain_is_reversible(self, random_chain):
        assert random_chain.is_reversible()
        assert sorted(set(random_chain.labels)) == [0, 1, 2]

    def test_invalid_chains_rejected(self):
        with pytest.raises(ChainError):
            DiscreteChain(P=np.array([[0.5, 0.4], [0.5, 0.5]]), pi=np.array([0.5, 0.5]))
        with pytest.raises(ChainError):
            DiscreteChain(P=np.array([[0.9, 0.1], [0.5, 0.5]]), pi=np.array([0.5, 0.5]))
        with pytest.raises(ChainError):
            DiscreteChain(P=np.eye(3), pi=np.full(2, 0.5))

    def test_too_many_labels(self):
        with pytest.raises(DomainError):
            DiscreteOracleService.random_reversible_chain(3, 4, seed=0)

    def test_csv(self, random_chain, tmp_path):
        loaded = DiscreteChain.from_csv(random_chain.to_csv(tmp_path / "chain.csv"))
        np.testing.assert_array_equal(loaded.P, random_chain.P)
        np.testing.assert_array_equal(loaded.pi, random_chain.pi)
        np.testing.assert_array_equal(loaded.labels, random_chain.labels)

    def test_semigroup(self, random_chain):
        assert DiscreteOracleService.semigroup_check(random_chain, power=3) < 1e-12


class TestExactLosses:

    @pytest.mark.parametrize("seed", range(20))
    def test_constructive_losses_agree_on_reversible_chains(self, seed):
        chain = DiscreteOracleService.random_reversible_chain(8, 3, seed=seed)
        losses = DiscreteOracleService.exact_losses(chain)
        assert losses['lump_constructive'] == pytest.approx(losses['deflat_constructive'], abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_sandwich(self, seed):
        chain = DiscreteOracleService.random_reversible_chain(10, 4, seed=seed)
        losses = DiscreteOracleService.exact_losses(chain)
        for kind in ['lump', 'deflat']:
            constructive, differential = losses[f'{kind}_constructive'], losses[f'{kind}_differential']
            assert constructive - 1e-12 <= differential <= 2 * constructive + 1e-12

    def test_lumpable_chains_have_zero_loss(self):
        chains = [
            DiscreteOracleService.block_chain([3, 2, 4], seed=1),
            DiscreteOracleService.equilibrating_chain([0.1, 0.2, 0.3, 0.4], [0, 1, 1, 0]),
        ]
        for chain in chains:
            for value in DiscreteOracleService.exact_losses(chain).values():
                assert value == pytest.approx(0.0, abs=1e-12)

    def test_deflated_kernel_from_lumped(self, random_chain):
        lumped = DiscreteOracleService.effective_lumped_kernel(random_chain)
        deflated = DiscreteOracleService.deflated_from_lumped(random_chain, lumped)
        np.testing.assert_allclose(deflated, DiscreteOracleService.effective_deflated_kernel(random_chain))
        assert DiscreteOracleService.deflat_loss_of(random_chain, deflated) == pytest.approx(
            DiscreteOracleService.exact_losses(random_chain)['deflat_constructive'], abs=1e-12
        )

    def test_lumped_kernel_is_stochastic(self, random_chain):
        lumped = DiscreteOracleService.effective_lumped_kernel(random_chain)
        np.testing.assert_allclose(lumped.sum(axis=1), 1.0)
        np.testing.assert_allclose(
            DiscreteOracleService.effective_invariant_density(random_chain).sum(), 1.0
        )

    def test_empty_label_class(self, random_chain):
        labels = np.zeros(random_chain.n_states, dtype=int)
        labels[0] = 2
        with pytest.raises(EmptyLabelClassError):
            DiscreteOracleService.exact_losses(random_chain, labels)


class TestVariance:

    def test_effective_variance_identity(self, random_chain):
        var_states, var_classes = DiscreteOracleService.effective_f_variance(random_chain)
        assert var_states == pytest.approx(var_classes, abs=1e-12)

    def test_integrand_vanishes_on_block_chain(self):
        block = DiscreteOracleService.block_chain([3, 3, 2], seed=2)
        f, var_f, mean = DiscreteOracleService.exact_f_and_variance(block)
        np.testing.assert_allclose(f, 0.0, atol=1e-12)
        assert var_f == pytest.approx(DiscreteOracleService.effective_f_variance(block)[0], abs=1e-12)

    def test_perturbation_orders(self):
        block = DiscreteOracleService.block_chain([3, 3, 2], seed=2)
        fit = DiscreteOracleService.fit_variance_order(block, [1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2])
        assert fit['distance_slope'] == pytest.approx(1.0, abs=0.01)
        assert fit['slope'] == pytest.approx(2.0, abs=0.05)
        assert fit['constant'] > 0
        np.testing.assert_allclose(fit['distances'] / fit['epsilons'], fit['distances'][0] / 1e-3, rtol=1e-6)

    def test_epsilon_range(self):
        block = DiscreteOracleService.block_chain([2, 2], seed=0)
        with pytest.raises(DomainError):
            DiscreteOracleService.perturbed_block_chain(block, 1.5)


class TestTorusDiscretization:

    def test_chain_structure(self):
        chain = DiscreteOracleService.discretize_torus_kernel(TorusKernelSpec(n=2, tau=1.0, sigma=2.0), 8)
        assert chain.n_states == 64
        np.testing.assert_allclose(chain.P.sum(axis=1), 1.0)
        np.testing.assert_array_equal(np.bincount(chain.labels), np.full(8, 8))
        assert chain.is_reversible()

    def test_memory_cap(self):
        with pytest.raises(SizeError):
            DiscreteOracleService.discretize_torus_kernel(TorusKernelSpec(n=2, tau=1.0, sigma=2.0), 8, memory_cap=1000)

    def test_cells_per_axis_cap(self):
        with pytest.raises(DomainError):
            DiscreteOracleService.discretize_torus_kernel(TorusKernelSpec(n=1, tau=1.0, sigma=2.0), 65)

    def test_label_coordinate(self):
        chain = DiscreteOracleService.discretize_torus_kernel(TorusKernelSpec(n=2, tau=1.0, sigma=2.0), 4)
        rc = DiscreteOracleService.label_coordinate(chain)
        assert rc.range == (-0.5, 3.5)
        sample = rc.sampler(2.0, 50, 3)
        np.testing.assert_allclose(sample.points[:, 0], -np.pi + 2.5 * np.pi / 2)
        np.testing.assert_allclose(rc(sample.points), 2.0)
        with pytest.raises(EmptyLabelClassError):
            rc.sampler(5.0, 10, 0)

    def test_label_coordinate_needs_geometry(self, random_chain):
        with pytest.raises(DomainError):
            DiscreteOracleService.label_coordinate(random_chain)

    def test_stationary_sampler(self):
        chain = DiscreteOracleService.discretize_torus_kernel(TorusKernelSpec(n=2, tau=1.0, sigma=2.0), 4)
        sample = DiscreteOracleService.stationary_sampler(chain)
        points = sample(100, 1)
        assert points.shape == (100, 2)
        np.testing.assert_array_equal(points, sample(100, 1))
        np.testing.assert_allclose(chain.cell_geometry.centres()[chain.cell_geometry.locate(points)], points)
