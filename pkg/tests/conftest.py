import numpy as np
import pytest

from core.kernels import FastLimit, TorusKernelSpec
from core.loss import LossQuadConfig
from core.oracle import DiscreteChain, DiscreteOracleService


@pytest.fixture
def small_quad():
    return LossQuadConfig(n_z=8, n_level=32, m_outer=64, n_pairs=128, seed=7)


@pytest.fixture
def torus_spec():
    return TorusKernelSpec(n=2, tau=1.0, sigma=2.0)


@pytest.fixture
def torus_limit():
    return TorusKernelSpec(n=2, tau=1.0, sigma=FastLimit.INFINITE)


@pytest.fixture
def random_chain():
    return DiscreteOracleService.random_reversible_chain(12, 3, seed=11)


@pytest.fixture
def two_block_chain():
    """Six states in two blocks of three; eigenvalues 1, 1 - eps and four zeros."""
    eps = 0.01
    block = np.kron(np.eye(2), np.full((3, 3), 1.0 / 3.0))
    P = (1.0 - eps) * block + eps * np.full((6, 6), 1.0 / 6.0)
    return DiscreteChain(P=P, pi=np.full(6, 1.0 / 6.0), labels=[0, 0, 0, 1, 1, 1])


@pytest.fixture
def cycle_chain():
    """Lazy random walk on a 20-cycle."""
    n = 20
    shift = np.roll(np.eye(n), 1, axis=1)
    P = 0.5 * np.eye(n) + 0.25 * shift + 0.25 * shift.T
    return DiscreteChain(P=P, pi=np.full(n, 1.0 / n))
