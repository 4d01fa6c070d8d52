"""
Exact reference values on small finite-state reversible chains.

Integrals over the state space become sums over states, mu_z becomes pi
restricted to a label class and normalized, and |Z| is the number of
label classes.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import eigvalsh

from core.coordinates import LevelSetSample, RcKind, ReactionCoordinate
from core.dynamics import midpoint_grid
from core.errors import ChainError, DomainError, EmptyLabelClassError, SizeError
from core.kernels import TorusKernelService, TorusKernelSpec
from core.rng import stream

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-12
MEMORY_CAP_BYTES = 512 * 1024 ** 2
MAX_TORUS_DIM = 3
MAX_CELLS_PER_AXIS = 64
ROW_CHUNK = 256


@dataclass(frozen=True)
class CellGeometry:
    """Uniform k-per-axis partition of a box; state index = C-order cell index."""
    box: tuple
    k: int

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.box, dtype=float).reshape(-1, 2)

    @property
    def dim(self) -> int:
        return self.array.shape[0]

    def centres(self) -> np.ndarray:
        return midpoint_grid(self.array, self.k)[0]

    def volumes(self, n_states: int) -> np.ndarray:
        return np.full(n_states, midpoint_grid(self.array, 1)[1] / self.k ** self.dim)

    def locate(self, x) -> np.ndarray:
        box = self.array
        x = np.asarray(x, dtype=float)
        width = (box[:, 1] - box[:, 0]) / self.k
        index = np.clip(np.floor((x - box[:, 0]) / width).astype(int), 0, self.k - 1)
        return np.ravel_multi_index(tuple(np.moveaxis(index, -1, 0)), (self.k,) * self.dim)


@dataclass(frozen=True, eq=False)
class DiscreteChain:
    P: np.ndarray
    pi: np.ndarray
    labels: Optional[np.ndarray] = None
    cell_geometry: Optional[CellGeometry] = None
    tau: float = 1.0

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        pi = np.asarray(self.pi, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or pi.shape != (P.shape[0],):
            raise ChainError(f"inconsistent shapes P{P.shape}, pi{pi.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
            raise ChainError("P is not row-stochastic")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > STOCHASTIC_TOL:
            raise ChainError("pi is not a probability vector")
        if np.max(np.abs(pi @ P - pi)) > STATIONARY_TOL:
            raise ChainError("pi is not stationary for P")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "pi", pi)
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    def detailed_balance_error(self) -> float:
        flux = self.pi[:, None] * self.P
        return float(np.max(np.abs(flux - flux.T)))

    def is_reversible(self, tol: float = STATIONARY_TOL) -> bool:
        return self.detailed_balance_error() <= tol

    def to_csv(self, path) -> Path:
        """One row per state: pi, label and the row of P."""
        path = Path(path)
        frame = pd.DataFrame(self.P, columns=[f"P_{j}" for j in range(self.n_states)])
        frame.insert(0, "label", self.labels if self.labels is not None else -1)
        frame.insert(0, "pi", self.pi)
        frame.index.name = "state"
        frame.to_csv(path, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path) -> "DiscreteChain":
        frame = pd.read_csv(path, index_col="state")
        labels = frame["label"].to_numpy()
        P = frame[[c for c in frame.columns if c.startswith("P_")]].to_numpy(dtype=float)
        return cls(P=P, pi=frame["pi"].to_numpy(dtype=float), labels=None if np.all(labels < 0) else labels)


def _classes(chain: DiscreteChain, labels: Optional[Sequence[int]]):
    labels = chain.labels if labels is None else np.asarray(labels, dtype=int)
    if labels is None or labels.shape != (chain.n_states,):
        raise DomainError("every state needs a label")
    n_labels = int(labels.max()) + 1
    classes = []
    for c in range(n_labels):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            raise EmptyLabelClassError(c)
        mass = chain.pi[members].sum()
        if mass <= 0:
            raise EmptyLabelClassError(c)
        classes.append((members, chain.pi[members] / mass))
    return labels, classes


def _pairwise_l1(rows: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """D_ab = sum_k w_k |rows_a,k - rows_b,k|."""
    out = np.empty((rows.shape[0], rows.shape[0]))
    for a in range(rows.shape[0]):
        out[a] = np.abs(rows - rows[a]) @ weights
    return out


def _pair_mean(values: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """sum_ab mu_a mu_b |values[..., a] - values[..., b]| along the last axis."""
    out = np.zeros(values.shape[:-1])
    for a in range(values.shape[-1]):
        out += mu[a] * (np.abs(values - values[..., a:a + 1]) @ mu)
    return out


class DiscreteOracleService:

    # ------------------------------------------------------------ chains

    @staticmethod
    def discretize_torus_kernel(
        spec: TorusKernelSpec,
        k_per_axis: int,
        memory_cap: int = MEMORY_CAP_BYTES
    ) -> DiscreteChain:
        """
        Collocate the torus kernel on a k^n cell grid.

        P_ij is proportional to p(x_i, x_j) * cell volume with rows normalized;
        pi is uniform. States are labelled by the cell index of x_1.
        """
        if spec.n > MAX_TORUS_DIM or k_per_axis > MAX_CELLS_PER_AXIS or k_per_axis < 1:
            raise DomainError(f"discretization supports n <= {MAX_TORUS_DIM}, k <= {MAX_CELLS_PER_AXIS}")
        n_states = k_per_axis ** spec.n
        if n_states ** 2 * 8 > memory_cap:
            raise SizeError(f"{n_states} states need {n_states ** 2 * 8} bytes, cap is {memory_cap}")

        geometry = CellGeometry(box=((-np.pi, np.pi),) * spec.n, k=k_per_axis)
        centres = geometry.centres()
        P = np.empty((n_states, n_states))
        for start in range(0, n_states, ROW_CHUNK):
            block = centres[start:start + ROW_CHUNK]
            P[start:start + ROW_CHUNK] = TorusKernelService.kernel_density(spec, block[:, None, :], centres[None, :, :])
        P /= P.sum(axis=1, keepdims=True)

        labels = geometry.locate(centres) // k_per_axis ** (spec.n - 1)
        logger.debug("discretized torus kernel n=%d sigma=%s into %d states", spec.n, spec.label(), n_states)
        return DiscreteChain(
            P=P, pi=np.full(n_states, 1.0 / n_states), labels=labels, cell_geometry=geometry, tau=spec.tau
        )

    @staticmethod
    def random_reversible_chain(n_states: int, n_labels: int, seed: int) -> DiscreteChain:
        """P = D^-1 S for a random symmetric positive S, pi proportional to the row sums."""
        if not 1 <= n_labels <= n_states:
            raise DomainError(f"need 1 <= n_labels <= n_states, got {n_labels}, {n_states}")
        rng = stream(seed)
        S = rng.random((n_states, n_states)) + 1e-3
        S = S + S.T
        rows = S.sum(axis=1)
        labels = np.concatenate([np.arange(n_labels), rng.integers(0, n_labels, n_states - n_labels)])
        return DiscreteChain(P=S / rows[:, None], pi=rows / rows.sum(), labels=rng.permutation(labels))

    @staticmethod
    def block_chain(block_sizes: Sequence[int], seed: int) -> DiscreteChain:
        """
        Perfectly lumpable chain P_ij = A_{b(i) b(j)} nu_j / nu(b(j)) for a
        reversible block kernel A and within-block weights nu.
        """
        rng = stream(seed)
        n_blocks = len(block_sizes)
        S = rng.random((n_blocks, n_blocks)) + 0.05
        S = S + S.T
        A = S / S.sum(axis=1, keepdims=True)
        a_bar = S.sum(axis=1) / S.sum()

        labels = np.repeat(np.arange(n_blocks), block_sizes)
        nu = rng.random(labels.size) + 0.1
        nu_bar = np.bincount(labels, weights=nu)
        within = nu / nu_bar[labels]
        P = A[labels][:, labels] * within[None, :]
        pi = a_bar[labels] * within
        return DiscreteChain(P=P, pi=pi, labels=labels)

    @staticmethod
    def metropolis_kernel(pi: np.ndarray) -> np.ndarray:
        """Metropolis chain with uniform proposals, reversible with respect to pi."""
        n = pi.size
        Q = np.minimum(1.0, pi[None, :] / pi[:, None]) / n
        np.fill_diagonal(Q, 0.0)
        np.fill_diagonal(Q, 1.0 - Q.sum(axis=1))
        return Q

    @staticmethod
    def perturbed_block_chain(block: DiscreteChain, epsilon: float) -> DiscreteChain:
        """(1 - eps) P_block + eps Q with Q Metropolis-reversible for the same pi."""
        if not 0 <= epsilon <= 1:
            raise DomainError(f"epsilon must lie in [0, 1], got {epsilon}")
        Q = DiscreteOracleService.metropolis_kernel(block.pi)
        return DiscreteChain(P=(1 - epsilon) * block.P + epsilon * Q, pi=block.pi, labels=block.labels)

    @staticmethod
    def equilibrating_chain(pi: Sequence[float], labels: Sequence[int]) -> DiscreteChain:
        """One-step equilibration P_ij = pi_j."""
        pi = np.asarray(pi, dtype=float)
        return DiscreteChain(P=np.tile(pi, (pi.size, 1)), pi=pi, labels=labels)

    # ------------------------------------------------------------ effective kernels

    @staticmethod
    def effective_invariant_density(chain: DiscreteChain, labels=None) -> np.ndarray:
        """Label-class masses pi_bar."""
        _, classes = _classes(chain, labels)
        return np.array([chain.pi[members].sum() for members, _ in classes])

    @staticmethod
    def effective_lumped_kernel(chain: DiscreteChain, labels=None) -> np.ndarray:
        """p_L(c, .) = sum_{a in c} mu_c(a) P_a."""
        _, classes = _classes(chain, labels)
        return np.stack([mu @ chain.P[members] for members, mu in classes])

    @staticmethod
    def effective_deflated_kernel(chain: DiscreteChain, labels=None) -> np.ndarray:
        """p_D(., c) = sum_{b in c} mu_c(b) P_.b / pi_b, shape (n_states, n_labels)."""
        _, classes = _classes(chain, labels)
        return np.stack([(chain.P[:, members] / chain.pi[members]) @ mu for members, mu in classes], axis=1)

    @staticmethod
    def deflated_from_lumped(chain: DiscreteChain, lumped: np.ndarray) -> np.ndarray:
        """p_D(x, z) = p_L(z, x) / pi(x)."""
        return lumped.T / chain.pi[:, None]

    # ------------------------------------------------------------ losses

    @staticmethod
    def exact_losses(chain: DiscreteChain, labels=None) -> Dict[str, float]:
        """
        Differential and constructive lumpability/deflatability losses as
        exact finite sums.

        Returns:
            Dict with lump_differential, deflat_differential,
            lump_constructive and deflat_constructive
        """
        labels, classes = _classes(chain, labels)
        n_labels = len(classes)
        P, pi = chain.P, chain.pi
        lumped = DiscreteOracleService.effective_lumped_kernel(chain, labels)
        deflated = DiscreteOracleService.effective_deflated_kernel(chain, labels)

        lump_diff = deflat_diff = lump_con = deflat_con = 0.0
        for c, (members, mu) in enumerate(classes):
            rows = P[members]
            cols = (P[:, members] / pi[members]).T
            lump_diff += mu @ _pairwise_l1(rows, np.ones(chain.n_states)) @ mu
            deflat_diff += mu @ _pairwise_l1(cols, pi) @ mu
            lump_con += mu @ np.abs(rows - lumped[c]).sum(axis=1)
            deflat_con += mu @ (np.abs(cols - deflated[:, c]) @ pi)

        return {
            'lump_differential': float(lump_diff / n_labels),
            'deflat_differential': float(deflat_diff / n_labels),
            'lump_constructive': float(lump_con / n_labels),
            'deflat_constructive': float(deflat_con / n_labels)
        }

    @staticmethod
    def deflat_loss_of(chain: DiscreteChain, deflated: np.ndarray, labels=None) -> float:
        """Deflatability loss of an arbitrary effective kernel p_D (n_states, n_labels)."""
        labels, classes = _classes(chain, labels)
        total = 0.0
        for c, (members, mu) in enumerate(classes):
            cols = (chain.P[:, members] / chain.pi[members]).T
            total += mu @ (np.abs(cols - deflated[:, c]) @ chain.pi)
        return float(total / len(classes))

    @staticmethod
    def exact_f_and_variance(chain: DiscreteChain, labels=None):
        """
        Per-state integrand f(i) = (1/L) sum_c sum_ab mu_c(a) mu_c(b) |P_ia/pi_a - P_ib/pi_b|.

        Returns:
            (f, Var_pi(f), E_pi(f))
        """
        _, classes = _classes(chain, labels)
        f = np.zeros(chain.n_states)
        for members, mu in classes:
            f += _pair_mean(chain.P[:, members] / chain.pi[members], mu)
        f /= len(classes)
        mean = float(chain.pi @ f)
        return f, float(chain.pi @ (f - mean) ** 2), mean

    @staticmethod
    def effective_f(chain: DiscreteChain, labels=None) -> np.ndarray:
        """f_L(c): the integrand built from p_L(c, .) instead of p(x, .)."""
        _, classes = _classes(chain, labels)
        lumped = DiscreteOracleService.effective_lumped_kernel(chain, labels)
        f_l = np.zeros(len(classes))
        for members, mu in classes:
            f_l += _pair_mean(lumped[:, members] / chain.pi[members], mu)
        return f_l / len(classes)

    @staticmethod
    def effective_f_variance(chain: DiscreteChain, labels=None):
        """(Var_pi(f_L o xi), Var_pibar(f_L)) computed by separate sums."""
        labels, _ = _classes(chain, labels)
        f_l = DiscreteOracleService.effective_f(chain, labels)
        lifted = f_l[labels]
        var_states = float(chain.pi @ (lifted - chain.pi @ lifted) ** 2)
        pi_bar = DiscreteOracleService.effective_invariant_density(chain, labels)
        var_classes = float(pi_bar @ (f_l - pi_bar @ f_l) ** 2)
        return var_states, var_classes

    @staticmethod
    def fit_variance_order(block: DiscreteChain, epsilons: Sequence[float]) -> Dict:
        """
        Perturbation order of the variance gap |Var(f) - Var(f_L)| and of the
        distance ||f - f_L o xi||_L1(pi) that bounds it.

        On a reversible block chain f and f_L vanish, so both are exactly
        linear in epsilon: the distance has slope 1, the variance gap slope 2.

        Returns:
            Dict with epsilons, gaps, distances, slope (of the gaps),
            distance_slope and the fitted constant C = median(gap / epsilon)
        """
        epsilons = np.asarray(epsilons, dtype=float)
        gaps, distances = [], []
        for eps in epsilons:
            chain = DiscreteOracleService.perturbed_block_chain(block, eps)
            f, var_f, _ = DiscreteOracleService.exact_f_and_variance(chain)
            _, var_l = DiscreteOracleService.effective_f_variance(chain)
            f_l = DiscreteOracleService.effective_f(chain)[chain.labels]
            gaps.append(abs(var_f - var_l))
            distances.append(float(chain.pi @ np.abs(f - f_l)))
        gaps, distances = np.array(gaps), np.array(distances)
        slope, _ = np.polyfit(np.log(epsilons), np.log(gaps), 1)
        distance_slope, _ = np.polyfit(np.log(epsilons), np.log(distances), 1)
        return {
            'epsilons': epsilons,
            'gaps': gaps,
            'distances': distances,
            'slope': float(slope),
            'distance_slope': float(distance_slope),
            'constant': float(np.median(gaps / epsilons))
        }

    # ------------------------------------------------------------ helpers

    @staticmethod
    def semigroup_check(chain: DiscreteChain, power: int = 2) -> float:
        """Max |lambda(P^k) - lambda(P)^k| over the reversibilized spectrum."""
        root = np.sqrt(chain.pi)

        def spectrum(P):
            S = root[:, None] * P / root[None, :]
            return np.sort(eigvalsh((S + S.T) / 2.0))

        single = spectrum(chain.P)
        powered = spectrum(np.linalg.matrix_power(chain.P, power))
        return float(np.max(np.abs(np.sort(single ** power) - powered)))

    @staticmethod
    def label_coordinate(chain: DiscreteChain) -> ReactionCoordinate:
        """
        Label function of a geometry-backed chain as a custom coordinate.

        The range (-0.5, L - 0.5) puts the midpoints of an L-level grid on the
        integer labels; level samples are cell centres drawn from mu_z.
        """
        geometry = chain.cell_geometry
        if geometry is None or chain.labels is None:
            raise DomainError("label coordinate needs a labelled chain with cell geometry")
        centres = geometry.centres()
        _, classes = _classes(chain, None)

        def value(x):
            return chain.labels[geometry.locate(x)].astype(float)

        def gradient(x):
            return np.zeros(np.asarray(x).shape)

        def sampler(z: float, n: int, seed: int) -> LevelSetSample:
            c = int(round(z))
            if not 0 <= c < len(classes):
                raise EmptyLabelClassError(c)
            members, mu = classes[c]
            drawn = stream(seed).choice(members, size=n, p=mu)
            return LevelSetSample(float(c), centres[drawn], np.full(n, 1.0 / n))

        return ReactionCoordinate(
            "label", RcKind.CUSTOM, geometry.dim, value, gradient, (-0.5, len(classes) - 0.5), sampler=sampler
        )

    @staticmethod
    def stationary_sampler(chain: DiscreteChain):
        """Cell centres of pi-distributed states."""
        centres = chain.cell_geometry.centres()

        def sample(m: int, seed: int) -> np.ndarray:
            return centres[stream(seed).choice(chain.n_states, size=m, p=chain.pi)]
        return sample
