"""
Ulam discretization of the transfer operator and its leading spectrum.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy.linalg import eigh

from core.dynamics import LangevinService, Potential, SdeConfig, midpoint_grid
from core.errors import DomainError
from core.oracle import CellGeometry, DiscreteChain
from core.parallel import ordered_map
from core.rng import stream

logger = logging.getLogger(__name__)

ULAM_GRID = 48
SAMPLES_PER_CELL = 100
LAUNCH_MASS = 1e-9
MASS_SUBCELLS = 4
CLUSTER_SIZE = 5
CLUSTER_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class UlamModel:
    """
    Row-stochastic transition matrix between the active cells of a grid.

    `active` flags cells of the full k^d grid that carry the spectrum; all
    other arrays are indexed by active cell.
    """
    geometry: CellGeometry
    active: np.ndarray
    counts: np.ndarray
    matrix: np.ndarray
    stationary_weights: np.ndarray
    escaped: np.ndarray
    tau: float

    @property
    def centres(self) -> np.ndarray:
        return self.geometry.centres()[self.active]

    @property
    def n_active(self) -> int:
        return int(self.active.sum())


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    lag: float
    centres: Optional[np.ndarray] = None


class TransferOperatorService:

    @staticmethod
    def cell_masses(potential: Potential, beta: float, geometry: CellGeometry) -> np.ndarray:
        """Gibbs mass of every cell from a sub-grid of MASS_SUBCELLS^d points per cell."""
        fine, volume = midpoint_grid(geometry.array, geometry.k * MASS_SUBCELLS)
        density = LangevinService.gibbs_density(potential, beta, fine)
        n_cells = geometry.k ** geometry.dim
        return np.bincount(geometry.locate(fine), weights=density * volume, minlength=n_cells)

    @staticmethod
    def ulam_estimate(
        potential: Potential,
        config: SdeConfig,
        grid_k: int = ULAM_GRID,
        samples_per_cell: int = SAMPLES_PER_CELL,
        seed: Optional[int] = None,
        max_workers: int = 1
    ) -> UlamModel:
        """
        Count tau-transitions between grid cells of the domain box.

        Cells with Gibbs mass below 1e-9 of the total are not launched. Each
        launched cell starts samples_per_cell bursts at uniform in-cell points
        whose counts are reweighted by pi(start) / mean pi(start). Endpoints
        leaving the box or landing in unlaunched cells are dropped and the row
        renormalized; a cell losing all its endpoints is excluded.
        """
        if grid_k < 4:
            raise DomainError(f"grid_k must be >= 4, got {grid_k}")
        if samples_per_cell < 10:
            raise DomainError(f"samples_per_cell must be >= 10, got {samples_per_cell}")
        seed = config.seed if seed is None else seed

        geometry = CellGeometry(box=tuple(map(tuple, potential.domain_box)), k=grid_k)
        n_cells = grid_k ** potential.dim
        masses = TransferOperatorService.cell_masses(potential, config.beta, geometry)
        launch = masses >= LAUNCH_MASS * masses.sum()
        width = (geometry.array[:, 1] - geometry.array[:, 0]) / grid_k
        lower = geometry.centres() - width / 2.0

        def run(cell: int):
            rng = stream(seed, cell)
            starts = lower[cell] + width * rng.random((samples_per_cell, potential.dim))
            weights = LangevinService.gibbs_density(potential, config.beta, starts)
            weights = weights / weights.mean()
            noise = rng.standard_normal((samples_per_cell, config.n_steps, potential.dim))
            endpoints = LangevinService.integrate(starts, potential, config, noise)
            inside = potential.contains(endpoints)
            row = np.bincount(geometry.locate(endpoints[inside]), weights=weights[inside], minlength=n_cells)
            return row, weights.sum()

        cells = np.flatnonzero(launch)
        results = ordered_map(run, list(cells), max_workers)
        counts = np.zeros((n_cells, n_cells))
        launched = np.zeros(n_cells)
        for cell, (row, total) in zip(cells, results):
            counts[cell] = row
            launched[cell] = total

        active = launch.copy()
        while True:
            kept = counts[np.ix_(active, active)].sum(axis=1)
            empty = np.flatnonzero(active)[kept <= 0]
            if empty.size == 0:
                break
            logger.warning("%d cell(s) lost every endpoint and are excluded", empty.size)
            active[empty] = False

        sub = counts[np.ix_(active, active)]
        kept = sub.sum(axis=1)
        escaped = 1.0 - kept / launched[active]
        if np.any(escaped > 0.5):
            logger.warning("%d cell(s) lost more than half of their endpoints", int(np.sum(escaped > 0.5)))
        logger.info("Ulam model on %d of %d cells, tau=%g", int(active.sum()), n_cells, config.tau)

        return UlamModel(
            geometry=geometry,
            active=active,
            counts=sub,
            matrix=sub / kept[:, None],
            stationary_weights=masses[active] / masses[active].sum(),
            escaped=escaped,
            tau=config.tau
        )

    @staticmethod
    def leading_spectrum(model: Union[UlamModel, DiscreteChain], k_eigs: int) -> Spectrum:
        """
        Top k_eigs eigenpairs of the reversibilized transition matrix.

        The flux F = (D P + P^T D) / 2 is symmetric; with D renormalized to the
        row sums of F, S = D^-1/2 F D^-1/2 has the same spectrum as D^-1 F
        and a unit leading eigenvalue.
        """
        if isinstance(model, DiscreteChain):
            P, weights, lag = model.P, model.pi, model.tau
            centres = model.cell_geometry.centres() if model.cell_geometry is not None else None
        else:
            P, weights, lag, centres = model.matrix, model.stationary_weights, model.tau, model.centres

        n = P.shape[0]
        if not 1 <= k_eigs <= n:
            raise DomainError(f"k_eigs={k_eigs} must lie in [1, {n}]")

        flux = (weights[:, None] * P + P.T * weights[None, :]) / 2.0
        d_eff = flux.sum(axis=1)
        root = np.sqrt(d_eff)
        S = flux / root[:, None] / root[None, :]
        values, vectors = eigh((S + S.T) / 2.0, subset_by_index=[n - k_eigs, n - 1])
        order = np.argsort(values)[::-1]
        values = values[order]
        vectors = vectors[:, order] / root[:, None]

        signs = np.sign(vectors[np.argmax(np.abs(vectors), axis=0), np.arange(k_eigs)])
        vectors = vectors * np.where(signs == 0, 1.0, signs)
        return Spectrum(eigenvalues=values, eigenvectors=vectors, lag=lag, centres=centres)

    @staticmethod
    def gap_report(spectrum: Spectrum) -> pd.DataFrame:
        """
        Gaps between consecutive eigenvalues.

        Columns are index, eigenvalue, implied_rate (-log(lambda)/lag), the
        ratio (1 - lambda_i)/(1 - lambda_i+1), the implied-rate ratio
        log(lambda_i)/log(lambda_i+1) and the raw difference. Nonpositive
        eigenvalues get no rate and are flagged. attrs['largest_gap'] is the
        index i maximizing lambda_i - lambda_i+1.
        """
        values = spectrum.eigenvalues
        if values.size < 2:
            raise DomainError("a gap report needs at least two eigenvalues")

        positive = values > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(positive, np.log(np.where(positive, values, 1.0)), np.nan)
            rate = -logs / spectrum.lag
            nxt = np.append(values[1:], np.nan)
            next_logs = np.append(logs[1:], np.nan)
            gap_ratio = (1.0 - values) / (1.0 - nxt)
            rate_ratio = logs / next_logs

        difference = values - nxt
        frame = pd.DataFrame({
            'index': np.arange(values.size),
            'eigenvalue': values,
            'implied_rate': rate,
            'gap_ratio': gap_ratio,
            'rate_ratio': rate_ratio,
            'difference': difference,
            'skipped': ~positive
        })
        if np.any(~positive):
            logger.info("%d nonpositive eigenvalue(s) skipped in rate ratios", int(np.sum(~positive)))
        frame.attrs['largest_gap'] = int(np.nanargmax(difference[:-1]))
        return frame

    @staticmethod
    def cluster_gap_statistic(spectrum: Spectrum, k: int = CLUSTER_SIZE) -> float:
        """
        Spread of the implied rates inside the k-member cluster against the
        jump to the rate after it.

        With kappa_i = -log(lambda_i) the statistic is
        (kappa_{k-1} / kappa_1) / (kappa_k / kappa_{k-1}); small values mean
        the cluster is tight compared to the gap that follows. For k = 2 it
        reduces to kappa_1 / kappa_2.
        """
        values = spectrum.eigenvalues
        if k < 2:
            raise DomainError(f"a cluster needs at least two members, got k={k}")
        if values.size <= k:
            raise DomainError(f"need more than {k} eigenvalues, got {values.size}")
        if values[k] <= 0:
            return 0.0
        if values[1] >= 1.0 or values[k - 1] <= 0:
            return float("inf")
        first, last, outside = -np.log(values[[1, k - 1, k]])
        return float((last / first) / (outside / last))

    @staticmethod
    def has_cluster_gap(spectrum: Spectrum, k: int = CLUSTER_SIZE, threshold: float = CLUSTER_THRESHOLD) -> bool:
        return TransferOperatorService.cluster_gap_statistic(spectrum, k) < threshold

    @staticmethod
    def ring_well_labels(
        centres: np.ndarray,
        n_wells: int = 5,
        max_angle: float = 0.3,
        max_radial: float = 0.2
    ) -> np.ndarray:
        """Well index of cells near the minima phi = pi/n + 2 pi k/n on the unit ring, -1 elsewhere."""
        phi = np.arctan2(centres[:, 1], centres[:, 0])
        r = np.hypot(centres[:, 0], centres[:, 1])
        spacing = 2.0 * np.pi / n_wells
        offset = phi - np.pi / n_wells
        nearest = np.round(offset / spacing)
        distance = np.abs(offset - nearest * spacing)
        labels = np.mod(nearest, n_wells).astype(int)
        return np.where((distance <= max_angle) & (np.abs(r - 1.0) <= max_radial), labels, -1)

    @staticmethod
    def well_constancy(spectrum: Spectrum, labels: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """
        Within-well std over between-well spread of each nontrivial eigenvector.

        Args:
            labels: Well index per cell, -1 for cells outside every well
            weights: Stationary cell weights

        Returns:
            One ratio per eigenvector after the first
        """
        wells = np.unique(labels[labels >= 0])
        if wells.size == 0:
            return np.full(spectrum.eigenvectors.shape[1] - 1, np.inf)
        ratios = []
        for i in range(1, spectrum.eigenvectors.shape[1]):
            v = spectrum.eigenvectors[:, i]
            means, stds = [], []
            for w in wells:
                members = labels == w
                mass = weights[members] / weights[members].sum()
                mean = mass @ v[members]
                means.append(mean)
                stds.append(np.sqrt(mass @ (v[members] - mean) ** 2))
            spread = np.ptp(means)
            ratios.append(max(stds) / spread if spread > 0 else np.inf)
        return np.array(ratios)

    @staticmethod
    def spectrum_frame(spectrum: Spectrum) -> pd.DataFrame:
        values = spectrum.eigenvalues
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = np.where(values > 0, -np.log(np.where(values > 0, values, 1.0)) / spectrum.lag, np.nan)
        return pd.DataFrame({'index': np.arange(values.size), 'eigenvalue': values, 'implied_rate': rate})

    @staticmethod
    def eigenvector_frame(spectrum: Spectrum) -> pd.DataFrame:
        """Cell centres and eigenvector values, one row per cell."""
        columns = {}
        if spectrum.centres is not None:
            for i in range(spectrum.centres.shape[1]):
                columns[f"x{i + 1}"] = spectrum.centres[:, i]
        for i in range(spectrum.eigenvectors.shape[1]):
            columns[f"v{i}"] = spectrum.eigenvectors[:, i]
        return pd.DataFrame(columns)
