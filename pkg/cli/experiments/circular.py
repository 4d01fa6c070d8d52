"""
Experiments on the five-well circular potential: deflatability loss of the
polar angle and radius from burst simulations, and the leading Ulam spectrum.
"""

import logging
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd

from cli.experiments.base import RunContext
from cli.schemas.experiments import CircularLossParams, SpectrumParams
from core.coordinates import ReactionCoordinateService
from core.dynamics import LangevinService, SdeConfig, circular_potential
from core.loss import LossService
from core.spectral import CLUSTER_SIZE, TransferOperatorService

logger = logging.getLogger(__name__)


def run_circular_loss(params: CircularLossParams, ctx: RunContext) -> List[Path]:
    quad = params.quad.config(ctx.seed)
    coordinates = [ReactionCoordinateService.polar_rc("angle"), ReactionCoordinateService.polar_rc("radius")]

    rows = []
    for sigma in params.sigmas:
        potential = circular_potential(sigma)
        config = SdeConfig(beta=params.beta, dt=params.dt, tau=params.tau, seed=ctx.seed)
        access = LossService.empirical_access(
            potential, config, params.n_replicas,
            bandwidth=params.bandwidth, grid_nodes=params.grid_nodes, smoothed=params.smoothed_ratio
        )

        def sampler(m: int, seed: int, potential=potential) -> np.ndarray:
            return LangevinService.sample_stationary(potential, params.beta, m, seed)

        for rc in coordinates:
            estimate = LossService.loss_deflat(rc, access, sampler, quad, max_workers=ctx.threads)
            rows.append(LossService.loss_row(rc, estimate, sigma, params.tau, ctx.seed))
            logger.info(
                "sigma=%g %s: loss %.4g +- %.2g", sigma, rc.name, estimate.value, estimate.std_error
            )

    return [ctx.write_csv(LossService.results_frame(rows), "circular_loss.csv")]


def run_spectrum(params: SpectrumParams, ctx: RunContext) -> List[Path]:
    written, summary = [], []
    for sigma in params.sigmas:
        potential = circular_potential(sigma)
        config = SdeConfig(beta=params.beta, dt=params.dt, tau=params.tau, seed=ctx.seed)
        model = TransferOperatorService.ulam_estimate(
            potential, config, params.grid_k, params.samples_per_cell, max_workers=ctx.threads
        )
        spectrum = TransferOperatorService.leading_spectrum(model, params.k_eigs)
        report = TransferOperatorService.gap_report(spectrum)

        statistic = TransferOperatorService.cluster_gap_statistic(spectrum, CLUSTER_SIZE)
        wells = TransferOperatorService.ring_well_labels(model.centres)
        constancy = TransferOperatorService.well_constancy(
            spectrum, wells, model.stationary_weights
        )[:CLUSTER_SIZE - 1]
        summary.append({
            'sigma': sigma,
            'tau': params.tau,
            'active_cells': model.n_active,
            'max_escaped': float(model.escaped.max()),
            'largest_gap': report.attrs['largest_gap'],
            'cluster_gap_statistic': statistic,
            'cluster_gap': TransferOperatorService.has_cluster_gap(spectrum, CLUSTER_SIZE),
            'max_well_constancy': float(constancy.max())
        })
        logger.info("sigma=%g: cluster gap statistic %.3f", sigma, statistic)

        written.append(ctx.write_csv(
            TransferOperatorService.spectrum_frame(spectrum), f"spectrum_sigma{sigma:g}.csv"
        ))
        written.append(ctx.write_csv(report, f"gaps_sigma{sigma:g}.csv"))
        written.append(ctx.write_csv(
            TransferOperatorService.eigenvector_frame(spectrum), f"eigenvectors_sigma{sigma:g}.csv"
        ))

    written.append(ctx.write_csv(pd.DataFrame(summary), "spectrum_summary.csv"))
    return written
