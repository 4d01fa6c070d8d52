"""
Experiments on the analytic torus system: lumpability decay, transition
densities, the loss landscape of theta_alpha, the integrand variance study
and Monte Carlo error curves.
"""

import logging
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd

from cli.experiments.base import RunContext
from cli.schemas.experiments import (
    LossLandscapeParams,
    LumpabilityDecayParams,
    McErrorParams,
    TransitionDensityParams,
    VarianceStudyParams,
)
from core.coordinates import ReactionCoordinateService
from core.kernels import TWO_PI, TorusKernelService, TorusKernelSpec, torus_grid
from core.loss import MC_ERROR_COLUMNS, LossService

logger = logging.getLogger(__name__)


def _sigma_label(sigma) -> str:
    return str(getattr(sigma, "value", sigma))


def _test_coordinates():
    """(n, coordinate) pairs of the variance study."""
    return [
        (2, ReactionCoordinateService.linear_rc((1.0, 1.0), name="x1+x2")),
        (3, ReactionCoordinateService.linear_rc((1.0, 1.0, 1.0), name="x1+x2+x3")),
        (2, ReactionCoordinateService.linear_rc_alpha(0.0)),
    ]


def run_lumpability_decay(params: LumpabilityDecayParams, ctx: RunContext) -> List[Path]:
    rows, fits = [], []
    for n in params.dims:
        for sigma in params.sigmas:
            spec = TorusKernelSpec(n=n, tau=params.tau, sigma=sigma)
            distance = TorusKernelService.lumpability_distance(spec, nodes=params.nodes)
            rows.append({
                'n': n,
                'tau': params.tau,
                'sigma': sigma,
                'distance': distance,
                'scaled_distance': distance / TWO_PI
            })

        tail = [s for s in params.sigmas if s >= params.fit_from]
        if len(tail) >= 2:
            fit = TorusKernelService.lumpability_decay_fit(n, params.tau, tail, nodes=params.nodes)
            fits.append({
                'n': n,
                'tau': params.tau,
                'sigma_min': min(tail),
                'sigma_max': max(tail),
                'slope': fit['slope'],
                'intercept': fit['intercept'],
                'expected_slope': fit['expected_slope']
            })
            logger.info("n=%d: fitted slope %.4f, expected %.4f", n, fit['slope'], fit['expected_slope'])
        else:
            logger.warning("n=%d: fewer than two sigmas >= %g, no decay fit", n, params.fit_from)

    return [
        ctx.write_csv(pd.DataFrame(rows), "lumpability_decay.csv"),
        ctx.write_csv(pd.DataFrame(fits), "lumpability_fit.csv"),
    ]


def run_transition_density(params: TransitionDensityParams, ctx: RunContext) -> List[Path]:
    points, weight = torus_grid(2, params.nodes)
    start = np.asarray(params.start, dtype=float)
    frames = []
    for sigma in params.sigmas:
        spec = TorusKernelSpec(n=2, tau=params.tau, sigma=sigma)
        density = TorusKernelService.kernel_density(spec, start, points)
        lumped = TorusKernelService.effective_density_pL(spec, start[0], points)
        logger.info("sigma=%s: mass %.6f, peak %.4g", _sigma_label(sigma), density.sum() * weight, density.max())
        frames.append(pd.DataFrame({
            'sigma': _sigma_label(sigma),
            'y1': points[:, 0],
            'y2': points[:, 1],
            'density': density,
            'lumped_density': lumped,
        }))

    return [ctx.write_csv(pd.concat(frames, ignore_index=True), "transition_density.csv")]


def run_loss_landscape(params: LossLandscapeParams, ctx: RunContext) -> List[Path]:
    quad = params.quad.config(ctx.seed)
    sampler = TorusKernelService.uniform_sampler(2)
    alphas = np.linspace(-np.pi / 2, np.pi / 2, params.n_alpha)

    rows = []
    for sigma in params.sigmas:
        access = LossService.analytic_access(TorusKernelSpec(n=2, tau=params.tau, sigma=sigma))
        for alpha in alphas:
            rc = ReactionCoordinateService.linear_rc_alpha(float(alpha))
            estimate = LossService.loss_deflat(rc, access, sampler, quad, max_workers=ctx.threads)
            rows.append(LossService.loss_row(rc, estimate, sigma, params.tau, ctx.seed))
        best = min(rows[-len(alphas):], key=lambda row: row['loss'])
        logger.info("sigma=%s: minimum loss %.4g at alpha=%.4f", _sigma_label(sigma), best['loss'], best['param'])

    return [ctx.write_csv(LossService.results_frame(rows), "loss_landscape.csv")]


def run_variance_study(params: VarianceStudyParams, ctx: RunContext) -> List[Path]:
    quad = params.quad.config(ctx.seed)
    rows, samples = [], []
    for n, rc in _test_coordinates():
        sampler = TorusKernelService.uniform_sampler(n)
        for sigma in params.sigmas:
            access = LossService.analytic_access(TorusKernelSpec(n=n, tau=params.tau, sigma=sigma))
            estimate = LossService.loss_deflat(rc, access, sampler, quad, max_workers=ctx.threads)
            rows.append(LossService.loss_row(rc, estimate, sigma, params.tau, ctx.seed))

            frame = pd.DataFrame(estimate.points, columns=[f"x{i + 1}" for i in range(n)])
            frame.insert(0, 'sigma', _sigma_label(sigma))
            frame.insert(0, 'rc_id', rc.name)
            frame['f'] = estimate.per_sample_f
            samples.append(frame)
            logger.info("%s sigma=%s: Var[f]=%.4g", rc.name, _sigma_label(sigma), rows[-1]['var_f'])

    f_samples = pd.concat(samples, ignore_index=True)
    f_samples = f_samples[['rc_id', 'sigma', 'x1', 'x2', 'x3', 'f']]
    return [
        ctx.write_csv(LossService.results_frame(rows), "variance_study.csv"),
        ctx.write_csv(f_samples, "f_samples.csv"),
    ]


def run_mc_error(params: McErrorParams, ctx: RunContext) -> List[Path]:
    quad = params.quad.config(ctx.seed)
    curves, rates = [], []
    for n in params.dims:
        rc = ReactionCoordinateService.linear_rc(np.ones(n), name="+".join(f"x{i + 1}" for i in range(n)))
        sampler = TorusKernelService.uniform_sampler(n)
        for sigma in params.sigmas:
            access = LossService.analytic_access(TorusKernelSpec(n=n, tau=params.tau, sigma=sigma))
            frame = LossService.mc_error_curve(
                rc, access, sampler, params.m_list, params.n_trials, ctx.seed,
                quad=quad, max_workers=ctx.threads
            )
            slope = LossService.error_rate(frame)
            attrs = dict(frame.attrs)
            logger.info("n=%d sigma=%s: error rate %.3f", n, _sigma_label(sigma), slope)

            frame.insert(0, 'sigma', _sigma_label(sigma))
            frame.insert(0, 'rc_id', rc.name)
            frame.insert(0, 'n', n)
            curves.append(frame)
            rates.append({
                'n': n,
                'rc_id': rc.name,
                'sigma': _sigma_label(sigma),
                'slope': slope,
                'reference': attrs['reference'],
                'reference_std_error': attrs['reference_std_error'],
                'reference_m': attrs['reference_m']
            })

    curve_frame = pd.concat(curves, ignore_index=True)[['n', 'rc_id', 'sigma'] + MC_ERROR_COLUMNS]
    return [
        ctx.write_csv(curve_frame, "mc_error.csv"),
        ctx.write_csv(pd.DataFrame(rates), "mc_error_rate.csv"),
    ]
