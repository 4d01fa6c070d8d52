"""
Oracle suite: exact identities on random reversible chains, the variance
identities on block chains and their perturbations, and consistency of the
Monte Carlo estimators on a discretized torus kernel.
"""

import logging
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd

from cli.experiments.base import RunContext
from cli.schemas.experiments import OracleSuiteParams
from core.kernels import TorusKernelSpec
from core.loss import LossQuadConfig, LossService
from core.oracle import DiscreteOracleService
from core.rng import derive_seed, stream

logger = logging.getLogger(__name__)

MIN_STATES = 6
SANDWICH_TOL = 1e-12


def _sandwich(constructive: float, differential: float) -> bool:
    return constructive - SANDWICH_TOL <= differential <= 2.0 * constructive + SANDWICH_TOL


def _random_chains(params: OracleSuiteParams, ctx: RunContext) -> pd.DataFrame:
    rows = []
    for i in range(params.n_chains):
        rng = stream(ctx.seed, i)
        n_states = int(rng.integers(MIN_STATES, params.max_states + 1))
        n_labels = int(rng.integers(2, min(params.max_labels, n_states) + 1))
        chain = DiscreteOracleService.random_reversible_chain(n_states, n_labels, derive_seed(ctx.seed, i))
        losses = DiscreteOracleService.exact_losses(chain)
        rows.append({
            'chain': i,
            'n_states': n_states,
            'n_labels': n_labels,
            **losses,
            'constructive_gap': abs(losses['lump_constructive'] - losses['deflat_constructive']),
            'lump_sandwich': _sandwich(losses['lump_constructive'], losses['lump_differential']),
            'deflat_sandwich': _sandwich(losses['deflat_constructive'], losses['deflat_differential']),
            'detailed_balance_error': chain.detailed_balance_error(),
            'semigroup_error': DiscreteOracleService.semigroup_check(chain)
        })

    frame = pd.DataFrame(rows)
    logger.info(
        "%d chains: max constructive gap %.3g, sandwich holds on %d/%d (L) and %d/%d (D)",
        len(frame), frame['constructive_gap'].max(),
        int(frame['lump_sandwich'].sum()), len(frame), int(frame['deflat_sandwich'].sum()), len(frame)
    )
    return frame


def _block_variances(params: OracleSuiteParams, ctx: RunContext) -> pd.DataFrame:
    block = DiscreteOracleService.block_chain(params.block_sizes, ctx.seed)
    rows = []
    for eps in [0.0] + list(params.epsilons):
        chain = DiscreteOracleService.perturbed_block_chain(block, eps)
        _, var_f, mean_f = DiscreteOracleService.exact_f_and_variance(chain)
        var_states, var_classes = DiscreteOracleService.effective_f_variance(chain)
        rows.append({
            'epsilon': eps,
            'mean_f': mean_f,
            'var_f': var_f,
            'var_fl_states': var_states,
            'var_fl_classes': var_classes,
            'identity_error': abs(var_states - var_classes),
            'variance_gap': abs(var_f - var_states)
        })
    return pd.DataFrame(rows)


def _epsilon_sweep(params: OracleSuiteParams, ctx: RunContext) -> pd.DataFrame:
    block = DiscreteOracleService.block_chain(params.block_sizes, ctx.seed)
    fit = DiscreteOracleService.fit_variance_order(block, params.epsilons)
    logger.info(
        "order in epsilon: distance slope %.3f, variance gap slope %.3f, constant %.3g",
        fit['distance_slope'], fit['slope'], fit['constant']
    )
    return pd.DataFrame({
        'epsilon': fit['epsilons'],
        'gap': fit['gaps'],
        'distance': fit['distances'],
        'slope': fit['slope'],
        'distance_slope': fit['distance_slope'],
        'constant': fit['constant']
    })


def _consistency(params: OracleSuiteParams, ctx: RunContext):
    spec = TorusKernelSpec(n=params.torus_n, tau=params.torus_tau, sigma=params.torus_sigma)
    chain = DiscreteOracleService.discretize_torus_kernel(spec, params.torus_k)
    exact = DiscreteOracleService.exact_losses(chain)

    access = LossService.chain_access(chain)
    rc = DiscreteOracleService.label_coordinate(chain)
    sampler = DiscreteOracleService.stationary_sampler(chain)
    # one level per label class
    quad = LossQuadConfig(seed=ctx.seed, **params.quad.model_dump(exclude={'n_z'}), n_z=params.torus_k)
    quadrature = LossService.level_set_quadrature(rc, quad, access.stationary, ctx.threads)

    estimates = {
        'lump_differential': LossService.loss_lump_differential(rc, access, quad, ctx.threads, quadrature),
        'lump_constructive': LossService.loss_lump_constructive(rc, access, quad, ctx.threads, quadrature),
        'deflat_differential': LossService.loss_deflat(rc, access, sampler, quad, ctx.threads, quadrature),
        'deflat_constructive': LossService.loss_deflat_constructive(
            rc, access, sampler, quad, ctx.threads, quadrature
        ),
    }
    rows = []
    for name, estimate in estimates.items():
        reference = exact[name]
        rows.append({
            'loss': name,
            'exact': reference,
            'estimate': estimate.value,
            'std_error': estimate.std_error,
            'rel_error': abs(estimate.value - reference) / reference if reference > 0 else np.nan,
            'M': estimate.m
        })
        logger.info("%s: exact %.6g, estimate %.6g", name, reference, estimate.value)

    curve = LossService.mc_error_curve(
        rc, access, sampler, params.m_list, params.n_trials, ctx.seed, quad=quad, max_workers=ctx.threads
    )
    logger.info("outer Monte Carlo error rate on the chain: %.3f", LossService.error_rate(curve))
    return pd.DataFrame(rows), curve


def run_oracle_suite(params: OracleSuiteParams, ctx: RunContext) -> List[Path]:
    consistency, curve = _consistency(params, ctx)
    return [
        ctx.write_csv(_random_chains(params, ctx), "oracle_chains.csv"),
        ctx.write_csv(_block_variances(params, ctx), "oracle_block.csv"),
        ctx.write_csv(_epsilon_sweep(params, ctx), "oracle_epsilon.csv"),
        ctx.write_csv(consistency, "oracle_consistency.csv"),
        ctx.write_csv(curve, "oracle_mc_error.csv"),
    ]
