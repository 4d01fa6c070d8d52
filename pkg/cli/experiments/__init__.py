"""
Experiment runners. Each runner takes its validated parameters and a RunContext
and returns the paths it wrote.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List

from cli.experiments import circular, oracle, torus
from cli.experiments.base import RunContext


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    budget_minutes: int
    runner: Callable[..., List[Path]]


EXPERIMENTS = {e.name: e for e in [
    Experiment("lumpability-decay", "K-norm lumpability distance against sigma on the torus", 2,
               torus.run_lumpability_decay),
    Experiment("transition-density", "Torus transition density from one start point against sigma", 1,
               torus.run_transition_density),
    Experiment("loss-landscape", "Differential deflatability loss of theta_alpha over alpha", 15,
               torus.run_loss_landscape),
    Experiment("variance-study", "Integrand f and its variance for linear torus coordinates", 15,
               torus.run_variance_study),
    Experiment("mc-error", "Relative Monte Carlo error of the deflatability loss against M", 20,
               torus.run_mc_error),
    Experiment("circular-loss", "Deflatability loss of phi and r for the circular system", 30,
               circular.run_circular_loss),
    Experiment("spectrum", "Leading transfer-operator eigenvalues of the circular system", 10,
               circular.run_spectrum),
    Experiment("oracle-suite", "Exact identities and estimator consistency on finite chains", 10,
               oracle.run_oracle_suite),
]}

__all__ = ["EXPERIMENTS", "Experiment", "RunContext"]
