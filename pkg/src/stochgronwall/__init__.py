"""Monte-Carlo verification of stochastic Gronwall and moment inequalities for SDEs."""
from .bounds import BoundValue
from .constants import sup_constant, tail_integral
from .harness import ExperimentSpec, VerificationReport, run_experiment, run_suite
from .models import catalog_get
from .simulate import SimConfig, simulate, simulate_coupled, simulate_perturbed

__all__ = [
    "BoundValue", "ExperimentSpec", "SimConfig", "VerificationReport", "catalog_get",
    "run_experiment", "run_suite", "simulate", "simulate_coupled", "simulate_perturbed",
    "sup_constant", "tail_integral",
]
