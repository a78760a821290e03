"""Constant step-size SGD as a Markov chain: simulation, stationary moments,
Richardson-Romberg extrapolation, coupling and gradient-flow checks."""

__version__ = "0.1.0"

from .models import (DataAtom, ModelError, NoiseOracle, ObjectiveModel, exact_gradient,
                     exact_hessian, exact_third_derivative, load_model, noise_covariance,
                     solve_optimum, stochastic_gradient)
from .chain import ChainState, Trajectory, run_chain, run_decaying, sgd_step
from .extrapolate import RRScheme, rr2_combine, rr3_combine, run_rr

__all__ = [
    "DataAtom", "ModelError", "NoiseOracle", "ObjectiveModel", "exact_gradient", "exact_hessian",
    "exact_third_derivative", "load_model", "noise_covariance", "solve_optimum",
    "stochastic_gradient", "ChainState", "Trajectory", "run_chain", "run_decaying", "sgd_step",
    "RRScheme", "rr2_combine", "rr3_combine", "run_rr", "__version__",
]
