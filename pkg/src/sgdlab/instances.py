"""Named benchmark instances."""
from __future__ import annotations

import numpy as np

from .models import DataAtom, ObjectiveModel


def q1() -> ObjectiveModel:
    """One-dimensional least squares, ``Sigma = 1``, ``C = 1``, ``theta* = 0``."""
    return ObjectiveModel("least_squares", [DataAtom((1.0,), 1.0, 0.5), DataAtom((1.0,), -1.0, 0.5)],
                          name="q1")


def l1() -> ObjectiveModel:
    """One-dimensional regularized logistic regression with asymmetric labels."""
    return ObjectiveModel("logistic", [DataAtom((1.0,), 1.0, 0.7), DataAtom((1.0,), -1.0, 0.3)],
                          lam=0.1, name="l1")


def lms3() -> ObjectiveModel:
    """Three-dimensional least squares with five atoms."""
    X = np.array([[1.0, 0.0, 0.0],
                  [0.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0],
                  [0.6, -0.5, 0.4],
                  [-0.3, 0.7, 0.5]])
    y = np.array([0.5, -1.0, 0.8, 1.2, -0.4])
    w = np.array([0.25, 0.2, 0.2, 0.2, 0.15])
    return ObjectiveModel.from_arrays("least_squares", X, y, w, name="lms3")


def noiseless_quadratic(d: int = 2, seed: int = 0) -> ObjectiveModel:
    """Least squares whose labels are interpolated exactly, so the noise vanishes at the optimum."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(d + 2, d))
    theta = rng.normal(size=d)
    return ObjectiveModel.from_arrays("least_squares", X, X @ theta, name="noiseless")


def random_least_squares(d: int, n_atoms: int, rng: np.random.Generator) -> ObjectiveModel:
    X = rng.normal(size=(n_atoms, d))
    y = rng.normal(size=n_atoms)
    w = rng.dirichlet(np.ones(n_atoms))
    return ObjectiveModel.from_arrays("least_squares", X, y, w, name="random-ls")


def random_logistic(d: int, n_atoms: int, rng: np.random.Generator, lam: float = 0.1) -> ObjectiveModel:
    X = rng.normal(size=(n_atoms, d))
    y = rng.choice([-1.0, 1.0], size=n_atoms)
    w = rng.dirichlet(np.ones(n_atoms))
    return ObjectiveModel.from_arrays("logistic", X, y, w, lam=lam, name="random-logistic")


BUILTIN = {"q1": q1, "l1": l1, "lms3": lms3, "noiseless": noiseless_quadratic}
