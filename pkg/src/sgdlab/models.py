"""Strongly convex objectives over finite discrete data distributions.

Every expectation over the data law is an exact weighted sum over atoms, so the
gradient, Hessian, third derivative, noise covariance and optimum are all
available in closed form (up to the Newton solve for logistic regression).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

LEAST_SQUARES = "least_squares"
LOGISTIC = "logistic"
KINDS = (LEAST_SQUARES, LOGISTIC)

_KIND_ALIASES = {
    "least_squares": LEAST_SQUARES,
    "leastsquares": LEAST_SQUARES,
    "lms": LEAST_SQUARES,
    "logistic": LOGISTIC,
    "logisticl2": LOGISTIC,
    "logistic_l2": LOGISTIC,
}


class ModelError(ValueError):
    """Raised when a model description violates its invariants."""


@dataclass(frozen=True)
class DataAtom:
    x: tuple[float, ...]
    y: float
    w: float


class ObjectiveModel:
    """Objective ``f(theta) = E[loss(X, Y, theta)] + lam/2 |theta|^2``.

    ``kind`` is ``"least_squares"`` (loss ``(<x, theta> - y)^2 / 2``) or
    ``"logistic"`` (loss ``log(1 + exp(-y <x, theta>))``). The regulariser is
    part of every per-sample loss, so the gradient noise carries no ``lam``
    term. Instances are immutable; derived constants are computed lazily and
    cached.
    """

    def __init__(self, kind: str, atoms: Sequence[DataAtom], lam: float = 0.0,
                 radius: float | None = None, name: str = ""):
        kind = _KIND_ALIASES.get(str(kind).lower().replace("-", "_"), None)
        if kind is None:
            raise ModelError(f"unknown model kind, expected one of {KINDS}")
        if len(atoms) == 0:
            raise ModelError("a model needs at least one atom")
        X = np.array([a.x for a in atoms], dtype=float)
        if X.ndim != 2:
            raise ModelError("all atoms must have the same feature dimension")
        y = np.array([a.y for a in atoms], dtype=float)
        w = np.array([a.w for a in atoms], dtype=float)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
            raise ModelError("atoms must be finite")
        if np.any(w <= 0) or np.any(w > 1):
            raise ModelError("atom weights must lie in (0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ModelError(f"atom weights sum to {w.sum()!r}, expected 1")
        if lam < 0:
            raise ModelError("lam must be non-negative")
        if kind == LOGISTIC and lam <= 0:
            raise ModelError("logistic model needs lam > 0 for global strong convexity")
        norms = np.linalg.norm(X, axis=1)
        if radius is not None and np.any(norms > radius * (1 + 1e-12)):
            raise ModelError("an atom lies outside the declared radius")

        self.kind = kind
        self.atoms = tuple(atoms)
        self.lam = float(lam)
        self.name = name
        self.X = X
        self.y = y
        self.w = w
        self.d = X.shape[1]
        self.radius = float(norms.max()) if radius is None else float(radius)
        for arr in (self.X, self.y, self.w):
            arr.setflags(write=False)

        if kind == LEAST_SQUARES and self.lam == 0.0:
            if np.linalg.eigvalsh(self.sigma)[0] <= 0:
                raise ModelError("second-moment matrix is not positive definite")

    # construction helpers -------------------------------------------------

    @classmethod
    def from_arrays(cls, kind, X, y, w=None, lam=0.0, name=""):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        n = X.shape[0]
        w = np.full(n, 1.0 / n) if w is None else np.asarray(w, dtype=float).reshape(-1)
        atoms = [DataAtom(tuple(X[i]), float(y[i]), float(w[i])) for i in range(n)]
        return cls(kind, atoms, lam=lam, name=name)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return (f"<ObjectiveModel{label} kind={self.kind} d={self.d} "
                f"atoms={len(self.atoms)} lam={self.lam}>")

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def is_quadratic(self) -> bool:
        return self.kind == LEAST_SQUARES

    # second-moment quantities -----------------------------------------------

    @cached_property
    def sigma(self) -> np.ndarray:
        """Second-moment matrix ``E[X X^T]`` (label-weighted ``E[y^2 X X^T]`` for logistic)."""
        if self.kind == LOGISTIC:
            return np.einsum("n,ni,nj->ij", self.w * self.y**2, self.X, self.X)
        return np.einsum("n,ni,nj->ij", self.w, self.X, self.X)

    @cached_property
    def R2(self) -> float:
        """``max_i |x_i|^2``, the bounded-data constant used for step-size conventions."""
        return float(np.max(np.sum(self.X**2, axis=1)))

    @cached_property
    def L(self) -> float:
        """Smoothness constant of ``f``."""
        top = float(np.linalg.eigvalsh(self.sigma)[-1])
        if self.kind == LOGISTIC:
            return top / 4 + self.lam
        return top + self.lam

    @cached_property
    def L_sample(self) -> float:
        """Almost-sure co-coercivity constant of the per-sample gradients."""
        sq = np.sum(self.X**2, axis=1)
        if self.kind == LOGISTIC:
            return float(np.max(sq * self.y**2)) / 4 + self.lam
        return float(np.max(sq)) + self.lam

    @cached_property
    def mu(self) -> float:
        """Strong convexity constant (local, ``lambda_min f''(theta*)``, for logistic)."""
        return float(np.linalg.eigvalsh(self.hessian(self.theta_star))[0])

    @cached_property
    def mu_global(self) -> float:
        """A strong convexity constant valid on the whole space."""
        if self.kind == LOGISTIC:
            return self.lam
        return self.mu

    # function values and derivatives ---------------------------------------

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1:] != (self.d,):
            raise ValueError(f"theta has trailing dimension {theta.shape[-1:]} but d={self.d}")
        return theta

    def value(self, theta) -> np.ndarray | float:
        theta = self._check_theta(theta)
        t = theta @ self.X.T
        if self.kind == LOGISTIC:
            per = np.logaddexp(0.0, -self.y * t)
        else:
            per = 0.5 * (t - self.y) ** 2
        return per @ self.w + 0.5 * self.lam * np.sum(theta**2, axis=-1)

    def atom_gradients(self, theta) -> np.ndarray:
        """Per-atom gradients, shape ``(..., n_atoms, d)``."""
        theta = self._check_theta(theta)
        t = theta @ self.X.T
        if self.kind == LOGISTIC:
            s = -self.y * expit(-self.y * t)
        else:
            s = t - self.y
        return s[..., :, None] * self.X + self.lam * theta[..., None, :]

    def gradient(self, theta) -> np.ndarray:
        theta = self._check_theta(theta)
        t = theta @ self.X.T
        if self.kind == LOGISTIC:
            s = -self.y * expit(-self.y * t)
        else:
            s = t - self.y
        return (s * self.w) @ self.X + self.lam * theta

    def sample_gradients(self, theta, idx) -> np.ndarray:
        """Gradient of the loss of atom ``idx`` at ``theta``; broadcasts over leading axes."""
        x = self.X[idx]
        yy = self.y[idx]
        t = np.sum(x * theta, axis=-1)
        if self.kind == LOGISTIC:
            s = -yy * expit(-yy * t)
        else:
            s = t - yy
        return s[..., None] * x + self.lam * theta

    def hessian(self, theta) -> np.ndarray:
        theta = self._check_theta(theta)
        if self.kind == LOGISTIC:
            t = self.y * (self.X @ theta)
            c = self.w * self.y**2 * expit(t) * expit(-t)
            H = np.einsum("n,ni,nj->ij", c, self.X, self.X)
        else:
            H = self.sigma.copy()
        return H + self.lam * np.eye(self.d)

    def third_derivative(self, theta) -> np.ndarray:
        theta = self._check_theta(theta)
        if self.kind == LEAST_SQUARES:
            return np.zeros((self.d,) * 3)
        t = self.y * (self.X @ theta)
        s = expit(t)
        c = self.w * self.y**3 * s * (1 - s) * (1 - 2 * s)
        return np.einsum("n,ni,nj,nk->ijk", c, self.X, self.X, self.X)

    def noise_covariance(self, theta) -> np.ndarray:
        """``E[eps(theta) eps(theta)^T]``; broadcasts over leading axes of ``theta``."""
        G = self.atom_gradients(theta)
        mean = np.einsum("n,...ni->...i", self.w, G)
        second = np.einsum("n,...ni,...nj->...ij", self.w, G, G)
        C = second - mean[..., :, None] * mean[..., None, :]
        return 0.5 * (C + np.swapaxes(C, -1, -2))

    # optimum and noise constants -------------------------------------------

    @cached_property
    def theta_star(self) -> np.ndarray:
        theta = solve_optimum(self)
        theta.setflags(write=False)
        return theta

    @cached_property
    def f_star(self) -> float:
        return float(self.value(self.theta_star))

    def tau(self, p: float = 2) -> float:
        """``E[|eps(theta*)|^p]^(1/p)``."""
        eps = self.atom_gradients(self.theta_star)
        norms = np.linalg.norm(eps, axis=1)
        return float((self.w @ norms**p) ** (1.0 / p))

    @cached_property
    def xi_covariance(self) -> np.ndarray:
        """``E[xi xi^T]``, covariance of the gradient noise at the optimum."""
        return self.noise_covariance(self.theta_star)

    def constants(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "n_atoms": self.n_atoms,
            "lam": self.lam,
            "mu": self.mu,
            "mu_global": self.mu_global,
            "L": self.L,
            "L_sample": self.L_sample,
            "R2": self.R2,
            "tau2": self.tau(2),
            "theta_star": [float(v) for v in self.theta_star],
            "f_star": self.f_star,
        }


@dataclass(frozen=True)
class NoiseCovariance:
    C: np.ndarray
    at: np.ndarray

    def check(self, sym_tol=1e-12, psd_tol=1e-10):
        if np.max(np.abs(self.C - self.C.T)) > sym_tol:
            raise ModelError("noise covariance is not symmetric")
        if np.linalg.eigvalsh(self.C)[0] < -psd_tol:
            raise ModelError("noise covariance is not positive semidefinite")
        return self


class NoiseOracle:
    """Draws atoms by weight and returns per-sample gradients."""

    def __init__(self, model: ObjectiveModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self._cum = np.cumsum(model.w)
        self._cum[-1] = 1.0

    def draw(self, size=None):
        u = self.rng.random(size)
        return np.searchsorted(self._cum, u, side="right")

    def gradient(self, theta) -> np.ndarray:
        return self.model.sample_gradients(np.asarray(theta, dtype=float), self.draw())


def draw_atoms(model: ObjectiveModel, u: np.ndarray) -> np.ndarray:
    """Map uniforms in [0, 1) to atom indices by inverse CDF."""
    cum = np.cumsum(model.w)
    cum[-1] = 1.0
    return np.searchsorted(cum, u, side="right")


# functional interface ------------------------------------------------------

def exact_gradient(model: ObjectiveModel, theta) -> np.ndarray:
    return model.gradient(model._check_theta(theta))


def stochastic_gradient(model: ObjectiveModel, noise: NoiseOracle, theta) -> np.ndarray:
    return noise.gradient(model._check_theta(theta))


def exact_hessian(model: ObjectiveModel, theta) -> np.ndarray:
    return model.hessian(theta)


def exact_third_derivative(model: ObjectiveModel, theta) -> np.ndarray:
    return model.third_derivative(theta)


def noise_covariance(model: ObjectiveModel, theta) -> NoiseCovariance:
    theta = model._check_theta(theta)
    return NoiseCovariance(model.noise_covariance(theta), theta.copy()).check()


def solve_optimum(model: ObjectiveModel, max_iter: int = 200) -> np.ndarray:
    """Minimiser of ``f``: direct solve for least squares, damped Newton for logistic."""
    d = model.d
    if model.kind == LEAST_SQUARES:
        H = model.sigma + model.lam * np.eye(d)
        b = np.einsum("n,ni->i", model.w * model.y, model.X)
        theta = np.linalg.solve(H, b)
        # one step of iterative refinement
        theta = theta - np.linalg.solve(H, model.gradient(theta))
        return theta

    theta = np.zeros(d)
    f = model.value(theta)
    for _ in range(max_iter):
        g = model.gradient(theta)
        if np.linalg.norm(g) <= 1e-13 * (1 + np.linalg.norm(theta)):
            return theta
        step = np.linalg.solve(model.hessian(theta), g)
        t = 1.0
        while True:
            cand = theta - t * step
            fc = model.value(cand)
            if fc <= f - 1e-4 * t * (g @ step) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            # the line search stalls only at round-off level; accept the full step
            cand = theta - step
            fc = model.value(cand)
        theta, f = cand, fc
    g = model.gradient(theta)
    if np.linalg.norm(g) <= 1e-12 * (1 + np.linalg.norm(theta)):
        return theta
    raise ModelError(f"Newton did not converge in {max_iter} iterations (|grad|={np.linalg.norm(g):.3e})")


# model description files -----------------------------------------------------

def model_from_dict(raw: dict, name: str = "") -> ObjectiveModel:
    try:
        kind = raw["kind"]
        raw_atoms = raw["atoms"]
    except KeyError as err:
        raise ModelError(f"model description is missing {err.args[0]!r}") from None
    lam = float(raw.get("lambda", raw.get("lam", 0.0)))
    atoms = []
    for i, a in enumerate(raw_atoms):
        try:
            x = a["x"]
            x = (float(x),) if isinstance(x, (int, float)) else tuple(float(v) for v in x)
            atoms.append(DataAtom(x, float(a["y"]), float(a["w"])))
        except (KeyError, TypeError, ValueError) as err:
            raise ModelError(f"atom {i} is malformed: {err}") from None
    model = ObjectiveModel(kind, atoms, lam=lam, radius=raw.get("radius"), name=name)
    if "d" in raw and int(raw["d"]) != model.d:
        raise ModelError(f"declared d={raw['d']} but atoms have dimension {model.d}")
    return model


def load_model(path) -> ObjectiveModel:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ModelError(f"{path}: {err}") from None
    model = model_from_dict(raw, name=raw.get("name", path.stem))
    model.theta_star  # fail early on ill-posed models
    return model


def model_to_toml(model: ObjectiveModel) -> str:
    def num(v):
        return repr(float(v))

    lines = []
    if model.name:
        lines.append(f'name = "{model.name}"')
    lines += [f'kind = "{model.kind}"', f"d = {model.d}", f"lambda = {num(model.lam)}", ""]
    for a in model.atoms:
        lines += ["[[atoms]]", "x = [" + ", ".join(num(v) for v in a.x) + "]",
                  f"y = {num(a.y)}", f"w = {num(a.w)}", ""]
    return "\n".join(lines)


def check_cocoercivity(model: ObjectiveModel, rng: np.random.Generator, n_pairs=10_000,
                       scale=3.0, slack=1e-9) -> float:
    """Worst violation of ``L <g_i(a) - g_i(b), a - b> >= |g_i(a) - g_i(b)|^2`` over random pairs."""
    a = model.theta_star + scale * rng.standard_normal((n_pairs, model.d))
    b = model.theta_star + scale * rng.standard_normal((n_pairs, model.d))
    ga = model.atom_gradients(a)
    gb = model.atom_gradients(b)
    diff = ga - gb
    lhs = model.L_sample * np.einsum("pni,pi->pn", diff, a - b)
    rhs = np.sum(diff**2, axis=-1)
    return float(np.max(rhs - lhs - slack * (1 + rhs)))


__all__ = [
    "DataAtom", "ObjectiveModel", "NoiseOracle", "NoiseCovariance", "ModelError",
    "LEAST_SQUARES", "LOGISTIC", "exact_gradient", "stochastic_gradient", "exact_hessian",
    "exact_third_derivative", "noise_covariance", "solve_optimum", "load_model",
    "model_from_dict", "model_to_toml", "check_cocoercivity", "draw_atoms",
]
