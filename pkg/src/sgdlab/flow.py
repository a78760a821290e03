"""Gradient flow, its Poisson integral ``h_g`` and the weak-error check."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chain import Ensemble, check_step_size
from .models import ObjectiveModel
from .stationary import fit_loglog, ScalingFit
from .tensorops import lyapunov_sum


class FlowToleranceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObservableG:
    """A test function ``g`` with its value at the optimum.

    ``fn`` maps ``(..., d)`` to ``(..., k)``; scalar functions have ``k = 1``.
    """

    name: str
    fn: Callable
    g_star: np.ndarray

    def gap(self, theta):
        return self.fn(theta) - self.g_star


def make_g(model: ObjectiveModel, which, g_star=None) -> ObservableG:
    """``"id"``, ``"sqdist"``, ``"coord:j"`` or a scalar callable with ``g_star``."""
    if isinstance(which, ObservableG):
        return which
    ts = model.theta_star
    if callable(which):
        if g_star is None:
            raise ValueError("a user-supplied g needs its optimum value g_star")
        return ObservableG(getattr(which, "__name__", "user"),
                           lambda th: np.asarray(which(th), dtype=float)[..., None],
                           np.atleast_1d(np.asarray(g_star, dtype=float)))
    if which == "id":
        return ObservableG("id", lambda th: np.asarray(th, dtype=float), ts.copy())
    if which == "sqdist":
        return ObservableG("sqdist", lambda th: np.sum((th - ts) ** 2, axis=-1, keepdims=True),
                           np.zeros(1))
    if isinstance(which, str) and which.startswith("coord:"):
        j = int(which.split(":", 1)[1])
        if not 0 <= j < model.d:
            raise ValueError(f"coordinate {j} out of range")
        return ObservableG(which, lambda th: np.asarray(th, dtype=float)[..., j:j + 1],
                           ts[j:j + 1].copy())
    raise ValueError(f"unknown observable {which!r}")


# --- flow integration ---------------------------------------------------------

@dataclass
class FlowSolution:
    theta0: np.ndarray
    t: np.ndarray
    states: np.ndarray
    h: float
    error: float


def _rk4(model, theta0, T, n):
    """Fixed-step RK4 for ``theta' = -f'(theta)``; returns ``(n+1, ..., d)`` states."""
    h = T / n
    out = np.empty((n + 1,) + theta0.shape)
    y = theta0.copy()
    out[0] = y
    grad = model.gradient
    for i in range(n):
        k1 = -grad(y)
        k2 = -grad(y + 0.5 * h * k1)
        k3 = -grad(y + 0.5 * h * k2)
        k4 = -grad(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = y
    return out


def _initial_steps(model, T):
    # a step of about 1/(4 L) keeps RK4 well inside its stability region
    return max(4, int(math.ceil(T * 4 * model.L)))


def integrate_flow(model: ObjectiveModel, theta0, T: float, tol: float = 1e-10,
                   max_halvings: int = 20) -> FlowSolution:
    """RK4 with step halving until successive solutions agree to ``tol`` on the coarse grid.

    ``theta0`` may be a single point ``(d,)`` or a batch ``(n, d)``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    theta0 = np.asarray(theta0, dtype=float)
    model._check_theta(theta0)
    n = _initial_steps(model, T)
    prev = _rk4(model, theta0, T, n)
    for _ in range(max_halvings):
        cur = _rk4(model, theta0, T, 2 * n)
        err = float(np.max(np.abs(cur[::2] - prev))) if prev.size else 0.0
        n *= 2
        if err < tol:
            return FlowSolution(theta0, np.linspace(0.0, T, n + 1), cur, T / n, err)
        prev = cur
    raise FlowToleranceError(f"flow tolerance {tol} not reached at step {T / n:.3e}")


# --- Poisson integral ---------------------------------------------------------

@dataclass
class PoissonValue:
    g: str
    theta: np.ndarray
    value: np.ndarray
    T: float
    error: float


def _simpson(y, h):
    """Composite Simpson along axis 0 (even number of intervals)."""
    return h / 3.0 * (y[0] + y[-1] + 4 * y[1:-1:2].sum(axis=0) + 2 * y[2:-1:2].sum(axis=0))


def truncation_horizon(model: ObjectiveModel, g: ObservableG, theta, tol: float) -> float:
    """``T`` such that the neglected tail of the integral is below ``tol / 10``."""
    mu = model.mu_global
    dist = float(np.max(np.linalg.norm(np.atleast_2d(theta) - model.theta_star, axis=-1)))
    if dist == 0:
        return 1.0
    if g.name == "sqdist":
        # |phi_s - theta*|^2 <= e^{-2 mu s} dist^2
        bound, rate = dist**2, 2 * mu
    elif g.name == "id" or g.name.startswith("coord:"):
        bound, rate = dist, mu
    else:
        gap = float(np.max(np.abs(g.gap(np.atleast_2d(theta)))))
        bound, rate = max(gap, dist), mu
    # tail integral <= bound * e^{-rate T} / rate
    return max(1.0, math.log(10.0 * bound / (rate * tol)) / rate)


def poisson_h(model: ObjectiveModel, g, theta, tol: float = 1e-9,
              max_halvings: int = 20) -> PoissonValue:
    """``h_g(theta) = int_0^inf (g(phi_s(theta)) - g(theta*)) ds`` by Simpson quadrature.

    ``theta`` may be a batch ``(n, d)``; values then have shape ``(n, k)``.
    """
    g = make_g(model, g)
    theta = np.asarray(theta, dtype=float)
    model._check_theta(theta)
    T = truncation_horizon(model, g, theta, tol)
    n = _initial_steps(model, T)
    n += n % 2

    def value(n):
        states = _rk4(model, theta, T, n)
        return _simpson(g.gap(states), T / n)

    prev = value(n)
    for _ in range(max_halvings):
        n *= 2
        cur = value(n)
        err = float(np.max(np.abs(cur - prev)))
        if err < tol:
            return PoissonValue(g.name, theta, cur, T, err)
        prev = cur
    raise FlowToleranceError(f"quadrature tolerance {tol} not reached")


def h_id_gradient_at_opt(model: ObjectiveModel) -> np.ndarray:
    """Jacobian of ``h_Id`` at the optimum: the inverse Hessian."""
    return np.linalg.inv(model.hessian(model.theta_star))


def jacobian_fd(fun: Callable, theta, eps: float = 1e-3) -> np.ndarray:
    """Central-difference Jacobian of a vector function (columns by coordinate)."""
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[0]
    pts = np.concatenate([theta + eps * np.eye(d), theta - eps * np.eye(d)])
    vals = np.asarray(fun(pts))
    return ((vals[:d] - vals[d:]) / (2 * eps)).T


def hessian_fd(fun: Callable, theta, eps: float = 1e-3) -> np.ndarray:
    """Second central differences of a batched scalar function, Richardson-refined.

    ``fun`` maps ``(n, d)`` points to ``(n,)`` values.
    """
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[0]

    def stencil(h):
        pts = [theta]
        for i in range(d):
            for j in range(d):
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    pts.append(theta + h * (si * np.eye(d)[i] + sj * np.eye(d)[j]))
        return np.array(pts)

    def second(h):
        v = np.asarray(fun(stencil(h)), dtype=float).reshape(-1)
        out = np.empty((d, d))
        pos = 1
        for i in range(d):
            for j in range(d):
                pp, pm, mp, mm = v[pos:pos + 4]
                out[i, j] = (pp - pm - mp + mm) / (4 * h * h)
                pos += 4
        return out

    D1, D2 = second(eps), second(eps / 2)
    H = (4 * D2 - D1) / 3
    return 0.5 * (H + H.T)


def quadratic_sqdist_matrix(model: ObjectiveModel) -> np.ndarray:
    """``X`` with ``H X + X H = I``, so that ``h_g(theta) = eta^T X eta`` for ``g = |eta|^2``."""
    if not model.is_quadratic:
        raise ValueError("closed form available for quadratic objectives only")
    H = model.hessian(model.theta_star)
    return lyapunov_sum(H).solve(np.eye(model.d))


def h_closed_form(model: ObjectiveModel, g, theta) -> np.ndarray | None:
    """Exact ``h_g`` on quadratics for the identity, coordinates and squared distance."""
    if not model.is_quadratic:
        return None
    g = make_g(model, g)
    eta = np.asarray(theta, dtype=float) - model.theta_star
    Hinv = np.linalg.inv(model.hessian(model.theta_star))
    if g.name == "id":
        return eta @ Hinv.T
    if g.name.startswith("coord:"):
        j = int(g.name.split(":")[1])
        return (eta @ Hinv.T)[..., j:j + 1]
    if g.name == "sqdist":
        X = quadratic_sqdist_matrix(model)
        return np.einsum("...i,ij,...j->...", eta, X, eta)[..., None]
    return None


def h_hessian_at_opt(model: ObjectiveModel, g, tol: float = 1e-11, eps: float = 1e-3) -> np.ndarray:
    """``h_g''(theta*)`` for scalar ``g``: closed form on quadratics, else finite differences."""
    g = make_g(model, g)
    if model.is_quadratic and g.name == "sqdist":
        return 2 * quadratic_sqdist_matrix(model)
    if model.is_quadratic and (g.name == "id" or g.name.startswith("coord:")):
        return np.zeros((model.d, model.d))

    def fun(pts):
        return poisson_h(model, g, pts, tol=tol).value[..., 0]

    return hessian_fd(fun, model.theta_star, eps)


def generator_residual(model: ObjectiveModel, g, theta0, times, delta: float = 1e-3,
                       tol: float = 1e-11) -> np.ndarray:
    """``d/dt h_g(phi_t) + (g(phi_t) - g*)`` at the given times along the flow from ``theta0``."""
    g = make_g(model, g)
    times = np.asarray(times, dtype=float)
    theta0 = np.asarray(theta0, dtype=float).reshape(model.d)
    pts = []
    for t in times:
        for s in (t - delta, t, t + delta):
            if s <= 0:
                pts.append(theta0 if s == 0 else _backward_point(model, theta0, -s, tol))
            else:
                pts.append(integrate_flow(model, theta0, s, tol=tol).states[-1])
    pts = np.array(pts).reshape(len(times), 3, model.d)
    h = poisson_h(model, g, pts.reshape(-1, model.d), tol=tol).value.reshape(len(times), 3, -1)
    dh = (h[:, 2] - h[:, 0]) / (2 * delta)
    return dh + g.gap(pts[:, 1])


def _backward_point(model, theta0, s, tol):
    # reverse flow for a short time s, used only when t - delta < 0
    neg = _Reversed(model)
    return integrate_flow(neg, theta0, s, tol=tol).states[-1]


class _Reversed:
    def __init__(self, model):
        self._m = model
        self.L = model.L

    def gradient(self, theta):
        return -self._m.gradient(theta)

    def _check_theta(self, theta):
        return self._m._check_theta(theta)


# --- weak error ---------------------------------------------------------------

@dataclass
class WeakErrorReport:
    g: str
    gammas: np.ndarray
    mc_value: np.ndarray
    mc_se: np.ndarray
    correction: np.ndarray
    leading: np.ndarray
    residual: np.ndarray
    fit: ScalingFit | None
    info: dict


def weak_error_check(model: ObjectiveModel, g, gammas, theta0=None, horizon: int = 20_000,
                     replicas: int = 1000, seed: int = 0, tol: float = 1e-10) -> WeakErrorReport:
    """Compare the time-averaged error of ``g`` with ``(gamma/2) tr(h_g''(theta*) C(theta*))``.

    For each step size the estimate is ``(1/k) sum_{i<k} g(theta_i) - g(theta*)``
    minus ``(h_g(theta_0) - E h_g(theta_k)) / (k gamma)``; the residual against the
    leading term should shrink like ``gamma^2``.
    """
    g = make_g(model, g)
    if g.g_star.shape != (1,):
        raise ValueError("weak_error_check needs a scalar g")
    gammas = np.sort(np.asarray(gammas, dtype=float))
    check_step_size(model, gammas)
    theta0 = model.theta_star if theta0 is None else np.asarray(theta0, dtype=float).reshape(model.d)
    ens = Ensemble(model, gammas, theta0, replicas=replicas, seed=seed, purpose="weak-error")
    acc = np.zeros((len(gammas), replicas))
    acc += g.gap(ens.theta)[..., 0]

    def obs(k, th):
        if k < horizon:
            acc[...] += g.gap(th)[..., 0]

    ens.advance(horizon, obs)
    tavg = acc / horizon  # per-replica time averages, (M, R)

    def h_of(points):
        exact = h_closed_form(model, g, points)
        if exact is not None:
            return exact[..., 0]
        return poisson_h(model, g, points.reshape(-1, model.d), tol=tol).value[..., 0].reshape(points.shape[:-1])

    h0 = float(h_of(theta0[None])[0])
    hk = h_of(ens.theta)  # (M, R)
    per = tavg - (h0 - hk) / (horizon * gammas[:, None])
    mc = per.mean(axis=1)
    se = per.std(axis=1, ddof=1) / math.sqrt(replicas)
    Hg = h_hessian_at_opt(model, g, tol=max(tol, 1e-11))
    lead_const = 0.5 * float(np.trace(Hg @ model.xi_covariance))
    leading = gammas * lead_const
    resid = np.abs(mc - leading)
    fit = fit_loglog(gammas, resid, se) if len(gammas) >= 4 else None
    return WeakErrorReport(g.name, gammas, mc, se, ((h0 - hk) / (horizon * gammas[:, None])).mean(axis=1),
                           leading, resid, fit, {"horizon": horizon, "replicas": replicas,
                                                 "leading_constant": lead_const})
