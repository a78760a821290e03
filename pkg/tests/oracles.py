"""Independent reference computations used by the tests.

None of these call into the package's estimators; they rely on scipy root
finding, explicit loops and a spectral discretization of the chain's
transition operator.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq


def sigmoid(t):
    return 1.0 / (1.0 + np.exp(-t))


def logistic_1d_gradient(theta, atoms, lam):
    """Per-atom gradients of the one-dimensional regularized logistic loss."""
    return [-y * x * sigmoid(-y * x * theta) + lam * theta for x, y, _ in atoms]


def logistic_1d_optimum(atoms, lam):
    def fp(th):
        return sum(w * g for (x, y, w), g in zip(atoms, logistic_1d_gradient(th, atoms, lam)))
    return brentq(fp, -50, 50, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _cheb_interp_matrix(nodes, pts):
    """Barycentric interpolation from Chebyshev points of the first kind."""
    n = len(nodes)
    j = np.arange(n)
    w = (-1.0) ** j * np.sin((2 * j + 1) * np.pi / (2 * n))
    D = pts[:, None] - nodes[None, :]
    exact = np.abs(D) < 1e-15
    D[exact] = 1.0
    M = w / D
    M /= M.sum(axis=1, keepdims=True)
    r, c = np.nonzero(exact)
    M[r] = 0.0
    M[r, c] = 1.0
    return M


def stationary_expectations_1d(maps, weights, center, n=80, width=20.0):
    """Stationary expectations of a one-dimensional iterated function system.

    The chain jumps ``theta -> maps[i](theta)`` with probability
    ``weights[i]``. The transition operator is discretized by Chebyshev
    collocation on the invariant interval and the stationary law is the left
    eigenvector for eigenvalue 1. Returns a function ``E[phi]`` for
    vectorized ``phi``.
    """
    lo, hi = center - width, center + width
    for _ in range(400):
        grid = np.linspace(lo, hi, 2001)
        images = np.concatenate([m(grid) for m in maps])
        nlo, nhi = images.min(), images.max()
        if abs(nlo - lo) < 1e-14 and abs(nhi - hi) < 1e-14:
            break
        lo, hi = nlo, nhi
    x = np.cos(np.pi * (np.arange(n) + 0.5) / n)
    nodes = (lo + hi) / 2 + (hi - lo) / 2 * x
    K = sum(w * _cheb_interp_matrix(nodes, m(nodes)) for m, w in zip(maps, weights))
    vals, vecs = sla.eig(K.T)
    k = int(np.argmin(np.abs(vals - 1)))
    p = np.real(vecs[:, k])
    p /= p.sum()
    return lambda phi: float(p @ phi(nodes))


def l1_stationary_mean(gamma, n=80):
    """Exact stationary mean of SGD on the one-dimensional logistic instance."""
    atoms = [(1.0, 1.0, 0.7), (1.0, -1.0, 0.3)]
    lam = 0.1
    ts = logistic_1d_optimum(atoms, lam)
    maps = [lambda th, a=a: th - gamma * (-a[1] * a[0] * sigmoid(-a[1] * a[0] * th) + lam * th)
            for a in atoms]
    E = stationary_expectations_1d(maps, [a[2] for a in atoms], ts, n=n)
    return E(lambda th: th), ts


def ar1_stationary_variance(phi, noise_var):
    """Variance of ``x' = phi x + e`` with ``Var e = noise_var``."""
    return noise_var / (1 - phi**2)


def lms_scalar_fixed_point(gamma, atoms, theta_star=0.0, iters=100_000):
    """Stationary second moment of one-dimensional LMS by iterating the exact moment recursion.

    ``m' = E[(1 - gamma x^2)^2] m + gamma^2 E[(x (x theta* - y))^2]`` where
    cross terms vanish at the optimum in one dimension.
    """
    a = sum(w * (1 - gamma * x * x) ** 2 for x, y, w in atoms)
    b = gamma**2 * sum(w * (x * (x * theta_star - y)) ** 2 for x, y, w in atoms)
    m = 0.0
    for _ in range(iters):
        m = a * m + b
    return m


def lyapunov_scalar(h, c):
    return c / (2 * h)


def vandermonde_intercept(gs, vals):
    """Intercept of the polynomial through ``(g_i, v_i)``."""
    V = np.vander(np.asarray(gs, dtype=float), increasing=True)
    return np.linalg.solve(V, np.asarray(vals, dtype=float))[0]


def poisson_quadratic_id(Sigma, eta):
    """``int_0^inf exp(-Sigma s) eta ds`` via the spectral decomposition."""
    lam, F = np.linalg.eigh(np.asarray(Sigma, dtype=float))
    return F @ ((F.T @ eta) / lam)


def exp_flow_quadratic(Sigma, theta_star, theta0, t):
    return theta_star + sla.expm(-np.asarray(Sigma) * t) @ (np.asarray(theta0) - theta_star)


def brute_force_mean(values, weights):
    return sum(w * v for v, w in zip(values, weights))


def ln_ratio_steps(tol, rho):
    return math.log(tol) / math.log(rho)


def q1_expected_avg_gap(steps, theta0: float) -> float:
    """Exact ``E[f(avg_n)] - f*`` for SGD on the scalar instance with ``x = 1``, ``y = +-1``.

    ``steps[k-1]`` is the step that produces iterate ``k``. The average runs
    over iterates ``0..n``. Each iterate is linear in ``theta0`` and the labels,
    so the expected gap is half the squared deterministic part plus the
    summed squared label weights.
    """
    g = np.asarray(steps, dtype=float)
    n = g.size
    one = 1 - g
    a = np.concatenate([[1.0], np.cumprod(one)]).sum() / (n + 1)
    # tail[k] = 1 + one[k+1] + one[k+1] one[k+2] + ...
    tail = np.empty(n)
    tail[-1] = 1.0
    for k in range(n - 2, -1, -1):
        tail[k] = 1 + one[k + 1] * tail[k + 1]
    w = g * tail / (n + 1)
    return 0.5 * ((a * theta0) ** 2 + np.sum(w**2))


def q1_expected_rr_gap(gamma: float, n: int, theta0: float, multipliers=(1, 2), weights=(2, -1)) -> float:
    """Exact expected gap of the coupled extrapolated average on the scalar instance."""
    parts = []
    for m in multipliers:
        g = np.full(n, m * gamma)
        one = 1 - g
        a = np.concatenate([[1.0], np.cumprod(one)]).sum() / (n + 1)
        tail = np.empty(n)
        tail[-1] = 1.0
        for k in range(n - 2, -1, -1):
            tail[k] = 1 + one[k + 1] * tail[k + 1]
        parts.append((a, g * tail / (n + 1)))
    a = sum(c * p[0] for c, p in zip(weights, parts))
    w = sum(c * p[1] for c, p in zip(weights, parts))
    return 0.5 * ((a * theta0) ** 2 + np.sum(w**2))
