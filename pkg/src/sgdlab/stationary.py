"""Monte Carlo estimation of stationary moments, log-log scaling fits,
synchronous-coupling contraction and moment-growth checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import Ensemble, check_step_size
from .extrapolate import RR2_WEIGHTS, RR3_WEIGHTS
from .models import ObjectiveModel

MIN_BATCHES = 50
BURN_IN_TOL = 1e-8


class InsufficientSamplesError(ValueError):
    pass


# --- contraction rates and burn-in -------------------------------------------

def contraction_rate(model: ObjectiveModel, gamma: float) -> float:
    """Per-step squared-distance contraction ``1 - 2 mu gamma (1 - gamma L / 2)``.

    Uses the globally valid strong convexity constant and the per-sample
    co-coercivity constant, under which the coupling bound is proved.
    """
    return 1.0 - 2.0 * model.mu_global * gamma * (1.0 - gamma * model.L_sample / 2.0)


def alternative_rate(model: ObjectiveModel, gamma: float) -> float:
    """The looser rate ``sqrt(1 - gamma mu)``, recorded for comparison."""
    return math.sqrt(max(0.0, 1.0 - gamma * model.mu_global))


def burn_in_steps(model: ObjectiveModel, gamma: float, tol: float = BURN_IN_TOL) -> int:
    rho = contraction_rate(model, gamma)
    if not 0.0 < rho < 1.0:
        if rho <= 0.0:
            return 1
        raise ValueError(f"no contraction guarantee at gamma={gamma}; pass burn_in explicitly")
    return int(math.ceil(math.log(tol) / math.log(rho)))


# --- batch means --------------------------------------------------------------

def batch_means(series, n_batches: int = MIN_BATCHES):
    """Mean and batch-means standard error along axis 0 of a time series.

    ``series`` has shape ``(n_steps, ...)``; a trailing remainder shorter than
    one batch is dropped.
    """
    x = np.asarray(series, dtype=float)
    if n_batches < 2:
        raise ValueError("need at least two batches")
    size = x.shape[0] // n_batches
    if size < 1:
        raise InsufficientSamplesError(f"{x.shape[0]} samples cannot form {n_batches} batches")
    bm = x[: size * n_batches].reshape((n_batches, size) + x.shape[1:]).mean(axis=1)
    return bm.mean(axis=0), bm.std(axis=0, ddof=1) / math.sqrt(n_batches)


class BatchAccumulator:
    """Streaming batch sums for ``R`` parallel chains of equal length.

    Each chain is cut into ``per_chain`` contiguous batches, so the pooled
    estimator has ``R * per_chain`` batch means.
    """

    def __init__(self, n_chains: int, steps: int, per_chain: int, n_obs: int):
        if steps < per_chain:
            raise InsufficientSamplesError("fewer steps than batches per chain")
        self.size = steps // per_chain
        self.steps = self.size * per_chain
        self.sums = np.zeros((per_chain, n_chains, n_obs))
        self.t = 0

    def add(self, block):
        """Add observations of shape ``(B, R, n_obs)`` for the next ``B`` steps."""
        B = block.shape[0]
        end = min(self.t + B, self.steps)
        if end <= self.t:
            return
        block = block[: end - self.t]
        b_idx = np.arange(self.t, end) // self.size
        np.add.at(self.sums, b_idx, block)
        self.t = end

    def result(self):
        bm = (self.sums / self.size).reshape(-1, self.sums.shape[-1])
        nb = bm.shape[0]
        return bm.mean(axis=0), bm.std(axis=0, ddof=1) / math.sqrt(nb), bm


def _default_chains(samples: int) -> int:
    return int(min(256, max(1, samples // 4000)))


def sample_stationary(model: ObjectiveModel, gammas, observables: Callable, n_obs: int,
                      samples: int, seed: int = 0, burn_in: int | None = None,
                      chains: int | None = None, theta0=None, block: int = 256,
                      n_batches: int = MIN_BATCHES, purpose: str = "stationary"):
    """Time averages of ``observables(theta_block)`` over coupled stationary chains.

    ``theta_block`` has shape ``(B, M, R, d)`` for ``M`` step sizes and ``R``
    chains; ``observables`` returns ``(B, R, n_obs)``. ``samples`` counts
    post-burn-in steps per step size, pooled over the chains.
    """
    gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
    check_step_size(model, gammas)
    need = max(burn_in_steps(model, g) for g in gammas) if burn_in is None else int(burn_in)
    if burn_in is not None and burn_in < _burn_in_or_zero(model, gammas):
        raise ValueError(f"burn_in={burn_in} is below the contraction requirement "
                         f"{_burn_in_or_zero(model, gammas)}")
    R = _default_chains(samples) if chains is None else int(chains)
    steps = int(math.ceil(samples / R))
    per_chain = max(1, int(math.ceil(n_batches / R)))
    start = model.theta_star if theta0 is None else np.asarray(theta0, dtype=float)
    ens = Ensemble(model, gammas, start, replicas=R, seed=seed, purpose=purpose)
    ens.advance(need)
    acc = BatchAccumulator(R, steps, per_chain, n_obs)
    buf = np.empty((block, len(gammas), R, model.d))
    done = 0
    while done < acc.steps:
        b = min(block, acc.steps - done)

        def store(k, th, _b0=ens.k):
            buf[k - _b0 - 1] = th

        ens.advance(b, store)
        acc.add(observables(buf[:b]))
        done += b
    mean, se, bm = acc.result()
    return mean, se, {"burn_in": need, "steps_per_chain": acc.steps, "chains": R,
                      "batches": bm.shape[0]}


def _burn_in_or_zero(model, gammas):
    try:
        return max(burn_in_steps(model, g) for g in gammas)
    except ValueError:
        return 0


# --- stationary estimates -----------------------------------------------------

@dataclass
class StationaryEstimate:
    gamma: float
    burn_in: int
    samples: int
    chains: int
    batches: int
    mean: np.ndarray
    mean_se: np.ndarray
    second_moment: np.ndarray
    second_moment_se: np.ndarray
    Cbar: np.ndarray
    Cbar_se: np.ndarray
    trace: float
    trace_se: float
    fourth: float
    fourth_se: float
    fgap: float
    fgap_se: float
    theta_star: np.ndarray = field(repr=False, default=None)

    @property
    def bias(self) -> np.ndarray:
        return self.mean - self.theta_star

    def bias_norm(self):
        """``|mean - theta*|`` and its delta-method standard error."""
        b = self.bias
        n = float(np.linalg.norm(b))
        if n == 0:
            return 0.0, float(np.linalg.norm(self.mean_se))
        return n, float(np.sqrt(np.sum((b / n) ** 2 * self.mean_se**2)))

    def row(self) -> dict:
        bn, bse = self.bias_norm()
        return {"gamma": self.gamma, "burn_in": self.burn_in, "samples": self.samples,
                "bias_norm": bn, "bias_se": bse, "trace_m2": self.trace, "trace_m2_se": self.trace_se,
                "m4": self.fourth, "m4_se": self.fourth_se, "fgap": self.fgap, "fgap_se": self.fgap_se,
                "trace_cbar": float(np.trace(self.Cbar))}


def _moment_observables(model: ObjectiveModel):
    d = model.d
    ts = model.theta_star

    def obs(theta):  # theta: (B, 1, R, d)
        th = theta[:, 0]
        e = th - ts
        outer = (e[..., :, None] * e[..., None, :]).reshape(e.shape[:-1] + (d * d,))
        C = model.noise_covariance(th).reshape(e.shape[:-1] + (d * d,))
        r2 = np.sum(e**2, axis=-1, keepdims=True)
        fg = (model.value(th) - model.f_star)[..., None]
        return np.concatenate([th, outer, C, r2, r2**2, fg], axis=-1)

    return obs, d + 2 * d * d + 3


def estimate_stationary(model: ObjectiveModel, gamma: float, seed: int = 0,
                        burn_in: int | None = None, samples: int = 1_000_000,
                        chains: int | None = None, min_batches: int = MIN_BATCHES) -> StationaryEstimate:
    """Stationary mean, second moment and averaged noise covariance with error bars."""
    obs, n_obs = _moment_observables(model)
    mean, se, info = sample_stationary(model, [gamma], obs, n_obs, samples, seed, burn_in,
                                       chains, n_batches=min_batches)
    d = model.d
    i = np.cumsum([0, d, d * d, d * d, 1, 1, 1])
    M2 = mean[i[1]:i[2]].reshape(d, d)
    return StationaryEstimate(
        gamma=float(gamma), burn_in=info["burn_in"], samples=info["steps_per_chain"] * info["chains"],
        chains=info["chains"], batches=info["batches"],
        mean=mean[:d], mean_se=se[:d],
        second_moment=0.5 * (M2 + M2.T), second_moment_se=se[i[1]:i[2]].reshape(d, d),
        Cbar=mean[i[2]:i[3]].reshape(d, d), Cbar_se=se[i[2]:i[3]].reshape(d, d),
        trace=float(mean[i[3]]), trace_se=float(se[i[3]]),
        fourth=float(mean[i[4]]), fourth_se=float(se[i[4]]),
        fgap=float(mean[i[5]]), fgap_se=float(se[i[5]]),
        theta_star=model.theta_star.copy())


def second_moment_bound(model: ObjectiveModel, gamma: float) -> float:
    """``gamma tau_2^2 / (mu (1 - gamma L))`` for ``gamma < 1/L``."""
    if not 0 < gamma < 1 / model.L_sample:
        raise ValueError("the second-moment bound needs gamma < 1/L")
    return gamma * model.tau(2) ** 2 / (model.mu_global * (1 - gamma * model.L_sample))


# --- scaling fits -------------------------------------------------------------

@dataclass
class ScalingFit:
    x: np.ndarray
    y: np.ndarray
    se: np.ndarray
    used: np.ndarray
    slope: float
    intercept: float
    residual: float
    halfwidth: float
    flagged: bool = False
    note: str = ""

    def rows(self):
        for xi, yi, si, ui in zip(self.x, self.y, self.se, self.used):
            yield {"x": float(xi), "y": float(yi), "se": float(si), "used": bool(ui)}

    def summary(self) -> str:
        if self.flagged:
            return f"flagged ({self.note})"
        return f"slope {self.slope:.4f} +/- {self.halfwidth:.4f} over {int(self.used.sum())} points"


def _ols(lx, ly):
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    return coef[0], coef[1], float(np.sqrt(np.mean(res**2)))


def fit_loglog(x, y, se=None, min_points: int = 4, min_span: float = 8.0,
               floor_sigmas: float = 3.0) -> ScalingFit:
    """OLS fit of ``log y`` on ``log x`` with a jackknife half-width.

    Points with ``y <= floor_sigmas * se`` sit on the Monte Carlo noise floor
    and are excluded. If fewer than three points survive the fit is flagged.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    se = np.zeros_like(y) if se is None else np.asarray(se, dtype=float)
    if len(x) < min_points:
        raise ValueError(f"a scaling grid needs at least {min_points} points")
    if x.min() <= 0 or x.max() / x.min() < min_span * (1 - 1e-9):
        raise ValueError(f"a scaling grid must span a factor of at least {min_span}")
    used = (y > floor_sigmas * se) & (y > 0) & np.isfinite(y)
    n = int(used.sum())
    if n < 3:
        return ScalingFit(x, y, se, used, math.nan, math.nan, math.nan, math.inf, True,
                          "noise floor: fewer than three points above 3 SE")
    lx, ly = np.log(x[used]), np.log(y[used])
    slope, icpt, resid = _ols(lx, ly)
    jk = np.array([_ols(np.delete(lx, i), np.delete(ly, i))[0] for i in range(n)])
    jse = math.sqrt((n - 1) / n * np.sum((jk - jk.mean()) ** 2))
    note = "" if n == len(x) else f"{len(x) - n} point(s) below the noise floor excluded"
    return ScalingFit(x, y, se, used, float(slope), float(icpt), resid, 2.0 * jse, False, note)


@dataclass
class BiasScalingReport:
    gammas: np.ndarray
    single: ScalingFit
    rr2: ScalingFit
    rr3_norm: np.ndarray
    rr3_se: np.ndarray
    info: dict


def _norm_and_se(m, s):
    n = np.linalg.norm(m, axis=-1)
    safe = np.where(n > 0, n, 1.0)
    se = np.sqrt(np.sum((m / safe[..., None]) ** 2 * s**2, axis=-1))
    se = np.where(n > 0, se, np.linalg.norm(s, axis=-1))
    return n, se


def fit_bias_scaling(model: ObjectiveModel, gammas, seed: int = 0, samples: int = 10_000_000,
                     chains: int | None = None, burn_in: int | None = None) -> BiasScalingReport:
    """Stationary bias of the single-step, two-step and three-step estimators.

    All chains at ``gamma``, ``2 gamma`` and ``4 gamma`` share atom draws, and
    the extrapolated series are formed step by step before batching.
    """
    gammas = np.sort(np.asarray(gammas, dtype=float))
    members = np.unique(np.concatenate([gammas, 2 * gammas, 4 * gammas]))
    pos = {float(g): i for i, g in enumerate(members)}
    i1 = [pos[float(g)] for g in gammas]
    i2 = [pos[float(2 * g)] for g in gammas]
    i4 = [pos[float(4 * g)] for g in gammas]
    ts = model.theta_star
    d = model.d
    G = len(gammas)

    def obs(theta):  # (B, M, R, d)
        e = theta - ts
        single = e[:, i1]
        rr2 = RR2_WEIGHTS[0] * e[:, i1] + RR2_WEIGHTS[1] * e[:, i2]
        rr3 = RR3_WEIGHTS[0] * e[:, i1] + RR3_WEIGHTS[1] * e[:, i2] + RR3_WEIGHTS[2] * e[:, i4]
        out = np.concatenate([single, rr2, rr3], axis=1)  # (B, 3G, R, d)
        return np.moveaxis(out, 2, 1).reshape(theta.shape[0], theta.shape[2], 3 * G * d)

    mean, se, info = sample_stationary(model, members, obs, 3 * G * d, samples, seed, burn_in,
                                       chains, purpose="bias-scaling")
    mean = mean.reshape(3, G, d)
    se = se.reshape(3, G, d)
    n1, s1 = _norm_and_se(mean[0], se[0])
    n2, s2 = _norm_and_se(mean[1], se[1])
    n3, s3 = _norm_and_se(mean[2], se[2])
    info = dict(info, members=members.tolist(), single=n1.tolist(), single_se=s1.tolist(),
                rr2=n2.tolist(), rr2_se=s2.tolist(), rr3=n3.tolist(), rr3_se=s3.tolist())
    return BiasScalingReport(gammas, fit_loglog(gammas, n1, s1), fit_loglog(gammas, n2, s2),
                             n3, s3, info)


@dataclass
class KScalingReport:
    k: np.ndarray
    bias_mean: np.ndarray
    bias_se: np.ndarray
    bias_fit: ScalingFit
    bias_constant: np.ndarray
    sq_err: np.ndarray
    sq_err_se: np.ndarray
    c1: float
    c2: float
    variance_constant: float
    predicted_bias_constant: np.ndarray | None


def fit_k_scaling(model: ObjectiveModel, gamma: float, theta0, k_grid, replicas: int = 2000,
                  seed: int = 0, start: str = "point", target=None,
                  burn_in: int | None = None) -> KScalingReport:
    """Averaged-iterate error over ``replicas`` independent chains.

    ``start="point"`` starts every replica at ``theta0``; ``start="stationary"``
    runs a fresh burn-in per replica from ``theta0`` first. The squared error is
    taken against ``target`` (default: the exact stationary mean for
    quadratics, ``theta*`` otherwise).
    """
    check_step_size(model, gamma)
    ks = np.unique(np.asarray(k_grid, dtype=np.int64))
    if ks[0] < 1:
        raise ValueError("k must be positive")
    theta0 = np.asarray(theta0, dtype=float).reshape(model.d)
    ens = Ensemble(model, [gamma], theta0, replicas=replicas, seed=seed, purpose="k-scaling")
    if start == "stationary":
        ens.advance(burn_in_steps(model, gamma) if burn_in is None else int(burn_in))
    elif start != "point":
        raise ValueError("start must be 'point' or 'stationary'")
    k0 = ens.k
    avg = ens.theta[0].copy()
    snaps = []
    want = iter(ks.tolist())
    nxt = next(want)

    def obs(k, th):
        nonlocal nxt
        j = k - k0
        avg[...] += (th[0] - avg) / (j + 1)
        if j == nxt:
            snaps.append(avg.copy())
            nxt = next(want, -1)

    ens.advance(int(ks[-1]), obs)
    A = np.array(snaps)  # (K, R, d)
    ts = model.theta_star if target is None else np.asarray(target, dtype=float)
    e = A - model.theta_star
    bm = e.mean(axis=1)
    bse = e.std(axis=1, ddof=1) / math.sqrt(replicas)
    sq = np.sum((A - ts) ** 2, axis=-1)
    sqm = sq.mean(axis=1)
    sqse = sq.std(axis=1, ddof=1) / math.sqrt(replicas)
    bn, bnse = _norm_and_se(bm, bse)
    bias_fit = fit_loglog(ks.astype(float), bn, bnse)
    # unit-slope constant c in bias ~ c / k, from the upper half of the grid
    upper = ks >= np.median(ks)
    const = np.mean(bm[upper] * ks[upper, None], axis=0)
    # weighted least squares of sq ~ c1/k + c2/k^2
    W = 1.0 / np.maximum(sqse, 1e-300)
    D = np.vstack([1.0 / ks, 1.0 / ks.astype(float) ** 2]).T
    c, *_ = np.linalg.lstsq(D * W[:, None], sqm * W, rcond=None)
    H = model.hessian(model.theta_star)
    Hinv = np.linalg.inv(H)
    var_const = float(np.trace(Hinv @ model.xi_covariance @ Hinv)) if model.is_quadratic else math.nan
    pred = None
    if model.is_quadratic:
        pred = Hinv @ (theta0 - model.theta_star) / gamma
    return KScalingReport(ks, bm, bse, bias_fit, const, sqm, sqse, float(c[0]), float(c[1]),
                          var_const, pred)


# --- coupling -----------------------------------------------------------------

@dataclass
class CouplingResult:
    k: np.ndarray
    D: np.ndarray
    se: np.ndarray
    rho: float
    rho_alt: float
    D0: float

    @property
    def bound(self) -> np.ndarray:
        return self.rho ** self.k * self.D0

    def violations(self, sigmas: float = 3.0, rel_slack: float = 1e-12) -> np.ndarray:
        # rel_slack absorbs rounding when the coupled distance is deterministic
        return self.k[self.D > self.bound * (1 + rel_slack) + sigmas * self.se]

    @property
    def ok(self) -> bool:
        return self.violations().size == 0


def coupling_contraction(model: ObjectiveModel, gamma: float, theta1, theta2, replicas: int = 2000,
                         horizon: int = 200, seed: int = 0) -> CouplingResult:
    """Mean squared distance between two chains driven by identical atom draws."""
    check_step_size(model, gamma)
    d = model.d
    th = np.empty((2, replicas, d))
    th[0] = np.asarray(theta1, dtype=float).reshape(d)
    th[1] = np.asarray(theta2, dtype=float).reshape(d)
    ens = Ensemble(model, [gamma, gamma], th, replicas=replicas, seed=seed, coupled=True,
                   purpose="coupling")
    D = np.empty(horizon + 1)
    se = np.empty(horizon + 1)

    def record(k, theta):
        dist = np.sum((theta[0] - theta[1]) ** 2, axis=-1)
        D[k] = dist.mean()
        se[k] = dist.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else 0.0

    record(0, ens.theta)
    ens.advance(horizon, record)
    return CouplingResult(np.arange(horizon + 1), D, se, contraction_rate(model, gamma),
                          alternative_rate(model, gamma), float(D[0]))


# --- moments and plateaus -----------------------------------------------------

def moment_growth_check(model: ObjectiveModel, gammas, p: int = 1, seed: int = 0,
                        samples: int = 2_000_000, chains: int | None = None):
    """Log-log fit of the stationary ``2p``-th moment of ``|theta - theta*|`` against gamma."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    gammas = np.sort(np.asarray(gammas, dtype=float))
    ts = model.theta_star

    def obs(theta):
        r2 = np.sum((theta - ts) ** 2, axis=-1) ** p  # (B, M, R)
        return np.moveaxis(r2, 1, 2)

    mean, se, info = sample_stationary(model, gammas, obs, len(gammas), samples, seed,
                                       chains=chains, purpose="moments")
    if np.all(mean == 0):
        return ScalingFit(gammas, mean, se, np.zeros(len(gammas), bool), math.nan, math.nan,
                          math.nan, math.inf, True, "all moments vanish"), mean, se
    return fit_loglog(gammas, mean, se), mean, se


@dataclass
class PlateauReport:
    gammas: tuple
    unaveraged: tuple
    unaveraged_se: tuple
    averaged: tuple
    averaged_se: tuple

    @property
    def ratio_unaveraged(self) -> float:
        return self.unaveraged[0] / self.unaveraged[1]

    @property
    def ratio_averaged(self) -> float:
        return self.averaged[0] / self.averaged[1]


def plateau_ratios(model: ObjectiveModel, gamma: float, seed: int = 0, samples: int = 4_000_000,
                   chains: int | None = None) -> PlateauReport:
    """Long-run function-value gaps at ``gamma`` and ``gamma / 2``.

    Un-averaged plateau: ``E_pi f - f*``. Averaged plateau: ``f(mean_pi) - f*``,
    the limit of the averaged iterate's gap.
    """
    gs = np.array([gamma, gamma / 2])
    d = model.d

    def obs(theta):  # (B, 2, R, d)
        fg = model.value(theta) - model.f_star  # (B, 2, R)
        out = np.concatenate([fg[..., None], theta], axis=-1)  # (B, 2, R, 1+d)
        return np.moveaxis(out, 1, 2).reshape(theta.shape[0], theta.shape[2], 2 * (1 + d))

    mean, se, info = sample_stationary(model, gs, obs, 2 * (1 + d), samples, seed,
                                       chains=chains, purpose="plateau")
    mean = mean.reshape(2, 1 + d)
    se = se.reshape(2, 1 + d)
    una = tuple(float(v) for v in mean[:, 0])
    una_se = tuple(float(v) for v in se[:, 0])
    avg, avg_se = [], []
    for j in range(2):
        m = mean[j, 1:]
        gap = float(model.value(m) - model.f_star)
        grad = model.gradient(m)
        avg.append(gap)
        avg_se.append(float(np.sqrt(np.sum(grad**2 * se[j, 1:] ** 2))))
    return PlateauReport((float(gamma), float(gamma / 2)), una, una_se, tuple(avg), tuple(avg_se))
