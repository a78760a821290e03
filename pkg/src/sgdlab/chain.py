"""The constant step-size SGD Markov chain, its running average, and the
decaying-step baseline."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .models import NoiseOracle, ObjectiveModel
from .rng import AtomStreams

DIVERGENCE_FACTOR = 1e6
DEFAULT_RATIO = 1.15


class DivergenceError(RuntimeError):
    """An iterate left the divergence guard ball or became non-finite."""

    def __init__(self, message, k=None, norm=None):
        super().__init__(message)
        self.k = k
        self.norm = norm


@dataclass(frozen=True)
class ChainState:
    theta: np.ndarray
    avg: np.ndarray
    k: int
    gamma: float

    @classmethod
    def start(cls, theta0, gamma):
        theta0 = np.array(theta0, dtype=float).reshape(-1)
        return cls(theta0, theta0.copy(), 0, float(gamma))


def check_step_size(model: ObjectiveModel, gamma) -> None:
    gammas = np.atleast_1d(np.asarray(gamma, dtype=float))
    if np.any(gammas <= 0) or np.any(gammas >= 2 / model.L):
        raise ValueError(f"step sizes must lie in (0, 2/L) = (0, {2 / model.L:.6g}); got {gammas}")


def sgd_step(state: ChainState, model: ObjectiveModel, noise: NoiseOracle) -> ChainState:
    """One SGD transition ``theta <- theta - gamma * f'_{k+1}(theta)``."""
    theta = state.theta - state.gamma * noise.gradient(state.theta)
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(f"non-finite iterate at step {state.k + 1}", k=state.k + 1)
    k = state.k + 1
    avg = state.avg + (theta - state.avg) / (k + 1)
    return replace(state, theta=theta, avg=avg, k=k)


def geometric_schedule(horizon: int, ratio: float = DEFAULT_RATIO) -> np.ndarray:
    """Step indices ``0, 1, ..., horizon`` thinned to a geometric grid."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if ratio <= 1:
        raise ValueError("ratio must exceed 1")
    pts = {0, horizon}
    k = 1.0
    while k < horizon:
        pts.add(int(round(k)))
        k = max(k * ratio, k + 1)
    return np.array(sorted(pts), dtype=np.int64)


class Ensemble:
    """Lockstep SGD chains: ``M`` members (step sizes) times ``R`` replicas.

    With ``coupled=True`` every member of a replica consumes the same atom
    draws; otherwise each member has its own stream. ``gammas`` may be a
    callable ``k -> (M,)`` giving the step used to produce ``theta_k``.
    """

    def __init__(self, model: ObjectiveModel, gammas, theta0, replicas=1, seed=0,
                 coupled=True, purpose="atoms", replica_offset=0, chunk=2048,
                 guard_radius=None):
        self.model = model
        if callable(gammas):
            self._gamma_fn: Callable | None = gammas
            M = len(np.atleast_1d(gammas(1)))
            self._gammas = None
        else:
            self._gamma_fn = None
            self._gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
            M = len(self._gammas)
        self.M = M
        self.R = int(replicas)
        theta0 = np.asarray(theta0, dtype=float)
        if theta0.ndim == 1:
            theta0 = np.broadcast_to(theta0, (M, self.R, model.d))
        elif theta0.ndim == 2:
            theta0 = np.broadcast_to(theta0[None], (M, self.R, model.d))
        self.theta = np.array(theta0, dtype=float)
        self.k = 0
        self.coupled = coupled
        ids = replica_offset + np.arange(self.R)
        if coupled:
            self._streams = AtomStreams(model, seed, ids, purpose)
        else:
            # one stream per (member, replica); member m uses ids shifted by m * 2**32
            self._streams = AtomStreams(model, seed, (np.arange(M)[:, None] * 2**32 + ids).ravel(), purpose)
        self.chunk = int(chunk)
        start_dev = float(np.max(np.linalg.norm(self.theta - model.theta_star, axis=-1), initial=0.0))
        self.guard_radius = (DIVERGENCE_FACTOR * (1 + start_dev)
                             if guard_radius is None else guard_radius)

    def _step_sizes(self, k):
        if self._gamma_fn is not None:
            return np.asarray(self._gamma_fn(k), dtype=float)[:, None, None]
        return self._gammas[:, None, None]

    def _check(self):
        dev = np.linalg.norm(self.theta - self.model.theta_star, axis=-1)
        bad = ~np.isfinite(dev) | (dev > self.guard_radius)
        if np.any(bad):
            m, r = np.argwhere(bad)[0]
            raise DivergenceError(
                f"chain diverged by step {self.k} (member {m}, replica {r}, "
                f"|theta - theta*| = {dev[m, r]:.3e} > {self.guard_radius:.3e})",
                k=self.k, norm=float(dev[m, r]))

    def advance(self, n: int, observe: Callable | None = None) -> None:
        """Take ``n`` steps; ``observe(k, theta)`` is called after each one."""
        model = self.model
        done = 0
        with np.errstate(over="ignore", invalid="ignore"):
            while done < n:
                m = min(self.chunk, n - done)
                idx = self._streams.next(m)
                if not self.coupled:
                    idx = idx.reshape(m, self.M, self.R)
                gam = self._gammas[:, None, None] if self._gamma_fn is None else None
                for j in range(m):
                    self.k += 1
                    g = gam if gam is not None else self._step_sizes(self.k)
                    self.theta -= g * model.sample_gradients(self.theta, idx[j])
                    if observe is not None:
                        observe(self.k, self.theta)
                done += m
                self._check()


@dataclass
class Trajectory:
    """Recorded snapshots of one chain."""

    k: np.ndarray
    theta: np.ndarray
    avg: np.ndarray
    fgap_theta: np.ndarray
    fgap_avg: np.ndarray
    dist2_theta: np.ndarray
    dist2_avg: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_snapshots(cls, model, k, theta, avg, meta=None):
        theta = np.asarray(theta, dtype=float)
        avg = np.asarray(avg, dtype=float)
        ts = model.theta_star
        return cls(
            k=np.asarray(k, dtype=np.int64),
            theta=theta,
            avg=avg,
            fgap_theta=np.maximum(model.value(theta) - model.f_star, 0.0),
            fgap_avg=np.maximum(model.value(avg) - model.f_star, 0.0),
            dist2_theta=np.sum((theta - ts) ** 2, axis=-1),
            dist2_avg=np.sum((avg - ts) ** 2, axis=-1),
            meta=dict(meta or {}),
        )

    def __len__(self):
        return len(self.k)

    def header(self):
        d = self.theta.shape[1]
        return (["k"] + [f"theta{i}" for i in range(d)] + [f"avg{i}" for i in range(d)]
                + ["fgap_theta", "fgap_avg", "dist2_theta", "dist2_avg"])

    def rows(self):
        for i in range(len(self.k)):
            yield ([int(self.k[i])] + [repr(float(v)) for v in self.theta[i]]
                   + [repr(float(v)) for v in self.avg[i]]
                   + [repr(float(self.fgap_theta[i])), repr(float(self.fgap_avg[i])),
                      repr(float(self.dist2_theta[i])), repr(float(self.dist2_avg[i]))])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for key, val in self.meta.items():
                fh.write(f"# {key}: {val}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            writer.writerows(self.rows())


def read_trajectory_csv(path):
    """Parse a trajectory CSV back into ``(meta, header, float array)``."""
    meta, rows, header = {}, [], None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(":")
                meta[key.strip()] = val.strip()
            elif header is None:
                header = line.split(",")
            elif line:
                rows.append([float(v) for v in line.split(",")])
    return meta, header, np.array(rows)


class _Recorder:
    """Per-step running averages of ``M`` members, snapshots on a schedule."""

    def __init__(self, theta0, schedule):
        self.schedule = np.asarray(schedule, dtype=np.int64)
        self.avg = np.array(theta0, dtype=float)
        n = len(self.schedule)
        self.theta_rec = np.empty((n,) + self.avg.shape)
        self.avg_rec = np.empty((n,) + self.avg.shape)
        self.pos = 0
        self._take(0, self.avg)

    def _take(self, k, theta):
        while self.pos < len(self.schedule) and self.schedule[self.pos] == k:
            self.theta_rec[self.pos] = theta
            self.avg_rec[self.pos] = self.avg
            self.pos += 1

    def __call__(self, k, theta):
        self.avg += (theta - self.avg) / (k + 1)
        if self.pos < len(self.schedule) and self.schedule[self.pos] == k:
            self._take(k, theta)


def _schedule(horizon, record_schedule):
    if record_schedule is None:
        return geometric_schedule(horizon)
    if isinstance(record_schedule, (int, float)) and not isinstance(record_schedule, bool):
        return geometric_schedule(horizon, float(record_schedule))
    sched = np.unique(np.asarray(record_schedule, dtype=np.int64))
    if sched.size == 0 or sched[0] < 0 or sched[-1] > horizon:
        raise ValueError("record schedule must lie within [0, horizon]")
    return sched


def run_members(model, gammas, theta0, horizon, record_schedule=None, seed=0, replica=0,
                coupled=True):
    """Run lockstep members of one replica; returns the recorder (shape ``(n, M, d)``)."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    sched = _schedule(horizon, record_schedule)
    ens = Ensemble(model, gammas, theta0, replicas=1, seed=seed, coupled=coupled,
                   replica_offset=replica)
    rec = _Recorder(ens.theta[:, 0, :], sched)
    ens.advance(int(horizon), lambda k, th: rec(k, th[:, 0, :]))
    return sched, rec


def run_chain(model: ObjectiveModel, gamma: float, theta0, horizon: int,
              record_schedule=None, seed: int = 0, replica: int = 0) -> Trajectory:
    """Constant step-size SGD from ``theta0`` for ``horizon`` steps.

    ``record_schedule`` is an explicit list of step indices, a geometric ratio,
    or ``None`` for the default geometric grid. Identical arguments give
    bit-identical trajectories.
    """
    check_step_size(model, gamma)
    theta0 = np.asarray(theta0, dtype=float).reshape(model.d)
    sched, rec = run_members(model, [gamma], theta0, horizon, record_schedule, seed, replica)
    meta = {"kind": "constant", "gamma": gamma, "seed": seed, "replica": replica,
            "horizon": horizon}
    return Trajectory.from_snapshots(model, sched, rec.theta_rec[:, 0], rec.avg_rec[:, 0], meta)


def decaying_step(c: float, k) -> np.ndarray:
    """Step size ``c / sqrt(k)`` used to produce iterate ``k >= 1``."""
    k = np.asarray(k, dtype=float)
    if np.any(k < 1):
        raise ValueError("decaying steps are defined for k >= 1")
    return c / np.sqrt(k)


def run_decaying(model: ObjectiveModel, c: float, theta0, horizon: int, seed: int = 0,
                 record_schedule=None, replica: int = 0) -> Trajectory:
    if c <= 0:
        raise ValueError("c must be positive")
    theta0 = np.asarray(theta0, dtype=float).reshape(model.d)
    sched, rec = run_members(model, lambda k: np.array([c / math.sqrt(k)]), theta0, horizon,
                             record_schedule, seed, replica)
    meta = {"kind": "decaying", "c": c, "seed": seed, "replica": replica, "horizon": horizon}
    return Trajectory.from_snapshots(model, sched, rec.theta_rec[:, 0], rec.avg_rec[:, 0], meta)


def replicate_chain(model: ObjectiveModel, gamma: float, theta0, horizon: int, replicas: int,
                    record_schedule=None, seed: int = 0, replica_offset: int = 0):
    """Independent replicas of the chain; returns ``(k, theta, avg)`` with
    ``theta`` and ``avg`` of shape ``(n_records, replicas, d)``.

    ``theta0`` may be a single point or one starting point per replica.
    """
    check_step_size(model, gamma)
    sched = _schedule(horizon, record_schedule)
    ens = Ensemble(model, [gamma], np.asarray(theta0, dtype=float), replicas=replicas,
                   seed=seed, replica_offset=replica_offset)
    rec = _Recorder(ens.theta[0], sched)
    ens.advance(int(horizon), lambda k, th: rec(k, th[0]))
    return sched, rec.theta_rec, rec.avg_rec
