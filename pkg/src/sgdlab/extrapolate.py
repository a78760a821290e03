"""Richardson-Romberg combinations of averaged iterates across step sizes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import Trajectory, check_step_size, run_members
from .models import ObjectiveModel

RR2_WEIGHTS = (2.0, -1.0)
RR3_WEIGHTS = (8.0 / 3.0, -2.0, 1.0 / 3.0)


@dataclass(frozen=True)
class RRScheme:
    """Step-size multipliers, affine weights and the coupling flag."""

    multipliers: tuple
    weights: tuple
    coupled: bool = True

    def __post_init__(self):
        if len(self.multipliers) != len(self.weights):
            raise ValueError("multipliers and weights differ in length")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    @classmethod
    def rr2(cls, coupled=True):
        return cls((1.0, 2.0), RR2_WEIGHTS, coupled)

    @classmethod
    def rr3(cls, coupled=True):
        return cls((1.0, 2.0, 4.0), RR3_WEIGHTS, coupled)

    @property
    def order(self) -> int:
        return len(self.weights)

    def step_sizes(self, gamma: float) -> np.ndarray:
        return gamma * np.asarray(self.multipliers, dtype=float)

    def combine(self, *members):
        if len(members) != self.order:
            raise ValueError(f"expected {self.order} inputs, got {len(members)}")
        arrs = [np.asarray(m, dtype=float) for m in members]
        shape = arrs[0].shape
        if any(a.shape != shape for a in arrs):
            raise ValueError("inputs must share a shape")
        out = np.zeros(shape)
        for wgt, a in zip(self.weights, arrs):
            out = out + wgt * a
        return out

    def combine_axis(self, arr, axis=0):
        """Combine along ``axis`` of a stacked array of member values."""
        arr = np.moveaxis(np.asarray(arr, dtype=float), axis, 0)
        return np.tensordot(np.asarray(self.weights), arr, axes=(0, 0))


def rr2_combine(avg_g, avg_2g):
    """``2 avg_g - avg_2g``."""
    return RRScheme.rr2().combine(avg_g, avg_2g)


def rr3_combine(avg_g, avg_2g, avg_4g):
    """``(8/3) avg_g - 2 avg_2g + (1/3) avg_4g``."""
    return RRScheme.rr3().combine(avg_g, avg_2g, avg_4g)


def run_rr(model: ObjectiveModel, gamma: float, theta0, horizon: int, seed: int = 0,
           scheme: RRScheme | None = None, record_schedule=None, replica: int = 0,
           return_members: bool = False):
    """Run the member chains of ``scheme`` in lockstep and record the combined iterate.

    The ``theta`` column of the result is the same affine combination of the
    last iterates, and ``avg`` is the extrapolated average.
    """
    scheme = scheme or RRScheme.rr2()
    gammas = scheme.step_sizes(gamma)
    check_step_size(model, gammas)
    theta0 = np.asarray(theta0, dtype=float).reshape(model.d)
    sched, rec = run_members(model, gammas, theta0, horizon, record_schedule, seed, replica,
                             coupled=scheme.coupled)
    theta = scheme.combine_axis(rec.theta_rec, axis=1)
    avg = scheme.combine_axis(rec.avg_rec, axis=1)
    meta = {"kind": f"rr{scheme.order}", "gamma": gamma,
            "multipliers": " ".join(f"{m:g}" for m in scheme.multipliers),
            "weights": " ".join(repr(w) for w in scheme.weights),
            "coupled": scheme.coupled, "seed": seed, "replica": replica, "horizon": horizon}
    traj = Trajectory.from_snapshots(model, sched, theta, avg, meta)
    if not return_members:
        return traj
    members = [Trajectory.from_snapshots(model, sched, rec.theta_rec[:, j], rec.avg_rec[:, j],
                                         {"kind": "constant", "gamma": g, "seed": seed})
               for j, g in enumerate(gammas)]
    return traj, members
