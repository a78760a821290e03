"""Averaged SGD at two step sizes, their Richardson-Romberg combination and
a decaying-step baseline on the one-dimensional logistic instance.

Run: python3 demos/rr_vs_averaging.py
"""
import numpy as np

from sgdlab import run_decaying, run_rr
from sgdlab.chain import geometric_schedule, replicate_chain
from sgdlab.instances import l1

model = l1()
gamma = 1.0 / (2 * model.R2)
horizon, replicas = 100_000, 4
sched = geometric_schedule(horizon, ratio=10 ** 0.5)


def mean_gap(runs):
    return np.mean([t.fgap_avg for t in runs], axis=0)


def averaged(g):
    # all replicas advance together in one vectorized ensemble
    _, _, avg = replicate_chain(model, g, [0.0], horizon, replicas, sched, seed=1)
    return np.mean(model.value(avg) - model.f_star, axis=1)


curves = {
    f"averaged gamma={gamma:.3g}": averaged(gamma),
    f"averaged gamma={2 * gamma:.3g}": averaged(2 * gamma),
    "RR (2, -1)": mean_gap([run_rr(model, gamma, [0.0], horizon, seed=1, record_schedule=sched, replica=r)
                            for r in range(replicas)]),
    "decaying c/sqrt(k)": mean_gap([run_decaying(model, gamma, [0.0], horizon, seed=1, record_schedule=sched,
                                                 replica=r) for r in range(replicas)]),
}

print(f"{'n':>8} " + " ".join(f"{name:>22}" for name in curves))
for i, k in enumerate(sched):
    if k == 0:
        continue
    print(f"{int(k):>8} " + " ".join(f"{curves[name][i]:>22.3e}" for name in curves))
print("\nThe averaged curves level off at a gap of order gamma^2; the combination keeps decreasing.")
