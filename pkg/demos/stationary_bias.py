"""Stationary bias of constant-step SGD.

On least squares the stationary mean is the optimum. On logistic regression
it is off by about gamma * Delta, and combining two step sizes removes that
first-order term.

Run: python3 demos/stationary_bias.py
"""
import numpy as np

from sgdlab.instances import l1, lms3
from sgdlab.stationary import estimate_stationary, fit_bias_scaling
from sgdlab.tensorops import bias_constant_delta, stationary_second_moment_lms

ls = lms3()
g = 0.1
est = estimate_stationary(ls, g, seed=0, samples=1_000_000)
print("least squares, gamma = 0.1")
print("  |mean - theta*| =", f"{np.linalg.norm(est.mean - ls.theta_star):.2e}",
      "(SE", f"{np.linalg.norm(est.mean_se):.2e})")
print("  trace of second moment: MC", f"{est.trace:.5f} +/- {est.trace_se:.1e}",
      "exact", f"{np.trace(stationary_second_moment_lms(ls, g)):.5f}")

lg = l1()
delta = bias_constant_delta(lg)[0]
gammas = np.array([0.05, 0.1, 0.2, 0.4]) / lg.L
rep = fit_bias_scaling(lg, gammas, seed=0, samples=4_000_000)
print("\nlogistic, first-order constant Delta =", f"{delta:.5f}")
print(f"{'gamma':>10} {'|bias|':>10} {'gamma*|Delta|':>14} {'|RR2 bias|':>12} {'SE':>9}")
for i, gm in enumerate(gammas):
    print(f"{gm:>10.4f} {rep.info['single'][i]:>10.2e} {gm * abs(delta):>14.2e} "
          f"{rep.info['rr2'][i]:>12.2e} {rep.info['rr2_se'][i]:>9.1e}")
print("single step-size slope:", rep.single.summary())
print("two-step combination:  ", rep.rr2.summary())
