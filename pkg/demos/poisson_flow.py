"""Gradient flow, its Poisson solution and the weak-error leading term.

Run: python3 demos/poisson_flow.py
"""
import numpy as np

from sgdlab.flow import (generator_residual, h_hessian_at_opt, h_id_gradient_at_opt, integrate_flow,
                         poisson_h, weak_error_check)
from sgdlab.instances import l1, q1

lg = l1()
sol = integrate_flow(lg, [3.0], 5.0)
print("flow from 3.0 on the logistic instance: phi_5 =", f"{sol.states[-1, 0]:.6f}",
      "theta* =", f"{lg.theta_star[0]:.6f}")
print("h_Id(3.0) =", f"{poisson_h(lg, 'id', [3.0]).value[0]:.6f}")
print("grad h_Id(theta*) =", f"{h_id_gradient_at_opt(lg)[0, 0]:.6f}")
res = generator_residual(lg, "sqdist", [3.0], [0.5, 1.0, 2.0])
print("generator identity residuals:", np.array2string(res[:, 0], precision=2))

m = q1()
hpp = h_hessian_at_opt(m, "sqdist")
print("\nq1: h''(theta*) =", hpp[0, 0], "so the leading term is gamma/2 * tr(h'' C)")
rep = weak_error_check(m, "sqdist", [0.025, 0.05, 0.1, 0.2], horizon=20_000, replicas=500, seed=0)
for gm, mc, lead in zip(rep.gammas, rep.mc_value, rep.leading):
    print(f"  gamma={gm:<6} MC {mc:.5f}  leading {lead:.5f}  exact {gm / (2 - gm):.5f}")
print("remainder slope:", rep.fit.summary())
