"""The closed set of named experiments."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..chain import DivergenceError, Trajectory, geometric_schedule, run_decaying, run_members
from ..extrapolate import RR2_WEIGHTS
from ..flow import weak_error_check
from ..models import ObjectiveModel
from ..stationary import (coupling_contraction, estimate_stationary, fit_bias_scaling,
                          fit_k_scaling, moment_growth_check, second_moment_bound)
from ..tensorops import fourth_moment_radius, stationary_second_moment_lms
from .config import RunConfig
from .outputs import Outputs


def pmap(fn, items, workers: int = 1):
    """Map over independent tasks; results do not depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(_star, [(fn, it) for it in items]))


def _star(pair):
    fn, args = pair
    return fn(*args)


def _theta(cfg_value, default):
    return np.asarray(default if cfg_value is None else cfg_value, dtype=float)


# --- fig2 ---------------------------------------------------------------------

def _fig2_replica(model, gammas, theta0, horizon, seed, replica):
    sched = geometric_schedule(horizon)
    g_rr = min(gammas)
    members = sorted(set(gammas) | {2 * g_rr})
    _, rec = run_members(model, members, theta0, horizon, sched, seed, replica)
    trajs = {}
    for j, g in enumerate(members):
        trajs[g] = Trajectory.from_snapshots(model, sched, rec.theta_rec[:, j], rec.avg_rec[:, j],
                                             {"kind": "constant", "gamma": g, "seed": seed,
                                              "replica": replica})
    j1, j2 = members.index(g_rr), members.index(2 * g_rr)
    w1, w2 = RR2_WEIGHTS
    rr = Trajectory.from_snapshots(
        model, sched, w1 * rec.theta_rec[:, j1] + w2 * rec.theta_rec[:, j2],
        w1 * rec.avg_rec[:, j1] + w2 * rec.avg_rec[:, j2],
        {"kind": "rr2", "gamma": g_rr, "coupled": True, "seed": seed, "replica": replica})
    dec = run_decaying(model, 1.0 / (2 * model.R2), theta0, horizon, seed=seed,
                       record_schedule=sched, replica=replica)
    return sched, trajs, rr, dec


def fig2(cfg: RunConfig, model: ObjectiveModel, out: Outputs) -> dict:
    gammas = sorted(cfg.step_sizes(model), reverse=True)
    theta0 = _theta(cfg.theta0, np.zeros(model.d))
    runs = pmap(_fig2_replica, [(model, gammas, theta0, cfg.horizon, cfg.seed, r)
                                for r in range(cfg.replicas)], cfg.workers)
    sched = runs[0][0]
    curves = {}
    for g in gammas:
        curves[f"unaveraged gamma={g:.4g}"] = np.mean([r[1][g].fgap_theta for r in runs], axis=0)
        curves[f"averaged gamma={g:.4g}"] = np.mean([r[1][g].fgap_avg for r in runs], axis=0)
    curves[f"RR gamma={min(gammas):.4g}"] = np.mean([r[2].fgap_avg for r in runs], axis=0)
    curves["averaged decaying"] = np.mean([r[3].fgap_avg for r in runs], axis=0)
    names = list(curves)
    out.csv("fig2_curves.csv", ["k"] + [n.replace(" ", "_") for n in names],
            ([int(k)] + [curves[n][i] for n in names] for i, k in enumerate(sched)),
            {"experiment": "fig2", "replicas": cfg.replicas, "seed": cfg.seed})
    for g in gammas:
        out.trajectory(f"fig2_gamma_{g:.6g}.csv", runs[0][1][g])
    out.trajectory("fig2_rr.csv", runs[0][2])
    out.trajectory("fig2_decaying.csv", runs[0][3])
    mask = sched >= 1
    out.plot("fig2.svg", [(n, sched[mask], curves[n][mask]) for n in names],
             title=f"{model.name or model.kind}: function-value gap", xlabel="n", ylabel="f(theta) - f*")
    tail = slice(-max(3, len(sched) // 10), None)
    plateau = {n: float(np.mean(curves[n][tail])) for n in names}
    rr_name = f"RR gamma={min(gammas):.4g}"
    avg_names = [f"averaged gamma={g:.4g}" for g in gammas]
    return {"tail_mean_fgap": plateau,
            "rr_below_averaged": all(plateau[rr_name] < plateau[a] for a in avg_names),
            "rr_below_decaying": plateau[rr_name] < plateau["averaged decaying"]}


# --- stationary table ---------------------------------------------------------

def _stationary_task(model, gamma, seed, samples, chains):
    return estimate_stationary(model, gamma, seed=seed, samples=samples, chains=chains)


def stationary_table(cfg: RunConfig, model: ObjectiveModel, out: Outputs) -> dict:
    gammas = cfg.step_sizes(model)
    chains = cfg.replicas if cfg.replicas > 1 else None
    ests = pmap(_stationary_task, [(model, g, cfg.seed, cfg.horizon * cfg.replicas, chains)
                                   for g in gammas], cfg.workers)
    exact_ok = model.is_quadratic and model.lam == 0
    r2 = fourth_moment_radius(model) if exact_ok else None
    rows, summary = [], []
    for g, e in zip(gammas, ests):
        exact = float(np.trace(stationary_second_moment_lms(model, g))) if exact_ok and g <= 1 / r2 else float("nan")
        try:
            bound = second_moment_bound(model, g)
        except ValueError:
            bound = float("nan")
        bn, bse = e.bias_norm()
        within = bool(abs(e.trace - exact) <= 3 * e.trace_se) if np.isfinite(exact) else None
        rows.append([g, e.burn_in, e.samples, bn, bse, e.trace, e.trace_se, exact,
                     "" if within is None else within, bound, e.fourth, e.fourth_se, e.fgap, e.fgap_se,
                     float(np.trace(e.Cbar))])
        summary.append({"gamma": g, "trace": e.trace, "trace_se": e.trace_se, "exact": exact,
                        "within_3se": within, "bias_norm": bn, "bias_se": bse, "bound": bound})
    out.csv("stationary_table.csv",
            ["gamma", "burn_in", "samples", "bias_norm", "bias_se", "trace_m2", "trace_m2_se",
             "trace_m2_exact", "within_3se", "trace_m2_bound", "m4", "m4_se", "fgap", "fgap_se",
             "trace_cbar"], rows, {"experiment": "stationary-table", "seed": cfg.seed})
    return {"rows": summary}


# --- bias scaling -------------------------------------------------------------

def rr_bias_scaling(cfg: RunConfig, model: ObjectiveModel, out: Outputs) -> dict:
    gammas = np.array(sorted(cfg.step_sizes(model)))
    rep = fit_bias_scaling(model, gammas, seed=cfg.seed, samples=cfg.horizon * max(cfg.replicas, 1),
                           chains=cfg.replicas if cfg.replicas > 1 else None)
    info = rep.info
    out.csv("bias_scaling.csv",
            ["gamma", "single", "single_se", "rr2", "rr2_se", "rr3", "rr3_se"],
            ([g, info["single"][i], info["single_se"][i], info["rr2"][i], info["rr2_se"][i],
              info["rr3"][i], info["rr3_se"][i]] for i, g in enumerate(gammas)),
            {"experiment": "rr-bias-scaling", "seed": cfg.seed, "single": rep.single.summary(),
             "rr2": rep.rr2.summary()})
    out.plot("bias_scaling.svg", [("single", gammas, info["single"]), ("RR2", gammas, info["rr2"]),
                                  ("RR3", gammas, info["rr3"])],
             title="stationary bias vs step size", xlabel="gamma", ylabel="|bias|")
    return {"slope_single": rep.single.slope, "halfwidth_single": rep.single.halfwidth,
            "slope_rr2": rep.rr2.slope, "halfwidth_rr2": rep.rr2.halfwidth,
            "rr2_flagged": rep.rr2.flagged, "rr2_note": rep.rr2.note,
            "rr3_largest": float(rep.rr3_norm[-1]), "rr2_largest": info["rr2"][-1]}


# --- coupling -----------------------------------------------------------------

def _coupling_task(model, gamma, t1, t2, replicas, horizon, seed):
    return coupling_contraction(model, gamma, t1, t2, replicas, horizon, seed)


def coupling(cfg: RunConfig, model: ObjectiveModel, out: Outputs) -> dict:
    ts = model.theta_star
    t1 = _theta(cfg.theta0, ts + 1.0)
    t2 = _theta(cfg.theta1, ts - 1.0)
    gammas = cfg.step_sizes(model)
    res = pmap(_coupling_task, [(model, g, t1, t2, cfg.replicas, cfg.horizon, cfg.seed)
                                for g in gammas], cfg.workers)
    summary = []
    for g, r in zip(gammas, res):
        out.csv(f"coupling_gamma_{g:.6g}.csv", ["k", "D", "se", "bound"],
                zip(r.k, r.D, r.se, r.bound), {"gamma": g, "rho": r.rho, "rho_alt": r.rho_alt})
        summary.append({"gamma": g, "rho": r.rho, "rho_alt": r.rho_alt, "ok": r.ok,
                        "violations": r.violations().tolist()[:10]})
    out.plot("coupling.svg", [(f"gamma={g:.4g}", r.k[1:], r.D[1:]) for g, r in zip(gammas, res)]
             + [(f"bound gamma={g:.4g}", r.k[1:], r.bound[1:]) for g, r in zip(gammas, res)],
             title="coupled squared distance", xlabel="k", ylabel="D(k)")
    return {"rows": summary}


# --- k scaling ----------------------------------------------------------------

def _k_task(model, gamma, theta0, ks, replicas, seed):
    return fit_k_scaling(model, gamma, theta0, ks, replicas, seed)


def k_scaling(cfg: RunConfig, model: ObjectiveModel, out: Outputs) -> dict:
    theta0 = _theta(cfg.theta0, model.theta_star + 1.0)
    ks = np.unique(np.geomspace(10, cfg.horizon, 25).astype(np.int64))
    gammas = cfg.step_sizes(model)
    res = pmap(_k_task, [(model, g, theta0, ks, cfg.replicas, cfg.seed) for g in gammas], cfg.workers)
    summary = []
    for g, r in zip(gammas, res):
        rows = ([int(k)] + list(r.bias_mean[i]) + list(r.bias_se[i]) + [r.sq_err[i], r.sq_err_se[i]]
                for i, k in enumerate(r.k))
        d = model.d
        out.csv(f"k_scaling_gamma_{g:.6g}.csv",
                ["k"] + [f"bias{i}" for i in range(d)] + [f"bias_se{i}" for i in range(d)] + ["sq_err", "sq_err_se"],
                rows, {"gamma": g, "replicas": cfg.replicas})
        summary.append({"gamma": g, "bias_constant": r.bias_constant.tolist(),
                        "predicted_bias_constant": None if r.predicted_bias_constant is None
                        else r.predicted_bias_constant.tolist(),
                        "bias_slope": r.bias_fit.slope, "c1": r.c1, "c2": r.c2,
                        "variance_constant": r.variance_constant})
    out.plot("k_scaling.svg", [(f"|E avg - theta*| gamma={g:.4g}", r.k, np.linalg.norm(r.bias_mean, axis=1))
                               for g, r in zip(gammas, res)]
             + [(f"E|avg - target|^2 gamma={g:.4g}", r.k, r.sq_err) for g, r in zip(gammas, res)],
             title="averaged iterate error vs k", xlabel="k", ylabel="error")
    return {"rows": summary}


# --- weak error ---------------------------------------------------------------

def weak_error(cfg: RunConfig, model: ObjectiveModel, out: Outputs) -> dict:
    gammas = np.array(sorted(cfg.step_sizes(model)))
    rep = weak_error_check(model, cfg.g, gammas, cfg.theta0, cfg.horizon, cfg.replicas, cfg.seed)
    out.csv("weak_error.csv", ["gamma", "mc_value", "mc_se", "correction", "leading", "residual"],
            zip(gammas, rep.mc_value, rep.mc_se, rep.correction, rep.leading, rep.residual),
            {"g": rep.g, "leading_constant": rep.info["leading_constant"],
             "fit": rep.fit.summary() if rep.fit else "not fitted (fewer than 4 step sizes)"})
    out.plot("weak_error.svg", [("|MC - leading term|", gammas, rep.residual), ("leading term", gammas, rep.leading)],
             title=f"weak error, g={rep.g}", xlabel="gamma", ylabel="value")
    if rep.fit is None:
        return {"slope": None, "leading_constant": rep.info["leading_constant"]}
    return {"slope": rep.fit.slope, "halfwidth": rep.fit.halfwidth, "flagged": rep.fit.flagged,
            "leading_constant": rep.info["leading_constant"]}


# --- moment growth ------------------------------------------------------------

def moment_growth(cfg: RunConfig, model: ObjectiveModel, out: Outputs) -> dict:
    gammas = np.array(sorted(cfg.step_sizes(model)))
    samples = cfg.horizon * cfg.replicas
    chains = cfg.replicas if cfg.replicas > 1 else None
    summary, series = {}, []
    for p in (1, 2):
        fit, mean, se = moment_growth_check(model, gammas, p, cfg.seed, samples, chains)
        out.csv(f"moments_p{p}.csv", ["gamma", "moment", "se"], zip(gammas, mean, se),
                {"p": p, "fit": fit.summary()})
        series.append((f"E|theta - theta*|^{2 * p}", gammas, mean))
        summary[f"p{p}"] = {"slope": fit.slope, "halfwidth": fit.halfwidth, "flagged": fit.flagged}
    out.plot("moments.svg", series, title="stationary moments vs step size", xlabel="gamma", ylabel="moment")
    return summary


REGISTRY = {
    "fig2": fig2,
    "rr-bias-scaling": rr_bias_scaling,
    "stationary-table": stationary_table,
    "coupling": coupling,
    "k-scaling": k_scaling,
    "weak-error": weak_error,
    "moment-growth": moment_growth,
}


def run_experiment(cfg: RunConfig, model: ObjectiveModel | None = None):
    """Run one experiment; returns ``(exit_status, summary, out_dir)``.

    Divergence is recorded in the manifest and yields exit status 3; files
    written before the failure are kept.
    """
    model = cfg.validate(model)
    out = Outputs(cfg.out, cfg.plots)
    try:
        summary = REGISTRY[cfg.experiment](cfg, model, out)
        status, err, code = "ok", None, 0
    except DivergenceError as exc:
        summary, status, err, code = {}, "diverged", str(exc), 3
    out.manifest(cfg.echo(), model.constants(), status, summary, err)
    return code, summary, out.dir
