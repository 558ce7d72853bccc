"""Experiment runners: one function per experiment kind.

Each runner takes a resolved config and an :class:`Output` sink, writes its
CSV/JSON artifacts through the sink (atomically, recorded in the manifest)
and returns a JSON-able summary.  Every random draw descends from
``StreamKey(cfg["seed"])``, so outputs depend only on the config.
"""

from __future__ import annotations

import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .clss import CLSSConfig, clss_run
from .config import config_digest, dump_config
from .errors import ParameterError
from .es import ESConfig, run_ensemble, run_es
from .landscape import DoubleWellLandscape, QuadraticLandscape, landscape_from_config
from .metastability import (KramersSetup, classify_regime, first_passage_times, hop_probability,
                            kramers_escape_iters, simulate_double_well)
from .ou import effective_dimension, ou_trajectory, peak_time_general, plateau_slope_curve
from .probes import (bootstrap_se, generate_batch, saturation_population, summarize_best_of_n,
                     tail_statistics)
from .slq import MatVecOperator, density_metrics, hvp_from_objective, spectral_metrics, slq_quadrature
from .stochastics import StreamKey

__all__ = ["Output", "RUNNERS", "run_experiment", "initial_point", "fraction_within"]


class Output:
    """Artifact sink rooted at one directory; tracks the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = io.Manifest(self.root)

    def csv(self, name, header, rows, producer, comment=None):
        io.write_csv(self.root / name, header, rows, comment)
        self.manifest.add(name, producer)

    def json(self, name, obj, producer):
        io.write_json(self.root / name, obj)
        self.manifest.add(name, producer)

    def text(self, name, text, producer):
        io.atomic_write_text(self.root / name, text)
        self.manifest.add(name, producer)


def initial_point(land, params):
    """Start point: explicit ``x0`` or stiff/flat fill in the eigenbasis.

    Stiff coordinates are those whose curvature equals the largest
    eigenvalue; the rest are flat.
    """
    D = land.dimension
    if params.get("x0") is not None:
        x0 = np.asarray(params["x0"], dtype=float)
        if x0.shape != (D,):
            raise ParameterError(f"params.x0 must have length {D}")
        return x0
    if isinstance(land, QuadraticLandscape):
        lam = land.spectrum.values
        x = np.where(lam == lam.max(), params["x0_stiff"], params["x0_flat"]).astype(float)
        return x
    if isinstance(land, DoubleWellLandscape):
        x = np.zeros(D)
        x[0] = -land.a
        return x
    return np.zeros(D)


def fraction_within(sim, se, ref, tol):
    """Share of time points with |sim - ref| <= tol * se (a tiny floor admits exact ties)."""
    sim, se, ref = map(np.asarray, (sim, se, ref))
    ok = np.abs(sim - ref) <= tol * se + 1e-12 * np.maximum(1.0, np.abs(ref))
    return float(ok.mean()), ok


def _root(cfg):
    return StreamKey(cfg["seed"])


def _traj_rows(rewards, se, gnorm, source, evals=None):
    T = len(rewards) - 1
    rows = []
    for t in range(T + 1):
        row = [t]
        if evals is not None:
            row.append(t * evals)
        row += [float(rewards[t]), float(se[t]), float(gnorm[t]), source]
        rows.append(row)
    return rows


def _traj_header(evals):
    return ["iteration"] + (["evaluations"] if evals else []) + ["reward", "reward_se", "grad_norm", "source"]


def run_es_experiment(cfg, out: Output, workers=1):
    p = cfg["params"]
    land = landscape_from_config(cfg["landscape"])
    es_cfg = ESConfig(p["alpha"], p["sigma"], p["N"], p["T"], p["G"], p["antithetic"], p["baseline"],
                      p["estimator"], p["record_every"])
    x0 = initial_point(land, p)
    theta0 = land.from_eigenbasis(x0) if isinstance(land, QuadraticLandscape) else x0
    keys = [_root(cfg).child("rep", r) for r in range(p["replicates"])]
    tag = f"{config_digest(cfg)}_s{cfg['seed']}"
    if p["replicates"] == 1:
        tr = run_es(land, theta0, es_cfg, keys[0])
        rewards, se, gn = tr.rewards, np.zeros(len(tr)), tr.grad_norms
        meta = tr.metadata()
        out.csv(f"thetas_{tag}.csv", ["iteration"] + [f"theta{i}" for i in range(land.dimension)],
                [[int(t)] + row.tolist() for t, row in zip(tr.theta_iters, tr.thetas)], "es_core")
    else:
        ens = run_ensemble(land, theta0, es_cfg, keys, workers=workers)
        rewards, se, gn = ens.mean, ens.se, ens.grad_norm_mean
        meta = {"config": asdict(es_cfg), "landscape": land.describe(), "replicates": p["replicates"],
                "rewards_clean": True, "length": int(rewards.size)}
    meta["stream_key"] = _root(cfg).as_dict()
    meta["config_hash"] = config_digest(cfg)
    out.csv(f"trajectory_{tag}.csv", _traj_header(False), _traj_rows(rewards, se, gn, "simulated"), "es_core")
    out.json(f"trajectory_{tag}.json", meta, "es_core")
    return {"final_reward": float(rewards[-1]), "initial_reward": float(rewards[0]), "length": int(rewards.size)}


def run_ou_compare(cfg, out: Output, workers=1):
    p = cfg["params"]
    land = landscape_from_config(cfg["landscape"])
    if not isinstance(land, QuadraticLandscape):
        raise ParameterError("landscape: ou_compare needs a quadratic landscape")
    lam = land.spectrum.values
    x0 = initial_point(land, p)
    theta0 = land.from_eigenbasis(x0)
    T, tol = p["T"], p["se_tolerance"]
    summary = {"per_N": {}}
    for N in p["Ns"]:
        es_cfg = ESConfig(p["alpha"], p["sigma"], N, T, estimator="noisy_gradient", record_every=max(T, 1))
        keys = [_root(cfg).child("N", N).child("rep", r) for r in range(p["replicates"])]
        ens = run_ensemble(land, theta0, es_cfg, keys, workers=workers)
        pred = ou_trajectory(lam, x0, p["alpha"], p["sigma"], N, T, peak=land.peak)
        evals = N if p["x_axis"] == "evaluations" else None
        out.csv(f"simulated_N{N}.csv", _traj_header(evals),
                _traj_rows(ens.mean, ens.se, ens.grad_norm_mean, "simulated", evals), "es_core")
        out.csv(f"analytic_N{N}.csv", _traj_header(evals),
                _traj_rows(pred.expected_reward, np.zeros(T + 1), np.full(T + 1, np.nan), "analytic", evals),
                "ou_analytics")
        frac, _ = fraction_within(ens.mean, ens.se, pred.expected_reward, tol)
        tail = ens.rewards[:, T + 1 - p["tail"]:].mean(axis=1)
        summary["per_N"][str(N)] = {
            "fraction_within": frac,
            "max_abs_gap": float(np.abs(ens.mean - pred.expected_reward).max()),
            "J_inf": pred.J_inf,
            "tail_mean": float(tail.mean()),
            "tail_se": float(tail.std(ddof=1) / math.sqrt(tail.size)) if tail.size > 1 else 0.0,
            "t_peak_analytic": peak_time_general(pred),
            "argmax_simulated": int(np.argmax(ens.mean)),
        }
    summary["se_tolerance"] = tol
    summary["min_fraction"] = p["min_fraction"]
    return summary


def run_spectroscopy(cfg, out: Output, workers=1):
    p = cfg["params"]
    land = landscape_from_config(cfg["landscape"])
    if not isinstance(land, QuadraticLandscape):
        raise ParameterError("landscape: spectroscopy needs a quadratic landscape")
    series = [("landscape", None, land.spectrum.values)]
    for d in p["ranks"]:
        if d > p["rank_D"]:
            raise ParameterError(f"params.ranks: rank {d} exceeds rank_D={p['rank_D']}")
        series.append((f"rank{d}", d, np.r_[np.full(d, p["rank_lam"]), np.zeros(p["rank_D"] - d)]))
    rows, summary = [], {"series": {}}
    for name, d, lam in series:
        pts = plateau_slope_curve(lam, p["alpha"], p["sigma"], p["Ns"])
        k = np.array([q[0] for q in pts])
        g = np.array([q[1] for q in pts])
        slope = float((k @ g) / (k @ k))
        resid = g - slope * k
        ss_tot = float(((g - g.mean()) ** 2).sum())
        r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
        deff = effective_dimension(lam, p["alpha"])
        summary["series"][name] = {"rank": d, "slope": slope, "r2_through_origin": r2, "d_eff": deff,
                                   "slope_identity_error": abs(slope - p["alpha"] / 4 * deff)}
        for N, (kk, gg) in zip(p["Ns"], pts):
            rows.append([name, -1 if d is None else d, N, kk, gg])
    out.csv("plateau_slope.csv", ["series", "rank", "N", "kappa", "gap"], rows, "ou_analytics")
    return summary


def _theta_star(land, value):
    if value is not None:
        th = np.asarray(value, dtype=float)
        if th.shape != (land.dimension,):
            raise ParameterError(f"params.theta_star must have length {land.dimension}")
        return th
    if isinstance(land, QuadraticLandscape):
        return land.offset.copy()
    if isinstance(land, DoubleWellLandscape):
        th = np.zeros(land.dimension)
        th[0] = -land.a
        return th
    return np.zeros(land.dimension)


def run_clss(cfg, out: Output, workers=1):
    p = cfg["params"]
    land = landscape_from_config(cfg["landscape"])
    ccfg = CLSSConfig(p["sigma"], tuple(p["alphas"]), tuple(p["Ns"]), p["T"], p["w"], p["R"], p["tau_loc"],
                      p["tau_stat"], p["R_min"], p["fit_count"], p["r2_min"], p["accept_min"], p["loc_curvature"])
    theta_star = _theta_star(land, p["theta_star"])
    res = clss_run(land, theta_star, ccfg, _root(cfg))
    report = {"config": ccfg.as_dict(), "artifact_defaults": {
        "tau_loc": "5*sqrt(D*v) with v the stationary variance at the reference curvature" if p["tau_loc"] is None
        else "explicit",
        "tau_stat": "2 x autocorrelation-aware SE of the last window mean" if p["tau_stat"] is None else "explicit",
        "gate": f"R^2 >= {p['r2_min']} and per-N acceptance >= {p['accept_min']}"}, "fits": []}
    pts_rows, pl_rows = [], []
    for alpha, (fit, probes) in res.items():
        entry = fit.as_dict()
        entry["probes"] = [{"N": q.N, "plateau": q.value, "se": q.se, "n_valid": q.n_valid,
                            "acceptance": q.acceptance, "tau_loc": q.tau_loc, "seeds": q.seeds} for q in probes]
        if isinstance(land, QuadraticLandscape):
            try:
                entry["d_eff_exact"] = effective_dimension(land.spectrum, alpha)
            except ParameterError:
                entry["d_eff_exact"] = None
        report["fits"].append(entry)
        for k, g in fit.points:
            pts_rows.append([alpha, k, g])
        for q in probes:
            pl_rows.append([alpha, q.N, p["sigma"] ** 2 / q.N, q.value, q.se, q.n_valid, q.acceptance])
    out.json("clss_report.json", report, "clss")
    out.csv("clss_points.csv", ["alpha", "kappa", "gap"], pts_rows, "clss")
    out.csv("clss_plateaus.csv", ["alpha", "N", "kappa", "plateau", "se", "n_valid", "acceptance"], pl_rows, "clss")
    return {"status": {str(a): f.status for a, (f, _) in res.items()},
            "d_eff_hat": {str(a): f.d_eff_hat for a, (f, _) in res.items()}}


def exact_metrics(eigenvalues):
    lam = np.asarray(eigenvalues, dtype=float)
    return density_metrics(lam, np.full(lam.size, 1.0 / lam.size), lam.size)


def run_slq_metrics(cfg, out: Output, workers=1):
    p = cfg["params"]
    land = landscape_from_config(cfg["landscape"])
    theta = np.zeros(land.dimension) if p["theta"] is None else np.asarray(p["theta"], dtype=float)
    hvp = hvp_from_objective(land, theta, p["sigma_fd"])
    op = hvp if p["operator"] == "hessian" else MatVecOperator(lambda v: -hvp.apply(v), land.dimension, "curvature")
    key = _root(cfg)
    metrics = spectral_metrics(op, p["s"], p["m"], key, p["seeds"], p["probe"])
    rows = []
    for r in range(p["seeds"]):
        quad = slq_quadrature(op, p["s"], p["m"], key.child("seed", r), p["probe"], check_symmetry=False)
        for j, (th, w) in enumerate(zip(quad.nodes, quad.weights)):
            for k in range(th.size):
                rows.append([r, j, k, float(th[k]), float(w[k]), float(quad.znorm2[j])])
    out.csv("ritz_nodes.csv", ["seed", "probe", "k", "node", "weight", "znorm2"], rows, "slq")
    summary = {"metrics": metrics.as_dict(), "operator": p["operator"], "dimension": land.dimension}
    if isinstance(land, QuadraticLandscape):
        lam = land.spectrum.values
        summary["exact"] = exact_metrics(lam if p["operator"] == "curvature" else -lam)
    out.json("slq_metrics.json", summary, "slq")
    return {k: summary["metrics"][k] for k in ("lambda_min", "negative_mass", "participation_ratio",
                                                "effective_rank")}


def double_well_setup(cfg) -> KramersSetup:
    p = cfg["params"]
    land = landscape_from_config(cfg["landscape"])
    if not isinstance(land, DoubleWellLandscape):
        raise ParameterError("landscape: double_well experiment needs a double_well landscape")
    kw = dict(T=p["T"], replicates=p["replicates"], hysteresis=p["hysteresis"], start=float(p["start"]))
    if p["sigma"] is not None:
        return KramersSetup(land, p["alpha"], p["sigma"], p["N"], **kw)
    eps = land.barrier / p["ratio"]
    return KramersSetup(land, p["alpha"], math.sqrt(2.0 * p["N"] * eps / p["alpha"]), p["N"], **kw)


def run_double_well(cfg, out: Output, workers=1):
    p = cfg["params"]
    setup = double_well_setup(cfg)
    key = _root(cfg)
    run = simulate_double_well(setup, key, p["record_replicates"], p["record_every"], p["bins"], workers)
    rows = []
    for r in range(run.trajectories.shape[0]):
        for t, x in zip(run.traj_iters, run.trajectories[r]):
            rows.append([r, int(t), float(x)])
    out.csv("trajectories.csv", ["replicate", "iteration", "x"], rows, "metastability")
    e = run.hist_edges
    out.csv("histogram.csv", ["bin_left", "bin_right", "count"],
            [[float(e[i]), float(e[i + 1]), int(c)] for i, c in enumerate(run.hist_counts)], "metastability")
    pred = kramers_escape_iters(setup)
    ph, lin = hop_probability(setup)
    summary = {"hop": run.record.summary(), "imbalance": run.imbalance, "predicted_escape_iters": pred.expected_iters,
               "prefactor": pred.prefactor, "barrier_over_eps": pred.exponent, "kramers_valid": pred.valid,
               "predicted_hop_probability": ph, "linearized_hop_probability": lin,
               "regime": classify_regime(setup), "eps": setup.eps, "sigma": setup.sigma, "N": setup.N,
               "alpha": setup.alpha, "T": setup.T}
    if p["mfpt"]:
        fp = first_passage_times(setup, key.child("mfpt"), p["mfpt_max_iters"], workers)
        summary["first_passage"] = fp.summary()
    out.json("double_well_summary.json", summary, "metastability")
    return {"hop_fraction": run.record.hop_fraction, "regime": summary["regime"], "imbalance": run.imbalance}


def run_best_of_n(cfg, out: Output, workers=1):
    p = cfg["params"]
    land = landscape_from_config(cfg["landscape"])
    D = land.dimension
    theta = np.zeros(D)
    fill = np.asarray(p["theta"] if p["theta"] is not None else [], dtype=float)
    if fill.size > D:
        raise ParameterError(f"params.theta has more than {D} entries")
    theta[: fill.size] = fill
    key = _root(cfg)
    batches = [generate_batch(land, theta, p["sigma"], p["M"], key.child("batch", s), s, p["group_size"])
               for s in range(p["S"])]
    rows = [[b.index, j, float(d)] for b in batches for j, d in enumerate(b.deltas)]
    out.csv("batches.csv", ["batch", "candidate", "delta"], rows, "probes")
    N_list = [n for n in p["N_list"] if n <= min(b.M for b in batches)]
    est = summarize_best_of_n(batches, N_list, p["R0"], p["subset_samples"], key.child("subsets"))
    pooled = np.concatenate([b.deltas for b in batches])
    tails, p_imp = [], []
    for b in batches:
        try:
            tails.append(tail_statistics(b, p["level"]).quantile)
        except ParameterError:
            tails.append(None)
        p_imp.append(float(np.mean(b.deltas > 0)))
    b0 = batches[0]
    summary = {
        "best_of_n": est.as_dict(),
        "N90": saturation_population(est),
        "q_level": p["level"],
        "tail_quantile_per_batch": tails,
        "p_improve_per_batch": p_imp,
        "p_improve": float(np.mean(pooled > 0)),
        "p_improve_se": math.sqrt(np.mean(pooled > 0) * (1 - np.mean(pooled > 0)) / pooled.size),
        "bootstrap_se_p_improve_batch0": bootstrap_se(b0, lambda x: np.mean(x > 0), p["bootstrap"],
                                                      key.child("bootstrap")),
        "baselines": [b.R0 for b in batches],
        "excluded": [b.excluded for b in batches],
        "theta": theta.tolist(),
        "sigma": p["sigma"],
    }
    out.json("best_of_n_summary.json", summary, "probes")
    return {"N90": summary["N90"], "p_improve": summary["p_improve"]}


RUNNERS = {
    "es_run": run_es_experiment,
    "ou_compare": run_ou_compare,
    "spectroscopy": run_spectroscopy,
    "clss": run_clss,
    "slq_metrics": run_slq_metrics,
    "double_well": run_double_well,
    "best_of_n": run_best_of_n,
}


def run_experiment(cfg: dict, outdir, workers=1) -> dict:
    """Run a resolved config into ``outdir``; returns the summary (also written)."""
    out = Output(outdir)
    # the output location is not part of the run's content, so it is not echoed
    echoed = {k: v for k, v in cfg.items() if k != "output_dir"}
    out.text("resolved_config.yaml", dump_config(echoed), "cli")
    summary = RUNNERS[cfg["experiment"]](cfg, out, workers)
    out.json("summary.json", {"experiment": cfg["experiment"], "seed": cfg["seed"],
                              "config_hash": config_digest(cfg), "summary": summary}, "cli")
    out.manifest.write()
    return summary
