"""Run a configured pipeline and write its artifacts to a directory.

Every command writes ``summary.json`` and ``manifest.json``; tables go to
CSV with 12 significant digits and figures to PNG alongside them.  Nothing
time-dependent is written, so a fixed config reproduces identical files.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .. import __version__
from ..asymptotics import approx_optimal_threshold, eagerness_curve, path_exponent, solve_exponents
from ..errors import ConfigError, QcdError
from ..metastable import induced_marginals, pomdp_costs, survival_curve
from ..optimizer import LinearClassSpec, cost_approx_theta, optimize_linear
from .config import ExperimentConfig, build_statistic, load_config, parse_config
from .exact import exact_cost_dp
from .simulate import mc_estimate_cost, mde_hitting_estimator, seed_manifest
from .sweep import sweep_threshold

COMMANDS = ("analyze", "simulate", "sweep", "optimize", "pomdp", "path")
SWEEP_COLUMNS = ("kappa", "H", "J_hat", "J_stderr", "MDD", "MDE", "censored")


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def _profile(cfg: ExperimentConfig):
    prof = solve_exponents(cfg.model, cfg.statistic, cfg.rho_a)
    return prof, eagerness_curve(prof)


def _profile_dict(prof, curve):
    return {
        "theta0": prof.theta0,
        "theta_plus": prof.theta_plus,
        "m0": prof.m0,
        "m1": prof.m1,
        "m_check0": prof.m_check0,
        "m_check_plus": prof.m_check_plus,
        "gamma2": curve.gamma2,
        "gamma2_curvature": curve.gamma2_curvature,
        "rho_a": prof.rho_a,
        "s_star": curve.s_star,
        "s0": curve.s0,
    }


def _thresholds(prof, curve, kappas):
    out = []
    for k in kappas:
        if k <= 1:
            out.append({"kappa": k, "note": "kappa <= 1: no positive threshold"})
            continue
        t = approx_optimal_threshold(prof, curve, k)
        out.append(
            {
                "kappa": k,
                "H_inf": t.H_inf,
                "H_one": t.H_one,
                "J_inf": t.J_inf,
                "b": t.b,
                "H_numeric": t.H_numeric,
                "J_numeric": t.J_numeric,
            }
        )
    return out


def _analyze(cfg, out, plots):
    prof, curve = _profile(cfg)
    summary = {"variant": cfg.model.variant, **_profile_dict(prof, curve)}
    summary["thresholds"] = _thresholds(prof, curve, cfg.kappas)
    files = {"summary.json": summary}
    if plots:
        from ..plotting import plot_eagerness

        plot_eagerness(curve, out / "eagerness.png")
    return files, []


def _simulate(cfg, out, plots):
    prof, curve = _profile(cfg)
    H = cfg.threshold_grid(prof.theta_plus)
    seeds = []
    rows, details = [], []
    if cfg.estimators.get("mc", True):
        ests = mc_estimate_cost(
            cfg.model,
            cfg.statistic,
            H,
            cfg.kappas,
            cfg.law,
            cfg.reps,
            cfg.seed,
            cfg.horizon_multiplier,
            cfg.block_size,
            cfg.workers,
        )
        seeds += [dict(s, estimator="mc") for s in seed_manifest(cfg.seed, cfg.reps, cfg.block_size)]
        for e in ests:
            rows.append((e.kappa, e.H, e.J, e.J_stderr, e.MDD, e.MDE, e.censored))
            details.append(dict(e.__dict__, censor_warning=e.censor_warning))
    exact = []
    if cfg.estimators.get("exact") and cfg.model.variant == "iid_discrete":
        for k in cfg.kappas:
            for h in H:
                exact.append(exact_cost_dp(cfg.model, cfg.statistic, h, k, cfg.law).__dict__)
    hitting = []
    if cfg.estimators.get("hitting"):
        tilt = bool(cfg.estimators.get("tilting"))
        for i, h in enumerate(H):
            est = mde_hitting_estimator(
                cfg.model, cfg.statistic, h, cfg.law, cfg.reps, cfg.seed + 1 + i, tilt, cfg.block_size
            )
            seeds += [
                dict(s, estimator="hitting", H=float(h)) for s in seed_manifest(cfg.seed + 1 + i, cfg.reps, cfg.block_size)
            ]
            hitting.append(dict(est.__dict__, H=float(h)))
    approx = [
        {"H": float(h), "MDE_approx": list(_approx_mde(curve, h))} for h in H
    ]
    summary = {
        "variant": cfg.model.variant,
        **_profile_dict(prof, curve),
        "mc": details,
        "exact": exact,
        "hitting": hitting,
        "approx": approx,
    }
    files = {"summary.json": summary}
    if rows:
        write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
        if plots:
            from ..plotting import plot_sweep
            from .sweep import KappaSummary, SweepRow

            srows = [SweepRow(*r) for r in rows]
            sums = []
            for k in cfg.kappas:
                pts = [r for r in srows if r.kappa == k]
                best = min(pts, key=lambda r: r.J_hat)
                H_inf = math.log(k) / prof.theta_plus if k > 1 else 0.0
                sums.append(KappaSummary(k, best.H, best.J_hat, (), H_inf, math.nan, 0.0, 0.0, 0.0, 0.0, 0.0))
            plot_sweep(srows, sums, out / "sweep.png")
    return files, seeds


def _approx_mde(curve, h):
    from ..asymptotics import approx_mde

    return approx_mde(curve, h)


def _sweep(cfg, out, plots):
    prof, _ = _profile(cfg)
    H = cfg.threshold_grid(prof.theta_plus)
    method = cfg.sweep_method
    rep = sweep_threshold(
        cfg.model,
        cfg.statistic,
        cfg.law,
        cfg.kappas,
        H,
        method=method,
        reps=cfg.reps,
        seed=cfg.seed,
        horizon_mult=cfg.horizon_multiplier,
        workers=cfg.workers,
        rho_a=cfg.rho_a,
    )
    rows = [(r.kappa, r.H, r.J_hat, r.J_stderr, r.MDD, r.MDE, r.censored) for r in rep.rows]
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    seeds = []
    if method == "mc":
        seeds = [dict(s, estimator="mc") for s in seed_manifest(cfg.seed, cfg.reps)]
    if plots:
        from ..plotting import plot_sweep

        plot_sweep(rep.rows, rep.summaries, out / "sweep.png")
    return {"summary.json": {"variant": cfg.model.variant, **rep.to_dict()}}, seeds


def _optimize(cfg, out, plots):
    spec = cfg.raw.get("class")
    if spec is None:
        raise ConfigError("class", "missing required key")
    basis = tuple(build_statistic(b, cfg.model, f"class.basis.{i}") for i, b in enumerate(spec["basis"]))
    try:
        cls = LinearClassSpec(basis, spec["v"])
        res = optimize_linear(cfg.model, cls, cfg.rho_a)
    except ConfigError:
        raise
    except QcdError as exc:
        if "class" in str(exc) or "v" in str(exc):
            raise ConfigError("class", str(exc)) from exc
        raise
    summary = {"variant": cfg.model.variant, "rho_a": cfg.rho_a, **res.to_dict()}
    summary["J_inf"] = [
        {"kappa": k, "J_inf": cost_approx_theta(cfg.model, cls, res.theta_star, k, cfg.rho_a)} for k in cfg.kappas
    ]
    return {"summary.json": summary}, []


def _pomdp(cfg, out, plots):
    model = cfg.model
    if model.variant != "pomdp":
        raise ConfigError("model.variant", "the pomdp command needs a pomdp model")
    rep = model.report
    surv_cfg = cfg.raw.get("survival", {})
    n_max = surv_cfg.get("n_max", 100)
    z = surv_cfg.get("z_init", model.z_init)
    curve = survival_curve(rep, z, n_max)
    pi0, pi1 = induced_marginals(rep, model.h, model.m)
    running, stopping = pomdp_costs(rep, cfg.kappas[0])
    summary = {
        "report": rep.to_dict(),
        "pi0": pi0,
        "pi1": pi1,
        "costs": {"kappa": cfg.kappas[0], "running": running, "stopping": stopping},
        "survival": {
            "z_init": z,
            "b0_fit": curve.b0_fit,
            "b0_exact": curve.b0_exact,
            "slope_a": curve.slope_a,
            "r2_a": curve.r2_a,
            "slope_b": curve.slope_b,
            "r2_b": curve.r2_b,
        },
    }
    try:
        prof, ecurve = _profile(cfg)
        summary["asymptotics"] = _profile_dict(prof, ecurve)
        summary["asymptotics"]["thresholds"] = _thresholds(prof, ecurve, cfg.kappas)
    except QcdError as exc:
        summary["asymptotics"] = {"error": str(exc)}
    header = ["n", "survival"] + [f"cond_{s}" for s in rep.X0]
    rows = [(int(n), curve.survival[n], *curve.conditional[n]) for n in curve.n]
    write_csv(out / "survival.csv", header, rows)
    if plots:
        from ..plotting import plot_survival

        plot_survival(curve.n, curve.survival, rep.lam, out / "survival.png")
    return {"summary.json": summary}, []


def _path(cfg, out, plots):
    prof, curve = _profile(cfg)
    T = cfg.raw.get("path", {}).get("T", curve.s_star)
    e0, mlp = path_exponent(prof, T)
    write_csv(out / "path.csv", ("t", "x"), zip(mlp.t, mlp.x))
    summary = {"T": T, "e0": e0, "t0": mlp.t0, "t1": mlp.t1, "slope": mlp.slope, "s_star": curve.s_star, "s0": curve.s0}
    if plots:
        from ..plotting import plot_path

        plot_path(mlp.t, mlp.x, out / "path.png", T)
    return {"summary.json": summary}, []


_RUNNERS = {
    "analyze": _analyze,
    "simulate": _simulate,
    "sweep": _sweep,
    "optimize": _optimize,
    "pomdp": _pomdp,
    "path": _path,
}


def run_experiment(config, out_dir, command=None, seed=None, reps=None, plots=True) -> Path:
    """Execute ``command`` (or the config's own) and return the artifact directory.

    ``config`` is a path to a JSON file or an already decoded dict.
    """
    cfg = load_config(config) if not isinstance(config, dict) else parse_config(config)
    command = command or cfg.command
    if command not in COMMANDS:
        raise ConfigError("command", f"expected one of {', '.join(COMMANDS)}")
    if seed is not None:
        cfg.seed = int(seed)
    if reps is not None:
        if reps < 1:
            raise ConfigError("reps", "must be >= 1")
        cfg.reps = int(reps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files, seeds = _RUNNERS[command](cfg, out, plots)
    for name, obj in files.items():
        write_json(out / name, obj)
    manifest = {
        "command": command,
        "version": __version__,
        "base_seed": cfg.seed,
        "reps": cfg.reps,
        "seeds": seeds,
        "config": cfg.raw,
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    }
    write_json(out / "manifest.json", manifest)
    return out
