"""Command-line front end.

Every command writes a data table (CSV with a header row, or JSON) and a JSON
summary. With ``--out PATH`` the table goes to PATH and the summary to PATH
with the suffix ``.summary.json``; otherwise the table goes to stdout and the
summary to stderr.

Exit status: 0 on success, 2 for configuration errors, 1 when a checked
invariant fails (each failure is named on stderr and in the summary).
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import build_config, read_settings
from .coupling import absorption_violation, run_coupled_uniforms
from .errors import ConfigurationError, InconsistentInputError, InsufficientDataError, SemimixError
from .mixing import estimate_beta, fit_subgeometric_rate, verify_coalescence_lemma
from .models import (
    ChainState,
    counterexample_recover,
    drift_check,
    drift_inequalities,
    drift_probe_states,
    reconstruct_intensity,
    simulate_path,
    spec_drift_constants,
    stationary_draw,
)
from .parallel import WORKERS_ENV, resolve_workers
from .rng import derive_stream, open_uniforms

RECON_ULPS = 64
RECOVERY_TOL = 1e-10

COLUMNS = {
    "simulate": ("t", "y", "lambda"),
    "couple": ("t", "y", "y_prime", "hit", "lambda", "lambda_prime", "gap"),
    "coalescence-lemma": (
        "target_gap", "gap", "bound", "frequency", "se", "ci_lo", "ci_hi", "max_gap_ratio", "frequency_ok", "gap_sum_ok",
    ),
    "mixing-rate": ("n", "beta_hat", "ci_lo", "ci_hi"),
    "drift-check": ("probe", "level", "mean", "se", "bound", "ok"),
    "reconstruct": ("path", "k", "lambda", "lambda_hat", "error", "bound"),
    "counterexample": ("t", "lambda", "y_prev", "lambda_prev", "y_rec", "lambda_rec", "lambda_err"),
}


class Outcome:
    def __init__(self, rows, results, violations=()):
        self.rows = rows
        self.results = results
        self.violations = list(violations)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return "%.17g" % float(v)


def _plain(v):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    return v


def format_csv(columns, rows) -> str:
    lines = [",".join(columns)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def format_json(columns, rows) -> str:
    return json.dumps({"columns": list(columns), "rows": _plain(rows)}, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# commands


def _init_state(spec, lam0):
    return ChainState(tuple([0.0] * spec.p), tuple([float(lam0 or 0.0)] * spec.q))


def run_simulate(cfg, workers):
    init = _init_state(cfg.spec, cfg.init_lambda)
    path = simulate_path(cfg.spec, cfg.family, cfg.horizon, init, derive_stream(cfg.seed, 0))
    rows = [(t + 1, path.y[t], path.lam[t]) for t in range(cfg.horizon)]
    return Outcome(rows, {"steps": cfg.horizon, "mean_y": float(path.y.mean()), "mean_lambda": float(path.lam.mean())})


def run_couple(cfg, workers):
    spec, family = cfg.spec, cfg.family
    init_a = stationary_draw(spec, family, cfg.burn_in, derive_stream(cfg.seed, 0, 0))
    if cfg.init_lambda is not None:
        init_b = _init_state(spec, cfg.init_lambda)
    else:
        init_b = stationary_draw(spec, family, cfg.burn_in, derive_stream(cfg.seed, 0, 1))
    u = open_uniforms(derive_stream(cfg.seed, 0, 2), cfg.horizon)
    log = run_coupled_uniforms(init_a, init_b, spec, family, u)
    violations = []
    bad = absorption_violation(log, spec.p)
    if bad is not None:
        violations.append(f"absorption: draws differ at step {bad} after the chains merged")
    results = {
        "steps": cfg.horizon,
        "hits": int(log.hit.sum()),
        "first_coalescence": log.first_coalescence,
        "initial_a": {"y": init_a.y_lags, "lambda": init_a.lam_lags},
        "initial_b": {"y": init_b.y_lags, "lambda": init_b.lam_lags},
    }
    return Outcome(list(log.rows()), results, violations)


def run_coalescence(cfg, workers):
    report = verify_coalescence_lemma(
        cfg.spec, cfg.family, cfg.gaps, cfg.replicates, cfg.horizon, cfg.seed, burn_in=cfg.burn_in, workers=workers
    )
    rows, points = [], []
    for pt in report.points:
        rows.append(
            (pt.target_gap, pt.gap, pt.bound, pt.frequency, pt.se, pt.ci_lo, pt.ci_hi, pt.max_gap_ratio,
             pt.frequency_ok, pt.gap_sum_ok)
        )
        points.append(
            {
                "K": pt.gap,
                "target_K": pt.target_gap,
                "bound": round(pt.bound, 4),
                "bound_exact": pt.bound,
                "frequency": pt.frequency,
                "successes": pt.successes,
                "se": pt.se,
                "ci_lo": pt.ci_lo,
                "ci_hi": pt.ci_hi,
                "gap_limit": pt.gap / (1.0 - report.c),
                "max_gap_ratio": pt.max_gap_ratio,
                "frequency_ok": pt.frequency_ok,
                "gap_sum_ok": pt.gap_sum_ok,
            }
        )
    results = {
        "delta": report.delta,
        "c": report.c,
        "horizon": report.horizon,
        "base_state": {"y": report.base_state.y_lags, "lambda": report.base_state.lam_lags},
        "points": points,
    }
    violations = [f"coalescence-bound: {v}" for v in report.violations]
    return Outcome(rows, results, violations)


def run_mixing(cfg, workers):
    est = estimate_beta(
        cfg.spec, cfg.family, cfg.n_grid, cfg.replicates, cfg.horizon, cfg.seed, burn_in=cfg.burn_in, workers=workers
    )
    results = {"horizon": est.horizon, "counts": est.counts}
    try:
        fit = fit_subgeometric_rate(est)
    except InsufficientDataError as exc:
        results.update({"C": "not-fitted", "rho": "not-fitted", "fit_note": str(exc)})
    else:
        results.update(
            {
                "C": fit.C,
                "rho": fit.rho,
                "slope": fit.slope,
                "slope_se": fit.slope_se,
                "slope_significant": fit.slope_significant,
                "r2": fit.r2,
                "points": fit.points,
                "geometric": {"C": fit.geometric_C, "rho": fit.geometric_rho, "r2": fit.geometric_r2},
            }
        )
    violations = []
    if np.any(np.diff(est.beta_hat) > 0):
        violations.append("beta-monotone: estimates increase along the lag grid")
    return Outcome(list(est.rows()), results, violations)


def run_drift(cfg, workers):
    drift = spec_drift_constants(cfg.spec, cfg.family)
    probes = drift_probe_states(cfg.spec, cfg.probes, derive_stream(cfg.seed, 0, 0))
    checks = drift_check(cfg.spec, cfg.family, drift, probes, cfg.replicates, derive_stream(cfg.seed, 0, 1))
    ineq = drift_inequalities(drift)
    violations = [f"drift-inequality: {name} fails" for name, ok in ineq.items() if not ok]
    violations += [
        f"drift-monte-carlo: probe {i} mean {pr.mean:.6g} exceeds {pr.bound:.6g} + 3se" for i, pr in enumerate(checks) if not pr.ok
    ]
    rows = [(i, pr.level, pr.mean, pr.se, pr.bound, pr.ok) for i, pr in enumerate(checks)]
    results = {
        "kappa": drift.kappa,
        "a0": drift.a0,
        "a": drift.a,
        "b": drift.b,
        "epsilon": drift.epsilon,
        "inequalities": ineq,
    }
    return Outcome(rows, results, violations)


def run_reconstruct(cfg, workers):
    spec, family = cfg.spec, cfg.family
    lam0 = 2.0 if cfg.init_lambda is None else cfg.init_lambda
    init = _init_state(spec, lam0)
    prior = np.asarray(init.lam_lags)
    kmax = cfg.horizon
    rows, worst = [], 0.0
    violations = []
    for r in range(cfg.replicates):
        path = simulate_path(spec, family, kmax, init, derive_stream(cfg.seed, r))
        full = np.concatenate([np.zeros(spec.p), path.y])
        for k in range(kmax + 1):
            est, bound = reconstruct_intensity(spec, full[: k + spec.p - 1], prior)
            truth = prior[0] if k == 0 else path.lam[k - 1]
            err = abs(truth - est)
            rows.append((r, k, truth, est, err, bound))
            tol = RECON_ULPS * np.finfo(float).eps * (1.0 + abs(truth))
            if err > bound + tol:
                violations.append(f"reconstruction-bound: path {r} step {k} error {err:.6g} > bound {bound:.6g}")
            if bound > 0:
                worst = max(worst, err / bound)
    results = {"paths": cfg.replicates, "max_k": kmax, "lambda0": lam0, "max_error_ratio": worst}
    return Outcome(rows, results, violations)


def run_counterexample(cfg, workers):
    lam0 = 0.0 if cfg.init_lambda is None else cfg.init_lambda
    init = _init_state(cfg.spec, lam0)
    path = simulate_path(cfg.spec, cfg.family, cfg.horizon, init, derive_stream(cfg.seed, 0))
    rows, violations = [], []
    y_ok = 0
    max_err = 0.0
    for t in range(cfg.horizon):
        y_prev = 0.0 if t == 0 else path.y[t - 1]
        lam_prev = lam0 if t == 0 else path.lam[t - 1]
        try:
            y_rec, lam_rec = counterexample_recover(cfg.gmap, path.lam[t])
        except InconsistentInputError as exc:
            violations.append(f"counterexample-recovery: step {t + 1}: {exc}")
            continue
        err = abs(lam_rec - lam_prev)
        max_err = max(max_err, err)
        y_ok += int(y_rec == y_prev)
        rows.append((t + 1, path.lam[t], y_prev, lam_prev, y_rec, lam_rec, err))
    if y_ok < cfg.horizon:
        violations.append(f"counterexample-recovery: observations recovered at {y_ok} of {cfg.horizon} steps")
    if max_err > RECOVERY_TOL:
        violations.append(f"counterexample-recovery: intensity error {max_err:.3g} exceeds {RECOVERY_TOL:g}")
    results = {"steps": cfg.horizon, "observations_recovered": y_ok, "max_lambda_error": max_err}
    return Outcome(rows, results, violations)


RUNNERS = {
    "simulate": run_simulate,
    "couple": run_couple,
    "coalescence-lemma": run_coalescence,
    "mixing-rate": run_mixing,
    "drift-check": run_drift,
    "reconstruct": run_reconstruct,
    "counterexample": run_counterexample,
}


def run_command(cfg):
    """Execute a validated config; returns ``(data_text, summary_dict)``."""
    workers = resolve_workers(cfg.workers)
    outcome = RUNNERS[cfg.command](cfg, workers)
    columns = COLUMNS[cfg.command]
    text = format_csv(columns, outcome.rows) if cfg.fmt == "csv" else format_json(columns, outcome.rows)
    summary = {
        "command": cfg.command,
        "ok": not outcome.violations,
        "violations": outcome.violations,
        "columns": list(columns),
        "metadata": {
            "config_hash": cfg.config_hash(),
            "base_seed": cfg.seed,
            "version": __version__,
            "replicates": cfg.replicates,
            "horizon": cfg.horizon,
        },
        "results": _plain(outcome.results),
    }
    return text, summary


def summary_path(out) -> Path:
    return Path(out).with_suffix(".summary.json")


# --------------------------------------------------------------------------
# click wiring


def _common(f):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Settings file."),
        click.option("--seed", type=int, help="Base seed (64-bit unsigned)."),
        click.option("--replicates", type=int, help="Number of replicates."),
        click.option("--horizon", type=int, help="Steps per replicate."),
        click.option("--workers", type=int, help=f"Worker processes (default: ${WORKERS_ENV} or 1)."),
        click.option("--out", type=click.Path(dir_okay=False), help="Data file; the summary goes next to it."),
        click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


def _execute(command, config_path, seed, replicates, horizon, workers, out, fmt):
    try:
        raw = read_settings(Path(config_path).read_text()) if config_path else {}
        cfg = build_config(
            command, raw, {"seed": seed, "replicates": replicates, "horizon": horizon, "workers": workers, "out": out, "fmt": fmt}
        )
    except ConfigurationError as exc:
        for problem in exc.problems:
            click.echo(f"config error: {problem}", err=True)
        sys.exit(2)
    try:
        text, summary = run_command(cfg)
    except ConfigurationError as exc:
        for problem in exc.problems:
            click.echo(f"config error: {problem}", err=True)
        sys.exit(2)
    except SemimixError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    summary_text = json.dumps(summary, indent=2, allow_nan=False) + "\n"
    if out:
        Path(out).write_text(text)
        summary_path(out).write_text(summary_text)
    else:
        click.echo(text, nl=False)
        click.echo(summary_text, err=True, nl=False)
    for v in summary["violations"]:
        click.echo(f"invariant violated: {v}", err=True)
    sys.exit(0 if summary["ok"] else 1)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="semimix")
def main():
    """Simulation and coupling experiments for observation-driven time series.

    Settings come from a flat ``section.key = value`` file (--config);
    command-line flags override it. Worker count can also be set with the
    SEMIMIX_WORKERS environment variable; results do not depend on it.
    """


@main.command()
@_common
def simulate(**kw):
    """Simulate one path from a fixed start.

    Columns: t, y, lambda. The start has zero observations and all intensity
    lags equal to experiment.init_lambda (default 0).
    """
    _execute("simulate", **kw)


@main.command()
@_common
def couple(**kw):
    """Run one coupled pair and log every step.

    Columns: t, y, y_prime, hit, lambda, lambda_prime, gap. Chain A starts from
    a burn-in draw; chain B from an independent one, or from
    experiment.init_lambda when set. ``gap`` is the intensity-window gap after
    the step; ``hit`` is 1 when both draws agree.
    """
    _execute("couple", **kw)


@main.command("coalescence-lemma")
@_common
def coalescence_lemma(**kw):
    """Check the coalescence probability bound on a grid of initial gaps.

    Columns: target_gap, gap, bound, frequency, se, ci_lo, ci_hi,
    max_gap_ratio, frequency_ok, gap_sum_ok. ``bound`` is
    exp(-delta K/(1-c)); ``max_gap_ratio`` is the largest summed intensity gap
    over K/(1-c) among coalesced runs. Gaps come from experiment.gaps.
    """
    _execute("coalescence-lemma", **kw)


@main.command("mixing-rate")
@_common
def mixing_rate(**kw):
    """Estimate beta-mixing coupling bounds and fit C rho^sqrt(n).

    Columns: n, beta_hat, ci_lo, ci_hi (99% Wilson interval). Lags come from
    experiment.n_grid; the horizon defaults to five times the largest lag.
    The summary reports the fit, or "not-fitted" with fewer than three
    positive estimates.
    """
    _execute("mixing-rate", **kw)


@main.command("drift-check")
@_common
def drift_check_cmd(**kw):
    """Build drift constants and check the drift inequality by Monte Carlo.

    Columns: probe, level, mean, se, bound, ok. ``level`` is V(x) at the
    probe state, ``mean`` the sample mean of V one step later and ``bound``
    kappa V(x) + a0. Infeasible coefficient sums exit with status 2.
    """
    _execute("drift-check", **kw)


@main.command()
@_common
def reconstruct(**kw):
    """Rebuild intensities from observations alone on simulated paths.

    Columns: path, k, lambda, lambda_hat, error, bound. Each path starts from
    intensity lags equal to experiment.init_lambda (default 2); --horizon is
    the largest k and --replicates the number of paths.
    """
    _execute("reconstruct", **kw)


@main.command()
@_common
def counterexample(**kw):
    """Recover the previous state from each intensity of the non-mixing model.

    Columns: t, lambda, y_prev, lambda_prev, y_rec, lambda_rec, lambda_err.
    The recursion is lambda_t = Y_{t-1}/2 + g(lambda_{t-1}) with
    g(l) = g_base + g_height (1 - exp(-l)) (model.g_base, model.g_height).
    """
    _execute("counterexample", **kw)


if __name__ == "__main__":
    main()
