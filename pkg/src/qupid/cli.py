"""``qupid`` command-line interface.

Subcommands::

    qupid simulate <config.json>   second-order uncertainty propagation
    qupid compare  <config.json>   propagation next to a Monte Carlo batch
    qupid scaling  <config.json>   equal-accuracy study on random parameter subsets
    qupid validate <config.json>   schema, Hermiticity, covariance and pulse checks

CSV numbers are written with 17 significant digits. Every command also
writes a JSON bundle carrying the config, its hash and the run metadata.
"""

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from qupid import __version__, kernels, montecarlo
from qupid.config import ConfigError, apply_overrides, build, config_hash, load_config, \
    parse_matrix, schema_problems, with_relative_sigma
from qupid.evolution import PropagationError
from qupid.models import CalibrationError
from qupid.propagator import HermiticityError, hermiticity_violation
from qupid.scenarios import run_qupid, scaling_study
from qupid.uncertainty import UncertaintyReport

FMT = "%.17g"
REPORT_COLUMNS = ("time", "value_at_mean", "mean_estimate", "variance", "band_low", "band_high")


def fmt(x):
    return FMT % x


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())
    return buf.getvalue()


# --------------------------------------------------------------------------
# report <-> CSV / JSON


def contribution_columns(report):
    names = report.names
    if report.contributions.ndim == 2:
        return [f"contribution_{n}" for n in names]
    return [f"contribution_{names[i]}__{names[j]}" for i in range(len(names)) for j in range(i, len(names))]


def _contribution_rows(report):
    c = report.contributions
    if c.ndim == 2:
        return c
    m = len(report.names)
    # fold the symmetric matrix: off-diagonal pairs count twice
    return np.array([[c[k, i, j] * (1 if i == j else 2) for i in range(m) for j in range(i, m)]
                     for k in range(c.shape[0])]).reshape(c.shape[0], -1)


def report_csv(report, path=None):
    header = list(REPORT_COLUMNS) + contribution_columns(report)
    contrib = _contribution_rows(report)
    rows = [
        [report.times[k], report.value_at_mean[k], report.mean[k], report.variance[k],
         report.band_low[k], report.band_high[k], *contrib[k]]
        for k in range(report.times.size)
    ]
    if path is None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        return buf.getvalue()
    return _write_csv(path, header, rows)


def _jsonable(a):
    a = np.asarray(a, dtype=float)
    return [None if not math.isfinite(x) else x for x in a.reshape(-1)], list(a.shape)


def _from_json(values, shape):
    return np.array([np.nan if v is None else v for v in values], dtype=float).reshape(shape)


def report_to_json(report):
    out = {"label": report.label, "names": list(report.names)}
    for key in ("times", "value_at_mean", "mean", "variance", "band_low", "band_high", "contributions"):
        values, shape = _jsonable(getattr(report, key))
        out[key] = {"values": values, "shape": shape}
    lo, hi = report.bounds
    out["bounds"] = [lo if math.isfinite(lo) else None, hi if math.isfinite(hi) else None]
    return out


def report_from_json(data):
    arrays = {k: _from_json(data[k]["values"], data[k]["shape"])
              for k in ("times", "value_at_mean", "mean", "variance", "band_low", "band_high", "contributions")}
    lo, hi = data["bounds"]
    bounds = (-np.inf if lo is None else lo, np.inf if hi is None else hi)
    return UncertaintyReport(data["label"], tuple(data["names"]), arrays["times"], arrays["value_at_mean"],
                             arrays["mean"], arrays["variance"], arrays["band_low"], arrays["band_high"],
                             arrays["contributions"], bounds)


def metadata(cfg, command):
    return {
        "config_hash": config_hash(cfg),
        "seed": int(cfg.get("seed", 0)),
        "version": __version__,
        "command": command,
        "kernel_backend": kernels.BACKEND,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def bundle_csvs(bundle):
    """Re-create the simulate CSV text of every report stored in a bundle."""
    return {label: report_csv(report_from_json(data)) for label, data in bundle["reports"].items()}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")


# --------------------------------------------------------------------------
# commands


def _out_dir(args, cfg):
    out = Path(args.out or cfg.get("outputs", {}).get("dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _prepare(args):
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, args.seed, getattr(args, "mc_samples", None), args.dt_halve, args.strict_paper_typo)
    return cfg, build(cfg)


def cmd_simulate(args):
    cfg, built = _prepare(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    reports = run_qupid(built.scenario, built.hessian)
    elapsed = time.perf_counter() - t0
    name = cfg["name"]
    for label, rep in reports.items():
        report_csv(rep, out / f"{name}_{label}.csv")
        final = rep.final()
        print(f"{label}: value_at_mean={fmt(final['value_at_mean'])} mean={fmt(final['mean'])} "
              f"variance={fmt(final['variance'])}")
        if rep.contributions.ndim == 2 and rep.shift[-1] != 0:
            shares = rep.contributions[-1] / rep.contributions[-1].sum()
            print("  final contribution shares: " + ", ".join(
                f"{n}={s:.3f}" for n, s in zip(rep.names, shares)))
    bundle = {"metadata": metadata(cfg, "simulate"), "config": cfg, "runtime_s": elapsed,
              "reports": {label: report_to_json(r) for label, r in reports.items()}}
    _write_json(out / f"{name}_simulate.json", bundle)
    print(f"wrote {out}/{name}_*.csv and {name}_simulate.json ({elapsed:.3f} s)")
    return 0


def agreement(report, stats, sigma_limit=3.0, abs_tol=1e-10):
    """``|QUPID mean - MC mean| / SEM`` over time plus final band half-width ratio."""
    delta = np.abs(report.mean - stats.mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(delta <= abs_tol, 0.0, delta / stats.sem)
    qupid_half = 0.5 * (report.band_high[-1] - report.band_low[-1])
    mc_half = 0.5 * (stats.band_high[-1] - stats.band_low[-1])
    ratio = float(qupid_half / mc_half) if mc_half > 0 else (1.0 if qupid_half == 0 else float("inf"))
    return {
        "max_delta_over_sem": float(np.max(z)),
        "worst_time": float(report.times[int(np.argmax(z))]),
        "final_band_halfwidth_ratio": ratio,
        "final_std_ratio": float(report.std[-1] / stats.std[-1]) if stats.std[-1] > 0 else None,
        "passes": bool(np.all(z < sigma_limit)),
    }


def compare_engines(built, k, seed):
    sc = built.scenario
    reports = run_qupid(sc, built.hessian)
    stats, _ = montecarlo.mc_statistics(sc, k, seed)
    return reports, stats


def cmd_compare(args):
    cfg, built = _prepare(args)
    out = _out_dir(args, cfg)
    name, k, seed = cfg["name"], built.mc_samples, built.seed
    t0 = time.perf_counter()
    reports, stats = compare_engines(built, k, seed)
    elapsed = time.perf_counter() - t0
    result = {"metadata": metadata(cfg, "compare"), "config": cfg, "mc_samples": k, "runtime_s": elapsed,
              "reports": {label: report_to_json(r) for label, r in reports.items()}, "agreement": {}}
    ok = True
    for label, rep in reports.items():
        st = stats[label]
        header = ["time", "qupid_value_at_mean", "qupid_mean", "qupid_std", "qupid_band_low", "qupid_band_high",
                  "mc_mean", "mc_std", "mc_sem", "mc_band_low", "mc_band_high"]
        rows = zip(rep.times, rep.value_at_mean, rep.mean, rep.std, rep.band_low, rep.band_high,
                   st.mean, st.std, st.sem, st.band_low, st.band_high)
        _write_csv(out / f"{name}_{label}_compare.csv", header, rows)
        agr = agreement(rep, st)
        result["agreement"][label] = agr
        ok &= agr["passes"]
        print(f"{label}: max |dmean|/SEM = {agr['max_delta_over_sem']:.3f} at t={agr['worst_time']:.6g}, "
              f"final band half-width ratio = {agr['final_band_halfwidth_ratio']:.4f} "
              f"-> {'agree' if agr['passes'] else 'DISAGREE'}")
    if "sweep" in cfg:
        result["sweep"] = run_sweep(built, cfg["sweep"]["relative_sigmas"], k, seed, out / f"{name}_sweep.csv")
        print(f"sweep over {len(cfg['sweep']['relative_sigmas'])} noise levels -> {name}_sweep.csv")
    _write_json(out / f"{name}_compare.json", result)
    print(f"wrote {out}/{name}_compare.json ({elapsed:.1f} s)")
    return 0 if ok else 1


def run_sweep(built, relative_sigmas, k, seed, path=None):
    """Final-time QUPID and MC values for each relative noise level."""
    rows = []
    for eps in relative_sigmas:
        b = with_relative_sigma(built, eps)
        reports, stats = compare_engines(b, k, seed)
        for label, rep in reports.items():
            st = stats[label]
            rows.append([label, float(eps), rep.value_at_mean[-1], rep.mean[-1], rep.std[-1],
                         st.mean[-1], st.sem[-1], rep.mean[-1] - rep.value_at_mean[-1]])
    header = ["observable", "relative_sigma", "value_at_mean", "qupid_mean", "qupid_std", "mc_mean", "mc_sem",
              "qupid_shift"]
    if path is not None:
        _write_csv(path, header, rows)
    return [dict(zip(header, r)) for r in rows]


def cmd_scaling(args):
    cfg, built = _prepare(args)
    if cfg["model"]["type"] != "spin-star":
        raise ConfigError("scaling needs a spin-star config")
    out = _out_dir(args, cfg)
    sc_block = cfg.get("scaling", {})
    subsets = args.params_subsets or sc_block.get("subsets", [1, 10, 20, 30])
    repeats = args.repeats or sc_block.get("repeats", 1000)
    k = built.mc_samples
    sizes = montecarlo.default_subset_sizes(k, sc_block.get("curve_fraction", 0.1), sc_block.get("curve_points", 16))
    name = cfg["name"]

    def progress(p):
        print(f"M={p.n_params:2d}: 1-F={p.one_minus_f:.3e} slope={p.curve.slope:+.3f} "
              f"qupid_err={p.qupid_error:.3e} cost={p.qupid_cost} N_MC={p.speedup.n_mc:.4g} "
              f"speedup={p.speedup.speedup:.4g}{' (extrapolated)' if p.speedup.extrapolated else ''}", flush=True)

    t0 = time.perf_counter()
    points = scaling_study(subsets, k, repeats, built.seed, sc_block.get("relative_sigma", 0.01),
                           cfg["grid"]["N"], built.model, sizes, progress)
    elapsed = time.perf_counter() - t0
    _write_csv(out / f"{name}_scaling_curves.csv", ["n_params", "n_samples", "mean_abs_error"],
               [[p.n_params, n, e] for p in points for n, e in zip(p.curve.sizes, p.curve.errors)])
    header = ["n_params", "slope", "intercept", "one_minus_f", "qupid_mean", "mc_mean", "mc_std", "qupid_error",
              "qupid_cost", "n_mc_equal_accuracy", "speedup", "extrapolated"]
    rows = [[p.n_params, p.curve.slope, p.curve.intercept, p.one_minus_f, p.qupid_mean, p.mc_mean, p.mc_std,
             p.qupid_error, p.qupid_cost, p.speedup.n_mc, p.speedup.speedup, str(p.speedup.extrapolated).lower()]
            for p in points]
    _write_csv(out / f"{name}_scaling.csv", header, rows)
    bundle = {"metadata": metadata(cfg, "scaling"), "config": cfg, "mc_samples": k, "repeats": repeats,
              "runtime_s": elapsed,
              "points": [dict(zip(header, r), names=list(p.names)) for p, r in zip(points, rows)]}
    _write_json(out / f"{name}_scaling.json", bundle)
    print(f"wrote {out}/{name}_scaling*.csv ({elapsed:.1f} s)")
    return 0


# --------------------------------------------------------------------------
# validate


def _hermiticity_checks(cfg):
    problems = []
    model = cfg["model"]
    dim = model.get("dim")
    mats = []
    if model["type"] == "custom":
        mats += [(f"model/terms/{t['name']}", t["operator"]) for t in model.get("terms", [])]
        if "drift" in model:
            mats.append(("model/drift", model["drift"]))
    mats += [(f"observables/{o['label']}", o["operator"]) for o in cfg["observables"] if "operator" in o]
    for where, spec in mats:
        try:
            m = parse_matrix(spec, dim)
        except (ConfigError, ValueError, TypeError) as exc:
            problems.append(f"hermiticity: {where}: unreadable matrix ({exc})")
            continue
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            problems.append(f"hermiticity: {where}: not a square matrix")
        elif hermiticity_violation(m) > 1e-12:
            problems.append(f"hermiticity: {where} is not Hermitian (relative violation {hermiticity_violation(m):.2e})")
    return problems


def _covariance_checks(cfg):
    block = cfg["distribution"]
    names = block["names"]
    problems = []
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        problems.append(f"covariance: names declared more than once: {dup}")
    if "covariance" in block:
        cov = np.asarray(block["covariance"], dtype=float)
        if cov.shape != (len(names), len(names)):
            problems.append(f"covariance: expected {len(names)}x{len(names)}, got {cov.shape}")
        else:
            if np.max(np.abs(cov - cov.T), initial=0) > 1e-12 * max(1.0, np.abs(cov).max(initial=0)):
                problems.append("covariance: matrix is not symmetric")
            elif cov.size and np.linalg.eigvalsh(cov)[0] < -1e-10 * max(np.trace(cov), np.finfo(float).tiny):
                problems.append(f"covariance: not positive semidefinite (eigenvalue {np.linalg.eigvalsh(cov)[0]:.3e})")
    for key in ("sigmas", "relative_sigmas"):
        if key in block and any(s < 0 for s in block[key]):
            problems.append(f"covariance: negative entry in {key}")
    return problems


def _pulse_checks(cfg):
    if cfg["model"]["type"] != "two-level":
        return []
    from qupid.config import _two_level_pulse

    try:
        pulse = _two_level_pulse(cfg)
        omega = float(cfg["model"].get("omega_max", 1.0))
        pulse.check(omega)
    except CalibrationError as exc:
        return [f"pulse: calibration failure: {exc}"]
    except (ConfigError, ValueError) as exc:
        return [f"pulse: {exc}"]
    if pulse.kind == "custom":
        return []
    from qupid.evolution import TimeGrid

    grid = TimeGrid(pulse.duration, int(cfg["grid"]["N"]))
    want = sum(s.rotation for s in pulse.segments)
    got = pulse.rotation_on_grid(omega, grid)
    if abs(got - want) > 1e-8 * want:
        return [f"pulse: area on the grid gives rotation {got:.6g}, expected {want:.6g} (refine grid/N)"]
    return []


def validate_config(path):
    """Run every check; returns ``(problems, checks)`` where ``checks`` maps check name to pass/fail."""
    checks = {}
    try:
        text = Path(path).read_text()
        cfg = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        msg = f"json: line {exc.lineno}, column {exc.colno}: {exc.msg}" if hasattr(exc, "lineno") else str(exc)
        return [f"schema: {msg}"], {"schema": False}
    problems = schema_problems(cfg, text)
    checks["schema"] = not problems
    if problems:
        return problems, checks
    for name, fn in (("hermiticity", _hermiticity_checks), ("covariance", _covariance_checks),
                     ("pulse", _pulse_checks)):
        found = fn(cfg)
        checks[name] = not found
        problems += found
    if not problems:
        try:
            build(cfg)
            checks["build"] = True
        except (ConfigError, HermiticityError, CalibrationError, ValueError) as exc:
            checks["build"] = False
            problems.append(f"build: {exc}")
    return problems, checks


def cmd_validate(args):
    problems, checks = validate_config(args.config)
    for name, ok in checks.items():
        print(f"{name:12s} {'ok' if ok else 'FAIL'}")
    for p in problems:
        print(f"  {p}")
    return 0 if not problems else 1


# --------------------------------------------------------------------------


def _subsets(text):
    return [int(s) for s in text.split(",") if s.strip()]


def make_parser():
    p = argparse.ArgumentParser(prog="qupid", description="Second-order parameter-uncertainty propagation "
                                                          "for quantum dynamics")
    p.add_argument("--version", action="version", version=f"qupid {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mc=False):
        sp.add_argument("config", help="scenario config (JSON)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory (default: config outputs/dir or .)")
        sp.add_argument("--dt-halve", type=int, default=0, metavar="n", help="halve the time step n times")
        sp.add_argument("--strict-paper-typo", action="store_true",
                        help="spin star: use XX+ZZ for the x couplings (20 parameters)")
        if mc:
            sp.add_argument("--mc-samples", type=int, default=None, metavar="K", help="Monte Carlo batch size")

    common(sub.add_parser("simulate", help="propagate uncertainty with the jet engine"))
    common(sub.add_parser("compare", help="jet engine next to a Monte Carlo batch"), mc=True)
    sp = sub.add_parser("scaling", help="equal-accuracy study on the spin star")
    common(sp, mc=True)
    sp.add_argument("--params-subsets", type=_subsets, default=None, metavar="1,10,20,30")
    sp.add_argument("--repeats", type=int, default=None, help="subsampling repeats per subset size")
    vp = sub.add_parser("validate", help="check a config without running it")
    vp.add_argument("config")
    return p


COMMANDS = {"simulate": cmd_simulate, "compare": cmd_compare, "scaling": cmd_scaling, "validate": cmd_validate}


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    except (PropagationError, FloatingPointError) as exc:
        print(f"propagation failed: {exc}", file=sys.stderr)
        return 3
    except (CalibrationError, HermiticityError) as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
