"""Command-line harness.

Subcommands::

    etlqr simulate    closed-loop run with triggers and model updates
    etlqr montecarlo  detection-delay study over many plant changes
    etlqr moments     cost moments by two independent routes, self-checked
    etlqr thresholds  trigger thresholds for the configured model
    etlqr identify    least-squares fit of a trajectory CSV

Exit codes: 0 success, 2 configuration error, 3 self-check failure,
4 numerical failure.
"""

import argparse
import csv
import math
import os
import sys

import numpy as np
import yaml

from .config import (
    TriggerSpec,
    dump_config,
    load_config,
    load_trajectory,
    parse_config,
)
from .cost import expected_cost, mgf_spectrum, moments_from_mgf, second_moment
from .exceptions import ConfigError, EtlError, NumericalError, SelfCheckFailed
from .identification import ols_estimate
from .scenario import SERIES_FIELDS, rollout_streams, run_etl_scenario, run_montecarlo
from .system import close_loop, random_system
from .triggers import ChernoffTrigger, HoeffdingTrigger

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SELF_CHECK = 3
EXIT_NUMERICAL = 4

MEAN_RTOL = 1e-8
SECOND_MOMENT_RTOL = 1e-6

RECORD_FIELDS = ("rollout", "change_step", "delta_sys", "log10_delta_sys", "detect_step", "delay", "diverged")
DENSITY_FIELDS = ("delay", "log10_delta_sys", "joint", "conditional", "normalized")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _config(args):
    cfg = load_config(args.config) if args.config else parse_config({})
    if args.seed is not None:
        cfg = cfg.replace(seed=int(args.seed))
    return cfg


def _out_dir(args):
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _model(cfg):
    if cfg.system is not None:
        return cfg.system
    rng_sys = rollout_streams(cfg.seed, 0)[0]
    return random_system(cfg.random_spec, rng_sys)


def _summary_text(summary):
    lines = []
    for key, value in summary.items():
        if hasattr(value, "rate"):
            value = f"{value.rate:.6g} [{value.low:.6g}, {value.high:.6g}] ({value.fires}/{value.evaluations})"
        elif isinstance(value, list):
            value = " ".join(_fmt(v) for v in value)
        else:
            value = _fmt(value)
        lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def write_run_report(report, out_dir):
    """Write ``series.csv``, ``events.csv`` and ``summary.txt``."""
    if report.series is not None:
        s = report.series
        rows = zip(*(s[name] for name in SERIES_FIELDS))
        _write_csv(os.path.join(out_dir, "series.csv"), SERIES_FIELDS, rows)
    _write_csv(
        os.path.join(out_dir, "events.csv"),
        ("step", "kind", "detail"),
        ((e.step, e.kind, e.detail) for e in report.events),
    )
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(_summary_text(report.summary()))


def _plot(report, N, path):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is not installed; skipping plot", file=sys.stderr)
        return
    s = report.series
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
    ax1.plot(s["step"], s["cost"], lw=0.6)
    ax1.plot(s["step"], s["expected"] / N, lw=0.8)
    ax1.set_ylabel("cost / N")
    ax2.plot(s["step"], s["psi"], lw=0.6)
    ax2.plot(s["step"], s["kappa_plus"], lw=0.8)
    if np.any(np.isfinite(s["kappa_minus"])):
        ax2.plot(s["step"], s["kappa_minus"], lw=0.8)
    for e in report.events:
        if e.kind in ("change", "detection"):
            ax2.axvline(e.step, color="k" if e.kind == "change" else "r", lw=0.5, ls=":")
    ax2.set_xlabel("step")
    ax2.set_ylabel("statistic")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_simulate(args):
    cfg = _config(args)
    out = _out_dir(args)
    report = run_etl_scenario(cfg)
    write_run_report(report, out)
    with open(os.path.join(out, "config.yaml"), "w") as fh:
        fh.write(dump_config(cfg))
    if args.plot:
        _plot(report, cfg.trigger.horizon, os.path.join(out, "series.svg"))
    s = report.summary()
    print(f"status {s['status']}: {s['changes']} changes, {s['detected']} detected, "
          f"{s['missed']} missed, {s['misfires']} misfires")
    return EXIT_OK


def cmd_montecarlo(args):
    cfg = _config(args)
    out = _out_dir(args)
    res = run_montecarlo(cfg, rollouts=args.rollouts, workers=args.workers, changes=args.changes,
                         wall_budget=args.wall_budget)
    _write_csv(
        os.path.join(out, "records.csv"),
        RECORD_FIELDS,
        ((r.rollout, r.change_step, r.delta_sys, math.log10(r.delta_sys), r.detect_step, r.delay, r.diverged)
         for r in res.records),
    )
    if res.joint is not None:
        gd, gl = res.joint.grid_delay, res.joint.grid_logdelta
        rows = (
            (gd[i], gl[j], res.joint.values[i, j], res.conditional.values[i, j], res.normalized.values[i, j])
            for i in range(len(gd)) for j in range(len(gl))
        )
        _write_csv(os.path.join(out, "density.csv"), DENSITY_FIELDS, rows)
    if res.bins:
        keys = list(res.bins[0])
        _write_csv(os.path.join(out, "bins.csv"), keys, ([b[k] for k in keys] for b in res.bins))
    summary = {
        "rollouts_completed": res.rollouts_completed,
        "changes": len(res.records),
        "detected": len(res.detected),
        "miss_rate": res.miss_rate(),
        "density": res.error or "ok",
    }
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(_summary_text(summary))
    print(_summary_text(summary), end="")
    if res.error:
        print(res.error, file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _agree(a, b, rtol):
    return abs(a - b) <= rtol * max(abs(a), abs(b))


def cmd_moments(args):
    cfg = _config(args)
    cl = close_loop(_model(cfg), cfg.cost_weights())
    N = args.N if args.N is not None else cfg.trigger.horizon
    mean_lyap = expected_cost(cl, N)
    second_closed = second_moment(cl, N)
    spectrum = mgf_spectrum(cl, N)
    m = moments_from_mgf(spectrum)
    mean_ok = _agree(mean_lyap, m.mean, MEAN_RTOL)
    second_ok = _agree(second_closed, m.second_moment, SECOND_MOMENT_RTOL)
    lam = spectrum.lambdas
    rows = [
        ("N", N),
        ("mean (Lyapunov)", mean_lyap),
        ("mean (spectrum)", m.mean),
        ("second moment (closed form)", second_closed),
        ("second moment (spectrum)", m.second_moment),
        ("variance", m.variance),
        ("lambda count", lam.size),
        ("lambda max", float(lam[0])),
        ("lambda min", float(lam[-1])),
        ("mean agreement", "ok" if mean_ok else "FAIL"),
        ("second moment agreement", "ok" if second_ok else "FAIL"),
    ]
    for key, value in rows:
        print(f"{key:28s} {_fmt(value)}")
    if not (mean_ok and second_ok):
        raise SelfCheckFailed("moment formulas disagree beyond tolerance")
    return EXIT_OK


def _fit_trigger(spec, cl, eta=None):
    eta = spec.eta if eta is None else eta
    if spec.kind == "chernoff":
        return ChernoffTrigger(horizon=spec.horizon, eta=eta, dwell=spec.dwell).fit(cl)
    W = None if spec.W is None else np.asarray(spec.W, dtype=float)
    return HoeffdingTrigger(horizon=spec.horizon, gap=spec.gap or 1, n_samples=spec.n_samples, eta=eta,
                            alpha=spec.alpha, W=W, kind=spec.hoeffding_kind).fit(cl)


def cmd_thresholds(args):
    cfg = _config(args)
    spec = cfg.trigger
    if args.kind is not None:
        spec = TriggerSpec(**{**spec.__dict__, "kind": args.kind})
    cl = close_loop(_model(cfg), cfg.cost_weights())
    etas = args.eta if args.eta else [spec.eta]
    if spec.kind == "chernoff":
        print(f"{'eta':>10s} {'kappa_minus':>22s} {'kappa_plus':>22s} {'xi_minus':>22s} {'xi_plus':>22s}")
        for eta in etas:
            th = _fit_trigger(spec, cl, eta).thresholds_
            print(f"{eta:10.4g} {th.kappa_minus:22.15g} {th.kappa_plus:22.15g} {th.xi_minus:22.15g} {th.xi_plus:22.15g}")
    else:
        print(f"{'eta':>10s} {'kappa':>22s} {'expected':>22s}")
        for eta in etas:
            est = _fit_trigger(spec, cl, eta)
            print(f"{eta:10.4g} {est.kappa_:22.15g} {est.target_:22.15g}")
    return EXIT_OK


def cmd_identify(args):
    if not args.trajectory:
        raise ConfigError("identify needs --trajectory")
    model = ols_estimate(load_trajectory(args.trajectory))
    np.set_printoptions(precision=6, suppress=True)
    print("A_hat =\n" + str(model.A_hat))
    print("B_hat =\n" + str(model.B_hat))
    print("V_hat =\n" + str(model.V_hat))
    print(f"samples {model.sample_count}  residual rms {model.residual_rms:.6g}")
    if args.out_dir:
        out = _out_dir(args)
        d = {"A": model.A_hat.tolist(), "B": model.B_hat.tolist(), "V": model.V_hat.tolist()}
        with open(os.path.join(out, "identified.yaml"), "w") as fh:
            yaml.safe_dump({"system": d}, fh, sort_keys=False)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML scenario file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the master seed")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker processes")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")

    parser = argparse.ArgumentParser(prog="etlqr", description="Event-triggered learning for LQR", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="single closed-loop run")
    p.add_argument("--plot", action="store_true", help="also write series.svg (needs matplotlib)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", parents=[common], help="detection-delay study")
    p.add_argument("--rollouts", type=int, default=None)
    p.add_argument("--changes", type=int, default=None)
    p.add_argument("--wall-budget", type=float, default=None, help="seconds")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("moments", parents=[common], help="cost moments with self-check")
    p.add_argument("--N", type=int, default=None, help="window length (default: trigger horizon)")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("thresholds", parents=[common], help="trigger thresholds")
    p.add_argument("--kind", choices=("chernoff", "hoeffding", "relative", "second_moment"), default=None)
    p.add_argument("--eta", type=float, nargs="+", default=None, help="one or more confidence levels")
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("identify", parents=[common], help="least-squares model from a trajectory CSV")
    p.add_argument("--trajectory", default=None)
    p.set_defaults(func=cmd_identify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("workers", 1), ("out_dir", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.out_dir is None and args.command in ("simulate", "montecarlo"):
        args.out_dir = "."
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SelfCheckFailed as exc:
        print(f"self-check failed: {exc}", file=sys.stderr)
        return EXIT_SELF_CHECK
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EtlError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
