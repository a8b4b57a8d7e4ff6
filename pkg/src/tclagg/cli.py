"""``tclagg`` command line: ``discretize``, ``simulate`` and ``track``.

Exit status is 0 when every check of the command passes, 1 when a check
fails and 2 on configuration or input errors.  ``TCLAGG_LOG`` sets the log
level (``DEBUG``, ``INFO``, ``WARNING``; default ``WARNING``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import experiments as ex
from .assembly import CflError, write_triplets
from .config import PRESETS, ConfigError, ExperimentConfig, load_config, load_preset
from .factorization import write_policy_schedule
from .io import write_histogram_csv, write_json, write_trace_csv

log = logging.getLogger("tclagg")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tclagg", description="Aggregate TCL model: discretize, simulate, track.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "discretize": "assemble A(t) and P at the first ambient sample; dump triplets and checks",
        "simulate": "run the ensemble and the aggregate model in lockstep under a fixed policy",
        "track": "design tracking policies and run them on the ensemble",
    }
    for name, h in helps.items():
        sp = sub.add_parser(name, help=h, description=h)
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", type=Path, help="experiment config (JSON)")
        src.add_argument("--preset", choices=PRESETS, help="bundled experiment config")
        sp.add_argument("--out", type=Path, help="output directory (default: out/<config name>)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for the ensemble (default 1)")
    return ap


def _load(args) -> ExperimentConfig:
    if args.preset:
        cfg = load_preset(args.preset)
    elif args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg.seed = args.seed
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return cfg


def _report_checks(checks: dict) -> bool:
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return all(checks.values())


def cmd_discretize(cfg: ExperimentConfig, out: Path, threads: int = 1) -> bool:
    res = ex.run_discretize(cfg)
    g = res.rate.grid
    hdr = f"theta_a={res.rate.theta_a!r} alpha={res.rate.alpha!r} N={g.N} q={g.q} m={g.m_idx}"
    write_triplets(out / "A.txt", res.rate.A, header=hdr)
    write_triplets(out / "P.txt", res.P, header=f"{hdr} dt={res.dt!r}")
    write_json(out / "report.json", {
        "checks": res.checks, "dt": res.dt, "cfl_bound": res.cfl_bound, "N": g.N, "q": g.q, "m": g.m_idx,
        "delta_lambda": g.delta_lambda, "lambda_low": g.lambda_low, "lambda_high": g.lambda_high,
        "theta_a": res.rate.theta_a,
    })
    print(f"dt = {res.dt!r} h, CFL bound = {res.cfl_bound!r} h")
    return _report_checks(res.checks)


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int = 1) -> bool:
    res = ex.run_simulation(cfg, threads=threads)
    s = res.setup
    write_trace_csv(out / "trace.csv", s.dt, res.Y, res.gamma, s.theta)
    write_histogram_csv(out / "histogram.csv", res.H)
    metrics = dict(res.metrics)
    if "model_step_tv" in metrics:
        tvm, tve = metrics.pop("model_step_tv"), metrics.pop("ensemble_step_tv")
        with open(out / "step_tv.csv", "w") as fh:
            fh.write("k,model_step_tv,ensemble_step_tv\n")
            for k, (a, b) in enumerate(zip(tvm, tve)):
                fh.write(f"{k},{float(a)!r},{float(b)!r}\n")
    write_json(out / "report.json", {"checks": res.checks, "metrics": metrics, "dt": s.dt, "steps": s.steps})
    for key in ("max_tv", "rel_rms", "model_settle_hour", "ensemble_step_tv_min"):
        if key in metrics:
            print(f"{key} = {metrics[key]}")
    return _report_checks(res.checks)


def cmd_track(cfg: ExperimentConfig, out: Path, threads: int = 1) -> bool:
    res = ex.run_tracking(cfg, threads=threads)
    s = res.setup
    write_policy_schedule(out / "policies.txt", res.policies)
    write_trace_csv(out / "trace.csv", s.dt, res.Y, res.gamma_pred, s.theta)
    write_histogram_csv(out / "histogram.csv", res.H)
    with open(out / "reference.csv", "w") as fh:
        fh.write("k,t,r,nominal\n")
        for k in range(s.steps + 1):
            fh.write(f"{k},{k * s.dt!r},{float(res.r[k])!r},{float(res.nominal[k])!r}\n")
    solve = []
    for rep in res.reports:
        d = rep.as_dict()
        d.pop("solve_time")  # wall-clock time would break byte-stable output
        solve.append(d)
    write_json(out / "solve_report.json", solve[0] if len(solve) == 1 else solve)
    write_json(out / "report.json", {"checks": res.checks, "metrics": res.metrics, "dt": s.dt, "steps": s.steps})
    m = res.metrics
    print(f"tracking RMS = {m['rms_tracking_error']:.6g} kW vs reference gap {m['rms_reference_gap']:.6g} kW "
          f"(ratio {m['tracking_ratio']:.4f})")
    print(f"prediction RMS = {m['rms_prediction_error']:.6g} kW, 3x binomial bound {m['binomial_bound']:.6g} kW")
    return _report_checks(res.checks)


COMMANDS = {"discretize": cmd_discretize, "simulate": cmd_simulate, "track": cmd_track}


def main(argv=None) -> int:
    level = os.environ.get("TCLAGG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
        out = args.out or Path("out") / cfg.name
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json())
        ok = COMMANDS[args.command](cfg, out, args.threads)
    except CflError as exc:
        print(f"error: CFL violation: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
