"""``phmodem`` command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 sync failure, 4 unidentifiable fit,
5 fit did not converge, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .channel import read_trace_csv, write_trace_csv
from .errors import InvalidArgumentError, NonConvergenceError, PhModemError
from .estimator import FIT_DOMAINS, fit, format_fit_result
from .harness import (FIGURES, PRESETS, SWEEPABLE, SweepSpec, figure_data, fit_config_from_dict,
                      format_ber_csv, load_config_dict, receiver_config_from_dict,
                      run_config_from_dict, run_sweep, simulate_run)
from .modulator import bits_to_str, read_schedule_csv, write_schedule_csv
from .receiver import detect, format_report


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="YAML run configuration")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario applied before --config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. --set noise.sigma_mol_l=1e-8 (repeatable)")
    p.add_argument("--bits", help="bit string to transmit (overrides config)")
    p.add_argument("--seed", type=int, help="noise seed (overrides config)")
    p.add_argument("--sigma", type=float, help="noise sigma in mol/l (overrides config)")


def _config_dict(args) -> dict:
    overrides = list(args.overrides)
    if args.bits is not None:
        overrides.append(f"bits='{args.bits}'")
    if args.seed is not None:
        overrides.append(f"noise.seed={args.seed}")
    if args.sigma is not None:
        overrides.append(f"noise.sigma_mol_l={args.sigma!r}")
    return load_config_dict(args.config, args.preset, overrides)


def _run_config(args):
    return run_config_from_dict(_config_dict(args))


def _write(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_simulate(args) -> int:
    run = _run_config(args)
    schedule, rep = simulate_run(run)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(rep.trace, out / "trace.csv")
    write_schedule_csv(schedule, out / "schedule.csv")
    (out / "bits.txt").write_text(bits_to_str(run.bits) + "\n")
    print(f"wrote {len(rep.trace)} samples, {len(run.bits)} symbols to {out}"
          + (f" ({rep.clamp_count} samples clamped)" if rep.clamp_count else ""))
    return 0


def cmd_detect(args) -> int:
    cfg = _config_dict(args)
    trace = read_trace_csv(args.trace)
    receiver = receiver_config_from_dict(cfg)
    if args.n_symbols is not None:
        n = args.n_symbols
    else:
        n = len(run_config_from_dict(cfg).bits)
    report = detect(trace, receiver, n, sync_offset=args.sync_offset, threshold=args.threshold)
    if args.out:
        Path(args.out).write_text(format_report(report))
    print(report.bit_string)
    return 0


def cmd_fit(args) -> int:
    cfg = _config_dict(args)
    fit_cfg = fit_config_from_dict(cfg.get("fit", {}))
    if args.domain is not None:
        fit_cfg = replace(fit_cfg, fit_domain=args.domain)
    if args.n_starts is not None:
        fit_cfg = replace(fit_cfg, n_starts=args.n_starts)
    trace = read_trace_csv(args.trace)
    schedule = read_schedule_csv(args.schedule)
    try:
        result = fit(schedule, trace, fit_cfg)
        code = 0 if result.converged else 5
    except NonConvergenceError as exc:
        if exc.result is None:
            raise
        result, code = exc.result, 5
    _write(args.out, format_fit_result(result))
    if code:
        print("error: fit did not converge", file=sys.stderr)
    return code


def _parse_values(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InvalidArgumentError(f"bad value list {text!r}") from None


def cmd_sweep(args) -> int:
    cfg = _config_dict(args)
    sweep = cfg.get("sweep", {})
    param = args.param or sweep.get("param")
    values = _parse_values(args.values) if args.values else tuple(float(v) for v in sweep.get("values", ()))
    trials = args.trials if args.trials is not None else int(sweep.get("trials", 1))
    master = args.master_seed if args.master_seed is not None else int(sweep.get("master_seed", 0))
    if param is None:
        raise InvalidArgumentError("sweep needs --param (or sweep.param in the config)")
    spec = SweepSpec(param, values, trials, cfg, master)
    records = run_sweep(spec, args.workers)
    _write(args.out, format_ber_csv(records))
    return 0


def cmd_figure(args) -> int:
    run = _run_config(args)
    _write(args.out, figure_data(run, args.which))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phmodem", description="pH molecular-communication link simulator and modem")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a pH trace for a bit sequence")
    _config_args(p)
    p.add_argument("-o", "--out-dir", default=".", help="directory for trace.csv, schedule.csv, bits.txt")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="recover bits from a trace CSV")
    _config_args(p)
    p.add_argument("trace", help="trace CSV (time_s,ph)")
    p.add_argument("-n", "--n-symbols", type=int, help="symbols to decide (default: length of configured bits)")
    p.add_argument("--sync-offset", type=float, help="skip synchronization and use this start time (s)")
    p.add_argument("--threshold", type=float, help="skip threshold estimation and use this value")
    p.add_argument("-o", "--out", help="write the detection report here")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("fit", help="estimate model parameters from a trace and its schedule")
    _config_args(p)
    p.add_argument("trace", help="trace CSV (time_s,ph)")
    p.add_argument("schedule", help="schedule CSV (t_start_s,t_end_s,state)")
    p.add_argument("--domain", choices=FIT_DOMAINS)
    p.add_argument("--n-starts", type=int)
    p.add_argument("-o", "--out", help="fit result file (default: stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="bit error rate over a parameter grid")
    _config_args(p)
    p.add_argument("--param", choices=sorted(SWEEPABLE))
    p.add_argument("--values", help="comma-separated grid values")
    p.add_argument("--trials", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("-j", "--workers", type=int, help="parallel worker processes (default: $PHMODEM_WORKERS or 1)")
    p.add_argument("-o", "--out", help="BER CSV (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("figure", help="emit plot data columns")
    _config_args(p)
    p.add_argument("which", choices=FIGURES)
    p.add_argument("-o", "--out", help="CSV output (default: stdout)")
    p.set_defaults(func=cmd_figure)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PhModemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
