"""Command-line front end: analyze | simulate | validate.

Exit codes: 0 success (a "not certified" verdict is still data, not an
error), 1 validation failure, 2 config problem, 3 analysis failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import FileConfig, parse_config
from .errors import ConfigError, WncsError
from .model import build_z_chain, chain_to_csv, split_s0
from .simulate import SimConfig, monte_carlo, run, run_baseline
from .stability import StabilityReport, certify
from .validate import validate_config

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_ANALYSIS = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wncs",
        description=(
            "Stability certificates and closed-loop simulation for the"
            " dual-buffer anytime control loop over Markov links."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the INI config file")
    common.add_argument("--quiet", action="store_true", help="suppress stdout report")
    common.add_argument("--json", action="store_true", help="machine-readable output")

    p_an = sub.add_parser("analyze", parents=[common], help="build the chain and certify stability")
    p_an.add_argument("--report", help="write the certificate report to this path")
    p_an.add_argument("--dump-chain", help="write the aggregated chain as CSV")
    p_an.add_argument(
        "--gamma-bar-sweep",
        help="comma-separated actuator-link drop probabilities to analyze",
    )

    p_sim = sub.add_parser("simulate", parents=[common], help="run closed-loop simulations")
    p_sim.add_argument("--trace", help="write per-step CSV trace(s) to this path")
    p_sim.add_argument("--baseline", action="store_true", help="also run the single-buffer baseline")
    p_sim.add_argument("--seeds", type=int, help="override the seed count (seeds base..base+n-1)")

    sub.add_parser("validate", parents=[common], help="cross-validate analysis against simulation")
    return parser


def _emit(text: str, quiet: bool) -> None:
    if not quiet:
        print(text)


def _suffix_path(path: str, tag: str) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}.{tag}{p.suffix}"))


def _analyze_one(fc: FileConfig, ca_drop: float | None):
    if fc.raw_chain is not None:
        chain = fc.raw_chain.chain
        s0 = fc.raw_chain.s0_indices()
    else:
        net = fc.require("network")
        if ca_drop is not None:
            net = net.with_ca_drop(ca_drop)
        chain = build_z_chain(net)
        s0, _ = split_s0(chain)
    report = certify(chain, s0, fc.require("margins"))
    return chain, report


def _report_payload(fc: FileConfig, report: StabilityReport, ca_drop: float | None, as_json: bool) -> str:
    net = fc.network
    extras = {
        "l0_policy": net.l0_policy if net else "n/a (raw chain)",
        "ca_drop": ca_drop if ca_drop is not None else (net.ca_drop if net else None),
    }
    if as_json:
        payload = report.to_dict()
        payload.update(extras)
        return json.dumps(payload, indent=2, sort_keys=True)
    text = report.to_text()
    text += f"\n  l0_policy={extras['l0_policy']}  ca_drop={extras['ca_drop']}"
    return text


def cmd_analyze(args) -> int:
    fc = parse_config(args.config)
    sweep: list[float | None]
    if args.gamma_bar_sweep:
        if fc.raw_chain is not None:
            raise ConfigError("--gamma-bar-sweep needs a [network] section, not a raw chain")
        try:
            sweep = [float(tok) for tok in args.gamma_bar_sweep.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"bad --gamma-bar-sweep value {args.gamma_bar_sweep!r}") from None
        if not sweep:
            raise ConfigError("--gamma-bar-sweep lists no values")
    else:
        sweep = [None]

    if len(sweep) == 1:
        outcomes = [(sweep[0], _analyze_one(fc, sweep[0]))]
    else:
        with ThreadPoolExecutor(max_workers=min(len(sweep), 8)) as pool:
            futures = [(gb, pool.submit(_analyze_one, fc, gb)) for gb in sweep]
            outcomes = [(gb, fut.result()) for gb, fut in futures]

    for gb, (chain, report) in outcomes:
        tag = None if gb is None else f"gb{gb:g}"
        payload = _report_payload(fc, report, gb, args.json)
        _emit(payload, args.quiet)
        if args.report:
            path = args.report if tag is None else _suffix_path(args.report, tag)
            Path(path).write_text(payload + "\n")
        if args.dump_chain:
            path = args.dump_chain if tag is None else _suffix_path(args.dump_chain, tag)
            chain_to_csv(chain, path)
    return EXIT_OK


def _sim_config(fc: FileConfig, seed: int) -> SimConfig:
    net = fc.require("network")
    plant = fc.require("plant")
    rn = fc.require("run")
    if not plant.x0:
        raise ConfigError("[plant] x0 is required for simulation")
    return SimConfig(
        network=net,
        plant=plant.name,
        noise=plant.noise,
        horizon=rn.horizon,
        seed=seed,
        x0=plant.x0,
        mode=rn.mode,
        margins=fc.margins,
    )


def cmd_simulate(args) -> int:
    fc = parse_config(args.config)
    rn = fc.require("run")
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be at least 1")
        seeds = [rn.seeds[0] + i for i in range(args.seeds)]
    else:
        seeds = list(rn.seeds)

    cfg = _sim_config(fc, seeds[0])
    report = monte_carlo(cfg, seeds)
    baseline_report = None
    if args.baseline:
        from dataclasses import replace

        baseline_report = monte_carlo(replace(cfg, mode="single-buffer-baseline"), seeds)

    if args.trace:
        for seed in seeds:
            from dataclasses import replace

            path = args.trace if len(seeds) == 1 else _suffix_path(args.trace, f"seed{seed}")
            run(replace(cfg, seed=seed), trace_path=path)
            if args.baseline:
                run_baseline(replace(cfg, seed=seed), trace_path=_suffix_path(path, "baseline"))

    if args.json:
        payload = {"dual": report.to_dict()}
        if baseline_report is not None:
            payload["baseline"] = baseline_report.to_dict()
        _emit(json.dumps(payload, indent=2, sort_keys=True), args.quiet)
    else:
        _emit(report.to_text(), args.quiet)
        if baseline_report is not None:
            _emit("baseline " + baseline_report.to_text(), args.quiet)
            better = report.mean_norm < baseline_report.mean_norm
            _emit(
                f"dual-buffer mean |x| {'<' if better else '>='} baseline mean |x|"
                f" ({report.mean_norm:.6g} vs {baseline_report.mean_norm:.6g})",
                args.quiet,
            )
    if report.errors or (baseline_report is not None and baseline_report.errors):
        return EXIT_ANALYSIS
    return EXIT_OK


def cmd_validate(args) -> int:
    fc = parse_config(args.config)
    results = validate_config(fc)
    if args.json:
        payload = [
            {"check": r.name, "passed": r.passed, "detail": r.detail} for r in results
        ]
        _emit(json.dumps(payload, indent=2, sort_keys=True), args.quiet)
    else:
        width = max(len(r.name) for r in results)
        for r in results:
            _emit(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}", args.quiet)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "analyze": cmd_analyze,
        "simulate": cmd_simulate,
        "validate": cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WncsError as exc:
        print(f"analysis error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
