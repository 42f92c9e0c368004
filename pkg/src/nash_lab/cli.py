"""Command-line entry point ``nash-lab``.

Each subcommand runs one experiment kind from an INI config and writes
``report.csv``, ``report.json`` (plus ``report.svg`` with ``--svg``) and
``timing.json`` to ``--out``.  Exit codes: 0 all criteria pass, 1 some
criterion fails, 2 configuration or solver error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .harness import (
    ConfigError,
    ExperimentReport,
    emit_report,
    load_config,
    load_solution,
    run_experiment,
)
from .mfg import MFGError
from .monotonicity import MODES, PairSampler, semimonotonicity_scan
from .nash_solver import SolverError
from .oracle import RiccatiBlowUp

COMMANDS = {
    "solve-nash": "nash",
    "check-monotone": "propagation",
    "simulate-particles": "particles",
    "couple": "coupling",
    "chaos-gap": "chaos",
    "solve-mfg": "mfg",
    "converge": "convergence",
    "vanish": "vanishing_viscosity",
    "lq-validate": "lq_validate",
    "scale": "scaling",
    "represent": "representation",
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nash-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in COMMANDS.items():
        p = sub.add_parser(name, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--out", default=None, help="output directory (default: ./out/<command>)")
        p.add_argument("--seed", type=_u64, default=None, help="override the config seed")
        p.add_argument("--svg", action="store_true", help="also write report.svg")
        if name == "check-monotone":
            p.add_argument("--solution", default=None,
                           help="directory written by solve-nash (N<k> subdirectories)")
            p.add_argument("--mode", default="all", choices=("all",) + MODES,
                           help="semimonotonicity mode to scan")
    return parser


def _check_saved(cfg, solution_dir: str, mode: str) -> ExperimentReport:
    """Scan solutions saved by ``solve-nash`` instead of re-solving."""
    rep = ExperimentReport("propagation", cfg.config_hash)
    for N in cfg.sweep:
        sol = load_solution(cfg, N, Path(solution_dir) / f"N{N}")
        sampler = PairSampler(count=int(cfg.options.get("pairs", 2000)), seed=cfg.seed,
                              half_width=0.5 * cfg.grid_L)
        scan = semimonotonicity_scan(sol, sampler, mode)
        if cfg.out:
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
            scan.to_json(Path(cfg.out) / f"scan_N{N}.json")
        for name in ("block_margin", "diag_margin", "d_margin", "l_margin", "drift_osl_margin"):
            val = scan.minimum(name)
            if np.isfinite(val):
                rep.add(f"N={N}", f"min_{name}", val, "monotonicity", cfg.seed)
        if np.isfinite(scan.minimum("block_margin")):
            M_star = cfg.threshold("M_star", 0.5 / cfg.T)
            rep.criteria[f"N={N}:propagation"] = (
                scan.minimum("block_margin") >= -M_star - cfg.threshold("slack", 0.05))
    return rep


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out or str(Path("out") / args.command)
    try:
        saved = args.command == "check-monotone" and args.solution
        # a saved solution is scanned under the config that produced it
        kind = None if saved else COMMANDS[args.command]
        cfg = load_config(args.config, seed=args.seed, out=out, kind=kind)
        if saved:
            report = _check_saved(cfg, args.solution, args.mode)
        else:
            report = run_experiment(cfg)
        formats = ("csv", "json", "svg") if args.svg else ("csv", "json")
        emit_report(report, out, formats)
    except (ConfigError, SolverError, MFGError, RiccatiBlowUp, OSError, ValueError) as exc:
        print(f"nash-lab: error: {exc}", file=sys.stderr)
        return 2
    for name, ok in sorted(report.criteria.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"config {report.config_hash}: {'pass' if report.passed else 'fail'} -> {out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
