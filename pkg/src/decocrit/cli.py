"""Command line entry point ``decocrit``.

Exit codes: 0 success, 2 configuration error, 3 some points failed or a check
did not pass.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .channels import ChannelParams
from .fits import FitError, fit_cft_mi, fit_exp_decay, fit_powerlaw_chord
from .harness import ConfigError, SweepConfig, emit_tables, load_jsonl, nu_fits, run_sweep, simulate
from .dmrg import DmrgSettings
from .observables import ObservableRecord, measure_all
from .oracle import MAX_L, exact_correlators, exact_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3
ORACLE_TOL = 1e-8

logger = logging.getLogger("decocrit")


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        config = SweepConfig.from_file(args.config)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        store = run_sweep(config, jobs=args.jobs, resume=args.resume)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    statuses = [p["status"] for p in store.load_manifest()["points"].values()]
    n_failed = statuses.count("failed")
    print(f"{statuses.count('done')} done, {n_failed} failed; results in {store.root}")
    return EXIT_PARTIAL if n_failed else EXIT_OK


def _records_path(path: str) -> Path:
    p = Path(path)
    return p / "records.jsonl" if p.is_dir() else p


def _cmd_tables(args: argparse.Namespace) -> int:
    path = _records_path(args.input)
    if not path.exists():
        logger.error("no records at %s", path)
        return EXIT_CONFIG
    entries = load_jsonl(path)
    try:
        paths = emit_tables(entries, args.out)
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    for name, path in paths.items():
        print(path)
    n_bad = sum(e["status"] != "done" for e in entries)
    return EXIT_PARTIAL if n_bad else EXIT_OK


def _max_dev(a: ObservableRecord, b: ObservableRecord) -> dict[str, float]:
    out = {}
    for name in ObservableRecord.CURVES:
        x = np.array([v for _, v in getattr(a, name)])
        y = np.array([v for _, v in getattr(b, name)])
        out[name] = float(np.max(np.abs(x - y))) if len(x) else 0.0
    for name in ("chi_I", "chi_II"):
        x, y = getattr(a, name), getattr(b, name)
        out[name] = 0.0 if np.isnan(x) and np.isnan(y) else abs(x - y)
    return out


def _cmd_oracle_check(args: argparse.Namespace) -> int:
    if args.L > MAX_L or args.L < 2:
        logger.error("oracle check needs 2 <= L <= %d", MAX_L)
        return EXIT_CONFIG
    try:
        params = ChannelParams.critical_line(args.pzz, args.J, args.h)
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    state, _ = simulate(args.L, params, DmrgSettings(chi_max=256, sv_cutoff=1e-12, sweep_tol=1e-12))
    mps_rec = measure_all(state, params)
    exact = exact_correlators(exact_pipeline(args.L, params), params)
    devs = _max_dev(mps_rec, exact)
    ok = all(v <= ORACLE_TOL for v in devs.values())
    for name, v in devs.items():
        print(f"{name:12s} {v:.3e}")
    print("PASS" if ok else "FAIL", f"(tolerance {ORACLE_TOL:g})")
    return EXIT_OK if ok else EXIT_PARTIAL


def _cmd_fit(args: argparse.Namespace) -> int:
    entries = [e for e in load_jsonl(_records_path(args.input)) if e["status"] == "done" and e.get("record")]
    window = tuple(args.window) if args.window else None
    if args.kind == "nu":
        for (p, L), fit in nu_fits(entries).items():
            print(json.dumps({"p_zz": p, "L": L, **fit.to_dict()}))
        return EXIT_OK
    failures = 0
    for e in entries:
        rec = e["record"]
        L = rec["L"]
        try:
            if args.kind == "cft_mi":
                fit = fit_cft_mi(rec["mi_profile"], L, window)
            elif args.kind == "powerlaw":
                fit = fit_powerlaw_chord([(r, v) for r, v in rec["czz_curve"] if r <= L // 2], L, window)
            else:
                fit = fit_exp_decay([(r, v) for r, v in rec["czz_curve"] if r <= L // 2], window or (2, L // 2))
            out = fit.to_dict()
        except FitError as exc:
            failures += 1
            out = {"error": str(exc)}
        print(json.dumps({"key": e["key"], **out}))
    return EXIT_PARTIAL if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decocrit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a parameter sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="worker processes (capped at the number of points)")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("tables", help="write CSV tables from a records file")
    p.add_argument("--in", dest="input", required=True, help="sweep directory or records.jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tables)

    p = sub.add_parser("oracle-check", help="compare the MPS pipeline with exact diagonalization")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--pzz", type=float, required=True)
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--h", type=float, default=1.0)
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("fit", help="refit stored records")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--kind", required=True, choices=["cft_mi", "powerlaw", "exp", "nu"])
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.set_defaults(func=_cmd_fit)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
