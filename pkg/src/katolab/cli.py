"""Command-line front end: analyze, sweep, list-checks.

Exit codes: 0 when every check is PASS or SKIPPED-by-design, 1 when any
check FAILs, 2 on configuration errors.  The output directory can be
overridden with the KATOLAB_OUT environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .report import run_scenario, overall_status
from .scenarios import CHECK_NAMES, CHECK_SUMMARY, ConfigError, load_scenario, override_key, parse_scenario

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _out_dir(args) -> Path:
    env = os.environ.get("KATOLAB_OUT")
    if args.out is not None:
        return Path(args.out)
    if env:
        return Path(env)
    return Path("out")


def _apply_seed(scn, args):
    if args.seed is not None:
        scn.seed = args.seed


def cmd_analyze(args) -> int:
    try:
        scn = load_scenario(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _apply_seed(scn, args)
    out = _out_dir(args) / scn.name
    payload = run_scenario(scn, out, make_figures=not args.no_figures)
    for name, res in payload["checks"].items():
        line = f"{name:>14s}: {res['status']}"
        if res.get("reason"):
            line += f"  ({res['reason']})"
        print(line)
    print(f"report: {out / 'report.json'}")
    return EXIT_OK if overall_status(payload) == "PASS" else EXIT_FAIL


def cmd_sweep(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            base_text = fh.read()
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("sweep needs a nonempty values list")
        scenarios = []
        for v in values:
            text = override_key(base_text, args.axis, v)
            scenarios.append((v, parse_scenario(text)))
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_root = _out_dir(args)

    def one(item):
        v, scn = item
        _apply_seed(scn, args)
        tag = f"{scn.name}__{args.axis.replace('.', '_')}_{v}"
        return v, run_scenario(scn, out_root / tag, make_figures=args.figures)

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            outcomes = list(pool.map(one, scenarios))
    else:
        outcomes = [one(item) for item in scenarios]

    rows = []
    worst = EXIT_OK
    for v, payload in outcomes:
        status = overall_status(payload)
        if status != "PASS":
            worst = EXIT_FAIL
        row = {"axis": args.axis, "value": v, "overall": status}
        kato = payload["checks"].get("kato", {})
        row["k_T"] = kato.get("k_T", "")
        be = payload["checks"].get("be", {})
        cert = be.get("certificate", {})
        for key in ("K", "N", "C"):
            row[key] = cert.get(key, "")
        row["be_min_margin"] = be.get("min_margin", "")
        tr = payload["checks"].get("transformation", {})
        row["transformation_min_margin"] = tr.get("min_margin", "")
        bb = payload["checks"].get("bishop_gromov", {})
        row["cstar_scaled"] = json.dumps(bb.get("cstar_scaled", {}), sort_keys=True)
        rows.append(row)
        print(f"{args.axis}={v}: {status}")

    out_root.mkdir(parents=True, exist_ok=True)
    table = out_root / "sweep_summary.csv"
    if rows:
        import csv

        with open(table, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        print(f"table: {table}")
    return worst


def cmd_list_checks(_args) -> int:
    for name in CHECK_NAMES:
        print(f"{name:>14s}  {CHECK_SUMMARY[name]}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="katolab",
        description=("Kato-bound curvature laboratory: scenario analysis, "
                     "parameter sweeps, and machine-readable reports."),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="run one scenario config")
    pa.add_argument("--config", required=True, help="scenario INI file")
    pa.add_argument("--out", default=None, help="output directory (default ./out)")
    pa.add_argument("--seed", type=int, default=None, help="override the config seed")
    pa.add_argument("--threads", type=int, default=1,
                    help="reserved for sweep parallelism; analyze runs single-threaded")
    pa.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    pa.set_defaults(fn=cmd_analyze)

    ps = sub.add_parser("sweep", help="run a scenario across one config axis")
    ps.add_argument("--config", required=True)
    ps.add_argument("--axis", required=True, help="dotted key, e.g. regime.gamma")
    ps.add_argument("--values", required=True, help="comma-separated values")
    ps.add_argument("--out", default=None)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--threads", type=int, default=1,
                    help="concurrent scenarios (each scenario stays single-threaded)")
    ps.add_argument("--figures", action="store_true",
                    help="render PNGs for every sweep point")
    ps.set_defaults(fn=cmd_sweep)

    pl = sub.add_parser("list-checks", help="describe the available checks")
    pl.set_defaults(fn=cmd_list_checks)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
