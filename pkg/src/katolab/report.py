"""Report assembly and artifact writing: JSON payload plus CSV curves.

The JSON payload is deterministic for a fixed config and seed: keys are
sorted and floats carry full repr precision.  Wall-clock timings live
under the separate top-level key "timings" and are excluded from the
determinism contract.
"""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .runner import FAIL, PASS, SKIPPED, ResolutionRun, refinement_summary, run_resolution
from .scenarios import Scenario

SCHEMA_VERSION = 1


def build_payload(scn: Scenario, runs: list) -> dict:
    primary = runs[-1]
    checks = {name: res.as_dict() for name, res in primary.results.items()}
    geom = primary.geom
    payload = {
        "schema_version": SCHEMA_VERSION,
        "scenario": {
            "name": scn.name,
            "T": float(scn.T),
            "seed": scn.seed,
            "checks": list(scn.checks),
            "regime": scn.regime.kind,
            "resolutions": list(scn.resolutions),
        },
        "provenance": {
            "package_version": __version__,
            "resolution": primary.resolution,
            "mode_count": primary.dec.mode_count if primary.dec is not None else 0,
            "seed": scn.seed,
            "tolerances": {
                k: (v if v is None else float(v) if not isinstance(v, int) else v)
                for k, v in scn.tolerances.items()
            },
        },
        "geometry": {
            "kind": scn.geometry_kind,
            "dimension": scn.dimension,
            "extent": float(scn.extent),
            "nodes": geom.n_nodes,
            "total_volume": float(geom.total_volume),
            "closed": geom.is_closed,
            "truncated_approximation": not geom.is_closed,
            "endpoints": list(scn.endpoints) if scn.geometry_kind == "warped_product" else [],
        },
        "checks": checks,
        "refinement": refinement_summary(scn, runs),
    }
    return payload


def overall_status(payload: dict) -> str:
    statuses = [c.get("status") for c in payload["checks"].values()]
    if any(s == FAIL for s in statuses):
        return FAIL
    return PASS


def payload_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _hist_rows(margins_report, run: ResolutionRun, which: str):
    rep = run.margin_reports.get(which)
    if rep is None:
        return None
    q = rep.margin_quantiles
    return [
        ["min_margin", rep.min_margin],
        ["q01", q["q01"]],
        ["q50", q["q50"]],
        ["q99", q["q99"]],
        ["violations", rep.violations],
        ["checked", rep.checked],
        ["tol_grid_max", rep.tol_grid_max],
    ]


def write_artifacts(scn: Scenario, runs: list, out_dir, make_figures: bool = True) -> dict:
    """Write report.json and CSV/figure sidecars; returns the payload."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    primary = runs[-1]
    payload = build_payload(scn, runs)
    payload["overall"] = overall_status(payload)

    timings = {"per_check": {k: float(v) for k, v in primary.timings.items()}}
    timings["total"] = float(sum(primary.timings.values()))
    full = dict(payload)
    full["timings"] = timings
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(full, sort_keys=True, indent=2) + "\n")
    # payload without timings = the determinism contract
    with open(out / "payload.json", "w", encoding="utf-8") as fh:
        fh.write(payload_json(payload))

    geom = primary.geom
    if primary.dec is not None:
        write_csv(out / "eigenvalues.csv", ["mode", "eigenvalue"],
                  [[k, float(mu)] for k, mu in enumerate(primary.dec.eigenvalues)])
    if primary.profile is not None:
        write_csv(out / "kato_profile.csv", ["t", "k_t"],
                  [[float(t), float(v)] for t, v in
                   zip(primary.profile.times, primary.profile.values)])
    if primary.gauge is not None:
        coords = geom.nodes
        if coords.ndim == 1:
            rows = [[i, float(coords[i]), float(primary.gauge.phi[i]),
                     float(primary.conf.f[i]) if primary.conf is not None else ""]
                    for i in range(geom.n_nodes)]
            write_csv(out / "gauge_phi.csv", ["node", "coord", "phi", "f"], rows)
        else:
            rows = [[i, float(coords[i, 0]), float(coords[i, 1]),
                     float(primary.gauge.phi[i]),
                     float(primary.conf.f[i]) if primary.conf is not None else ""]
                    for i in range(geom.n_nodes)]
            write_csv(out / "gauge_phi.csv", ["node", "x", "y", "phi", "f"], rows)
    for which in ("bochner", "transformation", "be"):
        rows = _hist_rows(None, primary, which)
        if rows:
            write_csv(out / f"margins_{which}.csv", ["stat", "value"], rows)
    if primary.curve is not None:
        write_csv(out / "volume_ratio.csv", ["r", "ratio"],
                  [[float(r), float(v)] for r, v in
                   zip(primary.curve.radii, primary.curve.ratios)])
    if primary.bg is not None:
        write_csv(out / "bg_pairs.csv", ["r", "R", "ratio", "bound", "ok"],
                  [[p.r, p.R, p.ratio, p.bound, int(p.ok)] for p in primary.bg.pairs])

    if make_figures:
        from . import figures

        figures.render_scenario(out, scn, primary)
    return payload


def run_scenario(scn: Scenario, out_dir, make_figures: bool = True) -> dict:
    """Execute a scenario across its resolutions and write artifacts."""
    runs = []
    for resolution in scn.resolutions:
        runs.append(run_resolution(scn, resolution))
    return write_artifacts(scn, runs, out_dir, make_figures=make_figures)
