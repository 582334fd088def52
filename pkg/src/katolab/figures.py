"""Figure rendering for scenario reports (PNG sidecars next to the CSVs)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

DPI = 130


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_scenario(out_dir, scn, run):
    out = Path(out_dir)
    geom = run.geom

    if run.profile is not None:
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        ax.loglog(run.profile.times, np.maximum(run.profile.values, 1e-300),
                  "o-", ms=3, label=r"$k_t$")
        thr = None
        if geom.dimension > 2:
            thr = 1.0 / (3.0 * (geom.dimension - 2))
        if thr is not None:
            ax.axhline(thr, color="crimson", ls="--", lw=1,
                       label=f"threshold {thr:.3g}")
        ax.set_xlabel("t")
        ax.set_ylabel("Kato constant")
        ax.set_title(f"{scn.name}: Kato profile")
        ax.legend(fontsize=8)
        _save(fig, out / "kato.png")

    if run.gauge is not None:
        coords = geom.nodes
        if coords.ndim == 1:
            fig, axes = plt.subplots(2, 1, figsize=(5.0, 4.6), sharex=True)
            axes[0].plot(coords, run.gauge.phi, lw=1.2)
            axes[0].axhline(1.0, color="gray", lw=0.7)
            axes[0].axhline(run.gauge.phi_upper_bound, color="crimson", ls="--",
                            lw=0.8, label="upper bound")
            axes[0].set_ylabel(r"gauge $\varphi$")
            axes[0].legend(fontsize=8)
            if run.conf is not None:
                axes[1].plot(coords, run.conf.f, lw=1.2, color="seagreen")
            axes[1].set_ylabel("conformal exponent f")
            axes[1].set_xlabel("radial coordinate")
            _save(fig, out / "gauge.png")
        else:
            m = int(round(math.sqrt(geom.n_nodes)))
            fig, ax = plt.subplots(figsize=(4.6, 3.8))
            im = ax.imshow(run.gauge.phi.reshape(m, m).T, origin="lower",
                           extent=[0, scn.extent, 0, scn.extent], cmap="viridis")
            fig.colorbar(im, ax=ax, label=r"gauge $\varphi$")
            ax.set_title(f"{scn.name}: gauge function")
            _save(fig, out / "gauge.png")

    reports = {k: v for k, v in run.margin_reports.items()}
    if reports:
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        labels, mins, tols = [], [], []
        for name, rep in reports.items():
            labels.append(name)
            mins.append(rep.min_margin)
            tols.append(-rep.tol_grid_max)
        x = np.arange(len(labels))
        ax.bar(x, mins, width=0.5, color="steelblue", label="min margin")
        ax.plot(x, tols, "v", color="crimson", label="-tol_grid")
        ax.axhline(0.0, color="gray", lw=0.7)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_ylabel("pointwise margin")
        ax.set_title(f"{scn.name}: inequality margins")
        ax.legend(fontsize=8)
        _save(fig, out / "margins.png")

    if run.curve is not None:
        fig, axes = plt.subplots(1, 2 if run.bg is not None else 1,
                                 figsize=(7.6 if run.bg is not None else 4.4, 3.2))
        ax0 = axes[0] if run.bg is not None else axes
        ax0.plot(run.curve.radii, run.curve.ratios, "o-", ms=3)
        ax0.set_xlabel("radius")
        ax0.set_ylabel("volume ratio")
        ax0.set_title("pole ball volume ratio")
        if run.bg is not None:
            ratios = [p.ratio for p in run.bg.pairs]
            bounds = [p.bound for p in run.bg.pairs]
            axes[1].loglog(ratios, bounds, ".", ms=3, alpha=0.6)
            lo = min(min(ratios), min(bounds))
            hi = max(max(ratios), max(bounds))
            axes[1].loglog([lo, hi], [lo, hi], color="crimson", lw=0.8)
            axes[1].set_xlabel("measured ratio")
            axes[1].set_ylabel("comparison bound")
            axes[1].set_title("ratio bound (above line = ok)")
        _save(fig, out / "volumes.png")

    if run.gauss2d is not None and run.gauss2d.curvature_new is not None:
        m = int(round(math.sqrt(geom.n_nodes)))
        fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.4))
        im0 = axes[0].imshow(geom.gauss_curvature.reshape(m, m).T,
                             origin="lower", cmap="RdBu_r")
        fig.colorbar(im0, ax=axes[0], label="K before")
        im1 = axes[1].imshow(run.gauss2d.curvature_new.reshape(m, m).T,
                             origin="lower", cmap="RdBu_r")
        fig.colorbar(im1, ax=axes[1], label="K after")
        for ax in axes:
            ax.set_xticks([])
            ax.set_yticks([])
        fig.suptitle(f"{scn.name}: Gauss curvature, bound {run.gauss2d.curvature_bound:.4f}")
        _save(fig, out / "gauss2d.png")
