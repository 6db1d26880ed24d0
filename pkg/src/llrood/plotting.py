"""Figures for an evaluation report: ROC and PR curves, score histograms,
per-class AUROC against distance, and per-position score tracks."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

# pinned so repeated runs write identical files
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def _curves(points: dict, path, xlabel, ylabel, title, diagonal=False):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        colors = plt.get_cmap("tab20").colors
        for i, (method, pts) in enumerate(points.items()):
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.plot(xs, ys, lw=1.2, label=method, color=colors[i % len(colors)],
                    drawstyle="steps-post" if not diagonal else "default")
        if diagonal:
            ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        ax.set(xlim=(0, 1), ylim=(0, 1.02), xlabel=xlabel, ylabel=ylabel, title=title)
        ax.legend(loc="lower right" if diagonal else "lower left", frameon=False)
        return _save(fig, path)


def plot_roc(report: dict, path):
    return _curves(report["roc"], path, "false positive rate", "true positive rate", "ROC", diagonal=True)


def plot_pr(report: dict, path):
    return _curves(report["pr"], path, "recall (in-distribution)", "precision", "Precision-recall")


def plot_histograms(report: dict, outdir, prefix="hist_"):
    paths = []
    for method, h in report["hist"].items():
        edges = np.asarray(h["edges"])
        with plt.rc_context(RC):
            fig, ax = plt.subplots(figsize=(4.2, 3.0))
            width = np.diff(edges)
            ax.bar(edges[:-1], h["in_distribution"], width, align="edge", alpha=0.6, label="in-distribution")
            ax.bar(edges[:-1], h["ood"], width, align="edge", alpha=0.6, label="OOD")
            ax.set(xlabel=f"{method} score", ylabel="count", title=method)
            ax.legend(frameon=False)
            paths.append(_save(fig, os.path.join(outdir, f"{prefix}{method}.png")))
    return paths


def plot_class_distance(report: dict, path, method="llr"):
    rows = [r for r in report["class_distance"] if r["method"] == method]
    if not rows:
        return None
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        x = [r["min_d2s"] for r in rows]
        y = [r["auroc"] for r in rows]
        ax.scatter(x, y, s=18)
        for r in rows:
            ax.annotate(str(r["class"]), (r["min_d2s"], r["auroc"]), fontsize=6, xytext=(3, 2),
                        textcoords="offset points")
        pcc = report["correlations"].get(f"{method}:auroc_vs_min_d2s")
        title = f"{method}: per-class AUROC" + ("" if pcc is None else f" (PCC {pcc:.3f})")
        ax.set(xlabel="min d2S distance to in-distribution", ylabel="AUROC", title=title)
        return _save(fig, path)


def plot_tracks(tracks: list, path, spans=None):
    """``tracks``: list of (label, per-position values); ``spans``: optional
    list of (start, stop) regions to shade."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.4, 2.8))
        for start, stop in spans or ():
            ax.axvspan(start - 0.5, stop - 0.5, color="0.9", lw=0)
        for label, values in tracks:
            ax.plot(np.arange(len(values)), values, lw=0.9, label=label)
        ax.axhline(0.0, color="0.5", lw=0.6)
        ax.set(xlabel="position", ylabel="per-position score (nats)")
        ax.legend(frameon=False, ncol=len(tracks))
        return _save(fig, path)


def plot_sweep(rows: list, path, title="validation AUROC"):
    mus = sorted({r["mu"] for r in rows})
    lams = sorted({r["lambda"] for r in rows})
    grid = np.full((len(mus), len(lams)), np.nan)
    for r in rows:
        grid[mus.index(r["mu"]), lams.index(r["lambda"])] = r["val_auroc"]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.6, 3.2))
        im = ax.imshow(grid, cmap="viridis", aspect="auto", origin="lower")
        ax.set_xticks(range(len(lams)), [f"{v:g}" for v in lams])
        ax.set_yticks(range(len(mus)), [f"{v:g}" for v in mus])
        for i in range(len(mus)):
            for j in range(len(lams)):
                ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center", fontsize=6, color="w")
        ax.set(xlabel="L2 coefficient", ylabel="mutation rate", title=title)
        fig.colorbar(im, ax=ax)
        return _save(fig, path)


def render_report(report: dict, outdir) -> list:
    os.makedirs(outdir, exist_ok=True)
    out = [plot_roc(report, os.path.join(outdir, "roc.png")),
           plot_pr(report, os.path.join(outdir, "pr.png"))]
    out += plot_histograms(report, outdir)
    methods = {r["method"] for r in report["class_distance"]}
    for m in sorted(methods):
        out.append(plot_class_distance(report, os.path.join(outdir, f"auroc_vs_distance_{m}.png"), m))
    return [p for p in out if p]
