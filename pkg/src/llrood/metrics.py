"""Detector evaluation: AUROC, AUPRC, FPR at fixed TPR, Pearson correlation and
report assembly.

Every score follows one orientation: larger means more in-distribution, and
in-distribution is the positive class for all metrics.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .seqdata import IN, OOD

METHODS = (
    "maxprob", "entropy", "odin", "mahalanobis", "ensemble5", "ensemble10", "ensemble20",
    "binary", "kplus1", "calibrated", "likelihood", "llr", "waic",
)


class MetricError(ValueError):
    pass


@dataclass
class ScoreRecord:
    id: str
    origin: str
    method: str
    score: float
    gc_content: float | None = None
    class_label: int | None = None
    min_d2s_distance: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise MetricError(f"{self.id}/{self.method}: non-finite score {self.score}")
        if self.origin not in (IN, OOD):
            raise MetricError(f"{self.id}: origin must be in_distribution or ood")

    def to_json(self) -> str:
        d = {k: v for k, v in vars(self).items() if v is not None}
        return json.dumps(d, sort_keys=True)


def _check(in_scores, ood_scores):
    a = np.asarray(in_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise MetricError("both score lists must be non-empty")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise MetricError("non-finite score")
    return a, b


def auroc(in_scores, ood_scores) -> float:
    """Mann-Whitney estimate P(in > ood) + 0.5 P(in == ood) via average ranks."""
    a, b = _check(in_scores, ood_scores)
    allv = np.concatenate([a, b])
    order = np.argsort(allv, kind="mergesort")
    sv = allv[order]
    # average 1-based ranks within tie groups
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    ends = np.r_[starts[1:], sv.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(sv.size)
    ranks[order] = np.repeat(avg, ends - starts)
    # rank sums are half-integers, so this stays exact for realistic sizes
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def _descending_groups(in_scores, ood_scores):
    """Cumulative (tp, fp) after each distinct threshold, highest score first."""
    a, b = _check(in_scores, ood_scores)
    vals = np.concatenate([a, b])
    pos = np.r_[np.ones(a.size), np.zeros(b.size)]
    order = np.argsort(-vals, kind="mergesort")
    vals, pos = vals[order], pos[order]
    last = np.r_[vals[1:] != vals[:-1], True]
    tp = np.cumsum(pos)[last]
    fp = np.cumsum(1 - pos)[last]
    return vals[last], tp, fp, a.size, b.size


def auprc(in_scores, ood_scores) -> float:
    """Average precision, tied scores forming a single step."""
    _, tp, fp, npos, _ = _descending_groups(in_scores, ood_scores)
    prec = tp / (tp + fp)
    dtp = np.diff(np.r_[0.0, tp])
    return float(np.sum(dtp * prec) / npos)


def fpr_at_tpr(in_scores, ood_scores, target: float = 0.8) -> float:
    """Smallest FPR over observed thresholds t (rule: score >= t) with TPR >= target."""
    _, tp, fp, npos, nneg = _descending_groups(in_scores, ood_scores)
    ok = tp / npos >= target - 1e-12
    return float(np.min(fp[ok] / nneg))


def roc_points(in_scores, ood_scores):
    _, tp, fp, npos, nneg = _descending_groups(in_scores, ood_scores)
    return np.r_[0.0, fp / nneg], np.r_[0.0, tp / npos]


def pr_points(in_scores, ood_scores):
    _, tp, fp, npos, _ = _descending_groups(in_scores, ood_scores)
    return tp / npos, tp / (tp + fp)


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise MetricError("pearson needs two equal-length arrays of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.dot(xc, xc))
    sy = np.sqrt(np.dot(yc, yc))
    if sx == 0 or sy == 0:
        raise MetricError("zero variance")
    return float(np.clip(np.dot(xc, yc) / (sx * sy), -1.0, 1.0))


def per_class_auroc_vs_distance(records, method: str | None = None):
    """AUROC of each OOD class against all in-distribution records, and the
    Pearson correlation of those AUROCs with each class's minimum d2S distance.

    Returns ``(rows, pcc)`` where rows are ``(class_label, min_d2s, auroc, n)``.
    """
    recs = [r for r in records if method is None or r.method == method]
    in_scores = [r.score for r in recs if r.origin == IN]
    by_class: dict = {}
    for r in recs:
        if r.origin == OOD:
            by_class.setdefault(r.class_label, []).append(r)
    if len(by_class) < 2:
        raise MetricError("need at least two OOD classes")
    rows = []
    for label in sorted(by_class, key=lambda v: (v is None, v)):
        rs = by_class[label]
        dists = {r.min_d2s_distance for r in rs}
        if None in dists or len(dists) != 1:
            raise MetricError(f"class {label}: missing or inconsistent min_d2s_distance")
        rows.append((label, dists.pop(), auroc(in_scores, [r.score for r in rs]), len(rs)))
    pcc = pearson([r[1] for r in rows], [r[2] for r in rows])
    return rows, pcc


# -- report -------------------------------------------------------------------

@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    per_seed: list = field(default_factory=list)
    correlations: dict = field(default_factory=dict)
    roc: dict = field(default_factory=dict)
    pr: dict = field(default_factory=dict)
    hist: dict = field(default_factory=dict)
    class_distance: list = field(default_factory=list)

    def row(self, method):
        for r in self.rows:
            if r["method"] == method:
                return r
        raise KeyError(method)

    def to_dict(self):
        return {
            "rows": self.rows, "per_seed": self.per_seed, "correlations": self.correlations,
            "roc": self.roc, "pr": self.pr, "hist": self.hist, "class_distance": self.class_distance,
        }


def _stderr(v):
    v = np.asarray(v, dtype=np.float64)
    return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0


def build_report(records, subsample_equal: bool = False, rng=None, hist_bins: int = 30,
                 covariates: tuple = ("gc_content",), methods=None) -> EvalReport:
    """Group ScoreRecords by method (and seed) into Table-1-style rows.

    With several seeds per method, the row carries the across-seed mean and
    standard error of each metric.
    """
    by_method: dict = {}
    for r in records:
        if r.method not in METHODS:
            raise MetricError(f"unknown method {r.method!r}")
        by_method.setdefault(r.method, {}).setdefault(r.seed, []).append(r)
    order = [m for m in METHODS if m in by_method] if methods is None else list(methods)
    report = EvalReport()
    for method in order:
        per = []
        for seed in sorted(by_method[method], key=lambda s: (s is None, s)):
            rs = by_method[method][seed]
            ins = np.array([r.score for r in rs if r.origin == IN])
            oods = np.array([r.score for r in rs if r.origin == OOD])
            if subsample_equal:
                n = min(ins.size, oods.size)
                g = rng if rng is not None else np.random.default_rng(0)
                ins = ins[np.sort(g.choice(ins.size, n, replace=False))]
                oods = oods[np.sort(g.choice(oods.size, n, replace=False))]
            m = {"method": method, "seed": seed, "auroc": auroc(ins, oods), "auprc": auprc(ins, oods),
                 "fpr80": fpr_at_tpr(ins, oods, 0.8), "n_in": int(ins.size), "n_ood": int(oods.size)}
            per.append(m)
            report.per_seed.append(m)
            if len(per) == 1:
                fx, ty = roc_points(ins, oods)
                report.roc[method] = list(zip(fx.tolist(), ty.tolist()))
                rc, pc = pr_points(ins, oods)
                report.pr[method] = list(zip(rc.tolist(), pc.tolist()))
                edges = np.histogram_bin_edges(np.r_[ins, oods], bins=hist_bins)
                report.hist[method] = {
                    "edges": edges.tolist(),
                    IN: np.histogram(ins, edges)[0].tolist(),
                    OOD: np.histogram(oods, edges)[0].tolist(),
                }
        row = {"method": method, "n_seeds": len(per),
               "n_in": per[0]["n_in"], "n_ood": per[0]["n_ood"]}
        for key in ("auroc", "auprc", "fpr80"):
            vals = [p[key] for p in per]
            row[key] = float(np.mean(vals))
            row[key + "_stderr"] = _stderr(vals)
        report.rows.append(row)
        first = by_method[method][sorted(by_method[method], key=lambda s: (s is None, s))[0]]
        for cov in covariates:
            xs = [getattr(r, cov) for r in first]
            if all(v is not None for v in xs) and len(set(xs)) > 1:
                ys = [r.score for r in first]
                if len(set(ys)) > 1:
                    report.correlations[f"{method}:{cov}"] = pearson(ys, xs)
        if all(r.min_d2s_distance is not None for r in first if r.origin == OOD):
            labels = {r.class_label for r in first if r.origin == OOD}
            if len(labels) >= 2:
                rows, pcc = per_class_auroc_vs_distance(first)
                report.class_distance += [
                    {"method": method, "class": c, "min_d2s": d, "auroc": a, "n": n} for c, d, a, n in rows]
                report.correlations[f"{method}:auroc_vs_min_d2s"] = pcc
    return report


def write_report(report: EvalReport, outdir, provenance: dict | None = None):
    """JSON plus flat CSV tables; each CSV starts with a ``# provenance`` comment."""
    import os

    os.makedirs(outdir, exist_ok=True)
    prov = "# " + json.dumps(provenance or {}, sort_keys=True) + "\n"
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump({"provenance": provenance or {}, **report.to_dict()}, fh, indent=1, sort_keys=True)

    def table(name, header, rows):
        with open(os.path.join(outdir, name), "w", newline="") as fh:
            fh.write(prov)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    table("metrics.csv", ["method", "auroc", "auprc", "fpr80", "n_in", "n_ood", "n_seeds",
                          "auroc_stderr", "auprc_stderr", "fpr80_stderr"],
          [[r["method"], _fmt(r["auroc"]), _fmt(r["auprc"]), _fmt(r["fpr80"]), r["n_in"], r["n_ood"],
            r["n_seeds"], _fmt(r["auroc_stderr"]), _fmt(r["auprc_stderr"]), _fmt(r["fpr80_stderr"])]
           for r in report.rows])
    table("roc_points.csv", ["method", "fpr", "tpr"],
          [[m, _fmt(x), _fmt(y)] for m, pts in report.roc.items() for x, y in pts])
    table("pr_points.csv", ["method", "recall", "precision"],
          [[m, _fmt(x), _fmt(y)] for m, pts in report.pr.items() for x, y in pts])
    table("hist_bins.csv", ["method", "bin_lo", "bin_hi", "count_in", "count_ood"],
          [[m, _fmt(h["edges"][i]), _fmt(h["edges"][i + 1]), h[IN][i], h[OOD][i]]
           for m, h in report.hist.items() for i in range(len(h[IN]))])
    table("class_distance_auroc.csv", ["method", "class", "min_d2s", "auroc", "n"],
          [[r["method"], r["class"], _fmt(r["min_d2s"]), _fmt(r["auroc"]), r["n"]] for r in report.class_distance])


def _fmt(x):
    return repr(float(x))


def write_scores(path, records, provenance: dict | None = None):
    with open(path, "w") as fh:
        if provenance is not None:
            fh.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        for r in records:
            fh.write(r.to_json() + "\n")


def read_scores(path) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricError(f"{path}:{lineno}: corrupt score line") from exc
            if "provenance" in d:
                continue
            out.append(ScoreRecord(**d))
    return out
