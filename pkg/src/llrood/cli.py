"""Stage-oriented experiment driver.

Every verb reads a JSON run configuration and exchanges files with the other
stages under one output directory::

    data/dataset.jsonl      synth | ingest
    models/*.ckpt           train, train-bg, train-clf
    sweep/, tune_sim/       sweep, tune-sim
    scores/scores.jsonl     score
    report/*.csv, *.json    eval
    report/figures/*.png    report

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import zlib
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import baselines as bl
from . import genmodel as gm
from . import llr
from . import metrics as mt
from . import seqdata as sd

log = logging.getLogger("llrood")

SCHEMA_VERSION = 1
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

CLASSIFIER_METHODS = {"maxprob", "entropy", "odin", "mahalanobis", "ensemble5", "ensemble10", "ensemble20",
                      "binary", "kplus1", "calibrated"}
VARIANT_METHODS = {"binary": "binary", "kplus1": "kplus1", "calibrated": "calibrated"}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    """Resolved run configuration. ``data`` holds exactly one of ``synthetic``
    (keyword arguments for the default benchmark, or ``{"spec": {...}}``) or
    ``fasta`` (class-to-path maps for in / val_ood / test_ood)."""

    seed: int
    data: dict
    schema_version: int = SCHEMA_VERSION
    foreground: dict = field(default_factory=dict)
    background: dict = field(default_factory=lambda: {"source": "fixed", "mu": 0.2, "lambda": 0.0})
    sweep: dict = field(default_factory=lambda: {"mus": list(llr.PAPER_MU_GRID), "l2s": list(llr.PAPER_L2_GRID)})
    tune_sim: dict = field(default_factory=lambda: {"rate": llr.SIMULATED_OOD_RATE})
    classifier: dict = field(default_factory=dict)
    perturb_rates: list = field(default_factory=lambda: list(bl.PERTURB_RATES))
    waic_members: int = 5
    methods: list = field(default_factory=lambda: list(mt.METHODS))
    evaluation: dict = field(default_factory=lambda: {"subsample_equal": True, "hist_bins": 30})
    distance: dict = field(default_factory=lambda: {"k": 6, "m": 0, "sample": 100})
    targets: dict = field(default_factory=dict)
    out: str = "run"

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if not isinstance(self.data, dict) or len(self.data) != 1 or next(iter(self.data)) not in ("synthetic", "fasta"):
            raise ConfigError("data must name exactly one source: 'synthetic' or 'fasta'")
        bad = [m for m in self.methods if m not in mt.METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(mt.METHODS)}")
        src = self.background.get("source", "fixed")
        if src not in ("fixed", "sweep", "tune-sim"):
            raise ConfigError(f"background.source must be fixed, sweep or tune-sim, not {src!r}")
        if self.waic_members < 2 and "waic" in self.methods:
            raise ConfigError("waic needs at least two members")
        try:
            self.ar_config()
            self.clf_config()
            llr.SweepGrid(tuple(self.sweep["mus"]), tuple(self.sweep["l2s"]))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def ar_config(self) -> gm.ARConfig:
        return gm.ARConfig(**self.foreground)

    def clf_config(self, n_classes: int | None = None) -> bl.ClassifierConfig:
        kw = dict(self.classifier)
        if n_classes is not None:
            kw["n_classes"] = n_classes
        return bl.ClassifierConfig(**kw)

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of everything except the output location."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path, seed: int | None = None, out: str | None = None, methods: str | None = None) -> RunConfig:
    if path is None:
        raise ConfigError("--config is required")
    text = _read_config_text(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    raw.pop("$comment", None)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    if methods is not None:
        raw["methods"] = [m.strip() for m in methods.split(",") if m.strip()]
    if "seed" not in raw or "data" not in raw:
        raise ConfigError("config needs 'seed' and 'data'")
    try:
        return RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _read_config_text(path) -> str:
    if os.path.exists(path):
        with open(path) as fh:
            return fh.read()
    bundled = resources.files("llrood") / "configs" / f"{path}.json"
    if bundled.is_file():
        return bundled.read_text()
    raise ConfigError(f"config {path!r} not found (bundled: tiny, desk)")


def stage_seed(seed: int, stage: str, k: int = 0) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(stage.encode()), k]).generate_state(1)[0])


# -- run context ---------------------------------------------------------------

class Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = cfg.out
        os.makedirs(self.root, exist_ok=True)

    def path(self, *parts) -> str:
        p = os.path.join(self.root, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def rel(self, p) -> str:
        return os.path.relpath(p, self.root)

    def provenance(self, stage: str, **extra) -> dict:
        return {"stage": stage, "seed": self.cfg.seed, "config_hash": self.cfg.digest(),
                "schema_version": SCHEMA_VERSION, **extra}

    def dataset(self) -> sd.DatasetSplit:
        p = os.path.join(self.root, "data", "dataset.jsonl")
        if not os.path.exists(p):
            raise sd.DataError(f"{p} missing; run synth or ingest first")
        return sd.read_manifest(p)

    def checkpoint(self, *parts) -> gm.Checkpoint:
        p = os.path.join(self.root, *parts)
        if not os.path.exists(p):
            raise sd.DataError(f"{p} missing; run the stage that produces it first")
        return gm.load_checkpoint(p)

    def save(self, cp, stage, *parts, **extra) -> str:
        p = self.path(*parts)
        gm.save_checkpoint(cp, p, self.provenance(stage, **extra))
        return p

    def write_jsonl(self, stage, rows, *parts):
        with open(self.path(*parts), "w") as fh:
            fh.write(json.dumps({"provenance": self.provenance(stage)}, sort_keys=True) + "\n")
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    def write_csv(self, stage, header, rows, *parts):
        with open(self.path(*parts), "w", newline="") as fh:
            fh.write("# " + json.dumps(self.provenance(stage), sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def write_json(self, stage, obj, *parts):
        with open(self.path(*parts), "w") as fh:
            json.dump({"provenance": self.provenance(stage), **obj}, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _n_classes(split: sd.DatasetSplit) -> int:
    return max(s.class_label for s in split.train) + 1


# -- verbs ---------------------------------------------------------------------

def cmd_synth(run: Run):
    src = run.cfg.data.get("synthetic")
    if src is None:
        raise ConfigError("synth needs data.synthetic in the config")
    try:
        if "spec" in src:
            spec = sd.SyntheticSpec.from_dict(src["spec"])
        else:
            kw = dict(src)
            kw.setdefault("seed", run.cfg.seed)
            spec = sd.default_synthetic_spec(**kw)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}") from exc
    split = sd.synth_generate(spec, np.random.default_rng(stage_seed(run.cfg.seed, "synth")))
    prov = run.provenance("synth")
    sd.write_manifest(run.path("data", "dataset.jsonl"), split, header=prov)
    sd.write_masks(run.path("data", "masks.jsonl"), split)
    run.write_json("synth", {"spec": spec.to_dict()}, "data", "spec.json")
    return {k: len(v) for k, v in split.items()}


def cmd_ingest(run: Run):
    src = run.cfg.data.get("fasta")
    if src is None:
        raise ConfigError("ingest needs data.fasta in the config")
    groups = {g: dict(src.get(g, {})) for g in ("in", "val_ood", "test_ood")}
    if not groups["in"] or not groups["test_ood"]:
        raise ConfigError("fasta ingestion needs 'in' and 'test_ood' class lists")
    seen = {}
    for g, classes in groups.items():
        for name, path in classes.items():
            for key in (name, os.path.abspath(path)):
                if key in seen and seen[key] != g:
                    raise ConfigError(f"class {name!r} appears in both {seen[key]} and {g}")
                seen[key] = g
    length = int(src.get("fragment_length", 250))
    n_train, n_val, n_test = (int(src.get(k, d)) for k, d in
                              (("train_per_class", 2000), ("val_per_class", 200), ("test_per_class", 200)))
    split = sd.DatasetSplit()
    label = 0
    names = {}
    for g in ("in", "val_ood", "test_ood"):
        for name, path in groups[g].items():
            try:
                with open(path) as fh:
                    records = sd.parse_fasta(fh)
            except OSError as exc:
                raise sd.DataError(f"cannot read {path}: {exc}") from exc
            if not records:
                raise sd.DataError(f"{path}: no FASTA records")
            genome = "N".join(seq for _, seq in records)
            rng = np.random.default_rng(stage_seed(run.cfg.seed, "ingest", label))
            origin = sd.IN if g == "in" else sd.OOD
            count = n_train + n_val + n_test if g == "in" else (n_val if g == "val_ood" else n_test)
            frags = sd.fragment(genome, length, count, rng, id_prefix=f"{name}", class_label=label, origin=origin)
            frags = [frags[i] for i in rng.permutation(len(frags))]
            if g == "in":
                split.train += frags[:n_train]
                split.val_in += frags[n_train:n_train + n_val]
                split.test_in += frags[n_train + n_val:]
            else:
                getattr(split, g).extend(frags)
            names[label] = name
            label += 1
    split.validate()
    sd.write_manifest(run.path("data", "dataset.jsonl"), split, header=run.provenance("ingest"))
    run.write_json("ingest", {"classes": {str(k): v for k, v in names.items()}, "fragment_length": length},
                   "data", "classes.json")
    return {k: len(v) for k, v in split.items()}


def _train_logged(run, data, config, seed, val, stage, *parts):
    log_rows = []
    cp = gm.train_ar(data, config, seed=seed, val=val, metrics_log=log_rows)
    if val:
        ll = gm.batch_log_likelihood(cp, val)
        log_rows.append({"step": cp.step, "final": True, "val_nll": float(-ll.sum() / sum(len(s) for s in val))})
    path = run.save(cp, stage, *parts)
    run.write_jsonl(stage, log_rows, *parts[:-1], parts[-1].replace(".ckpt", ".metrics.jsonl"))
    return path


def cmd_train(run: Run):
    split = run.dataset()
    base = run.cfg.ar_config()
    out = {"foreground": _train_logged(run, split.train, base, stage_seed(run.cfg.seed, "train"), split.val_in,
                                       "train", "models", "foreground.ckpt")}
    if "waic" in run.cfg.methods:
        seeds = [stage_seed(run.cfg.seed, "waic", k) for k in range(run.cfg.waic_members)]
        members = llr.train_generative_ensemble(split.train, base, seeds)
        for k, cp in enumerate(members):
            out[f"waic{k}"] = run.save(cp, "train", "models", f"waic_{k}.ckpt", member=k)
    return out


def _selected(run: Run, source: str):
    p = os.path.join(run.root, source.replace("-", "_"), "selected.json")
    if not os.path.exists(p):
        raise sd.DataError(f"{p} missing; run {source} first")
    with open(p) as fh:
        d = json.load(fh)
    return d["mu"], d["lambda"]


def cmd_train_bg(run: Run):
    split = run.dataset()
    bgc = run.cfg.background
    src = bgc.get("source", "fixed")
    mu, lam = (bgc["mu"], bgc.get("lambda", 0.0)) if src == "fixed" else _selected(run, src)
    try:
        config = llr.background_config(run.cfg.ar_config(), mu, lam, bgc.get("semantics", "full_alphabet"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    path = _train_logged(run, split.train, config, stage_seed(run.cfg.seed, "train-bg"), split.val_in,
                         "train-bg", "models", "background.ckpt")
    return {"background": path, "mu": mu, "lambda": lam}


def _grid(run):
    return llr.SweepGrid(tuple(run.cfg.sweep["mus"]), tuple(run.cfg.sweep["l2s"]))


def _write_sweep(run, stage, res: llr.SweepResult, folder):
    rows = []
    for k, r in enumerate(res.rows):
        p = run.save(r["checkpoint"], stage, folder, f"bg_{k:02d}.ckpt", mu=r["mu"], l2=r["lambda"])
        rows.append([repr(r["mu"]), repr(r["lambda"]), repr(r["val_auroc"]), run.rel(p)])
    run.write_csv(stage, ["mu", "lambda", "val_auroc", "checkpoint_path"], rows, folder, "sweep.csv")
    mu, lam = res.selected
    run.write_json(stage, {"mu": mu, "lambda": lam, "val_auroc": res.best_row()["val_auroc"]}, folder, "selected.json")
    return {"selected": {"mu": mu, "lambda": lam}, "cells": len(rows)}


def cmd_sweep(run: Run):
    split = run.dataset()
    fg = run.checkpoint("models", "foreground.ckpt")
    res = llr.sweep(split.train, _grid(run), split.val_in, split.val_ood, run.cfg.ar_config(),
                    seed=stage_seed(run.cfg.seed, "sweep"), foreground=fg,
                    semantics=run.cfg.background.get("semantics", "full_alphabet"))
    return _write_sweep(run, "sweep", res, "sweep")


def cmd_tune_sim(run: Run):
    split = run.dataset()
    fg = run.checkpoint("models", "foreground.ckpt")
    rate = float(run.cfg.tune_sim.get("rate", llr.SIMULATED_OOD_RATE))
    try:
        res = llr.simulated_ood_tune(split.train, split.val_in, rate, _grid(run), run.cfg.ar_config(),
                                     seed=stage_seed(run.cfg.seed, "tune-sim"), foreground=fg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return _write_sweep(run, "tune-sim", res, "tune_sim")


def _ensemble_size(methods) -> int:
    sizes = [int(m[len("ensemble"):]) for m in methods if m.startswith("ensemble")]
    return max(sizes + [1 if CLASSIFIER_METHODS & set(methods) else 0])


def _variant_score(variant, cp, seqs):
    if variant == "binary":
        return bl.score_binary_logodds(cp, seqs)
    if variant == "kplus1":
        return bl.score_kplus1(cp, seqs)
    return bl.score_max_prob(cp, seqs)


def cmd_train_clf(run: Run):
    split = run.dataset()
    k = _n_classes(split)
    base = run.cfg.clf_config(k)
    out = {}
    for i in range(_ensemble_size(run.cfg.methods)):
        cp = bl.train_classifier(split.train, base, seed=stage_seed(run.cfg.seed, "clf", i))
        out[f"plain{i}"] = run.save(cp, "train-clf", "models", f"clf_plain_{i}.ckpt", member=i,
                                    val_accuracy=bl.accuracy(cp, split.val_in))
    tuning = []
    for method, variant in VARIANT_METHODS.items():
        if method not in run.cfg.methods:
            continue
        if not split.val_ood:
            raise sd.DataError("tuning perturbation-based classifiers needs val_ood")
        best = None
        for j, rate in enumerate(run.cfg.perturb_rates):
            cp = bl.train_classifier(split.train, bl.with_variant(base, variant, rate),
                                     seed=stage_seed(run.cfg.seed, f"clf-{variant}", j))
            a = mt.auroc(_variant_score(variant, cp, split.val_in), _variant_score(variant, cp, split.val_ood))
            tuning.append([variant, repr(float(rate)), repr(a)])
            if best is None or a > best[0]:
                best = (a, rate, cp)
        out[variant] = run.save(best[2], "train-clf", "models", f"clf_{variant}.ckpt", mutation_rate=best[1])
    if tuning:
        run.write_csv("train-clf", ["variant", "mutation_rate", "val_auroc"], tuning, "models", "clf_tuning.csv")
    return out


def _ood_distances(run: Run, split: sd.DatasetSplit) -> dict:
    d = run.cfg.distance
    return sd.class_distances(split.train, split.test_ood, int(d.get("k", 6)), int(d.get("m", 0)),
                              int(d.get("sample", 100)))


def cmd_score(run: Run):
    split = run.dataset()
    methods = [m for m in mt.METHODS if m in run.cfg.methods]
    tests = split.test_in + split.test_ood
    if not split.test_in or not split.test_ood:
        raise sd.DataError("scoring needs test_in and test_ood")
    dist = _ood_distances(run, split)
    gcs = [sd.gc_content(s) for s in tests]
    scores = {}
    extra = {}
    if {"likelihood", "llr"} & set(methods):
        fg = run.checkpoint("models", "foreground.ckpt")
        ll = gm.batch_log_likelihood(fg, tests)
        if "likelihood" in methods:
            scores["likelihood"] = ll
        if "llr" in methods:
            bg = run.checkpoint("models", "background.ckpt")
            scores["llr"] = llr.LLRScorer(fg, bg).score_many(tests)
    if "waic" in methods:
        members = [run.checkpoint("models", f"waic_{k}.ckpt") for k in range(run.cfg.waic_members)]
        scores["waic"] = llr.waic_many(members, tests)
    n_members = _ensemble_size(methods)
    plain = [run.checkpoint("models", f"clf_plain_{i}.ckpt") for i in range(n_members)]
    if plain:
        clf = plain[0]
        if "maxprob" in methods:
            scores["maxprob"] = bl.score_max_prob(clf, tests)
        if "entropy" in methods:
            scores["entropy"] = bl.score_neg_entropy(clf, tests)
        if "odin" in methods:
            t, e = bl.tune_odin(clf, split.val_in, split.val_ood)
            extra["odin"] = {"temperature": t, "magnitude": e}
            scores["odin"] = bl.score_odin(clf, tests, t, e)
        if "mahalanobis" in methods:
            fit = bl.fit_mahalanobis(clf, split.train)
            scores["mahalanobis"] = bl.score_mahalanobis(fit, clf, tests)
        for m in methods:
            if m.startswith("ensemble"):
                scores[m] = bl.ensemble_score(plain[:int(m[len("ensemble"):])], tests)
    for variant in VARIANT_METHODS:
        if variant in methods:
            scores[variant] = _variant_score(variant, run.checkpoint("models", f"clf_{variant}.ckpt"), tests)
    records = []
    for m in methods:
        vals = np.asarray(scores[m], dtype=np.float64)
        if not np.isfinite(vals).all():
            raise FloatingPointError(f"method {m} produced non-finite scores")
        for s, v, gc in zip(tests, vals, gcs):
            records.append(mt.ScoreRecord(s.id, s.origin, m, float(v), gc, s.class_label,
                                          dist.get(s.class_label) if s.origin == sd.OOD else None,
                                          run.cfg.seed))
    mt.write_scores(run.path("scores", "scores.jsonl"), records, run.provenance("score"))
    if extra:
        run.write_json("score", extra, "scores", "tuned.json")
    return {"records": len(records), "methods": methods}


def cmd_eval(run: Run):
    p = os.path.join(run.root, "scores", "scores.jsonl")
    if not os.path.exists(p):
        raise sd.DataError(f"{p} missing; run score first")
    records = mt.read_scores(p)
    ev = run.cfg.evaluation
    report = mt.build_report(records, subsample_equal=bool(ev.get("subsample_equal", True)),
                             rng=np.random.default_rng(stage_seed(run.cfg.seed, "eval")),
                             hist_bins=int(ev.get("hist_bins", 30)))
    mt.write_report(report, os.path.join(run.root, "report"), run.provenance("eval"))
    return {r["method"]: round(r["auroc"], 4) for r in report.rows}


def cmd_report(run: Run):
    from . import plotting

    p = os.path.join(run.root, "report", "report.json")
    if not os.path.exists(p):
        raise sd.DataError(f"{p} missing; run eval first")
    with open(p) as fh:
        report = json.load(fh)
    figdir = os.path.join(run.root, "report", "figures")
    paths = plotting.render_report(report, figdir)
    for folder, title in (("sweep", "validation AUROC (real OOD)"), ("tune_sim", "validation AUROC (simulated OOD)")):
        sp = os.path.join(run.root, folder, "sweep.csv")
        if os.path.exists(sp):
            paths.append(plotting.plot_sweep(_read_sweep(sp), os.path.join(figdir, f"{folder}.png"), title))
    track = _track_figure(run, figdir)
    if track:
        paths.append(track)
    return {"figures": [run.rel(x) for x in paths]}


def _read_sweep(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return [{"mu": float(r["mu"]), "lambda": float(r["lambda"]), "val_auroc": float(r["val_auroc"])}
            for r in csv.DictReader(lines)]


def _track_figure(run: Run, figdir):
    """Per-position LLR for the first test sequence, motif spans shaded."""
    from . import plotting

    fgp = os.path.join(run.root, "models", "foreground.ckpt")
    bgp = os.path.join(run.root, "models", "background.ckpt")
    if not (os.path.exists(fgp) and os.path.exists(bgp)):
        return None
    split = run.dataset()
    scorer = llr.LLRScorer(gm.load_checkpoint(fgp), gm.load_checkpoint(bgp))
    s = split.test_in[0]
    spans = []
    mp = os.path.join(run.root, "data", "masks.jsonl")
    if os.path.exists(mp):
        with open(mp) as fh:
            for line in fh:
                d = json.loads(line)
                if d["id"] == s.id:
                    spans = d["motif_spans"]
                    break
    tracks = [("LLR", llr.per_position_llr(scorer, s)),
              ("log p (foreground)", gm.per_position_log_prob(scorer.foreground, s))]
    return plotting.plot_tracks(tracks, os.path.join(figdir, "llr_track.png"), spans)


VERBS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "train-bg": cmd_train_bg,
    "train-clf": cmd_train_clf,
    "score": cmd_score,
    "sweep": cmd_sweep,
    "tune-sim": cmd_tune_sim,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="llrood", description="Likelihood-ratio OOD detection for sequences.")
    ap.add_argument("verb", choices=list(VERBS))
    ap.add_argument("--config", help="JSON run config, or a bundled name (tiny, desk)")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--methods", help="comma-separated method list (overrides the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.seed, args.out, args.methods)
        result = VERBS[args.verb](Run(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (sd.DataError, gm.CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, mt.MetricError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps({"verb": args.verb, **result}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
