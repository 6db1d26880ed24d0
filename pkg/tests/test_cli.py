import json
import os

import pytest

from llrood import cli
from llrood import genmodel as gm
from llrood import metrics as mt
from llrood import seqdata as sd

PIPELINE = ["synth", "train", "train-bg", "train-clf", "sweep", "tune-sim", "score", "eval", "report"]


def run(verb, out, *extra, config="tiny"):
    args = [verb, "--out", str(out)] + (["--config", config] if config else []) + list(extra)
    return cli.main(args)


def write_config(tmp_path, **changes):
    with open(cli.resources.files("llrood") / "configs" / "tiny.json") as fh:
        cfg = json.load(fh)
    cfg.update(changes)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    for verb in PIPELINE:
        assert run(verb, out) == 0, verb
    return out


class TestSynth:
    def test_counts_match_spec(self, tmp_path):
        assert run("synth", tmp_path) == 0
        split = sd.read_manifest(tmp_path / "data" / "dataset.jsonl")
        assert len(split.train) == 3 * 60
        assert len(split.test_in) == 3 * 20
        assert {s.class_label for s in split.val_ood}.isdisjoint({s.class_label for s in split.test_ood})
        assert (tmp_path / "data" / "masks.jsonl").stat().st_size > 0

    def test_idempotent_and_seed_dependent(self, tmp_path):
        for d, seed in (("a", "1"), ("b", "1"), ("c", "2")):
            assert run("synth", tmp_path / d, "--seed", seed) == 0
        read = lambda d: (tmp_path / d / "data" / "dataset.jsonl").read_bytes()
        assert read("a") == read("b")
        assert read("a") != read("c")


def _fasta(path, seed, n=4000, gc=0.5):
    import numpy as np

    rng = np.random.default_rng(seed)
    p = [(1 - gc) / 2, gc / 2, gc / 2, (1 - gc) / 2]
    seq = "".join(rng.choice(list("ACGT"), size=n, p=p))
    path.write_text(sd.serialize_fasta([(f"g{seed}", seq[: n // 2]), (f"g{seed}b", seq[n // 2:])]))
    return str(path)


class TestIngest:
    def _cfg(self, tmp_path, **fasta):
        return write_config(tmp_path, data={"fasta": fasta})

    def test_two_classes(self, tmp_path):
        a, b, c = (_fasta(tmp_path / f"{n}.fa", i) for i, n in enumerate("abc"))
        cfg = self._cfg(tmp_path, **{"in": {"a": a}, "val_ood": {"b": b}, "test_ood": {"c": c},
                                     "train_per_class": 5, "val_per_class": 2, "test_per_class": 3})
        assert run("ingest", tmp_path / "o", config=cfg) == 0
        split = sd.read_manifest(tmp_path / "o" / "data" / "dataset.jsonl")
        assert {s.origin for s in split.test_in + split.test_ood} == {sd.IN, sd.OOD}
        assert all(len(s) == 250 for _, v in split.items() for s in v)
        assert (len(split.train), len(split.val_in), len(split.test_in), len(split.test_ood)) == (5, 2, 3, 3)

    def test_overlap_rejected(self, tmp_path):
        a, b = _fasta(tmp_path / "a.fa", 0), _fasta(tmp_path / "b.fa", 1)
        cfg = self._cfg(tmp_path, **{"in": {"a": a}, "val_ood": {"b": b}, "test_ood": {"b": b}})
        assert run("ingest", tmp_path / "o", config=cfg) == cli.EXIT_CONFIG

    def test_short_genome(self, tmp_path):
        a, b = _fasta(tmp_path / "a.fa", 0), _fasta(tmp_path / "b.fa", 1, n=200)
        cfg = self._cfg(tmp_path, **{"in": {"a": a}, "test_ood": {"b": b}, "train_per_class": 2,
                                     "val_per_class": 1, "test_per_class": 1})
        assert run("ingest", tmp_path / "o", config=cfg) == cli.EXIT_DATA


class TestPipeline:
    def test_metrics_emitted(self, pipeline):
        text = (pipeline / "report" / "metrics.csv").read_text().splitlines()
        assert text[0].startswith("# {")
        assert text[1].startswith("method,auroc,auprc,fpr80")
        methods = {ln.split(",")[0] for ln in text[2:]}
        assert methods == set(json.loads((cli.resources.files("llrood") / "configs" / "tiny.json").read_text())["methods"])

    def test_figures(self, pipeline):
        figs = set(os.listdir(pipeline / "report" / "figures"))
        assert {"roc.png", "pr.png", "hist_llr.png", "llr_track.png", "sweep.png", "tune_sim.png"} <= figs

    def test_sweep_csv(self, pipeline):
        lines = (pipeline / "sweep" / "sweep.csv").read_text().splitlines()
        assert lines[1] == "mu,lambda,val_auroc,checkpoint_path"
        assert len(lines) == 2 + 4
        ck = lines[2].split(",")[3]
        assert gm.load_checkpoint(pipeline / ck).config.perturb["mutation_rate"] == 0.05

    def test_eval_twice_identical(self, pipeline):
        first = (pipeline / "report" / "report.json").read_bytes()
        assert run("eval", pipeline) == 0
        assert (pipeline / "report" / "report.json").read_bytes() == first

    def test_provenance_everywhere(self, pipeline):
        prov = json.loads((pipeline / "scores" / "scores.jsonl").open().readline())["provenance"]
        assert set(prov) >= {"stage", "seed", "config_hash"}
        assert prov["stage"] == "score"
        for name in ("metrics.csv", "roc_points.csv", "hist_bins.csv"):
            line = (pipeline / "report" / name).open().readline()
            assert json.loads(line[2:])["config_hash"] == prov["config_hash"]
        head = json.loads((pipeline / "data" / "dataset.jsonl").open().readline())
        assert head["provenance"]["stage"] == "synth"
        metrics = (pipeline / "models" / "foreground.metrics.jsonl").read_text().splitlines()
        assert "provenance" in json.loads(metrics[0]) and "val_nll" in json.loads(metrics[-1])

    def test_scores_carry_covariates(self, pipeline):
        recs = mt.read_scores(pipeline / "scores" / "scores.jsonl")
        ood = [r for r in recs if r.origin == sd.OOD]
        assert all(r.min_d2s_distance is not None and r.gc_content is not None for r in ood)

    def test_methods_flag(self, pipeline, tmp_path):
        import shutil

        out = tmp_path / "copy"
        shutil.copytree(pipeline, out)
        assert run("score", out, "--methods", "likelihood,llr") == 0
        assert {r.method for r in mt.read_scores(out / "scores" / "scores.jsonl")} == {"likelihood", "llr"}

    def test_background_from_sweep(self, pipeline, tmp_path):
        import shutil

        out = tmp_path / "copy"
        shutil.copytree(pipeline, out)
        cfg = write_config(tmp_path, background={"source": "tune-sim"})
        assert run("train-bg", out, config=cfg) == 0
        sel = json.loads((out / "tune_sim" / "selected.json").read_text())
        bg = gm.load_checkpoint(out / "models" / "background.ckpt")
        assert bg.config.perturb["mutation_rate"] == sel["mu"] and bg.config.l2 == sel["lambda"]


class TestErrors:
    def test_missing_config(self, tmp_path):
        assert run("synth", tmp_path, config=None) == cli.EXIT_CONFIG
        assert run("synth", tmp_path, config=str(tmp_path / "nope.json")) == cli.EXIT_CONFIG

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{seed: 1")
        assert run("synth", tmp_path, config=str(p)) == cli.EXIT_CONFIG

    def test_bad_fields(self, tmp_path):
        assert run("synth", tmp_path, config=write_config(tmp_path, bogus=1)) == cli.EXIT_CONFIG
        assert run("synth", tmp_path, config=write_config(tmp_path, schema_version=9)) == cli.EXIT_CONFIG
        assert run("synth", tmp_path, "--methods", "llr,magic") == cli.EXIT_CONFIG
        assert run("synth", tmp_path, config=write_config(tmp_path, foreground={"kind": "gpt"})) == cli.EXIT_CONFIG

    def test_missing_upstream(self, tmp_path):
        assert run("score", tmp_path) == cli.EXIT_DATA
        assert run("synth", tmp_path) == 0
        assert run("sweep", tmp_path) == cli.EXIT_DATA

    def test_corrupt_manifest(self, tmp_path):
        assert run("synth", tmp_path) == 0
        with open(tmp_path / "data" / "dataset.jsonl", "a") as fh:
            fh.write("{not json\n")
        assert run("train", tmp_path) == cli.EXIT_DATA

    def test_corrupt_checkpoint(self, pipeline, tmp_path):
        import shutil

        out = tmp_path / "copy"
        shutil.copytree(pipeline, out)
        ck = out / "models" / "background.ckpt"
        ck.write_bytes(ck.read_bytes()[:-10])
        assert run("score", out, "--methods", "llr") == cli.EXIT_DATA

    def test_numeric_failure(self, tmp_path):
        (tmp_path / "scores").mkdir()
        (tmp_path / "scores" / "scores.jsonl").write_text(
            '{"id": "a", "origin": "in_distribution", "method": "llr", "score": NaN}\n')
        assert run("eval", tmp_path) == cli.EXIT_NUMERIC


def test_default_grids():
    cfg = cli.RunConfig(seed=0, data={"synthetic": {}})
    assert cfg.sweep == {"mus": [0.01, 0.05, 0.1, 0.2], "l2s": [0.0, 1e-6, 1e-5, 1e-4, 1e-3]}
    assert cfg.tune_sim["rate"] == 0.1


def test_config_hash_ignores_out():
    a = cli.RunConfig(seed=0, data={"synthetic": {}}, out="x")
    b = cli.RunConfig(seed=0, data={"synthetic": {}}, out="y")
    assert a.digest() == b.digest()
    assert a.digest() != cli.RunConfig(seed=1, data={"synthetic": {}}).digest()
