import dataclasses

import numpy as np
import pytest

from llrood import genmodel as gm
from llrood.genmodel import ARConfig, CheckpointError
from llrood.seqdata import DNA, DataError, EncodedSequence

from conftest import MARKOV_T, chain_entropy

NGRAM1 = ARConfig(kind="ngram", order=1, weights=[0.01, 0.99], pseudocount=0.5)
TINY_LSTM = ARConfig(kind="lstm", hidden=8, steps=40, batch_size=16, lr=0.02)


def seq(text):
    return EncodedSequence("q", DNA.encode(text))


def test_ngram_markov_entropy(markov_data):
    train, held = markov_data
    cp = gm.train_ar(train, NGRAM1)
    assert abs(gm.mean_nll(cp, held) - chain_entropy(MARKOV_T)) <= 0.05


def test_ngram_hand_computed():
    train = [EncodedSequence("a", DNA.encode("ACGTACGA")), EncodedSequence("b", DNA.encode("CCGATCGA"))]
    cfg = ARConfig(kind="ngram", order=1, weights=[0.2, 0.8], pseudocount=1.0)
    cp = gm.train_ar(train, cfg)
    # stored tables: unigram counts at positions >= 0, bigram counts from 7+7 transitions
    text = "ACGTACGA" + "CCGATCGA"
    uni = np.array([text.count(c) for c in "ACGT"], dtype=float) + 1.0
    np.testing.assert_allclose(cp.params["p0"][0], uni / uni.sum())
    bi = np.ones((4, 4))
    for s in ("ACGTACGA", "CCGATCGA"):
        for x, y in zip(s[:-1], s[1:]):
            bi["ACGT".index(x), "ACGT".index(y)] += 1
    bi /= bi.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(cp.params["p1"], bi)
    p0 = uni / uni.sum()
    a, c, g = 0, 1, 2
    expected = np.log(0.25) + np.log(0.2 * p0[c] + 0.8 * bi[a, c]) + np.log(0.2 * p0[g] + 0.8 * bi[c, g])
    assert gm.log_likelihood(cp, seq("ACG")) == pytest.approx(expected, abs=1e-12)


def test_lstm_untrained_is_uniform():
    data = [EncodedSequence(f"s{i}", np.random.default_rng(i).integers(0, 4, 250)) for i in range(4)]
    cp = gm.train_ar(data, dataclasses.replace(TINY_LSTM, steps=0), seed=3)
    lp = gm.next_symbol_log_probs(cp, data[0].symbols)
    np.testing.assert_allclose(lp, np.log(0.25), atol=1e-15)
    assert gm.log_likelihood(cp, data[0]) == pytest.approx(250 * np.log(0.25), abs=1e-9)


def test_uniform_model_track():
    cp = gm.Checkpoint(ARConfig(kind="ngram", order=1), {"p0": np.full((1, 4), 0.25), "p1": np.full((4, 4), 0.25)})
    s = EncodedSequence("u", np.random.default_rng(0).integers(0, 4, 250))
    track = gm.per_position_log_prob(cp, s)
    np.testing.assert_allclose(track, np.log(0.25), rtol=1e-15)
    assert gm.log_likelihood(cp, s) == pytest.approx(250 * np.log(0.25), abs=1e-9)


def test_certain_model_zero_track():
    p1 = np.zeros((4, 4))
    p1[np.arange(4), (np.arange(4) + 1) % 4] = 1.0
    cfg = ARConfig(kind="ngram", order=1, weights=[0.0, 1.0])
    cp = gm.Checkpoint(cfg, {"p0": np.full((1, 4), 0.25), "p1": p1})
    track = gm.per_position_log_prob(cp, seq("ACGTACGT"))
    assert track[0] == np.log(0.25)
    np.testing.assert_array_equal(track[1:], 0.0)


@pytest.mark.parametrize("cfg", [NGRAM1, ARConfig(kind="ngram", order=4), TINY_LSTM], ids=["ng1", "ng4", "lstm"])
def test_track_sums_and_valid_distributions(cfg, markov_data):
    train, held = markov_data
    cp = gm.train_ar(train[:40], cfg, seed=1)
    for s in held[:5]:
        track = gm.per_position_log_prob(cp, s)
        assert track.sum() == pytest.approx(gm.log_likelihood(cp, s), abs=1e-9)
        assert (track <= 0).all()
        lp = gm.next_symbol_log_probs(cp, s.symbols)[0]
        np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-9)
    batched = gm.batch_log_likelihood(cp, held[:5])
    np.testing.assert_allclose(batched, [gm.log_likelihood(cp, s) for s in held[:5]], atol=1e-9)


def test_lstm_loss_decreases(markov_data):
    train, held = markov_data
    log = []
    cfg = dataclasses.replace(TINY_LSTM, steps=60, eval_every=30)
    x0 = gm.mean_nll(gm.train_ar(train, dataclasses.replace(cfg, steps=0)), held[:10])
    gm.train_ar([s for s in train], cfg, seed=0, val=held[:10], metrics_log=log)
    assert [r["step"] for r in log] == [30, 60]
    assert log[-1]["val_nll"] < x0 - 0.05
    assert set(log[0]) == {"step", "train_nll", "val_nll", "val_acc"}


@pytest.mark.parametrize("cfg", [TINY_LSTM, dataclasses.replace(NGRAM1, perturb={"mutation_rate": 0.1})])
def test_training_deterministic(cfg, markov_data):
    train, _ = markov_data
    a = gm.train_ar(train[:20], cfg, seed=5)
    b = gm.train_ar(train[:20], cfg, seed=5)
    assert a.fingerprint == b.fingerprint
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    c = gm.train_ar(train[:20], cfg, seed=6)
    assert c.fingerprint != a.fingerprint


def test_background_lstm_perturbs_batches(markov_data):
    train, _ = markov_data
    plain = gm.train_ar(train[:20], dataclasses.replace(TINY_LSTM, steps=5), seed=1)
    bg = gm.train_ar(train[:20], dataclasses.replace(TINY_LSTM, steps=5, perturb={"mutation_rate": 0.5}), seed=1)
    assert not np.array_equal(plain.params["wx"], bg.params["wx"])


def test_ngram_background_flattens(markov_data):
    train, held = markov_data
    fg = gm.train_ar(train, NGRAM1)
    bg = gm.train_ar(train, dataclasses.replace(NGRAM1, perturb={"mutation_rate": 0.5}), seed=1)
    # a perturbed corpus is closer to uniform, so transitions carry less information
    assert gm.mean_nll(bg, held) > gm.mean_nll(fg, held)
    ent = lambda p: -(p * np.log(p)).sum(axis=1).mean()
    assert ent(bg.params["p1"]) > ent(fg.params["p1"])


def test_errors():
    with pytest.raises(DataError):
        gm.train_ar([], NGRAM1)
    with pytest.raises(DataError):
        gm.train_ar([EncodedSequence("x", [0, 5, 1])], NGRAM1)
    cp = gm.train_ar([seq("ACGTAC")], NGRAM1)
    with pytest.raises(DataError):
        gm.log_likelihood(cp, EncodedSequence("x", [0, 7]))
    with pytest.raises(ValueError):
        ARConfig(kind="pixelcnn")
    with pytest.raises(ValueError):
        ARConfig(l2=-1.0)


class TestCheckpointFiles:
    @pytest.fixture
    def cp(self, markov_data):
        return gm.train_ar(markov_data[0][:20], TINY_LSTM, seed=2)

    def test_round_trip_scores(self, cp, tmp_path):
        path = tmp_path / "m.ckpt"
        gm.save_checkpoint(cp, path)
        back = gm.load_checkpoint(path)
        rng = np.random.default_rng(0)
        seqs = [EncodedSequence(f"r{i}", rng.integers(0, 4, 60)) for i in range(100)]
        assert gm.batch_log_likelihood(cp, seqs).tobytes() == gm.batch_log_likelihood(back, seqs).tobytes()
        assert back.config == cp.config and back.seed == 2

    def test_truncated(self, cp, tmp_path):
        path = tmp_path / "m.ckpt"
        gm.save_checkpoint(cp, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(CheckpointError, match="truncated"):
            gm.load_checkpoint(path)

    def test_tampered(self, cp, tmp_path):
        path = tmp_path / "m.ckpt"
        gm.save_checkpoint(cp, path)
        blob = bytearray(path.read_bytes())
        blob[-3] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="fingerprint"):
            gm.load_checkpoint(path)

    def test_version_mismatch(self, cp, tmp_path):
        path = tmp_path / "m.ckpt"
        gm.save_checkpoint(cp, path)
        blob = path.read_bytes().replace(b'"version": 1', b'"version": 9')
        path.write_bytes(blob)
        with pytest.raises(CheckpointError, match="version"):
            gm.load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "x"
        path.write_bytes(b"hello")
        with pytest.raises(CheckpointError):
            gm.load_checkpoint(path)
