"""Autoregressive density models over encoded sequences.

Two kinds share one checkpoint format:

* ``lstm``: one-hot input -> LSTM -> dense -> softmax, trained with Adam on the
  numcore tape.
* ``ngram``: Jelinek-Mercer interpolated counts of orders 0..k, fitted in
  closed form. Used as an exact oracle and as a fast desk-scale density model.

Position ``d`` is predicted from ``x[:d]``; the first position sees a zero LSTM
state (or, for an order-k n-gram, a uniform distribution until k symbols of
context exist).
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .numcore import Tape, OptimizerState, adam_step, backward, logsumexp, xavier_uniform
from .seqdata import DataError, EncodedSequence, perturb_symbols

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"LLRCKPT\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ARConfig:
    kind: str = "lstm"
    alphabet_size: int = 4
    # lstm
    hidden: int = 128
    steps: int = 5000
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 0
    # ngram
    order: int = 5
    weights: list | None = None
    pseudocount: float = 0.5
    passes: int = 1
    # shared
    l2: float = 0.0
    perturb: dict | None = None

    def __post_init__(self):
        if self.kind not in ("lstm", "ngram"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.hidden < 1 or self.order < 1:
            raise ValueError("hidden units and n-gram order must be >= 1")
        if self.l2 < 0:
            raise ValueError("L2 coefficient must be >= 0")
        if self.weights is not None and len(self.weights) != self.order + 1:
            raise ValueError("n-gram weights need one entry per order 0..k")
        if self.perturb is not None:
            mu = self.perturb.get("mutation_rate", 0.0)
            if not 0 <= mu <= 1:
                raise ValueError("mutation rate must lie in [0, 1]")

    def interp_weights(self) -> np.ndarray:
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
        else:
            # most mass on the full order, a small shared remainder on lower orders
            w = np.full(self.order + 1, 0.1 / self.order)
            w[-1] = 0.9
        return w / w.sum()

    @property
    def is_background(self) -> bool:
        return self.perturb is not None

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# config classes a checkpoint file may carry, keyed by class name
CONFIG_TYPES = {"ARConfig": ARConfig}


@dataclass
class Checkpoint:
    config: ARConfig
    params: dict
    step: int = 0
    seed: int = 0
    fingerprint: str = ""

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = fingerprint(self.config, self.params, self.step, self.seed)


def fingerprint(config, params, step, seed) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(asdict(config), sort_keys=True).encode())
    h.update(f"{step}:{seed}".encode())
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


# -- parameter layout -----------------------------------------------------

def lstm_init(config: ARConfig, rng) -> dict:
    a, hd = config.alphabet_size, config.hidden
    return {
        "wx": xavier_uniform(rng, a, 4 * hd),
        "wh": xavier_uniform(rng, hd, 4 * hd),
        "b": np.zeros(4 * hd),
        # zero output layer: an untrained model is exactly uniform
        "wo": np.zeros((hd, a)),
        "bo": np.zeros(a),
    }


LSTM_WEIGHTS = ("wx", "wh", "wo")


def _one_hot_inputs(x: np.ndarray, a: int) -> np.ndarray:
    """(N, D) symbols -> (D, N, A) inputs where step d sees x[:, d-1]; step 0 is zeros."""
    n, d = x.shape
    oh = np.zeros((d, n, a))
    if d > 1:
        oh[np.arange(1, d)[:, None], np.arange(n)[None, :], x[:, :-1].T] = 1.0
    return oh


def lstm_tape_loss(tape: Tape, p: dict, x: np.ndarray, a: int):
    """Mean next-symbol cross-entropy for a batch ``x`` of shape (N, D)."""
    n, d = x.shape
    hd = p["wh"].shape[0]
    oh = _one_hot_inputs(x, a).reshape(d * n, a)
    xp = tape.add(tape.reshape(tape.const(oh) @ p["wx"], (d, n, 4 * hd)), p["b"])
    h = tape.const(np.zeros((n, hd)))
    c = tape.const(np.zeros((n, hd)))
    hs = []
    for t in range(d):
        h, c = tape.lstm_gates(xp[t] + h @ p["wh"], c)
        hs.append(h)
    hh = tape.reshape(tape.stack(hs), (d * n, hd))
    logits = tape.add(hh @ p["wo"], p["bo"])
    losses = tape.softmax_cross_entropy(logits, x.T.reshape(-1))
    return losses.sum() * (1.0 / (n * d)), logits


def lstm_log_probs(params: dict, x: np.ndarray) -> np.ndarray:
    """Next-symbol log-distributions, shape (N, D, A), without a tape."""
    from .numcore import sigmoid

    n, d = x.shape
    a = params["wx"].shape[0]
    hd = params["wh"].shape[0]
    xp = (_one_hot_inputs(x, a).reshape(d * n, a) @ params["wx"]).reshape(d, n, 4 * hd) + params["b"]
    h = np.zeros((n, hd))
    c = np.zeros((n, hd))
    hs = np.empty((d, n, hd))
    wh = params["wh"]
    for t in range(d):
        z = xp[t] + h @ wh
        i = sigmoid(z[:, :hd])
        f = sigmoid(z[:, hd:2 * hd])
        g = np.tanh(z[:, 2 * hd:3 * hd])
        o = sigmoid(z[:, 3 * hd:])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[t] = h
    logits = hs.reshape(d * n, hd) @ params["wo"] + params["bo"]
    logp = logits - logsumexp(logits)[:, None]
    return logp.reshape(d, n, a).transpose(1, 0, 2)


def _context_codes(x: np.ndarray, j: int, a: int) -> np.ndarray:
    """Code of the j symbols preceding each position d >= j; shape (N, D - j)."""
    n, d = x.shape
    codes = np.zeros((n, d - j), dtype=np.int64)
    for i in range(j):
        codes = codes * a + x[:, i:d - j + i]
    return codes


def ngram_counts(x: np.ndarray, order: int, a: int) -> list:
    """Per-order count tables ``(a**j, a)`` from an (N, D) symbol array."""
    tables = []
    for j in range(order + 1):
        if x.shape[1] > j:
            ctx = _context_codes(x, j, a).ravel()
            t = np.bincount(ctx * a + x[:, j:].ravel(), minlength=a ** (j + 1)).astype(np.float64)
        else:
            t = np.zeros(a ** (j + 1))
        tables.append(t.reshape(a ** j, a))
    return tables


def ngram_params(counts: list, pseudocount: float) -> dict:
    params = {}
    for j, t in enumerate(counts):
        t = t + pseudocount
        params[f"p{j}"] = t / t.sum(axis=1, keepdims=True)
    return params


def ngram_log_probs(params: dict, config: ARConfig, x: np.ndarray) -> np.ndarray:
    n, d = x.shape
    a = config.alphabet_size
    k = config.order
    w = config.interp_weights()
    out = np.full((n, d, a), -np.log(a))
    if d > k:
        mix = np.zeros((n, d - k, a))
        for j in range(k + 1):
            ctx = _context_codes(x, j, a)[:, k - j:]
            mix += w[j] * params[f"p{j}"][ctx]
        with np.errstate(divide="ignore"):
            out[:, k:, :] = np.log(mix)
    return out


# -- public API -----------------------------------------------------------

def _stack(data) -> np.ndarray:
    lengths = {len(s) for s in data}
    if len(lengths) != 1:
        raise DataError("training sequences must share one length")
    return np.stack([s.symbols for s in data])


def _check_alphabet(x: np.ndarray, a: int):
    if x.size and (x.min() < 0 or x.max() >= a):
        raise DataError(f"sequence symbols outside model alphabet of size {a}")


def train_ar(data, config: ARConfig, seed: int = 0, val=None, metrics_log=None) -> Checkpoint:
    """Fit an autoregressive model. Background models (``config.perturb`` set)
    see a fresh perturbation of every batch (n-gram: of every counting pass).

    ``metrics_log`` is an optional list that receives ``{step, train_nll, val_nll,
    val_acc}`` dicts every ``config.eval_every`` steps.
    """
    if not data:
        raise DataError("no training data")
    x = _stack(data)
    a = config.alphabet_size
    _check_alphabet(x, a)
    rng = np.random.default_rng(seed)
    pcfg = config.perturb
    if config.kind == "ngram":
        counts = None
        for _ in range(max(1, config.passes)):
            xx = x if pcfg is None else perturb_symbols(
                x, pcfg["mutation_rate"], a, rng, pcfg.get("semantics", "full_alphabet"))
            c = ngram_counts(xx, config.order, a)
            counts = c if counts is None else [u + v for u, v in zip(counts, c)]
        # L2 analogue for count models: shrink toward uniform by l2 * N symbols per cell
        extra = config.l2 * x.size
        return Checkpoint(config, ngram_params(counts, config.pseudocount + extra), config.passes, seed)

    params = lstm_init(config, rng)
    state = OptimizerState(config.lr, config.beta1, config.beta2, config.eps, config.l2)
    xv = None if val is None else _stack(val)
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, x.shape[0], size=min(config.batch_size, x.shape[0]))
        xb = x[idx]
        if pcfg is not None:
            xb = perturb_symbols(xb, pcfg["mutation_rate"], a, rng, pcfg.get("semantics", "full_alphabet"))
        tape = Tape()
        pv = {k: tape.param(v) for k, v in params.items()}
        loss, _ = lstm_tape_loss(tape, pv, xb, a)
        if not np.isfinite(loss.value):
            raise FloatingPointError(f"training loss became non-finite at step {step}")
        g = backward(tape, loss.id)
        grads = {k: g[v.id] for k, v in pv.items()}
        adam_step(params, grads, state, decay=LSTM_WEIGHTS)
        if metrics_log is not None and config.eval_every and (step % config.eval_every == 0 or step == config.steps):
            rec = {"step": step, "train_nll": float(loss.value)}
            if xv is not None:
                lp = lstm_log_probs(params, xv)
                obs = np.take_along_axis(lp, xv[..., None], axis=2)[..., 0]
                rec["val_nll"] = float(-obs.mean())
                rec["val_acc"] = float((lp.argmax(axis=2) == xv).mean())
            metrics_log.append(rec)
            log.info("step %d %s", step, rec)
    return Checkpoint(config, params, config.steps, seed)


def next_symbol_log_probs(model: Checkpoint, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    _check_alphabet(x, model.config.alphabet_size)
    if model.config.kind == "ngram":
        return ngram_log_probs(model.params, model.config, x)
    return lstm_log_probs(model.params, x)


def _as_array(seq):
    return seq.symbols if isinstance(seq, EncodedSequence) else np.asarray(seq, dtype=np.int64)


def per_position_log_prob(model: Checkpoint, seq) -> np.ndarray:
    x = _as_array(seq)[None, :]
    lp = next_symbol_log_probs(model, x)
    return np.take_along_axis(lp, x[..., None], axis=2)[0, :, 0]


def log_likelihood(model: Checkpoint, seq) -> float:
    return float(per_position_log_prob(model, seq).sum())


def batch_per_position(model: Checkpoint, seqs, batch_size: int = 256) -> list:
    """Per-position log-probs for many sequences, batching equal lengths."""
    out = [None] * len(seqs)
    by_len: dict = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(len(_as_array(s)), []).append(i)
    for _, idxs in sorted(by_len.items()):
        for lo in range(0, len(idxs), batch_size):
            chunk = idxs[lo:lo + batch_size]
            x = np.stack([_as_array(seqs[i]) for i in chunk])
            lp = next_symbol_log_probs(model, x)
            obs = np.take_along_axis(lp, x[..., None], axis=2)[..., 0]
            for row, i in enumerate(chunk):
                out[i] = obs[row]
    return out


def batch_log_likelihood(model: Checkpoint, seqs, batch_size: int = 256) -> np.ndarray:
    return np.array([float(t.sum()) for t in batch_per_position(model, seqs, batch_size)])


def mean_nll(model: Checkpoint, seqs) -> float:
    """Mean per-symbol negative log-likelihood in nats."""
    tracks = batch_per_position(model, seqs)
    return float(-np.concatenate(tracks).mean())


# -- checkpoint files -----------------------------------------------------

def save_checkpoint(cp: Checkpoint, path, provenance: dict | None = None):
    names = list(cp.params)
    header = {
        "version": CHECKPOINT_VERSION,
        "config_type": type(cp.config).__name__,
        "config": asdict(cp.config),
        "step": cp.step,
        "seed": cp.seed,
        "fingerprint": cp.fingerprint,
        "params": [{"name": n, "shape": list(np.shape(cp.params[n]))} for n in names],
    }
    if provenance is not None:
        header["provenance"] = provenance
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for n in names:
            fh.write(np.ascontiguousarray(cp.params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC) or len(blob) < len(CHECKPOINT_MAGIC) + 8:
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<Q", blob[off:off + 8])
    off += 8
    try:
        header = json.loads(blob[off:off + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
    off += hlen
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('version')} unsupported")
    params = {}
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        params[spec["name"]] = np.frombuffer(blob[off:off + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
        off += nbytes
    if off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")
    ctype = CONFIG_TYPES.get(header.get("config_type", "ARConfig"))
    if ctype is None:
        raise CheckpointError(f"{path}: unknown config type {header.get('config_type')!r}")
    try:
        config = ctype(**header["config"])
    except TypeError as exc:
        raise CheckpointError(f"{path}: config does not match this version") from exc
    expected = fingerprint(config, params, header["step"], header["seed"])
    if expected != header["fingerprint"]:
        raise CheckpointError(f"{path}: fingerprint mismatch")
    return Checkpoint(config, params, header["step"], header["seed"], header["fingerprint"])
