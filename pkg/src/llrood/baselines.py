"""Classifier-based OOD baselines on a small 1-D CNN.

Architecture: one-hot (B, D, A) -> conv1d -> ReLU -> global max-pool -> dense ->
ReLU (penultimate features) -> dense -> softmax.

Variants trained with perturbed copies of the in-distribution inputs:

* ``binary``     in vs perturbed, 2 outputs
* ``kplus1``     K classes plus a noise class for perturbed copies
* ``calibrated`` K classes, perturbed copies pushed toward the uniform prediction
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import genmodel
from .genmodel import Checkpoint
from .numcore import OptimizerState, Tape, adam_step, backward, logsumexp, softmax, xavier_uniform
from .seqdata import DataError, perturb_symbols

log = logging.getLogger(__name__)

VARIANTS = ("plain", "binary", "kplus1", "calibrated")
ODIN_TEMPERATURES = (1, 5, 10, 100, 1000)
ODIN_MAGNITUDES = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
PERTURB_RATES = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


@dataclass
class ClassifierConfig:
    n_classes: int = 10
    alphabet_size: int = 4
    filters: int = 64
    width: int = 12
    dense: int = 128
    steps: int = 500
    batch_size: int = 64
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0
    variant: str = "plain"
    perturb: dict | None = None
    uniform_weight: float = 1.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown classifier variant {self.variant!r}")
        if self.variant != "plain" and not self.perturb:
            raise ValueError(f"variant {self.variant!r} needs a perturbation config")

    @property
    def n_outputs(self) -> int:
        return {"plain": self.n_classes, "binary": 2, "kplus1": self.n_classes + 1,
                "calibrated": self.n_classes}[self.variant]


genmodel.CONFIG_TYPES["ClassifierConfig"] = ClassifierConfig

CLF_WEIGHTS = ("conv_w", "dense_w", "out_w")


def init_params(cfg: ClassifierConfig, rng) -> dict:
    a, w, f, h = cfg.alphabet_size, cfg.width, cfg.filters, cfg.dense
    return {
        "conv_w": xavier_uniform(rng, w * a, f).reshape(w, a, f),
        "conv_b": np.zeros(f),
        "dense_w": xavier_uniform(rng, f, h),
        "dense_b": np.zeros(h),
        "out_w": xavier_uniform(rng, h, cfg.n_outputs),
        "out_b": np.zeros(cfg.n_outputs),
    }


def one_hot(x: np.ndarray, a: int) -> np.ndarray:
    return np.eye(a)[np.asarray(x)]


def tape_forward(tape: Tape, p: dict, x: np.ndarray, a: int):
    """Returns (features, logits) Vars for a (B, D) batch."""
    conv = tape.relu(tape.add(tape.conv1d(tape.const(one_hot(x, a)), p["conv_w"]), p["conv_b"]))
    pooled = tape.max_pool(conv)
    feats = tape.relu(tape.add(pooled @ p["dense_w"], p["dense_b"]))
    logits = tape.add(feats @ p["out_w"], p["out_b"])
    return feats, logits


def features(params: dict, x: np.ndarray) -> np.ndarray:
    """Penultimate activations for a (B, D) symbol batch."""
    x = np.atleast_2d(x)
    w = params["conv_w"]
    width, a, f = w.shape
    if x.shape[1] <= width:
        raise DataError("sequence shorter than convolution width")
    oh = one_hot(x, a)
    cols = np.lib.stride_tricks.sliding_window_view(oh, width, axis=1).transpose(0, 1, 3, 2)
    conv = np.maximum(cols.reshape(x.shape[0], -1, width * a) @ w.reshape(width * a, f) + params["conv_b"], 0.0)
    pooled = conv.max(axis=1)
    return np.maximum(pooled @ params["dense_w"] + params["dense_b"], 0.0)


def head_logits(params: dict, feats: np.ndarray) -> np.ndarray:
    return feats @ params["out_w"] + params["out_b"]


def predict_proba(model: Checkpoint, x) -> np.ndarray:
    return softmax(head_logits(model.params, features(model.params, _batch(x))))


def _batch(x):
    if isinstance(x, (list, tuple)) and x and hasattr(x[0], "symbols"):
        return np.stack([s.symbols for s in x])
    if hasattr(x, "symbols"):
        return x.symbols[None, :]
    return np.atleast_2d(np.asarray(x, dtype=np.int64))


def train_classifier(data, cfg: ClassifierConfig, seed: int = 0) -> Checkpoint:
    """Cross-entropy training on labelled in-distribution sequences.

    Perturbed copies for the ``binary``/``kplus1``/``calibrated`` variants are
    drawn fresh for every batch.
    """
    if not data:
        raise DataError("no training data")
    x = genmodel._stack(data)
    y = np.array([s.class_label for s in data])
    if any(v is None for v in y) or y.min() < 0 or y.max() >= cfg.n_classes:
        raise DataError(f"labels must lie in [0, {cfg.n_classes})")
    y = y.astype(np.int64)
    a = cfg.alphabet_size
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    state = OptimizerState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.l2)
    bs = min(cfg.batch_size, x.shape[0])
    for step in range(cfg.steps):
        idx = rng.integers(0, x.shape[0], size=bs)
        xb, yb = x[idx], y[idx]
        if cfg.variant != "plain":
            pc = cfg.perturb
            xp = perturb_symbols(xb, pc["mutation_rate"], a, rng, pc.get("semantics", "full_alphabet"))
        tape = Tape()
        pv = {k: tape.param(v) for k, v in params.items()}
        if cfg.variant == "plain":
            _, logits = tape_forward(tape, pv, xb, a)
            loss = tape.softmax_cross_entropy(logits, yb).sum() * (1.0 / bs)
        elif cfg.variant in ("binary", "kplus1"):
            noise_label = 1 if cfg.variant == "binary" else cfg.n_classes
            target = np.zeros(bs, dtype=np.int64) if cfg.variant == "binary" else yb
            _, logits = tape_forward(tape, pv, np.concatenate([xb, xp]), a)
            labels = np.concatenate([target, np.full(bs, noise_label)])
            loss = tape.softmax_cross_entropy(logits, labels).sum() * (1.0 / (2 * bs))
        else:
            _, logits = tape_forward(tape, pv, np.concatenate([xb, xp]), a)
            k = cfg.n_classes
            target = np.zeros((2 * bs, k))
            target[np.arange(bs), yb] = 1.0
            target[bs:] = 1.0 / k
            weight = np.r_[np.ones(bs), np.full(bs, cfg.uniform_weight)]
            loss = (tape.softmax_cross_entropy(logits, target) * tape.const(weight)).sum() * (1.0 / (2 * bs))
        if not np.isfinite(loss.value):
            raise FloatingPointError(f"classifier loss became non-finite at step {step}")
        g = backward(tape, loss.id)
        adam_step(params, {k: g[v.id] for k, v in pv.items()}, state, decay=CLF_WEIGHTS)
    return Checkpoint(cfg, params, cfg.steps, seed)


def accuracy(model: Checkpoint, data) -> float:
    p = predict_proba(model, data)
    y = np.array([s.class_label for s in data])
    return float((p.argmax(axis=1) == y).mean())


# -- scores: larger means more in-distribution ----------------------------

def score_max_prob(model: Checkpoint, seq):
    return _odin_from_features(model.params, features(model.params, _batch(seq)), 1.0, 0.0, seq)


def score_neg_entropy(model: Checkpoint, seq):
    p = predict_proba(model, seq)
    return _squeeze(neg_entropy(p), seq)


def neg_entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return terms.sum(axis=-1)


def score_odin(model: Checkpoint, seq, temperature: float = 1000.0, magnitude: float = 0.0):
    """Temperature-scaled max softmax after a signed-gradient step on the
    penultimate features (the discrete-input adaptation of ODIN)."""
    if temperature < 1 or magnitude < 0:
        raise ValueError("ODIN needs temperature >= 1 and magnitude >= 0")
    return _odin_from_features(model.params, features(model.params, _batch(seq)), temperature, magnitude, seq)


def _odin_from_features(params, feats, temperature, magnitude, like):
    if magnitude != 0.0:
        # d/df log max_k softmax(logits(f)/T)_k = (onehot - p) W^T / T
        z = head_logits(params, feats) / temperature
        p = softmax(z)
        onehot = np.eye(p.shape[1])[p.argmax(axis=1)]
        grad = (onehot - p) @ params["out_w"].T / temperature
        feats = feats + magnitude * np.sign(grad)
    z = head_logits(params, feats) / temperature
    return _squeeze(softmax(z).max(axis=1), like)


def _squeeze(arr, like):
    if hasattr(like, "symbols") or (isinstance(like, np.ndarray) and like.ndim == 1):
        return float(arr[0])
    return arr


def ensemble_score(models, seq):
    """Max class probability of the averaged predictive distribution."""
    if not models:
        raise ValueError("empty ensemble")
    p = sum(predict_proba(m, seq) for m in models) / len(models)
    return _squeeze(p.max(axis=1), seq)


def score_binary_logodds(model: Checkpoint, seq):
    """log p(in|x) - log p(perturbed|x), i.e. the logit difference."""
    z = head_logits(model.params, features(model.params, _batch(seq)))
    return _squeeze(z[:, 0] - z[:, 1], seq)


def score_kplus1(model: Checkpoint, seq):
    p = predict_proba(model, seq)
    k = p.shape[1] - 1
    return _squeeze(p[:, :k].max(axis=1), seq)


# -- Mahalanobis -----------------------------------------------------------

@dataclass
class MahalanobisFit:
    means: np.ndarray        # (K, F)
    covariance: np.ndarray   # (F, F), regularised
    epsilon: float

    def __post_init__(self):
        try:
            self._chol = np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is singular after regularisation") from exc


def fit_mahalanobis_features(feats: np.ndarray, labels: np.ndarray, epsilon: float | None = None) -> MahalanobisFit:
    """Class means and one covariance pooled over classes.

    ``epsilon`` is added to the diagonal; by default ``1e-6 * trace / dim``.
    """
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    means = []
    centred = []
    for k in classes:
        fk = feats[labels == k]
        if fk.shape[0] < 2:
            raise DataError(f"class {k} has fewer than two examples")
        mu = fk.mean(axis=0)
        means.append(mu)
        centred.append(fk - mu)
    c = np.concatenate(centred)
    cov = c.T @ c / c.shape[0]
    if epsilon is None:
        epsilon = 1e-6 * max(np.trace(cov), 1e-12) / cov.shape[0]
    cov = cov + epsilon * np.eye(cov.shape[0])
    return MahalanobisFit(np.stack(means), cov, float(epsilon))


def fit_mahalanobis(model: Checkpoint, data, epsilon: float | None = None) -> MahalanobisFit:
    x = genmodel._stack(data)
    labels = np.array([s.class_label for s in data])
    return fit_mahalanobis_features(features(model.params, x), labels, epsilon)


def mahalanobis_from_features(fit: MahalanobisFit, feats: np.ndarray) -> np.ndarray:
    """-min_k squared Mahalanobis distance to each class mean."""
    from scipy.linalg import solve_triangular

    feats = np.atleast_2d(feats)
    best = None
    for mu in fit.means:
        diff = solve_triangular(fit._chol, (feats - mu).T, lower=True)
        d2 = (diff * diff).sum(axis=0)
        best = d2 if best is None else np.minimum(best, d2)
    return -best


def score_mahalanobis(fit: MahalanobisFit, model: Checkpoint, seq):
    return _squeeze(mahalanobis_from_features(fit, features(model.params, _batch(seq))), seq)


def with_variant(cfg: ClassifierConfig, variant: str, mutation_rate: float) -> ClassifierConfig:
    return dataclasses.replace(cfg, variant=variant,
                               perturb={"mutation_rate": mutation_rate, "semantics": "full_alphabet"})


def tune_odin(model: Checkpoint, val_in, val_ood, temperatures=ODIN_TEMPERATURES, magnitudes=ODIN_MAGNITUDES):
    """Pick (T, eps) maximising validation AUROC; ties prefer the earlier grid entry."""
    from .metrics import auroc

    fi = features(model.params, _batch(val_in))
    fo = features(model.params, _batch(val_ood))
    best = None
    for t in temperatures:
        for e in magnitudes:
            a = auroc(_odin_from_features(model.params, fi, t, e, None),
                      _odin_from_features(model.params, fo, t, e, None))
            if best is None or a > best[0]:
                best = (a, float(t), float(e))
    return best[1], best[2]
