"""Likelihood-ratio scoring against a background model, WAIC, and the
hyperparameter selection protocols for the background model."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import genmodel
from .genmodel import ARConfig, Checkpoint
from .metrics import auroc
from .seqdata import DataError, perturb_symbols, EncodedSequence

log = logging.getLogger(__name__)

PAPER_MU_GRID = (0.01, 0.05, 0.1, 0.2)
PAPER_L2_GRID = (0.0, 1e-6, 1e-5, 1e-4, 1e-3)
SIMULATED_OOD_RATE = 0.1


@dataclass
class LLRScorer:
    foreground: Checkpoint
    background: Checkpoint

    def __post_init__(self):
        fc, bc = self.foreground.config, self.background.config
        if fc.alphabet_size != bc.alphabet_size or fc.kind != bc.kind:
            raise ValueError("foreground and background must share alphabet and model kind")

    def score(self, seq) -> float:
        return llr_score(self, seq)

    def score_many(self, seqs) -> np.ndarray:
        fg = genmodel.batch_log_likelihood(self.foreground, seqs)
        bg = genmodel.batch_log_likelihood(self.background, seqs)
        return fg - bg


def llr_score(scorer: LLRScorer, seq) -> float:
    """log p_fg(x) - log p_bg(x); small values flag OOD inputs."""
    return genmodel.log_likelihood(scorer.foreground, seq) - genmodel.log_likelihood(scorer.background, seq)


def per_position_llr(scorer: LLRScorer, seq) -> np.ndarray:
    return (genmodel.per_position_log_prob(scorer.foreground, seq)
            - genmodel.per_position_log_prob(scorer.background, seq))


def to_bits_per_dim(nats, length: int):
    return np.asarray(nats) / (length * np.log(2.0))


def waic_score(models, seq) -> float:
    """Mean minus population variance of the per-model log-likelihoods."""
    if len(models) < 2:
        raise ValueError("WAIC needs at least two models")
    lls = np.array([genmodel.log_likelihood(m, seq) for m in models])
    return waic_from_loglik(lls)


def waic_from_loglik(lls) -> float:
    lls = np.asarray(lls, dtype=np.float64)
    return float(lls.mean() - lls.var())


def train_generative_ensemble(data, config: ARConfig, seeds) -> list:
    """Independently trained density models, one per seed.

    LSTM members differ by initialisation and batch order. Count models have no
    randomness of their own, so each n-gram member is fitted to a bootstrap
    resample of the training sequences.
    """
    models = []
    for s in seeds:
        members = data
        if config.kind == "ngram":
            idx = np.random.default_rng(s).integers(0, len(data), size=len(data))
            members = [data[i] for i in idx]
        models.append(genmodel.train_ar(members, config, seed=s))
    return models


def waic_many(models, seqs) -> np.ndarray:
    if len(models) < 2:
        raise ValueError("WAIC needs at least two models")
    lls = np.stack([genmodel.batch_log_likelihood(m, seqs) for m in models])
    return lls.mean(axis=0) - lls.var(axis=0)


def background_config(base: ARConfig, mu: float, l2: float, semantics: str = "full_alphabet") -> ARConfig:
    if mu <= 0:
        raise ValueError("background mutation rate must be > 0")
    return dataclasses.replace(base, l2=l2, perturb={"mutation_rate": mu, "semantics": semantics})


@dataclass
class SweepGrid:
    mus: tuple = PAPER_MU_GRID
    l2s: tuple = PAPER_L2_GRID

    def __post_init__(self):
        if not self.mus or not self.l2s:
            raise ValueError("sweep grids must be non-empty")
        if any(not 0 <= m <= 1 for m in self.mus):
            raise ValueError("mutation rates must lie in [0, 1]")

    def cells(self):
        return [(float(m), float(l)) for m in self.mus for l in self.l2s]


@dataclass
class SweepResult:
    rows: list            # dicts: mu, lambda, val_auroc, seed, checkpoint (in memory)
    selected: tuple
    foreground: Checkpoint

    def best_row(self):
        return next(r for r in self.rows if (r["mu"], r["lambda"]) == self.selected)


def select_cell(rows) -> tuple:
    """Highest validation AUROC; ties prefer smaller mu, then smaller lambda."""
    best = min(rows, key=lambda r: (-r["val_auroc"], r["mu"], r["lambda"]))
    return best["mu"], best["lambda"]


def sweep(train, grid: SweepGrid, val_in, val_ood, base: ARConfig, seed: int = 0,
          foreground: Checkpoint | None = None, semantics: str = "full_alphabet",
          on_cell=None) -> SweepResult:
    """Train one background model per (mu, lambda) cell against a shared
    foreground and pick the cell with the best validation AUROC."""
    if not val_in or not val_ood:
        raise DataError("sweep needs non-empty validation sets")
    if foreground is None:
        foreground = genmodel.train_ar(train, base, seed=seed)
    fg_in = genmodel.batch_log_likelihood(foreground, val_in)
    fg_ood = genmodel.batch_log_likelihood(foreground, val_ood)
    rows = []
    for k, (mu, l2) in enumerate(grid.cells()):
        cell_seed = _cell_seed(seed, k)
        bg = genmodel.train_ar(train, background_config(base, mu, l2, semantics), seed=cell_seed)
        s_in = fg_in - genmodel.batch_log_likelihood(bg, val_in)
        s_ood = fg_ood - genmodel.batch_log_likelihood(bg, val_ood)
        row = {"mu": mu, "lambda": l2, "val_auroc": auroc(s_in, s_ood), "seed": cell_seed, "checkpoint": bg}
        log.info("sweep cell mu=%g lambda=%g val_auroc=%.4f", mu, l2, row["val_auroc"])
        if on_cell is not None:
            on_cell(row)
        rows.append(row)
    return SweepResult(rows, select_cell(rows), foreground)


def _cell_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def simulated_ood(val_in, rate: float, seed: int, alphabet_size: int = 4) -> list:
    """Stand-in OOD set: copies of ``val_in`` mutated at ``rate`` (full alphabet)."""
    if rate <= 0:
        raise ValueError("simulation mutation rate must be > 0")
    rng = np.random.default_rng(seed)
    return [EncodedSequence(f"{s.id}:sim", perturb_symbols(s.symbols, rate, alphabet_size, rng),
                            None, "ood") for s in val_in]


def simulated_ood_tune(train, val_in, rate: float = SIMULATED_OOD_RATE, grid: SweepGrid | None = None,
                       base: ARConfig | None = None, seed: int = 0, foreground=None, **kw) -> SweepResult:
    """As :func:`sweep`, with mutated in-distribution data in place of real OOD."""
    if rate <= 0:
        raise ValueError("simulation mutation rate must be > 0")
    grid = grid or SweepGrid()
    base = base or ARConfig()
    sim = simulated_ood(val_in, rate, _cell_seed(seed, -1 % 2 ** 31), base.alphabet_size)
    return sweep(train, grid, val_in, sim, base, seed=seed, foreground=foreground, **kw)
