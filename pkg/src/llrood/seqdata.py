"""Sequence ingestion, encoding, fragmentation, synthetic benchmarks, perturbation
and the d2S alignment-free distance."""
from __future__ import annotations

import io
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

IN = "in_distribution"
OOD = "ood"
UNKNOWN = "unknown"
ORIGINS = (IN, OOD, UNKNOWN)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple = ("A", "C", "G", "T")

    def __post_init__(self):
        if len(self.symbols) < 2 or len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique and at least 2")

    @property
    def size(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> np.ndarray:
        lut = self._lut()
        codes = lut[np.frombuffer(text.encode("ascii"), dtype=np.uint8)]
        if (codes < 0).any():
            bad = sorted({ch for ch in text if ch not in self.symbols})
            raise DataError(f"symbols outside alphabet: {bad}")
        return codes.astype(np.int64)

    def decode(self, codes) -> str:
        return "".join(self.symbols[int(c)] for c in codes)

    def _lut(self):
        lut = np.full(256, -1, dtype=np.int64)
        for k, s in enumerate(self.symbols):
            lut[ord(s)] = k
        return lut


DNA = Alphabet()


@dataclass
class EncodedSequence:
    id: str
    symbols: np.ndarray
    class_label: int | None = None
    origin: str = UNKNOWN
    motif_mask: np.ndarray | None = None

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int64)
        if self.symbols.ndim != 1 or self.symbols.size == 0:
            raise DataError(f"{self.id}: sequence must be non-empty 1-D")
        if self.origin not in ORIGINS:
            raise DataError(f"{self.id}: bad origin {self.origin!r}")

    def __len__(self):
        return self.symbols.size

    def check_alphabet(self, alphabet: Alphabet = DNA):
        if self.symbols.min() < 0 or self.symbols.max() >= alphabet.size:
            raise DataError(f"{self.id}: symbol outside alphabet of size {alphabet.size}")


@dataclass
class PerturbConfig:
    mutation_rate: float
    semantics: str = "full_alphabet"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation rate must lie in [0, 1]")
        if self.semantics not in ("full_alphabet", "other_symbols"):
            raise ValueError(f"unknown perturbation semantics {self.semantics!r}")


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val_in: list = field(default_factory=list)
    val_ood: list = field(default_factory=list)
    test_in: list = field(default_factory=list)
    test_ood: list = field(default_factory=list)

    NAMES = ("train", "val_in", "val_ood", "test_in", "test_ood")

    def validate(self):
        labels = {n: {s.class_label for s in getattr(self, n)} for n in self.NAMES}
        if labels["val_ood"] & labels["test_ood"]:
            raise DataError("val_ood and test_ood share class labels")
        if labels["train"] & (labels["val_ood"] | labels["test_ood"]):
            raise DataError("training classes overlap OOD classes")
        return self

    def items(self):
        return [(n, getattr(self, n)) for n in self.NAMES]


# -- FASTA ---------------------------------------------------------------------

def parse_fasta(stream) -> list[tuple[str, str]]:
    """Parse FASTA text (str or text stream) into ``(header, sequence)`` pairs."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records = []
    header = None
    chunks: list[str] = []
    for lineno, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            if header is not None:
                records.append(_close(header, chunks))
            header, chunks = line[1:], []
        else:
            if header is None:
                raise DataError(f"line {lineno}: sequence data before first header")
            chunks.append(line.upper())
    if header is not None:
        records.append(_close(header, chunks))
    return records


def _close(header, chunks):
    seq = "".join(chunks)
    if not seq:
        raise DataError(f"empty record {header!r}")
    return header, seq


def serialize_fasta(records: Iterable[tuple[str, str]], width: int = 60) -> str:
    out = []
    for header, seq in records:
        out.append(f">{header}\n")
        for i in range(0, len(seq), width):
            out.append(seq[i:i + width] + "\n")
    return "".join(out)


# -- fragmentation -----------------------------------------------------------

def fragment(genome: str, length: int, count: int, rng, alphabet: Alphabet = DNA,
             id_prefix: str = "frag", stride: int | None = None, **meta) -> list[EncodedSequence]:
    """Cut ``count`` windows of ``length`` from ``genome``.

    Start positions are drawn uniformly without replacement among windows that
    contain only alphabet symbols. With ``stride`` set, windows are tiled from
    position 0 instead and the first ``count`` valid ones are kept.
    """
    genome = genome.upper()
    n = len(genome)
    if n < length:
        raise DataError(f"genome of length {n} shorter than fragment length {length}")
    valid = np.zeros(256, dtype=bool)
    for s in alphabet.symbols:
        valid[ord(s)] = True
    bad = (~valid[np.frombuffer(genome.encode("ascii"), dtype=np.uint8)]).astype(np.int64)
    bad_in_window = np.convolve(bad, np.ones(length, dtype=np.int64), mode="valid")
    starts = np.flatnonzero(bad_in_window == 0)
    if stride is not None:
        starts = starts[starts % stride == 0]
    if starts.size < count:
        raise DataError(f"only {starts.size} valid start positions, {count} requested")
    if stride is None:
        chosen = np.sort(rng.choice(starts, size=count, replace=False))
    else:
        chosen = starts[:count]
    return [EncodedSequence(f"{id_prefix}:{int(s)}", alphabet.encode(genome[s:s + length]), **meta)
            for s in chosen]


# -- composition -----------------------------------------------------------

def gc_content(seq, alphabet: Alphabet = DNA) -> float:
    if set(alphabet.symbols) != {"A", "C", "G", "T"}:
        raise DataError("GC content needs the DNA alphabet")
    sym = seq.symbols if isinstance(seq, EncodedSequence) else np.asarray(seq)
    g, c = alphabet.symbols.index("G"), alphabet.symbols.index("C")
    return float(np.count_nonzero((sym == g) | (sym == c)) / sym.size)


# -- perturbation ----------------------------------------------------------

def perturb_symbols(symbols: np.ndarray, mutation_rate: float, size: int, rng,
                    semantics: str = "full_alphabet") -> np.ndarray:
    """Array-level perturbation; works on any integer array shape."""
    symbols = np.asarray(symbols)
    hit = rng.random(symbols.shape) < mutation_rate
    if semantics == "full_alphabet":
        repl = rng.integers(0, size, symbols.shape)
    elif semantics == "other_symbols":
        repl = (symbols + rng.integers(1, size, symbols.shape)) % size
    else:
        raise ValueError(f"unknown perturbation semantics {semantics!r}")
    return np.where(hit, repl, symbols)


def perturb(seq: EncodedSequence, config: PerturbConfig, rng, alphabet: Alphabet = DNA) -> EncodedSequence:
    out = perturb_symbols(seq.symbols, config.mutation_rate, alphabet.size, rng, config.semantics)
    return EncodedSequence(seq.id, out, seq.class_label, seq.origin)


# -- synthetic benchmark ---------------------------------------------------

@dataclass
class ClassSpec:
    label: int
    origin: str
    gc: float
    motifs: list
    planting_rate: float = 1.0
    # per-position mutation applied after sampling (diverged copies of a class)
    mutation_rate: float = 0.0


@dataclass
class SyntheticSpec:
    classes: list
    length: int = 250
    train_per_class: int = 2000
    val_per_class: int = 200
    test_per_class: int = 200
    # OOD class labels used only for validation (disjoint from test OOD)
    val_ood_labels: tuple = ()

    def validate(self):
        for c in self.classes:
            if not 0.0 < c.gc < 1.0:
                raise DataError(f"class {c.label}: GC target must lie in (0, 1)")
            if not 0.0 <= c.planting_rate <= 1.0:
                raise DataError(f"class {c.label}: planting rate must lie in [0, 1]")
            if not 0.0 <= c.mutation_rate <= 1.0:
                raise DataError(f"class {c.label}: mutation rate must lie in [0, 1]")
            for m in c.motifs:
                if len(m) >= self.length:
                    raise DataError(f"class {c.label}: motif {m!r} longer than sequence")
            if sum(len(m) for m in c.motifs) > self.length:
                raise DataError(f"class {c.label}: motifs cannot be placed without overlap")
        in_m = {m for c in self.classes if c.origin == IN for m in c.motifs}
        # a mutated OOD class may reuse motifs: its copies diverge by mutation
        ood_m = {m for c in self.classes if c.origin == OOD and c.mutation_rate == 0 for m in c.motifs}
        if in_m & ood_m:
            raise DataError("in-distribution and OOD classes share motifs")
        return self

    def to_dict(self):
        return {
            "length": self.length, "train_per_class": self.train_per_class,
            "val_per_class": self.val_per_class, "test_per_class": self.test_per_class,
            "val_ood_labels": list(self.val_ood_labels),
            "classes": [vars(c) | {"motifs": list(c.motifs)} for c in self.classes],
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        classes = [ClassSpec(**c) for c in d.pop("classes")]
        d["val_ood_labels"] = tuple(d.get("val_ood_labels", ()))
        return cls(classes=classes, **d)


def gc_probs(gc: float, alphabet: Alphabet = DNA) -> np.ndarray:
    p = np.empty(alphabet.size)
    for k, s in enumerate(alphabet.symbols):
        p[k] = gc / 2 if s in "GC" else (1 - gc) / 2
    return p


def sample_class_sequences(cls: ClassSpec, n: int, length: int, rng, alphabet: Alphabet = DNA):
    """i.i.d. background at the class GC, motifs written at non-overlapping offsets.

    Returns ``(symbols (n, length), motif_mask (n, length))``.
    """
    seqs = rng.choice(alphabet.size, size=(n, length), p=gc_probs(cls.gc, alphabet))
    mask = np.zeros((n, length), dtype=bool)
    motifs = [alphabet.encode(m) for m in cls.motifs]
    for row in range(n):
        planted = [m for m in motifs if rng.random() < cls.planting_rate]
        if not planted:
            continue
        # random non-overlapping layout: distribute the slack among gaps
        order = rng.permutation(len(planted))
        slack = length - sum(len(m) for m in planted)
        cuts = np.sort(rng.integers(0, slack + 1, size=len(planted)))
        pos = 0
        prev = 0
        for k, j in enumerate(order):
            pos += cuts[k] - prev
            prev = cuts[k]
            m = planted[j]
            seqs[row, pos:pos + len(m)] = m
            mask[row, pos:pos + len(m)] = True
            pos += len(m)
    if cls.mutation_rate > 0:
        seqs = perturb_symbols(seqs, cls.mutation_rate, alphabet.size, rng, "other_symbols")
    return seqs, mask


def synth_generate(spec: SyntheticSpec, rng, alphabet: Alphabet = DNA) -> DatasetSplit:
    spec.validate()
    split = DatasetSplit()
    val_ood = set(spec.val_ood_labels)
    for cls in spec.classes:
        if cls.origin == IN:
            plan = [("train", spec.train_per_class), ("val_in", spec.val_per_class),
                    ("test_in", spec.test_per_class)]
        elif cls.label in val_ood:
            plan = [("val_ood", spec.val_per_class)]
        else:
            plan = [("test_ood", spec.test_per_class)]
        for part, n in plan:
            if n == 0:
                continue
            seqs, mask = sample_class_sequences(cls, n, spec.length, rng, alphabet)
            origin = IN if cls.origin == IN else OOD
            getattr(split, part).extend(
                EncodedSequence(f"c{cls.label}:{part}:{i}", seqs[i], cls.label, origin, mask[i])
                for i in range(n))
    return split.validate()


def default_synthetic_spec(length=250, train_per_class=2000, val_per_class=200,
                           test_per_class=200, n_in=10, n_ood=6, motif_len=16, seed=7,
                           in_gc=(0.55, 0.70), ood_gc=(0.65, 0.90), motifs_per_class=2):
    """GC-confounded planted-motif benchmark.

    In-distribution classes span a moderate-to-high GC band; OOD classes overlap
    it and extend above it, so compositional likelihood favours the OOD side.
    Each class owns motifs that no other class uses.
    """
    rng = np.random.default_rng(seed)
    used = set()

    def new_motif():
        while True:
            m = "".join(rng.choice(list("ACGT"), size=motif_len))
            if m not in used:
                used.add(m)
                return m

    classes = []
    for k, gc in enumerate(np.linspace(in_gc[0], in_gc[1], n_in)):
        classes.append(ClassSpec(k, IN, round(float(gc), 4), [new_motif() for _ in range(motifs_per_class)], 1.0))
    ood_gc = np.linspace(ood_gc[0], ood_gc[1], n_ood)
    for j, gc in enumerate(ood_gc):
        classes.append(ClassSpec(n_in + j, OOD, round(float(gc), 4), [new_motif() for _ in range(motifs_per_class)], 1.0))
    val_ood = tuple(n_in + j for j in range(n_ood) if j % 3 == 1)
    return SyntheticSpec(classes, length, train_per_class, val_per_class, test_per_class, val_ood)


def distance_ladder_spec(rates=(0.01, 0.02, 0.05, 0.1, 0.2, 0.4), n_in=4, length=150,
                         train_per_class=500, val_per_class=50, test_per_class=200, motif_len=16,
                         motifs_per_class=2, in_gc=(0.45, 0.55), seed=3) -> SyntheticSpec:
    """OOD classes at increasing mutation distance from the in-distribution classes.

    OOD class ``j`` reuses the GC and motifs of in-distribution class ``j % n_in``
    and every sampled sequence is then mutated at ``rates[j]``, so remoteness
    grows along the ladder while composition stays matched.
    """
    base = default_synthetic_spec(length, train_per_class, val_per_class, test_per_class, n_in=n_in, n_ood=0,
                                  motif_len=motif_len, seed=seed, in_gc=in_gc, motifs_per_class=motifs_per_class)
    classes = list(base.classes)
    for j, rate in enumerate(rates):
        if rate <= 0:
            raise ValueError("ladder mutation rates must be > 0")
        src = classes[j % n_in]
        classes.append(ClassSpec(n_in + j, OOD, src.gc, list(src.motifs), mutation_rate=float(rate)))
    return SyntheticSpec(classes, length, train_per_class, val_per_class, test_per_class, ())


# -- manifests ---------------------------------------------------------------

def write_manifest(path, split: DatasetSplit, alphabet: Alphabet = DNA, header: dict | None = None):
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps({"provenance": header}, sort_keys=True) + "\n")
        for part, seqs in split.items():
            for s in seqs:
                rec = {"id": s.id, "class": s.class_label, "origin": s.origin,
                       "split": part, "sequence": alphabet.decode(s.symbols)}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path, alphabet: Alphabet = DNA) -> DatasetSplit:
    split = DatasetSplit()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: corrupt manifest line") from exc
            if "provenance" in rec:
                continue
            try:
                seq = EncodedSequence(rec["id"], alphabet.encode(rec["sequence"]),
                                      rec.get("class"), rec.get("origin", UNKNOWN))
                getattr(split, rec["split"]).append(seq)
            except (KeyError, AttributeError) as exc:
                raise DataError(f"{path}:{lineno}: missing or bad field {exc}") from exc
    return split.validate()


def write_masks(path, split: DatasetSplit):
    with open(path, "w") as fh:
        for part, seqs in split.items():
            for s in seqs:
                if s.motif_mask is None:
                    continue
                spans = _mask_spans(s.motif_mask)
                fh.write(json.dumps({"id": s.id, "split": part, "motif_spans": spans}) + "\n")


def _mask_spans(mask):
    spans = []
    for key, grp in itertools.groupby(enumerate(mask), key=lambda t: bool(t[1])):
        if key:
            grp = list(grp)
            spans.append([grp[0][0], grp[-1][0] + 1])
    return spans


# -- d2S distance -----------------------------------------------------------

def _kmer_counts(sym: np.ndarray, k: int, size: int) -> np.ndarray:
    n = sym.size - k + 1
    codes = np.zeros(n, dtype=np.int64)
    for j in range(k):
        codes = codes * size + sym[j:j + n]
    return np.bincount(codes, minlength=size ** k).astype(np.float64)


def _word_probs(sym_list, k: int, m: int, size: int) -> np.ndarray:
    """p_w for every k-word under an order-m Markov model fitted to ``sym_list``."""
    words = np.arange(size ** k)
    digits = np.stack([(words // size ** (k - 1 - j)) % size for j in range(k)], axis=1)
    if m == 0:
        freq = sum(np.bincount(s, minlength=size) for s in sym_list).astype(np.float64)
        freq /= freq.sum()
        return np.prod(freq[digits], axis=1)
    cm = sum(_kmer_counts(s, m, size) for s in sym_list)
    cm1 = sum(_kmer_counts(s, m + 1, size) for s in sym_list)
    first = cm / cm.sum()
    # transition P(next | m-context) = count(m+1 word) / count(context as prefix)
    prefix = cm1.reshape(size ** m, size).sum(axis=1)
    trans = np.divide(cm1.reshape(size ** m, size), prefix[:, None],
                      out=np.zeros((size ** m, size)), where=prefix[:, None] > 0)

    def code(cols):
        c = np.zeros(len(words), dtype=np.int64)
        for col in cols:
            c = c * size + digits[:, col]
        return c

    p = first[code(range(m))]
    for j in range(m, k):
        ctx = code(range(j - m, j))
        p = p * trans[ctx, digits[:, j]]
    return p


def _d2s(xc, yc):
    denom = np.sqrt(xc * xc + yc * yc)
    keep = denom > 0
    return float(np.sum(xc[keep] * yc[keep] / denom[keep]))


def d2s_distance(a, b, k: int = 6, m: int = 0, alphabet_size: int = 4) -> float:
    """Self-normalised centred word-count distance in [0, 1].

    The background word probabilities come from an order-``m`` Markov model
    fitted to the concatenation of both sequences (fit per sequence pair, so
    self-comparisons use the sequence alone).
    """
    sa = a.symbols if isinstance(a, EncodedSequence) else np.asarray(a, dtype=np.int64)
    sb = b.symbols if isinstance(b, EncodedSequence) else np.asarray(b, dtype=np.int64)
    if k < m + 1:
        raise ValueError("word length must exceed background order")
    if sa.size <= k or sb.size <= k:
        raise DataError("sequence shorter than word length")
    p = _word_probs([sa, sb], k, m, alphabet_size)
    xc = _kmer_counts(sa, k, alphabet_size) - (sa.size - k + 1) * p
    yc = _kmer_counts(sb, k, alphabet_size) - (sb.size - k + 1) * p
    cross = _d2s(xc, yc)
    self_a = _d2s(xc, xc)
    self_b = _d2s(yc, yc)
    if self_a <= 0 or self_b <= 0:
        return 0.0 if np.array_equal(sa, sb) else 0.5
    d = 0.5 * (1.0 - cross / np.sqrt(self_a * self_b))
    return float(min(1.0, max(0.0, d)))


def min_distance_to_set(query, references, k: int = 6, m: int = 0, alphabet_size: int = 4) -> float:
    refs = list(references)
    if not refs:
        raise DataError("empty reference set")
    return min(d2s_distance(query, r, k, m, alphabet_size) for r in refs)


def class_distances(train, ood, k: int = 6, m: int = 0, sample: int = 100, alphabet_size: int = 4) -> dict:
    """min d2S from each OOD class to the in-distribution classes.

    Every class is represented by the concatenation of its first ``sample``
    sequences, standing in for a whole genome.
    """
    def pool(seqs):
        return np.concatenate([s.symbols for s in seqs[:sample]])

    def by_label(seqs):
        out = {}
        for s in seqs:
            out.setdefault(s.class_label, []).append(s)
        return dict(sorted(out.items()))

    refs = [pool(v) for v in by_label(train).values()]
    return {c: min_distance_to_set(pool(v), refs, k, m, alphabet_size) for c, v in by_label(ood).items()}

