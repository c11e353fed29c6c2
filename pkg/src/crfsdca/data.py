"""Dataset ingestion, synthetic generation, splitting, and persistence.

Two text corpus formats are supported:

* attribute files: one token per line, whitespace-separated attribute strings
  with the gold label last, blank line between sequences;
* the classic handwriting letter format: tab-separated rows of
  ``id letter next_id word_id position fold`` followed by 128 binary pixels,
  with words assembled by following the ``next_id`` chain.

Model files are line-oriented UTF-8 headers plus a base64 payload of
little-endian float64 weights, so they are greppable and round-trip
bit-exactly.
"""

from __future__ import annotations

import base64
import string
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ModelFormatError
from .model import FeatureIndexer, LabelSet, Sequence, Token

MODEL_FORMAT = "crf-sdca-model"
MODEL_VERSION = 1
STATE_FORMAT = "crf-sdca-state"
STATE_VERSION = 1


class Vocabulary:
    """Insertion-ordered string-to-id map; freezable for test-time reuse."""

    def __init__(self, names=(), frozen: bool = False):
        self._ids: dict[str, int] = {}
        for name in names:
            self._ids[name] = len(self._ids)
        self.frozen = frozen

    @property
    def size(self) -> int:
        return len(self._ids)

    @property
    def names(self) -> list[str]:
        return list(self._ids)

    def intern(self, name: str) -> int | None:
        """Id of ``name``; unseen names get a fresh id unless frozen, in which
        case they resolve to None and contribute no feature."""
        found = self._ids.get(name)
        if found is not None:
            return found
        if self.frozen:
            return None
        self._ids[name] = len(self._ids)
        return self._ids[name]

    def freeze(self) -> "Vocabulary":
        self.frozen = True
        return self


@dataclass
class Dataset:
    sequences: list[Sequence]
    labels: LabelSet
    vocabulary: Vocabulary
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sequences:
            raise DataError("a dataset needs at least one sequence")

    @property
    def n(self) -> int:
        return len(self.sequences)

    @property
    def token_count(self) -> int:
        return sum(s.length for s in self.sequences)


def _token_from_attributes(ids, label: int) -> Token:
    return Token(attributes=tuple(sorted(set(ids))), label=label)


def load_conll(path: str, vocabulary: Vocabulary | None = None,
               labels: LabelSet | None = None) -> Dataset:
    """Read an attribute file; builds vocabularies in first-seen order.

    Passing a frozen ``vocabulary``/``labels`` pair (e.g. from a trained
    model) scores test data against the training feature space: unseen
    attributes are dropped, unseen labels are an error.
    """
    vocab = vocabulary if vocabulary is not None else Vocabulary()
    label_ids: dict[str, int] = (
        {name: i for i, name in enumerate(labels.names)} if labels is not None else {}
    )
    sequences: list[Sequence] = []
    tokens: list[Token] = []

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                if tokens:
                    sequences.append(Sequence(tokens=tuple(tokens)))
                    tokens = []
                continue
            fields = line.split()
            label_name = fields[-1]
            if label_name not in label_ids:
                if labels is not None:
                    raise DataError(f"{path}:{lineno}: unknown label {label_name!r}")
                label_ids[label_name] = len(label_ids)
            ids = []
            for attr in fields[:-1]:
                resolved = vocab.intern(attr)
                if resolved is not None:
                    ids.append(resolved)
            tokens.append(_token_from_attributes(ids, label_ids[label_name]))
    if tokens:
        sequences.append(Sequence(tokens=tuple(tokens)))
    if not sequences:
        raise DataError(f"{path}: no sequences found")
    if labels is None:
        if len(label_ids) < 2:
            raise DataError(
                f"{path}: found {len(label_ids)} distinct label(s); at least 2 required"
            )
        labels = LabelSet(names=tuple(label_ids))
    return Dataset(
        sequences=sequences,
        labels=labels,
        vocabulary=vocab,
        provenance={"source": path, "format": "conll"},
    )


def write_conll(path: str, dataset: Dataset) -> None:
    """Inverse of ``load_conll``; attributes are written in id order."""
    names = dataset.vocabulary.names
    with open(path, "w", encoding="utf-8") as handle:
        for seq in dataset.sequences:
            for token in seq.tokens:
                fields = [names[a] for a in token.attributes]
                fields.append(dataset.labels.names[token.label])
                handle.write(" ".join(fields) + "\n")
            handle.write("\n")


OCR_PIXELS = 128
_LETTERS = tuple(string.ascii_lowercase)


def load_ocr(path: str) -> Dataset:
    """Read the tab-separated letter format; words follow next_id chains."""
    vocab = Vocabulary(names=[f"p{i}" for i in range(OCR_PIXELS)], frozen=True)
    letter_id = {c: i for i, c in enumerate(_LETTERS)}
    sequences: list[Sequence] = []
    tokens: list[Token] = []
    expected_next: int | None = None

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < 6 + OCR_PIXELS:
                raise DataError(f"{path}:{lineno}: expected {6 + OCR_PIXELS} fields, "
                                f"got {len(fields)}")
            row_id = int(fields[0])
            letter = fields[1]
            next_id = int(fields[2])
            if letter not in letter_id:
                raise DataError(f"{path}:{lineno}: unknown letter {letter!r}")
            if expected_next is not None and row_id != expected_next:
                raise DataError(
                    f"{path}:{lineno}: broken chain, expected id {expected_next}, got {row_id}"
                )
            pixels = fields[6 : 6 + OCR_PIXELS]
            ids = []
            for j, value in enumerate(pixels):
                if value == "1":
                    ids.append(j)
                elif value != "0":
                    raise DataError(f"{path}:{lineno}: non-binary pixel {value!r}")
            tokens.append(Token(attributes=tuple(ids), label=letter_id[letter]))
            if next_id == -1:
                sequences.append(Sequence(tokens=tuple(tokens)))
                tokens = []
                expected_next = None
            else:
                expected_next = next_id
    if tokens:
        raise DataError(f"{path}: file ended inside a word (chain never closed)")
    if not sequences:
        raise DataError(f"{path}: no sequences found")
    return Dataset(
        sequences=sequences,
        labels=LabelSet(names=_LETTERS),
        vocabulary=vocab,
        provenance={"source": path, "format": "ocr"},
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Controls for the sparse-sequence generator.

    Labels follow a circulant Markov chain (integer weights, so its
    stationary distribution is exactly uniform); attributes are drawn from a
    per-label band of the vocabulary with an integer percentage of uniform
    noise draws, which controls how much support neighboring labels share.
    """

    n_sequences: int
    min_length: int
    max_length: int
    n_labels: int
    n_attributes: int
    attrs_per_token: int
    seed: int
    transition_peak: int = 4
    emission_noise_pct: int = 10

    def __post_init__(self):
        if self.n_sequences < 1 or self.min_length < 1 or self.n_labels < 2:
            raise DataError("counts must be positive (and at least 2 labels)")
        if self.max_length < self.min_length:
            raise DataError("max_length must be >= min_length")
        if not 1 <= self.attrs_per_token <= self.n_attributes:
            raise DataError("attrs_per_token must lie in [1, n_attributes]")
        if not 0 <= self.emission_noise_pct <= 100:
            raise DataError("emission_noise_pct is a percentage")
        if self.transition_peak < 0:
            raise DataError("transition_peak must be nonnegative")


def _draw_categorical(rng: np.random.Generator, cumulative: np.ndarray) -> int:
    # Integer-only draw: reproducible across platforms.
    r = int(rng.integers(0, int(cumulative[-1])))
    return int(np.searchsorted(cumulative, r, side="right"))


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    k, a_total = spec.n_labels, spec.n_attributes
    weights = np.ones((k, k), dtype=np.int64)
    weights[np.arange(k), np.arange(k)] += spec.transition_peak
    weights[np.arange(k), (np.arange(k) + 1) % k] += max(spec.transition_peak // 2, 1)
    cumulative = np.cumsum(weights, axis=1)
    band = max(a_total // k, 1)

    sequences = []
    for _ in range(spec.n_sequences):
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        label = int(rng.integers(0, k))
        tokens = []
        for _ in range(length):
            ids = []
            base = (label * band) % a_total
            for _ in range(spec.attrs_per_token):
                if int(rng.integers(0, 100)) < spec.emission_noise_pct:
                    ids.append(int(rng.integers(0, a_total)))
                else:
                    ids.append((base + int(rng.integers(0, band))) % a_total)
            tokens.append(_token_from_attributes(ids, label))
            label = _draw_categorical(rng, cumulative[label])
        sequences.append(Sequence(tokens=tuple(tokens)))

    return Dataset(
        sequences=sequences,
        labels=LabelSet(names=tuple(f"L{i}" for i in range(k))),
        vocabulary=Vocabulary(names=[f"a{i}" for i in range(a_total)], frozen=True),
        provenance={"source": "synthetic", "format": "synthetic", "seed": spec.seed},
    )


def split_dataset(dataset: Dataset, test_fraction: float, seed: int):
    """Shuffle-split into (train, test) sharing vocabulary and labels."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(dataset.n)
    n_test = max(1, int(round(test_fraction * dataset.n)))
    if n_test >= dataset.n:
        raise DataError("split would leave no training sequences")
    test_idx = set(order[:n_test].tolist())
    train = [s for i, s in enumerate(dataset.sequences) if i not in test_idx]
    test = [s for i, s in enumerate(dataset.sequences) if i in test_idx]
    meta = dict(dataset.provenance, split_seed=seed)
    return (
        Dataset(train, dataset.labels, dataset.vocabulary, dict(meta, split="train")),
        Dataset(test, dataset.labels, dataset.vocabulary, dict(meta, split="test")),
    )


@dataclass
class CrfModel:
    """A trained tagger: weights plus everything needed to apply them."""

    weights: np.ndarray
    lam: float
    labels: LabelSet
    vocabulary: Vocabulary

    @property
    def indexer(self) -> FeatureIndexer:
        return FeatureIndexer(n_attributes=self.vocabulary.size, n_labels=self.labels.size)


def save_model(path: str, model: CrfModel) -> None:
    indexer = model.indexer
    if model.weights.shape != (indexer.dimension,):
        raise ModelFormatError(
            f"weights have shape {model.weights.shape}, layout wants ({indexer.dimension},)"
        )
    payload = base64.b64encode(
        np.ascontiguousarray(model.weights, dtype="<f8").tobytes()
    ).decode("ascii")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"format: {MODEL_FORMAT}\n")
        handle.write(f"version: {MODEL_VERSION}\n")
        handle.write(f"lambda: {model.lam!r}\n")
        handle.write(f"labels: {' '.join(model.labels.names)}\n")
        handle.write(f"attributes: {' '.join(model.vocabulary.names)}\n")
        handle.write(f"weights: {payload}\n")


def load_model(path: str) -> CrfModel:
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for raw in handle:
            line = raw.rstrip("\n")
            if not line:
                continue
            if ": " not in line and not line.endswith(":"):
                raise ModelFormatError(f"{path}: malformed header line {line!r}")
            key, _, value = line.partition(":")
            entries[key.strip()] = value.strip()
    if entries.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} file")
    if entries.get("version") != str(MODEL_VERSION):
        raise ModelFormatError(
            f"{path}: version {entries.get('version')!r} not supported "
            f"(expected {MODEL_VERSION})"
        )
    labels = LabelSet(names=tuple(entries["labels"].split()))
    vocabulary = Vocabulary(names=entries["attributes"].split(), frozen=True)
    weights = np.frombuffer(base64.b64decode(entries["weights"]), dtype="<f8").astype(
        np.float64
    )
    model = CrfModel(
        weights=weights,
        lam=float(entries["lambda"]),
        labels=labels,
        vocabulary=vocabulary,
    )
    if weights.shape != (model.indexer.dimension,):
        raise ModelFormatError(
            f"{path}: payload holds {weights.shape[0]} weights, "
            f"header implies {model.indexer.dimension}"
        )
    return model


def save_state(path: str, state, n_attributes: int, label_names) -> None:
    """Checkpoint the dual state (weights, marginals, gap estimates) as npz."""
    lengths = np.array([m.length for m in state.marginals], dtype=np.int64)
    unary_flat = np.concatenate([m.unary.ravel() for m in state.marginals])
    pairwise_flat = np.concatenate(
        [m.pairwise.ravel() for m in state.marginals]
    ) if any(m.length > 1 for m in state.marginals) else np.zeros(0)
    np.savez(
        path,
        format=STATE_FORMAT,
        version=STATE_VERSION,
        lam=state.lam,
        n_labels=len(tuple(label_names)),
        n_attributes=n_attributes,
        label_names=np.array(list(label_names)),
        lengths=lengths,
        weights=state.weights.array,
        gap_estimates=state.gap_estimates,
        unary=unary_flat,
        pairwise=pairwise_flat,
        updates=state.updates,
        oracle_calls=state.oracle_calls,
        eval_oracle_calls=state.eval_oracle_calls,
    )


def load_state(path: str):
    """Rebuild a DualState from a checkpoint; validates the format tag."""
    from .inference import MarginalSet
    from .objective import DualState, WeightVector

    data = np.load(path, allow_pickle=False)
    if str(data["format"]) != STATE_FORMAT or int(data["version"]) != STATE_VERSION:
        raise ModelFormatError(f"{path}: not a supported {STATE_FORMAT} checkpoint")
    k = int(data["n_labels"])
    lengths = data["lengths"]
    marginals = []
    u_at = 0
    p_at = 0
    unary_flat = data["unary"]
    pairwise_flat = data["pairwise"]
    for t in lengths.tolist():
        unary = unary_flat[u_at : u_at + t * k].reshape(t, k).copy()
        u_at += t * k
        n_pairs = max(t - 1, 0)
        pairwise = pairwise_flat[p_at : p_at + n_pairs * k * k].reshape(n_pairs, k, k).copy()
        p_at += n_pairs * k * k
        marginals.append(MarginalSet.from_linear(unary, pairwise))
    state = DualState(
        marginals=marginals,
        weights=WeightVector(data["weights"].copy()),
        lam=float(data["lam"]),
        gap_estimates=data["gap_estimates"].copy(),
        updates=int(data["updates"]),
        oracle_calls=int(data["oracle_calls"]),
        eval_oracle_calls=int(data["eval_oracle_calls"]),
    )
    return state, [str(x) for x in data["label_names"]], int(data["n_attributes"])
