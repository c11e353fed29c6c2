"""Domain types for labeled sequences and the structured feature map.

The weight vector is laid out in three contiguous blocks:

* emission: one coordinate per (attribute, label) pair, ``A * K`` entries;
* bias: three coordinates per label (any position / first / last), ``3 * K``;
* transition: one coordinate per ordered label bigram, ``K * K``.

The feature vector of a labeling is the sum of per-node features (attribute
and bias counts placed in the column of that node's label) and per-edge
features (label bigram counts).  All feature values are nonnegative counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BIAS_ANY = 0
BIAS_FIRST = 1
BIAS_LAST = 2


@dataclass(frozen=True)
class LabelSet:
    """The closed set of node labels."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise ValueError(f"need at least 2 labels, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")

    @property
    def size(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Token:
    """One node: sparse attribute ids plus its gold label."""

    attributes: tuple[int, ...]
    label: int

    def __post_init__(self):
        ids = self.attributes
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("attribute ids must be strictly increasing")
        if ids and ids[0] < 0:
            raise ValueError("attribute ids must be nonnegative")


@dataclass(frozen=True)
class Sequence:
    """An ordered chain of tokens; the unit the trainer samples."""

    tokens: tuple[Token, ...]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValueError("a sequence needs at least one token")

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def gold_labels(self) -> tuple[int, ...]:
        return tuple(t.label for t in self.tokens)


@dataclass(frozen=True)
class FeatureIndexer:
    """Bijection between feature slots and coordinates of the weight vector."""

    n_attributes: int
    n_labels: int

    @property
    def emission_size(self) -> int:
        return self.n_attributes * self.n_labels

    @property
    def bias_offset(self) -> int:
        return self.emission_size

    @property
    def transition_offset(self) -> int:
        return self.emission_size + 3 * self.n_labels

    @property
    def dimension(self) -> int:
        return self.emission_size + 3 * self.n_labels + self.n_labels ** 2

    def emission(self, attribute: int, label: int) -> int:
        return attribute * self.n_labels + label

    def bias(self, slot: int, label: int) -> int:
        if slot not in (BIAS_ANY, BIAS_FIRST, BIAS_LAST):
            raise ValueError(f"unknown bias slot {slot}")
        return self.bias_offset + slot * self.n_labels + label

    def transition(self, label: int, next_label: int) -> int:
        return self.transition_offset + label * self.n_labels + next_label

    def decompose(self, index: int) -> tuple[str, int, int]:
        """Map a coordinate back to its (block, row, label) triple."""
        if not 0 <= index < self.dimension:
            raise ValueError(f"coordinate {index} outside [0, {self.dimension})")
        k = self.n_labels
        if index < self.bias_offset:
            return ("emission", index // k, index % k)
        if index < self.transition_offset:
            rel = index - self.bias_offset
            return ("bias", rel // k, rel % k)
        rel = index - self.transition_offset
        return ("transition", rel // k, rel % k)

    def validate_sequence(self, seq: Sequence) -> None:
        for t, token in enumerate(seq.tokens):
            if token.attributes and token.attributes[-1] >= self.n_attributes:
                raise ValueError(
                    f"token {t}: attribute id {token.attributes[-1]} "
                    f">= vocabulary size {self.n_attributes}"
                )
            if not 0 <= token.label < self.n_labels:
                raise ValueError(f"token {t}: label {token.label} outside [0, {self.n_labels})")


@dataclass(frozen=True)
class SparseFeature:
    """Sparse feature vector: strictly increasing indices, nonzero values."""

    indices: np.ndarray
    values: np.ndarray

    def dot(self, w: np.ndarray) -> float:
        return float(w[self.indices] @ self.values)

    def squared_norm(self) -> float:
        return float(self.values @ self.values)

    def to_dense(self, dimension: int) -> np.ndarray:
        out = np.zeros(dimension)
        out[self.indices] = self.values
        return out

    @staticmethod
    def from_counts(counts: dict[int, float]) -> "SparseFeature":
        items = sorted((i, v) for i, v in counts.items() if v != 0.0)
        idx = np.array([i for i, _ in items], dtype=np.int64)
        val = np.array([v for _, v in items], dtype=np.float64)
        return SparseFeature(indices=idx, values=val)


def _check_labeling(indexer: FeatureIndexer, seq: Sequence, labeling) -> np.ndarray:
    labels = np.asarray(labeling, dtype=np.int64)
    if labels.shape != (seq.length,):
        raise ValueError(f"labeling length {labels.shape} != sequence length {seq.length}")
    if labels.min() < 0 or labels.max() >= indexer.n_labels:
        raise ValueError(f"label outside [0, {indexer.n_labels})")
    return labels


def extract_features(indexer: FeatureIndexer, seq: Sequence, labeling) -> SparseFeature:
    """Feature counts of a labeling: emissions, positional bias, transitions."""
    labels = _check_labeling(indexer, seq, labeling)
    counts: dict[int, float] = {}

    def bump(index: int) -> None:
        counts[index] = counts.get(index, 0.0) + 1.0

    last = seq.length - 1
    for t, token in enumerate(seq.tokens):
        k = int(labels[t])
        for a in token.attributes:
            bump(indexer.emission(a, k))
        bump(indexer.bias(BIAS_ANY, k))
        if t == 0:
            bump(indexer.bias(BIAS_FIRST, k))
        if t == last:
            bump(indexer.bias(BIAS_LAST, k))
    for t in range(seq.length - 1):
        bump(indexer.transition(int(labels[t]), int(labels[t + 1])))
    return SparseFeature.from_counts(counts)


def corrected_feature(indexer: FeatureIndexer, seq: Sequence, labeling) -> SparseFeature:
    """Gold feature vector minus the candidate labeling's feature vector."""
    gold = extract_features(indexer, seq, seq.gold_labels)
    cand = extract_features(indexer, seq, labeling)
    counts: dict[int, float] = dict(zip(gold.indices.tolist(), gold.values.tolist()))
    for i, v in zip(cand.indices.tolist(), cand.values.tolist()):
        counts[i] = counts.get(i, 0.0) - v
    return SparseFeature.from_counts(counts)


def score_tables(indexer: FeatureIndexer, w: np.ndarray, seq: Sequence):
    """Node and edge score tables ``u[t, k]`` and ``p[k, k']`` under weights w.

    ``u[t, k]`` is the full per-node score of assigning label k at position t,
    bias included, so any labeling's total score is
    ``sum_t u[t, y_t] + sum_t p[y_t, y_{t+1}]``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (indexer.dimension,):
        raise ValueError(f"weight vector has shape {w.shape}, expected ({indexer.dimension},)")
    k = indexer.n_labels
    emission = w[: indexer.emission_size].reshape(indexer.n_attributes, k)
    bias = w[indexer.bias_offset : indexer.transition_offset].reshape(3, k)
    pair = w[indexer.transition_offset :].reshape(k, k).copy()

    unary = np.tile(bias[BIAS_ANY], (seq.length, 1))
    unary[0] += bias[BIAS_FIRST]
    unary[-1] += bias[BIAS_LAST]
    for t, token in enumerate(seq.tokens):
        if token.attributes:
            unary[t] += emission[list(token.attributes)].sum(axis=0)
    return unary, pair


@dataclass(frozen=True)
class CompiledSequence:
    """Per-sequence arrays precomputed for the training hot path.

    ``incidence[t, j]`` is 1 when token t carries ``unique_attributes[j]``, so
    expected emission counts under any node table are a single matmul, and the
    coordinates touched by the sequence are fixed once (``feature_indices``).
    """

    length: int
    gold_labels: np.ndarray
    unique_attributes: np.ndarray
    incidence: np.ndarray
    feature_indices: np.ndarray
    gold_feature: "SparseFeature"
    indexer: FeatureIndexer = field(repr=False)

    def score_tables(self, w: np.ndarray):
        ix = self.indexer
        k = ix.n_labels
        bias = w[ix.bias_offset : ix.transition_offset].reshape(3, k)
        unary = np.tile(bias[BIAS_ANY], (self.length, 1))
        unary[0] += bias[BIAS_FIRST]
        unary[-1] += bias[BIAS_LAST]
        if self.unique_attributes.size:
            emission = w[: ix.emission_size].reshape(ix.n_attributes, k)
            unary += self.incidence @ emission[self.unique_attributes]
        pair = w[ix.transition_offset :].reshape(k, k)
        return unary, pair

    def expected_feature_values(self, unary_table: np.ndarray, pairwise_table: np.ndarray) -> np.ndarray:
        """Expected feature counts under (possibly signed) marginal tables.

        Returns values aligned with ``feature_indices``: emission rows for each
        unique attribute, then the three bias rows, then the transition block.
        """
        k = self.indexer.n_labels
        parts = []
        if self.unique_attributes.size:
            parts.append((self.incidence.T @ unary_table).ravel())
        parts.append(unary_table.sum(axis=0))
        parts.append(unary_table[0])
        parts.append(unary_table[-1])
        if self.length > 1:
            parts.append(pairwise_table.sum(axis=0).ravel())
        else:
            parts.append(np.zeros(k * k))
        return np.concatenate(parts)


def compile_sequence(indexer: FeatureIndexer, seq: Sequence) -> CompiledSequence:
    indexer.validate_sequence(seq)
    k = indexer.n_labels
    all_attrs = sorted({a for tok in seq.tokens for a in tok.attributes})
    unique = np.array(all_attrs, dtype=np.int64)
    position = {a: j for j, a in enumerate(all_attrs)}
    incidence = np.zeros((seq.length, len(all_attrs)))
    for t, tok in enumerate(seq.tokens):
        for a in tok.attributes:
            incidence[t, position[a]] = 1.0

    emission_coords = (unique[:, None] * k + np.arange(k)[None, :]).ravel()
    bias_coords = indexer.bias_offset + np.arange(3 * k)
    transition_coords = indexer.transition_offset + np.arange(k * k)
    feature_indices = np.concatenate([emission_coords, bias_coords, transition_coords])

    return CompiledSequence(
        length=seq.length,
        gold_labels=np.array(seq.gold_labels, dtype=np.int64),
        unique_attributes=unique,
        incidence=incidence,
        feature_indices=feature_indices.astype(np.int64),
        gold_feature=extract_features(indexer, seq, seq.gold_labels),
        indexer=indexer,
    )
