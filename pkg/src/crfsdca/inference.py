"""Exact inference on label chains.

Message passing runs entirely in the log domain; linear-domain marginals are
materialized once per oracle call.  Entropy and Kullback-Leibler divergence of
a chain-structured joint decompose over its edge tables minus its interior
node tables, which is what the dual objective and the block gaps consume.

Chains of length 1 have a single node clique and no separators; chains of
length 2 have one edge clique and no separators.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InconsistentMarginalsError

LOG_FLOOR = 1e-300
ENUMERATION_LIMIT = 10 ** 6


def _logsumexp(a: np.ndarray, axis=None):
    if axis is None:
        a = np.asarray(a).ravel()
        axis = 0
    amax = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    return np.squeeze(out, axis=axis)


def _safe_log(a: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(a, LOG_FLOOR))


@dataclass
class MarginalSet:
    """Node and edge marginal tables of one sequence, in both domains.

    ``unary`` has shape (T, K) and ``pairwise`` (T-1, K, K); the log tables
    mirror them (exact zeros floor to ``log(1e-300)``).  The trainer mutates
    these arrays in place; everything else should treat them as read-only.
    """

    unary: np.ndarray
    pairwise: np.ndarray
    log_unary: np.ndarray
    log_pairwise: np.ndarray

    @property
    def length(self) -> int:
        return self.unary.shape[0]

    @property
    def n_labels(self) -> int:
        return self.unary.shape[1]

    @staticmethod
    def from_linear(unary: np.ndarray, pairwise: np.ndarray) -> "MarginalSet":
        unary = np.asarray(unary, dtype=np.float64)
        pairwise = np.asarray(pairwise, dtype=np.float64)
        return MarginalSet(unary, pairwise, _safe_log(unary), _safe_log(pairwise))

    @staticmethod
    def from_log(log_unary: np.ndarray, log_pairwise: np.ndarray) -> "MarginalSet":
        return MarginalSet(np.exp(log_unary), np.exp(log_pairwise), log_unary, log_pairwise)

    @staticmethod
    def point_mass(labels, n_labels: int) -> "MarginalSet":
        labels = np.asarray(labels, dtype=np.int64)
        t = labels.shape[0]
        unary = np.zeros((t, n_labels))
        unary[np.arange(t), labels] = 1.0
        pairwise = np.zeros((max(t - 1, 0), n_labels, n_labels))
        if t > 1:
            pairwise[np.arange(t - 1), labels[:-1], labels[1:]] = 1.0
        return MarginalSet.from_linear(unary, pairwise)

    @staticmethod
    def uniform(length: int, n_labels: int) -> "MarginalSet":
        unary = np.full((length, n_labels), 1.0 / n_labels)
        pairwise = np.full((max(length - 1, 0), n_labels, n_labels), 1.0 / n_labels ** 2)
        return MarginalSet.from_linear(unary, pairwise)

    def convex_combination(self, other: "MarginalSet", gamma: float) -> "MarginalSet":
        """(1 - gamma) * self + gamma * other, entrywise on the linear tables."""
        return MarginalSet.from_linear(
            (1.0 - gamma) * self.unary + gamma * other.unary,
            (1.0 - gamma) * self.pairwise + gamma * other.pairwise,
        )

    def copy(self) -> "MarginalSet":
        return MarginalSet(
            self.unary.copy(), self.pairwise.copy(),
            self.log_unary.copy(), self.log_pairwise.copy(),
        )

    def validate(self, atol: float = 1e-9) -> None:
        t, k = self.unary.shape
        if self.pairwise.shape != (max(t - 1, 0), k, k):
            raise InconsistentMarginalsError(
                f"pairwise shape {self.pairwise.shape} does not match unary {self.unary.shape}"
            )
        if self.unary.min(initial=0.0) < -atol or self.pairwise.min(initial=0.0) < -atol:
            raise InconsistentMarginalsError("negative marginal entry")
        if np.max(np.abs(self.unary.sum(axis=1) - 1.0)) > atol:
            raise InconsistentMarginalsError("a node table does not sum to 1")
        if t > 1:
            if np.max(np.abs(self.pairwise.sum(axis=(1, 2)) - 1.0)) > atol:
                raise InconsistentMarginalsError("an edge table does not sum to 1")
            row = self.pairwise.sum(axis=2)
            col = self.pairwise.sum(axis=1)
            if np.max(np.abs(row - self.unary[:-1])) > atol:
                raise InconsistentMarginalsError("edge tables disagree with left nodes")
            if np.max(np.abs(col - self.unary[1:])) > atol:
                raise InconsistentMarginalsError("edge tables disagree with right nodes")
        if np.max(np.abs(np.exp(self.log_unary) - self.unary)) > atol:
            raise InconsistentMarginalsError("log node table out of sync")
        if t > 1 and np.max(np.abs(np.exp(self.log_pairwise) - self.pairwise)) > atol:
            raise InconsistentMarginalsError("log edge table out of sync")


def _check_finite(unary: np.ndarray, pairwise: np.ndarray) -> None:
    if not (np.all(np.isfinite(unary)) and np.all(np.isfinite(pairwise))):
        raise ValueError("score tables must be finite")


def forward_backward(unary: np.ndarray, pairwise: np.ndarray):
    """Log-domain sum-product along the chain.

    Parameters
    ----------
    unary : (T, K) node scores, pairwise : (K, K) edge scores.

    Returns
    -------
    (log_unary, log_pairwise, log_z) : exact log marginals of the Gibbs
    distribution proportional to ``exp(sum u + sum p)`` and its log partition.
    """
    unary = np.asarray(unary, dtype=np.float64)
    pairwise = np.asarray(pairwise, dtype=np.float64)
    _check_finite(unary, pairwise)
    t, k = unary.shape

    fwd = np.empty((t, k))
    fwd[0] = unary[0]
    for i in range(1, t):
        fwd[i] = unary[i] + _logsumexp(fwd[i - 1][:, None] + pairwise, axis=0)
    log_z = float(_logsumexp(fwd[-1]))

    bwd = np.zeros((t, k))
    for i in range(t - 2, -1, -1):
        bwd[i] = _logsumexp(pairwise + unary[i + 1][None, :] + bwd[i + 1][None, :], axis=1)

    log_unary = fwd + bwd - log_z
    log_pairwise = np.empty((t - 1, k, k))
    for i in range(t - 1):
        log_pairwise[i] = (
            fwd[i][:, None] + pairwise + unary[i + 1][None, :] + bwd[i + 1][None, :] - log_z
        )
    return log_unary, log_pairwise, log_z


def marginal_oracle(unary: np.ndarray, pairwise: np.ndarray):
    """One marginalization-oracle call: exact marginals and log partition."""
    log_unary, log_pairwise, log_z = forward_backward(unary, pairwise)
    return MarginalSet.from_log(log_unary, log_pairwise), log_z


def viterbi(unary: np.ndarray, pairwise: np.ndarray) -> np.ndarray:
    """Argmax labeling of the chain scores; ties break to the smaller label."""
    unary = np.asarray(unary, dtype=np.float64)
    pairwise = np.asarray(pairwise, dtype=np.float64)
    _check_finite(unary, pairwise)
    t, k = unary.shape
    best = unary[0].copy()
    back = np.zeros((t, k), dtype=np.int64)
    for i in range(1, t):
        cand = best[:, None] + pairwise
        back[i] = np.argmax(cand, axis=0)
        best = unary[i] + cand[back[i], np.arange(k)]
    labels = np.empty(t, dtype=np.int64)
    labels[-1] = int(np.argmax(best))
    for i in range(t - 1, 0, -1):
        labels[i - 1] = back[i, labels[i]]
    return labels


def _table_entropy(lin: np.ndarray, log: np.ndarray) -> float:
    # 0 * log 0 = 0: exact-zero entries carry a floored log, the product vanishes.
    return float(-(lin * log).sum())


def chain_entropy_tables(unary, pairwise, log_unary, log_pairwise) -> float:
    t = unary.shape[0]
    if t == 1:
        return _table_entropy(unary[0], log_unary[0])
    h = _table_entropy(pairwise, log_pairwise)
    if t > 2:
        h -= _table_entropy(unary[1:-1], log_unary[1:-1])
    return h


def entropy_marginals(m: MarginalSet, validate: bool = True) -> float:
    """Entropy of the chain joint: edge entropies minus interior node entropies."""
    if validate:
        m.validate()
    return chain_entropy_tables(m.unary, m.pairwise, m.log_unary, m.log_pairwise)


def _table_kl(p_lin, p_log, q_log) -> float:
    return float((p_lin * (p_log - q_log)).sum())


def chain_kl_tables(mu, mu_log_u, mu_log_p, nu_log_u, nu_log_p) -> float:
    """KL between two chain joints from their marginal tables and logs.

    ``mu`` is a MarginalSet; the remaining arguments allow reusing each side's
    precomputed log tables.
    """
    t = mu.length
    if t == 1:
        return _table_kl(mu.unary[0], mu_log_u[0], nu_log_u[0])
    d = _table_kl(mu.pairwise, mu_log_p, nu_log_p)
    if t > 2:
        d -= _table_kl(mu.unary[1:-1], mu_log_u[1:-1], nu_log_u[1:-1])
    return d


def kl_marginals(m: MarginalSet, n: MarginalSet, validate: bool = True) -> float:
    """Decomposed KL divergence between two marginal sets of equal shape.

    Returns ``inf`` when the support condition fails (some entry of m is
    positive where n is zero); never returns NaN for valid tables.
    """
    if m.unary.shape != n.unary.shape:
        raise ValueError(f"shape mismatch: {m.unary.shape} vs {n.unary.shape}")
    if validate:
        m.validate()
        n.validate()
    tol = 1e-12
    if np.any((m.unary > tol) & (n.unary <= 0.0)) or (
        m.length > 1 and np.any((m.pairwise > tol) & (n.pairwise <= 0.0))
    ):
        return float("inf")
    return chain_kl_tables(m, m.log_unary, m.log_pairwise, n.log_unary, n.log_pairwise)


def _all_labelings(length: int, n_labels: int) -> np.ndarray:
    if n_labels ** length > ENUMERATION_LIMIT:
        raise ValueError(
            f"{n_labels}^{length} labelings exceed the enumeration limit {ENUMERATION_LIMIT}"
        )
    return np.array(list(itertools.product(range(n_labels), repeat=length)), dtype=np.int64)


@dataclass
class EnumerationResult:
    """Everything the brute-force oracle knows about one chain."""

    labelings: np.ndarray
    log_joint: np.ndarray
    joint: np.ndarray
    marginals: MarginalSet
    log_z: float


def enumerate_oracle(unary: np.ndarray, pairwise: np.ndarray) -> EnumerationResult:
    """Exact joint over all labelings, by direct summation.  Test oracle."""
    unary = np.asarray(unary, dtype=np.float64)
    pairwise = np.asarray(pairwise, dtype=np.float64)
    _check_finite(unary, pairwise)
    t, k = unary.shape
    labelings = _all_labelings(t, k)

    scores = np.zeros(labelings.shape[0])
    for i in range(t):
        scores += unary[i, labelings[:, i]]
    for i in range(t - 1):
        scores += pairwise[labelings[:, i], labelings[:, i + 1]]
    log_z = float(_logsumexp(scores))
    log_joint = scores - log_z
    joint = np.exp(log_joint)

    node = np.zeros((t, k))
    for i in range(t):
        for label in range(k):
            node[i, label] = joint[labelings[:, i] == label].sum()
    edge = np.zeros((t - 1, k, k))
    for i in range(t - 1):
        for a in range(k):
            for b in range(k):
                mask = (labelings[:, i] == a) & (labelings[:, i + 1] == b)
                edge[i, a, b] = joint[mask].sum()
    return EnumerationResult(
        labelings=labelings,
        log_joint=log_joint,
        joint=joint,
        marginals=MarginalSet.from_linear(node, edge),
        log_z=log_z,
    )


def joint_from_marginals(m: MarginalSet) -> np.ndarray:
    """Reconstruct the joint of a chain from its marginals.

    The joint probability of a labeling is the product of its edge-table
    entries divided by the product of its interior node-table entries.
    Labelings are ordered as in :func:`enumerate_oracle`.
    """
    t, k = m.unary.shape
    labelings = _all_labelings(t, k)
    if t == 1:
        return m.unary[0, labelings[:, 0]].copy()
    log_p = np.zeros(labelings.shape[0])
    for i in range(t - 1):
        log_p += m.log_pairwise[i, labelings[:, i], labelings[:, i + 1]]
    for i in range(1, t - 1):
        log_p -= m.log_unary[i, labelings[:, i]]
    # A floored log (exact zero upstream) must yield probability zero, not a
    # huge ratio: any labeling through a zero-probability entry has mass zero.
    zero = np.zeros(labelings.shape[0], dtype=bool)
    for i in range(t - 1):
        zero |= m.pairwise[i, labelings[:, i], labelings[:, i + 1]] <= 0.0
    for i in range(1, t - 1):
        zero |= m.unary[i, labelings[:, i]] <= 0.0
    log_p[zero] = -np.inf
    return np.exp(log_p)
