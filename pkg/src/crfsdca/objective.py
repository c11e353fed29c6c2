"""Primal and dual objectives, conjugate maps, and duality-gap quantities.

The primal minimizes an l2-regularized negative log-likelihood over weights.
The dual maximizes, over one marginal set per training sequence, the joint
entropy minus a quadratic in the conjugate weights.  Both directions of the
conjugacy are here:

* ``conjugate_weights``: marginals -> weights, the scaled difference between
  gold feature counts and expected feature counts;
* the marginalization oracle at fixed weights: weights -> marginals.

The total duality gap at conjugate weights is the mean over sequences of the
KL divergence between each stored marginal set and its oracle counterpart,
which is what makes per-block gap bookkeeping possible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .inference import (
    MarginalSet,
    chain_entropy_tables,
    chain_kl_tables,
    forward_backward,
    kl_marginals,
    marginal_oracle,
)
from .model import CompiledSequence, FeatureIndexer, compile_sequence


class OracleCounter:
    """Counts marginalization-oracle calls; owned by whoever runs the loop."""

    __slots__ = ("calls",)

    def __init__(self) -> None:
        self.calls = 0

    def bump(self, k: int = 1) -> None:
        self.calls += k


class WeightVector:
    """Dense weight vector with a cached squared norm.

    Sparse updates keep the cache exact through the expansion
    ``||w + g v||^2 = ||w||^2 + 2 g <w, v> + g^2 ||v||^2``; ``refresh`` bounds
    accumulated floating-point drift.
    """

    __slots__ = ("array", "_sq_norm")

    def __init__(self, array: np.ndarray):
        self.array = np.asarray(array, dtype=np.float64)
        self._sq_norm = float(self.array @ self.array)

    @property
    def squared_norm(self) -> float:
        return self._sq_norm

    def copy(self) -> "WeightVector":
        return WeightVector(self.array.copy())

    def dot_sparse(self, indices: np.ndarray, values: np.ndarray) -> float:
        return float(self.array[indices] @ values)

    def add_scaled_sparse(
        self,
        gamma: float,
        indices: np.ndarray,
        values: np.ndarray,
        dot: float | None = None,
        squared: float | None = None,
    ) -> None:
        if dot is None:
            dot = self.dot_sparse(indices, values)
        if squared is None:
            squared = float(values @ values)
        self.array[indices] += gamma * values
        self._sq_norm += 2.0 * gamma * dot + gamma * gamma * squared

    def refresh(self) -> float:
        """Recompute the cached norm; returns the relative correction."""
        exact = float(self.array @ self.array)
        drift = abs(exact - self._sq_norm) / max(exact, 1.0)
        self._sq_norm = exact
        return drift


@dataclass
class CrfProblem:
    """A dataset compiled against its feature layout, plus the regularizer."""

    dataset: "Dataset"  # noqa: F821 - crfsdca.data.Dataset; kept untyped to avoid a cycle
    lam: float

    indexer: FeatureIndexer = field(init=False)
    compiled: list[CompiledSequence] = field(init=False)

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"regularization must be positive, got {self.lam}")
        self.indexer = FeatureIndexer(
            n_attributes=self.dataset.vocabulary.size,
            n_labels=self.dataset.labels.size,
        )
        self.compiled = [compile_sequence(self.indexer, s) for s in self.dataset.sequences]

    @property
    def n(self) -> int:
        return len(self.compiled)

    @property
    def dimension(self) -> int:
        return self.indexer.dimension

    def oracle_at(self, w: np.ndarray, i: int, counter: OracleCounter | None = None):
        """Marginals and log partition of sequence i at weights w."""
        unary, pair = self.compiled[i].score_tables(w)
        if counter is not None:
            counter.bump()
        return marginal_oracle(unary, pair)


@dataclass
class DualState:
    """Everything the dual ascent mutates: marginals, weights, gap estimates."""

    marginals: list[MarginalSet]
    weights: WeightVector
    lam: float
    gap_estimates: np.ndarray
    updates: int = 0
    oracle_calls: int = 0
    eval_oracle_calls: int = 0

    @property
    def n(self) -> int:
        return len(self.marginals)

    @property
    def mean_gap_estimate(self) -> float:
        return float(self.gap_estimates.mean())


def conjugate_weights(problem: CrfProblem, marginals: list[MarginalSet]) -> WeightVector:
    """Weights induced by a full set of marginals.

    ``(1 / (lam * n)) * sum_i (gold_features_i - expected_features_i)`` where
    expectations use node tables for emission/bias coordinates and edge tables
    for transitions.
    """
    if len(marginals) != problem.n:
        raise ValueError(f"{len(marginals)} marginal sets for {problem.n} sequences")
    w = np.zeros(problem.dimension)
    for cs, m in zip(problem.compiled, marginals):
        g = cs.gold_feature
        w[g.indices] += g.values
        w[cs.feature_indices] -= cs.expected_feature_values(m.unary, m.pairwise)
    w /= problem.lam * problem.n
    return WeightVector(w)


def primal_objective(
    problem: CrfProblem, w: np.ndarray, counter: OracleCounter | None = None
) -> float:
    """Regularized negative mean conditional log-likelihood at weights w."""
    w = np.asarray(w, dtype=np.float64)
    total = 0.0
    for cs in problem.compiled:
        unary, pair = cs.score_tables(w)
        if counter is not None:
            counter.bump()
        _, _, log_z = forward_backward(unary, pair)
        total += log_z - cs.gold_feature.dot(w)
    return 0.5 * problem.lam * float(w @ w) + total / problem.n


def dual_objective(problem: CrfProblem, marginals: list[MarginalSet]) -> float:
    """Mean chain entropy minus the quadratic in the conjugate weights."""
    w = conjugate_weights(problem, marginals)
    entropy = sum(
        chain_entropy_tables(m.unary, m.pairwise, m.log_unary, m.log_pairwise)
        for m in marginals
    )
    return -0.5 * problem.lam * w.squared_norm + entropy / problem.n


def primal_gradient(
    problem: CrfProblem, w: np.ndarray, counter: OracleCounter | None = None
) -> np.ndarray:
    """Gradient of the primal: ``lam * (w - conjugate_weights(oracle(w)))``."""
    w = np.asarray(w, dtype=np.float64)
    oracle_marginals = [problem.oracle_at(w, i, counter)[0] for i in range(problem.n)]
    w_hat = conjugate_weights(problem, oracle_marginals)
    return problem.lam * (w - w_hat.array)


def block_gap(mu: MarginalSet, nu: MarginalSet) -> float:
    """Fenchel gap of one block: KL from stored marginals to oracle marginals."""
    return kl_marginals(mu, nu, validate=False)


def gradient_gap_identity_check(
    problem: CrfProblem, w: np.ndarray, counter: OracleCounter | None = None
) -> tuple[float, float]:
    """Duality gap at (w, oracle(w)) and the squared-gradient form of it.

    Both quantities equal ``(lam / 2) ||w - w_hat(oracle(w))||^2``; returning
    the pair computed through independent paths lets callers assert agreement.
    """
    w = np.asarray(w, dtype=np.float64)
    oracle_marginals = [problem.oracle_at(w, i, counter)[0] for i in range(problem.n)]
    gap = primal_objective(problem, w, counter) - dual_objective(problem, oracle_marginals)
    grad = primal_gradient(problem, w, counter)
    return gap, float(grad @ grad) / (2.0 * problem.lam)


def batch_evaluate(
    problem: CrfProblem,
    state: DualState,
    counter: OracleCounter | None = None,
    update_gap_estimates: bool = False,
):
    """Full pass over the dataset: primal, dual, and exact per-block gaps.

    Refreshes the state's weight vector from its marginals (drift correction)
    and reuses the same oracle call per sequence for the log partition and the
    block gap, so the pass costs exactly n oracle calls.
    """
    w_exact = conjugate_weights(problem, state.marginals)
    state.weights = w_exact
    w = w_exact.array

    gaps = np.empty(problem.n)
    loglik = 0.0
    entropy = 0.0
    for i, (cs, mu) in enumerate(zip(problem.compiled, state.marginals)):
        nu, log_z = problem.oracle_at(w, i, counter)
        # KL of consistent sets is nonnegative; rounding can dip a hair below.
        gaps[i] = max(
            chain_kl_tables(mu, mu.log_unary, mu.log_pairwise, nu.log_unary, nu.log_pairwise),
            0.0,
        )
        loglik += log_z - cs.gold_feature.dot(w)
        entropy += chain_entropy_tables(mu.unary, mu.pairwise, mu.log_unary, mu.log_pairwise)
    primal = 0.5 * problem.lam * w_exact.squared_norm + loglik / problem.n
    dual = -0.5 * problem.lam * w_exact.squared_norm + entropy / problem.n
    if update_gap_estimates:
        state.gap_estimates[:] = gaps
    return primal, dual, gaps
