"""Block-selection strategies and the quantities they feed on.

All stochastic schemes are mixed with a uniform component: a configurable
fraction of draws is non-uniform, the rest uniform, which keeps every block
reachable while its recorded gap estimate is stale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FeatureIndexer, Sequence, extract_features

SCHEMES = ("uniform", "importance", "gap", "gap_importance", "max")


@dataclass(frozen=True)
class SamplerConfig:
    scheme: str = "gap"
    nonuniform_ratio: float = 0.8
    gap_floor: float = 1e-12

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if not 0.0 <= self.nonuniform_ratio <= 1.0:
            raise ValueError("nonuniform_ratio must lie in [0, 1]")
        if self.gap_floor <= 0.0:
            raise ValueError("gap_floor must be positive")


@dataclass(frozen=True)
class RadiusTable:
    """Squared corrected-feature radii and the smoothness bounds they induce."""

    per_sequence: np.ndarray  # R_i
    lam: float

    @property
    def max(self) -> float:
        return float(self.per_sequence.max())

    @property
    def mean(self) -> float:
        return float(self.per_sequence.mean())

    @property
    def smoothness(self) -> np.ndarray:
        """L_i = lam + R_i / n, an upper bound on each block's smoothness."""
        return self.lam + self.per_sequence / self.per_sequence.shape[0]


def estimate_radius(indexer: FeatureIndexer, seq: Sequence) -> float:
    """Upper bound on the squared norm of any corrected feature of ``seq``.

    Feature counts are nonnegative, so ``||gold - candidate||^2`` is at most
    ``||gold||^2 + ||candidate||^2``, and among candidates the norm is
    maximized by a constant labeling (it concentrates every count in one
    column).  A constant labeling over a label absent from the gold sequence
    makes the two supports disjoint, so the bound is tight for it.
    """
    gold_sq = extract_features(indexer, seq, seq.gold_labels).squared_norm()
    used = set(seq.gold_labels)
    absent = [k for k in range(indexer.n_labels) if k not in used]
    t = seq.length
    if absent:
        return gold_sq + max(
            extract_features(indexer, seq, [z] * t).squared_norm() for z in absent
        )
    # Every label appears in the gold labeling: fall back to twice the largest
    # constant-labeling norm, a valid bound via the triangle inequality.
    return 2.0 * max(
        extract_features(indexer, seq, [k] * t).squared_norm()
        for k in range(indexer.n_labels)
    )


def radius_table(indexer: FeatureIndexer, sequences, lam: float) -> RadiusTable:
    radii = np.array([estimate_radius(indexer, s) for s in sequences])
    return RadiusTable(per_sequence=radii, lam=lam)


def sampling_probabilities(
    gaps: np.ndarray, cfg: SamplerConfig, smoothness: np.ndarray | None = None
) -> np.ndarray:
    """The exact mixed probability vector the sampler draws from."""
    n = gaps.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    uniform = np.full(n, 1.0 / n)
    if cfg.scheme == "uniform":
        scheme_p = uniform
    elif cfg.scheme == "max":
        scheme_p = np.zeros(n)
        scheme_p[int(np.argmax(gaps))] = 1.0
    else:
        if cfg.scheme in ("importance", "gap_importance"):
            if smoothness is None:
                raise ValueError(f"scheme {cfg.scheme!r} needs smoothness bounds")
            weights = np.asarray(smoothness, dtype=np.float64)
            if cfg.scheme == "gap_importance":
                weights = weights * np.maximum(gaps, cfg.gap_floor)
        else:  # gap
            weights = np.maximum(gaps, cfg.gap_floor)
        scheme_p = weights / weights.sum()
    return (1.0 - cfg.nonuniform_ratio) * uniform + cfg.nonuniform_ratio * scheme_p


def sample_block(
    gaps: np.ndarray,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    smoothness: np.ndarray | None = None,
) -> tuple[int, np.ndarray]:
    """Draw one block index; also return the probability vector used."""
    probs = sampling_probabilities(gaps, cfg, smoothness)
    i = int(rng.choice(probs.shape[0], p=probs))
    return i, probs


def nonuniformity(gaps: np.ndarray) -> float:
    """Quadratic mean over arithmetic mean of the gaps, in [1, sqrt(n)]."""
    gaps = np.asarray(gaps, dtype=np.float64)
    if gaps.ndim != 1 or gaps.shape[0] == 0:
        raise ValueError("gaps must be a nonempty vector")
    if gaps.min() < 0.0:
        raise ValueError("gaps must be nonnegative")
    mean = gaps.mean()
    if mean == 0.0:
        raise ValueError("gaps must not all be zero")
    return float(np.sqrt((gaps @ gaps) / gaps.shape[0]) / mean)
