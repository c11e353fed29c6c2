import numpy as np
import pytest

from crfsdca.data import Dataset, Vocabulary
from crfsdca.inference import marginal_oracle
from crfsdca.model import LabelSet, Sequence, Token


def random_scores(rng, t, k, scale=5.0):
    unary = rng.uniform(-scale, scale, (t, k))
    pairwise = rng.uniform(-scale, scale, (k, k))
    return unary, pairwise


def random_consistent_marginals(rng, t, k, scale=3.0):
    """A tree-consistent, strictly positive marginal set (oracle output)."""
    unary, pairwise = random_scores(rng, t, k, scale)
    marginals, _ = marginal_oracle(unary, pairwise)
    return marginals


def build_dataset(token_lists, n_labels, n_attributes):
    """Dataset from [[(attr_ids, label), ...], ...] with fixed vocab sizes."""
    sequences = [
        Sequence(tokens=tuple(Token(attributes=tuple(sorted(ids)), label=lab)
                              for ids, lab in toks))
        for toks in token_lists
    ]
    return Dataset(
        sequences=sequences,
        labels=LabelSet(names=tuple(f"L{i}" for i in range(n_labels))),
        vocabulary=Vocabulary(names=[f"a{i}" for i in range(n_attributes)], frozen=True),
        provenance={"source": "inline", "format": "test"},
    )


def random_dataset(rng, n, t_max, n_labels, n_attributes, max_attrs=3):
    token_lists = []
    for _ in range(n):
        t = int(rng.integers(1, t_max + 1))
        toks = []
        for _ in range(t):
            count = int(rng.integers(0, max_attrs + 1))
            ids = sorted(rng.choice(n_attributes, size=count, replace=False).tolist())
            toks.append((ids, int(rng.integers(0, n_labels))))
        token_lists.append(toks)
    return build_dataset(token_lists, n_labels, n_attributes)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
