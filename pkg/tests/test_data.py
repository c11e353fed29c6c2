import numpy as np
import pytest

from crfsdca.data import (
    CrfModel,
    SyntheticSpec,
    Vocabulary,
    generate_synthetic,
    load_conll,
    load_model,
    load_ocr,
    load_state,
    save_model,
    save_state,
    split_dataset,
    write_conll,
)
from crfsdca.errors import DataError, ModelFormatError
from crfsdca.metrics import token_error_rate
from crfsdca.objective import CrfProblem
from crfsdca.sdca import TrainConfig, init_dual, sdca_train

from conftest import random_dataset

CONLL_SAMPLE = """\
w=the pos=DT DET
w=cat pos=NN NOUN

w=dogs pos=NNS NOUN
w=bark pos=VBP VERB

w=the DET
"""


class TestConll:
    def test_single_label_rejected(self, tmp_path):
        path = tmp_path / "one.txt"
        path.write_text("w=the NOUN\n\n", encoding="utf-8")
        with pytest.raises(DataError, match="at least 2"):
            load_conll(str(path))

    def test_counts_and_vocabulary_order(self, tmp_path):
        path = tmp_path / "sample.txt"
        path.write_text(CONLL_SAMPLE, encoding="utf-8")
        ds = load_conll(str(path))
        assert ds.n == 3
        assert ds.token_count == 5  # lines minus blanks
        assert ds.labels.names == ("DET", "NOUN", "VERB")
        assert ds.vocabulary.names[:2] == ["w=the", "pos=DT"]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "sample.txt"
        path.write_text(CONLL_SAMPLE, encoding="utf-8")
        ds = load_conll(str(path))
        out = tmp_path / "rewritten.txt"
        write_conll(str(out), ds)
        again = load_conll(str(out))
        assert again.n == ds.n
        assert again.labels.names == ds.labels.names
        assert again.vocabulary.names == ds.vocabulary.names
        for a, b in zip(ds.sequences, again.sequences):
            assert a == b

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("\n\n", encoding="utf-8")
        with pytest.raises(DataError, match="no sequences"):
            load_conll(str(path))

    def test_frozen_vocabulary_drops_unseen_attributes(self, tmp_path):
        train = tmp_path / "train.txt"
        train.write_text("a x A\nb y B\n\n", encoding="utf-8")
        ds = load_conll(str(train))
        test = tmp_path / "test.txt"
        test.write_text("a z A\n\n", encoding="utf-8")
        held_out = load_conll(str(test), vocabulary=ds.vocabulary.freeze(), labels=ds.labels)
        assert held_out.sequences[0].tokens[0].attributes == (0,)  # only "a" survives

    def test_unknown_label_reports_line_number(self, tmp_path):
        train = tmp_path / "train.txt"
        train.write_text("a A\nb B\n\n", encoding="utf-8")
        ds = load_conll(str(train))
        test = tmp_path / "test.txt"
        test.write_text("a A\n\nb C\n\n", encoding="utf-8")
        with pytest.raises(DataError, match=":3:"):
            load_conll(str(test), vocabulary=ds.vocabulary, labels=ds.labels)


def ocr_row(row_id, letter, next_id, pixels_on):
    pixels = ["0"] * 128
    for p in pixels_on:
        pixels[p] = "1"
    return "\t".join(
        [str(row_id), letter, str(next_id), "1", "1", "0"] + pixels
    )


class TestOcr:
    def test_two_word_fixture(self, tmp_path):
        path = tmp_path / "letters.data"
        rows = [
            ocr_row(1, "c", 2, [0, 5]),
            ocr_row(2, "a", 3, [1]),
            ocr_row(3, "t", -1, [2, 3]),
            ocr_row(4, "o", 5, [7]),
            ocr_row(5, "k", -1, [8, 100]),
        ]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        ds = load_ocr(str(path))
        assert ds.n == 2
        assert [s.length for s in ds.sequences] == [3, 2]
        assert ds.labels.size == 26
        assert ds.vocabulary.size == 128
        assert ds.sequences[0].tokens[0].attributes == (0, 5)
        assert ds.sequences[0].gold_labels == (2, 0, 19)  # c, a, t

    def test_broken_chain_rejected(self, tmp_path):
        path = tmp_path / "letters.data"
        rows = [ocr_row(1, "c", 99, [0]), ocr_row(2, "a", -1, [1])]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        with pytest.raises(DataError, match="broken chain"):
            load_ocr(str(path))

    def test_non_binary_pixel_rejected(self, tmp_path):
        path = tmp_path / "letters.data"
        row = ocr_row(1, "c", -1, [0]).split("\t")
        row[6] = "2"
        path.write_text("\t".join(row) + "\n", encoding="utf-8")
        with pytest.raises(DataError, match="non-binary"):
            load_ocr(str(path))

    def test_unclosed_word_rejected(self, tmp_path):
        path = tmp_path / "letters.data"
        path.write_text(ocr_row(1, "c", 2, [0]) + "\n", encoding="utf-8")
        with pytest.raises(DataError, match="chain never closed"):
            load_ocr(str(path))


class TestSynthetic:
    def test_same_seed_bit_identical(self):
        spec = SyntheticSpec(n_sequences=20, min_length=2, max_length=6, n_labels=4,
                             n_attributes=30, attrs_per_token=3, seed=42)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert a.sequences == b.sequences

    def test_single_shared_attribute_is_fully_dense(self):
        spec = SyntheticSpec(n_sequences=5, min_length=2, max_length=4, n_labels=3,
                             n_attributes=1, attrs_per_token=1, seed=0,
                             emission_noise_pct=0)
        ds = generate_synthetic(spec)
        for seq in ds.sequences:
            for token in seq.tokens:
                assert token.attributes == (0,)

    def test_label_marginals_near_uniform_stationary(self):
        # The circulant integer transition weights make the latent chain's
        # stationary distribution exactly uniform.
        spec = SyntheticSpec(n_sequences=500, min_length=20, max_length=20,
                             n_labels=4, n_attributes=40, attrs_per_token=3, seed=7)
        ds = generate_synthetic(spec)
        counts = np.zeros(4)
        for seq in ds.sequences:
            for token in seq.tokens:
                counts[token.label] += 1
        freq = counts / counts.sum()
        # three sigma of the iid binomial, inflated 3x for chain correlation
        sigma = np.sqrt(0.25 * 0.75 / counts.sum())
        assert np.max(np.abs(freq - 0.25)) <= 9 * sigma

    def test_spec_validation(self):
        with pytest.raises(DataError):
            SyntheticSpec(n_sequences=0, min_length=1, max_length=2, n_labels=3,
                          n_attributes=5, attrs_per_token=2, seed=0)
        with pytest.raises(DataError):
            SyntheticSpec(n_sequences=1, min_length=3, max_length=2, n_labels=3,
                          n_attributes=5, attrs_per_token=2, seed=0)
        with pytest.raises(DataError):
            SyntheticSpec(n_sequences=1, min_length=1, max_length=2, n_labels=3,
                          n_attributes=5, attrs_per_token=9, seed=0)


class TestSplit:
    def test_partition_shares_vocabulary(self, rng):
        ds = random_dataset(rng, 10, 4, 3, 8)
        train, test = split_dataset(ds, 0.3, seed=5)
        assert train.n + test.n == ds.n
        assert test.n == 3
        assert train.vocabulary is ds.vocabulary
        assert train.labels is ds.labels

    def test_deterministic(self, rng):
        ds = random_dataset(rng, 10, 4, 3, 8)
        a = split_dataset(ds, 0.3, seed=5)
        b = split_dataset(ds, 0.3, seed=5)
        assert a[0].sequences == b[0].sequences

    def test_rejects_degenerate_fraction(self, rng):
        ds = random_dataset(rng, 3, 4, 3, 8)
        with pytest.raises(DataError):
            split_dataset(ds, 0.0, seed=1)


class TestModelPersistence:
    def make_model(self, rng, ds):
        problem = CrfProblem(ds, lam=0.5)
        return CrfModel(
            weights=rng.normal(size=problem.dimension),
            lam=0.5,
            labels=ds.labels,
            vocabulary=ds.vocabulary,
        )

    def test_bit_exact_round_trip(self, rng, tmp_path):
        ds = random_dataset(rng, 5, 4, 3, 8)
        model = self.make_model(rng, ds)
        path = tmp_path / "model.txt"
        save_model(str(path), model)
        loaded = load_model(str(path))
        assert np.array_equal(loaded.weights, model.weights)
        assert loaded.lam == model.lam
        assert loaded.labels.names == model.labels.names
        assert loaded.vocabulary.names == model.vocabulary.names

    def test_version_mismatch_rejected(self, rng, tmp_path):
        ds = random_dataset(rng, 3, 3, 2, 4)
        model = self.make_model(rng, ds)
        path = tmp_path / "model.txt"
        save_model(str(path), model)
        text = path.read_text(encoding="utf-8").replace("version: 1", "version: 99")
        path.write_text(text, encoding="utf-8")
        with pytest.raises(ModelFormatError, match="version"):
            load_model(str(path))

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "model.txt"
        path.write_text("format: something-else\n", encoding="utf-8")
        with pytest.raises(ModelFormatError):
            load_model(str(path))

    def test_reloaded_model_predicts_identically(self, rng, tmp_path):
        ds = random_dataset(rng, 8, 5, 3, 10)
        result = sdca_train(ds, TrainConfig(stop_gap=1e-4, max_epochs=50, seed=3))
        model = CrfModel(
            weights=result.state.weights.array.copy(),
            lam=result.problem.lam,
            labels=ds.labels,
            vocabulary=ds.vocabulary,
        )
        path = tmp_path / "model.txt"
        save_model(str(path), model)
        reloaded = load_model(str(path))
        held_out = random_dataset(rng, 5, 5, 3, 10)
        before = token_error_rate(model.indexer, held_out.sequences, model.weights)
        after = token_error_rate(reloaded.indexer, held_out.sequences, reloaded.weights)
        assert before == after


class TestStatePersistence:
    def test_round_trip(self, rng, tmp_path):
        ds = random_dataset(rng, 6, 4, 3, 6)
        problem = CrfProblem(ds, lam=0.4)
        state = init_dual(problem, 0.05)
        state.updates = 17
        state.oracle_calls = 17
        path = tmp_path / "state.npz"
        save_state(str(path), state, ds.vocabulary.size, ds.labels.names)
        loaded, label_names, n_attributes = load_state(str(path))
        assert label_names == list(ds.labels.names)
        assert n_attributes == ds.vocabulary.size
        assert loaded.lam == state.lam
        assert loaded.updates == 17
        assert np.array_equal(loaded.weights.array, state.weights.array)
        for a, b in zip(loaded.marginals, state.marginals):
            assert np.array_equal(a.unary, b.unary)
            assert np.array_equal(a.pairwise, b.pairwise)

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "state.npz"
        np.savez(str(path), format="other", version=1)
        with pytest.raises(ModelFormatError):
            load_state(str(path))


class TestVocabulary:
    def test_first_seen_order_and_freezing(self):
        vocab = Vocabulary()
        assert vocab.intern("b") == 0
        assert vocab.intern("a") == 1
        assert vocab.intern("b") == 0
        vocab.freeze()
        assert vocab.intern("c") is None
        assert vocab.names == ["b", "a"]
