"""Tests for tokenization, vocabulary, TSV ingestion and the synthetic corpus."""
import numpy as np
import pytest
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.linear_model import LogisticRegression

from sparseattn.data import (
    PAD_ID,
    UNK_ID,
    Corpus,
    Example,
    build_vocab,
    encode_corpus,
    gen_synthetic,
    load_tsv,
    split_corpus,
    tokenize,
    write_tsv,
)
from sparseattn.errors import ConfigError, DataError


class TestTokenize:
    def test_word_and_punctuation_split(self):
        assert tokenize("Good movie!") == ["good", "movie", "!"]

    def test_empty(self):
        assert tokenize("") == []

    def test_apostrophe_splits(self):
        assert tokenize("It's fine.") == ["it", "'", "s", "fine", "."]

    def test_deterministic(self):
        text = "A, very-strange   Input.."
        assert tokenize(text) == tokenize(text)


class TestVocab:
    def _corpus(self, texts):
        return Corpus(train=[Example(text=t, label=0, tokens=tokenize(t)) for t in texts],
                      validation=[])

    def test_frequency_then_lexicographic(self):
        vocab = build_vocab(self._corpus(["a a b"]), max_size=10)
        assert vocab.token_to_id == {"<pad>": PAD_ID, "<unk>": UNK_ID, "a": 2, "b": 3}

    def test_rare_tokens_become_unk(self):
        vocab = build_vocab(self._corpus(["common common rare1 rare2"]), max_size=3)
        ids = vocab.encode(["common", "rare1", "rare2"])
        assert ids == [2, UNK_ID, UNK_ID]

    def test_deterministic(self):
        corpus = self._corpus(["x y z z y x w"])
        assert build_vocab(corpus, 50).token_to_id == build_vocab(corpus, 50).token_to_id

    def test_round_trip_known_tokens(self):
        vocab = build_vocab(self._corpus(["alpha beta gamma"]), max_size=10)
        tokens = ["alpha", "gamma"]
        assert vocab.decode(vocab.encode(tokens)) == tokens


class TestLoadTsv:
    def test_two_line_file(self, tmp_path):
        path = tmp_path / "data.tsv"
        path.write_text("nice film\t1\nawful film\t0\n", encoding="utf-8")
        corpus = load_tsv(path, max_len=16)
        assert len(corpus.train) == 2
        assert [e.label for e in corpus.train] == [1, 0]

    def test_header_skipped(self, tmp_path):
        path = tmp_path / "data.tsv"
        path.write_text("sentence\tlabel\nok movie\t1\nbad movie\t0\n", encoding="utf-8")
        corpus = load_tsv(path, max_len=16)
        assert len(corpus.train) == 2

    def test_crlf_accepted(self, tmp_path):
        path = tmp_path / "data.tsv"
        path.write_bytes(b"good\t1\r\nbad\t0\r\n")
        assert len(load_tsv(path, max_len=8).train) == 2

    def test_extra_tabs_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "data.tsv"
        path.write_text("fine\t1\na\tb\tc\td\t0\n", encoding="utf-8")
        with pytest.raises(DataError, match=":2:"):
            load_tsv(path, max_len=8)

    def test_bad_label_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "data.tsv"
        path.write_text("fine\t1\nmeh\t2\n", encoding="utf-8")
        with pytest.raises(DataError, match=":2:"):
            load_tsv(path, max_len=8)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_tsv(tmp_path / "nope.tsv", max_len=8)

    def test_truncation(self, tmp_path):
        path = tmp_path / "data.tsv"
        path.write_text(" ".join(["tok"] * 50) + "\t1\nshort\t0\n", encoding="utf-8")
        corpus = load_tsv(path, max_len=10)
        assert all(len(e.tokens) <= 10 for e in corpus.train)

    def test_directory_form(self, tmp_path):
        corpus = gen_synthetic(3, 40, vocab_size=60, max_len=16)
        write_tsv(corpus.train, tmp_path / "train.tsv")
        write_tsv(corpus.validation, tmp_path / "validation.tsv")
        loaded = load_tsv(tmp_path, max_len=16)
        assert len(loaded.train) == len(corpus.train)
        assert len(loaded.validation) == len(corpus.validation)
        assert [e.text for e in loaded.train] == [e.text for e in corpus.train]


class TestSplitCorpus:
    def test_round_robin(self):
        corpus = Corpus(
            train=[Example(text=f"t{i}", label=i % 2, tokens=[f"t{i}"]) for i in range(20)],
            validation=[],
        )
        split = split_corpus(corpus)
        assert len(split.validation) == 2
        assert len(split.train) == 18
        assert {e.text for e in split.validation} == {"t9", "t19"}


class TestSynthetic:
    def test_deterministic(self):
        a = gen_synthetic(7, 50, vocab_size=100, max_len=32)
        b = gen_synthetic(7, 50, vocab_size=100, max_len=32)
        assert [e.text for e in a.train] == [e.text for e in b.train]
        assert [e.text for e in a.validation] == [e.text for e in b.validation]

    def test_label_balance(self):
        corpus = gen_synthetic(3, 201, vocab_size=100, max_len=32)
        labels = [e.label for e in corpus.train + corpus.validation]
        assert abs(labels.count(0) - labels.count(1)) <= 1

    def test_both_splits_have_both_labels(self):
        corpus = gen_synthetic(3, 40, vocab_size=100, max_len=32)
        assert {e.label for e in corpus.train} == {0, 1}
        assert {e.label for e in corpus.validation} == {0, 1}

    def test_split_sizes(self):
        corpus = gen_synthetic(7, 2000, vocab_size=1000, max_len=64)
        assert len(corpus.train) == 1800
        assert len(corpus.validation) == 200

    def test_splits_disjoint(self):
        corpus = gen_synthetic(5, 100, vocab_size=100, max_len=32)
        train_texts = {id(e) for e in corpus.train}
        assert all(id(e) not in train_texts for e in corpus.validation)

    def test_lengths_within_bound(self):
        corpus = gen_synthetic(5, 100, vocab_size=100, max_len=24)
        assert all(len(e.tokens) <= 24 for e in corpus.train + corpus.validation)

    def test_size_too_small(self):
        with pytest.raises(ConfigError):
            gen_synthetic(1, 5)

    def test_bag_of_words_logistic_oracle_reaches_99pct(self):
        corpus = gen_synthetic(7, 2000, vocab_size=1000, max_len=64)
        vectorizer = CountVectorizer(tokenizer=tokenize, token_pattern=None)
        x_train = vectorizer.fit_transform([e.text for e in corpus.train])
        x_val = vectorizer.transform([e.text for e in corpus.validation])
        model = LogisticRegression(max_iter=2000)
        model.fit(x_train, [e.label for e in corpus.train])
        accuracy = model.score(x_val, [e.label for e in corpus.validation])
        assert accuracy >= 0.99


class TestEncodeCorpus:
    def test_ids_within_vocab_and_truncated(self):
        corpus = gen_synthetic(2, 40, vocab_size=80, max_len=12)
        vocab = build_vocab(corpus, 80)
        encode_corpus(corpus, vocab, 12)
        for example in corpus.train + corpus.validation:
            assert example.token_ids is not None
            assert len(example.token_ids) <= 12
            assert max(example.token_ids) < vocab.size

    def test_unknowns_map_to_unk(self):
        corpus = Corpus(
            train=[Example(text="aaa bbb", label=0, tokens=["aaa", "bbb"])],
            validation=[Example(text="ccc", label=1, tokens=["ccc"])],
        )
        vocab = build_vocab(corpus, 10)
        encode_corpus(corpus, vocab, 8)
        assert corpus.validation[0].token_ids == [UNK_ID]


class TestWriteTsv:
    def test_round_trip(self, tmp_path):
        corpus = gen_synthetic(11, 30, vocab_size=50, max_len=16)
        write_tsv(corpus.train, tmp_path / "train.tsv")
        loaded = load_tsv(tmp_path / "train.tsv", max_len=16)
        assert [e.text for e in loaded.train] == [e.text for e in corpus.train]
        assert [e.label for e in loaded.train] == [e.label for e in corpus.train]

    def test_rerun_is_byte_identical(self, tmp_path):
        corpus = gen_synthetic(11, 30, vocab_size=50, max_len=16)
        write_tsv(corpus.train, tmp_path / "a.tsv")
        write_tsv(corpus.train, tmp_path / "b.tsv")
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
