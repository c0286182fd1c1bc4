import numpy as np
import pytest

from dropoutlab.data import (
    BUILTIN_CORPUS,
    builtin_corpus_text,
    generate_zipf_corpus,
    ingest_classification_csv,
    ingest_text_corpus,
    two_moons,
)
from dropoutlab.errors import ConfigError, ParseError
from dropoutlab.numeric import SplitSeed


class TestTextCorpus:
    def test_char_level_single_split(self):
        corpus = ingest_text_corpus("abcabc", (1.0,), tokenizer="char", is_text=True)
        assert corpus.splits["train"].size == 6
        assert set(corpus.vocab.tokens) == {"<unk>", "a", "b", "c"}

    def test_word_frequencies(self):
        corpus = ingest_text_corpus("the cat the", (1.0,), tokenizer="word", is_text=True)
        the_id = corpus.vocab.index["the"]
        cat_id = corpus.vocab.index["cat"]
        assert corpus.train_freq[the_id] == 2
        assert corpus.train_freq[cat_id] == 1

    def test_split_arithmetic(self):
        text = " ".join(f"w{i % 37}" for i in range(1000))
        corpus = ingest_text_corpus(text, (0.8, 0.1, 0.1), is_text=True)
        assert corpus.splits["train"].size == 800
        assert corpus.splits["valid"].size == 100
        assert corpus.splits["test"].size == 100

    def test_vocab_from_train_split_only_and_unk_mapping(self):
        # 'zzz' appears only in the tail, which falls outside the train split
        text = "a b a b a b a b zzz c"
        corpus = ingest_text_corpus(text, (0.8, 0.2), is_text=True)
        assert "zzz" not in corpus.vocab.index
        valid = corpus.splits["valid"]
        assert corpus.vocab.unk_id in valid

    def test_empty_corpus_rejected(self):
        with pytest.raises(ConfigError):
            ingest_text_corpus("   ", (1.0,), is_text=True)

    def test_degenerate_fractions_rejected(self):
        for fractions in ((), (0.0, 1.0), (0.7, 0.7)):
            with pytest.raises(ConfigError):
                ingest_text_corpus("a b c", fractions, is_text=True)

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigError):
            ingest_text_corpus("/nonexistent/corpus.txt", (1.0,))

    def test_builtin_corpus_loads(self):
        corpus = ingest_text_corpus(BUILTIN_CORPUS, (0.8, 0.1, 0.1))
        assert corpus.splits["train"].size > 20_000
        assert corpus.vocab.size > 400

    def test_builtin_matches_generator(self):
        assert builtin_corpus_text() == generate_zipf_corpus()


class TestClassificationCsv:
    def test_two_line_example(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0.1,0.2,1\n0.3,0.4,0\n")
        x, y = ingest_classification_csv(p)
        np.testing.assert_allclose(x, [[0.1, 0.2], [0.3, 0.4]])
        np.testing.assert_array_equal(y, [1, 0])

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(ParseError):
            ingest_classification_csv(p)

    def test_ragged_rows_report_line_number(self, tmp_path):
        p = tmp_path / "ragged.csv"
        p.write_text("0.1,0.2,1\n0.3,0\n")
        with pytest.raises(ParseError, match="line 2"):
            ingest_classification_csv(p)

    def test_non_numeric_cell_reports_line_number(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0.1,0.2,1\nx,0.4,0\n")
        with pytest.raises(ParseError, match="line 2"):
            ingest_classification_csv(p)

    def test_non_integer_label_rejected(self, tmp_path):
        p = tmp_path / "badlabel.csv"
        p.write_text("0.1,0.2,0.5\n")
        with pytest.raises(ParseError):
            ingest_classification_csv(p)

    def test_label_outside_class_range_rejected(self, tmp_path):
        p = tmp_path / "outofrange.csv"
        p.write_text("0.1,0.2,3\n")
        with pytest.raises(ParseError):
            ingest_classification_csv(p, expected_classes=2)


class TestTwoMoons:
    def test_deterministic_and_balanced(self):
        x1, y1 = two_moons(400, 0.1, SplitSeed(5))
        x2, y2 = two_moons(400, 0.1, SplitSeed(5))
        np.testing.assert_array_equal(x1, x2)
        np.testing.assert_array_equal(y1, y2)
        assert y1.sum() == 200

    def test_shapes(self):
        x, y = two_moons(101, 0.0, SplitSeed(6))
        assert x.shape == (101, 2)
        assert set(np.unique(y)) == {0, 1}


class TestZipfCorpus:
    def test_deterministic(self):
        assert generate_zipf_corpus(seed=3, n_tokens=500, vocab_size=50) == \
            generate_zipf_corpus(seed=3, n_tokens=500, vocab_size=50)

    def test_frequency_profile_is_skewed(self):
        text = generate_zipf_corpus(seed=3, n_tokens=5000, vocab_size=100)
        toks = text.split()
        counts = sorted((toks.count(w) for w in set(toks)), reverse=True)
        assert counts[0] > 20 * counts[-1]
