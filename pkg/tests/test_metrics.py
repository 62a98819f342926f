"""Evaluation metric tests: corpus BLEU, embedding-average similarity,
distinct-n and the annotation-based informativeness-relevance score.

Golden values are hand-derived from the metric definitions; invariance
properties are checked with seeded random corpora.
"""

import math

import numpy as np
import pytest

from latentdialog.metrics import (
    AnnotationRecord,
    bleu_n,
    corpus_embedding_similarity,
    distinct_n,
    embedding_avg_similarity,
    evaluate_files,
    load_annotations,
    load_embeddings,
    ui_score,
)


def _random_corpus(rng, n_sent, vocab=("a", "b", "c", "d", "e")):
    corpus = []
    for _ in range(n_sent):
        length = int(rng.integers(1, 8))
        corpus.append([vocab[i] for i in rng.integers(0, len(vocab), size=length)])
    return corpus


class TestBleu:
    def test_brevity_penalty_example(self):
        """hyp "the cat" vs ref "the cat sat": precision 1, BP = e^(1-3/2)."""
        score = bleu_n([["the", "cat"]], [["the", "cat", "sat"]], 1)
        assert score == pytest.approx(math.exp(1 - 3 / 2), abs=1e-3)
        assert score == pytest.approx(0.6065, abs=1e-3)

    def test_perfect_match(self):
        corpus = [["a", "b", "c"], ["d", "e"]]
        assert bleu_n(corpus, corpus, 1) == pytest.approx(1.0, abs=1e-12)
        assert bleu_n(corpus, corpus, 2) == pytest.approx(1.0, abs=1e-12)

    def test_no_overlap_is_epsilon_level(self):
        score = bleu_n([["x", "y"]], [["a", "b"]], 1)
        assert score < 1e-4

    def test_clipping(self):
        """Repeated hypothesis tokens are clipped to the reference count."""
        score = bleu_n([["the", "the", "the"]], [["the", "cat"]], 1)
        # 1 clipped match of 3; c=3 > r=2 so no brevity penalty
        assert score == pytest.approx(1 / 3, abs=1e-9)

    def test_bigram_hand_example(self):
        """hyp "a b c" vs ref "a b d": one of two bigrams matches."""
        hyp = [["a", "b", "c"]]
        ref = [["a", "b", "d"]]
        assert bleu_n(hyp, ref, 2) == pytest.approx(
            math.sqrt((2 / 3) * (1 / 2)), rel=1e-9
        )

    def test_corpus_level_pooling(self):
        """Matches and lengths pool over the corpus before the ratio."""
        hyps = [["a"], ["b", "b"]]
        refs = [["a"], ["c", "c"]]
        # pooled unigram precision (1+0)/3; c=3, r=3 so no brevity penalty
        assert bleu_n(hyps, refs, 1) == pytest.approx(1 / 3, abs=1e-9)

    def test_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bleu_n([["a"]], [["a"], ["b"]], 1)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            bleu_n([], [], 1)

    def test_order_invariance(self):
        """Corpus BLEU does not depend on sentence order."""
        rng = np.random.default_rng(13)
        hyps = _random_corpus(rng, 30)
        refs = _random_corpus(rng, 30)
        base = bleu_n(hyps, refs, 2)
        perm = rng.permutation(30)
        shuffled = bleu_n([hyps[i] for i in perm], [refs[i] for i in perm], 2)
        assert shuffled == pytest.approx(base, rel=1e-12)


class TestEmbeddingSimilarity:
    TABLE = {
        "a": np.array([1.0, 0.0]),
        "b": np.array([0.0, 1.0]),
        "c": np.array([-1.0, 0.0]),
    }

    def test_identical_sentences(self):
        sim = embedding_avg_similarity(["a", "b"], ["a", "b"], self.TABLE)
        assert sim == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_sentences(self):
        assert embedding_avg_similarity(["a"], ["b"], self.TABLE) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_opposite_sentences(self):
        assert embedding_avg_similarity(["a"], ["c"], self.TABLE) == pytest.approx(
            -1.0, abs=1e-12
        )

    def test_oov_words_are_dropped_from_the_mean(self):
        """Unknown words do not contribute zero vectors to the average."""
        with_oov = embedding_avg_similarity(["a", "zzz"], ["a"], self.TABLE)
        assert with_oov == pytest.approx(1.0, abs=1e-9)

    def test_fully_oov_side_returns_none(self):
        assert embedding_avg_similarity(["zzz"], ["a"], self.TABLE) is None

    def test_scale_invariance(self):
        """Cosine ignores uniform scaling of the embedding table."""
        rng = np.random.default_rng(21)
        table = {w: rng.standard_normal(4) for w in "abcde"}
        scaled = {w: 7.5 * v for w, v in table.items()}
        hyp, ref = ["a", "b", "c"], ["c", "d", "e"]
        assert embedding_avg_similarity(hyp, ref, scaled) == pytest.approx(
            embedding_avg_similarity(hyp, ref, table), rel=1e-12
        )

    def test_corpus_mean_and_skip_count(self):
        hyps = [["a"], ["zzz"], ["b"]]
        refs = [["a"], ["a"], ["b"]]
        mean, skipped = corpus_embedding_similarity(hyps, refs, self.TABLE)
        assert mean == pytest.approx(1.0, abs=1e-9)
        assert skipped == 1

    def test_zero_norm_mean_gives_zero(self):
        """Opposite vectors can cancel; the convention is similarity 0."""
        sim = embedding_avg_similarity(["a", "c"], ["a"], self.TABLE)
        assert sim == 0.0


class TestDistinctN:
    def test_repeated_response(self):
        """Two copies of "a b": 2 distinct unigrams over 4 words."""
        assert distinct_n([["a", "b"], ["a", "b"]], 1) == pytest.approx(0.5)

    def test_all_unique(self):
        assert distinct_n([["a", "b", "c"]], 1) == pytest.approx(1.0)

    def test_bigrams(self):
        """"a b c" twice: bigrams {ab, bc} over 6 words."""
        value = distinct_n([["a", "b", "c"], ["a", "b", "c"]], 2)
        assert value == pytest.approx(2 / 6, abs=1e-12)

    def test_single_word_responses_have_no_bigrams(self):
        assert distinct_n([["a"], ["b"]], 2) == pytest.approx(0.0)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            distinct_n([], 1)


class TestUiScore:
    def test_uniform_threes(self):
        """All (3, 3) annotations score exactly 9."""
        annotations = [
            AnnotationRecord("r1", "a1", 3, 3),
            AnnotationRecord("r1", "a2", 3, 3),
            AnnotationRecord("r2", "a1", 3, 3),
        ]
        assert ui_score(annotations) == pytest.approx(9.0, abs=1e-12)

    def test_mean_of_products_not_product_of_means(self):
        annotations = [
            AnnotationRecord("r1", "a1", 3, 0),
            AnnotationRecord("r2", "a1", 0, 3),
        ]
        # per-response products are 0 and 0; a product of corpus means
        # (1.5 * 1.5) would wrongly give 2.25
        assert ui_score(annotations) == pytest.approx(0.0, abs=1e-12)

    def test_annotator_averaging_within_response(self):
        annotations = [
            AnnotationRecord("r1", "a1", 1, 2),
            AnnotationRecord("r1", "a2", 3, 0),
        ]
        assert ui_score(annotations) == pytest.approx(2.0, abs=1e-12)

    def test_score_range_validation(self):
        with pytest.raises(ValueError):
            AnnotationRecord("r1", "a1", 4, 0)
        with pytest.raises(ValueError):
            AnnotationRecord("r1", "a1", 0, -1)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ui_score([])


class TestFileIo:
    def test_load_embeddings_roundtrip(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("a 1.0 0.0\nb 0.5 0.5\n", encoding="utf-8")
        table = load_embeddings(path)
        np.testing.assert_allclose(table["a"], [1.0, 0.0])
        np.testing.assert_allclose(table["b"], [0.5, 0.5])

    def test_load_embeddings_dim_mismatch(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("a 1.0 0.0\nb 0.5\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_embeddings(path)

    def test_load_annotations(self, tmp_path):
        path = tmp_path / "ann.tsv"
        path.write_text("r1\ta1\t2\t3\nr1\ta2\t1\t1\n", encoding="utf-8")
        records = load_annotations(path)
        assert len(records) == 2
        assert records[0].informativeness == 2
        assert records[1].relevance == 1

    def test_load_annotations_bad_field_count(self, tmp_path):
        path = tmp_path / "ann.tsv"
        path.write_text("r1\ta1\t2\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_annotations(path)

    def test_evaluate_files_identical(self, tmp_path):
        hyp = tmp_path / "hyp.txt"
        ref = tmp_path / "ref.txt"
        hyp.write_text("a b c\nd e\n", encoding="utf-8")
        ref.write_text("a b c\nd e\n", encoding="utf-8")
        report = evaluate_files(hyp, ref)
        assert report.bleu1 == pytest.approx(1.0, abs=1e-9)
        assert report.bleu2 == pytest.approx(1.0, abs=1e-9)
        assert math.isnan(report.sim)
        assert report.n_responses == 2

    def test_evaluate_files_line_mismatch(self, tmp_path):
        hyp = tmp_path / "hyp.txt"
        ref = tmp_path / "ref.txt"
        hyp.write_text("a\n", encoding="utf-8")
        ref.write_text("a\nb\n", encoding="utf-8")
        with pytest.raises(ValueError):
            evaluate_files(hyp, ref)

    def test_report_table_layout(self, tmp_path):
        hyp = tmp_path / "hyp.txt"
        ref = tmp_path / "ref.txt"
        hyp.write_text("a b\n", encoding="utf-8")
        ref.write_text("a b\n", encoding="utf-8")
        report = evaluate_files(hyp, ref)
        table = report.table()
        for column in ("Bleu-1", "Bleu-2", "Sim", "Dist-1", "Dist-2"):
            assert column in table
