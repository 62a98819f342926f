"""Synthetic corpus generator tests: counts, determinism, vocabulary budget
and split semantics."""

import numpy as np
import pytest

from latentdialog.synth_data import (
    CorpusBundle,
    TemplateSpec,
    generate_corpus,
    write_corpus,
)


def small_spec(**kwargs):
    defaults = dict(
        n_templates=4,
        paraphrases_per_prompt=5,
        responses_per_cluster=3,
        rng_seed=2,
    )
    defaults.update(kwargs)
    return TemplateSpec(**defaults)


class TestGeneration:
    def test_pair_count_without_generics(self):
        spec = small_spec(generic_attach_prob=0.0)
        bundle = generate_corpus(spec)
        assert len(bundle.train_pairs) == 4 * 5 * 3
        assert bundle.test_pairs == []
        assert len(bundle.train_labels) == len(bundle.train_pairs)

    def test_generic_attachment_rate(self):
        """Generic pairs per paraphrase follow the configured Bernoulli rate."""
        spec = small_spec(
            n_templates=30, paraphrases_per_prompt=10, generic_attach_prob=0.5
        )
        bundle = generate_corpus(spec)
        n_paraphrases = 30 * 10
        n_generic = sum(1 for label in bundle.train_labels if label == "generic")
        sigma = np.sqrt(n_paraphrases * 0.25)
        assert abs(n_generic - 0.5 * n_paraphrases) <= 3 * sigma

    def test_labels_align_with_pairs(self):
        bundle = generate_corpus(small_spec(generic_attach_prob=0.3))
        generic_texts = set(bundle.generic_surfaces)
        for (prompt, response), label in zip(bundle.train_pairs, bundle.train_labels):
            if label == "generic":
                assert " ".join(response) in generic_texts
            else:
                t = int(label)
                assert f"item{t}" in response
                assert f"topic{t}a" in prompt

    def test_determinism(self):
        a = generate_corpus(small_spec())
        b = generate_corpus(small_spec())
        assert a.train_pairs == b.train_pairs
        assert a.train_labels == b.train_labels

    def test_seed_changes_corpus(self):
        a = generate_corpus(small_spec(rng_seed=1))
        b = generate_corpus(small_spec(rng_seed=2))
        assert a.train_pairs != b.train_pairs

    def test_paraphrases_distinct(self):
        bundle = generate_corpus(small_spec())
        for info in bundle.templates:
            prompts = info.train_prompts + info.test_prompts
            assert len(set(prompts)) == len(prompts)

    def test_every_paraphrase_pairs_with_every_cluster_response(self):
        spec = small_spec(generic_attach_prob=0.0)
        bundle = generate_corpus(spec)
        by_prompt: dict[str, set[str]] = {}
        for prompt, response in bundle.train_pairs:
            by_prompt.setdefault(" ".join(prompt), set()).add(" ".join(response))
        for info in bundle.templates:
            for prompt in info.train_prompts:
                assert by_prompt[prompt] == set(info.responses)

    def test_vocabulary_budget_enforced(self):
        with pytest.raises(ValueError):
            generate_corpus(small_spec(vocab_size=30))

    def test_word_count_under_budget(self):
        bundle = generate_corpus(small_spec())
        seen = set()
        for prompt, response in bundle.train_pairs + bundle.test_pairs:
            seen.update(prompt)
            seen.update(response)
        assert len(seen) <= bundle.word_count
        assert bundle.word_count + 4 <= 300


class TestSplits:
    def test_paraphrase_holdout_fraction(self):
        spec = small_spec(paraphrases_per_prompt=10, test_fraction=0.2)
        bundle = generate_corpus(spec)
        for info in bundle.templates:
            assert len(info.test_prompts) == 2
            assert len(info.train_prompts) == 8

    def test_holdout_prompts_disjoint(self):
        spec = small_spec(paraphrases_per_prompt=10, test_fraction=0.3)
        bundle = generate_corpus(spec)
        train_prompts = {" ".join(p) for p, _ in bundle.train_pairs}
        test_prompts = {" ".join(p) for p, _ in bundle.test_pairs}
        assert train_prompts.isdisjoint(test_prompts)

    def test_cluster_disjoint_split_holds_out_whole_templates(self):
        spec = small_spec(
            n_templates=10, test_fraction=0.3, cluster_disjoint_split=True
        )
        bundle = generate_corpus(spec)
        held = [info for info in bundle.templates if info.test_prompts]
        assert len(held) == 3
        for info in held:
            assert info.train_prompts == []
        test_topics = {
            tok
            for p, _ in bundle.test_pairs
            for tok in p
            if tok.startswith("topic")
        }
        train_topics = {
            tok
            for p, _ in bundle.train_pairs
            for tok in p
            if tok.startswith("topic")
        }
        assert test_topics.isdisjoint(train_topics)

    def test_validation(self):
        with pytest.raises(ValueError):
            small_spec(test_fraction=1.0)
        with pytest.raises(ValueError):
            small_spec(responses_per_cluster=1)
        with pytest.raises(ValueError):
            small_spec(generic_attach_prob=-0.1)


class TestWriting:
    def test_file_layout(self, tmp_path):
        bundle = generate_corpus(small_spec(test_fraction=0.2))
        paths = write_corpus(bundle, tmp_path / "corpus")
        for key in ("train", "test", "train_labels", "test_labels"):
            assert paths[key].exists(), key
        train_lines = paths["train"].read_text(encoding="utf-8").splitlines()
        assert len(train_lines) == len(bundle.train_pairs)
        prompt, response = train_lines[0].split("\t")
        assert prompt and response

    def test_label_file_indexes_lines(self, tmp_path):
        bundle = generate_corpus(small_spec())
        paths = write_corpus(bundle, tmp_path / "corpus")
        lines = paths["train_labels"].read_text(encoding="utf-8").splitlines()
        assert len(lines) == len(bundle.train_labels)
        for i, line in enumerate(lines):
            idx, label = line.split("\t")
            assert int(idx) == i
            assert label == bundle.train_labels[i]

    def test_roundtrip_through_loader(self, tmp_path):
        from latentdialog.data import load_pairs

        bundle = generate_corpus(small_spec())
        paths = write_corpus(bundle, tmp_path / "corpus")
        loaded = load_pairs(paths["train"])
        assert loaded.skipped == 0
        assert len(loaded.pairs) == len(bundle.train_pairs)
        assert loaded.pairs[0].prompt == bundle.train_pairs[0][0]
