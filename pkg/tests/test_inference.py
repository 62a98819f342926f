"""Decoding tests: beam search against an exhaustive oracle, nucleus
sampling against closed-form selection probabilities, and the chat loop.

Beam search is exercised through synthetic step functions whose transition
table is keyed on the generated prefix, so every trial has a well-defined
brute-force optimum.
"""

import io
import itertools

import numpy as np
import pytest
import torch

from latentdialog.data import BOS_ID, EOS_ID, PAD_ID, RESERVED_TOKENS, Vocabulary
from latentdialog.inference import (
    GenerationOptions,
    Hypothesis,
    beam_search,
    batch_generate,
    chat_repl,
    generate,
    nucleus_sample_step,
)
from latentdialog.model import LatentSeq2Seq, ModelConfig


def random_step_fn(rng, vocab_size):
    """A random Markov process over prefixes with lazily drawn log-probs.

    The state is the prefix tuple; the same prefix always produces the same
    distribution, which makes exhaustive enumeration well-defined.
    """
    tables: dict = {}

    def step_fn(prev, state):
        prefix = state if prev is None else state + (prev,)
        if prefix not in tables:
            logits = rng.standard_normal(vocab_size) * 2.0
            tables[prefix] = logits - np.log(np.exp(logits).sum())
        return tables[prefix], prefix

    return step_fn


def brute_force_best(step_fn, length, vocab_size, alpha, eos_id=None):
    """Enumerate every sequence of exactly `length` tokens."""
    best = None
    for seq in itertools.product(range(vocab_size), repeat=length):
        state = ()
        prev = None
        logprob = 0.0
        ok = True
        for tok in seq:
            logprobs, state = step_fn(prev, state)
            logprob += float(logprobs[tok])
            if eos_id is not None and tok == eos_id:
                ok = False
                break
            prev = tok
        if not ok:
            continue
        hyp = Hypothesis(list(seq), logprob, finished=True)
        score = hyp.score(alpha)
        key = (-score, tuple(seq))
        if best is None or key < best[0]:
            best = (key, hyp)
    return best[1]


class TestBeamSearch:
    def test_exhaustive_oracle(self):
        """Width-64 beam equals brute force over all 4^3 sequences."""
        rng = np.random.default_rng(100)
        for trial in range(100):
            step_fn = random_step_fn(rng, 4)
            opts = GenerationOptions(beam_width=64, max_length=3, length_norm_alpha=0.7)
            result = beam_search(step_fn, (), opts, eos_id=None)
            expected = brute_force_best(step_fn, 3, 4, 0.7)
            assert result.tokens == expected.tokens, f"trial {trial}"
            assert result.logprob == pytest.approx(expected.logprob, rel=1e-12)

    def test_width_one_is_greedy(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            step_fn = random_step_fn(rng, 5)
            opts = GenerationOptions(beam_width=1, max_length=4, length_norm_alpha=0.0)
            result = beam_search(step_fn, (), opts, eos_id=None)
            state = ()
            prev = None
            greedy = []
            for _ in range(4):
                logprobs, state = step_fn(prev, state)
                prev = int(np.argmax(logprobs))
                greedy.append(prev)
            assert result.tokens == greedy

    def test_score_never_below_greedy(self):
        """Widening the beam can only improve the normalized score."""
        rng = np.random.default_rng(23)
        alpha = 0.7
        for trial in range(50):
            step_fn = random_step_fn(rng, 5)
            greedy = beam_search(
                step_fn, (), GenerationOptions(beam_width=1, max_length=5), eos_id=3
            )
            wide = beam_search(
                step_fn, (), GenerationOptions(beam_width=5, max_length=5), eos_id=3
            )
            assert wide.score(alpha) >= greedy.score(alpha) - 1e-12

    def test_single_certain_path(self):
        """A process with one probability-1 token per step returns it."""

        def step_fn(prev, state):
            logprobs = np.full(4, -1e9)
            tok = (len(state) * 2 + 1) % 4
            logprobs[tok] = 0.0
            return logprobs, state + (tok,)

        for width in (1, 2, 8):
            opts = GenerationOptions(beam_width=width, max_length=3)
            result = beam_search(step_fn, (), opts, eos_id=None)
            assert result.tokens == [1, 3, 1]
            assert result.logprob == pytest.approx(0.0, abs=1e-6)

    def test_eos_finishes_hypothesis(self):
        """eos is absorbing: tokens after the first eos never appear."""

        def step_fn(prev, state):
            logprobs = np.log(np.array([0.05, 0.05, 0.05, 0.85]))
            return logprobs, state

        opts = GenerationOptions(beam_width=3, max_length=6)
        result = beam_search(step_fn, (), opts, eos_id=3)
        assert result.tokens == [3]
        assert result.finished and not result.truncated

    def test_truncation_flagged(self):
        """With eos unreachable every candidate is cut at max_length."""

        def step_fn(prev, state):
            logprobs = np.log(np.array([0.5, 0.5, 1e-30, 1e-30]))
            return logprobs, state

        opts = GenerationOptions(beam_width=2, max_length=4)
        result = beam_search(step_fn, (), opts, eos_id=None)
        assert result.truncated
        assert len(result.tokens) == 4

    def test_alpha_zero_ranks_by_raw_logprob(self):
        hyp_a = Hypothesis([5, 6], -1.0, finished=True)
        hyp_b = Hypothesis([5, 6, 7, 8], -1.5, finished=True)
        assert hyp_a.score(0.0) == -1.0
        assert hyp_b.score(0.0) == -1.5
        # with alpha=1 the longer one wins on per-token average
        assert hyp_b.score(1.0) > hyp_a.score(1.0)

    def test_surface_strips_special_tokens(self):
        hyp = Hypothesis([BOS_ID, 5, PAD_ID, 6, EOS_ID], -2.0)
        assert hyp.surface() == [5, 6]

    def test_score_length_uses_surface(self):
        """Length normalization counts content tokens, not eos."""
        hyp = Hypothesis([5, 6, EOS_ID], -2.0, finished=True)
        assert hyp.score(1.0) == pytest.approx(-1.0)


class TestNucleusSampling:
    def test_selection_probabilities(self):
        """p=0.9 on probs (0.6, 0.3, 0.1) keeps {0, 1} renormalized 2:1."""
        logits = np.log(np.array([0.6, 0.3, 0.1]))
        rng = np.random.default_rng(0)
        n = 100_000
        counts = np.zeros(3)
        for _ in range(n):
            counts[nucleus_sample_step(logits, 0.9, rng)] += 1
        freq = counts / n
        np.testing.assert_allclose(freq, [2 / 3, 1 / 3, 0.0], atol=5e-3)

    def test_small_p_is_argmax(self):
        logits = np.log(np.array([0.6, 0.3, 0.1]))
        rng = np.random.default_rng(1)
        draws = {nucleus_sample_step(logits, 0.5, rng) for _ in range(200)}
        assert draws == {0}

    def test_full_mass_keeps_everything(self):
        logits = np.log(np.array([0.5, 0.3, 0.2]))
        rng = np.random.default_rng(2)
        n = 50_000
        counts = np.zeros(3)
        for _ in range(n):
            counts[nucleus_sample_step(logits, 1.0, rng)] += 1
        np.testing.assert_allclose(counts / n, [0.5, 0.3, 0.2], atol=6e-3)

    def test_boundary_mass_is_included(self):
        """A prefix hitting exactly p is enough; the next token is cut."""
        logits = np.log(np.array([0.5, 0.3, 0.2]))
        rng = np.random.default_rng(3)
        draws = {nucleus_sample_step(logits, 0.8, rng) for _ in range(500)}
        assert draws == {0, 1}

    def test_invalid_p_rejected(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError):
            nucleus_sample_step(np.zeros(3), 0.0, rng)
        with pytest.raises(ValueError):
            nucleus_sample_step(np.zeros(3), 1.5, rng)

    def test_determinism_given_seed(self):
        logits = np.log(np.array([0.4, 0.3, 0.2, 0.1]))
        a = [nucleus_sample_step(logits, 0.95, np.random.default_rng(9)) for _ in range(10)]
        b = [nucleus_sample_step(logits, 0.95, np.random.default_rng(9)) for _ in range(10)]
        assert a == b


class TestOptions:
    def test_validation(self):
        with pytest.raises(ValueError):
            GenerationOptions(mode="magic")
        with pytest.raises(ValueError):
            GenerationOptions(beam_width=0)
        with pytest.raises(ValueError):
            GenerationOptions(nucleus_p=0.0)
        with pytest.raises(ValueError):
            GenerationOptions(max_length=0)
        with pytest.raises(ValueError):
            GenerationOptions(r_policy="fixed")
        with pytest.raises(ValueError):
            GenerationOptions(length_norm_alpha=-0.1)


@pytest.fixture(scope="module")
def tiny_model_and_vocab():
    vocab = Vocabulary(list(RESERVED_TOKENS) + [f"w{i}" for i in range(8)])
    cfg = ModelConfig(
        vocab_size=len(vocab), k_correlated=6, k_uncorrelated=2, embedding_dim=5
    )
    return LatentSeq2Seq(cfg, init_seed=1), vocab


class TestGenerate:
    def test_empty_prompt_rejected(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        with pytest.raises(ValueError):
            generate(model, vocab, [], GenerationOptions())

    def test_beam_deterministic(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        opts = GenerationOptions(mode="beam", beam_width=3, max_length=6)
        a = generate(model, vocab, [4, 5], opts)
        b = generate(model, vocab, [4, 5], opts)
        assert a.tokens == b.tokens
        assert a.score == b.score

    def test_nucleus_seeded(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        opts = GenerationOptions(mode="nucleus", rng_seed=5, max_length=6)
        a = generate(model, vocab, [4, 5], opts)
        b = generate(model, vocab, [4, 5], opts)
        assert a.tokens == b.tokens

    def test_surface_has_no_special_ids(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        opts = GenerationOptions(mode="nucleus", rng_seed=1, max_length=8)
        result = generate(model, vocab, [4, 5, 6], opts)
        assert all(t not in (PAD_ID, BOS_ID, EOS_ID) for t in result.tokens)
        assert result.text == " ".join(vocab.decode(result.tokens))

    def test_max_length_respected(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        opts = GenerationOptions(mode="beam", beam_width=2, max_length=3)
        result = generate(model, vocab, [4], opts)
        assert len(result.tokens) <= 3

    def test_sample_policy_reproducible(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        opts = GenerationOptions(mode="beam", r_policy="sample", rng_seed=12)
        a = generate(model, vocab, [5, 6], opts)
        b = generate(model, vocab, [5, 6], opts)
        assert a.tokens == b.tokens


class TestBatchGenerate:
    def test_output_format(self, tiny_model_and_vocab, tmp_path):
        model, vocab = tiny_model_and_vocab
        prompts = tmp_path / "prompts.txt"
        prompts.write_text("w0 w1\nw2\nw3 w4 w0\n", encoding="utf-8")
        out = tmp_path / "out.tsv"
        n = batch_generate(
            model, vocab, prompts, out, GenerationOptions(max_length=5)
        )
        assert n == 3
        lines = out.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3
        for line in lines:
            prompt, response, score = line.split("\t")
            float(score)
        assert lines[0].split("\t")[0] == "w0 w1"

    def test_empty_prompt_line_fails_without_partial_output(
        self, tiny_model_and_vocab, tmp_path
    ):
        model, vocab = tiny_model_and_vocab
        prompts = tmp_path / "prompts.txt"
        prompts.write_text("w0\n\nw1\n", encoding="utf-8")
        out = tmp_path / "out.tsv"
        with pytest.raises(ValueError):
            batch_generate(model, vocab, prompts, out, GenerationOptions())
        assert not out.exists()

    def test_reproducible_file(self, tiny_model_and_vocab, tmp_path):
        model, vocab = tiny_model_and_vocab
        prompts = tmp_path / "prompts.txt"
        prompts.write_text("w0 w1\nw2\n", encoding="utf-8")
        opts = GenerationOptions(mode="nucleus", rng_seed=3, max_length=5)
        out_a = tmp_path / "a.tsv"
        out_b = tmp_path / "b.tsv"
        batch_generate(model, vocab, prompts, out_a, opts)
        batch_generate(model, vocab, prompts, out_b, opts)
        assert out_a.read_text() == out_b.read_text()


class TestChatRepl:
    def _run(self, model, vocab, script, opts=None):
        out = io.StringIO()
        code = chat_repl(
            model,
            vocab,
            opts or GenerationOptions(max_length=4),
            input_stream=io.StringIO(script),
            output_stream=out,
        )
        return code, out.getvalue()

    def test_quit_command(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        code, output = self._run(model, vocab, ":quit\n")
        assert code == 0

    def test_eof_exits_cleanly(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        code, _ = self._run(model, vocab, "")
        assert code == 0

    def test_turn_produces_scored_response(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        code, output = self._run(model, vocab, "w0 w1\n:quit\n")
        assert code == 0
        assert "score" in output

    def test_opts_command_echoes_settings(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        code, output = self._run(model, vocab, ":opts beam_width=7\n:quit\n")
        assert code == 0
        assert "beam_width=7" in output

    def test_bad_option_reports_error_and_continues(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        code, output = self._run(model, vocab, ":opts no_such=1\nw0\n:quit\n")
        assert code == 0
        assert "error:" in output
        assert "score" in output

    def test_unknown_command_reported(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        code, output = self._run(model, vocab, ":frobnicate\n:quit\n")
        assert code == 0
        assert "unknown command" in output

    def test_blank_lines_reprompt(self, tiny_model_and_vocab):
        model, vocab = tiny_model_and_vocab
        code, output = self._run(model, vocab, "\n\n:quit\n")
        assert code == 0
        assert output.count("> ") == 3
