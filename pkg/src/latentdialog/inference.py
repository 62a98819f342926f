"""Decoding: beam search and nucleus sampling over a fixed latent.

The model's job at this point is regression into the latent space; the
decoder only has to surface the sentence that latent already describes.
Both decoding modes therefore run against a step closure built once per
prompt, and the same machinery serves the latent model and the baseline.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from latentdialog.config import derive_seed
from latentdialog.data import BOS_ID, EOS_ID, PAD_ID, Vocabulary

StepFn = Callable[[Optional[int], object], tuple[np.ndarray, object]]

MODES = ("beam", "nucleus")
R_POLICIES = ("zeros", "sample")


@dataclass
class GenerationOptions:
    mode: str = "beam"
    beam_width: int = 5
    length_norm_alpha: float = 0.7
    nucleus_p: float = 0.9
    max_length: int = 30
    r_policy: str = "zeros"
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.length_norm_alpha < 0:
            raise ValueError("length_norm_alpha must be >= 0")
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ValueError("nucleus_p must be in (0, 1]")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if self.r_policy not in R_POLICIES:
            raise ValueError(f"r_policy must be one of {R_POLICIES}")


@dataclass
class Hypothesis:
    tokens: list[int]          # generated ids, eos included when emitted
    logprob: float             # cumulative log-probability, non-increasing
    finished: bool = False
    truncated: bool = False    # hit max_length without emitting eos

    def surface(self) -> list[int]:
        return [t for t in self.tokens if t not in (PAD_ID, BOS_ID, EOS_ID)]

    def score(self, alpha: float) -> float:
        # normalized by surface length; alpha=0 recovers the raw log-prob
        return self.logprob / max(1, len(self.surface())) ** alpha


def _greedy_rollout(
    step_fn: StepFn, initial_state, max_length: int, eos_id: Optional[int]
) -> Hypothesis:
    tokens: list[int] = []
    logprob = 0.0
    state = initial_state
    prev: Optional[int] = None
    for _ in range(max_length):
        logprobs, state = step_fn(prev, state)
        tok = int(np.argmax(logprobs))
        tokens.append(tok)
        logprob += float(logprobs[tok])
        if eos_id is not None and tok == eos_id:
            return Hypothesis(tokens, logprob, finished=True)
        prev = tok
    return Hypothesis(tokens, logprob, finished=True, truncated=True)


def beam_search(
    step_fn: StepFn,
    initial_state,
    opts: GenerationOptions,
    eos_id: Optional[int] = EOS_ID,
) -> Hypothesis:
    """Best finished hypothesis under length-normalized log-probability.

    The finished pool is seeded with a full greedy rollout, so the result
    never scores below greedy. Pruning ties break by token id ascending.
    Hypotheses alive at max_length are force-finished and flagged.
    """
    finished: list[Hypothesis] = [
        _greedy_rollout(step_fn, initial_state, opts.max_length, eos_id)
    ]
    # live entries: (tokens, logprob, state, prev_token)
    beams: list[tuple[list[int], float, object, Optional[int]]] = [
        ([], 0.0, initial_state, None)
    ]
    for _ in range(opts.max_length):
        candidates: list[tuple[float, tuple[int, ...], object]] = []
        for tokens, logprob, state, prev in beams:
            logprobs, new_state = step_fn(prev, state)
            for tok in range(len(logprobs)):
                cand_logprob = logprob + float(logprobs[tok])
                cand_tokens = tokens + [tok]
                if eos_id is not None and tok == eos_id:
                    finished.append(
                        Hypothesis(cand_tokens, cand_logprob, finished=True)
                    )
                else:
                    candidates.append(
                        (cand_logprob, tuple(cand_tokens), new_state)
                    )
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = [
            (list(toks), lp, st, toks[-1])
            for lp, toks, st in candidates[: opts.beam_width]
        ]
    for tokens, logprob, _, _ in beams:
        finished.append(Hypothesis(tokens, logprob, finished=True, truncated=True))
    finished.sort(key=lambda h: (-h.score(opts.length_norm_alpha), tuple(h.tokens)))
    return finished[0]


def nucleus_sample_step(
    logits: np.ndarray, p: float, rng: np.random.Generator
) -> int:
    """Sample from the smallest probability-sorted prefix with mass >= p."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must be in (0, 1]")
    logits = np.asarray(logits, dtype=np.float64)
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")  # ties keep ascending token id
    cumulative = np.cumsum(probs[order])
    cutoff = int(np.searchsorted(cumulative, p - 1e-12, side="left")) + 1
    kept = order[:cutoff]
    weights = probs[kept] / probs[kept].sum()
    return int(rng.choice(kept, p=weights))


def _nucleus_rollout(
    step_fn: StepFn,
    initial_state,
    opts: GenerationOptions,
    rng: np.random.Generator,
    eos_id: Optional[int] = EOS_ID,
) -> Hypothesis:
    tokens: list[int] = []
    logprob = 0.0
    state = initial_state
    prev: Optional[int] = None
    for _ in range(opts.max_length):
        logprobs, state = step_fn(prev, state)
        tok = nucleus_sample_step(logprobs, opts.nucleus_p, rng)
        tokens.append(tok)
        logprob += float(logprobs[tok])
        if eos_id is not None and tok == eos_id:
            return Hypothesis(tokens, logprob, finished=True)
        prev = tok
    return Hypothesis(tokens, logprob, finished=True, truncated=True)


@dataclass
class GenerationResult:
    tokens: list[int]      # surface ids: no pad, bos, or eos
    text: str
    logprob: float
    score: float           # length-normalized
    truncated: bool


def generate(
    model,
    vocab: Vocabulary,
    prompt: list[int],
    opts: GenerationOptions,
) -> GenerationResult:
    """Decode one response for a tokenized prompt."""
    if len(prompt) == 0:
        raise ValueError("prompt must contain at least one token")
    prompts = torch.tensor([prompt], dtype=torch.long)
    lengths = torch.tensor([len(prompt)], dtype=torch.long)
    latent_gen = torch.Generator().manual_seed(derive_seed(opts.rng_seed, "latent"))
    step_fn, state = model.generation_context(
        prompts, lengths, r_policy=opts.r_policy, generator=latent_gen
    )
    if opts.mode == "beam":
        hyp = beam_search(step_fn, state, opts)
    else:
        rng = np.random.default_rng(derive_seed(opts.rng_seed, "nucleus"))
        hyp = _nucleus_rollout(step_fn, state, opts, rng)
    surface = hyp.surface()
    return GenerationResult(
        tokens=surface,
        text=" ".join(vocab.decode(surface)),
        logprob=hyp.logprob,
        score=hyp.score(opts.length_norm_alpha),
        truncated=hyp.truncated,
    )


def batch_generate(
    model,
    vocab: Vocabulary,
    prompts_path: str | Path,
    out_path: str | Path,
    opts: GenerationOptions,
) -> int:
    """One prompt per input line -> "prompt<TAB>response<TAB>score" lines.

    Each line gets its own derived seed so sampling differs across prompts
    but the whole file is reproducible.
    """
    prompts_path = Path(prompts_path)
    lines = prompts_path.read_text(encoding="utf-8").splitlines()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")
    written = 0
    with open(tmp_path, "w", encoding="utf-8") as out:
        for i, line in enumerate(lines):
            text = line.strip()
            if not text:
                raise ValueError(f"{prompts_path}:{i + 1}: empty prompt line")
            line_opts = replace(opts, rng_seed=derive_seed(opts.rng_seed, "line", i))
            result = generate(model, vocab, vocab.encode(text.split()), line_opts)
            out.write(f"{text}\t{result.text}\t{result.score:.6f}\n")
            written += 1
    tmp_path.replace(out_path)  # the output file appears only when complete
    return written


def _apply_repl_option(opts: GenerationOptions, assignment: str) -> GenerationOptions:
    if "=" not in assignment:
        raise ValueError(f"expected key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    key = key.strip()
    if key not in GenerationOptions.__dataclass_fields__:
        raise ValueError(f"unknown option {key!r}")
    current = getattr(opts, key)
    if isinstance(current, int) and not isinstance(current, bool):
        value: object = int(raw)
    elif isinstance(current, float):
        value = float(raw)
    else:
        value = raw.strip()
    return replace(opts, **{key: value})


def chat_repl(
    model,
    vocab: Vocabulary,
    opts: GenerationOptions,
    input_stream=None,
    output_stream=None,
) -> int:
    """Line-oriented chat loop; ":"-prefixed lines are commands."""
    stdin = input_stream if input_stream is not None else sys.stdin
    stdout = output_stream if output_stream is not None else sys.stdout
    turn = 0
    while True:
        stdout.write("> ")
        stdout.flush()
        line = stdin.readline()
        if not line:  # end of input
            stdout.write("\n")
            return 0
        text = line.strip()
        if not text:
            continue
        if text.startswith(":"):
            command, _, rest = text[1:].partition(" ")
            if command == "quit":
                return 0
            if command == "opts":
                try:
                    for assignment in rest.split():
                        opts = _apply_repl_option(opts, assignment)
                except ValueError as err:
                    stdout.write(f"error: {err}\n")
                    continue
                stdout.write(
                    " ".join(
                        f"{k}={getattr(opts, k)}"
                        for k in GenerationOptions.__dataclass_fields__
                    )
                    + "\n"
                )
                continue
            stdout.write(f"error: unknown command :{command}\n")
            continue
        turn_opts = replace(opts, rng_seed=derive_seed(opts.rng_seed, "turn", turn))
        turn += 1
        started = time.monotonic()
        try:
            result = generate(model, vocab, vocab.encode(text.split()), turn_opts)
        except Exception as err:  # keep the session alive on a bad turn
            stdout.write(f"error: {err}\n")
            continue
        elapsed = time.monotonic() - started
        flag = " [truncated]" if result.truncated else ""
        stdout.write(
            f"{result.text}{flag}  (score {result.score:.4f}, {elapsed:.2f}s)\n"
        )
