"""Corpus loading, vocabulary, deduplication, batching and denoising masks.

Dataset file format: UTF-8, one pair per line, a single TAB between prompt and
response, tokens separated by spaces (the corpus is assumed pre-tokenized and
lowercased). Vocabulary file format: one token per line, line number = id,
first four lines are the reserved tokens.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")
SPECIAL_IDS = frozenset((PAD_ID, UNK_ID, BOS_ID, EOS_ID))
# ids that the denoising mask must never touch (unk replacements stay unk)
PROTECTED_IDS = frozenset((PAD_ID, BOS_ID, EOS_ID))


class Vocabulary:
    """Bijective token <-> id mapping with four reserved leading entries."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ValueError(
                f"first four tokens must be {RESERVED_TOKENS}, got {tokens[:4]}"
            )
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self._tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @property
    def size(self) -> int:
        return len(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def token_to_id(self, token: str) -> int:
        """Look up a surface string; out-of-vocabulary maps to the unk id."""
        return self._ids.get(token, UNK_ID)

    def id_to_token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._tokens[i] for i in ids]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


@dataclass
class RawPair:
    """A (prompt, response) pair as surface token lists, pre-vocabulary."""

    prompt: list[str]
    response: list[str]


@dataclass
class TokenizedPair:
    """A (prompt, response) pair as id sequences; response ends with eos."""

    prompt: list[int]
    response: list[int]

    def __post_init__(self):
        if not self.prompt or not self.response:
            raise ValueError("prompt and response must be non-empty")
        if self.response[-1] != EOS_ID:
            raise ValueError("response must be terminated by eos")
        if PAD_ID in self.prompt or PAD_ID in self.response:
            raise ValueError("pad id may not appear inside a sequence")


@dataclass
class LoadedPairs:
    """Result of parsing a dataset file: pairs plus a malformed-line count."""

    pairs: list
    skipped: int = 0


def load_pairs(path: str | Path, vocab: Vocabulary | None = None) -> LoadedPairs:
    """Parse a TAB-separated pair file.

    With a vocabulary, returns TokenizedPair objects (OOV -> unk, eos appended
    to the response). Without one, returns RawPair objects for vocabulary
    construction. Malformed lines (no TAB, empty side) are skipped and counted;
    an unreadable file raises.
    """
    path = Path(path)
    pairs: list = []
    skipped = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                skipped += 1
                logger.debug("skipping malformed line %d (no single TAB)", lineno)
                continue
            prompt_toks = parts[0].split()
            response_toks = parts[1].split()
            if not prompt_toks or not response_toks:
                skipped += 1
                logger.debug("skipping line %d (empty side)", lineno)
                continue
            if vocab is None:
                pairs.append(RawPair(prompt_toks, response_toks))
            else:
                pairs.append(
                    TokenizedPair(
                        prompt=vocab.encode(prompt_toks),
                        response=vocab.encode(response_toks) + [EOS_ID],
                    )
                )
    if skipped:
        logger.info("load_pairs: skipped %d malformed lines in %s", skipped, path)
    return LoadedPairs(pairs=pairs, skipped=skipped)


def build_vocab(raw_pairs: Sequence[RawPair], min_freq: int = 2) -> Vocabulary:
    """Build a vocabulary from raw pairs.

    Tokens with corpus frequency >= min_freq follow the four reserved tokens,
    ordered by descending frequency with lexicographic tie-break. Surface
    forms colliding with a reserved token are dropped (they would break the
    token<->id bijection).
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if not raw_pairs:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    for pair in raw_pairs:
        counts.update(pair.prompt)
        counts.update(pair.response)
    kept = [
        tok
        for tok, freq in counts.items()
        if freq >= min_freq and tok not in RESERVED_TOKENS
    ]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocabulary(list(RESERVED_TOKENS) + kept)


def _pair_key(pair) -> tuple:
    return (tuple(pair.prompt), tuple(pair.response))


def dedup_filter(train: Sequence, eval_pairs: Sequence) -> list:
    """Drop eval pairs whose (prompt, response) exactly matches a train pair.

    Order of surviving eval pairs is preserved. Idempotent.
    """
    train_keys = {_pair_key(p) for p in train}
    return [p for p in eval_pairs if _pair_key(p) not in train_keys]


@dataclass
class DenoisingConfig:
    """Random unk-replacement of input tokens, per token, independently."""

    replace_prob: float = 0.15
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.replace_prob <= 1.0:
            raise ValueError(f"replace_prob must be in [0,1], got {self.replace_prob}")


def apply_denoising(tokens: Sequence[int], cfg: DenoisingConfig) -> list[int]:
    """Replace each non-special token by unk with probability replace_prob.

    pad/bos/eos positions are never touched; length is unchanged.
    """
    if len(tokens) == 0:
        raise ValueError("tokens must be non-empty")
    rng = np.random.default_rng(cfg.rng_seed)
    draws = rng.random(len(tokens))
    return [
        UNK_ID if (t not in PROTECTED_IDS and d < cfg.replace_prob) else t
        for t, d in zip(tokens, draws)
    ]


def _noise_matrix(mat: np.ndarray, replace_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized denoising over a padded id matrix (same contract as
    apply_denoising, one rng stream for the whole batch)."""
    if replace_prob <= 0.0:
        return mat.copy()
    draws = rng.random(mat.shape)
    protected = (mat == PAD_ID) | (mat == BOS_ID) | (mat == EOS_ID)
    noised = mat.copy()
    noised[(draws < replace_prob) & ~protected] = UNK_ID
    return noised


@dataclass
class Batch:
    """One padded training batch.

    noised_responses feeds the response encoder; responses are the clean
    teacher-forcing targets. Padding uses pad=0 up to the per-batch max length.
    """

    prompts: np.ndarray          # [m, T_x] int64
    responses: np.ndarray        # [m, T_y] int64, each row eos-terminated
    noised_responses: np.ndarray  # [m, T_y] int64
    prompt_lengths: np.ndarray   # [m] int64
    response_lengths: np.ndarray  # [m] int64
    m: int = field(init=False)

    def __post_init__(self):
        self.m = int(self.prompts.shape[0])


def _pad_matrix(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = int(lengths.max())
    mat = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        mat[i, : len(s)] = s
    return mat, lengths


def make_batches(
    pairs: Sequence[TokenizedPair],
    batch_size: int,
    rng_seed: int,
    denoise: DenoisingConfig | None = None,
    drop_last: bool = False,
) -> list[Batch]:
    """Shuffle pairs with a seeded RNG and cut into consecutive padded batches.

    Deterministic given (pairs, batch_size, rng_seed, denoise). The final
    short batch is kept unless drop_last is set; batch statistics computed on
    it are noisier. batch_size must be >= 2 because the correlation loss is
    undefined for a single example.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2 (batch statistics need m >= 2)")
    if not pairs:
        return []
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(pairs))
    batches: list[Batch] = []
    replace_prob = denoise.replace_prob if denoise is not None else 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if drop_last and len(idx) < batch_size:
            break
        chunk = [pairs[i] for i in idx]
        prompts, plens = _pad_matrix([p.prompt for p in chunk])
        responses, rlens = _pad_matrix([p.response for p in chunk])
        noised = _noise_matrix(responses, replace_prob, rng)
        batches.append(
            Batch(
                prompts=prompts,
                responses=responses,
                noised_responses=noised,
                prompt_lengths=plens,
                response_lengths=rlens,
            )
        )
    return batches
