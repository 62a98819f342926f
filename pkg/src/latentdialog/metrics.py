"""Automatic evaluation: BLEU-1/2, embedding-average cosine, distinct-n,
and aggregation of human annotation files into the UI score.

distinct-n divides by total words (not total n-grams), and the UI score is
the per-response product of mean informativeness and mean relevance,
averaged afterwards; both definitions matter when comparing numbers.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BLEU_EPSILON = 1e-9  # floor on zero n-gram matches, avoids log(0)


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(hypotheses: list[list], references: list[list], n: int) -> float:
    """Corpus BLEU restricted to orders 1..n, single reference per line.

    Modified (clipped) precision per order, geometric mean, brevity
    penalty from corpus-level lengths.
    """
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not hypotheses:
        raise ValueError("empty corpus")
    log_precisions = []
    for order in range(1, n + 1):
        matches = 0
        total = 0
        for hyp, ref in zip(hypotheses, references):
            hyp_counts = _ngrams(hyp, order)
            ref_counts = _ngrams(ref, order)
            matches += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )
            total += sum(hyp_counts.values())
        precision = matches / total if total > 0 else BLEU_EPSILON
        log_precisions.append(math.log(max(precision, BLEU_EPSILON)))
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(sum(log_precisions) / n)


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Plain-text table: "token v1 ... vd" per line."""
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(f"{path}:{lineno}: dimension {vec.size} != {dim}")
            table[parts[0]] = vec
    if not table:
        raise ValueError(f"no embeddings found in {path}")
    return table


def _mean_vector(tokens, table: dict[str, np.ndarray]):
    vectors = [table[t] for t in tokens if t in table]
    if not vectors:
        return None  # every token out of vocabulary
    return np.mean(vectors, axis=0)


def embedding_avg_similarity(hyp, ref, table: dict[str, np.ndarray]):
    """Cosine between mean word vectors; None when a side is fully OOV."""
    hyp_mean = _mean_vector(hyp, table)
    ref_mean = _mean_vector(ref, table)
    if hyp_mean is None or ref_mean is None:
        return None
    denom = np.linalg.norm(hyp_mean) * np.linalg.norm(ref_mean)
    if denom == 0.0:
        return 0.0
    return float(hyp_mean @ ref_mean / denom)


def corpus_embedding_similarity(
    hypotheses: list[list], references: list[list], table: dict[str, np.ndarray]
) -> tuple[float, int]:
    """Mean pair similarity plus the count of skipped (fully-OOV) pairs."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    scores = []
    skipped = 0
    for hyp, ref in zip(hypotheses, references):
        score = embedding_avg_similarity(hyp, ref, table)
        if score is None:
            skipped += 1
        else:
            scores.append(score)
    return (float(np.mean(scores)) if scores else 0.0), skipped


def distinct_n(responses: list[list], n: int) -> float:
    """Distinct n-grams across all responses / total words in all responses."""
    if not responses:
        raise ValueError("empty response set")
    distinct = set()
    total_words = 0
    for resp in responses:
        total_words += len(resp)
        distinct.update(tuple(resp[i : i + n]) for i in range(len(resp) - n + 1))
    if total_words == 0:
        return 0.0
    return len(distinct) / total_words


@dataclass
class AnnotationRecord:
    response_id: str
    annotator_id: str
    informativeness: int
    relevance: int

    def __post_init__(self):
        if not 0 <= self.informativeness <= 3:
            raise ValueError("informativeness must be in [0, 3]")
        if not 0 <= self.relevance <= 3:
            raise ValueError("relevance must be in [0, 3]")


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    """TSV: response_id, annotator_id, informativeness, relevance."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            records.append(
                AnnotationRecord(parts[0], parts[1], int(parts[2]), int(parts[3]))
            )
    return records


def ui_score(annotations: list[AnnotationRecord]) -> float:
    """Per response: mean informativeness times mean relevance; then the
    corpus mean of those products (not the product of corpus means)."""
    if not annotations:
        raise ValueError("no annotations given")
    by_response: dict[str, list[AnnotationRecord]] = {}
    for record in annotations:
        by_response.setdefault(record.response_id, []).append(record)
    products = []
    for records in by_response.values():
        info = np.mean([r.informativeness for r in records])
        rel = np.mean([r.relevance for r in records])
        products.append(info * rel)
    return float(np.mean(products))


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    sim: float
    dist1: float
    dist2: float
    n_responses: int
    n_tokens: int
    sim_skipped: int = 0

    def as_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "sim": self.sim,
            "dist1": self.dist1,
            "dist2": self.dist2,
            "n_responses": self.n_responses,
            "n_tokens": self.n_tokens,
            "sim_skipped": self.sim_skipped,
        }

    def table(self) -> str:
        header = f"{'Bleu-1':>8} {'Bleu-2':>8} {'Sim':>8} {'Dist-1':>8} {'Dist-2':>8}"
        row = (
            f"{self.bleu1:>8.3f} {self.bleu2:>8.3f} {self.sim:>8.3f} "
            f"{self.dist1:>8.3f} {self.dist2:>8.3f}"
        )
        return header + "\n" + row


def _read_token_lines(path: str | Path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip().split() for line in fh if line.strip() != ""]


def evaluate_files(
    hyp_path: str | Path,
    ref_path: str | Path,
    embedding_path: str | Path | None = None,
) -> EvalReport:
    """Line-aligned hypothesis/reference files -> EvalReport."""
    hyps = _read_token_lines(hyp_path)
    refs = _read_token_lines(ref_path)
    if len(hyps) != len(refs):
        raise ValueError(
            f"line counts differ: {len(hyps)} hypotheses vs {len(refs)} references"
        )
    sim, skipped = float("nan"), 0
    if embedding_path is not None:
        sim, skipped = corpus_embedding_similarity(
            hyps, refs, load_embeddings(embedding_path)
        )
    return EvalReport(
        bleu1=bleu_n(hyps, refs, 1),
        bleu2=bleu_n(hyps, refs, 2),
        sim=sim,
        dist1=distinct_n(hyps, 1),
        dist2=distinct_n(hyps, 2),
        n_responses=len(hyps),
        n_tokens=sum(len(h) for h in hyps),
        sim_skipped=skipped,
    )
