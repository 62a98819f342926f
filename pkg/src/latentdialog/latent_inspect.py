"""Latent-space inspection: export vectors, query neighbors, and measure
whether the trained geometry matches the training story.

Prompts go through the prompt encoder, responses through the correlated
head of the response encoder, so the same surface string can legitimately
appear twice with different vectors. Distances default to euclidean since
that is what the matching term of the correlation loss minimizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from latentdialog.data import EOS_ID, PAD_ID, Vocabulary

ROLES = ("prompt", "response")


@dataclass
class LatentRecord:
    id: str
    role: str
    text: str
    vector: np.ndarray

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")


def _encode_texts(
    model,
    vocab: Vocabulary,
    texts: Sequence[str],
    role: str,
    batch_size: int = 64,
) -> np.ndarray:
    """Correlated vectors for non-empty texts, one row per text, float64."""
    model.eval()
    rows: list[np.ndarray] = []
    for start in range(0, len(texts), batch_size):
        chunk = texts[start : start + batch_size]
        token_lists = [vocab.encode(t.split()) for t in chunk]
        if role == "response":
            token_lists = [ids + [EOS_ID] for ids in token_lists]
        width = max(len(ids) for ids in token_lists)
        mat = torch.full((len(token_lists), width), PAD_ID, dtype=torch.long)
        for i, ids in enumerate(token_lists):
            mat[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        lengths = torch.tensor([len(ids) for ids in token_lists], dtype=torch.long)
        with torch.no_grad():
            if role == "prompt":
                vecs = model.encode_prompt(mat, lengths)
            else:
                vecs, _, _ = model.encode_response(mat, lengths, sample=False)
        rows.append(vecs.double().numpy())
    if not rows:
        return np.zeros((0, model.config.k_correlated), dtype=np.float64)
    return np.vstack(rows)


def encode_sentences(
    model, vocab: Vocabulary, sentences: Sequence[tuple[str, str]]
) -> tuple[list[LatentRecord], int]:
    """(text, role) pairs -> records; empty texts are skipped and counted."""
    kept: list[tuple[int, str, str]] = []
    skipped = 0
    for i, (text, role) in enumerate(sentences):
        if role not in ROLES:
            raise ValueError(f"sentence {i}: role must be one of {ROLES}")
        if not text.strip():
            skipped += 1
            continue
        kept.append((i, text.strip(), role))

    records: list[Optional[LatentRecord]] = [None] * len(kept)
    position = {idx: pos for pos, (idx, _, _) in enumerate(kept)}
    for role in ROLES:
        members = [(idx, text) for idx, text, r in kept if r == role]
        if not members:
            continue
        vectors = _encode_texts(model, vocab, [t for _, t in members], role)
        for (idx, text), vec in zip(members, vectors):
            records[position[idx]] = LatentRecord(
                id=str(idx), role=role, text=text, vector=vec
            )
    return [r for r in records if r is not None], skipped


def export_latents(
    model,
    vocab: Vocabulary,
    sentences: Sequence[tuple[str, str]],
    out_path: str | Path,
) -> tuple[int, int]:
    """Write "id<TAB>role<TAB>text<TAB>v1..." rows; returns (written, skipped)."""
    records, skipped = encode_sentences(model, vocab, sentences)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in records:
            values = "\t".join(f"{v:.17g}" for v in rec.vector)
            fh.write(f"{rec.id}\t{rec.role}\t{rec.text}\t{values}\n")
    return len(records), skipped


def read_latents(path: str | Path) -> list[LatentRecord]:
    records = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 4:
                raise ValueError(f"{path}:{lineno}: expected at least 4 fields")
            vector = np.array([float(v) for v in parts[3:]], dtype=np.float64)
            if dim is None:
                dim = vector.size
            elif vector.size != dim:
                raise ValueError(f"{path}:{lineno}: vector dimension changed")
            records.append(
                LatentRecord(id=parts[0], role=parts[1], text=parts[2], vector=vector)
            )
    return records


def nearest_neighbors(
    query_id: str,
    records: Sequence[LatentRecord],
    k: int,
    metric: str = "euclidean",
) -> list[str]:
    """ids of the k nearest records, ascending distance, ties by id."""
    if metric not in ("euclidean", "cosine"):
        raise ValueError("metric must be euclidean or cosine")
    by_id = {rec.id: rec for rec in records}
    if query_id not in by_id:
        raise KeyError(f"unknown record id {query_id!r}")
    if not 1 <= k <= len(records) - 1:
        raise ValueError(f"k must be in [1, {len(records) - 1}]")
    query = by_id[query_id].vector.astype(np.float64)
    scored = []
    for rec in records:
        if rec.id == query_id:
            continue
        vec = rec.vector.astype(np.float64)
        if metric == "euclidean":
            dist = float(np.linalg.norm(query - vec))
        else:
            denom = np.linalg.norm(query) * np.linalg.norm(vec)
            dist = 1.0 - (float(query @ vec / denom) if denom > 0 else 0.0)
        scored.append((dist, rec.id))
    scored.sort()
    return [rec_id for _, rec_id in scored[:k]]


@dataclass
class PairingReport:
    matched_mean_dist: float
    mismatched_mean_dist: float
    matched_closer_rate: float
    median_gold_rank: float
    n_samples: int


def pairing_test(
    model,
    vocab: Vocabulary,
    pairs: Sequence[tuple[list[str], list[str]]],
    n_samples: int,
    seed: int = 0,
) -> PairingReport:
    """Is each prompt's vector closer to its own response than to a random one?

    Samples pairs with replacement; the gold rank is the response's
    strictly-closer count within the sampled set, plus one.
    """
    if n_samples == 0:
        return PairingReport(
            matched_mean_dist=float("nan"),
            mismatched_mean_dist=float("nan"),
            matched_closer_rate=float("nan"),
            median_gold_rank=float("nan"),
            n_samples=0,
        )
    if len(pairs) < 2:
        raise ValueError("pairing test needs at least 2 pairs")
    rng = np.random.default_rng(seed)
    idx = rng.integers(len(pairs), size=n_samples)
    prompts = [" ".join(pairs[i][0]) for i in idx]
    responses = [" ".join(pairs[i][1]) for i in idx]
    x = _encode_texts(model, vocab, prompts, "prompt")
    y = _encode_texts(model, vocab, responses, "response")

    # [n, n] all-pairs distances between sampled prompts and responses
    dists = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
    gold = np.diag(dists)
    offsets = rng.integers(1, n_samples, size=n_samples) if n_samples > 1 else None
    closer = []
    mismatched = []
    ranks = []
    for i in range(n_samples):
        j = (i + int(offsets[i])) % n_samples if offsets is not None else i
        mismatched.append(dists[i, j])
        closer.append(gold[i] < dists[i, j])
        ranks.append(1 + int(np.sum(dists[i] < gold[i])))
    return PairingReport(
        matched_mean_dist=float(np.mean(gold)),
        mismatched_mean_dist=float(np.mean(mismatched)),
        matched_closer_rate=float(np.mean(closer)),
        median_gold_rank=float(np.median(ranks)),
        n_samples=n_samples,
    )


@dataclass
class SeparationReport:
    fraction_separated: float
    n_templates: int
    separated: list[bool]


def template_separation(
    model,
    vocab: Vocabulary,
    prompts_by_template: Sequence[Sequence[str]],
    responses_by_template: Sequence[Sequence[str]],
    generic_responses: Sequence[str],
) -> SeparationReport:
    """Per template: is the prompt-to-own-cluster-centroid distance smaller
    than the prompt-to-generic distance, on average over its prompts?"""
    if len(prompts_by_template) != len(responses_by_template):
        raise ValueError("template prompt and response lists differ in length")
    if not generic_responses:
        raise ValueError("need at least one generic response")
    generic_y = _encode_texts(model, vocab, list(generic_responses), "response")
    separated = []
    for prompts, responses in zip(prompts_by_template, responses_by_template):
        x = _encode_texts(model, vocab, list(prompts), "prompt")
        y = _encode_texts(model, vocab, list(responses), "response")
        centroid = y.mean(axis=0)
        d_cluster = float(np.mean(np.linalg.norm(x - centroid[None, :], axis=1)))
        d_generic = float(
            np.mean(np.linalg.norm(x[:, None, :] - generic_y[None, :, :], axis=2))
        )
        separated.append(d_cluster < d_generic)
    return SeparationReport(
        fraction_separated=float(np.mean(separated)),
        n_templates=len(separated),
        separated=separated,
    )
