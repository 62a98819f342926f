"""Synthetic template corpora with known cluster structure.

Each template owns a small set of prompt paraphrases (shared topic tokens,
permuted fillers) and a cluster of responses; every paraphrase pairs with
every cluster response, so one prompt has many valid replies. Generic
responses are additionally attached to prompts across templates with a
fixed probability. Cluster labels ride in a sidecar file and are never
shown to the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROMPT_FILLERS = (
    "please tell me about now today again really just well so oh hey say um "
    "maybe then also quite very"
).split()

RESPONSE_FILLERS = (
    "sure okay right indeed clearly honestly certainly truly frankly naturally "
    "definitely surely obviously perhaps probably actually basically generally "
    "usually often"
).split()

DEFAULT_GENERICS = (
    "i do not know",
    "yes",
    "oh okay",
    "that is nice",
)

# prompt surface patterns: f = filler, a/b = the template's topic tokens
_PROMPT_PATTERNS = ("f a f b", "a f b", "f a b f", "a b f")


@dataclass
class TemplateSpec:
    n_templates: int = 20
    paraphrases_per_prompt: int = 12
    responses_per_cluster: int = 8
    generic_responses: tuple[str, ...] = DEFAULT_GENERICS
    generic_attach_prob: float = 0.5
    vocab_size: int = 300
    rng_seed: int = 0
    test_fraction: float = 0.0
    cluster_disjoint_split: bool = False

    def __post_init__(self):
        if self.n_templates < 1:
            raise ValueError("n_templates must be >= 1")
        if self.paraphrases_per_prompt < 1:
            raise ValueError("paraphrases_per_prompt must be >= 1")
        if self.responses_per_cluster < 2:
            raise ValueError("a response cluster needs at least 2 members")
        if not 0.0 <= self.generic_attach_prob <= 1.0:
            raise ValueError("generic_attach_prob must be in [0, 1]")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in [0, 1)")


@dataclass
class TemplateInfo:
    template_id: int
    train_prompts: list[str]
    test_prompts: list[str]
    responses: list[str]


@dataclass
class CorpusBundle:
    train_pairs: list[tuple[list[str], list[str]]]
    test_pairs: list[tuple[list[str], list[str]]]
    train_labels: list[str]
    test_labels: list[str]
    templates: list[TemplateInfo]
    generic_surfaces: list[str]
    word_count: int = field(default=0)


def _corpus_words(spec: TemplateSpec) -> set[str]:
    words = set(PROMPT_FILLERS) | set(RESPONSE_FILLERS)
    for t in range(spec.n_templates):
        words |= {f"topic{t}a", f"topic{t}b", f"item{t}"}
    for j in range(spec.responses_per_cluster):
        words.add(f"style{j}")
    for g in spec.generic_responses:
        words |= set(g.split())
    return words


def _make_paraphrases(rng: np.random.Generator, t: int, n: int) -> list[str]:
    a, b = f"topic{t}a", f"topic{t}b"
    seen: set[str] = set()
    out: list[str] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 200 * n:
            raise ValueError(
                "cannot produce enough distinct paraphrases; "
                "reduce paraphrases_per_prompt"
            )
        pattern = _PROMPT_PATTERNS[rng.integers(len(_PROMPT_PATTERNS))]
        toks = []
        for sym in pattern.split():
            if sym == "f":
                toks.append(PROMPT_FILLERS[rng.integers(len(PROMPT_FILLERS))])
            else:
                toks.append(a if sym == "a" else b)
        surface = " ".join(toks)
        if surface not in seen:
            seen.add(surface)
            out.append(surface)
    return out


def _make_responses(rng: np.random.Generator, t: int, n: int) -> list[str]:
    out = []
    for j in range(n):
        filler = RESPONSE_FILLERS[rng.integers(len(RESPONSE_FILLERS))]
        out.append(f"{filler} item{t} style{j}")
    return out


def generate_corpus(spec: TemplateSpec) -> CorpusBundle:
    """Deterministic corpus build; all randomness flows from spec.rng_seed."""
    words = _corpus_words(spec)
    if len(words) + 4 > spec.vocab_size:
        raise ValueError(
            f"spec implies {len(words) + 4} vocabulary entries, "
            f"over the budget of {spec.vocab_size}"
        )
    rng = np.random.default_rng(spec.rng_seed)

    if spec.cluster_disjoint_split:
        n_test_templates = int(spec.n_templates * spec.test_fraction)
        test_templates = set(
            rng.choice(spec.n_templates, size=n_test_templates, replace=False).tolist()
        )
    else:
        test_templates = set()

    train_pairs: list[tuple[list[str], list[str]]] = []
    test_pairs: list[tuple[list[str], list[str]]] = []
    train_labels: list[str] = []
    test_labels: list[str] = []
    templates: list[TemplateInfo] = []
    generics = [g.split() for g in spec.generic_responses]

    for t in range(spec.n_templates):
        prompts = _make_paraphrases(rng, t, spec.paraphrases_per_prompt)
        responses = _make_responses(rng, t, spec.responses_per_cluster)
        if t in test_templates:
            held = list(range(len(prompts)))
        elif spec.cluster_disjoint_split:
            held = []
        else:
            n_held = int(len(prompts) * spec.test_fraction)
            held = rng.choice(len(prompts), size=n_held, replace=False).tolist()
        held_set = set(held)

        info = TemplateInfo(
            template_id=t,
            train_prompts=[p for i, p in enumerate(prompts) if i not in held_set],
            test_prompts=[p for i, p in enumerate(prompts) if i in held_set],
            responses=list(responses),
        )
        templates.append(info)

        for i, prompt in enumerate(prompts):
            dest_pairs = test_pairs if i in held_set else train_pairs
            dest_labels = test_labels if i in held_set else train_labels
            p_toks = prompt.split()
            for resp in responses:
                dest_pairs.append((p_toks, resp.split()))
                dest_labels.append(str(t))
            if generics and rng.random() < spec.generic_attach_prob:
                g = generics[rng.integers(len(generics))]
                dest_pairs.append((p_toks, list(g)))
                dest_labels.append("generic")

    return CorpusBundle(
        train_pairs=train_pairs,
        test_pairs=test_pairs,
        train_labels=train_labels,
        test_labels=test_labels,
        templates=templates,
        generic_surfaces=[" ".join(g) for g in generics],
        word_count=len(words),
    )


def write_pairs(
    pairs: list[tuple[list[str], list[str]]], path: str | Path
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for prompt, response in pairs:
            fh.write(f"{' '.join(prompt)}\t{' '.join(response)}\n")


def write_labels(labels: list[str], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i, label in enumerate(labels):
            fh.write(f"{i}\t{label}\n")


def write_corpus(bundle: CorpusBundle, out_dir: str | Path) -> dict[str, Path]:
    """Emit train/test pair files plus the label sidecars; returns the paths."""
    out = Path(out_dir)
    paths = {
        "train": out / "train.tsv",
        "test": out / "test.tsv",
        "train_labels": out / "train.labels.tsv",
        "test_labels": out / "test.labels.tsv",
    }
    write_pairs(bundle.train_pairs, paths["train"])
    write_pairs(bundle.test_pairs, paths["test"])
    write_labels(bundle.train_labels, paths["train_labels"])
    write_labels(bundle.test_labels, paths["test_labels"])
    return paths
