"""Dialogue generation as regression on a correlation-constrained latent space.

The package trains a prompt encoder and a response autoencoder whose latent
spaces are tied together by a penalty-based correlation loss, so that response
generation becomes: encode the prompt, treat its vector as the response
vector, and decode. Includes a cross-entropy seq2seq baseline, beam/nucleus
decoding, dialogue evaluation metrics, and latent-space inspection tools.
"""

__version__ = "0.1.0"

from latentdialog.data import (
    Vocabulary,
    TokenizedPair,
    Batch,
    DenoisingConfig,
    load_pairs,
    build_vocab,
    dedup_filter,
    make_batches,
    apply_denoising,
)
from latentdialog.losses import (
    LossConfig,
    LossBreakdown,
    UncorrelatedPosterior,
    cca_loss,
    kl_loss,
    reconstruction_loss,
    total_loss,
)
from latentdialog.model import (
    ModelConfig,
    LatentSeq2Seq,
    save_checkpoint,
    load_checkpoint,
)
from latentdialog.baseline import BaselineConfig, BaselineSeq2Seq
from latentdialog.training import TrainConfig, train, train_baseline, train_step
from latentdialog.inference import (
    GenerationOptions,
    Hypothesis,
    beam_search,
    nucleus_sample_step,
    generate,
)
from latentdialog.metrics import (
    EvalReport,
    bleu_n,
    distinct_n,
    embedding_avg_similarity,
    ui_score,
)
from latentdialog.config import RunConfig, derive_seed, resolve_config

__all__ = [
    "Vocabulary",
    "TokenizedPair",
    "Batch",
    "DenoisingConfig",
    "load_pairs",
    "build_vocab",
    "dedup_filter",
    "make_batches",
    "apply_denoising",
    "LossConfig",
    "LossBreakdown",
    "UncorrelatedPosterior",
    "cca_loss",
    "kl_loss",
    "reconstruction_loss",
    "total_loss",
    "ModelConfig",
    "LatentSeq2Seq",
    "save_checkpoint",
    "load_checkpoint",
    "BaselineConfig",
    "BaselineSeq2Seq",
    "TrainConfig",
    "train",
    "train_baseline",
    "train_step",
    "GenerationOptions",
    "Hypothesis",
    "beam_search",
    "nucleus_sample_step",
    "generate",
    "EvalReport",
    "bleu_n",
    "distinct_n",
    "embedding_avg_similarity",
    "ui_score",
    "RunConfig",
    "derive_seed",
    "resolve_config",
]
