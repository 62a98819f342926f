"""Recurrent encoders, latent channels, and the response decoder.

The prompt encoder and the response encoder map sentences to a shared
correlated space. The response side runs one recurrent trunk whose final
state splits into the correlated vector and the features feeding the
mean/log-variance heads of the uncorrelated channel. The decoder
reconstructs a response from the concatenated latent; an optional
attention path over prompt states is squeezed through a small bottleneck
so it cannot turn the model back into an end-to-end seq2seq.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from latentdialog.data import BOS_ID, PAD_ID, Vocabulary
from latentdialog.losses import UncorrelatedPosterior

INIT_RANGE = 0.08
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    k_correlated: int = 512
    k_uncorrelated: int = 10
    embedding_dim: int = 128
    encoder_layers: int = 1
    decoder_layers: int = 1
    attention_enabled: bool = False
    attention_bottleneck_dim: int = 10

    def __post_init__(self):
        if self.k_correlated < 1:
            raise ValueError("k_correlated must be >= 1")
        if self.k_uncorrelated < 0:
            raise ValueError("k_uncorrelated must be >= 0")
        if self.encoder_layers != 1 or self.decoder_layers != 1:
            raise ValueError("only single-layer recurrent stacks are supported")
        if self.attention_enabled and self.attention_bottleneck_dim >= self.k_correlated:
            raise ValueError(
                "attention_bottleneck_dim must be well below k_correlated"
            )

    @property
    def latent_dim(self) -> int:
        return self.k_correlated + self.k_uncorrelated

    @property
    def decoder_hidden(self) -> int:
        return self.k_correlated + self.k_uncorrelated


def _lengths_to_mask(lengths: torch.Tensor, width: int) -> torch.Tensor:
    # [m, width] True on real positions
    return torch.arange(width, device=lengths.device)[None, :] < lengths[:, None]


def _final_states(outputs: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Gather each sequence's output at its true last position.

    Reading the output (rather than the recurrence's returned hidden over
    the padded width) makes the result exactly invariant to extra padding
    columns.
    """
    idx = (lengths - 1).view(-1, 1, 1).expand(-1, 1, outputs.size(-1))
    return outputs.gather(1, idx).squeeze(1)


class LatentSeq2Seq(nn.Module):
    """Prompt encoder, response autoencoder, and latent-conditioned decoder."""

    def __init__(self, config: ModelConfig, init_seed: int = 0):
        super().__init__()
        self.config = config
        k, ku = config.k_correlated, config.k_uncorrelated
        emb = config.embedding_dim

        # embeddings shared by both encoders and the decoder input
        self.embedding = nn.Embedding(config.vocab_size, emb, padding_idx=PAD_ID)
        self.prompt_encoder = nn.GRU(emb, k, batch_first=True)
        self.response_trunk = nn.GRU(emb, k + ku, batch_first=True)
        if ku > 0:
            self.mu_head = nn.Linear(ku, ku)
            self.logvar_head = nn.Linear(ku, ku)
        self.latent_to_hidden = nn.Linear(config.latent_dim, config.decoder_hidden)
        self.decoder = nn.GRU(
            emb + config.latent_dim, config.decoder_hidden, batch_first=True
        )
        out_in = config.decoder_hidden
        if config.attention_enabled:
            self.attn_query = nn.Linear(config.decoder_hidden, k, bias=False)
            self.attn_bottleneck = nn.Linear(k, config.attention_bottleneck_dim)
            out_in += config.attention_bottleneck_dim
        self.output_proj = nn.Linear(out_in, config.vocab_size)
        self._init_weights(init_seed)

    def _init_weights(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for p in self.parameters():
            p.data.uniform_(-INIT_RANGE, INIT_RANGE, generator=gen)
        with torch.no_grad():
            self.embedding.weight[PAD_ID].zero_()

    # ---------------------------------------------------------------- encode

    def _check_batch(self, ids: torch.Tensor, lengths: torch.Tensor) -> None:
        if ids.dim() != 2:
            raise ValueError("expected a padded [m, T] id matrix")
        if int(lengths.min()) < 1:
            raise ValueError("empty sequence in batch")
        if int(lengths.max()) > ids.size(1):
            raise ValueError("length exceeds padded width")

    def encode_prompt_states(
        self, prompts: torch.Tensor, lengths: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (X [m, k], per-position states [m, T, k])."""
        self._check_batch(prompts, lengths)
        outputs, _ = self.prompt_encoder(self.embedding(prompts))
        return _final_states(outputs, lengths), outputs

    def encode_prompt(self, prompts: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Prompt vector X: the encoder state at each sequence's last token."""
        return self.encode_prompt_states(prompts, lengths)[0]

    def encode_response(
        self,
        responses: torch.Tensor,
        lengths: torch.Tensor,
        sample: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> tuple[torch.Tensor, UncorrelatedPosterior, torch.Tensor]:
        """Returns (Y [m, k], posterior, Y_u [m, k_u]).

        With sample=True, Y_u = mu + sigma * eps (reparameterized, so
        gradients flow through mu and sigma); otherwise Y_u = mu.
        """
        self._check_batch(responses, lengths)
        k, ku = self.config.k_correlated, self.config.k_uncorrelated
        outputs, _ = self.response_trunk(self.embedding(responses))
        final = _final_states(outputs, lengths)
        y = final[:, :k]
        if ku == 0:
            empty = final[:, k:]
            return y, UncorrelatedPosterior(mu=empty, sigma2=empty), empty
        u_feat = final[:, k:]
        mu = self.mu_head(u_feat)
        logvar = self.logvar_head(u_feat)
        sigma2 = torch.exp(logvar)
        if sample:
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
            y_u = mu + torch.sqrt(sigma2) * eps
        else:
            y_u = mu
        return y, UncorrelatedPosterior(mu=mu, sigma2=sigma2), y_u

    def infer_latent(
        self,
        prompts: torch.Tensor,
        lengths: torch.Tensor,
        r_policy: str = "zeros",
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        """Latent for generation: [X ; R] with R all-zero or unit-normal."""
        x = self.encode_prompt(prompts, lengths)
        ku = self.config.k_uncorrelated
        if ku == 0:
            return x
        if r_policy == "zeros":
            r = torch.zeros(x.size(0), ku, dtype=x.dtype)
        elif r_policy == "sample":
            r = torch.randn((x.size(0), ku), generator=generator, dtype=x.dtype)
        else:
            raise ValueError(f"unknown r_policy {r_policy!r}")
        return torch.cat([x, r], dim=1)

    # ---------------------------------------------------------------- decode

    def _attend(
        self,
        queries: torch.Tensor,       # [m, T, H]
        prompt_states: torch.Tensor,  # [m, S, k]
        prompt_mask: torch.Tensor,    # [m, S] True on real positions
    ) -> torch.Tensor:
        """Multiplicative attention, context squeezed to the bottleneck dim."""
        if not bool(prompt_mask.any(dim=1).all()):
            raise ValueError("attention requires at least one unmasked key")
        scores = self.attn_query(queries) @ prompt_states.transpose(1, 2)  # [m, T, S]
        scores = scores.masked_fill(~prompt_mask[:, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        context = weights @ prompt_states                                 # [m, T, k]
        return self.attn_bottleneck(context)

    def attention_bottleneck(
        self,
        decoder_state: torch.Tensor,  # [m, H]
        prompt_states: torch.Tensor,  # [m, S, k]
        prompt_mask: torch.Tensor,    # [m, S]
    ) -> torch.Tensor:
        """Single-step context vector reduced to attention_bottleneck_dim."""
        if not self.config.attention_enabled:
            raise ValueError("model was built without attention")
        return self._attend(decoder_state.unsqueeze(1), prompt_states, prompt_mask).squeeze(1)

    def init_decoder_state(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.size(-1) != self.config.latent_dim:
            raise ValueError(
                f"latent width {latent.size(-1)} != {self.config.latent_dim}"
            )
        return self.latent_to_hidden(latent).unsqueeze(0)  # [1, m, H]

    def decode_teacher_forced(
        self,
        latent: torch.Tensor,          # [m, k + k_u]
        decoder_inputs: torch.Tensor,  # [m, T] gold tokens shifted right (bos first)
        prompt_states: Optional[torch.Tensor] = None,
        prompt_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Logits [m, T, V]; the latent conditions the initial state and is
        concatenated to every input step."""
        h0 = self.init_decoder_state(latent)
        t = decoder_inputs.size(1)
        emb = self.embedding(decoder_inputs)
        dec_in = torch.cat([emb, latent.unsqueeze(1).expand(-1, t, -1)], dim=-1)
        outputs, _ = self.decoder(dec_in, h0)
        if self.config.attention_enabled:
            if prompt_states is None or prompt_mask is None:
                raise ValueError("attention model needs prompt_states and prompt_mask")
            ctx = self._attend(outputs, prompt_states, prompt_mask)
            outputs = torch.cat([outputs, ctx], dim=-1)
        return self.output_proj(outputs)

    def decode_step(
        self,
        prev_tokens: torch.Tensor,     # [m]
        hidden: torch.Tensor,          # [1, m, H]
        latent: torch.Tensor,          # [m, k + k_u]
        prompt_states: Optional[torch.Tensor] = None,
        prompt_mask: Optional[torch.Tensor] = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """One decoding step: returns (log-probs [m, V], new hidden)."""
        emb = self.embedding(prev_tokens).unsqueeze(1)  # [m, 1, E]
        dec_in = torch.cat([emb, latent.unsqueeze(1)], dim=-1)
        out, new_hidden = self.decoder(dec_in, hidden)
        feats = out
        if self.config.attention_enabled:
            ctx = self._attend(out, prompt_states, prompt_mask)
            feats = torch.cat([out, ctx], dim=-1)
        logits = self.output_proj(feats).squeeze(1)
        return F.log_softmax(logits, dim=-1), new_hidden

    def generation_context(
        self,
        prompts: torch.Tensor,
        lengths: torch.Tensor,
        r_policy: str = "zeros",
        generator: Optional[torch.Generator] = None,
    ):
        """Build a decoding closure for one prompt batch of size 1.

        Returns (step_fn, initial_state); step_fn(prev_token_or_None, state)
        -> (log-prob vector as float64 numpy, new state).
        """
        with torch.no_grad():
            x, states = self.encode_prompt_states(prompts, lengths)
            ku = self.config.k_uncorrelated
            if ku > 0:
                if r_policy == "zeros":
                    r = torch.zeros(x.size(0), ku, dtype=x.dtype)
                elif r_policy == "sample":
                    r = torch.randn((x.size(0), ku), generator=generator, dtype=x.dtype)
                else:
                    raise ValueError(f"unknown r_policy {r_policy!r}")
                latent = torch.cat([x, r], dim=1)
            else:
                latent = x
            mask = _lengths_to_mask(lengths, prompts.size(1))
            init_hidden = self.init_decoder_state(latent)

        def step_fn(prev_token, hidden):
            tok = BOS_ID if prev_token is None else prev_token
            with torch.no_grad():
                logprobs, new_hidden = self.decode_step(
                    torch.tensor([tok]),
                    hidden,
                    latent,
                    prompt_states=states if self.config.attention_enabled else None,
                    prompt_mask=mask if self.config.attention_enabled else None,
                )
            return logprobs.squeeze(0).double().numpy(), new_hidden

        return step_fn, init_hidden


def make_decoder_inputs(responses: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Teacher-forcing inputs: bos followed by the gold tokens minus eos."""
    inputs = torch.full_like(responses, PAD_ID)
    inputs[:, 0] = BOS_ID
    inputs[:, 1:] = responses[:, :-1]
    # the shifted-in eos lands one past each true length; pad it back out
    mask = _lengths_to_mask(lengths, responses.size(1))
    return inputs.masked_fill(~mask, PAD_ID)


# ------------------------------------------------------------------ checkpoints


def vocab_sha256(vocab: Vocabulary) -> str:
    return hashlib.sha256("\n".join(vocab.tokens).encode("utf-8")).hexdigest()


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    vocab: Vocabulary,
    extra: Optional[dict] = None,
) -> None:
    """Versioned container: config, vocabulary (tokens plus hash), weights.

    extra holds training-state material (optimizer moments, counters, run
    config) for exact resume; generation-time loading ignores it.
    """
    from latentdialog.baseline import BaselineSeq2Seq  # local import, no cycle

    if isinstance(model, LatentSeq2Seq):
        model_type = "latent"
    elif isinstance(model, BaselineSeq2Seq):
        model_type = "baseline"
    else:
        raise ValueError(f"unknown model class {type(model).__name__}")
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_type": model_type,
        "model_config": asdict(model.config),
        "vocab_tokens": vocab.tokens,
        "vocab_sha256": vocab_sha256(vocab),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


@dataclass
class CheckpointBundle:
    model: nn.Module
    vocab: Vocabulary
    model_type: str
    extra: dict


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    from latentdialog.baseline import BaselineConfig, BaselineSeq2Seq

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    vocab = Vocabulary(payload["vocab_tokens"])
    if vocab_sha256(vocab) != payload["vocab_sha256"]:
        raise ValueError("vocabulary hash mismatch; checkpoint is corrupt")
    if payload["model_type"] == "latent":
        model: nn.Module = LatentSeq2Seq(ModelConfig(**payload["model_config"]))
    elif payload["model_type"] == "baseline":
        model = BaselineSeq2Seq(BaselineConfig(**payload["model_config"]))
    else:
        raise ValueError(f"unknown model_type {payload['model_type']!r}")
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return CheckpointBundle(
        model=model,
        vocab=vocab,
        model_type=payload["model_type"],
        extra=payload.get("extra", {}),
    )
