"""Conventional attention seq2seq trained with cross-entropy.

Comparison model: one recurrent encoder over the prompt, a decoder
initialized from the final encoder state, and full-bandwidth
multiplicative attention (no bottleneck, no latent channel).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from latentdialog.data import BOS_ID, PAD_ID

INIT_RANGE = 0.08


@dataclass
class BaselineConfig:
    vocab_size: int
    hidden_dim: int = 522
    embedding_dim: int = 128

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")


class BaselineSeq2Seq(nn.Module):
    def __init__(self, config: BaselineConfig, init_seed: int = 0):
        super().__init__()
        self.config = config
        h, emb = config.hidden_dim, config.embedding_dim
        self.embedding = nn.Embedding(config.vocab_size, emb, padding_idx=PAD_ID)
        self.encoder = nn.GRU(emb, h, batch_first=True)
        self.decoder = nn.GRU(emb, h, batch_first=True)
        self.attn_query = nn.Linear(h, h, bias=False)
        self.output_proj = nn.Linear(2 * h, config.vocab_size)
        self._init_weights(init_seed)

    def _init_weights(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for p in self.parameters():
            p.data.uniform_(-INIT_RANGE, INIT_RANGE, generator=gen)
        with torch.no_grad():
            self.embedding.weight[PAD_ID].zero_()

    def encode(
        self, prompts: torch.Tensor, lengths: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (per-position states [m, S, H], final state [m, H])."""
        outputs, _ = self.encoder(self.embedding(prompts))
        idx = (lengths - 1).view(-1, 1, 1).expand(-1, 1, outputs.size(-1))
        final = outputs.gather(1, idx).squeeze(1)
        return outputs, final

    def _attend(
        self,
        queries: torch.Tensor,     # [m, T, H]
        enc_states: torch.Tensor,  # [m, S, H]
        enc_mask: torch.Tensor,    # [m, S]
    ) -> torch.Tensor:
        scores = self.attn_query(queries) @ enc_states.transpose(1, 2)
        scores = scores.masked_fill(~enc_mask[:, None, :], float("-inf"))
        return torch.softmax(scores, dim=-1) @ enc_states  # [m, T, H]

    def forward_teacher(
        self,
        prompts: torch.Tensor,
        prompt_lengths: torch.Tensor,
        decoder_inputs: torch.Tensor,
    ) -> torch.Tensor:
        """Teacher-forced logits [m, T, V]."""
        enc_states, enc_final = self.encode(prompts, prompt_lengths)
        mask = (
            torch.arange(prompts.size(1), device=prompts.device)[None, :]
            < prompt_lengths[:, None]
        )
        outputs, _ = self.decoder(self.embedding(decoder_inputs), enc_final.unsqueeze(0))
        ctx = self._attend(outputs, enc_states, mask)
        return self.output_proj(torch.cat([outputs, ctx], dim=-1))

    def decode_step(
        self,
        prev_tokens: torch.Tensor,
        hidden: torch.Tensor,
        enc_states: torch.Tensor,
        enc_mask: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        out, new_hidden = self.decoder(self.embedding(prev_tokens).unsqueeze(1), hidden)
        ctx = self._attend(out, enc_states, enc_mask)
        logits = self.output_proj(torch.cat([out, ctx], dim=-1)).squeeze(1)
        return F.log_softmax(logits, dim=-1), new_hidden

    def generation_context(
        self,
        prompts: torch.Tensor,
        lengths: torch.Tensor,
        r_policy: str = "zeros",   # accepted for interface parity, unused
        generator: Optional[torch.Generator] = None,
    ):
        """Same (step_fn, initial_state) contract as the latent model."""
        del r_policy, generator
        with torch.no_grad():
            enc_states, enc_final = self.encode(prompts, lengths)
            mask = (
                torch.arange(prompts.size(1), device=prompts.device)[None, :]
                < lengths[:, None]
            )
            init_hidden = enc_final.unsqueeze(0)

        def step_fn(prev_token, hidden):
            tok = BOS_ID if prev_token is None else prev_token
            with torch.no_grad():
                logprobs, new_hidden = self.decode_step(
                    torch.tensor([tok]), hidden, enc_states, mask
                )
            return logprobs.squeeze(0).double().numpy(), new_hidden

        return step_fn, init_hidden
