"""Joint optimization of the correlation, reconstruction, and KL objectives.

One optimizer step updates the prompt encoder, both response-encoder heads,
and the decoder together: the weighted losses are summed and gradients flow
through the shared graph. The loop logs every step as a JSON record
(including condition diagnostics and the KL/reconstruction ratio), saves
resumable checkpoints, and early-stops on validation total loss.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from latentdialog.baseline import BaselineConfig, BaselineSeq2Seq
from latentdialog.config import derive_seed
from latentdialog.data import (
    Batch,
    DenoisingConfig,
    Vocabulary,
    build_vocab,
    dedup_filter,
    load_pairs,
    make_batches,
)
from latentdialog.losses import (
    LossBreakdown,
    LossConfig,
    cca_loss,
    kl_loss,
    reconstruction_loss,
    total_loss,
)
from latentdialog.model import (
    LatentSeq2Seq,
    ModelConfig,
    load_checkpoint,
    make_decoder_inputs,
    save_checkpoint,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 10
    max_steps: int = 0          # 0 = no cap beyond the epoch budget
    grad_clip: float = 5.0
    patience: int = 3           # epochs without validation improvement
    seed: int = 0
    no_uncorrelated: bool = False
    no_denoising: bool = False
    attention: bool = False
    replace_prob: float = 0.15
    min_freq: int = 2
    drop_last: bool = False
    checkpoint_every: int = 1   # epochs between checkpoint writes

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if not 0.0 <= self.replace_prob <= 1.0:
            raise ValueError("replace_prob must be in [0, 1]")


@dataclass
class TrainState:
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    step: int = 0
    epoch: int = 0
    batches_done: int = 0       # consumed batches within the current epoch
    best_val: Optional[float] = None
    bad_epochs: int = 0
    ratio_history: list[float] = field(default_factory=list)


class NonFiniteLossError(RuntimeError):
    """Raised when any loss component leaves the finite range."""

    def __init__(self, step: int, scalars: dict):
        super().__init__(
            f"non-finite loss at step {step}: "
            + ", ".join(f"{k}={v}" for k, v in scalars.items())
        )
        self.step = step
        self.scalars = scalars


def _tensors(batch: Batch):
    return (
        torch.from_numpy(batch.prompts),
        torch.from_numpy(batch.prompt_lengths),
        torch.from_numpy(batch.responses),
        torch.from_numpy(batch.response_lengths),
        torch.from_numpy(batch.noised_responses),
    )


def _length_mask(lengths: torch.Tensor, width: int) -> torch.Tensor:
    return torch.arange(width)[None, :] < lengths[:, None]


def _latent_forward(
    model: LatentSeq2Seq,
    batch: Batch,
    loss_cfg: LossConfig,
    sample: bool,
    noised_input: bool,
    generator: Optional[torch.Generator] = None,
) -> LossBreakdown:
    """Shared forward pass for training and validation."""
    prompts, plens, responses, rlens, noised = _tensors(batch)
    enc_input = noised if noised_input else responses

    if model.config.attention_enabled:
        x, prompt_states = model.encode_prompt_states(prompts, plens)
        prompt_mask = _length_mask(plens, prompts.size(1))
    else:
        x = model.encode_prompt(prompts, plens)
        prompt_states = prompt_mask = None
    y, posterior, y_u = model.encode_response(
        enc_input, rlens, sample=sample, generator=generator
    )
    latent = torch.cat([y, y_u], dim=1)
    logits = model.decode_teacher_forced(
        latent, make_decoder_inputs(responses, rlens), prompt_states, prompt_mask
    )
    l_c, diag = cca_loss(x, y, loss_cfg)
    l_a = reconstruction_loss(logits, responses, _length_mask(rlens, responses.size(1)))
    l_v = kl_loss(posterior)
    return total_loss(l_c, l_a, l_v, loss_cfg, diag)


def train_step(
    state: TrainState,
    batch: Batch,
    cfg: TrainConfig,
    loss_cfg: LossConfig,
) -> LossBreakdown:
    """One joint update of all encoders and the decoder."""
    if batch.m < 2:
        raise ValueError("train_step requires batch size >= 2")
    model = state.model
    model.train()
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "eps", state.step))
    breakdown = _latent_forward(
        model, batch, loss_cfg, sample=True, noised_input=True, generator=gen
    )
    if not torch.isfinite(breakdown.total):
        raise NonFiniteLossError(state.step, breakdown.scalars())
    state.optimizer.zero_grad()
    breakdown.total.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    state.batches_done += 1
    return breakdown


def _baseline_forward(model: BaselineSeq2Seq, batch: Batch) -> torch.Tensor:
    prompts, plens, responses, rlens, _ = _tensors(batch)
    logits = model.forward_teacher(prompts, plens, make_decoder_inputs(responses, rlens))
    return reconstruction_loss(logits, responses, _length_mask(rlens, responses.size(1)))


def baseline_train_step(
    state: TrainState, batch: Batch, cfg: TrainConfig
) -> LossBreakdown:
    """Cross-entropy-only update for the comparison model."""
    if batch.m < 2:
        raise ValueError("train_step requires batch size >= 2")
    model = state.model
    model.train()
    l_a = _baseline_forward(model, batch)
    if not torch.isfinite(l_a):
        raise NonFiniteLossError(state.step, {"l_a": float(l_a)})
    state.optimizer.zero_grad()
    l_a.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    state.batches_done += 1
    zero = torch.zeros(())
    return LossBreakdown(cca=zero, reconstruction=l_a.detach(), kl=zero, total=l_a.detach())


@dataclass
class TrainResult:
    checkpoint_path: Path
    best_checkpoint_path: Path
    log_path: Path
    vocab_path: Path
    steps: int
    epochs_run: int
    final_validation: Optional[dict]
    stopped_early: bool


def _validate(model, batches, loss_cfg, baseline: bool) -> dict:
    """Deterministic held-out losses: no sampling, no denoising."""
    model.eval()
    sums: dict[str, float] = {}
    with torch.no_grad():
        for batch in batches:
            if baseline:
                l_a = _baseline_forward(model, batch)
                rec = {"l_c": 0.0, "l_a": float(l_a), "l_v": 0.0, "total": float(l_a)}
            else:
                rec = _latent_forward(
                    model, batch, loss_cfg, sample=False, noised_input=False
                ).scalars()
            for key, value in rec.items():
                sums[key] = sums.get(key, 0.0) + value
    n = max(1, len(batches))
    return {key: value / n for key, value in sums.items()}


def _resolve_vocab(
    train_path, raw_pairs, vocab: Optional[Vocabulary], min_freq: int
) -> Vocabulary:
    if vocab is not None:
        return vocab
    return build_vocab(raw_pairs, min_freq=min_freq)


def _dump_batch(out_dir: Path, batch: Batch, step: int) -> Path:
    path = out_dir / f"nonfinite_batch_step{step}.npz"
    np.savez(
        path,
        prompts=batch.prompts,
        responses=batch.responses,
        noised_responses=batch.noised_responses,
        prompt_lengths=batch.prompt_lengths,
        response_lengths=batch.response_lengths,
    )
    return path


def train(
    train_path: str | Path,
    out_dir: str | Path,
    cfg: Optional[TrainConfig] = None,
    loss_cfg: Optional[LossConfig] = None,
    model_cfg: Optional[ModelConfig] = None,
    valid_path: Optional[str | Path] = None,
    vocab: Optional[Vocabulary] = None,
    resume_from: Optional[str | Path] = None,
    baseline: bool = False,
    baseline_cfg: Optional[BaselineConfig] = None,
    run_config_flat: Optional[dict] = None,
) -> TrainResult:
    """Full training run; returns the written artifact paths.

    Resume regenerates each epoch's batch order from the epoch-derived seed
    and skips already-consumed batches, so an interrupted-and-resumed run
    retraces the uninterrupted trajectory exactly.
    """
    cfg = cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()
    train_path = Path(train_path)
    if not train_path.exists():
        raise FileNotFoundError(f"training corpus not found: {train_path}")
    if valid_path is not None and not Path(valid_path).exists():
        raise FileNotFoundError(f"validation corpus not found: {valid_path}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    raw = load_pairs(train_path)

    resume_extra: dict = {}
    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        model = bundle.model
        vocab = bundle.vocab
        resume_extra = bundle.extra
        if baseline != (bundle.model_type == "baseline"):
            raise ValueError("checkpoint model type does not match the baseline flag")
    else:
        vocab = _resolve_vocab(train_path, raw.pairs, vocab, cfg.min_freq)
        if baseline:
            if baseline_cfg is None:
                base_cfg = BaselineConfig(vocab_size=len(vocab))
            else:
                base_cfg = dataclasses.replace(baseline_cfg, vocab_size=len(vocab))
            model = BaselineSeq2Seq(base_cfg, init_seed=derive_seed(cfg.seed, "init"))
        else:
            if model_cfg is None:
                model_cfg = ModelConfig(vocab_size=len(vocab))
            desired_ku = 0 if cfg.no_uncorrelated else model_cfg.k_uncorrelated
            model_cfg = dataclasses.replace(
                model_cfg,
                vocab_size=len(vocab),
                k_uncorrelated=desired_ku,
                attention_enabled=model_cfg.attention_enabled or cfg.attention,
            )
            model = LatentSeq2Seq(model_cfg, init_seed=derive_seed(cfg.seed, "init"))

    if not baseline and loss_cfg.k is None:
        loss_cfg = dataclasses.replace(loss_cfg, k=model.config.k_correlated)

    vocab_path = out / "vocab.txt"
    vocab.save(vocab_path)

    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2)
    )
    state = TrainState(model=model, optimizer=optimizer)
    if resume_extra:
        optimizer.load_state_dict(resume_extra["optimizer"])
        # the passed config stays authoritative over the checkpointed rate,
        # so a resume may lower the rate for a fine-tuning stage
        for group in optimizer.param_groups:
            group["lr"] = cfg.learning_rate
            group["betas"] = (cfg.beta1, cfg.beta2)
        state.step = resume_extra["step"]
        state.epoch = resume_extra["epoch"]
        state.batches_done = resume_extra["batches_done"]
        state.best_val = resume_extra["best_val"]
        state.bad_epochs = resume_extra["bad_epochs"]
        state.ratio_history = list(resume_extra.get("ratio_history", []))

    train_tok = load_pairs(train_path, vocab).pairs
    valid_batches = []
    if valid_path is not None:
        valid_tok = dedup_filter(train_tok, load_pairs(valid_path, vocab).pairs)
        valid_batches = make_batches(
            valid_tok, cfg.batch_size, derive_seed(cfg.seed, "valid")
        )
        valid_batches = [b for b in valid_batches if b.m >= 2]

    replace_prob = 0.0 if (cfg.no_denoising or baseline) else cfg.replace_prob
    denoise = DenoisingConfig(replace_prob=replace_prob) if replace_prob > 0 else None

    log_path = out / "train_log.jsonl"
    log_mode = "a" if resume_from is not None else "w"
    ckpt_path = out / "last.pt"
    best_path = out / "best.pt"

    def checkpoint_extra() -> dict:
        return {
            "optimizer": optimizer.state_dict(),
            "step": state.step,
            "epoch": state.epoch,
            "batches_done": state.batches_done,
            "best_val": state.best_val,
            "bad_epochs": state.bad_epochs,
            "ratio_history": state.ratio_history[-2000:],
            "train_config": dataclasses.asdict(cfg),
            "loss_config": dataclasses.asdict(loss_cfg),
            "run_config": run_config_flat or {},
        }

    final_validation: Optional[dict] = None
    stopped_early = False
    hit_step_cap = False
    start = time.monotonic()

    with open(log_path, log_mode, encoding="utf-8") as log:
        while state.epoch < cfg.epochs and not stopped_early and not hit_step_cap:
            batches = make_batches(
                train_tok,
                cfg.batch_size,
                derive_seed(cfg.seed, "epoch", state.epoch),
                denoise=denoise,
                drop_last=cfg.drop_last,
            )
            skip = state.batches_done  # nonzero only on the resume epoch
            for batch in batches[skip:]:
                if batch.m < 2:
                    logger.warning(
                        "skipping a size-%d batch; correlation statistics need m >= 2",
                        batch.m,
                    )
                    state.batches_done += 1
                    continue
                try:
                    if baseline:
                        breakdown = baseline_train_step(state, batch, cfg)
                    else:
                        breakdown = train_step(state, batch, cfg, loss_cfg)
                except NonFiniteLossError:
                    dump = _dump_batch(out, batch, state.step)
                    logger.error("aborting; offending batch dumped to %s", dump)
                    raise
                rec = breakdown.scalars()
                rec["step"] = state.step
                rec["epoch"] = state.epoch
                state.ratio_history.append(rec["lv_la_ratio"])
                log.write(json.dumps(rec) + "\n")
                if cfg.max_steps and state.step >= cfg.max_steps:
                    hit_step_cap = True
                    break
            if hit_step_cap:
                break
            state.epoch += 1
            state.batches_done = 0

            if valid_batches:
                final_validation = _validate(model, valid_batches, loss_cfg, baseline)
                final_validation["epoch"] = state.epoch
                final_validation["step"] = state.step
                final_validation["event"] = "validation"
                log.write(json.dumps(final_validation) + "\n")
                score = final_validation["total"]
                if state.best_val is None or score < state.best_val:
                    state.best_val = score
                    state.bad_epochs = 0
                    save_checkpoint(best_path, model, vocab, extra=checkpoint_extra())
                else:
                    state.bad_epochs += 1
                    if state.bad_epochs >= cfg.patience:
                        stopped_early = True
            if state.epoch % max(1, cfg.checkpoint_every) == 0:
                save_checkpoint(ckpt_path, model, vocab, extra=checkpoint_extra())
        log.flush()

    save_checkpoint(ckpt_path, model, vocab, extra=checkpoint_extra())
    if not best_path.exists():
        # no validation signal yet; the last checkpoint is the best we can name
        save_checkpoint(best_path, model, vocab, extra=checkpoint_extra())
    logger.info(
        "trained %d steps over %d epochs in %.1fs",
        state.step,
        state.epoch,
        time.monotonic() - start,
    )
    return TrainResult(
        checkpoint_path=ckpt_path,
        best_checkpoint_path=best_path,
        log_path=log_path,
        vocab_path=vocab_path,
        steps=state.step,
        epochs_run=state.epoch,
        final_validation=final_validation,
        stopped_early=stopped_early,
    )


def train_baseline(
    train_path: str | Path,
    out_dir: str | Path,
    cfg: Optional[TrainConfig] = None,
    valid_path: Optional[str | Path] = None,
    vocab: Optional[Vocabulary] = None,
    resume_from: Optional[str | Path] = None,
    baseline_cfg: Optional[BaselineConfig] = None,
    run_config_flat: Optional[dict] = None,
) -> TrainResult:
    """Comparison run: same data, optimizer, and clipping; cross entropy only."""
    return train(
        train_path,
        out_dir,
        cfg=cfg,
        valid_path=valid_path,
        vocab=vocab,
        resume_from=resume_from,
        baseline=True,
        baseline_cfg=baseline_cfg,
        run_config_flat=run_config_flat,
    )


def read_log(path: str | Path) -> list[dict]:
    """All records from a JSONL training log."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def smoothed_ratio(records: list[dict], window: int = 0) -> list[float]:
    """Moving average of the KL/reconstruction ratio over step records."""
    ratios = [
        r["lv_la_ratio"]
        for r in records
        if "lv_la_ratio" in r and r.get("event") != "validation"
        and np.isfinite(r["lv_la_ratio"])
    ]
    if not ratios:
        return []
    window = window or max(1, len(ratios) // 10)
    out = []
    for i in range(len(ratios)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(ratios[lo : i + 1])))
    return out
