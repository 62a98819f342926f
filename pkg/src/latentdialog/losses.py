"""Training objectives: correlation loss, KL regularizer, reconstruction loss.

The correlation loss ties the prompt space X and the response space Y
together: it minimizes the per-dimension squared distance between paired
rows while penalty terms push each batch toward zero column sums, unit
column sums-of-squares, and zero cross-dimension products. All statistics
are batch sums, not means, so the penalty weights are tied to the batch
size they were tuned for (64 in the shipped defaults).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import torch
import torch.nn.functional as F

# target value for each column's sum of squares (fixed; weights are tuned to it)
VARIANCE_TARGET = 1.0

Scalar = Union[float, torch.Tensor]


@dataclass
class LossConfig:
    """Weights of the loss terms.

    mean_penalty / variance_penalty / decorrelation_penalty scale the three
    condition penalties inside the correlation loss; cca_weight /
    reconstruction_weight / kl_weight combine the three top-level losses.
    Defaults are the tuned full-scale values for batch size 64.
    """

    mean_penalty: float = 3.9
    variance_penalty: float = 6.25
    decorrelation_penalty: float = 0.05
    cca_weight: float = 2.0
    reconstruction_weight: float = 2.0
    kl_weight: float = 0.1
    k: Optional[int] = None  # expected correlated dimension count, checked if set

    def __post_init__(self):
        for name in (
            "mean_penalty",
            "variance_penalty",
            "decorrelation_penalty",
            "cca_weight",
            "reconstruction_weight",
            "kl_weight",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class CcaDiagnostics:
    """Per-batch condition measurements for both latent views.

    mean_abs holds |column mean| per dimension, sumsq_dev holds
    |column sum-of-squares - 1| per dimension, gram_offdiag_max the largest
    |cross-dimension product sum|. These are what the penalty weights get
    tuned against.
    """

    x_mean_abs: np.ndarray
    y_mean_abs: np.ndarray
    x_sumsq_dev: np.ndarray
    y_sumsq_dev: np.ndarray
    x_gram_offdiag_max: float
    y_gram_offdiag_max: float

    def scalars(self) -> dict[str, float]:
        return {
            "x_mean_abs_max": float(self.x_mean_abs.max()),
            "y_mean_abs_max": float(self.y_mean_abs.max()),
            "x_sumsq_dev_max": float(self.x_sumsq_dev.max()),
            "y_sumsq_dev_max": float(self.y_sumsq_dev.max()),
            "x_gram_offdiag_max": self.x_gram_offdiag_max,
            "y_gram_offdiag_max": self.y_gram_offdiag_max,
        }


def _offdiag_abs_sum(gram: torch.Tensor) -> torch.Tensor:
    return gram.abs().sum() - gram.diagonal().abs().sum()


def cca_loss(
    x: torch.Tensor, y: torch.Tensor, cfg: LossConfig
) -> tuple[torch.Tensor, CcaDiagnostics]:
    """Correlation loss over a batch of paired latent vectors.

    For [m, k] views X and Y returns

        sum_i [ sum_m (X_im - Y_im)^2
                + mean_penalty * (|sum_m X_im| + |sum_m Y_im|)
                + variance_penalty * (|sum_m X_im^2 - 1| + |sum_m Y_im^2 - 1|) ]
        + decorrelation_penalty * sum_{i != j} (|sum_m X_im X_jm| + |sum_m Y_im Y_jm|)

    where m indexes the batch. Differentiable in both arguments; the
    absolute-value kinks use sign(0) = 0 subgradients.
    """
    if x.dim() != 2 or y.dim() != 2:
        raise ValueError("x and y must be 2-D [batch, dims]")
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    m, k = x.shape
    if m < 2:
        raise ValueError("batch statistics require m >= 2")
    if cfg.k is not None and k != cfg.k:
        raise ValueError(f"expected {cfg.k} correlated dimensions, got {k}")

    match = ((x - y) ** 2).sum()
    x_col_sums = x.sum(dim=0)        # [k]
    y_col_sums = y.sum(dim=0)
    mean_term = x_col_sums.abs().sum() + y_col_sums.abs().sum()
    x_sumsq = (x ** 2).sum(dim=0)    # [k]
    y_sumsq = (y ** 2).sum(dim=0)
    var_term = (
        (x_sumsq - VARIANCE_TARGET).abs().sum()
        + (y_sumsq - VARIANCE_TARGET).abs().sum()
    )
    x_gram = x.T @ x                 # [k, k] batch-sum products
    y_gram = y.T @ y
    cross_term = _offdiag_abs_sum(x_gram) + _offdiag_abs_sum(y_gram)

    loss = (
        match
        + cfg.mean_penalty * mean_term
        + cfg.variance_penalty * var_term
        + cfg.decorrelation_penalty * cross_term
    )

    with torch.no_grad():
        eye = torch.eye(k, dtype=x.dtype, device=x.device)
        diag = CcaDiagnostics(
            x_mean_abs=(x_col_sums.abs() / m).cpu().numpy(),
            y_mean_abs=(y_col_sums.abs() / m).cpu().numpy(),
            x_sumsq_dev=(x_sumsq - VARIANCE_TARGET).abs().cpu().numpy(),
            y_sumsq_dev=(y_sumsq - VARIANCE_TARGET).abs().cpu().numpy(),
            x_gram_offdiag_max=float((x_gram * (1 - eye)).abs().max()) if k > 1 else 0.0,
            y_gram_offdiag_max=float((y_gram * (1 - eye)).abs().max()) if k > 1 else 0.0,
        )
    return loss, diag


@dataclass
class UncorrelatedPosterior:
    """Diagonal Gaussian predicted for the prompt-independent channel."""

    mu: torch.Tensor      # [m, d]
    sigma2: torch.Tensor  # [m, d], strictly positive


def kl_loss(post: UncorrelatedPosterior) -> torch.Tensor:
    """Regularizer pulling the uncorrelated posterior toward a unit normal.

    Returns sum over all elements of mu^2 + sigma^2 - log(sigma^2). Note the
    conventional 1/2 factor and -1 offset are deliberately absent: the scale
    is absorbed by kl_weight and the offset (value 1 per element at the
    minimum mu=0, sigma^2=1) does not affect gradients.
    """
    if post.mu.shape != post.sigma2.shape:
        raise ValueError("mu and sigma2 must have the same shape")
    if post.mu.numel() == 0:
        return post.mu.sum()  # ablation without the uncorrelated channel
    if not bool((post.sigma2 > 0).all()):
        raise ValueError("sigma2 must be strictly positive elementwise")
    return (post.mu ** 2 + post.sigma2 - torch.log(post.sigma2)).sum()


def reconstruction_loss(
    logits: torch.Tensor, targets: torch.Tensor, pad_mask: torch.Tensor
) -> torch.Tensor:
    """Token-level cross entropy averaged over non-pad positions.

    logits: [m, T, V]; targets: [m, T] ids in [0, V); pad_mask: [m, T] with
    1/True on real positions. Masked positions contribute nothing, so their
    target values are irrelevant.
    """
    m, t, v = logits.shape
    if targets.shape != (m, t) or pad_mask.shape != (m, t):
        raise ValueError("targets and pad_mask must be [m, T]")
    if int(targets.min()) < 0 or int(targets.max()) >= v:
        raise ValueError("target id out of range")
    mask = pad_mask.to(logits.dtype)
    per_token = F.cross_entropy(
        logits.reshape(-1, v), targets.reshape(-1), reduction="none"
    ).reshape(m, t)
    total = (per_token * mask).sum()
    count = mask.sum()
    if count == 0:
        raise ValueError("pad_mask excludes every position")
    return total / count


@dataclass
class LossBreakdown:
    """The three loss components plus their weighted total.

    Values may be live torch scalars (during training) or plain floats.
    """

    cca: Scalar
    reconstruction: Scalar
    kl: Scalar
    total: Scalar
    diagnostics: Optional[CcaDiagnostics] = None

    def scalars(self) -> dict[str, float]:
        def as_float(value) -> float:
            return float(value.detach()) if hasattr(value, "detach") else float(value)

        rec = {
            "l_c": as_float(self.cca),
            "l_a": as_float(self.reconstruction),
            "l_v": as_float(self.kl),
            "total": as_float(self.total),
        }
        rec["lv_la_ratio"] = (
            rec["l_v"] / rec["l_a"] if rec["l_a"] > 0 else float("inf")
        )
        if self.diagnostics is not None:
            rec.update(self.diagnostics.scalars())
        return rec


def total_loss(
    cca: Scalar,
    reconstruction: Scalar,
    kl: Scalar,
    cfg: LossConfig,
    diagnostics: Optional[CcaDiagnostics] = None,
) -> LossBreakdown:
    """Weighted sum of the three components; all inputs are recorded."""
    total = (
        cfg.cca_weight * cca
        + cfg.reconstruction_weight * reconstruction
        + cfg.kl_weight * kl
    )
    return LossBreakdown(
        cca=cca,
        reconstruction=reconstruction,
        kl=kl,
        total=total,
        diagnostics=diagnostics,
    )
