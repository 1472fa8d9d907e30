"""Reconstruction loss, instance discrimination constraint, and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import tensor as T
from .numerics.tensor import DiffArray


@dataclass
class LossConfig:
    beta: float = 0.1
    idc_enabled: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass
class LossBreakdown:
    recon: float
    idc: float
    total: float


def recon_loss(x_rec, x) -> DiffArray:
    """Mean squared error over every position and channel (batch-averaged when batched)."""
    x_rec = T.as_diff(x_rec)
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if x_rec.shape != x.shape:
        raise ValueError(f"recon_loss: shape mismatch {x_rec.shape} vs {x.shape}")
    diff = x_rec - x
    return T.mean(diff * diff)


def idc_loss(reprs, cnn_embeds, heads: tuple[Callable, Callable] | None = None) -> DiffArray:
    """(1 / (B (B-1))) * log sum_{i != j} exp(cos(Proj1(repr_i), Proj2(embed_j))).

    ``heads`` are the two projection heads; identity when omitted.
    """
    reprs, cnn_embeds = T.as_diff(reprs), T.as_diff(cnn_embeds)
    B = reprs.shape[0]
    if B < 2:
        raise ValueError("idc_loss needs a batch of at least 2 (no cross pairs otherwise)")
    if cnn_embeds.shape[0] != B:
        raise ValueError("idc_loss: representation and embedding batch sizes differ")
    z1, z2 = (reprs, cnn_embeds) if heads is None else (heads[0](reprs), heads[1](cnn_embeds))
    sims = T.cosine_similarity(T.reshape(z1, (B, 1, -1)), T.reshape(z2, (1, B, -1)))  # (B, B)
    return idc_from_similarities(sims)


def idc_from_similarities(sims) -> DiffArray:
    sims = T.as_diff(sims)
    B = sims.shape[0]
    rows, cols = np.nonzero(~np.eye(B, dtype=bool))
    return T.logsumexp(sims[rows, cols]) * (1.0 / (B * (B - 1)))


def total_loss(recon, idc, cfg: LossConfig):
    """recon + beta * idc; idc contributes nothing when disabled.

    Works on floats (returns a LossBreakdown) and on DiffArrays (returns the
    differentiable total).
    """
    weight = cfg.beta if cfg.idc_enabled else 0.0
    if isinstance(recon, DiffArray) or isinstance(idc, DiffArray):
        return recon if weight == 0 or idc is None else recon + idc * weight
    idc = 0.0 if idc is None else float(idc)
    return LossBreakdown(float(recon), idc, float(recon) + weight * idc)


def cross_entropy(logits, labels) -> DiffArray:
    labels = np.asarray(labels, dtype=np.int64)
    logp = T.log_softmax(logits, axis=-1)
    return -T.mean(logp[np.arange(len(labels)), labels])
