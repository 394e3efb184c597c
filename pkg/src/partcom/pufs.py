"""Unknown-feature synthesis by mixing part composite features across classes."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .losses import _check_targets, _nll, distance_logits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixConfig:
    low: float = 0.6
    high: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.low <= self.high <= 1.0:
            raise ValueError(f"mix range must sit inside (0.5, 1.0], got [{self.low}, {self.high}]")


def mixup_parts(Zp_i: ad.Tensor, Zp_j: ad.Tensor, lam) -> ad.Tensor:
    """lam * Zp_i + (1 - lam) * Zp_j; ``lam`` is a scalar or one weight per batch row."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 1:
        lam = lam.reshape((-1,) + (1,) * (Zp_i.ndim - 1))
    return ad.add(ad.mul(Zp_i, lam), ad.mul(Zp_j, 1.0 - lam))


def sample_pairs(labels, rng: np.random.Generator, config: MixConfig = MixConfig()):
    """Pick a different-class partner and a mixing weight for every sample.

    Returns ``(partner_index, lam)`` arrays, or ``None`` when the batch holds a
    single class (PUFS is skipped for that batch).
    """
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        log.warning("batch has a single class; skipping unknown-feature synthesis")
        return None
    partners = np.empty(len(labels), dtype=int)
    for i, y in enumerate(labels):
        candidates = np.flatnonzero(labels != y)
        partners[i] = candidates[rng.integers(len(candidates))]
    lam = rng.uniform(config.low, config.high, size=len(labels))
    return partners, lam


def synthesize(Zp: ad.Tensor, labels, partners: np.ndarray, lam: np.ndarray) -> ad.Tensor:
    """Virtual part composites for a batch (B, KM, D) given sampled pairs."""
    labels = np.asarray(labels)
    if np.any(labels[partners] == labels):
        raise ValueError("every pair must mix two different classes")
    return mixup_parts(Zp, Zp[partners], lam)


def loss_ce_virtual(Zvc: ad.Tensor, C: ad.Tensor, V: ad.Tensor, source_targets, scale: float = 1.0) -> ad.Tensor:
    """2K-way cross entropy over C then V, targeting V of the source class."""
    K = C.shape[0]
    targets = _check_targets(source_targets, K)
    return _nll(distance_logits(Zvc, ad.concat([C, V], axis=0), scale), targets + K)
