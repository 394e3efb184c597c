"""Training objectives.

Class indices are 0-based throughout this module. The distance d(., .) used in
every softmax is cosine distance, 1 - cos, so logits are ``cos - 1``.
All batch losses average over samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .sinkhorn import DEFAULT_EPSILON, hard_assign, round_balanced, sinkhorn_assign

# Smooth-norm epsilon for point features, which may be exactly zero after ReLU.
POINT_NORM_EPS = 1e-8


@dataclass
class LossWeights:
    pl: float = 0.1
    pb: float = 1.0
    pd: float = 1.0
    virtual: float = 0.1
    tau: float = 0.1
    delta: float = 0.1
    scale: float = 1.0      # multiplies -d in the class-prototype softmax

    def __post_init__(self):
        if min(self.pl, self.pb, self.pd, self.virtual) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.tau <= 0 or self.scale <= 0:
            raise ValueError(f"tau and scale must be positive, got {self.tau}, {self.scale}")
        if not -1.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [-1, 1], got {self.delta}")


def cosine_distance(a, b) -> ad.Tensor:
    return 1.0 - ad.cosine_similarity(a, b)


def _check_targets(targets, n_classes: int) -> np.ndarray:
    targets = np.asarray(targets, dtype=int).reshape(-1)
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise IndexError(f"class index out of range 0..{n_classes - 1}: {targets}")
    return targets


def distance_logits(features: ad.Tensor, prototypes: ad.Tensor, scale: float = 1.0) -> ad.Tensor:
    """-scale * d(feature, prototype) for every pair: (B, Dc) x (N, Dc) -> (B, N)."""
    if features.ndim == 1:
        features = ad.reshape(features, (1, features.shape[0]))
    logits = ad.cosine_matrix(features, prototypes) - 1.0
    return logits if scale == 1.0 else ad.scale(logits, scale)


def _nll(logits: ad.Tensor, targets: np.ndarray) -> ad.Tensor:
    logp = ad.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(targets)), targets]
    return -ad.mean(picked)


def loss_ce(Zc: ad.Tensor, C: ad.Tensor, targets, V: ad.Tensor | None = None, scale: float = 1.0) -> ad.Tensor:
    """Cross entropy over -d(Zc, C^k); with ``V`` the softmax runs over C then V."""
    targets = _check_targets(targets, C.shape[0])
    protos = C if V is None else ad.concat([C, V], axis=0)
    return _nll(distance_logits(Zc, protos, scale), targets)


def loss_pl(Zc: ad.Tensor, C: ad.Tensor, targets) -> ad.Tensor:
    """Squared Euclidean distance to the true-class prototype."""
    targets = _check_targets(targets, C.shape[0])
    if Zc.ndim == 1:
        Zc = ad.reshape(Zc, (1, Zc.shape[0]))
    return ad.mean(ad.squared_distance(Zc, C[targets]))


def balance_targets(Z: np.ndarray, prototypes: np.ndarray, targets, parts_per_class: int,
                    epsilon: float = DEFAULT_EPSILON, max_iters: int = 1000, rounding: str = "argmax",
                    tol: float = 1e-6) -> np.ndarray:
    """Per-point prototype index (0..M-1) within each sample's own class.

    Scores are raw dot products between point features and the class's part
    prototypes, balanced by Sinkhorn. ``rounding`` is ``argmax`` (per point)
    or ``balanced`` (greedy capacity-respecting).
    """
    targets = np.asarray(targets, dtype=int)
    M = parts_per_class
    P = prototypes.reshape(-1, M, prototypes.shape[-1])[targets]
    scores = np.einsum("bld,bmd->blm", Z, P)
    plan = sinkhorn_assign(scores, epsilon=epsilon, max_iters=max_iters, tol=tol).plan
    if rounding == "argmax":
        return hard_assign(plan)
    if rounding == "balanced":
        return np.stack([round_balanced(p) for p in plan])
    raise ValueError(f"unknown rounding {rounding!r}")


def loss_pb(Z: ad.Tensor, prototypes: ad.Tensor, targets, assignments: np.ndarray, parts_per_class: int,
            tau: float = 0.1) -> ad.Tensor:
    """Pull each point toward its assigned intra-class prototype.

    ``Z`` is (B, L, D); ``assignments`` is (B, L) prototype indices in 0..M-1
    and is treated as a constant.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    M = parts_per_class
    n_classes = prototypes.shape[0] // M
    targets = _check_targets(targets, n_classes)
    assignments = np.asarray(assignments, dtype=int)
    if Z.ndim == 2:
        Z = ad.reshape(Z, (1,) + Z.shape)
        assignments = assignments.reshape(1, -1)
    if assignments.shape != Z.shape[:2]:
        raise ValueError(f"need one assignment per point, got {assignments.shape} for features {Z.shape}")
    P = ad.reshape(prototypes, (n_classes, M, prototypes.shape[-1]))[targets]
    cos = ad.matmul(ad.l2_normalize(Z, eps=POINT_NORM_EPS), ad.transpose(ad.l2_normalize(P)))
    logp = ad.log_softmax(ad.scale(cos - 1.0, 1.0 / tau), axis=-1)
    B, L = assignments.shape
    picked = logp[np.arange(B)[:, None], np.arange(L)[None, :], assignments]
    return -ad.mean(picked)


def loss_pd(prototypes: ad.Tensor, delta: float = 0.1) -> ad.Tensor:
    """Sum over prototypes of max(0, highest cosine to any other prototype - delta)."""
    n = prototypes.shape[0]
    if n < 2:
        raise ValueError("diversity needs at least two prototypes")
    Pn = ad.l2_normalize(prototypes)
    cos = ad.matmul(Pn, ad.transpose(Pn))
    # push the diagonal below any achievable cosine so max skips self-pairs
    cos = cos - 4.0 * np.eye(n)
    nearest = ad.tmax(cos, axis=1)
    return ad.tsum(ad.relu(nearest - delta))


def total_loss(components: dict[str, ad.Tensor], weights: LossWeights) -> ad.Tensor:
    """ce + pl*L_pl + pb*L_pb + pd*L_pd (+ virtual*L_virtual); missing parts count as 0."""
    total = components["ce"]
    for key, w in (("pl", weights.pl), ("pb", weights.pb), ("pd", weights.pd), ("virtual", weights.virtual)):
        if key in components and w != 0:
            total = total + ad.scale(components[key], w)
    return total
