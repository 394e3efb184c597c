"""Point-set encoder producing one feature row per point.

Layout (per point i, ``N(i)`` = points within ``radius`` of point i, self
included)::

    h1_i = relu(W1 x_i + b1)                       3 -> 64
    c_i  = mean_{j in N(i)} h1_j                   local context
    h2_i = relu(W2 [h1_i, c_i] + b2)               128 -> 128
    z_i  = relu(W3 h2_i + b3)                      128 -> D

Neighbourhoods depend only on coordinates, so they are constant averaging
matrices (kept sparse) and no gradient flows into the point positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import autodiff as ad
from .shapes import is_normalized

DEFAULT_RADIUS = 0.3
DEFAULT_FEATURE_DIM = 64
HIDDEN = (64, 128)


class EncoderInputError(ValueError):
    pass


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> tuple[ad.Tensor, ad.Tensor]:
    bound = gain / np.sqrt(fan_in)
    w = ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = ad.Tensor(rng.uniform(-bound, bound, size=(fan_out,)), requires_grad=True)
    return w, b


def neighborhood_matrix(points: np.ndarray, radius: float = DEFAULT_RADIUS) -> sp.csr_matrix:
    """Row-stochastic L x L matrix averaging each point's radius neighbourhood."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    L = points.shape[0]
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(L)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(L)])
    counts = np.bincount(rows, minlength=L).astype(np.float64)
    vals = 1.0 / counts[rows]
    return sp.csr_matrix((vals, (rows, cols)), shape=(L, L))


def neighborhood_mean(mats: list, h: ad.Tensor) -> ad.Tensor:
    """Per-sample ``A_b @ h_b`` for constant sparse averaging matrices, (B, L, F) -> (B, L, F)."""
    mats = [sp.csr_matrix(A) for A in mats]
    if len(mats) != h.shape[0] or any(A.shape != (h.shape[1], h.shape[1]) for A in mats):
        raise ad.ShapeError(f"{len(mats)} neighbourhood matrices do not fit features {h.shape}")
    out = np.stack([A @ x for A, x in zip(mats, h.data)])

    def backward(g):
        ad._accumulate(h, np.stack([A.T @ gb for A, gb in zip(mats, g)]))

    return ad._make(out, (h,), backward)


@dataclass
class PointEncoder:
    feature_dim: int = DEFAULT_FEATURE_DIM
    radius: float = DEFAULT_RADIUS
    seed: int = 0
    init_gain: float = 1.0
    params: dict[str, ad.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.feature_dim < 8:
            raise ValueError(f"feature_dim must be at least 8, got {self.feature_dim}")
        if not self.params:
            rng = np.random.default_rng(self.seed)
            h1, h2 = HIDDEN
            g = self.init_gain
            self.params["w1"], self.params["b1"] = init_linear(rng, 3, h1, g)
            self.params["w2"], self.params["b2"] = init_linear(rng, 2 * h1, h2, g)
            self.params["w3"], self.params["b3"] = init_linear(rng, h2, self.feature_dim, g)

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def neighborhoods(self, points: np.ndarray) -> sp.csr_matrix:
        return neighborhood_matrix(points, self.radius)

    def __call__(self, points: np.ndarray, neighborhoods: list[sp.csr_matrix] | None = None,
                 check: bool = True) -> ad.Tensor:
        """Encode one cloud (L, 3) -> (L, D) or a batch (B, L, 3) -> (B, L, D)."""
        points = np.asarray(points, dtype=np.float64)
        single = points.ndim == 2
        batch = points[None] if single else points
        if batch.ndim != 3 or batch.shape[2] != 3:
            raise EncoderInputError(f"expected (L, 3) or (B, L, 3) points, got {points.shape}")
        if check:
            for cloud in batch:
                if not is_normalized(cloud):
                    raise EncoderInputError("encoder input must be centred with unit max norm")
        if neighborhoods is None:
            neighborhoods = [self.neighborhoods(c) for c in batch]
        B, L, _ = batch.shape
        p = self.params
        h1 = ad.relu(ad.affine(ad.Tensor(batch.reshape(B * L, 3)), p["w1"], p["b1"]))
        ctx = neighborhood_mean(neighborhoods, ad.reshape(h1, (B, L, h1.shape[-1])))
        ctx = ad.reshape(ctx, (B * L, h1.shape[-1]))
        h2 = ad.relu(ad.affine(ad.concat([h1, ctx], axis=-1), p["w2"], p["b2"]))
        z = ad.relu(ad.affine(h2, p["w3"], p["b3"]))
        z = ad.reshape(z, (B, L, self.feature_dim))
        return ad.reshape(z, (L, self.feature_dim)) if single else z
