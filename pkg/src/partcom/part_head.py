"""Class-specific part prototypes and the part-aware feature.

Prototypes are stored flattened as a (K*M, D) matrix in class-major order:
row ``k*M + m`` is prototype m of class k (both 0-based).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .backbone import init_linear

DEFAULT_PARTS_PER_CLASS = 4
DEFAULT_REDUCED_DIM = 16
MAX_INIT_COSINE = 0.5
SIMILARITY_SCALE = 10.0
POINT_NORM_EPS = 1e-8


def init_prototypes(rng: np.random.Generator, n: int, dim: int, max_cosine: float = MAX_INIT_COSINE,
                    max_tries: int = 10000) -> np.ndarray:
    """Random unit vectors whose pairwise cosine similarity stays <= ``max_cosine``."""
    out: list[np.ndarray] = []
    for _ in range(max_tries):
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        if all(float(v @ u) <= max_cosine for u in out):
            out.append(v)
            if len(out) == n:
                return np.stack(out)
    raise RuntimeError(f"could not place {n} prototypes in {dim} dims below cosine {max_cosine}")


def similarity_map(prototypes: ad.Tensor, Z: ad.Tensor, kind: str = "dot",
                   scale: float = SIMILARITY_SCALE) -> ad.Tensor:
    """S = column-softmax(P Z^T): (KM, D) x (..., L, D) -> (..., KM, L).

    ``kind="cosine"`` replaces the raw dot product by ``scale * cos(p, z)``,
    which keeps the map sharp when feature norms are small.
    """
    if prototypes.shape[-1] != Z.shape[-1]:
        raise ad.ShapeError(f"prototype width {prototypes.shape} does not match features {Z.shape}")
    if kind == "dot":
        return ad.softmax_columns(ad.matmul(prototypes, ad.transpose(Z)))
    if kind == "cosine":
        cos = ad.matmul(ad.l2_normalize(prototypes), ad.transpose(ad.l2_normalize(Z, eps=POINT_NORM_EPS)))
        return ad.softmax_columns(ad.scale(cos, scale))
    raise ValueError(f"unknown similarity {kind!r}")


def aggregate(S: ad.Tensor, Z: ad.Tensor) -> ad.Tensor:
    """Part composite features Z_p = S Z: (..., KM, L) x (..., L, D) -> (..., KM, D)."""
    if S.shape[-1] != Z.shape[-2]:
        raise ad.ShapeError(f"similarity map {S.shape} does not match features {Z.shape}")
    return ad.matmul(S, Z)


def reduce_concat(Zp: ad.Tensor, weight: ad.Tensor, bias: ad.Tensor | None, fusion: str = "cat") -> ad.Tensor:
    """Row-wise (D -> D_r) layer, then fuse the KM rows.

    ``cat`` flattens rows in class-major order to (..., KM*D_r); ``max``
    max-pools over rows to (..., D_r) and exists for ablations.
    """
    if Zp.shape[-1] != weight.shape[0]:
        raise ad.ShapeError(f"reducer expects width {weight.shape[0]}, got {Zp.shape}")
    reduced = ad.affine(Zp, weight, bias)
    if fusion == "cat":
        return ad.reshape(reduced, reduced.shape[:-2] + (reduced.shape[-2] * reduced.shape[-1],))
    if fusion == "max":
        return ad.tmax(reduced, axis=-2)
    raise ValueError(f"unknown fusion {fusion!r}")


@dataclass
class PartHead:
    n_classes: int
    feature_dim: int
    parts_per_class: int = DEFAULT_PARTS_PER_CLASS
    reduced_dim: int = DEFAULT_REDUCED_DIM
    fusion: str = "cat"
    similarity: str = "dot"
    similarity_scale: float = SIMILARITY_SCALE
    seed: int = 0
    params: dict[str, ad.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.fusion not in ("cat", "max"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if not self.params:
            rng = np.random.default_rng(self.seed)
            n = self.n_classes * self.parts_per_class
            self.params["prototypes"] = ad.Tensor(init_prototypes(rng, n, self.feature_dim), requires_grad=True)
            self.params["reducer_w"], self.params["reducer_b"] = init_linear(rng, self.feature_dim, self.reduced_dim)

    @property
    def output_dim(self) -> int:
        if self.fusion == "max":
            return self.reduced_dim
        return self.n_classes * self.parts_per_class * self.reduced_dim

    @property
    def prototypes(self) -> ad.Tensor:
        return self.params["prototypes"]

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def class_prototypes(self, k: int) -> np.ndarray:
        M = self.parts_per_class
        return self.prototypes.data[k * M:(k + 1) * M]

    def reduce(self, Zp: ad.Tensor) -> ad.Tensor:
        return reduce_concat(Zp, self.params["reducer_w"], self.params["reducer_b"], self.fusion)

    def __call__(self, Z: ad.Tensor) -> dict[str, ad.Tensor]:
        S = similarity_map(self.prototypes, Z, self.similarity, self.similarity_scale)
        Zp = aggregate(S, Z)
        return {"S": S, "Zp": Zp, "Zc": self.reduce(Zp)}
