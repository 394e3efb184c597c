"""Networks: the part-prototype open-set model and two baselines.

``PartComModel`` wires encoder -> part head -> class / virtual prototypes.
``PrototypeModel`` is the single-prototype baseline (global max pool, one
prototype per class, same distance-based losses). ``SoftmaxModel`` is a
plain linear classifier on the pooled feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import metrics
from .backbone import PointEncoder, init_linear
from .losses import LossWeights, balance_targets, loss_ce, loss_pb, loss_pd, loss_pl
from .part_head import PartHead
from .pufs import MixConfig, loss_ce_virtual, sample_pairs, synthesize


@dataclass
class Scores:
    predicted: np.ndarray       # open-set labels 1..K+1
    closed: np.ndarray          # K-way labels 1..K
    confidence: np.ndarray


def _init_bank(rng: np.random.Generator, n: int, dim: int) -> ad.Tensor:
    return ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n, dim)), requires_grad=True)


class _Base:
    n_classes: int
    encoder: PointEncoder

    def named_parameters(self) -> dict[str, ad.Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[ad.Tensor]:
        return list(self.named_parameters().values())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(arrays) != set(params):
            raise KeyError(f"parameter names differ: {sorted(set(arrays) ^ set(params))}")
        for name, t in params.items():
            if arrays[name].shape != t.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {t.shape}")
            t.data = np.array(arrays[name], dtype=np.float64, copy=True)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def encode(self, points, neighborhoods=None) -> ad.Tensor:
        return self.encoder(points, neighborhoods)


class PartComModel(_Base):
    def __init__(self, n_classes: int, feature_dim: int = 64, parts_per_class: int = 4, reduced_dim: int = 16,
                 radius: float = 0.3, fusion: str = "cat", use_pb: bool = True, use_pd: bool = True,
                 pufs: bool = True, ce_2k: bool = True, weights: LossWeights | None = None,
                 mix: MixConfig = MixConfig(), epsilon: float = 0.05, sinkhorn_iters: int = 1000,
                 rounding: str = "argmax", init_gain: float = 1.0, similarity: str = "dot",
                 similarity_scale: float = 10.0, seed: int = 0):
        seeds = np.random.SeedSequence(seed).spawn(3)
        self.n_classes = n_classes
        self.encoder = PointEncoder(feature_dim, radius, seed=int(seeds[0].generate_state(1)[0]), init_gain=init_gain)
        self.head = PartHead(n_classes, feature_dim, parts_per_class, reduced_dim, fusion, similarity,
                             similarity_scale, seed=int(seeds[1].generate_state(1)[0]))
        rng = np.random.default_rng(seeds[2])
        dc = self.head.output_dim
        self.C = _init_bank(rng, n_classes, dc)
        self.V = _init_bank(rng, n_classes, dc) if pufs else None
        self.use_pb, self.use_pd, self.pufs, self.ce_2k = use_pb, use_pd, pufs, ce_2k
        self.weights = weights or LossWeights()
        self.mix = mix
        self.epsilon, self.sinkhorn_iters, self.rounding = epsilon, sinkhorn_iters, rounding

    @property
    def parts_per_class(self) -> int:
        return self.head.parts_per_class

    def named_parameters(self) -> dict[str, ad.Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"head.{k}": v for k, v in self.head.params.items()})
        out["C"] = self.C
        if self.V is not None:
            out["V"] = self.V
        return out

    def forward(self, points, neighborhoods=None) -> dict[str, ad.Tensor]:
        Z = self.encode(points, neighborhoods)
        out = self.head(Z)
        out["Z"] = Z
        return out

    def loss_components(self, out: dict[str, ad.Tensor], targets: np.ndarray,
                        rng: np.random.Generator) -> dict[str, ad.Tensor]:
        Zc, Z = out["Zc"], out["Z"]
        V = self.V if (self.pufs and self.ce_2k) else None
        comps = {"ce": loss_ce(Zc, self.C, targets, V, self.weights.scale), "pl": loss_pl(Zc, self.C, targets)}
        if self.use_pb:
            assignments = balance_targets(Z.data, self.head.prototypes.data, targets, self.parts_per_class,
                                          self.epsilon, self.sinkhorn_iters, self.rounding)
            comps["pb"] = loss_pb(Z, self.head.prototypes, targets, assignments, self.parts_per_class,
                                  self.weights.tau)
        if self.use_pd:
            comps["pd"] = loss_pd(self.head.prototypes, self.weights.delta)
        if self.pufs:
            pairs = sample_pairs(targets, rng, self.mix)
            if pairs is not None:
                Zvc = self.head.reduce(synthesize(out["Zp"], targets, *pairs))
                comps["virtual"] = loss_ce_virtual(Zvc, self.C, self.V, targets, self.weights.scale)
        return comps

    def score(self, points, neighborhoods=None) -> Scores:
        Zc = self.forward(points, neighborhoods)["Zc"].data
        C = self.C.data
        closed = metrics.predict_closed(Zc, C)
        if self.pufs:
            return Scores(metrics.predict(Zc, C, self.V.data), closed, metrics.margin_confidence(Zc, C, self.V.data))
        conf = metrics.max_softmax(self.weights.scale * (metrics.prototype_similarities(Zc, C) - 1.0))
        return Scores(closed, closed, conf)

    def part_usage(self, points, targets, neighborhoods=None) -> np.ndarray:
        """Per-point argmax over each sample's own-class part prototypes, (B, L)."""
        S = self.forward(points, neighborhoods)["S"].data          # (B, KM, L)
        M = self.parts_per_class
        idx = np.asarray(targets)[:, None] * M + np.arange(M)[None, :]
        block = np.take_along_axis(S, idx[:, :, None], axis=1)     # (B, M, L)
        return np.argmax(np.swapaxes(block, 1, 2), axis=-1)


class PrototypeModel(_Base):
    """Single-prototype-per-class baseline on the max-pooled point feature."""

    def __init__(self, n_classes: int, feature_dim: int = 64, embed_dim: int = 320, radius: float = 0.3,
                 weights: LossWeights | None = None, init_gain: float = 1.0, seed: int = 0):
        seeds = np.random.SeedSequence(seed).spawn(3)
        self.n_classes = n_classes
        self.encoder = PointEncoder(feature_dim, radius, seed=int(seeds[0].generate_state(1)[0]), init_gain=init_gain)
        w, b = init_linear(np.random.default_rng(seeds[1]), feature_dim, embed_dim)
        self.proj = {"w": w, "b": b}
        self.C = _init_bank(np.random.default_rng(seeds[2]), n_classes, embed_dim)
        self.weights = weights or LossWeights()

    def named_parameters(self) -> dict[str, ad.Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"proj.{k}": v for k, v in self.proj.items()})
        out["C"] = self.C
        return out

    def forward(self, points, neighborhoods=None) -> dict[str, ad.Tensor]:
        Z = self.encode(points, neighborhoods)
        if Z.ndim == 2:
            Z = ad.reshape(Z, (1,) + Z.shape)
        pooled = ad.tmax(Z, axis=1)
        return {"Z": Z, "Zc": ad.affine(pooled, self.proj["w"], self.proj["b"])}

    def loss_components(self, out, targets, rng) -> dict[str, ad.Tensor]:
        return {"ce": loss_ce(out["Zc"], self.C, targets, scale=self.weights.scale),
                "pl": loss_pl(out["Zc"], self.C, targets)}

    def score(self, points, neighborhoods=None) -> Scores:
        Zc = self.forward(points, neighborhoods)["Zc"].data
        closed = metrics.predict_closed(Zc, self.C.data)
        conf = metrics.max_softmax(self.weights.scale * (metrics.prototype_similarities(Zc, self.C.data) - 1.0))
        return Scores(closed, closed, conf)


class SoftmaxModel(_Base):
    """Closed-set linear classifier; confidence is the max softmax probability."""

    def __init__(self, n_classes: int, feature_dim: int = 64, radius: float = 0.3, init_gain: float = 1.0,
                 seed: int = 0):
        seeds = np.random.SeedSequence(seed).spawn(2)
        self.n_classes = n_classes
        self.encoder = PointEncoder(feature_dim, radius, seed=int(seeds[0].generate_state(1)[0]), init_gain=init_gain)
        w, b = init_linear(np.random.default_rng(seeds[1]), feature_dim, n_classes)
        self.fc = {"w": w, "b": b}

    def named_parameters(self) -> dict[str, ad.Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"fc.{k}": v for k, v in self.fc.items()})
        return out

    def forward(self, points, neighborhoods=None) -> dict[str, ad.Tensor]:
        Z = self.encode(points, neighborhoods)
        if Z.ndim == 2:
            Z = ad.reshape(Z, (1,) + Z.shape)
        return {"Z": Z, "logits": ad.affine(ad.tmax(Z, axis=1), self.fc["w"], self.fc["b"])}

    def loss_components(self, out, targets, rng) -> dict[str, ad.Tensor]:
        logp = ad.log_softmax(out["logits"], axis=-1)
        return {"ce": -ad.mean(logp[np.arange(len(targets)), np.asarray(targets)])}

    def score(self, points, neighborhoods=None) -> Scores:
        logits = self.forward(points, neighborhoods)["logits"].data
        closed = np.argmax(logits, axis=1) + 1
        return Scores(closed, closed, metrics.max_softmax(logits))


class Adam:
    def __init__(self, params: list[ad.Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
