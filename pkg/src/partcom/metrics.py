"""Open-set decision rule, confidence scores, ACC and OSCR.

Labels here follow the dataset convention: 1..K for known classes and K+1
for unknown.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreRecord:
    true_label: int
    predicted_label: int
    confidence: float


@dataclass
class OscrCurve:
    fpr: np.ndarray
    ccr: np.ndarray
    area: float


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise MetricError("degenerate (zero) feature vector")
    return x / norms


def prototype_similarities(features: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    return _unit_rows(features) @ _unit_rows(prototypes).T


def predict(features: np.ndarray, C: np.ndarray, V: np.ndarray) -> np.ndarray:
    """argmax over the 2K prototypes [C; V]; indices past K map to K+1 (ties: lowest index)."""
    K = C.shape[0]
    sims = prototype_similarities(features, np.concatenate([C, V], axis=0))
    k = np.argmax(sims, axis=1) + 1
    return np.where(k > K, K + 1, k)


def predict_closed(features: np.ndarray, C: np.ndarray) -> np.ndarray:
    """K-way argmax over class prototypes only, labels 1..K."""
    return np.argmax(prototype_similarities(features, C), axis=1) + 1


def margin_confidence(features: np.ndarray, C: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Best class-prototype similarity minus best virtual-prototype similarity."""
    return prototype_similarities(features, C).max(axis=1) - prototype_similarities(features, V).max(axis=1)


def max_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.atleast_2d(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return (p / p.sum(axis=1, keepdims=True)).max(axis=1)


def _split(records: Sequence[ScoreRecord], K: int | None):
    true = np.array([r.true_label for r in records], dtype=int)
    pred = np.array([r.predicted_label for r in records], dtype=int)
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    if K is None:
        K = int(true.max()) - 1 if len(true) else 0
    return true, pred, conf, K


def oscr(records: Sequence[ScoreRecord], K: int | None = None) -> OscrCurve:
    """Correct-classification rate vs false-positive rate over all thresholds.

    A sample is accepted at threshold t when its confidence exceeds t. At a
    tied confidence the known samples are accepted before the unknown ones,
    so the curve is a staircase and its trapezoid area equals the step
    integral. ``K`` defaults to (largest true label) - 1.
    """
    true, pred, conf, K = _split(records, K)
    if not np.all(np.isfinite(conf)):
        raise MetricError("confidences must be finite")
    known = true <= K
    n_known, n_unknown = int(known.sum()), int((~known).sum())
    if n_known == 0 or n_unknown == 0:
        raise MetricError("OSCR needs at least one known and one unknown sample")
    correct = known & (pred == true)

    levels = np.unique(conf)[::-1]
    fpr, ccr = [0.0], [0.0]
    cc = fp = 0
    for level in levels:
        at = conf == level
        cc += int((correct & at).sum())
        ccr.append(cc / n_known)
        fpr.append(fpr[-1])
        fp += int((~known & at).sum())
        fpr.append(fp / n_unknown)
        ccr.append(ccr[-1])
    fpr_a, ccr_a = np.array(fpr), np.array(ccr)
    area = float(np.sum(np.diff(fpr_a) * (ccr_a[1:] + ccr_a[:-1]) / 2.0))
    return OscrCurve(fpr_a, ccr_a, area)


def acc(records: Sequence[ScoreRecord], K: int | None = None) -> float:
    """Fraction of known-class records whose predicted label is correct."""
    true, pred, _, K = _split(records, K)
    known = true <= K
    if not known.any():
        raise MetricError("ACC needs at least one known sample")
    return float(np.mean(pred[known] == true[known]))


def write_records_csv(path: str | Path, records: Iterable[ScoreRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true_label", "pred_label", "confidence"])
        for r in records:
            w.writerow([r.true_label, r.predicted_label, repr(float(r.confidence))])


def read_records_csv(path: str | Path) -> list[ScoreRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [ScoreRecord(int(r["true_label"]), int(r["pred_label"]), float(r["confidence"])) for r in rows]


def write_curve_csv(path: str | Path, curve: OscrCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "ccr"])
        for f, c in zip(curve.fpr, curve.ccr):
            w.writerow([repr(float(f)), repr(float(c))])
