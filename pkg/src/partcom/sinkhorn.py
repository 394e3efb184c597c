"""Balanced point-to-prototype assignment by log-domain Sinkhorn-Knopp.

Solves  max_G  <G, scores> + eps * H(G)  subject to  G 1_M = 1_L  and
G^T 1_L = (L/M) 1_M.  Inputs are plain arrays; the plan is always a constant
target downstream, so nothing here touches the autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 0.05
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 1000
DEFAULT_RELAXATION = 1.5
DEFAULT_ANNEAL = 0.8


class SinkhornNumericalError(FloatingPointError):
    pass


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))


@dataclass
class Assignment:
    plan: np.ndarray
    converged: bool
    iterations: int
    violation: float


def sinkhorn_assign(scores: np.ndarray, epsilon: float = DEFAULT_EPSILON, max_iters: int = DEFAULT_MAX_ITERS,
                    tol: float = DEFAULT_TOL, check_every: int = 5, relaxation: float = DEFAULT_RELAXATION,
                    anneal: float = DEFAULT_ANNEAL) -> Assignment:
    """Entropic balanced assignment for one (L, M) or a batch (B, L, M) of problems.

    Two standard accelerations leave the fixed point unchanged: the dual
    updates are over-relaxed by ``relaxation`` (1 = plain Sinkhorn), and the
    temperature starts at the score range and shrinks by ``anneal`` per
    iteration down to ``epsilon`` (``anneal=None`` disables this). Iteration
    stops once every problem's largest marginal violation is below ``tol``;
    otherwise the last plan is returned with ``converged=False``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0 < relaxation < 2:
        raise ValueError(f"relaxation must lie in (0, 2), got {relaxation}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    single = scores.ndim == 2
    if single:
        scores = scores[None]
    _, L, M = scores.shape
    log_col = np.log(L / M)
    # potentials are kept in score units so they carry over between temperatures
    F = np.zeros(scores.shape[:2] + (1,))
    G = np.zeros(scores.shape[:1] + (1, M))
    eps = max(epsilon, float(np.ptp(scores))) if anneal else epsilon
    w = relaxation
    violation = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        log_k = scores / eps
        f = (1 - w) * F / eps - w * _lse(log_k + G / eps, axis=2)
        g = (1 - w) * G / eps + w * (log_col - _lse(log_k + f, axis=1))
        F, G = f * eps, g * eps
        if eps > epsilon and it != max_iters:
            eps = max(epsilon, eps * anneal)
            continue
        if it % check_every and it != max_iters:
            continue
        # measure on one plain step: columns become exact and rows carry the residual
        pf = -_lse(log_k + g, axis=2)
        pg = log_col - _lse(log_k + pf, axis=1)
        rows = np.exp(_lse(log_k + pf + pg, axis=2))
        violation = float(np.max(np.abs(rows - 1.0)))
        if not np.isfinite(violation):
            raise SinkhornNumericalError("NaN encountered during Sinkhorn scaling")
        if violation < tol:
            F, G = pf * eps, pg * eps
            break
    plan = np.exp((scores + F + G) / eps)
    return Assignment(plan[0] if single else plan, violation < tol, it, violation)


def marginal_violation(plan: np.ndarray) -> tuple[float, float]:
    """(row violation, column violation) in the max norm."""
    L, M = plan.shape[-2:]
    rows = np.max(np.abs(plan.sum(axis=-1) - 1.0))
    cols = np.max(np.abs(plan.sum(axis=-2) - L / M))
    return float(rows), float(cols)


def hard_assign(plan: np.ndarray) -> np.ndarray:
    """Per-point argmax; ties go to the lowest prototype index."""
    return np.argmax(plan, axis=-1)


def round_balanced(plan: np.ndarray) -> np.ndarray:
    """Greedy capacity-respecting rounding of a single (L, M) plan.

    Entries are visited from largest to smallest; a point takes a prototype
    if it is still unassigned and the prototype has capacity left. The
    capacities are ceil(L/M) for the first L mod M prototypes, floor after.
    """
    L, M = plan.shape
    base, extra = divmod(L, M)
    capacity = np.array([base + (1 if j < extra else 0) for j in range(M)])
    labels = np.full(L, -1)
    for flat in np.argsort(-plan, axis=None, kind="stable"):
        i, j = divmod(int(flat), M)
        if labels[i] < 0 and capacity[j] > 0:
            labels[i] = j
            capacity[j] -= 1
    return labels


def assignment_objective(scores: np.ndarray, labels: np.ndarray) -> float:
    return float(scores[np.arange(len(labels)), labels].sum())


def entropy(plan: np.ndarray) -> float:
    p = plan[plan > 0]
    return float(-(p * np.log(p)).sum())

