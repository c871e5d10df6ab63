"""Numerically stable scalar/vector primitives shared by every loss.

All functions accept a single logit/probability vector (shape ``(C,)``) or a
batch of them (shape ``(..., C)``) and reduce along the last axis, mirroring
``scipy.special.logsumexp`` semantics. Everything is computed in float64.

The probability floor ``PROB_FLOOR`` is the single place in the package where
clamping happens: any ``log(p)`` goes through :func:`log_prob` so that
numerically-zero probabilities cannot produce ``-inf``.
"""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12

__all__ = [
    "PROB_FLOOR",
    "check_logits",
    "check_probs",
    "log_sum_exp",
    "softmax",
    "log_prob",
    "entropy",
]


def check_logits(z) -> np.ndarray:
    """Validate a logit vector (or batch of vectors) and return it as float64.

    Raises ``ValueError`` on non-finite entries or fewer than two classes.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape == () or z.shape[-1] < 2:
        raise ValueError(f"logit vectors need at least 2 classes, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite (found NaN or Inf)")
    return z


def check_probs(p, atol: float = 1e-9) -> np.ndarray:
    """Validate a probability vector (or batch): entries >= 0, rows sum to 1."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape == () or p.shape[-1] < 2:
        raise ValueError(f"probability vectors need at least 2 classes, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite")
    if np.any(p < 0.0):
        raise ValueError("probabilities must be non-negative")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > atol):
        raise ValueError(f"probabilities must sum to 1 within {atol}")
    return p


def log_sum_exp(z) -> np.ndarray | float:
    """log(sum_i exp(z_i)) along the last axis, via the max-shift trick.

    Never overflows for finite input; the result lies in
    [max(z), max(z) + log C].
    """
    z = check_logits(z)
    m = z.max(axis=-1, keepdims=True)
    out = m[..., 0] + np.log(np.exp(z - m).sum(axis=-1))
    return float(out) if out.ndim == 0 else out


def softmax(z, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax along the last axis: exp(z_i/tau) / sum_k exp(z_k/tau).

    Invariant to adding a constant to every logit. ``tau`` must be positive.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = check_logits(z) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_prob(p: np.ndarray) -> np.ndarray:
    """Elementwise log with the package-wide probability floor."""
    return np.log(np.maximum(p, PROB_FLOOR))


def entropy(p) -> np.ndarray | float:
    """Shannon entropy -sum_i p_i log p_i along the last axis, with 0*log 0 := 0.

    Result lies in [0, log C] for a valid probability vector.
    """
    p = check_probs(p)
    out = -(p * log_prob(p)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out
