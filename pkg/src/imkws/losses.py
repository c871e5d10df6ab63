"""Adaptation loss terms, their analytic logit gradients, and sample weighting.

The decoupled entropy loss splits Shannon entropy into a reward branch
``-sum_i p_i z_i`` (softened with a temperature ``tau``) and a penalty branch
``log sum_i exp(z_i)`` (scaled by ``alpha``). At ``tau = alpha = 1`` the sum is
exactly the entropy of ``softmax(z)``. ``alpha < 1`` subtracts a constant
margin ``1 - alpha`` inside the gradient, weakening the downward push on
non-target logits that otherwise drives majority-class overconfidence.

All operations accept one logit vector ``(C,)`` or a batch ``(..., C)`` and
reduce along the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import check_logits, check_probs, log_prob, log_sum_exp, softmax

__all__ = [
    "DemParams",
    "WeightParams",
    "reward_term",
    "penalty_term",
    "dem_loss",
    "dem_grad",
    "sce_loss",
    "consistency_loss",
    "consistency_grad",
    "pkc_score",
    "sample_weight",
    "total_loss",
]


@dataclass(frozen=True)
class DemParams:
    """Decoupled-entropy hyperparameters: reward temperature and penalty scale."""

    tau: float = 1.0
    alpha: float = 0.8

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class WeightParams:
    """Sample-weight normalization factor and consistency coefficient."""

    sigma: float = 0.5
    lam: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")


def reward_term(z, tau: float = 1.0):
    """Reward branch: -sum_i softmax(z, tau)_i * z_i."""
    z = check_logits(z)
    out = -(softmax(z, tau) * z).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def penalty_term(z, alpha: float = 1.0):
    """Penalty branch: alpha * log sum_i exp(z_i), with alpha in (0, 1]."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return alpha * log_sum_exp(z)


def dem_loss(z, params: DemParams = DemParams()):
    """Decoupled entropy loss: reward_term(z, tau) + penalty_term(z, alpha).

    Equals entropy(softmax(z)) exactly when tau = alpha = 1. Can be negative
    for alpha < 1.
    """
    return reward_term(z, params.tau) + penalty_term(z, params.alpha)


def dem_grad(z, alpha: float, tau: float = 1.0) -> np.ndarray:
    """Analytic gradient of dem_loss with respect to the logits.

    At tau = 1 this is the closed form p_j * (sum_i p_i z_i - z_j - (1 - alpha));
    the ``1 - alpha`` margin is what throttles the suppression of non-target
    logits. For tau != 1 the general form is
    ``-p_tau,j * (1 + (z_j - sum_i p_tau,i z_i) / tau) + alpha * p_j``.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    z = check_logits(z)
    p = softmax(z)
    if tau == 1.0:
        m = (p * z).sum(axis=-1, keepdims=True)
        return p * (m - z - (1.0 - alpha))
    p_t = softmax(z, tau)
    m_t = (p_t * z).sum(axis=-1, keepdims=True)
    return -p_t * (1.0 + (z - m_t) / tau) + alpha * p


def sce_loss(z, z_tilde):
    """Symmetric cross-entropy between softmax(z) and softmax(z_tilde).

    -1/2 * (sum_i p_i log q_i + sum_i q_i log p_i); symmetric in its two
    arguments and equal to entropy(softmax(z)) when z_tilde == z.
    """
    p = softmax(check_logits(z))
    q = softmax(check_logits(z_tilde))
    out = -0.5 * ((p * log_prob(q)).sum(axis=-1) + (q * log_prob(p)).sum(axis=-1))
    return float(out) if out.ndim == 0 else out


def consistency_loss(z, z_tilde, z_hat):
    """Multi-view consistency: sce_loss(z, z_tilde) + sce_loss(z, z_hat)."""
    return sce_loss(z, z_tilde) + sce_loss(z, z_hat)


def _sce_grad_pair(z: np.ndarray, zt: np.ndarray):
    """Gradients of sce_loss(z, zt) with respect to z and zt."""
    p = softmax(z)
    q = softmax(zt)
    logp = log_prob(p)
    logq = log_prob(q)
    ep_logq = (p * logq).sum(axis=-1, keepdims=True)
    eq_logp = (q * logp).sum(axis=-1, keepdims=True)
    d_z = -0.5 * (p * (logq - ep_logq) + q - p)
    d_zt = -0.5 * (q * (logp - eq_logp) + p - q)
    return d_z, d_zt


def consistency_grad(z, z_tilde, z_hat):
    """Gradients of consistency_loss with respect to each of its three inputs.

    Gradients flow through all three logit vectors (no stop-gradient); the
    gradient with respect to z_tilde has no contribution from the (z, z_hat)
    term and vice versa.
    """
    z = check_logits(z)
    zt = check_logits(z_tilde)
    zh = check_logits(z_hat)
    d_z1, d_zt = _sce_grad_pair(z, zt)
    d_z2, d_zh = _sce_grad_pair(z, zh)
    return d_z1 + d_z2, d_zt, d_zh


def pkc_score(p, p_prime):
    """Confidence drop of the pseudo-label class between two distributions.

    c = argmax of ``p`` (ties broken by lowest index); returns p_c - p'_c,
    always in [-1, 1].
    """
    p = check_probs(p)
    pp = check_probs(p_prime)
    if p.shape != pp.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {pp.shape}")
    c = np.argmax(p, axis=-1)
    out = np.take_along_axis(p, c[..., None], axis=-1)[..., 0] - np.take_along_axis(
        pp, c[..., None], axis=-1
    )[..., 0]
    return float(out) if out.ndim == 0 else out


def sample_weight(l_dem, l_pkc, sigma: float = 0.5):
    """Per-sample weight exp(sigma - l_dem) + exp(l_pkc).

    Strictly positive, strictly decreasing in l_dem and strictly increasing
    in l_pkc.
    """
    out = np.exp(sigma - np.asarray(l_dem, dtype=np.float64)) + np.exp(
        np.asarray(l_pkc, dtype=np.float64)
    )
    return float(out) if out.ndim == 0 else out


def total_loss(
    selected: Sequence[tuple],
    params: DemParams = DemParams(),
    wparams: WeightParams = WeightParams(),
) -> tuple[float, bool]:
    """Mean weighted objective over selected samples.

    ``selected`` holds ``(z, z_tilde, z_hat, l_dem, l_pkc)`` tuples; each
    contributes ``sample_weight(l_dem, l_pkc, sigma) * dem_loss(z) +
    lam * consistency_loss(z, z_tilde, z_hat)``. Returns ``(loss, skip)``
    where ``skip`` is True for an empty selection (no update should be taken).
    Accumulation runs in index order for bit-reproducibility.
    """
    if len(selected) == 0:
        return 0.0, True
    acc = 0.0
    for z, z_tilde, z_hat, l_dem, l_pkc in selected:
        w = sample_weight(l_dem, l_pkc, wparams.sigma)
        term = w * dem_loss(z, params)
        if wparams.lam != 0.0:
            term += wparams.lam * consistency_loss(z, z_tilde, z_hat)
        acc += term
    return acc / len(selected), False
