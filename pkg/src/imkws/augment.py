"""Masking augmentations over 2-D feature grids and multi-view generation.

A feature grid is a ``(T, F)`` float array (time frames by feature bins).
Masks zero a contiguous band along one axis; band length is drawn uniformly
from ``{0, ..., max_len}`` (a zero-length draw leaves the grid untouched) and
the start uniformly over the valid positions ``[0, axis_len - length]``.
Masked cells are set to 0, never filled or amplified.

Randomness comes from an explicit ``numpy.random.Generator``; view generation
derives disjoint substreams via ``Generator.spawn`` so each view (and each
sample in a batch) owns its own counter-based stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MaskPolicy", "time_mask", "freq_mask", "make_views", "check_grid"]


def check_grid(x) -> np.ndarray:
    """Validate a (T, F) feature grid: 2-D, finite, non-degenerate."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"feature grid must be 2-D with positive dims, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature grid entries must be finite")
    return x


@dataclass(frozen=True)
class MaskPolicy:
    """How many time/frequency masks to draw and their maximum lengths."""

    n_time_masks: int = 2
    max_time_len: int = 20
    n_freq_masks: int = 2
    max_freq_len: int = 5

    def __post_init__(self):
        if self.n_time_masks < 0 or self.n_freq_masks < 0:
            raise ValueError("mask counts must be non-negative")
        if self.max_time_len < 1 or self.max_freq_len < 1:
            raise ValueError("maximum mask lengths must be >= 1")


def _mask_axis(x: np.ndarray, max_len: int, n: int, rng: np.random.Generator, axis: int) -> np.ndarray:
    size = x.shape[axis]
    if max_len > size:
        raise ValueError(f"max mask length {max_len} exceeds axis size {size}")
    out = x.copy()
    for _ in range(n):
        length = int(rng.integers(0, max_len + 1))
        start = int(rng.integers(0, size - length + 1))
        if axis == 0:
            out[start : start + length, :] = 0.0
        else:
            out[:, start : start + length] = 0.0
    return out


def time_mask(x, max_len: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Zero ``n`` independently drawn contiguous time bands; input untouched."""
    return _mask_axis(check_grid(x), max_len, n, rng, axis=0)


def freq_mask(x, max_len: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Zero ``n`` independently drawn contiguous frequency bands; input untouched."""
    return _mask_axis(check_grid(x), max_len, n, rng, axis=1)


def apply_policy(x, policy: MaskPolicy, rng: np.random.Generator) -> np.ndarray:
    """Apply the full policy: time masks first, then frequency masks."""
    out = time_mask(x, policy.max_time_len, policy.n_time_masks, rng)
    return freq_mask(out, policy.max_freq_len, policy.n_freq_masks, rng)


def make_views(x, policy: MaskPolicy, rng: np.random.Generator):
    """Draw the two consistency views and the selection transform of ``x``.

    Returns ``(x_tilde, x_hat, x_prime)``, three independent applications of
    the same policy on disjoint substreams of ``rng``. Identical generator
    state yields bit-identical triples.
    """
    x = check_grid(x)
    sub_tilde, sub_hat, sub_prime = rng.spawn(3)
    return (
        apply_policy(x, policy, sub_tilde),
        apply_policy(x, policy, sub_hat),
        apply_policy(x, policy, sub_prime),
    )
