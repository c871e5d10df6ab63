"""Two-stage sample selection over a test batch.

A sample passes when its decoupled entropy loss is strictly below ``tau_dem``
(low-uncertainty stage) and its pseudo-label confidence drop under the
selection transform is strictly above ``tau_pkc`` (augmentation-sensitivity
stage). Selection is a pure function of the two logit batches; weights are
computed for the selected samples from the same per-sample statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import DemParams, WeightParams, dem_loss, pkc_score, sample_weight
from .numerics import check_logits, softmax

__all__ = ["SelectionThresholds", "SelectionOutcome", "select_batch"]


@dataclass(frozen=True)
class SelectionThresholds:
    """Strict thresholds for the two selection stages."""

    tau_dem: float = 0.4
    tau_pkc: float = 0.05

    def __post_init__(self):
        if self.tau_dem < 0:
            raise ValueError(f"tau_dem must be non-negative, got {self.tau_dem}")


@dataclass(frozen=True)
class SelectionOutcome:
    """Per-sample mask, stage statistics, and weights (valid where selected)."""

    mask: np.ndarray
    l_dem: np.ndarray
    l_pkc: np.ndarray
    weights: np.ndarray

    @property
    def n_selected(self) -> int:
        return int(self.mask.sum())


def select_batch(
    logits_orig,
    logits_pkc,
    thresholds: SelectionThresholds = SelectionThresholds(),
    dem_params: DemParams = DemParams(),
    weight_params: WeightParams = WeightParams(),
) -> SelectionOutcome:
    """Apply both selection stages to a batch of logits.

    ``logits_orig`` come from the original inputs, ``logits_pkc`` from their
    selection transforms; both are ``(N, C)``. The mask is
    ``(dem_loss < tau_dem) & (pkc_score > tau_pkc)`` with strict inequalities.
    """
    z = np.atleast_2d(check_logits(logits_orig))
    zp = np.atleast_2d(check_logits(logits_pkc))
    if z.shape != zp.shape:
        raise ValueError(f"batch shape mismatch: {z.shape} vs {zp.shape}")
    l_dem = np.atleast_1d(dem_loss(z, dem_params))
    l_pkc = np.atleast_1d(pkc_score(softmax(z), softmax(zp)))
    mask = (l_dem < thresholds.tau_dem) & (l_pkc > thresholds.tau_pkc)
    weights = sample_weight(l_dem, l_pkc, weight_params.sigma)
    return SelectionOutcome(mask=mask, l_dem=l_dem, l_pkc=l_pkc, weights=np.atleast_1d(weights))
