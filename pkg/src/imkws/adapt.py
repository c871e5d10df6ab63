"""Online test-time adaptation engine and method registry.

Methods (``unadapted``, ``tbn``, ``tent``, ``imkws``) process one unlabeled
batch at a time in a single pass over the stream. Every method records its
predictions from the forward pass of the current batch BEFORE applying any
update (predict-then-adapt), and model state carries over across batches.

Gradient methods forward in batch-stat mode; augmented views reuse the
original batch's normalization statistics so masked inputs cannot skew them.
The selection mask and the per-sample weights are data-dependent constants:
no gradient flows through them or through the selection-transform forward.
Only ``(gamma, beta)`` are ever updated by gradients.

The engine never reads ground-truth labels; it consumes ``StreamBatch.grids``
only (labels are joined back by the evaluator).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator

from .augment import MaskPolicy, make_views
from .losses import (
    DemParams,
    WeightParams,
    consistency_grad,
    consistency_loss,
    dem_grad,
)
from .numerics import entropy, softmax
from .model import NormPoolClassifier, ParamGrads, update_bn_stats
from .select import SelectionOutcome, SelectionThresholds, select_batch

__all__ = [
    "METHODS",
    "AdaptConfig",
    "BatchRecord",
    "AdaptTrace",
    "OnlineAdapter",
    "step_imkws",
    "step_tent",
    "step_tbn",
    "step_unadapted",
    "adapt_stream",
]

METHODS = ("unadapted", "tbn", "tent", "imkws")


@dataclass(frozen=True)
class AdaptConfig:
    """Everything one adaptation run needs besides the model and the stream."""

    method: str = "imkws"
    dem: DemParams = DemParams()
    weights: WeightParams = WeightParams()
    thresholds: SelectionThresholds = SelectionThresholds()
    mask_policy: MaskPolicy = MaskPolicy()
    lr: float = 1e-4
    batch_size: int = 128
    use_dem: bool = True
    use_consistency: bool = True
    use_selection: bool = True
    force_unit_weights: bool = False
    refresh_stats: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class BatchRecord:
    batch_index: int
    n_selected: int
    loss: float
    grad_norm: float


@dataclass
class AdaptTrace:
    """Per-batch telemetry of one adaptation run."""

    records: list[BatchRecord] = field(default_factory=list)

    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("batch,n_selected,loss,grad_norm\n")
            for r in self.records:
                fh.write(f"{r.batch_index},{r.n_selected},{float(r.loss)!r},{float(r.grad_norm)!r}\n")

    def to_json(self, path) -> None:
        payload = [
            {
                "batch": r.batch_index,
                "n_selected": r.n_selected,
                "loss": float(r.loss),
                "grad_norm": float(r.grad_norm),
            }
            for r in self.records
        ]
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def _effective_dem(config: AdaptConfig) -> DemParams:
    """Objective/selection entropy parameters, honoring the use_dem ablation."""
    return config.dem if config.use_dem else DemParams(tau=1.0, alpha=1.0)


def step_imkws(
    model: NormPoolClassifier, grids: np.ndarray, config: AdaptConfig, rng: np.random.Generator
) -> tuple[np.ndarray, BatchRecord, SelectionOutcome]:
    """One full adaptation step: views, selection, weighted objective, update."""
    n = len(grids)
    views = [make_views(grids[i], config.mask_policy, sub) for i, sub in enumerate(rng.spawn(n))]
    x_tilde = np.stack([v[0] for v in views])
    x_hat = np.stack([v[1] for v in views])
    x_prime = np.stack([v[2] for v in views])

    z, cache = model.forward(grids, mode="batch-stat")
    mu, v = cache["stats"]
    z_tilde, cache_t = model.forward(x_tilde, stats=(mu, v))
    z_hat, cache_h = model.forward(x_hat, stats=(mu, v))
    z_prime, _ = model.forward(x_prime, stats=(mu, v))
    preds = np.argmax(z, axis=-1)

    dem_eff = _effective_dem(config)
    outcome = select_batch(z, z_prime, config.thresholds, dem_eff, config.weights)
    mask = outcome.mask if config.use_selection else np.ones(n, dtype=bool)
    weights = np.ones(n) if config.force_unit_weights else outcome.weights
    lam = config.weights.lam if config.use_consistency else 0.0
    n_sel = int(mask.sum())

    if n_sel > 0:
        d_z = np.zeros_like(z)
        d_z[mask] = weights[mask, None] * dem_grad(z[mask], dem_eff.alpha, dem_eff.tau)
        loss_terms = weights[mask] * outcome.l_dem[mask]
        if lam != 0.0:
            g_z, g_zt, g_zh = consistency_grad(z, z_tilde, z_hat)
            d_zt = np.zeros_like(z)
            d_zh = np.zeros_like(z)
            d_z[mask] += lam * g_z[mask]
            d_zt[mask] = lam * g_zt[mask]
            d_zh[mask] = lam * g_zh[mask]
            loss_terms = loss_terms + lam * np.atleast_1d(consistency_loss(z, z_tilde, z_hat))[mask]
        d_z /= n_sel
        grads = model.backward_affine(cache, d_z)
        if lam != 0.0:
            d_zt /= n_sel
            d_zh /= n_sel
            grads = grads + model.backward_affine(cache_t, d_zt) + model.backward_affine(cache_h, d_zh)
        loss = float(loss_terms.mean())
        grad_norm = grads.l2_norm()
        model.apply_affine_update(grads, config.lr)
    else:
        loss, grad_norm = 0.0, 0.0

    if config.refresh_stats:
        model.set_running_stats(mu, v)
    record = BatchRecord(batch_index=-1, n_selected=n_sel, loss=loss, grad_norm=grad_norm)
    return preds, record, outcome


def step_tent(
    model: NormPoolClassifier, grids: np.ndarray, config: AdaptConfig
) -> tuple[np.ndarray, BatchRecord]:
    """Entropy minimization over the batch, affine parameters only."""
    n = len(grids)
    z, cache = model.forward(grids, mode="batch-stat")
    mu, v = cache["stats"]
    preds = np.argmax(z, axis=-1)
    d_z = dem_grad(z, alpha=1.0, tau=1.0) / n
    grads = model.backward_affine(cache, d_z)
    loss = float(np.mean(entropy(softmax(z))))
    model.apply_affine_update(grads, config.lr)
    if config.refresh_stats:
        model.set_running_stats(mu, v)
    return preds, BatchRecord(batch_index=-1, n_selected=n, loss=loss, grad_norm=grads.l2_norm())


def step_tbn(model: NormPoolClassifier, grids: np.ndarray) -> tuple[np.ndarray, BatchRecord]:
    """Replace normalization statistics with the batch's; no gradient step."""
    z, _ = model.forward(grids, mode="batch-stat")
    preds = np.argmax(z, axis=-1)
    loss = float(np.mean(entropy(softmax(z))))
    update_bn_stats(model, grids, momentum=1.0)
    return preds, BatchRecord(batch_index=-1, n_selected=0, loss=loss, grad_norm=0.0)


def step_unadapted(model: NormPoolClassifier, grids: np.ndarray) -> tuple[np.ndarray, BatchRecord]:
    """Pure inference with running statistics; the model is never touched."""
    z, _ = model.forward(grids, mode="inference")
    preds = np.argmax(z, axis=-1)
    loss = float(np.mean(entropy(softmax(z))))
    return preds, BatchRecord(batch_index=-1, n_selected=0, loss=loss, grad_norm=0.0)


class OnlineAdapter(BaseEstimator):
    """sklearn-style online wrapper around one adaptation method.

    ``predict_and_adapt(X)`` returns the pre-update predictions for the batch
    and mutates the wrapped model according to the configured method;
    ``partial_fit(X)`` is the same step for pipeline compatibility, and
    ``predict(X)`` is side-effect-free inference with the current state.
    """

    def __init__(self, model: NormPoolClassifier, config: AdaptConfig = AdaptConfig()):
        self.model = model
        self.config = config
        self.trace_ = AdaptTrace()
        self._rng = np.random.Generator(np.random.Philox(config.seed))
        self._batch_counter = 0

    def predict_and_adapt(self, X) -> np.ndarray:
        grids = np.asarray(X, dtype=np.float64)
        method = self.config.method
        if method == "imkws":
            preds, record, _ = step_imkws(self.model, grids, self.config, self._rng)
        elif method == "tent":
            preds, record = step_tent(self.model, grids, self.config)
        elif method == "tbn":
            preds, record = step_tbn(self.model, grids)
        else:
            preds, record = step_unadapted(self.model, grids)
        self.trace_.records.append(
            BatchRecord(self._batch_counter, record.n_selected, record.loss, record.grad_norm)
        )
        self._batch_counter += 1
        return preds

    def partial_fit(self, X, y=None) -> "OnlineAdapter":
        self.predict_and_adapt(X)
        return self

    def predict(self, X) -> np.ndarray:
        return self.model.predict(X)


def adapt_stream(model: NormPoolClassifier, stream: Iterable, config: AdaptConfig):
    """Run one single pass over the stream.

    Returns ``(model, trace, predictions)`` where predictions are recorded in
    stream order from each batch's pre-update forward pass. The model is
    mutated in place (except for method ``unadapted``). Only ``batch.grids``
    is read from the stream's batches; labels stay with the caller.
    """
    adapter = OnlineAdapter(model, config)
    preds_parts: list[np.ndarray] = []
    for batch in stream:
        preds_parts.append(adapter.predict_and_adapt(batch.grids))
    if not preds_parts:
        raise ValueError("empty stream: nothing to adapt to")
    return model, adapter.trace_, np.concatenate(preds_parts)
