"""A small manually-differentiated classifier with one affine normalization layer.

Architecture: per-frame linear projection, batch-norm-style normalization with
learnable affine ``(gamma, beta)``, ReLU, temporal mean-pool, linear classifier.
It is the minimal network containing exactly the parameter class that test-time
adaptation mutates: only ``(gamma, beta)`` change during adaptation, everything
else stays frozen.

Forward modes:

* ``"inference"``   - normalize with the stored running statistics.
* ``"batch-stat"``  - normalize with the current batch's per-unit mean/variance
  computed over all frames of all batch items (gradients flow through the
  statistics in :meth:`NormPoolClassifier.backward_full`).

An explicit ``stats=(mean, var)`` argument overrides either mode with fixed
constants, which is how augmented views reuse the statistics of the original
batch.

Checkpoint format (version 1), little-endian throughout::

    bytes 0..7    magic  b"NORMPOOL"
    bytes 8..11   format version, uint32 (= 1)
    bytes 12..23  F, H, C as uint32 each
    then float64 arrays, C-order, in declared order:
        W1 (F*H), b1 (H), gamma (H), beta (H),
        running_mean (H), running_var (H), W2 (H*C), b2 (C)

``eps`` (the variance floor) is the format constant 1e-5 in version 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .numerics import log_prob, softmax

__all__ = [
    "ParamGrads",
    "FullGrads",
    "NormPoolClassifier",
    "sgd_step",
    "update_bn_stats",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_MAGIC = b"NORMPOOL"
CHECKPOINT_VERSION = 1


@dataclass
class ParamGrads:
    """Gradients of the affine normalization parameters."""

    d_gamma: np.ndarray
    d_beta: np.ndarray

    def __add__(self, other: "ParamGrads") -> "ParamGrads":
        return ParamGrads(self.d_gamma + other.d_gamma, self.d_beta + other.d_beta)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.d_gamma**2) + np.sum(self.d_beta**2)))


@dataclass
class FullGrads:
    """Gradients of every trainable parameter (used only for source training)."""

    d_W1: np.ndarray
    d_b1: np.ndarray
    d_gamma: np.ndarray
    d_beta: np.ndarray
    d_W2: np.ndarray
    d_b2: np.ndarray

    def affine(self) -> ParamGrads:
        return ParamGrads(self.d_gamma, self.d_beta)


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """Plain gradient descent: p - lr * g. No momentum, no weight decay."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    return param - lr * grad


def check_feature_batch(X, n_features: int | None = None) -> np.ndarray:
    """Validate a batch of feature grids with shape (N, T, F)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None, :, :]
    if X.ndim != 3:
        raise ValueError(f"expected (N, T, F) feature batch, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature grids must be finite")
    if n_features is not None and X.shape[2] != n_features:
        raise ValueError(f"expected F={n_features} feature bins, got {X.shape[2]}")
    return X


class NormPoolClassifier(BaseEstimator, ClassifierMixin):
    """Linear -> affine normalization -> ReLU -> mean-pool -> linear classifier.

    Parameters follow sklearn conventions: construction stores hyperparameters,
    :meth:`fit` trains from a labeled source set (creating the fitted arrays
    ``W1_, b1_, gamma_, beta_, running_mean_, running_var_, W2_, b2_``), and
    prediction methods require a fitted instance.
    """

    def __init__(
        self,
        n_features: int = 40,
        n_hidden: int = 32,
        n_classes: int = 4,
        eps: float = 1e-5,
        epochs: int = 40,
        lr: float = 0.05,
        batch_size: int = 64,
        bn_momentum: float = 0.1,
        validation_fraction: float = 0.1,
        random_state: int = 0,
    ):
        self.n_features = n_features
        self.n_hidden = n_hidden
        self.n_classes = n_classes
        self.eps = eps
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.bn_momentum = bn_momentum
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    # ------------------------------------------------------------------ state

    def _check_fitted(self):
        if not hasattr(self, "W1_"):
            raise NotFittedError("this NormPoolClassifier instance is not fitted yet")

    def init_params(self, rng: np.random.Generator | None = None) -> "NormPoolClassifier":
        """Seeded initialization: W1 ~ U(-1/sqrt(F), 1/sqrt(F)), zero-init
        classifier head (W2 = b2 = 0 gives exactly uniform initial logits),
        identity affine, standard-normal running statistics."""
        if rng is None:
            rng = np.random.Generator(np.random.Philox(self.random_state))
        F, H, C = self.n_features, self.n_hidden, self.n_classes
        a = 1.0 / np.sqrt(F)
        self.W1_ = rng.uniform(-a, a, size=(F, H))
        self.b1_ = np.zeros(H)
        self.gamma_ = np.ones(H)
        self.beta_ = np.zeros(H)
        self.running_mean_ = np.zeros(H)
        self.running_var_ = np.ones(H)
        self.W2_ = np.zeros((H, C))
        self.b2_ = np.zeros(C)
        self.classes_ = np.arange(C)
        self._version = 0
        return self

    def _bump_version(self):
        self._version = getattr(self, "_version", 0) + 1

    # ---------------------------------------------------------------- forward

    def forward(self, X, mode: str = "inference", stats: tuple | None = None):
        """Run the network, returning ``(logits, cache)``.

        ``cache`` holds everything the backward passes need and is invalidated
        by any parameter update.
        """
        self._check_fitted()
        X = check_feature_batch(X, self.n_features)
        if mode not in ("inference", "batch-stat"):
            raise ValueError(f"unknown forward mode {mode!r}")
        a = X @ self.W1_ + self.b1_
        if stats is not None:
            mu, v = np.asarray(stats[0], dtype=np.float64), np.asarray(stats[1], dtype=np.float64)
            stats_are_batch = False
        elif mode == "batch-stat":
            mu = a.mean(axis=(0, 1))
            v = a.var(axis=(0, 1))
            stats_are_batch = True
        else:
            mu, v = self.running_mean_, self.running_var_
            stats_are_batch = False
        inv = 1.0 / np.sqrt(v + self.eps)
        xhat = (a - mu) * inv
        s = self.gamma_ * xhat + self.beta_
        h = np.maximum(s, 0.0)
        g = h.mean(axis=1)
        logits = g @ self.W2_ + self.b2_
        cache = {
            "version": self._version,
            "X": X,
            "xhat": xhat,
            "relu_mask": s > 0.0,
            "g": g,
            "inv": inv,
            "stats": (mu, v),
            "stats_are_batch": stats_are_batch,
        }
        return logits, cache

    def batch_stats(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Per-unit mean/variance of the pre-normalization activations of X."""
        self._check_fitted()
        X = check_feature_batch(X, self.n_features)
        a = X @ self.W1_ + self.b1_
        return a.mean(axis=(0, 1)), a.var(axis=(0, 1))

    # --------------------------------------------------------------- backward

    def _check_cache(self, cache):
        if cache.get("version") != self._version:
            raise ValueError("stale forward cache: parameters changed since the forward pass")

    def _upstream_to_ds(self, cache, d_logits: np.ndarray) -> np.ndarray:
        d_logits = np.asarray(d_logits, dtype=np.float64)
        T = cache["X"].shape[1]
        dg = d_logits @ self.W2_.T
        dh = np.repeat(dg[:, None, :], T, axis=1) / T
        return dh * cache["relu_mask"]

    def backward_affine(self, cache, d_logits) -> ParamGrads:
        """Exact gradients of the batch loss w.r.t. (gamma, beta) only."""
        self._check_cache(cache)
        ds = self._upstream_to_ds(cache, d_logits)
        return ParamGrads(
            d_gamma=(ds * cache["xhat"]).sum(axis=(0, 1)),
            d_beta=ds.sum(axis=(0, 1)),
        )

    def backward_full(self, cache, d_logits) -> FullGrads:
        """Exact gradients for all parameters, including the normalization
        statistics path when the forward pass computed them from the batch."""
        self._check_cache(cache)
        d_logits = np.asarray(d_logits, dtype=np.float64)
        X, xhat, inv = cache["X"], cache["xhat"], cache["inv"]
        ds = self._upstream_to_ds(cache, d_logits)
        d_gamma = (ds * xhat).sum(axis=(0, 1))
        d_beta = ds.sum(axis=(0, 1))
        d_W2 = cache["g"].T @ d_logits
        d_b2 = d_logits.sum(axis=0)
        dxhat = ds * self.gamma_
        if cache["stats_are_batch"]:
            n = X.shape[0] * X.shape[1]
            sum_dxhat = dxhat.sum(axis=(0, 1))
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 1))
            da = (inv / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        else:
            da = dxhat * inv
        d_W1 = np.einsum("ntf,nth->fh", X, da)
        d_b1 = da.sum(axis=(0, 1))
        return FullGrads(d_W1, d_b1, d_gamma, d_beta, d_W2, d_b2)

    # ---------------------------------------------------------------- updates

    def apply_affine_update(self, grads: ParamGrads, lr: float):
        """One SGD step on (gamma, beta); invalidates outstanding caches."""
        self.gamma_ = sgd_step(self.gamma_, grads.d_gamma, lr)
        self.beta_ = sgd_step(self.beta_, grads.d_beta, lr)
        self._bump_version()

    def apply_full_update(self, grads: FullGrads, lr: float):
        self.W1_ = sgd_step(self.W1_, grads.d_W1, lr)
        self.b1_ = sgd_step(self.b1_, grads.d_b1, lr)
        self.gamma_ = sgd_step(self.gamma_, grads.d_gamma, lr)
        self.beta_ = sgd_step(self.beta_, grads.d_beta, lr)
        self.W2_ = sgd_step(self.W2_, grads.d_W2, lr)
        self.b2_ = sgd_step(self.b2_, grads.d_b2, lr)
        self._bump_version()

    def set_running_stats(self, mean: np.ndarray, var: np.ndarray):
        """Replace the running statistics, flooring the variance at eps."""
        self.running_mean_ = np.asarray(mean, dtype=np.float64).copy()
        self.running_var_ = np.maximum(np.asarray(var, dtype=np.float64), self.eps)
        self._bump_version()

    # ------------------------------------------------------------- prediction

    def decision_function(self, X) -> np.ndarray:
        logits, _ = self.forward(X, mode="inference")
        return logits

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=-1)

    # --------------------------------------------------------------- training

    def fit(self, X, y) -> "NormPoolClassifier":
        """Pretrain on a labeled source set with cross-entropy and mini-batch SGD.

        Uses batch statistics in the forward pass, updates running statistics
        with momentum ``bn_momentum``, and records a per-epoch training log.
        A held-out fraction provides the reported source macro F1
        (``validation_f1_``); with ``validation_fraction=0`` the training set
        is scored instead.
        """
        X = check_feature_batch(X, self.n_features)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError(f"label shape {y.shape} does not match {X.shape[0]} samples")
        present = np.unique(y)
        if present.size < 2:
            raise ValueError("source training needs at least two classes")
        if present.min() < 0 or present.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        missing = set(range(self.n_classes)) - set(present.tolist())
        if missing:
            raise ValueError(f"every class needs at least one sample; missing {sorted(missing)}")

        rng = np.random.Generator(np.random.Philox(self.random_state))
        self.init_params(rng)

        n = X.shape[0]
        n_val = int(round(self.validation_fraction * n))
        perm = rng.permutation(n)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        if train_idx.size == 0:
            raise ValueError("validation fraction leaves no training data")

        self.training_log_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(train_idx.size)
            epoch_loss, n_batches = 0.0, 0
            for start in range(0, train_idx.size, self.batch_size):
                idx = train_idx[order[start : start + self.batch_size]]
                xb, yb = X[idx], y[idx]
                logits, cache = self.forward(xb, mode="batch-stat")
                p = softmax(logits)
                loss = -np.mean(log_prob(p)[np.arange(len(idx)), yb])
                d_logits = p.copy()
                d_logits[np.arange(len(idx)), yb] -= 1.0
                d_logits /= len(idx)
                grads = self.backward_full(cache, d_logits)
                mu, v = cache["stats"]
                self.running_mean_ = (1 - self.bn_momentum) * self.running_mean_ + self.bn_momentum * mu
                self.running_var_ = np.maximum(
                    (1 - self.bn_momentum) * self.running_var_ + self.bn_momentum * v, self.eps
                )
                self.apply_full_update(grads, self.lr)
                epoch_loss += float(loss)
                n_batches += 1
            self.training_log_.append({"epoch": epoch, "loss": epoch_loss / n_batches})

        score_idx = val_idx if val_idx.size else train_idx
        self.validation_f1_ = self._macro_f1(y[score_idx], self.predict(X[score_idx]))
        return self

    def _macro_f1(self, y_true: np.ndarray, y_pred: np.ndarray) -> float:
        from .metrics import confusion_matrix, f1_scores

        return f1_scores(confusion_matrix(y_true, y_pred, self.n_classes)).macro_f1


def update_bn_stats(model: NormPoolClassifier, X, momentum: float = 1.0) -> NormPoolClassifier:
    """Refresh the running statistics from a test batch.

    The default momentum of 1.0 is full replacement; variance is floored at
    the model's eps, so a degenerate batch (single frame, single item) still
    leaves strictly positive running variance.
    """
    X = check_feature_batch(X, model.n_features)
    if X.shape[0] == 0:
        raise ValueError("cannot update normalization statistics from an empty batch")
    mu, v = model.batch_stats(X)
    new_mean = (1 - momentum) * model.running_mean_ + momentum * mu
    new_var = (1 - momentum) * model.running_var_ + momentum * v
    model.set_running_stats(new_mean, new_var)
    return model


def save_checkpoint(model: NormPoolClassifier, path) -> None:
    """Write the fitted parameters in the flat binary layout documented above."""
    model._check_fitted()
    F, H, C = model.n_features, model.n_hidden, model.n_classes
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", CHECKPOINT_VERSION, F, H, C))
        for arr in (
            model.W1_,
            model.b1_,
            model.gamma_,
            model.beta_,
            model.running_mean_,
            model.running_var_,
            model.W2_,
            model.b2_,
        ):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> NormPoolClassifier:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a classifier checkpoint (bad magic)")
    version, F, H, C = struct.unpack_from("<IIII", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    sizes = [F * H, H, H, H, H, H, H * C, C]
    expected = 24 + 8 * sum(sizes)
    if len(blob) != expected:
        raise ValueError(f"checkpoint truncated or padded: {len(blob)} bytes, expected {expected}")
    model = NormPoolClassifier(n_features=F, n_hidden=H, n_classes=C)
    offset = 24
    arrays = []
    for size in sizes:
        arrays.append(np.frombuffer(blob, dtype="<f8", count=size, offset=offset).astype(np.float64))
        offset += 8 * size
    model.W1_ = arrays[0].reshape(F, H)
    model.b1_ = arrays[1]
    model.gamma_ = arrays[2]
    model.beta_ = arrays[3]
    model.running_mean_ = arrays[4]
    model.running_var_ = arrays[5]
    model.W2_ = arrays[6].reshape(H, C)
    model.b2_ = arrays[7]
    model.classes_ = np.arange(C)
    model._version = 0
    if np.any(model.running_var_ <= 0):
        raise ValueError("checkpoint running variance must be strictly positive")
    return model
