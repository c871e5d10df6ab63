"""Finite-difference verification of every analytic gradient in the package.

All checks use central differences with step ``h`` and report the max-norm
relative error ``max|analytic - numeric| / max(1, max|numeric|)``. The
``corruption`` argument adds a constant to every analytic gradient and exists
solely as a negative control (a corrupted gradient must be detected).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import DemParams, consistency_grad, consistency_loss, dem_grad, dem_loss
from .model import NormPoolClassifier

__all__ = ["central_difference", "rel_error", "GradcheckReport", "run_gradcheck", "DEFAULT_TOL"]

DEFAULT_TOL = 1e-5


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Component-wise central finite difference of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for j in range(xf.size):
        xp = xf.copy()
        xm = xf.copy()
        xp[j] += h
        xm[j] -= h
        flat[j] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error with a unit floor on the reference scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(numeric))) if numeric.size else 0.0)
    return float(np.max(np.abs(analytic - numeric)) / scale)


@dataclass
class GradcheckReport:
    """Max relative error per suite; passes when every suite is under tol."""

    tol: float
    max_errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.max_errors.values())

    def lines(self) -> list[str]:
        out = []
        for name in sorted(self.max_errors):
            err = self.max_errors[name]
            status = "ok" if err < self.tol else "FAIL"
            out.append(f"{name:<28s} max rel err {err:.3e}  [{status}]")
        out.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})")
        return out


def _random_model(rng: np.random.Generator, F=3, H=4, C=2) -> NormPoolClassifier:
    model = NormPoolClassifier(n_features=F, n_hidden=H, n_classes=C).init_params(rng)
    model.W1_ = rng.normal(0, 1, size=(F, H))
    model.b1_ = rng.normal(0, 0.5, size=H)
    model.gamma_ = rng.uniform(0.5, 1.5, size=H)
    model.beta_ = rng.normal(0, 0.5, size=H)
    model.running_mean_ = rng.normal(0, 0.5, size=H)
    model.running_var_ = rng.uniform(0.5, 2.0, size=H)
    model.W2_ = rng.normal(0, 1, size=(H, C))
    model.b2_ = rng.normal(0, 0.5, size=C)
    return model


def _model_param_fd(model, X, upstream, names, mode, h=1e-5):
    """FD of the linear functional sum(upstream * logits) w.r.t. named params."""

    def loss_with(name, arr):
        saved = getattr(model, name)
        try:
            setattr(model, name, arr)
            logits, _ = model.forward(X, mode=mode)
        finally:
            setattr(model, name, saved)
        return float(np.sum(upstream * logits))

    return {
        name: central_difference(lambda a, n=name: loss_with(n, a), getattr(model, name), h=h)
        for name in names
    }


def run_gradcheck(seed: int = 0, trials: int = 20, corruption: float = 0.0, tol: float = DEFAULT_TOL) -> GradcheckReport:
    """Run every finite-difference suite and report max relative errors."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    report = GradcheckReport(tol=tol)

    def track(name: str, analytic, numeric):
        err = rel_error(np.asarray(analytic) + corruption, numeric)
        report.max_errors[name] = max(report.max_errors.get(name, 0.0), err)

    # Decoupled entropy gradient, closed form at tau=1 across the alpha grid.
    for _ in range(trials):
        for c in (2, 4, 10):
            z = rng.uniform(-10, 10, size=c)
            for alpha in (0.6, 0.8, 1.0):
                numeric = central_difference(lambda v: dem_loss(v, DemParams(1.0, alpha)), z)
                track("dem_grad_tau1", dem_grad(z, alpha), numeric)

    # General-temperature gradient used when tau != 1.
    for _ in range(trials):
        z = rng.uniform(-6, 6, size=4)
        for tau in (0.5, 2.0):
            for alpha in (0.6, 1.0):
                numeric = central_difference(lambda v: dem_loss(v, DemParams(tau, alpha)), z)
                track("dem_grad_general", dem_grad(z, alpha, tau), numeric)

    # Consistency gradients, one per argument.
    for _ in range(trials):
        z, zt, zh = (rng.uniform(-4, 4, size=4) for _ in range(3))
        g_z, g_zt, g_zh = consistency_grad(z, zt, zh)
        track("consistency_grad_z", g_z, central_difference(lambda v: consistency_loss(v, zt, zh), z))
        track("consistency_grad_ztilde", g_zt, central_difference(lambda v: consistency_loss(z, v, zh), zt))
        track("consistency_grad_zhat", g_zh, central_difference(lambda v: consistency_loss(z, zt, v), zh))

    # Model backward passes on tiny random instances, batch statistics live.
    for _ in range(trials):
        model = _random_model(rng)
        X = rng.normal(0, 1, size=(3, 2, 3))
        upstream = rng.normal(0, 1, size=(3, 2))
        _, cache = model.forward(X, mode="batch-stat")
        affine = model.backward_affine(cache, upstream)
        full = model.backward_full(cache, upstream)
        fd = _model_param_fd(
            model, X, upstream, ("W1_", "b1_", "gamma_", "beta_", "W2_", "b2_"), "batch-stat"
        )
        track("backward_affine_gamma", affine.d_gamma, fd["gamma_"])
        track("backward_affine_beta", affine.d_beta, fd["beta_"])
        track("backward_full_W1", full.d_W1, fd["W1_"])
        track("backward_full_b1", full.d_b1, fd["b1_"])
        track("backward_full_gamma", full.d_gamma, fd["gamma_"])
        track("backward_full_beta", full.d_beta, fd["beta_"])
        track("backward_full_W2", full.d_W2, fd["W2_"])
        track("backward_full_b2", full.d_b2, fd["b2_"])

    # Same model path with frozen (running) statistics.
    model = _random_model(rng)
    X = rng.normal(0, 1, size=(2, 2, 3))
    upstream = rng.normal(0, 1, size=(2, 2))
    _, cache = model.forward(X, mode="inference")
    full = model.backward_full(cache, upstream)
    fd = _model_param_fd(model, X, upstream, ("W1_", "b1_"), "inference")
    track("backward_full_frozen_stats", full.d_W1, fd["W1_"])
    track("backward_full_frozen_stats", full.d_b1, fd["b1_"])

    return report
