"""Synthetic imbalanced test streams and feature-grid file ingestion.

A stream draws each sample's class i.i.d. with the keyword classes jointly
holding probability mass ``1/(1+r)`` (split evenly) and the non-keyword class
(always the last index) holding ``r/(1+r)``, so the keyword:non-keyword count
ratio converges to ``1:r``. Every sample is a class template plus within-class
Gaussian jitter, corrupted by a freshly drawn structured noise field mixed at
an exact signal-to-noise ratio (powers are mean squares over all cells).

Labels ride along in :class:`StreamBatch` for the evaluator only; the
adaptation engine consumes ``batch.grids`` and never reads ``batch.labels``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Iterator

import numpy as np

__all__ = [
    "StreamConfig",
    "StreamBatch",
    "class_probabilities",
    "make_class_templates",
    "sample_example",
    "mix_noise_at_snr",
    "generate_stream",
    "save_feature_csv",
    "load_feature_csv",
]

CONFIG_KEYS = ("n_classes", "ratio", "snr_db", "n_batches", "batch_size", "T", "F", "seed")
OPTIONAL_CONFIG_KEYS = ("within_class_std", "noise_mode")


@dataclass(frozen=True)
class StreamConfig:
    """Stream shape: class count, imbalance ratio, corruption level, batching."""

    n_classes: int = 4
    ratio: float = 8.0
    snr_db: float = -10.0
    n_batches: int = 50
    batch_size: int = 128
    T: int = 32
    F: int = 40
    seed: int = 0
    within_class_std: float = 0.5
    noise_mode: str = "lowrank"

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least one keyword class and the non-keyword class")
        if self.ratio < 1:
            raise ValueError(f"ratio must be >= 1, got {self.ratio}")
        if self.batch_size < 1 or self.n_batches < 1:
            raise ValueError("batch_size and n_batches must be >= 1")
        if self.T < 1 or self.F < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.within_class_std < 0:
            raise ValueError("within_class_std must be non-negative")
        if self.noise_mode not in ("lowrank", "white"):
            raise ValueError(f"noise_mode must be 'lowrank' or 'white', got {self.noise_mode!r}")

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_file(cls, path) -> "StreamConfig":
        with open(path) as fh:
            raw = json.load(fh)
        allowed = set(CONFIG_KEYS) | set(OPTIONAL_CONFIG_KEYS)
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"unknown stream config keys: {sorted(unknown)}")
        missing = set(CONFIG_KEYS) - set(raw)
        if missing:
            raise ValueError(f"missing stream config keys: {sorted(missing)}")
        return cls(**raw)


@dataclass(frozen=True)
class StreamBatch:
    """One ordered batch: feature grids plus the withheld ground-truth labels."""

    grids: np.ndarray
    labels: np.ndarray
    batch_index: int

    def __post_init__(self):
        if len(self.grids) != len(self.labels):
            raise ValueError("grids and labels must have equal length")


def class_probabilities(n_classes: int, ratio: float) -> np.ndarray:
    """Sampling distribution: keywords share 1/(1+r) evenly, non-keyword gets r/(1+r)."""
    n_keywords = n_classes - 1
    p = np.full(n_classes, 1.0 / ((1.0 + ratio) * n_keywords))
    p[-1] = ratio / (1.0 + ratio)
    return p


def _smooth(vec: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return vec
    kernel = np.ones(width) / width
    return np.convolve(vec, kernel, mode="same")


def make_class_templates(
    n_classes: int,
    T: int,
    F: int,
    seed: int,
    margin: float | None = None,
    scale: float = 1.0,
    smooth_width: int = 5,
    max_retries: int = 100,
) -> np.ndarray:
    """Fixed per-class template grids with guaranteed pairwise separation.

    Templates are time-smoothed Gaussian fields rescaled to unit RMS (times
    ``scale``); the whole set is resampled until the minimum pairwise
    Frobenius distance reaches ``margin``, erroring after ``max_retries``.
    The default margin is 70% of the sqrt(2*T*F)*scale distance expected
    between independent unit-RMS fields.
    """
    if margin is None:
        margin = 0.7 * scale * np.sqrt(2.0 * T * F)
    rng = np.random.Generator(np.random.Philox(seed))
    for _ in range(max_retries):
        templates = np.empty((n_classes, T, F))
        for c in range(n_classes):
            grid = rng.standard_normal((T, F))
            grid = np.apply_along_axis(_smooth, 0, grid, smooth_width)
            rms = np.sqrt(np.mean(grid**2))
            templates[c] = scale * grid / max(rms, 1e-12)
        dists = [
            np.linalg.norm(templates[i] - templates[j])
            for i in range(n_classes)
            for j in range(i + 1, n_classes)
        ]
        if min(dists) >= margin:
            return templates
    raise ValueError(
        f"could not draw {n_classes} templates of shape ({T}, {F}) with pairwise "
        f"distance >= {margin} in {max_retries} attempts"
    )


def sample_example(templates: np.ndarray, cls: int, within_class_std: float, rng: np.random.Generator) -> np.ndarray:
    """Template plus i.i.d. Gaussian within-class jitter."""
    if not 0 <= cls < len(templates):
        raise ValueError(f"class index {cls} out of range for {len(templates)} templates")
    return templates[cls] + within_class_std * rng.standard_normal(templates[cls].shape)


def mix_noise_at_snr(x: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Return x + k*noise with k chosen so 10*log10(P_x / P_{k*noise}) = snr_db."""
    x = np.asarray(x, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x.shape != noise.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {noise.shape}")
    p_noise = np.mean(noise**2)
    if p_noise == 0.0:
        raise ValueError("noise grid has zero power")
    p_signal = np.mean(x**2)
    k = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return x + k * noise


def _noise_field(T: int, F: int, mode: str, rng: np.random.Generator, rank: int = 2, smooth_width: int = 5) -> np.ndarray:
    if mode == "white":
        return rng.standard_normal((T, F))
    field = np.zeros((T, F))
    for _ in range(rank):
        u = _smooth(rng.standard_normal(T), smooth_width)
        v = _smooth(rng.standard_normal(F), smooth_width)
        field += np.outer(u, v)
    return field


def _synth_sample(templates: np.ndarray, cls: int, config: StreamConfig, rng: np.random.Generator):
    """One stream sample; returns (clean, noisy) so tests can check the SNR."""
    clean = sample_example(templates, cls, config.within_class_std, rng)
    noise = _noise_field(config.T, config.F, config.noise_mode, rng)
    return clean, mix_noise_at_snr(clean, noise, config.snr_db)


def generate_stream(config: StreamConfig, templates: np.ndarray) -> Iterator[StreamBatch]:
    """Lazily yield the stream's batches in order; fully determined by the seed."""
    if templates.shape != (config.n_classes, config.T, config.F):
        raise ValueError(
            f"templates shape {templates.shape} does not match config "
            f"({config.n_classes}, {config.T}, {config.F})"
        )
    rng = np.random.Generator(np.random.Philox(config.seed))
    probs = class_probabilities(config.n_classes, config.ratio)
    for b in range(config.n_batches):
        labels = rng.choice(config.n_classes, size=config.batch_size, p=probs)
        grids = np.empty((config.batch_size, config.T, config.F))
        for i, cls in enumerate(labels):
            _, grids[i] = _synth_sample(templates, int(cls), config, rng)
        yield StreamBatch(grids=grids, labels=labels.astype(np.int64), batch_index=b)


# ----------------------------------------------------------------- feature CSV


def save_feature_csv(path, grids, labels=None) -> None:
    """Write grids as CSV rows ``label,T,F,v0,...`` with 17 significant digits."""
    grids = [np.asarray(g, dtype=np.float64) for g in grids]
    if labels is None:
        labels = [-1] * len(grids)
    if len(labels) != len(grids):
        raise ValueError("labels and grids must have equal length")
    with open(path, "w") as fh:
        if grids:
            t, f = grids[0].shape
            fh.write("label,T,F," + ",".join(f"v{i}" for i in range(t * f)) + "\n")
        else:
            fh.write("label,T,F\n")
        for label, grid in zip(labels, grids):
            t, f = grid.shape
            values = ",".join(f"{v:.17g}" for v in grid.ravel(order="C"))
            fh.write(f"{int(label)},{t},{f},{values}\n")


def load_feature_csv(path) -> list[tuple[np.ndarray, int]]:
    """Parse a feature CSV into (grid, label) pairs; label -1 means unlabeled.

    Every row must carry the same (T, F) and exactly T*F values; violations
    raise ValueError naming the first offending 1-based line number.
    """
    out: list[tuple[np.ndarray, int]] = []
    expected_dims: tuple[int, int] | None = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if lineno == 1 and line.startswith("label,T,F"):
                continue
            fields = line.split(",")
            if len(fields) < 3:
                raise ValueError(f"line {lineno}: expected at least label,T,F")
            try:
                label, t, f = int(fields[0]), int(fields[1]), int(fields[2])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: malformed label/T/F header fields") from exc
            if t < 1 or f < 1:
                raise ValueError(f"line {lineno}: grid dimensions must be >= 1")
            if expected_dims is None:
                expected_dims = (t, f)
            elif (t, f) != expected_dims:
                raise ValueError(
                    f"line {lineno}: dimensions ({t}, {f}) differ from first row {expected_dims}"
                )
            values = fields[3:]
            if len(values) != t * f:
                raise ValueError(f"line {lineno}: expected {t * f} values, got {len(values)}")
            try:
                grid = np.array([float(v) for v in values], dtype=np.float64).reshape(t, f)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-numeric feature value") from exc
            if not np.all(np.isfinite(grid)):
                raise ValueError(f"line {lineno}: non-finite feature value")
            out.append((grid, label))
    return out
