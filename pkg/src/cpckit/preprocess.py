"""Per-sample normalization and ZCA whitening.

The whitening transform is fit on training data only and applied unchanged
to validation and test sets; it serializes to JSON for reuse across CLI
invocations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .errors import DimMismatch, TooFewSamples


def normalize_samples(ds: LabeledDataset, eps_norm: float = 1e-8) -> LabeledDataset:
    """Center and scale each row by its own mean and standard deviation.

    The divisor is max(std, eps_norm), so constant rows map to zeros
    instead of NaNs. Population std (ddof=0) over the row's components.
    """
    mu = ds.features.mean(axis=1, keepdims=True)
    sd = ds.features.std(axis=1, keepdims=True)
    out = (ds.features - mu) / np.maximum(sd, eps_norm)
    return LabeledDataset(
        features=out,
        labels=ds.labels,
        class_count=ds.class_count,
        regime_tags=ds.regime_tags,
        label_map=ds.label_map,
    )


def standardize_columns(ds: LabeledDataset, eps_norm: float = 1e-8) -> LabeledDataset:
    """Per-feature alternative: center and scale each column of this dataset."""
    mu = ds.features.mean(axis=0, keepdims=True)
    sd = ds.features.std(axis=0, keepdims=True)
    out = (ds.features - mu) / np.maximum(sd, eps_norm)
    return LabeledDataset(
        features=out,
        labels=ds.labels,
        class_count=ds.class_count,
        regime_tags=ds.regime_tags,
        label_map=ds.label_map,
    )


@dataclass(frozen=True)
class WhiteningTransform:
    """Column mean plus a symmetric rotation W = U (L + eps I)^(-1/2) U^T."""

    mean: np.ndarray
    rotation: np.ndarray
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))

    @property
    def d(self) -> int:
        return self.mean.shape[0]


def fit_zca(ds: LabeledDataset, epsilon: float = 1e-6) -> WhiteningTransform:
    """Fit the whitening rotation from the sample covariance (divisor n-1).

    Eigenvalues are clamped at zero before the shift by epsilon, which keeps
    the inverse square root real under round-off.
    """
    if ds.n < 2:
        raise TooFewSamples(f"covariance needs at least 2 samples, got {ds.n}")
    mean = ds.features.mean(axis=0)
    centered = ds.features - mean
    cov = centered.T @ centered / (ds.n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, 0.0)
    scale = 1.0 / np.sqrt(eigvals + epsilon)
    rotation = (eigvecs * scale) @ eigvecs.T
    rotation = (rotation + rotation.T) / 2.0  # exact symmetry under round-off
    return WhiteningTransform(mean=mean, rotation=rotation, epsilon=float(epsilon))


def apply_whitening(t: WhiteningTransform, ds: LabeledDataset) -> LabeledDataset:
    """Map every row x to W (x - mean)."""
    if ds.d != t.d:
        raise DimMismatch(f"transform expects d={t.d}, dataset has d={ds.d}")
    out = (ds.features - t.mean) @ t.rotation  # W symmetric, so x W^T = x W
    return LabeledDataset(
        features=out,
        labels=ds.labels,
        class_count=ds.class_count,
        regime_tags=ds.regime_tags,
        label_map=ds.label_map,
    )


def transform_to_json(t: WhiteningTransform) -> dict:
    return {
        "mean": t.mean.tolist(),
        "rotation": t.rotation.tolist(),
        "epsilon": t.epsilon,
    }


def transform_from_json(obj: dict) -> WhiteningTransform:
    return WhiteningTransform(
        mean=np.asarray(obj["mean"], dtype=np.float64),
        rotation=np.asarray(obj["rotation"], dtype=np.float64),
        epsilon=float(obj["epsilon"]),
    )


def save_transform(t: WhiteningTransform, path) -> None:
    with open(path, "w") as fh:
        json.dump(transform_to_json(t), fh)
        fh.write("\n")


def load_transform(path) -> WhiteningTransform:
    with open(path) as fh:
        return transform_from_json(json.load(fh))
