"""Data model, dataset ingestion, feature standardization, and evaluation metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"
TASKS = (CLASSIFICATION, REGRESSION)


class DatasetError(ValueError):
    """Malformed input data: parse failures or schema violations."""


class ConfigError(ValueError):
    """Invalid or infeasible configuration values."""


def _check_task(task):
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")


@dataclass(frozen=True)
class Sample:
    """One labelled feature vector; ``label`` is a class id or a numeric target."""

    index: int
    features: np.ndarray
    label: Union[int, float]


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of samples sharing one task kind.

    ``features`` is an (N, D) float array, ``labels`` an (N,) array whose dtype
    is int64 for classification (class ids >= 0) and float64 for regression.
    """

    features: np.ndarray
    labels: np.ndarray
    task: str
    label_name: Optional[str] = None

    def __post_init__(self):
        _check_task(self.task)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DatasetError("features must be a non-empty (N, D) matrix")
        if not np.isfinite(feats).all():
            raise DatasetError("features contain NaN or Inf")
        labels = np.asarray(self.labels)
        if labels.shape != (feats.shape[0],):
            raise DatasetError("labels must align 1:1 with feature rows")
        if self.task == CLASSIFICATION:
            if not np.issubdtype(labels.dtype, np.integer):
                rounded = np.rint(labels)
                if not np.all(labels == rounded):
                    raise DatasetError("classification labels must be integer class ids")
                labels = rounded
            labels = labels.astype(np.int64)
            if labels.min() < 0:
                raise DatasetError("class ids must be non-negative")
        else:
            labels = labels.astype(np.float64)
            if not np.isfinite(labels).all():
                raise DatasetError("regression targets contain NaN or Inf")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dimension(self):
        return self.features.shape[1]

    def sample(self, i):
        label = self.labels[i]
        return Sample(index=i, features=self.features[i], label=label.item())

    def classes(self):
        if self.task != CLASSIFICATION:
            raise ConfigError("classes() is only defined for classification datasets")
        return np.unique(self.labels)


@dataclass(frozen=True)
class Scaler:
    """Affine per-feature map z = (x - mean) / scale fitted on a training set.

    Constant training features get ``scale`` 1 so they map to exactly 0 on the
    training data; the same affine map is reapplied verbatim to queries.
    """

    mean: np.ndarray
    scale: np.ndarray

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) / self.scale

    def inverse(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z * self.scale + self.mean


def standardize_features(train):
    """Standardize every feature to zero mean / unit variance on ``train``.

    Uses population (1/N) variance. Returns the standardized dataset and the
    fitted Scaler for reapplying the identical map to queries.
    """
    if train.n < 2:
        raise DatasetError("standardization requires at least 2 samples")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)  # population variance
    scale = np.where(std > 0.0, std, 1.0)
    scaler = Scaler(mean=mean, scale=scale)
    scaled = Dataset(
        features=scaler.transform(train.features),
        labels=train.labels,
        task=train.task,
        label_name=train.label_name,
    )
    return scaled, scaler


def load_dataset(source, label_col, task, delimiter=","):
    """Parse a delimited text file (header line required) into a Dataset.

    ``source`` is a path or an open text stream. Exactly one column, named
    ``label_col``, is the label; all remaining columns must be numeric
    features. Malformed rows raise DatasetError naming the 1-based line.
    """
    _check_task(task)
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return load_dataset(fh, label_col, task, delimiter)

    reader = csv.reader(source, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("empty input: missing header line") from None
    header = [h.strip() for h in header]
    if label_col not in header:
        raise DatasetError(f"label column {label_col!r} not found in header {header}")
    if header.count(label_col) > 1:
        raise DatasetError(f"label column {label_col!r} appears more than once")
    label_idx = header.index(label_col)
    feature_names = [h for i, h in enumerate(header) if i != label_idx]
    if not feature_names:
        raise DatasetError("dataset needs at least one feature column")

    rows, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue  # ignore blank lines
        if len(row) != len(header):
            raise DatasetError(
                f"line {lineno}: expected {len(header)} columns, got {len(row)}"
            )
        feats = []
        for i, cell in enumerate(row):
            cell = cell.strip()
            if i == label_idx:
                labels.append(_parse_label(cell, task, lineno))
            else:
                try:
                    feats.append(float(cell))
                except ValueError:
                    raise DatasetError(
                        f"line {lineno}: non-numeric value {cell!r} in column "
                        f"{header[i]!r}"
                    ) from None
        rows.append(feats)
    if not rows:
        raise DatasetError("dataset has a header but no data rows")
    features = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(features).all():
        bad = int(np.argwhere(~np.isfinite(features).all(axis=1))[0][0])
        raise DatasetError(f"line {bad + 2}: non-finite feature value")
    if task == CLASSIFICATION:
        label_arr = np.asarray(labels, dtype=np.int64)
    else:
        label_arr = np.asarray(labels, dtype=np.float64)
    return Dataset(features=features, labels=label_arr, task=task, label_name=label_col)


def _parse_label(cell, task, lineno):
    try:
        value = float(cell)
    except ValueError:
        raise DatasetError(f"line {lineno}: non-numeric label {cell!r}") from None
    if task == CLASSIFICATION:
        if not value.is_integer() or value < 0:
            raise DatasetError(
                f"line {lineno}: label {cell!r} is not a non-negative class id "
                "(numeric labels need task=regression)"
            )
        return int(value)
    if not math.isfinite(value):
        raise DatasetError(f"line {lineno}: non-finite label {cell!r}")
    return value


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters for the cost-sensitive forest.

    ``cost_sensitive=False`` turns the trainer into a plain random forest:
    uniform split weights and unweighted information gain (the baseline arm
    of the ablation harness).
    """

    tree_count: int = 20
    max_depth: int = 10
    min_node_size: int = 5
    min_gain: float = 1e-7
    svm_cost: float = 1.0
    svr_margin: float = 0.0
    label_bins: int = 10
    candidate_factor: int = 2
    seed: int = 0
    cost_sensitive: bool = True

    def __post_init__(self):
        if self.tree_count < 1:
            raise ConfigError("tree_count must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.min_node_size < 2:
            raise ConfigError("min_node_size must be >= 2")
        if self.min_gain < 0:
            raise ConfigError("min_gain must be >= 0")
        if self.svm_cost <= 0:
            raise ConfigError("svm_cost must be > 0")
        if self.svr_margin < 0:
            raise ConfigError("svr_margin must be >= 0")
        if self.label_bins < 1:
            raise ConfigError("label_bins must be >= 1")
        if self.candidate_factor < 1:
            raise ConfigError("candidate_factor must be >= 1")


@dataclass(frozen=True)
class DsnaConfig:
    """Hyperparameters for clustering, the coefficient prior, and the sparse solve."""

    cluster_count: int = 3
    overlap_slack: float = 1.1
    sparsity_penalty: float = 0.01
    prior_penalty: float = 0.1
    distance_tradeoff: float = 1.0
    prior_decay: float = 1.0
    neighbor_radius: Union[float, str] = "adaptive"
    hull_tolerance: float = 0.0
    vote_threshold: float = 0.1
    max_outer_iters: int = 50
    label_tol: float = 1e-3
    eps_guard: float = 1e-8

    def __post_init__(self):
        if not 2 <= self.cluster_count <= 4:
            raise ConfigError("cluster_count must be in [2, 4]")
        if self.overlap_slack < 1.0:
            raise ConfigError("overlap_slack must be >= 1")
        if self.sparsity_penalty < 0 or self.prior_penalty < 0:
            raise ConfigError("penalties must be >= 0")
        if self.distance_tradeoff <= 0:
            raise ConfigError("distance_tradeoff must be > 0")
        if self.prior_decay <= 0:
            raise ConfigError("prior_decay must be > 0")
        if isinstance(self.neighbor_radius, str):
            if self.neighbor_radius != "adaptive":
                raise ConfigError("neighbor_radius must be a positive number or 'adaptive'")
        elif self.neighbor_radius <= 0:
            raise ConfigError("neighbor_radius must be a positive number or 'adaptive'")
        if self.hull_tolerance < 0:
            raise ConfigError("hull_tolerance must be >= 0")
        if not 0 < self.vote_threshold <= 1:
            raise ConfigError("vote_threshold must be in (0, 1]")
        if self.max_outer_iters < 1:
            raise ConfigError("max_outer_iters must be >= 1")
        if self.label_tol <= 0:
            raise ConfigError("label_tol must be > 0")
        if self.eps_guard <= 0:
            raise ConfigError("eps_guard must be > 0")


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation summary: MAE-based for regression, recall-based for classification."""

    task: str
    count: int
    accuracy: Optional[float] = None
    g_mean: Optional[float] = None
    per_class_recall: Optional[dict] = None
    mae: Optional[float] = None
    per_bin_mae: Optional[dict] = None
    bin_edges: Optional[np.ndarray] = None

    def as_dict(self):
        out = {"task": self.task, "count": self.count}
        if self.task == CLASSIFICATION:
            out["accuracy"] = self.accuracy
            out["g_mean"] = self.g_mean
            out["per_class_recall"] = {str(k): v for k, v in self.per_class_recall.items()}
        else:
            out["mae"] = self.mae
            out["per_bin_mae"] = {str(k): v for k, v in self.per_bin_mae.items()}
            out["bin_edges"] = [float(e) for e in self.bin_edges]
        return out


def label_bin_index(labels, lo, hi, n_bins):
    """Map labels to equal-width bin indices over [lo, hi]; degenerate range -> bin 0."""
    labels = np.asarray(labels, dtype=np.float64)
    if hi <= lo:
        return np.zeros(labels.shape, dtype=np.int64)
    raw = np.floor((labels - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.clip(raw, 0, n_bins - 1)


def evaluate_metrics(predictions, truths, task, n_bins=10):
    """Compute MetricsReport for aligned prediction/truth sequences.

    Classification: overall accuracy, per-class recall, and the G-mean
    (geometric mean of the per-class recalls, over classes present in the
    truths). Regression: overall MAE plus MAE per equal-width label bin,
    using the same bin count as the forest's cost weights.
    """
    _check_task(task)
    preds = np.asarray(predictions)
    truth = np.asarray(truths)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise ValueError("predictions and truths must be equal-length 1-D sequences")
    if preds.size == 0:
        raise ValueError("cannot evaluate empty prediction lists")

    if task == REGRESSION:
        preds = preds.astype(np.float64)
        truth = truth.astype(np.float64)
        err = np.abs(preds - truth)
        lo, hi = float(truth.min()), float(truth.max())
        edges = np.linspace(lo, hi, n_bins + 1)
        bins = label_bin_index(truth, lo, hi, n_bins)
        per_bin = {}
        for b in range(n_bins):
            mask = bins == b
            if mask.any():
                per_bin[b] = float(err[mask].mean())
        return MetricsReport(
            task=task,
            count=preds.size,
            mae=float(err.mean()),
            per_bin_mae=per_bin,
            bin_edges=edges,
        )

    preds = preds.astype(np.int64)
    truth = truth.astype(np.int64)
    accuracy = float((preds == truth).mean())
    recalls = {}
    for cls in np.unique(truth):
        mask = truth == cls
        recalls[int(cls)] = float((preds[mask] == cls).mean())
    values = np.array(list(recalls.values()))
    g_mean = float(np.prod(values) ** (1.0 / values.size))
    return MetricsReport(
        task=task,
        count=preds.size,
        accuracy=accuracy,
        g_mean=g_mean,
        per_class_recall=recalls,
    )
