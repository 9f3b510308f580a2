"""Synthetic imbalanced benchmarks, the unsupervised-hull baseline, and the ablation runner."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .approx import (
    discriminative_cluster,
    dsna_predict,
    fit_affine_hull,
    query_rng,
    select_cluster,
)
from .core import (
    CLASSIFICATION,
    REGRESSION,
    ConfigError,
    Dataset,
    DsnaConfig,
    ForestConfig,
    evaluate_metrics,
)
from .forest import CostSensitiveForest, merge_neighborhood, baseline_predict, train_forest

ABLATION_METHODS = ("rf", "cs-rf", "cs-rf+ah", "cs-rf+dsna")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a seeded synthetic dataset (Gaussian blobs or a noisy curve)."""

    task: str
    sample_count: int
    seed: int = 0
    # classification: one Gaussian blob per ratio part, means spaced along axis 0
    imbalance_ratio: tuple = (1, 20)
    overlap: float = 2.0  # inter-mean distance in sigma units
    dimension: int = 2
    means: Optional[tuple] = None  # optional explicit (n_classes, dimension) rows
    covariances: Optional[tuple] = None  # optional explicit per-class covariances
    # regression: skewed x density, y = curve(x) + noise
    curve: str = "linear"
    curve_scale: float = 2.0
    x_range: tuple = (0.0, 10.0)
    noise_sd: float = 0.1
    skew: float = 5.0  # exponential rate over the x range; 0 = uniform
    hole: Optional[tuple] = None  # label interval kept free of training samples

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.sample_count < 20:
            raise ConfigError("sample_count must be >= 20")
        if self.task == CLASSIFICATION:
            parts = tuple(self.imbalance_ratio)
            if not 2 <= len(parts) <= 5:
                raise ConfigError("classification needs 2-5 ratio parts")
            if any(p <= 0 for p in parts):
                raise ConfigError("imbalance ratio parts must be positive")
        else:
            if self.curve not in ("linear", "sine"):
                raise ConfigError("curve must be 'linear' or 'sine'")
            if self.hole is not None and len(self.hole) != 2:
                raise ConfigError("hole must be a (low, high) label interval")
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")


def ratio_counts(sample_count, parts):
    """Exact per-class counts: floor shares, remainder to the largest part."""
    parts = np.asarray(parts, dtype=np.int64)
    total = int(parts.sum())
    counts = (sample_count * parts) // total
    counts[int(np.argmax(parts))] += sample_count - int(counts.sum())
    if (counts < 1).any():
        raise ConfigError(
            f"infeasible counts {counts.tolist()} for N={sample_count}, ratio {parts.tolist()}"
        )
    return counts


def gen_imbalanced_gaussians(spec: SyntheticSpec, seed=None):
    """Seeded Gaussian-blob classification dataset with exact ratio counts."""
    if spec.task != CLASSIFICATION:
        raise ConfigError("gen_imbalanced_gaussians needs a classification spec")
    if seed is None:
        seed = spec.seed
    counts = ratio_counts(spec.sample_count, spec.imbalance_ratio)
    n_classes = len(counts)
    if spec.means is not None:
        means = np.asarray(spec.means, dtype=np.float64)
    else:
        means = np.zeros((n_classes, spec.dimension))
        means[:, 0] = np.arange(n_classes) * spec.overlap
    chols = None
    if spec.covariances is not None:
        chols = [np.linalg.cholesky(np.asarray(c, dtype=np.float64)) for c in spec.covariances]

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    blocks, labels = [], []
    for c, n_c in enumerate(counts):
        z = rng.standard_normal((int(n_c), spec.dimension))
        if chols is not None:
            z = z @ chols[c].T
        blocks.append(means[c] + z)
        labels.append(np.full(int(n_c), c, dtype=np.int64))
    return Dataset(
        features=np.vstack(blocks),
        labels=np.concatenate(labels),
        task=CLASSIFICATION,
        label_name="label",
    )


def _curve(spec, x):
    if spec.curve == "linear":
        return spec.curve_scale * x
    return spec.curve_scale * np.sin(x)


def gen_imbalanced_regression(spec: SyntheticSpec, seed=None):
    """Seeded regression dataset: skewed x density, optional label hole.

    x follows a truncated exponential over ``x_range`` (rate ``skew`` per
    range): with the default skew, over 70% of the mass sits in the lowest
    30% of the range. Rows whose label lands inside ``hole`` are redrawn, so
    the interval stays empty of training labels.
    """
    if spec.task != REGRESSION:
        raise ConfigError("gen_imbalanced_regression needs a regression spec")
    if seed is None:
        seed = spec.seed
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lo, hi = spec.x_range
    width = hi - lo
    if width <= 0:
        raise ConfigError("x_range must be increasing")

    def draw(n):
        u = rng.random(n)
        if spec.skew > 0:
            rate = spec.skew / width
            u_max = 1.0 - np.exp(-rate * width)  # truncate to the range
            x = lo - np.log(1.0 - u * u_max) / rate
        else:
            x = lo + u * width
        y = _curve(spec, x) + spec.noise_sd * rng.standard_normal(n)
        return x, y

    x, y = draw(spec.sample_count)
    if spec.hole is not None:
        h_lo, h_hi = spec.hole
        for _ in range(1000):
            bad = (y >= h_lo) & (y <= h_hi)
            if not bad.any():
                break
            x[bad], y[bad] = draw(int(bad.sum()))
        else:
            raise ConfigError("hole covers too much of the label distribution")
    features = x[:, None]
    if spec.dimension > 1:
        extra = rng.standard_normal((spec.sample_count, spec.dimension - 1))
        features = np.hstack([features, extra])
    return Dataset(features=features, labels=y, task=REGRESSION, label_name="label")


def ah_from_neighborhood(neighborhood, q_std, task, cluster_count, rng, eps_guard=1e-8):
    """Plain-hull prediction: Euclidean K-means, best-residual hull, member mean/majority."""
    clusters = discriminative_cluster(
        neighborhood,
        cluster_count,
        overlap_slack=1.0,
        tradeoff=1.0,
        rng=rng,
        task=task,
        metric="euclidean",
        overlap=False,
    )
    hulls = [fit_affine_hull(c) for c in clusters]
    k, _ = select_cluster(q_std, clusters, hulls, eps_guard)
    labels = clusters[k].labels
    if task == CLASSIFICATION:
        return int(np.argmax(np.bincount(labels.astype(np.int64))))
    return float(labels.mean())


def unsupervised_ah_predict(forest: CostSensitiveForest, q, cluster_count=3, eps_guard=1e-8):
    """Ablation arm: hull selection without label-aware clustering, prior, or sparse step."""
    q_std = forest.standardize_query(q)
    neighborhood = merge_neighborhood(forest, q)
    rng = query_rng(forest.config.seed, q_std)
    return ah_from_neighborhood(neighborhood, q_std, forest.task, cluster_count, rng, eps_guard)


def stratified_split(dataset: Dataset, test_fraction, rng, n_bins=10):
    """Stratified train/test index split (by class, or by label bin for regression).

    Every stratum with >= 2 samples contributes at least one sample to each
    side; a single-sample class cannot be stratified and raises ConfigError
    (single-sample label bins just go to the training side).
    """
    labels = dataset.labels
    if dataset.task == CLASSIFICATION:
        strata = [np.nonzero(labels == c)[0] for c in np.unique(labels)]
        for s in strata:
            if s.size < 2:
                raise ConfigError(
                    "class with a single sample cannot be stratified; re-stratify"
                )
    else:
        lo, hi = float(labels.min()), float(labels.max())
        edges = np.linspace(lo, hi, n_bins + 1)
        which = np.clip(np.searchsorted(edges, labels, side="right") - 1, 0, n_bins - 1)
        strata = [np.nonzero(which == b)[0] for b in range(n_bins)]
    train_parts, test_parts = [], []
    for s in strata:
        if s.size == 0:
            continue
        if s.size == 1:
            train_parts.append(s)
            continue
        perm = s[rng.permutation(s.size)]
        n_test = min(max(int(round(test_fraction * s.size)), 1), s.size - 1)
        test_parts.append(perm[:n_test])
        train_parts.append(perm[n_test:])
    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.sort(np.concatenate(test_parts))
    return train_idx, test_idx


@dataclass(frozen=True, eq=False)
class AblationReport:
    """Per-method, per-seed metrics over byte-identical splits, plus aggregates."""

    task: str
    seeds: tuple
    methods: tuple
    metrics: dict  # method -> {seed -> MetricsReport}
    aggregates: dict  # method -> {metric -> (mean, sd)}
    forest_config: ForestConfig
    dsna_config: DsnaConfig
    split_digests: dict  # seed -> sha256 hex of the (train, test) index arrays


def _metric_values(report):
    if report.task == CLASSIFICATION:
        out = {"accuracy": report.accuracy, "g_mean": report.g_mean}
        for cls, rec in report.per_class_recall.items():
            out[f"recall_{cls}"] = rec
        return out
    return {"mae": report.mae}


def run_ablation(dataset: Dataset, forest_config: ForestConfig, dsna_config: DsnaConfig, seeds):
    """Train the plain and cost-sensitive forests per seed and score all four arms.

    Each seed draws one stratified 70/30 split that every arm shares; the
    report records a digest of the split for verification.
    """
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ConfigError("need at least one seed")
    per_method = {m: {} for m in ABLATION_METHODS}
    digests = {}
    for seed in seeds:
        split_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B717]))
        train_idx, test_idx = stratified_split(dataset, 0.3, split_rng)
        digests[seed] = hashlib.sha256(
            train_idx.tobytes() + b"|" + test_idx.tobytes()
        ).hexdigest()
        train = Dataset(
            features=dataset.features[train_idx],
            labels=dataset.labels[train_idx],
            task=dataset.task,
            label_name=dataset.label_name,
        )
        test_x = dataset.features[test_idx]
        test_y = dataset.labels[test_idx]

        plain = train_forest(train, replace(forest_config, cost_sensitive=False, seed=seed))
        cs = train_forest(train, replace(forest_config, cost_sensitive=True, seed=seed))

        preds = {m: [] for m in ABLATION_METHODS}
        for row in test_x:
            preds["rf"].append(baseline_predict(plain, row))
            preds["cs-rf"].append(baseline_predict(cs, row))
            preds["cs-rf+ah"].append(
                unsupervised_ah_predict(
                    cs, row, dsna_config.cluster_count, dsna_config.eps_guard
                )
            )
            preds["cs-rf+dsna"].append(dsna_predict(cs, row, dsna_config).label)
        for m in ABLATION_METHODS:
            per_method[m][seed] = evaluate_metrics(
                preds[m], test_y, dataset.task, n_bins=forest_config.label_bins
            )

    aggregates = {}
    for m in ABLATION_METHODS:
        keys = _metric_values(per_method[m][seeds[0]]).keys()
        agg = {}
        for key in keys:
            vals = [_metric_values(per_method[m][s]).get(key) for s in seeds]
            vals = np.array([v for v in vals if v is not None], dtype=np.float64)
            agg[key] = (float(vals.mean()), float(vals.std()))
        aggregates[m] = agg
    return AblationReport(
        task=dataset.task,
        seeds=seeds,
        methods=ABLATION_METHODS,
        metrics=per_method,
        aggregates=aggregates,
        forest_config=forest_config,
        dsna_config=dsna_config,
        split_digests=digests,
    )


def write_ablation_report(report: AblationReport, out_dir):
    """Emit report.csv, per_class.csv (plot data), and summary.json into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = ["method,seed,metric,value"]
    for m in report.methods:
        for seed in report.seeds:
            for key, val in _metric_values(report.metrics[m][seed]).items():
                lines.append(f"{m},{seed},{key},{val:.6g}")
        for key, (mean, sd) in report.aggregates[m].items():
            lines.append(f"{m},mean,{key},{mean:.6g}")
            lines.append(f"{m},sd,{key},{sd:.6g}")
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    # per-class recall (or per-bin MAE) rows for error-profile plots
    plot_lines = ["method,seed,group,value"]
    for m in report.methods:
        for seed in report.seeds:
            rep = report.metrics[m][seed]
            groups = rep.per_class_recall if report.task == CLASSIFICATION else rep.per_bin_mae
            for g, val in groups.items():
                plot_lines.append(f"{m},{seed},{g},{val:.6g}")
    (out_dir / "per_class.csv").write_text("\n".join(plot_lines) + "\n", encoding="utf-8")

    summary = {
        "task": report.task,
        "seeds": list(report.seeds),
        "methods": list(report.methods),
        "metrics": {
            m: {str(s): report.metrics[m][s].as_dict() for s in report.seeds}
            for m in report.methods
        },
        "aggregates": {
            m: {k: {"mean": v[0], "sd": v[1]} for k, v in report.aggregates[m].items()}
            for m in report.methods
        },
        "split_digests": {str(s): d for s, d in report.split_digests.items()},
        "forest_config": asdict(report.forest_config),
        "dsna_config": asdict(report.dsna_config),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8"
    )
    return out_dir / "summary.json"
