"""Cost-sensitive random decision forest: training, traversal, neighborhood merge.

Trees are grown on bootstrap resamples (N draws with replacement). Each
internal node selects a random feature subset ranked by reweighted
information gain, then learns a linear split: a weighted SVM over a local
2-means partition for classification, or a weighted SVR routed against the
node label mean for regression. Leaves store the unique in-bag training
indices that reached them; merging the leaves a query reaches across all
trees yields its local neighborhood.

Randomness discipline (all determinism guarantees depend on it):
  * the forest seed spawns one SeedSequence child per tree; tree t uses
    ``np.random.default_rng(child_t)``
  * per tree, the first draw is the bootstrap ``rng.integers(0, N, N)``
  * nodes are built preorder (left subtree before right); at each split
    attempt the draws are (1) the candidate-feature choice (only when
    D > ceil(sqrt(D))) and (2) for classification, the 16 probe rows used
    to seed 2-means. Regression nodes draw nothing besides (1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import (
    CLASSIFICATION,
    REGRESSION,
    Dataset,
    ForestConfig,
    Scaler,
    label_bin_index,
    standardize_features,
)
from .solvers import LinearModel, cost_weight, fit_weighted_svm, fit_weighted_svr

TREE_FORMAT_VERSION = 1

TWO_MEANS_PROBES = 16
TWO_MEANS_ITERS = 20


@dataclass(frozen=True, eq=False)
class LeafNode:
    sample_indices: np.ndarray  # sorted unique original training indices


@dataclass(frozen=True, eq=False)
class InternalNode:
    feature_subset: np.ndarray
    model: LinearModel
    threshold: float  # route left iff model decision < threshold
    left: Union["InternalNode", LeafNode]
    right: Union["InternalNode", LeafNode]


@dataclass(frozen=True, eq=False)
class DecisionTree:
    root: Union[InternalNode, LeafNode]
    bootstrap_indices: np.ndarray
    dimension: int


@dataclass(frozen=True, eq=False)
class CostSensitiveForest:
    trees: tuple
    task: str
    config: ForestConfig
    scaler: Scaler
    train_features: np.ndarray  # standardized (N, D)
    train_labels: np.ndarray

    @property
    def dimension(self):
        return self.train_features.shape[1]

    def standardize_query(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dimension:
            raise ValueError(
                f"query has dimension {q.shape[0]}, forest expects {self.dimension}"
            )
        return self.scaler.transform(q)


@dataclass(frozen=True, eq=False)
class Neighborhood:
    """Union of the leaf sample sets a query reaches, resolved to features/labels."""

    indices: np.ndarray  # sorted unique training indices
    features: np.ndarray  # standardized rows aligned with indices
    labels: np.ndarray


class LabelWeights:
    """Inverse-frequency label weights computed on one node's labels.

    Classification weighs each class by 1/count; regression weighs each of
    ``n_bins`` equal-width label bins (over the node's label range) by
    1/count. ``uniform=True`` degrades to all-ones weights, which makes the
    reweighted gain equal the plain entropy/variance gain.
    """

    def __init__(self, labels, task, n_bins=10, uniform=False):
        labels = np.asarray(labels)
        self.task = task
        self.uniform = uniform
        if task == CLASSIFICATION:
            counts = np.bincount(labels.astype(np.int64))
            lookup = np.ones(len(counts), dtype=np.float64)
            if not uniform:
                present = counts > 0
                lookup[present] = 1.0 / counts[present]
            self._lookup = lookup
        else:
            self.lo = float(labels.min())
            self.hi = float(labels.max())
            self.n_bins = n_bins
            bins = label_bin_index(labels, self.lo, self.hi, n_bins)
            counts = np.bincount(bins, minlength=n_bins)
            lookup = np.ones(n_bins, dtype=np.float64)
            if not uniform:
                present = counts > 0
                lookup[present] = 1.0 / counts[present]
            self._lookup = lookup

    def per_sample(self, labels):
        labels = np.asarray(labels)
        if self.task == CLASSIFICATION:
            return self.class_lookup(int(labels.max()) + 1)[labels.astype(np.int64)]
        return self._lookup[label_bin_index(labels, self.lo, self.hi, self.n_bins)]

    def class_lookup(self, n_classes):
        """Per-class weight array padded with 1.0 for ids beyond the fitted range."""
        if n_classes <= self._lookup.size:
            return self._lookup
        return np.append(self._lookup, np.ones(n_classes - self._lookup.size))


def _weighted_entropy(labels, weights):
    counts = np.bincount(labels.astype(np.int64))
    lookup = weights.class_lookup(counts.size)[: counts.size]
    present = counts > 0
    mass = counts[present] * lookup[present]
    total = mass.sum()
    p = mass / total
    return float(-(p * np.log(p)).sum()), float(total)


def _weighted_variance(labels, weights):
    w = weights.per_sample(labels)
    total = float(w.sum())
    mu = float((w * labels).sum() / total)
    var = float((w * (labels - mu) ** 2).sum() / total)
    return var, total


def reweighted_information_gain(parent_labels, left_labels, right_labels, weights):
    """Information gain under inverse-frequency label weights.

    Classification uses natural-log entropy over weighted class probabilities
    p_c ~ w_c * n_c; regression uses weighted label variance. Child terms are
    weighted by their share of the weighted sample mass. With uniform weights
    this is exactly the unweighted entropy/variance gain.
    """
    parent = np.asarray(parent_labels)
    left = np.asarray(left_labels)
    right = np.asarray(right_labels)
    if left.size == 0 or right.size == 0:
        raise ValueError("both children must be nonempty")
    if left.size + right.size != parent.size:
        raise ValueError("left and right must partition the parent")
    impurity = _weighted_entropy if weights.task == CLASSIFICATION else _weighted_variance
    h_parent, w_parent = impurity(parent, weights)
    h_left, w_left = impurity(left, weights)
    h_right, w_right = impurity(right, weights)
    return h_parent - (w_left / w_parent) * h_left - (w_right / w_parent) * h_right


def _threshold_scan(x, labels, weights):
    """Best (gain, threshold) over midpoint thresholds of one feature column."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = labels[order]
    boundary = np.nonzero(np.diff(xs) > 0)[0]  # split after position b
    if boundary.size == 0:
        return None, None
    n = xs.size
    if weights.task == CLASSIFICATION:
        ids = ys.astype(np.int64)
        n_classes = int(ids.max()) + 1
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ids] = 1.0
        cum = np.cumsum(onehot, axis=0)
        left_counts = cum[boundary]
        right_counts = cum[-1] - left_counts
        wc = weights.class_lookup(n_classes)[:n_classes]

        def entropy(counts):
            mass = counts * wc
            total = mass.sum(axis=1, keepdims=True)
            p = mass / total
            return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=1), total[:, 0]

        h_l, w_l = entropy(left_counts)
        h_r, w_r = entropy(right_counts)
        h_p, w_p = entropy(cum[-1][None, :])
        gains = h_p[0] - (w_l / w_p[0]) * h_l - (w_r / w_p[0]) * h_r
    else:
        w = weights.per_sample(ys)
        cw = np.cumsum(w)
        cwy = np.cumsum(w * ys)
        cwy2 = np.cumsum(w * ys**2)
        tw, twy, twy2 = cw[-1], cwy[-1], cwy2[-1]
        lw, lwy, lwy2 = cw[boundary], cwy[boundary], cwy2[boundary]
        rw, rwy, rwy2 = tw - lw, twy - lwy, twy2 - lwy2
        h_l = lwy2 / lw - (lwy / lw) ** 2
        h_r = rwy2 / rw - (rwy / rw) ** 2
        h_p = twy2 / tw - (twy / tw) ** 2
        gains = h_p - (lw / tw) * h_l - (rw / tw) * h_r
    best = int(np.argmax(gains))
    threshold = 0.5 * (xs[boundary[best]] + xs[boundary[best] + 1])
    return float(gains[best]), float(threshold)


def select_split_features(X_node, labels, weights, candidate_factor, rng):
    """Pick ceil(sqrt(D)) split features: random candidates ranked by univariate gain.

    Draws ``candidate_factor * ceil(sqrt(D))`` distinct candidate features,
    scores each by its best single-threshold reweighted gain (midpoints of
    sorted unique values), and keeps the top ceil(sqrt(D)). When D is at or
    below that target every feature is returned and no rng draw happens.
    """
    D = X_node.shape[1]
    n_select = math.ceil(math.sqrt(D))
    if D <= n_select:
        return np.arange(D)
    n_cand = min(D, candidate_factor * n_select)
    candidates = rng.choice(D, size=n_cand, replace=False)
    gains = np.empty(n_cand)
    for i, f in enumerate(candidates):
        gain, _ = _threshold_scan(X_node[:, f], labels, weights)
        gains[i] = -np.inf if gain is None else gain
    order = np.argsort(-gains, kind="stable")
    return np.sort(candidates[order[:n_select]])


def _two_means(X, rng):
    """2-means assignment (True = cluster 1); None when degenerate.

    Initialized with the farthest pair among 16 random probe rows, then at
    most 20 Lloyd iterations. Distance ties assign to cluster 1.
    """
    n = X.shape[0]
    probes = rng.choice(n, size=min(TWO_MEANS_PROBES, n), replace=False)
    P = X[probes]
    d2 = np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=2)
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    if d2[i, j] == 0.0:
        # probe rows coincide; look for any row distinct from the first probe
        diff = np.nonzero(np.any(X != P[0], axis=1))[0]
        if diff.size == 0:
            return None
        c1, c2 = P[0], X[diff[0]]
    else:
        c1, c2 = P[i], P[j]
    assign1 = None
    for _ in range(TWO_MEANS_ITERS):
        d1 = np.sum((X - c1) ** 2, axis=1)
        d2_ = np.sum((X - c2) ** 2, axis=1)
        new_assign = d1 <= d2_  # ties go to the lower cluster index
        if new_assign.all() or not new_assign.any():
            return None
        if assign1 is not None and np.array_equal(new_assign, assign1):
            break
        assign1 = new_assign
        c1 = X[assign1].mean(axis=0)
        c2 = X[~assign1].mean(axis=0)
    return assign1


def _median_fallback(X_sub, labels, weights):
    """Best single-feature median split, or None if every median is one-sided."""
    best = None
    for j in range(X_sub.shape[1]):
        t = float(np.median(X_sub[:, j]))
        left = X_sub[:, j] < t
        if not left.any() or left.all():
            continue
        gain = reweighted_information_gain(labels, labels[left], labels[~left], weights)
        if best is None or gain > best[0]:
            best = (gain, j, t, left)
    if best is None:
        return None
    _, j, t, left = best
    w = np.zeros(X_sub.shape[1])
    w[j] = 1.0
    return LinearModel(weights=w, bias=-t), 0.0, left


def split_classification_node(X_node, labels, subset, config, weights, rng):
    """Learn a 2-means + weighted-SVM split; returns (model, threshold, left_mask).

    Falls back to the best single-feature median split when 2-means is
    degenerate or the learned split routes everything one way; returns None
    when no usable split exists (caller makes a leaf).
    """
    X_sub = X_node[:, subset]
    assign1 = _two_means(X_sub, rng)
    if assign1 is None:
        return _median_fallback(X_sub, labels, weights)
    z = np.where(assign1, 1.0, -1.0)
    p1 = float(assign1.mean())
    if config.cost_sensitive:
        sample_w = np.where(assign1, cost_weight(p1), cost_weight(1.0 - p1))
    else:
        sample_w = np.ones(X_sub.shape[0])
    model, _ = fit_weighted_svm(X_sub, z, sample_w, config.svm_cost)
    left = model.decision(X_sub) < 0.0
    if not left.any() or left.all():
        return _median_fallback(X_sub, labels, weights)
    return model, 0.0, left


def split_regression_node(X_node, labels, subset, config, weights, rng):
    """Learn a weighted-SVR split routed against the node label mean.

    Bin proportions over ``config.label_bins`` equal-width bins give each
    sample the cost (1-p)/p of its bin; a single occupied bin (or the plain
    forest mode) uses uniform weights. Same fallback ladder as
    classification. ``rng`` is accepted for signature symmetry but unused.
    """
    X_sub = X_node[:, subset]
    y = labels.astype(np.float64)
    n = y.size
    lo, hi = float(y.min()), float(y.max())
    bins = label_bin_index(y, lo, hi, config.label_bins)
    counts = np.bincount(bins, minlength=config.label_bins)
    occupied = int((counts > 0).sum())
    if config.cost_sensitive and occupied > 1:
        p = counts[bins] / n
        sample_w = (1.0 - p) / p
    else:
        sample_w = np.ones(n)
    model, _ = fit_weighted_svr(X_sub, y, sample_w, config.svm_cost, config.svr_margin)
    node_mean = float(y.mean())
    left = model.decision(X_sub) < node_mean
    if not left.any() or left.all():
        return _median_fallback(X_sub, labels, weights)
    return model, node_mean, left


def _build_node(F, y, task, config, indices, depth, rng):
    y_node = y[indices]
    if indices.size < config.min_node_size or depth >= config.max_depth:
        return LeafNode(sample_indices=np.unique(indices))
    if task == CLASSIFICATION:
        pure = np.all(y_node == y_node[0])
    else:
        pure = float(y_node.max()) == float(y_node.min())
    if pure:
        return LeafNode(sample_indices=np.unique(indices))
    X_node = F[indices]
    weights = LabelWeights(
        y_node, task, n_bins=config.label_bins, uniform=not config.cost_sensitive
    )
    subset = select_split_features(X_node, y_node, weights, config.candidate_factor, rng)
    split = (
        split_classification_node if task == CLASSIFICATION else split_regression_node
    )(X_node, y_node, subset, config, weights, rng)
    if split is None:
        return LeafNode(sample_indices=np.unique(indices))
    model, threshold, left_mask = split
    gain = reweighted_information_gain(
        y_node, y_node[left_mask], y_node[~left_mask], weights
    )
    if gain < config.min_gain:
        return LeafNode(sample_indices=np.unique(indices))
    left = _build_node(F, y, task, config, indices[left_mask], depth + 1, rng)
    right = _build_node(F, y, task, config, indices[~left_mask], depth + 1, rng)
    return InternalNode(
        feature_subset=subset, model=model, threshold=threshold, left=left, right=right
    )


def train_forest(train: Dataset, config: ForestConfig, seed=None):
    """Train the forest on ``train`` (standardizing features internally).

    Fully deterministic given (dataset, config, seed); ``seed=None`` uses
    ``config.seed``.
    """
    if train.n < config.min_node_size:
        raise ValueError("training set smaller than min_node_size")
    if seed is None:
        seed = config.seed
    std, scaler = standardize_features(train)
    F, y = std.features, std.labels
    children = np.random.SeedSequence(seed).spawn(config.tree_count)
    trees = []
    for child in children:
        rng = np.random.default_rng(child)
        boot = rng.integers(0, train.n, size=train.n)
        root = _build_node(F, y, train.task, config, boot, 0, rng)
        trees.append(
            DecisionTree(root=root, bootstrap_indices=boot, dimension=train.dimension)
        )
    return CostSensitiveForest(
        trees=tuple(trees),
        task=train.task,
        config=config,
        scaler=scaler,
        train_features=F,
        train_labels=y,
    )


def traverse(tree: DecisionTree, q):
    """Route a standardized query to its leaf; returns that leaf's index set."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != tree.dimension:
        raise ValueError(f"query has dimension {q.shape[0]}, tree expects {tree.dimension}")
    node = tree.root
    while isinstance(node, InternalNode):
        s = float(node.model.decision(q[node.feature_subset]))
        node = node.left if s < node.threshold else node.right
    return node.sample_indices


def merge_neighborhood(forest: CostSensitiveForest, q):
    """Deduplicated union of the leaf sample sets the (raw) query reaches."""
    q_std = forest.standardize_query(q)
    parts = [traverse(tree, q_std) for tree in forest.trees]
    indices = np.unique(np.concatenate(parts))
    return Neighborhood(
        indices=indices,
        features=forest.train_features[indices],
        labels=forest.train_labels[indices],
    )


def _leaf_vote(labels):
    counts = np.bincount(labels.astype(np.int64))
    return int(np.argmax(counts))  # first max -> smallest class id


def baseline_predict(forest: CostSensitiveForest, q):
    """Standard-forest aggregation: per-leaf majority/mean, voted/averaged over trees."""
    q_std = forest.standardize_query(q)
    if forest.task == CLASSIFICATION:
        votes = [
            _leaf_vote(forest.train_labels[traverse(tree, q_std)])
            for tree in forest.trees
        ]
        return _leaf_vote(np.asarray(votes))
    means = [
        float(forest.train_labels[traverse(tree, q_std)].mean())
        for tree in forest.trees
    ]
    return float(np.mean(means))
