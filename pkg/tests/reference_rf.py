"""Minimal plain random forest written independently of the package.

Mirrors the documented randomness discipline (per-tree SeedSequence spawn,
bootstrap first, preorder builds, probe draws) so that, with cost weighting
disabled, the shipped trainer and this reference produce identical
predictions under a shared seed. Trees are plain nested dicts, node SVM/SVR
fits use scipy's L-BFGS on the same objectives, gains use textbook
entropy/variance.
"""

import math

import numpy as np
from scipy.optimize import minimize


def _standardize(features):
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    return (features - mean) / scale, mean, scale


def _entropy(labels):
    counts = np.bincount(labels)
    p = counts[counts > 0] / labels.size
    return float(-(p * np.log(p)).sum())


def _variance(labels):
    return float(np.mean((labels - labels.mean()) ** 2))


def _gain(parent, left, right, task):
    h = _entropy if task == "classification" else _variance
    n = parent.size
    return h(parent) - left.size / n * h(left) - right.size / n * h(right)


def _best_threshold_gain(x, labels, task):
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], labels[order]
    best = None
    for b in range(xs.size - 1):
        if xs[b + 1] <= xs[b]:
            continue
        g = _gain(ys, ys[: b + 1], ys[b + 1 :], task)
        if best is None or g > best:
            best = g
    return best


def _select_features(X, labels, task, factor, rng):
    D = X.shape[1]
    target = math.ceil(math.sqrt(D))
    if D <= target:
        return np.arange(D)
    cand = rng.choice(D, size=min(D, factor * target), replace=False)
    gains = []
    for f in cand:
        g = _best_threshold_gain(X[:, f], labels, task)
        gains.append(-np.inf if g is None else g)
    order = np.argsort(-np.asarray(gains), kind="stable")
    return np.sort(cand[order[:target]])


def _fit_svm(X, z, C):
    def fun(wb):
        w, b = wb[:-1], wb[-1]
        slack = np.clip(1.0 - z * (X @ w + b), 0.0, None)
        obj = w @ w + C * np.sum(slack**2)
        coeff = z * slack
        grad = np.concatenate([2 * w - 2 * C * (X.T @ coeff), [-2 * C * coeff.sum()]])
        return obj, grad

    res = minimize(fun, np.zeros(X.shape[1] + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12})
    return res.x[:-1], res.x[-1]


def _fit_svr(X, y, C, margin):
    def fun(wb):
        w, b = wb[:-1], wb[-1]
        resid = y - (X @ w + b)
        slack = np.clip(np.abs(resid) - margin, 0.0, None)
        obj = w @ w + C * np.sum(slack**2)
        coeff = np.sign(resid) * slack
        grad = np.concatenate([2 * w - 2 * C * (X.T @ coeff), [-2 * C * coeff.sum()]])
        return obj, grad

    res = minimize(fun, np.zeros(X.shape[1] + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12})
    return res.x[:-1], res.x[-1]


def _two_means(X, rng):
    n = X.shape[0]
    probes = rng.choice(n, size=min(16, n), replace=False)
    P = X[probes]
    d2 = np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=2)
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    if d2[i, j] == 0.0:
        diff = np.nonzero(np.any(X != P[0], axis=1))[0]
        if diff.size == 0:
            return None
        c1, c2 = P[0], X[diff[0]]
    else:
        c1, c2 = P[i], P[j]
    assign = None
    for _ in range(20):
        d1 = np.sum((X - c1) ** 2, axis=1)
        d2_ = np.sum((X - c2) ** 2, axis=1)
        new = d1 <= d2_
        if new.all() or not new.any():
            return None
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        c1, c2 = X[assign].mean(axis=0), X[~assign].mean(axis=0)
    return assign


def _median_split(X_sub, labels, task):
    best = None
    for j in range(X_sub.shape[1]):
        t = float(np.median(X_sub[:, j]))
        left = X_sub[:, j] < t
        if not left.any() or left.all():
            continue
        g = _gain(labels, labels[left], labels[~left], task)
        if best is None or g > best[0]:
            best = (g, j, t, left)
    if best is None:
        return None
    _, j, t, left = best
    w = np.zeros(X_sub.shape[1])
    w[j] = 1.0
    return w, -t, 0.0, left


def _split(X, labels, subset, task, C, margin, rng):
    X_sub = X[:, subset]
    if task == "classification":
        assign = _two_means(X_sub, rng)
        if assign is None:
            return _median_split(X_sub, labels, task)
        z = np.where(assign, 1.0, -1.0)
        w, b = _fit_svm(X_sub, z, C)
        left = X_sub @ w + b < 0.0
        if not left.any() or left.all():
            return _median_split(X_sub, labels, task)
        return w, b, 0.0, left
    w, b = _fit_svr(X_sub, labels.astype(float), C, margin)
    mean = float(labels.mean())
    left = X_sub @ w + b < mean
    if not left.any() or left.all():
        return _median_split(X_sub, labels, task)
    return w, b, mean, left


def train_reference_forest(features, labels, task, tree_count, max_depth,
                           min_node_size, min_gain, C, margin, factor, seed):
    F, mean, scale = _standardize(np.asarray(features, dtype=float))
    labels = np.asarray(labels)

    def build(indices, depth, rng):
        y = labels[indices]
        if indices.size < min_node_size or depth >= max_depth:
            return {"leaf": np.unique(indices)}
        if task == "classification":
            pure = np.all(y == y[0])
        else:
            pure = float(y.max()) == float(y.min())
        if pure:
            return {"leaf": np.unique(indices)}
        subset = _select_features(F[indices], y, task, factor, rng)
        split = _split(F[indices], y, subset, task, C, margin, rng)
        if split is None:
            return {"leaf": np.unique(indices)}
        w, b, thresh, left = split
        if _gain(y, y[left], y[~left], task) < min_gain:
            return {"leaf": np.unique(indices)}
        return {
            "subset": subset,
            "w": w,
            "b": b,
            "thresh": thresh,
            "left": build(indices[left], depth + 1, rng),
            "right": build(indices[~left], depth + 1, rng),
        }

    trees = []
    for child in np.random.SeedSequence(seed).spawn(tree_count):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, labels.size, size=labels.size)
        trees.append(build(boot, 0, rng))
    return {"trees": trees, "mean": mean, "scale": scale, "labels": labels, "task": task}


def reference_predict(model, query):
    q = (np.asarray(query, dtype=float) - model["mean"]) / model["scale"]
    onto = []
    for tree in model["trees"]:
        node = tree
        while "leaf" not in node:
            s = q[node["subset"]] @ node["w"] + node["b"]
            node = node["left"] if s < node["thresh"] else node["right"]
        leaf_labels = model["labels"][node["leaf"]]
        if model["task"] == "classification":
            onto.append(int(np.argmax(np.bincount(leaf_labels))))
        else:
            onto.append(float(leaf_labels.mean()))
    if model["task"] == "classification":
        return int(np.argmax(np.bincount(np.asarray(onto))))
    return float(np.mean(onto))
