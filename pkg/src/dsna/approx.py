"""Discriminative overlapping clustering, affine hulls, and sparse neighbor prediction.

Given the local neighborhood a query retrieves from the forest, prediction
runs in three stages: (1) label-aware overlapping K-means splits the
neighborhood into class-discriminating clusters; (2) each cluster is
modelled as an affine hull (centroid plus orthonormal basis of the centered
member matrix) and the query picks the hull approximating it best; (3) an
alternating loop refines a sparse affine combination of cluster members --
a doubly L1-regularized fit solved by an augmented-Lagrangian splitting --
whose coefficients transfer member labels onto the query.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CLASSIFICATION, REGRESSION, DsnaConfig
from .forest import CostSensitiveForest, Neighborhood, merge_neighborhood

HULL_RANK_RTOL = 1e-8

ALM_MAX_ITERS = 4000
ALM_TOL = 1e-8
# budgets used inside the prediction loop, where moderate accuracy suffices
ALM_LOOP_ITERS = 200
ALM_LOOP_TOL = 1e-4
ALM_SCORE_ITERS = 200
ALM_SCORE_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class Cluster:
    """Overlapping neighborhood cluster; ``features`` columns align with members."""

    member_indices: np.ndarray
    features: np.ndarray  # (D, M) with one column per member
    labels: np.ndarray

    @property
    def size(self):
        return self.member_indices.size


@dataclass(frozen=True, eq=False)
class AffineHull:
    """Affine subspace through a cluster: centroid plus orthonormal basis."""

    centroid: np.ndarray
    basis: np.ndarray  # (D, rank), orthonormal columns
    rank: int


@dataclass(frozen=True, eq=False)
class DsnaSolution:
    cluster_index: int
    hull_coeffs: np.ndarray
    sparse_coeffs: np.ndarray
    prior: np.ndarray
    label: object
    outer_iterations: int
    objective_trace: tuple
    outer_converged: bool
    inner_converged: bool


def label_aware_distance(x_i, x_j, y_i, y_j, task, tradeoff=1.0, max_gap=None, eps=1e-8):
    """Euclidean distance shrunk toward zero for same-label pairs.

    Classification zeroes same-class distances outright; regression scales
    by tradeoff * gap / (max_gap - gap + eps) where gap = |y_i - y_j| and
    ``max_gap`` bounds the gaps under consideration.
    """
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    d = float(np.linalg.norm(x_i - x_j))
    if task == CLASSIFICATION:
        return d if y_i != y_j else 0.0
    gap = abs(float(y_i) - float(y_j))
    if max_gap is None or max_gap < gap:
        raise ValueError("regression label-aware distance needs max_gap >= |y_i - y_j|")
    return d * (tradeoff * gap / (max_gap - gap + eps))


def _distances_to_point(rows, labels, x, y0, task, tradeoff, max_gap, eps):
    """Vectorized label-aware distances from each row to one labelled point."""
    d = np.linalg.norm(rows - x, axis=1)
    if task == CLASSIFICATION:
        return d * (labels != y0)
    gap = np.abs(labels.astype(np.float64) - float(y0))
    return d * (tradeoff * gap / (max_gap - gap + eps))


def overlapping_assignments(distances, slack):
    """Membership mask: each row joins every cluster within slack * its min distance."""
    distances = np.asarray(distances, dtype=np.float64)
    dmin = distances.min(axis=1, keepdims=True)
    return distances <= slack * dmin


def discriminative_cluster(
    neighborhood,
    cluster_count,
    overlap_slack,
    tradeoff,
    rng,
    task,
    metric="label_aware",
    overlap=True,
    eps=1e-8,
    max_iters=20,
):
    """Label-aware overlapping K-means over a Neighborhood; returns Cluster list.

    Point-to-centroid distances use the label-aware metric against each
    centroid's label profile (majority class or member-label mean). A point
    joins every cluster whose centroid distance is within ``overlap_slack``
    times its minimum distance. Degenerate metrics (single distinct label)
    fall back to plain Euclidean K-means; fewer than ``cluster_count``
    points collapse to a single cluster holding all of them.
    """
    F = neighborhood.features
    yv = neighborhood.labels
    indices = neighborhood.indices
    M = indices.size

    def cluster_of(mask):
        sel = np.nonzero(mask)[0]
        return Cluster(
            member_indices=indices[sel], features=F[sel].T.copy(), labels=yv[sel]
        )

    if M < cluster_count:
        return [cluster_of(np.ones(M, dtype=bool))]

    if task == CLASSIFICATION:
        degenerate = np.unique(yv).size == 1
    else:
        degenerate = float(yv.max()) == float(yv.min())
    if degenerate:
        metric = "euclidean"
    max_gap = float(yv.max() - yv.min()) if task == REGRESSION else None

    def point_dists(x, y0):
        if metric == "euclidean":
            return np.linalg.norm(F - x, axis=1)
        return _distances_to_point(F, yv, x, y0, task, tradeoff, max_gap, eps)

    # farthest-first init under the clustering metric, seeded by one rng draw
    chosen = [int(rng.integers(M))]
    dmin = point_dists(F[chosen[0]], yv[chosen[0]])
    while len(chosen) < cluster_count:
        nxt = int(np.argmax(dmin))
        if dmin[nxt] <= 0.0:
            break  # no point is distinguishable from the chosen set
        chosen.append(nxt)
        dmin = np.minimum(dmin, point_dists(F[nxt], yv[nxt]))

    centroids = F[chosen].copy()
    centroid_labels = list(yv[chosen])
    membership = None
    for _ in range(max_iters):
        K = centroids.shape[0]
        euclid = np.linalg.norm(F[:, None, :] - centroids[None, :, :], axis=2)
        if metric == "euclidean":
            dist = euclid
        elif task == CLASSIFICATION:
            factor = yv[:, None] != np.asarray(centroid_labels)[None, :]
            dist = euclid * factor
        else:
            gap = np.abs(yv[:, None] - np.asarray(centroid_labels, dtype=np.float64)[None, :])
            dist = euclid * (tradeoff * gap / (max_gap - gap + eps))
        dmin_col = dist.min(axis=1, keepdims=True)
        # primary cluster: min metric distance, ties by Euclidean then index
        tie = dist <= dmin_col
        primary = np.argmin(np.where(tie, euclid, np.inf), axis=1)
        if overlap:
            new_membership = dist <= overlap_slack * dmin_col
        else:
            new_membership = np.zeros((M, K), dtype=bool)
            new_membership[np.arange(M), primary] = True
        alive = new_membership.any(axis=0)
        if not alive.all():
            centroids = centroids[alive]
            centroid_labels = [l for l, a in zip(centroid_labels, alive) if a]
            new_membership = new_membership[:, alive]
        if membership is not None and membership.shape == new_membership.shape and np.array_equal(
            membership, new_membership
        ):
            break
        membership = new_membership
        for k in range(membership.shape[1]):
            members = membership[:, k]
            centroids[k] = F[members].mean(axis=0)
            if task == CLASSIFICATION:
                centroid_labels[k] = int(np.argmax(np.bincount(yv[members])))
            else:
                centroid_labels[k] = float(yv[members].mean())
    return [cluster_of(membership[:, k]) for k in range(membership.shape[1])]


def fit_affine_hull(cluster):
    """Centroid + orthonormal basis of the centered member matrix (SVD).

    Directions whose singular value falls below 1e-8 of the largest are
    truncated; single-member clusters yield a rank-0 hull (a point).
    """
    L = cluster.features
    mu = L.mean(axis=1)
    centered = L - mu[:, None]
    if L.shape[1] == 1:
        return AffineHull(centroid=mu, basis=np.zeros((L.shape[0], 0)), rank=0)
    U, S, _ = np.linalg.svd(centered, full_matrices=False)
    if S.size == 0 or S[0] <= 0.0:
        return AffineHull(centroid=mu, basis=np.zeros((L.shape[0], 0)), rank=0)
    keep = S > HULL_RANK_RTOL * S[0]
    basis = U[:, keep]
    return AffineHull(centroid=mu, basis=basis, rank=int(keep.sum()))


def hull_project(q, hull):
    """Orthogonal projection onto the hull: coefficients and residual norm."""
    q = np.asarray(q, dtype=np.float64)
    v = hull.basis.T @ (q - hull.centroid)
    residual = float(np.linalg.norm(q - hull.centroid - hull.basis @ v))
    return v, residual


def neighbor_prior(
    q,
    cluster,
    label_estimate,
    task,
    radius="adaptive",
    decay=1.0,
    tradeoff=1.0,
    max_gap=None,
    eps=1e-8,
):
    """Coefficient prior concentrated on same-label near neighbors of the query.

    Members within the label-aware radius (adaptive mode: the median member
    distance) get weight exp(-distance / decay), normalized to sum 1; other
    entries are zero. An empty neighbor set falls back to a uniform prior
    over the nearest quarter of the cluster.
    """
    q = np.asarray(q, dtype=np.float64)
    rows = cluster.features.T
    if task == REGRESSION:
        gaps = np.abs(cluster.labels.astype(np.float64) - float(label_estimate))
        max_gap = max(float(max_gap or 0.0), float(gaps.max()) if gaps.size else 0.0)
    dist = _distances_to_point(
        rows, cluster.labels, q, label_estimate, task, tradeoff, max_gap, eps
    )
    eps_k = float(np.median(dist)) if radius == "adaptive" else float(radius)
    inside = dist <= eps_k
    prior = np.zeros(cluster.size)
    if not inside.any():
        count = _ceil_quarter(cluster.size)
        nearest = np.argsort(dist, kind="stable")[:count]
        prior[nearest] = 1.0 / count
        return prior
    w = np.exp(-dist[inside] / decay)
    total = w.sum()
    if total <= 0.0:  # all weights underflowed
        prior[inside] = 1.0 / inside.sum()
        return prior
    prior[inside] = w / total
    return prior


def _ceil_quarter(n):
    return -(-n // 4)


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def sparse_objective(q, L, alpha, prior, l1, prior_l1):
    """The doubly L1-regularized approximation objective at ``alpha``."""
    r = q - L @ alpha
    return float(
        np.sqrt(r @ r) + l1 * np.abs(alpha).sum() + prior_l1 * np.abs(alpha - prior).sum()
    )


def solve_sparse_approx(
    q,
    L,
    prior,
    l1,
    prior_l1,
    max_iters=ALM_MAX_ITERS,
    tol=ALM_TOL,
):
    """Minimize ||q - L a||_2 + l1*||a||_1 + prior_l1*||a - prior||_1.

    Augmented-Lagrangian splitting with one auxiliary block per nonsmooth
    term: the fit residual gets a group shrinkage, both L1 blocks get
    soft-thresholding, and the coefficient update is a fixed SPD solve. The
    penalty is matched to the regularization scale (clipped mean of the two
    L1 weights) and held fixed; iteration stops when both the primal and the
    dual residual drop below ``tol``. Returns (alpha, objective, trace,
    converged) where ``trace`` is the incumbent (best-so-far) objective after
    each sweep, hence non-increasing, and ``alpha`` is the incumbent iterate.
    """
    q = np.asarray(q, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    D, M = L.shape
    LT = L.T.copy()
    inv = np.linalg.inv(LT @ L + 2.0 * np.eye(M))
    penalty_scale = 0.5 * (l1 + prior_l1)
    rho = min(max(penalty_scale, 0.01), 1.0) if penalty_scale > 0 else 1.0

    alpha = prior.copy()
    e = q - L @ alpha
    beta = alpha.copy()
    delta = alpha - prior
    u1 = np.zeros(D)
    u2 = np.zeros(M)
    u3 = np.zeros(M)

    best_alpha = alpha.copy()
    best_obj = sparse_objective(q, L, alpha, prior, l1, prior_l1)
    trace = [best_obj]
    converged = False
    for _ in range(max_iters):
        e_old, beta_old, delta_old = e, beta, delta
        v = q - L @ alpha + u1
        nv = np.sqrt(v @ v)
        e = v * max(0.0, 1.0 - 1.0 / (rho * nv)) if nv > 0 else np.zeros(D)
        beta = _soft(alpha + u2, l1 / rho)
        delta = _soft(alpha - prior + u3, prior_l1 / rho)
        rhs = LT @ (q - e + u1) + (beta - u2) + (prior + delta - u3)
        alpha = inv @ rhs
        r1 = q - L @ alpha - e
        r2 = alpha - beta
        r3 = alpha - prior - delta
        u1 += r1
        u2 += r2
        u3 += r3
        obj = sparse_objective(q, L, alpha, prior, l1, prior_l1)
        if obj < best_obj:
            best_obj = obj
            best_alpha = alpha.copy()
        trace.append(best_obj)
        primal = float(np.sqrt(r1 @ r1 + r2 @ r2 + r3 @ r3))
        de = LT @ (e - e_old)
        db = beta - beta_old
        dd = delta - delta_old
        dual = rho * float(np.sqrt(de @ de + db @ db + dd @ dd))
        if primal < tol and dual < tol:
            converged = True
            break
    return best_alpha, best_obj, tuple(trace), converged


def decode_label(alpha, labels, task, vote_threshold):
    """Turn sparse coefficients into a label.

    Regression is the linear transfer labels . alpha. Classification keeps
    entries with |a_i| >= vote_threshold * max|a| and lets them vote with
    weight |a_i|; ties and the all-zero case fall back to the smallest class
    id / majority class (mean label for regression).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    labels = np.asarray(labels)
    if alpha.shape != labels.shape:
        raise ValueError("alpha and labels must have equal length")
    if task == REGRESSION:
        if not np.any(alpha):
            return float(labels.mean())
        return float(labels.astype(np.float64) @ alpha)
    mags = np.abs(alpha)
    top = mags.max()
    if top == 0.0:
        return int(np.argmax(np.bincount(labels.astype(np.int64))))
    keep = mags >= vote_threshold * top
    votes = np.bincount(labels[keep].astype(np.int64), weights=mags[keep])
    return int(np.argmax(votes))  # first max -> smallest class id


def _initial_label(labels, task):
    if task == CLASSIFICATION:
        return int(np.argmax(np.bincount(labels.astype(np.int64))))
    return float(labels.mean())


def select_cluster(q, clusters, hulls, eps_guard, scorer=None):
    """Pick the hull with minimal projection residual.

    Residual ties (within eps_guard * (1 + ||q||)) are broken by ``scorer``
    when given (smaller is better), otherwise by the distance from the query
    to the nearest cluster member, then by cluster index, so the choice
    stays deterministic when several hulls span the query exactly (common
    in low dimension).
    """
    q = np.asarray(q, dtype=np.float64)
    projections = [hull_project(q, h) for h in hulls]
    residuals = np.array([r for _, r in projections])
    tol = eps_guard * (1.0 + float(np.linalg.norm(q)))
    tied = np.nonzero(residuals <= residuals.min() + tol)[0]
    if tied.size == 1:
        best = int(tied[0])
    elif scorer is not None:
        scores = [scorer(int(k)) for k in tied]
        best = int(tied[int(np.argmin(scores))])
    else:
        nn = [
            float(np.linalg.norm(clusters[k].features.T - q, axis=1).min())
            for k in tied
        ]
        best = int(tied[int(np.argmin(nn))])
    return best, projections[best]


def _affine_augment(q, L):
    """Homogeneous coordinates: appending a 1-row makes exact fits affine (sum 1).

    Affine hulls are made of affine combinations; in high dimension an exact
    fit of the query forces the coefficients to sum to ~1 on its own, but in
    low dimension the span covers everything and the constraint must be
    encoded, otherwise label transfer picks up a systematic offset.
    """
    q_aug = np.append(np.asarray(q, dtype=np.float64), 1.0)
    L_aug = np.vstack([L, np.ones((1, L.shape[1]))])
    return q_aug, L_aug


def dsna_from_neighborhood(neighborhood, q_std, task, config: DsnaConfig, rng):
    """Run the full alternating prediction loop on a prepared neighborhood.

    Members are first put in canonical (training-index) order so the result
    does not depend on the order the neighborhood was assembled in.
    """
    order = np.argsort(neighborhood.indices, kind="stable")
    neighborhood = Neighborhood(
        indices=neighborhood.indices[order],
        features=neighborhood.features[order],
        labels=neighborhood.labels[order],
    )
    q_std = np.asarray(q_std, dtype=np.float64)
    clusters = discriminative_cluster(
        neighborhood,
        config.cluster_count,
        config.overlap_slack,
        config.distance_tradeoff,
        rng,
        task,
        eps=config.eps_guard,
    )
    hulls = [fit_affine_hull(c) for c in clusters]
    max_gap = float(neighborhood.labels.max() - neighborhood.labels.min()) if task == REGRESSION else None

    def prior_for(cluster, label_estimate):
        return neighbor_prior(
            q_std,
            cluster,
            label_estimate,
            task,
            radius=config.neighbor_radius,
            decay=config.prior_decay,
            tradeoff=config.distance_tradeoff,
            max_gap=max_gap,
            eps=config.eps_guard,
        )

    total_members = neighborhood.indices.size

    def sparse_score(k):
        # prior-free parsimony of the cluster's affine reconstruction of the
        # query (the coefficient prior is only defined once a cluster and a
        # label iterate exist, so residual ties are broken before it applies),
        # discounted by the cluster's neighborhood share so that rare local
        # modes are not drowned out by sheer member count
        c = clusters[k]
        qa, La = _affine_augment(q_std, c.features)
        _, obj, _, _ = solve_sparse_approx(
            qa,
            La,
            np.zeros(c.size),
            config.sparsity_penalty,
            0.0,
            max_iters=ALM_SCORE_ITERS,
            tol=ALM_SCORE_TOL,
        )
        return obj * np.sqrt(c.size / total_members)

    k_best, (v_best, _) = select_cluster(
        q_std, clusters, hulls, config.eps_guard, scorer=sparse_score
    )
    cluster = clusters[k_best]
    hull = hulls[k_best]
    hull_point = hull.centroid + hull.basis @ v_best
    label = _initial_label(cluster.labels, task)
    q_aug, L_aug = _affine_augment(q_std, cluster.features)
    hull_aug = np.append(hull_point, 1.0)

    trace = []
    prior = np.zeros(cluster.size)
    alpha = np.zeros(cluster.size)
    inner_ok = True
    outer_converged = False
    iterations = 0
    for t in range(1, config.max_outer_iters + 1):
        prior = prior_for(cluster, label)
        alpha, _, _, conv = solve_sparse_approx(
            q_aug,
            L_aug,
            prior,
            config.sparsity_penalty,
            config.prior_penalty,
            max_iters=ALM_LOOP_ITERS,
            tol=ALM_LOOP_TOL,
        )
        inner_ok = inner_ok and conv
        new_label = decode_label(alpha, cluster.labels, task, config.vote_threshold)
        trace.append(
            sparse_objective(
                hull_aug,
                L_aug,
                alpha,
                prior,
                config.sparsity_penalty,
                config.prior_penalty,
            )
        )
        iterations = t
        if task == CLASSIFICATION:
            outer_converged = new_label == label
        else:
            outer_converged = abs(new_label - label) < config.label_tol
        label = new_label
        if outer_converged:
            break
    return DsnaSolution(
        cluster_index=k_best,
        hull_coeffs=v_best,
        sparse_coeffs=alpha,
        prior=prior,
        label=label,
        outer_iterations=iterations,
        objective_trace=tuple(trace),
        outer_converged=outer_converged,
        inner_converged=inner_ok,
    )


def query_rng(seed, q_std):
    """Deterministic per-query random stream derived from the seed and query bytes."""
    digest = hashlib.sha256(np.asarray(q_std, dtype=np.float64).tobytes()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *words]))


def dsna_predict(forest: CostSensitiveForest, q, config: Optional[DsnaConfig] = None):
    """Predict the label of a raw query through the full pipeline."""
    if config is None:
        config = DsnaConfig()
    q_std = forest.standardize_query(q)
    neighborhood = merge_neighborhood(forest, q)
    rng = query_rng(forest.config.seed, q_std)
    return dsna_from_neighborhood(neighborhood, q_std, forest.task, config, rng)
