"""Turn a self-representation matrix into cluster labels.

Standard pipeline: symmetrized absolute affinity, spectral embedding from
the normalized affinity's leading eigenvectors, then seeded k-means on the
unit-normalized embedding rows.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def affinity_from_representation(x):
    """Symmetric nonnegative affinity ``(|C| + |C^T|) / 2`` from a factored
    representation matrix."""
    c = x.to_dense()
    return 0.5 * (np.abs(c) + np.abs(c.T))


def spectral_embedding(affinity, k):
    """Rows of the top-``k`` eigenvectors of the degree-normalized affinity,
    scaled to unit length (zero rows stay zero)."""
    w = np.asarray(affinity, dtype=float)
    n = w.shape[0]
    if w.shape != (n, n):
        raise ValueError("affinity must be square")
    deg = w.sum(axis=1)
    inv_root = np.zeros(n)
    pos = deg > 0
    inv_root[pos] = 1.0 / np.sqrt(deg[pos])
    s = inv_root[:, None] * w * inv_root[None, :]
    s = 0.5 * (s + s.T)
    eigvals, eigvecs = np.linalg.eigh(s)
    emb = eigvecs[:, np.argsort(eigvals)[::-1][:k]]
    norms = np.linalg.norm(emb, axis=1)
    hit = norms > 0
    emb[hit] /= norms[hit, None]
    return emb


def kmeans(points, k, seed, restarts=10, max_iter=100):
    """Plain Lloyd iterations with k-means++ seeding and seeded restarts;
    returns the labels of the lowest-inertia run."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = _plusplus_init(points, k, rng)
        labels = None
        for _ in range(max_iter):
            dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = dists.argmin(axis=1)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                mask = labels == c
                if np.any(mask):
                    centers[c] = points[mask].mean(axis=0)
                else:
                    centers[c] = points[rng.integers(n)]
        inertia = ((points - centers[labels]) ** 2).sum()
        if inertia < best_inertia:
            best_inertia, best_labels = inertia, labels
    return best_labels


def _plusplus_init(points, k, rng):
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            ((points[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(axis=2),
            axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(points[rng.integers(n)])
            continue
        centers.append(points[rng.choice(n, p=d2 / total)])
    return np.asarray(centers, dtype=float)


def lrr_affinity_cluster(x, k, seed):
    """Cluster the columns behind a square self-representation matrix.

    Builds the symmetrized affinity from the factored representation,
    embeds it spectrally and runs seeded k-means.  Returns integer labels.
    """
    m, n = x.shape
    if m != n:
        raise ValueError("representation matrix must be square")
    if k > n:
        raise ValueError(f"cannot form {k} clusters from {n} samples")
    emb = spectral_embedding(affinity_from_representation(x), k)
    return kmeans(emb, k, seed)


def clustering_accuracy(labels, truth):
    """Fraction of correctly clustered samples under the best assignment of
    predicted clusters to true ones."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    if labels.shape != truth.shape:
        raise ValueError("label arrays must have equal length")
    pred_ids = np.unique(labels)
    true_ids = np.unique(truth)
    cost = np.zeros((pred_ids.size, true_ids.size))
    for a, pa in enumerate(pred_ids):
        for b, tb in enumerate(true_ids):
            cost[a, b] = -np.sum((labels == pa) & (truth == tb))
    row, col = linear_sum_assignment(cost)
    return float(-cost[row, col].sum() / labels.size)
