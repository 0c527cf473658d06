"""Plain k-means with k-means++ seeding (Lloyd's iterations)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_path: list[float]


def _plus_plus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = X[rng.integers(n)]
            continue
        probs = d2 / total
        centers[j] = X[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(features, k: int = 3, seed: int = 0, max_iter: int = 300, tol: float = 1e-10) -> KMeansResult:
    """Cluster rows of ``features`` into ``k`` groups.

    The within-cluster sum of squares is nonincreasing across iterations;
    empty clusters are reseeded to the point farthest from its centroid.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows n={n}")

    rng = np.random.default_rng(seed)
    centers = _plus_plus_init(X, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    path: list[float] = []
    inertia = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_inertia = float(d2[np.arange(n), labels].sum())
        path.append(new_inertia)
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(d2[np.arange(n), labels]))
                centers[j] = X[far]
                labels[far] = j
        if inertia - new_inertia <= tol and np.isfinite(inertia):
            inertia = new_inertia
            break
        inertia = new_inertia

    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), labels].sum())
    return KMeansResult(labels=labels, centroids=centers, inertia=inertia, n_iter=it, inertia_path=path)
