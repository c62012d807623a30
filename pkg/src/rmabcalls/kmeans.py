"""Lloyd's k-means with k-means++ seeding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    # inertia after every Lloyd iteration
    history: list = field(default_factory=list)


def _sq_dists(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # remaining points coincide with chosen centers; take any unused distinct one
            idx = int(np.flatnonzero(d2 == d2.max())[0])
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(1))
    return points[chosen].copy()


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300, n_init: int = 1) -> KMeansResult:
    """Cluster ``points`` (n, d) into ``k`` groups.

    Runs ``n_init`` seeded restarts and keeps the lowest inertia. Each run stops
    once assignments no longer change or after ``max_iter`` Lloyd iterations.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n_distinct = len(np.unique(pts, axis=0)) if len(pts) else 0
    if k < 1 or k > n_distinct:
        raise ValueError(f"k={k} must be between 1 and the number of distinct points ({n_distinct})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = _lloyd(pts, kmeans_pp_init(pts, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _lloyd(pts, centers, max_iter):
    k = len(centers)
    labels = np.full(len(pts), -1)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(pts, centers)
        new_labels = d2.argmin(1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = pts[members].mean(0)
            else:
                # refill an empty cluster with the point farthest from its center
                far = int(d2[np.arange(len(pts)), labels].argmax())
                centers[c] = pts[far]
                labels[far] = c
        history.append(float(((pts - centers[labels]) ** 2).sum()))
    inertia = float(((pts - centers[labels]) ** 2).sum())
    return KMeansResult(centers, labels, inertia, it, history)


def assign_nearest(points, centers) -> np.ndarray:
    """Index of the nearest center; ties go to the lower index."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return _sq_dists(pts, np.asarray(centers, dtype=float)).argmin(1)
