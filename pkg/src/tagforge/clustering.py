"""K-Means++ seeding and Lloyd iteration over embedding vectors.

Distance work deliberately avoids matrix-multiply kernels: per-centroid
ufunc reductions keep results bit-stable regardless of BLAS threading, which
the cleaning engine's byte-identical-output contract depends on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256StarStar

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 100

# slack for the inertia monotonicity assertion; Lloyd is monotone in exact
# arithmetic, float64 accumulation can wobble in the last ulps
_INERTIA_SLACK = 1e-9


@dataclass
class ClusteringResult:
    centroids: np.ndarray  # (k, dim)
    assignment: np.ndarray  # (n,) centroid index per point
    distances: np.ndarray  # (n,) Euclidean distance to assigned centroid
    inertia: float  # sum of squared assigned distances
    iterations: int


def _sq_dist_to(points: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    diff = points - centroid
    return np.einsum("ij,ij->i", diff, diff)


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per point; ties go to the lowest centroid index."""
    n = points.shape[0]
    best = np.full(n, np.inf)
    assignment = np.zeros(n, dtype=np.int64)
    for j in range(centroids.shape[0]):
        d = _sq_dist_to(points, centroids[j])
        better = d < best
        assignment[better] = j
        best[better] = d[better]
    return assignment, best


def kmeanspp_init(points: np.ndarray, k: int, rng_seed: int) -> np.ndarray:
    """D-squared seeding: first centroid uniform, the rest sampled with
    probability proportional to squared distance to the nearest chosen one."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-d array")
    n = points.shape[0]
    distinct = np.unique(points, axis=0).shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > distinct:
        raise ValueError(f"k={k} exceeds the number of distinct points ({distinct})")

    rng = Xoshiro256StarStar(rng_seed)
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = rng.next_below(n)
    centroids[0] = points[first]
    if k == 1:
        return centroids

    d2 = _sq_dist_to(points, centroids[0])
    for j in range(1, k):
        total = float(d2.sum())
        # total > 0 is guaranteed while chosen centroids < distinct points
        r = rng.next_float() * total
        cum = np.cumsum(d2)
        idx = int(np.searchsorted(cum, r, side="right"))
        if idx >= n:  # guards the r == total float edge case
            idx = int(np.max(np.nonzero(d2 > 0)[0]))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, _sq_dist_to(points, centroids[j]))
    return centroids


def lloyd(
    points: np.ndarray,
    centroids: np.ndarray,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> ClusteringResult:
    """Alternate assignment and mean updates until the largest centroid
    displacement drops below tol or max_iter is reached.

    Empty clusters are repaired by reseeding them on the globally farthest
    point. Inertia is asserted non-increasing at every assignment.
    """
    points = np.asarray(points, dtype=np.float64)
    centroids = np.array(centroids, dtype=np.float64, copy=True)
    if centroids.ndim != 2 or centroids.shape[0] == 0:
        raise ValueError("centroids must be a non-empty 2-d array")
    if points.shape[1] != centroids.shape[1]:
        raise ValueError(
            f"dimension mismatch: points are {points.shape[1]}-d, centroids {centroids.shape[1]}-d"
        )
    k = centroids.shape[0]
    n = points.shape[0]

    assignment, d2 = _assign(points, centroids)
    inertia = float(d2.sum())
    iterations = 0

    for _ in range(max_iter):
        new_centroids = np.zeros_like(centroids)
        counts = np.zeros(k, dtype=np.int64)
        # accumulate in canonical point order so the reduction is fixed
        np.add.at(new_centroids, assignment, points)
        np.add.at(counts, assignment, 1)
        nonempty = counts > 0
        new_centroids[nonempty] /= counts[nonempty, None]

        empty = np.nonzero(~nonempty)[0]
        if empty.size:
            # farthest points become the new homes, one per empty cluster
            order = np.lexsort((np.arange(n), -d2))
            taken = 0
            for cluster in empty:
                new_centroids[cluster] = points[order[taken]]
                taken += 1

        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        assignment, d2 = _assign(points, centroids)
        new_inertia = float(d2.sum())
        if new_inertia > inertia + _INERTIA_SLACK * max(1.0, inertia):
            raise AssertionError(
                f"inertia increased: {inertia!r} -> {new_inertia!r}"
            )
        inertia = new_inertia
        iterations += 1
        if shift < tol:
            break

    return ClusteringResult(
        centroids=centroids,
        assignment=assignment,
        distances=np.sqrt(d2),
        inertia=inertia,
        iterations=iterations,
    )


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> ClusteringResult:
    """Convenience wrapper: D-squared seeding followed by Lloyd iteration."""
    return lloyd(points, kmeanspp_init(points, k, seed), max_iter=max_iter, tol=tol)
