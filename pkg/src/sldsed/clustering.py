"""Two-way K-means over one clip's bottleneck frames and background selection.

With the Pearson distance each frame is standardized (centred, unit norm)
before clustering; the centroid is then the arithmetic mean of standardized
members, which is the minimizer of the summed Pearson distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument

DISTANCES = ("pearson", "euclidean")
MAX_ITER = 100


@dataclass
class ClusterResult:
    assignment: np.ndarray
    centroids: np.ndarray
    distance_kind: str
    background_id: int | None = None
    objective: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "assignment": [int(a) for a in self.assignment],
            "background_id": None if self.background_id is None else int(self.background_id),
            "distance": self.distance_kind,
        }


def pearson_distance(fm, fn) -> float:
    """``1 - corr(fm, fn)``; 1.0 when either vector has zero variance."""
    fm = np.asarray(fm, dtype=np.float64)
    fn = np.asarray(fn, dtype=np.float64)
    if fm.shape != fn.shape or fm.ndim != 1 or fm.size < 2:
        raise InvalidArgument("pearson distance needs two equal-length vectors of dimension >= 2")
    a, b = fm - fm.mean(), fn - fn.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0
    rho = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return 1.0 - rho


def _standardize(frames):
    centred = frames - frames.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centred, axis=1, keepdims=True)
    flat = norms[:, 0] <= 1e-12 * max(1.0, float(np.abs(frames).max(initial=0.0)))
    z = np.divide(centred, norms, out=np.zeros_like(centred), where=~flat[:, None])
    return z, flat


def pairwise_distances(frames, centroids, kind: str) -> np.ndarray:
    """``(T, K)`` distances; squared Euclidean for ``euclidean``."""
    if kind == "euclidean":
        sq = (frames ** 2).sum(axis=1)[:, None] + (centroids ** 2).sum(axis=1)[None, :]
        return np.maximum(sq - 2.0 * frames @ centroids.T, 0.0)
    if kind == "pearson":
        z, flat_f = _standardize(frames)
        c, flat_c = _standardize(centroids)
        d = 1.0 - np.clip(z @ c.T, -1.0, 1.0)
        d[flat_f, :] = 1.0
        d[:, flat_c] = 1.0
        return d
    raise InvalidArgument(f"unknown distance kind {kind!r}; expected one of {DISTANCES}")


def _init_centroids(space, kind, rng):
    d = pairwise_distances(space, space, kind)
    i, j = np.unravel_index(np.argmax(d), d.shape)
    if d[i, j] <= 0.0:
        i, j = rng.choice(space.shape[0], size=2, replace=False)
    return space[[i, j]].copy()


def _repair_empty(assign, dist):
    """Move the frame farthest from the only occupied centroid into the empty cluster."""
    for k in (0, 1):
        if not np.any(assign == k):
            other = 1 - k
            far = int(np.argmax(dist[:, other]))
            assign[far] = k
    return assign


def kmeans2(frames, distance_kind: str = "pearson", seed: int = 0, max_iter: int = MAX_ITER) -> ClusterResult:
    """Lloyd iterations with K = 2 until the assignment stops changing."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise InvalidArgument("kmeans2 needs at least 2 frames")
    if distance_kind not in DISTANCES:
        raise InvalidArgument(f"unknown distance kind {distance_kind!r}")
    if distance_kind == "pearson":
        if frames.shape[1] < 2:
            raise InvalidArgument("pearson distance needs frame dimension >= 2")
        space, _ = _standardize(frames)
    else:
        space = frames
    rng = np.random.default_rng(seed)
    centroids = _init_centroids(space, distance_kind, rng)
    assign = None
    objective = []
    for _ in range(max_iter):
        dist = pairwise_distances(space, centroids, distance_kind)
        # argmin keeps ties in cluster 0
        new = _repair_empty(np.argmin(dist, axis=1), dist)
        objective.append(float(dist[np.arange(len(new)), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        centroids = np.stack([space[assign == k].mean(axis=0) for k in (0, 1)])
    dist = pairwise_distances(space, centroids, distance_kind)
    objective.append(float(dist[np.arange(len(assign)), assign].sum()))
    return ClusterResult(assign.astype(np.int64), centroids, distance_kind, objective=objective)


def compactness(frames, members) -> float:
    """Mean Euclidean distance of member frames to their mean."""
    pts = np.asarray(frames, dtype=np.float64)[members]
    return float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).mean())


def select_background(frames, result: ClusterResult, tie_tol: float = 1e-12) -> ClusterResult:
    """Mark the more compact cluster (smaller mean Euclidean distance) as background."""
    frames = np.asarray(frames, dtype=np.float64)
    masks = [result.assignment == k for k in (0, 1)]
    if not all(m.any() for m in masks):
        raise InvalidArgument("both clusters must be non-empty")
    d0, d1 = (compactness(frames, m) for m in masks)
    if abs(d0 - d1) <= tie_tol:
        bg = 0 if masks[0].sum() >= masks[1].sum() else 1
    else:
        bg = 0 if d0 < d1 else 1
    return replace(result, background_id=bg)


def activity_frames(result: ClusterResult) -> np.ndarray:
    if result.background_id is None:
        raise InvalidArgument("background cluster not designated; call select_background first")
    return np.asarray(result.assignment) != result.background_id


def cluster_frames(frames, distance_kind: str = "pearson", seed: int = 0) -> ClusterResult:
    return select_background(frames, kmeans2(frames, distance_kind, seed))


def result_to_json(result: ClusterResult) -> str:
    return json.dumps(result.to_json())
