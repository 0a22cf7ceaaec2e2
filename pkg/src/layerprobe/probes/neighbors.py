"""Exact Euclidean nearest-neighbor search and k-NN classification.

Distances are computed from explicit coordinate differences (not the
``|a|^2 + |b|^2 - 2ab`` expansion) so that equal points are at distance
exactly 0.  Squared differences are accumulated one coordinate at a time in
index order, which fixes the rounding of every distance and therefore the
neighbor orderings on any platform.  Ties are broken by ascending point index.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..features import FeatureSet

# bytes of scratch memory used per block of query rows
_BLOCK_BYTES = 32 * 2**20


@dataclass
class NeighborIndex:
    """For each point, the other points by ascending distance (self excluded).

    ``order[i, j]`` is the index of the (j+1)-th nearest neighbor of point i and
    ``distances[i, j]`` its distance.  The lists may be truncated to the first
    ``order.shape[1]`` neighbors.
    """

    order: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return self.order.shape[0]

    @property
    def depth_available(self):
        return self.order.shape[1]

    def nn(self, i, k=1):
        """Index of the k-th nearest neighbor of point ``i`` (1-based k)."""
        return int(self.order[i, k - 1])


def _squared_distances(queries, points):
    sq = np.zeros((queries.shape[0], points.shape[0]))
    for c in range(points.shape[1]):
        diff = queries[:, c, None] - points[None, :, c]
        sq += diff * diff
    return sq


def _first_k(sq, k):
    """Column indices of the k smallest entries of each row, ordered by (value, index)."""
    m = sq.shape[1]
    if k >= m:
        return np.argsort(sq, axis=1, kind="stable")[:, :k]
    part = np.partition(sq, k - 1, axis=1)[:, k - 1]
    out = np.empty((sq.shape[0], k), dtype=np.int64)
    for r in range(sq.shape[0]):
        cand = np.flatnonzero(sq[r] <= part[r])
        ranked = cand[np.argsort(sq[r, cand], kind="stable")]
        out[r] = ranked[:k]
    return out


def k_nearest(queries, points, k, exclude_self=False):
    """Indices and distances of the ``k`` nearest ``points`` for every query row.

    With ``exclude_self`` the queries are the points themselves and row i never
    returns index i.
    """
    queries = np.asarray(queries, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    m = points.shape[0]
    if queries.ndim != 2 or points.ndim != 2 or queries.shape[1] != points.shape[1]:
        raise InvalidArgumentError(f"query shape {queries.shape} does not match point shape {points.shape}")
    available = m - 1 if exclude_self else m
    if not 1 <= k <= available:
        raise InvalidArgumentError(f"k={k} must lie in [1, {available}]")
    block = max(1, _BLOCK_BYTES // (16 * m))
    order = np.empty((queries.shape[0], k), dtype=np.int64)
    dist = np.empty((queries.shape[0], k), dtype=np.float64)
    for start in range(0, queries.shape[0], block):
        stop = min(start + block, queries.shape[0])
        sq = _squared_distances(queries[start:stop], points)
        if exclude_self:
            rows = np.arange(stop - start)
            sq[rows, start + rows] = np.inf
        idx = _first_k(sq, k)
        order[start:stop] = idx
        dist[start:stop] = np.sqrt(np.take_along_axis(sq, idx, axis=1))
    return order, dist


def build_neighbor_index(fs: FeatureSet, k=None) -> NeighborIndex:
    """Exact neighbor ordering of every point of ``fs`` among the others.

    ``k`` truncates each list to its first k entries; default is the full
    ordering of all M-1 other points.
    """
    m = len(fs)
    if m < 2:
        raise InvalidArgumentError(f"a neighbor index needs at least 2 points, got {m}")
    k = m - 1 if k is None else k
    order, dist = k_nearest(fs.features, fs.features, k, exclude_self=True)
    return NeighborIndex(order, dist)


def majority_vote(neighbor_labels):
    """Majority label of each row; ties go to the tied class met first (nearest)."""
    neighbor_labels = np.asarray(neighbor_labels)
    if neighbor_labels.shape[1] == 1:
        return neighbor_labels[:, 0].copy()
    out = np.empty(neighbor_labels.shape[0], dtype=neighbor_labels.dtype)
    for r, row in enumerate(neighbor_labels):
        counts = np.bincount(row)
        tied = counts == counts.max()
        out[r] = row[np.argmax(tied[row])]
    return out


def knn_classify(train: FeatureSet, test: FeatureSet, k=1, leave_one_out=False):
    """Majority vote over the k nearest training points; returns (predictions, accuracy).

    ``leave_one_out`` classifies the training set against itself with each
    point's own row excluded (``test`` must then be ``train``).
    """
    if train.dim != test.dim:
        raise InvalidArgumentError(f"dimension mismatch: train has d={train.dim}, test has d={test.dim}")
    if leave_one_out and test is not train:
        raise InvalidArgumentError("leave_one_out classification requires test to be the training set")
    if k < 1 or k > len(train):
        raise InvalidArgumentError(f"k={k} must lie in [1, {len(train)}]")
    if len(test) == 0:
        return np.zeros(0, dtype=train.labels.dtype), float("nan")
    order, _ = k_nearest(test.features, train.features, k, exclude_self=leave_one_out)
    predictions = majority_vote(train.labels[order])
    return predictions, float(np.mean(predictions == test.labels))
