"""Local support vectors, nearest-neighbor margins and boundary complexity.

A local support vector is a training point whose nearest other point has a
different label.  Level k+1 of the nested family keeps the level-k points for
which strictly more than k/2 of the first k+1 neighbors carry another label.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import InvalidArgumentError
from .features import FeatureSet
from .probes.neighbors import NeighborIndex, build_neighbor_index
from .probes.standardize import standardize_apply, standardize_fit

VOTE_RULE = "mismatches among first k+1 neighbors > k/2"


@dataclass
class SupportSet:
    depth: int
    members: np.ndarray
    level: int = 1

    def __len__(self):
        return self.members.size


@dataclass
class MarginReport:
    depth: int
    margin: float
    same_class: np.ndarray  # nearest-neighbor distances of non-support points
    support: np.ndarray  # nearest-neighbor distances of support points

    @property
    def points(self):
        return self.same_class.size + self.support.size


@dataclass
class CumulativeCurve:
    thresholds: np.ndarray
    values: np.ndarray


@dataclass
class BoundaryReport:
    depth: int
    points: int
    support: SupportSet
    margin: MarginReport
    curve_same_class: CumulativeCurve
    curve_support: CumulativeCurve
    gamma_sizes: np.ndarray
    vote_rule: str = VOTE_RULE


def _check_index(fs, index, needed=1):
    if len(index) != len(fs):
        raise InvalidArgumentError(f"neighbor index covers {len(index)} points, feature set has {len(fs)}")
    if index.depth_available < needed:
        raise InvalidArgumentError(
            f"neighbor index holds {index.depth_available} neighbors per point, {needed} needed"
        )


def support_vectors(fs: FeatureSet, index: NeighborIndex) -> SupportSet:
    if len(fs) < 2:
        raise InvalidArgumentError(f"support vectors need at least 2 points, got {len(fs)}")
    _check_index(fs, index)
    crossing = fs.labels[index.order[:, 0]] != fs.labels
    return SupportSet(fs.depth, np.flatnonzero(crossing), 1)


def margin(fs: FeatureSet, index: NeighborIndex, support: SupportSet) -> MarginReport:
    """Smallest nearest-neighbor distance among support vectors (+inf if there are none)."""
    _check_index(fs, index)
    nn_dist = index.distances[:, 0]
    is_support = np.zeros(len(fs), dtype=bool)
    is_support[support.members] = True
    b = nn_dist[is_support]
    gamma = float(b.min()) if b.size else math.inf
    return MarginReport(fs.depth, gamma, nn_dist[~is_support], b)


def cumulative_distribution(values, grid=None) -> CumulativeCurve:
    """Fraction of ``values`` <= t at each threshold t (default: the sorted distinct values)."""
    values = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if values.size == 0:
        raise InvalidArgumentError("cumulative distribution of an empty set")
    grid = np.unique(values) if grid is None else np.sort(np.asarray(grid, dtype=np.float64))
    counts = np.searchsorted(values, grid, side="right")
    return CumulativeCurve(grid, counts / values.size)


def _mismatch_counts(fs, index, k_max):
    neighbor_labels = fs.labels[index.order[:, :k_max]]
    return np.cumsum(neighbor_labels != fs.labels[:, None], axis=1)


def gamma_k_sets(fs: FeatureSet, index: NeighborIndex, k_max):
    """Member indices of the nested sets for levels 1..k_max.

    Only the survivors of each level are examined at the next one.
    """
    if not 1 <= k_max < len(fs):
        raise InvalidArgumentError(f"k_max={k_max} must lie in [1, {len(fs) - 1}]")
    _check_index(fs, index, k_max)
    counts = _mismatch_counts(fs, index, k_max)
    members = np.flatnonzero(counts[:, 0] > 0)
    levels = [members]
    for k in range(1, k_max):
        # counts[:, k] is the number of mismatches among the first k+1 neighbors
        members = members[2 * counts[members, k] > k]
        levels.append(members)
    return levels


def gamma_k_sizes(fs: FeatureSet, index: NeighborIndex, k_max):
    return np.array([m.size for m in gamma_k_sets(fs, index, k_max)], dtype=np.int64)


def _depth_report(fs, k_max):
    standardized = standardize_apply(fs, standardize_fit(fs))
    index = build_neighbor_index(standardized, k=min(max(k_max, 1), len(fs) - 1))
    support = support_vectors(standardized, index)
    report = margin(standardized, index, support)
    curve_a = cumulative_distribution(report.same_class) if report.same_class.size else None
    curve_b = cumulative_distribution(report.support) if report.support.size else None
    sizes = gamma_k_sizes(standardized, index, k_max)
    return BoundaryReport(fs.depth, len(fs), support, report, curve_a, curve_b, sizes)


def boundary_report(feature_sets, k_max):
    """Standardize each depth, then compute support set, margin, distance curves and level sizes."""
    feature_sets = list(feature_sets.values()) if isinstance(feature_sets, dict) else list(feature_sets)
    depths = [fs.depth for fs in feature_sets]
    if len(set(depths)) != len(depths):
        raise InvalidArgumentError(f"depths must be unique, got {depths}")
    reports = []
    for fs in feature_sets:
        try:
            reports.append(_depth_report(fs, k_max))
        except InvalidArgumentError as exc:
            raise InvalidArgumentError(f"depth {fs.depth}: {exc}") from exc
    return reports
