from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..features import FeatureSet

STD_FLOOR = 1e-8


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray


def standardize_fit(train: FeatureSet) -> StandardizationStats:
    """Per-column mean and population std of the training rows (std floored at 1e-8)."""
    if len(train) < 2:
        raise InvalidArgumentError(f"standardization needs at least 2 rows, got {len(train)}")
    x = train.features.astype(np.float64)
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return StandardizationStats(mean, std)


def standardize_apply(fs: FeatureSet, stats: StandardizationStats) -> FeatureSet:
    if fs.dim != stats.mean.shape[0]:
        raise InvalidArgumentError(f"feature dim {fs.dim} does not match standardization dim {stats.mean.shape[0]}")
    return fs.with_features((fs.features.astype(np.float64) - stats.mean) / stats.std)


def standardize(train: FeatureSet, *others: FeatureSet):
    """Fit on ``train`` and transform it together with ``others``."""
    stats = standardize_fit(train)
    return tuple(standardize_apply(fs, stats) for fs in (train, *others))
