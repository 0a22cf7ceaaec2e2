from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass
class FeatureSet:
    """Spatially averaged features of one split at one depth, with labels.

    ``features`` is an (M, d) real matrix and ``labels`` an integer vector of
    length M.
    """

    depth: int
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise InvalidArgumentError(f"features must be a 2-D matrix, got shape {self.features.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise InvalidArgumentError(
                f"labels shape {self.labels.shape} does not match {self.features.shape[0]} feature rows"
            )
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise InvalidArgumentError(f"labels must be integers, got dtype {self.labels.dtype}")
        if self.labels.size and self.labels.min() < 0:
            raise InvalidArgumentError("labels must be non-negative")
        if not np.all(np.isfinite(self.features)):
            raise InvalidArgumentError(f"depth {self.depth}: features contain non-finite values")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def rows_of(self, label):
        return self.features[self.labels == label]

    def with_features(self, features):
        return FeatureSet(self.depth, features, self.labels)
