"""A bias-free 13-layer CNN and a suite of layerwise representation probes.

Subpackages and modules:

- :mod:`layerprobe.ops` -- tensor operations with hand-written gradients
- :mod:`layerprobe.network` -- architecture, SGD training, feature taps
- :mod:`layerprobe.probes` -- k-NN, Gaussian SVM, PCA spectra, distances
- :mod:`layerprobe.boundary` -- local support vectors, margins, boundary complexity
- :mod:`layerprobe.datasets`, :mod:`layerprobe.featurestore`, :mod:`layerprobe.reports`,
  :mod:`layerprobe.checkpoint` -- data and file formats
"""

from .features import FeatureSet
from .network import NetConfig, NetParams, TrainConfig, build, forward, param_count

__version__ = "0.1.0"

__all__ = ["FeatureSet", "NetConfig", "NetParams", "TrainConfig", "build", "forward", "param_count"]
