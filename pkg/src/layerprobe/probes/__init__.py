"""Layerwise probes over feature sets: k-NN, Gaussian SVM, PCA spectra, distances."""

from .neighbors import NeighborIndex, build_neighbor_index, k_nearest, knn_classify, majority_vote
from .spectra import class_covariance, intraclass_mean_distance, jacobi_eigh, pca_class_spectrum
from .standardize import StandardizationStats, standardize, standardize_apply, standardize_fit
from .svm import SvmModel, default_bandwidth, gaussian_kernel, svm_predict, svm_train

__all__ = [
    "NeighborIndex",
    "StandardizationStats",
    "SvmModel",
    "build_neighbor_index",
    "class_covariance",
    "default_bandwidth",
    "gaussian_kernel",
    "intraclass_mean_distance",
    "jacobi_eigh",
    "k_nearest",
    "knn_classify",
    "majority_vote",
    "pca_class_spectrum",
    "standardize",
    "standardize_apply",
    "standardize_fit",
    "svm_predict",
    "svm_train",
]
