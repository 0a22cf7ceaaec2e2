"""Per-class PCA spectra and intra-class distances."""

import math

import numpy as np

from ..errors import InvalidArgumentError
from ..features import FeatureSet


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all (p, q) pairs, zeroing each off-diagonal entry in turn,
    until the off-diagonal Frobenius norm falls below ``tol`` times the norm
    of the matrix.  Returns ``(eigenvalues, eigenvectors)`` unsorted, with
    eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64)
    d = a.shape[0]
    if a.shape != (d, d):
        raise InvalidArgumentError(f"jacobi_eigh needs a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise InvalidArgumentError("jacobi_eigh needs a symmetric matrix")
    a = 0.5 * (a + a.T)
    v = np.eye(d)
    scale = np.linalg.norm(a)
    if scale == 0:
        return np.zeros(d), v
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, np.sum(a * a) - np.sum(np.diag(a) ** 2)))
        if off <= tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                h = a[q, q] - a[p, p]
                if abs(h) + 100.0 * abs(apq) == abs(h):
                    t = apq / h  # theta would overflow; tan of the rotation is apq/h to first order
                else:
                    theta = h / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def class_covariance(fs: FeatureSet, c):
    rows = fs.rows_of(c).astype(np.float64)
    centered = rows - rows.mean(axis=0)
    return centered.T @ centered / rows.shape[0]


def pca_class_spectrum(fs: FeatureSet, c):
    """Cumulative explained-variance curve (length d) of the rows of class ``c``.

    Eigenvalues of the population covariance, sorted descending, cumulated and
    normalized so the last entry is 1.
    """
    count = int(np.sum(fs.labels == c))
    if count < fs.dim + 1:
        raise InvalidArgumentError(
            f"class {c} has {count} samples, PCA over d={fs.dim} features needs at least {fs.dim + 1}"
        )
    eigenvalues, _ = jacobi_eigh(class_covariance(fs, c))
    eigenvalues = np.clip(np.sort(eigenvalues)[::-1], 0.0, None)
    total = eigenvalues.sum()
    if total <= 0:
        return np.ones(fs.dim)
    curve = np.cumsum(eigenvalues) / total
    curve[-1] = 1.0
    return curve


def intraclass_mean_distance(fs: FeatureSet, c, block=256):
    """(1/M_c^2) * sum over all ordered pairs (i, j) of class ``c`` of |x_i - x_j|."""
    rows = fs.rows_of(c).astype(np.float64)
    m = rows.shape[0]
    if m == 0:
        raise InvalidArgumentError(f"class {c} has no samples")
    total = 0.0
    for start in range(0, m, block):
        diff = rows[start:start + block, None, :] - rows[None, :, :]
        total += np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).sum()
    return total / (m * m)
