"""Gaussian-kernel SVM, one-vs-rest, trained by SMO on the dual.

Each binary problem solves

    max_a  sum(a) - 1/2 a^T Q a,   Q_ij = y_i y_j k(x_i, x_j),
    s.t.   0 <= a_i <= C,  sum(a_i y_i) = 0,

with maximal-violating-pair working sets chosen by second-order gain.  The
solver works with the shifted kernel ``k - 1 = expm1(-|x-y|^2 / 2 sigma^2)``:
the constant offset cancels in both the dual and the decision function
because ``sum(a_i y_i) = 0``, and the shift keeps full precision when the
bandwidth is huge (the linear-SVM limit).
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from ..features import FeatureSet

DEFAULT_C = 1.0
DEFAULT_TOL = 1e-5
_TAU = 1e-12
# kernel matrices up to this many rows are precomputed; larger problems compute columns on demand
DENSE_LIMIT = 4096


def _sq_dists(a, b):
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(sq, 0.0)


def shifted_gaussian_kernel(a, b, sigma):
    """exp(-|a-b|^2 / (2 sigma^2)) - 1, evaluated without cancellation."""
    return np.expm1(-_sq_dists(a, b) / (2.0 * sigma * sigma))


def gaussian_kernel(a, b, sigma):
    return np.exp(-_sq_dists(a, b) / (2.0 * sigma * sigma))


def default_bandwidth(x):
    """Mean Euclidean norm of the training rows."""
    return float(np.linalg.norm(x, axis=1).mean())


@dataclass
class BinarySolution:
    alpha: np.ndarray
    rho: float
    iterations: int
    violation: float
    objective: float


class _Columns:
    def __init__(self, x, sigma):
        self.x = x
        self.sigma = sigma
        self.dense = shifted_gaussian_kernel(x, x, sigma) if x.shape[0] <= DENSE_LIMIT else None

    def col(self, i):
        if self.dense is not None:
            return self.dense[:, i]
        return shifted_gaussian_kernel(self.x, self.x[i:i + 1], self.sigma)[:, 0]

    def diag(self):
        return np.zeros(self.x.shape[0])


def solve_binary(kernel_col, diag, y, C, tol=DEFAULT_TOL, max_iter=None):
    """SMO on one binary dual.  ``kernel_col(i)`` returns column i of the kernel matrix.

    Stops when the maximal KKT violation ``max_up(-yG) - min_low(-yG)`` drops
    below ``tol``.
    """
    y = np.asarray(y, dtype=np.float64)
    m = y.shape[0]
    if max_iter is None:
        max_iter = max(100000, 100 * m)
    alpha = np.zeros(m)
    grad = -np.ones(m)  # gradient of the minimization form 1/2 a^T Q a - sum(a)
    pos = y > 0
    violation = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        minus_yg = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        if not up.any() or not low.any():
            violation = 0.0
            break
        cand_up = np.where(up, minus_yg, -np.inf)
        i = int(np.argmax(cand_up))
        g_max = cand_up[i]
        g_min = np.where(low, minus_yg, np.inf).min()
        violation = g_max - g_min
        if violation < tol:
            break
        ki = kernel_col(i)
        b = g_max - minus_yg
        a = diag[i] + diag - 2.0 * ki
        a = np.where(a > 0, a, _TAU)
        gain = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(gain))
        kj = kernel_col(j)
        _update_pair(alpha, grad, y, i, j, ki, kj, diag, C)
    objective = float(alpha.sum() - 0.5 * alpha @ ((grad + 1.0)))
    return BinarySolution(alpha, _rho(alpha, grad, y, C), it, float(violation), objective)


def _update_pair(alpha, grad, y, i, j, ki, kj, diag, C):
    yi, yj = y[i], y[j]
    ai_old, aj_old = alpha[i], alpha[j]
    quad = diag[i] + diag[j] - 2.0 * ki[j]
    if quad <= 0:
        quad = _TAU
    if yi != yj:
        delta = (-grad[i] - grad[j]) / quad
        diff = ai_old - aj_old
        ai, aj = ai_old + delta, aj_old + delta
        if diff > 0:
            if aj < 0:
                aj, ai = 0.0, diff
        elif ai < 0:
            ai, aj = 0.0, -diff
        if diff > 0:
            if ai > C:
                ai, aj = C, C - diff
        elif aj > C:
            aj, ai = C, C + diff
    else:
        delta = (grad[i] - grad[j]) / quad
        total = ai_old + aj_old
        ai, aj = ai_old - delta, aj_old + delta
        if total > C:
            if ai > C:
                ai, aj = C, total - C
        elif aj < 0:
            aj, ai = 0.0, total
        if total > C:
            if aj > C:
                aj, ai = C, total - C
        elif ai < 0:
            ai, aj = 0.0, total
    alpha[i], alpha[j] = ai, aj
    # Q[:, t] = y * y_t * k[:, t]
    grad += y * (yi * (ai - ai_old) * ki + yj * (aj - aj_old) * kj)


def _rho(alpha, grad, y, C):
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yg[free].mean())
    at_upper = alpha >= C
    pos = y > 0
    # bounds on rho from the KKT conditions of the points at a bound
    ub_mask = (at_upper & ~pos) | (~at_upper & pos)
    lb_mask = (at_upper & pos) | (~at_upper & ~pos)
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub):
        return float(lb)
    if not np.isfinite(lb):
        return float(ub)
    return float((ub + lb) / 2)


@dataclass
class SvmModel:
    """One-vs-rest Gaussian SVM.

    ``alpha[c]`` holds the dual coefficients of the "class c vs rest" problem
    over all training rows, ``signs[c]`` the matching +-1 targets and
    ``bias[c]`` its offset, so the decision value is
    ``sum_i alpha[c,i] signs[c,i] k(x_i, x) + bias[c]``.
    """

    classes: np.ndarray
    support: np.ndarray
    alpha: np.ndarray
    signs: np.ndarray
    bias: np.ndarray
    sigma: float
    C: float
    solutions: list = field(default_factory=list, repr=False)

    def support_indices(self, c):
        return np.flatnonzero(self.alpha[c] > 0)

    def decision_values(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.support.shape[1]:
            raise InvalidArgumentError(
                f"dimension mismatch: model has d={self.support.shape[1]}, input has d={x.shape[1]}"
            )
        coef = self.alpha * self.signs
        used = np.flatnonzero(np.any(coef != 0, axis=0))
        if used.size == 0:
            return np.broadcast_to(self.bias, (x.shape[0], self.bias.size)).copy()
        k = shifted_gaussian_kernel(x, self.support[used], self.sigma)
        return k @ coef[:, used].T + self.bias


def svm_train(train: FeatureSet, C=DEFAULT_C, bandwidth=None, tol=DEFAULT_TOL):
    """Train one binary SVM per class (class vs rest) on ``train``."""
    if C <= 0:
        raise InvalidArgumentError(f"C must be positive, got {C}")
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise InvalidArgumentError(f"SVM training needs at least 2 classes, got {classes.size}")
    x = train.features.astype(np.float64)
    sigma = default_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not sigma > 0:
        raise InvalidArgumentError(f"bandwidth must be positive, got {sigma}")
    cols = _Columns(x, sigma)
    diag = cols.diag()
    alphas, signs, biases, sols = [], [], [], []
    for c in classes:
        y = np.where(train.labels == c, 1.0, -1.0)
        sol = solve_binary(cols.col, diag, y, C, tol)
        alphas.append(sol.alpha)
        signs.append(y)
        biases.append(-sol.rho)
        sols.append(sol)
    return SvmModel(classes, x, np.array(alphas), np.array(signs), np.array(biases), sigma, float(C), sols)


def svm_predict(model: SvmModel, test: FeatureSet):
    """Class with the largest decision value (lowest class index on ties); returns (predictions, accuracy)."""
    if len(test) == 0:
        return np.zeros(0, dtype=model.classes.dtype), float("nan")
    scores = model.decision_values(test.features)
    predictions = model.classes[np.argmax(scores, axis=1)]
    return predictions, float(np.mean(predictions == test.labels))
