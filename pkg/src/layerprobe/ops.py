"""Elementary layer operations on dense (N, H, W, C) tensors.

Every forward operation has a matching ``*_grad`` function taking the
forward inputs plus the upstream gradient, so layers stay stateless and the
network can recompute whatever a backward pass needs.  Operations keep the
dtype of their input: float64 is used for gradient checks, float32 for
production runs.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
RHO_OFFSET = 0.1

NORM_MODES = ("mean-only", "mean-variance")
PHASES = ("train", "eval")


def _check4(x, name="input"):
    if x.ndim != 4:
        raise InvalidArgumentError(f"{name} must be a 4-axis (N,H,W,C) tensor, got shape {x.shape}")


def _check_phase(phase):
    if phase not in PHASES:
        raise InvalidArgumentError(f"phase must be one of {PHASES}, got {phase!r}")


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------


def _conv_geometry(x, kernel, stride):
    _check4(x)
    if kernel.ndim != 4 or kernel.shape[:2] != (3, 3):
        raise InvalidArgumentError(f"kernel must have shape (3,3,Cin,Cout), got {kernel.shape}")
    if kernel.shape[2] != x.shape[3]:
        raise InvalidArgumentError(
            f"input shape {x.shape} does not match kernel shape {kernel.shape}: "
            f"{x.shape[3]} input channels vs {kernel.shape[2]}"
        )
    if stride not in (1, 2):
        raise InvalidArgumentError(f"stride must be 1 or 2, got {stride}")
    n, h, w, _ = x.shape
    ho = -(-h // stride)
    wo = -(-w // stride)
    return n, h, w, ho, wo


def _tap(a, du, dv, ho, wo, stride):
    """View of the padded array ``a`` read by kernel tap (du, dv)."""
    return a[:, du:du + stride * (ho - 1) + 1:stride, dv:dv + stride * (wo - 1) + 1:stride, :]


def conv2d(x, kernel, stride=1):
    """3x3 convolution (cross-correlation) with SAME zero padding and no bias.

    ``out[n,u,v,co] = sum x[n, s*u+du-1, s*v+dv-1, ci] * kernel[du,dv,ci,co]``.
    Each tap is one contiguous matrix product over the padded input followed
    by a shifted accumulate.
    """
    n, h, w, ho, wo = _conv_geometry(x, kernel, stride)
    cin, cout = kernel.shape[2], kernel.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    flat = xp.reshape(-1, cin)
    out = np.zeros((n, ho, wo, cout), dtype=np.result_type(x, kernel))
    for du in range(3):
        for dv in range(3):
            z = (flat @ kernel[du, dv]).reshape(n, h + 2, w + 2, cout)
            out += _tap(z, du, dv, ho, wo, stride)
    return out


def conv2d_grad(x, kernel, stride, gout):
    """Adjoints of :func:`conv2d` with respect to its input and kernel."""
    n, h, w, ho, wo = _conv_geometry(x, kernel, stride)
    cin, cout = kernel.shape[2], kernel.shape[3]
    if gout.shape != (n, ho, wo, cout):
        raise InvalidArgumentError(
            f"upstream gradient shape {gout.shape} does not match conv output shape {(n, ho, wo, cout)}"
        )
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    g2 = gout.reshape(-1, cout)

    gkernel = np.empty_like(kernel, dtype=np.result_type(x, kernel))
    for du in range(3):
        for dv in range(3):
            xs = _tap(xp, du, dv, ho, wo, stride).reshape(-1, cin)
            gkernel[du, dv] = xs.T @ g2

    gxp = np.zeros_like(xp, dtype=gkernel.dtype)
    for du in range(3):
        for dv in range(3):
            back = (g2 @ kernel[du, dv].T).reshape(n, ho, wo, cin)
            _tap(gxp, du, dv, ho, wo, stride)[...] += back
    return gxp[:, 1:h + 1, 1:w + 1, :], gkernel


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------


@dataclass
class NormStats:
    """Running per-channel statistics used by :func:`batch_normalize`."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM
    mode: str = "mean-variance"

    @classmethod
    def fresh(cls, channels, mode="mean-variance", dtype=np.float32, momentum=BN_MOMENTUM):
        if mode not in NORM_MODES:
            raise InvalidArgumentError(f"norm mode must be one of {NORM_MODES}, got {mode!r}")
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum, mode)

    @property
    def channels(self):
        return self.mean.shape[0]


def _check_stats(x, stats):
    _check4(x)
    if x.shape[3] != stats.channels:
        raise InvalidArgumentError(
            f"input has {x.shape[3]} channels but normalization stats have {stats.channels}"
        )


def batch_normalize(x, stats, phase):
    """Subtract the per-channel mean (and divide by the std in mean-variance mode).

    Returns the normalized tensor and the updated running statistics.  In the
    eval phase the running statistics are used and returned unchanged.
    There is no learned scale or shift.
    """
    _check_stats(x, stats)
    _check_phase(phase)
    if phase == "eval":
        if stats.mode == "mean-only":
            return x - stats.mean, stats
        return (x - stats.mean) / np.sqrt(stats.var + BN_EPS), stats

    mu = x.mean(axis=(0, 1, 2))
    centered = x - mu
    m = stats.momentum
    new_mean = m * stats.mean + (1 - m) * mu
    if stats.mode == "mean-only":
        return centered, replace(stats, mean=new_mean.astype(stats.mean.dtype))
    var = (centered * centered).mean(axis=(0, 1, 2))
    new_var = m * stats.var + (1 - m) * var
    out = centered / np.sqrt(var + BN_EPS)
    return out, replace(stats, mean=new_mean.astype(stats.mean.dtype), var=new_var.astype(stats.var.dtype))


def batch_normalize_grad(x, stats, phase, gout):
    """Gradient of :func:`batch_normalize` with respect to its input."""
    _check_stats(x, stats)
    _check_phase(phase)
    if phase == "eval":
        if stats.mode == "mean-only":
            return gout.copy()
        return gout / np.sqrt(stats.var + BN_EPS)
    gmean = gout.mean(axis=(0, 1, 2))
    if stats.mode == "mean-only":
        return gout - gmean
    centered = x - x.mean(axis=(0, 1, 2))
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=(0, 1, 2)) + BN_EPS)
    xhat = centered * inv_std
    return inv_std * (gout - gmean - xhat * (gout * xhat).mean(axis=(0, 1, 2)))


# --------------------------------------------------------------------------
# nonlinearities
# --------------------------------------------------------------------------


def relu(x):
    return np.maximum(x, 0)


def relu_grad(x, gout):
    return gout * (x > 0)


def _check_degree(x, k, K):
    _check4(x)
    channels = x.shape[3]
    if K is not None and K != channels:
        raise InvalidArgumentError(f"K={K} does not match channel count {channels}")
    if not 0 <= k <= channels:
        raise InvalidArgumentError(f"degree k={k} must lie in [0, {channels}]")


def relu_degree(x, k, K=None):
    """Rectify the first ``k`` channels, pass the remaining ones through."""
    _check_degree(x, k, K)
    out = x.copy()
    out[..., :k] = relu(x[..., :k])
    return out


def relu_degree_grad(x, k, gout):
    _check_degree(x, k, None)
    g = gout.copy()
    g[..., :k] *= x[..., :k] > 0
    return g


def rho_sqrt(x):
    """sign(x) * (sqrt|x| + 0.1); zero maps to zero, so the map jumps at 0."""
    return np.sign(x) * (np.sqrt(np.abs(x)) + RHO_OFFSET)


def rho_sqrt_grad(x, gout):
    ax = np.abs(x)
    nonzero = ax > 0
    deriv = np.zeros_like(x)
    deriv[nonzero] = 0.5 / np.sqrt(ax[nonzero])
    return gout * deriv


def cyclic_shift(x):
    """Channel l of the output holds channel tau(l) of the input, tau(1)=K, tau(l)=l-1."""
    _check4(x)
    if x.shape[3] < 1:
        raise InvalidArgumentError("cyclic_shift needs at least one channel")
    return np.roll(x, 1, axis=3)


def cyclic_shift_grad(gout):
    return np.roll(gout, -1, axis=3)


# --------------------------------------------------------------------------
# spatial operators
# --------------------------------------------------------------------------


def global_avg(x):
    """Spatial mean per channel: (N,H,W,C) -> (N,C)."""
    _check4(x)
    if x.shape[1] * x.shape[2] == 0:
        raise InvalidArgumentError(f"global_avg needs a non-empty spatial extent, got shape {x.shape}")
    return x.mean(axis=(1, 2))


def global_avg_grad(shape, gout):
    n, h, w, c = shape
    return np.broadcast_to((gout / (h * w))[:, None, None, :], shape).copy()


def subsample2(x):
    """Keep even spatial positions (0-based); output extent is ceil(H/2) x ceil(W/2)."""
    _check4(x)
    return x[:, ::2, ::2, :].copy()


def subsample2_grad(shape, gout):
    g = np.zeros(shape, dtype=gout.dtype)
    g[:, ::2, ::2, :] = gout
    return g


def dropout_mask(shape, rate, rng, dtype=np.float32):
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0 <= rate < 1:
        raise InvalidArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
    dtype = np.dtype(dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) * dtype.type(1 / (1 - rate))


def dropout(x, rate, rng, phase):
    _check_phase(phase)
    if not 0 <= rate < 1:
        raise InvalidArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
    if phase == "eval" or rate == 0:
        return x.copy()
    return x * dropout_mask(x.shape, rate, rng, x.dtype)
