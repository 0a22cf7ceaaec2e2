"""The 13-layer bias-free convolutional network, its training step and feature taps.

Layer n computes ``x_n = rho(W_n(x_{n-1} - E x_{n-1}))``: normalize, convolve,
apply the nonlinearity, then dropout (train phase, designated layers) and
2x subsampling (designated layers).  The last activation is globally averaged
and projected onto the classes by a bias-free linear map.
"""

from dataclasses import dataclass, field, fields
import math

import numpy as np

from . import ops
from .errors import InvalidArgumentError, TrainingDivergedError
from .features import FeatureSet

NUM_LAYERS = 13
NONLINEARITIES = ("relu", "rho-sqrt", "relu-degree")
PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class NetConfig:
    width: int = 32
    nonlinearity: str = "relu"
    degree: int = 0
    classes: int = 10
    input_channels: int = 3
    norm_mode: str = "mean-variance"
    downsample_after: tuple = (6, 10)
    dropout_layers: tuple = (2, 4, 6, 8, 10, 12)
    dropout_rate: float = 0.4
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        self.downsample_after = tuple(sorted(self.downsample_after))
        self.dropout_layers = tuple(sorted(self.dropout_layers))
        self.validate()

    def validate(self):
        if self.width < 1 or self.classes < 1 or self.input_channels < 1:
            raise InvalidArgumentError("width, classes and input_channels must be positive")
        if self.nonlinearity not in NONLINEARITIES:
            raise InvalidArgumentError(f"nonlinearity must be one of {NONLINEARITIES}, got {self.nonlinearity!r}")
        if self.nonlinearity == "relu-degree" and not 0 <= self.degree <= self.width:
            raise InvalidArgumentError(f"degree {self.degree} must lie in [0, width={self.width}]")
        if self.norm_mode not in ops.NORM_MODES:
            raise InvalidArgumentError(f"norm_mode must be one of {ops.NORM_MODES}, got {self.norm_mode!r}")
        for name in ("downsample_after", "dropout_layers"):
            bad = [n for n in getattr(self, name) if not 1 <= n <= NUM_LAYERS]
            if bad:
                raise InvalidArgumentError(f"{name} contains layer indices outside 1..{NUM_LAYERS}: {bad}")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidArgumentError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.precision not in PRECISIONS:
            raise InvalidArgumentError(f"precision must be one of {tuple(PRECISIONS)}, got {self.precision!r}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["downsample_after"] = list(self.downsample_after)
        d["dropout_layers"] = list(self.dropout_layers)
        return d


@dataclass
class TrainConfig:
    base_lr: float = 0.25
    halving_period: int = 10000
    momentum: float = 0.9
    weight_decay: float = 0.0002
    batch_size: int = 128
    total_iterations: int = 120000
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.base_lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise InvalidArgumentError("learning rate, momentum and weight decay must be non-negative")
        if self.halving_period < 1 or self.batch_size < 1 or self.total_iterations < 0:
            raise InvalidArgumentError("halving_period and batch_size must be >= 1")


@dataclass
class NetParams:
    kernels: list
    classifier: np.ndarray
    norm_stats: list

    def weights(self):
        """Trainable tensors in checkpoint order: kernels 1..13 then the classifier."""
        return [*self.kernels, self.classifier]

    def parameter_count(self):
        return sum(w.size for w in self.weights())

    def copy(self):
        return NetParams(
            [k.copy() for k in self.kernels],
            self.classifier.copy(),
            [ops.NormStats(s.mean.copy(), s.var.copy(), s.momentum, s.mode) for s in self.norm_stats],
        )


def param_count(K, classes=10, input_channels=3):
    """9 * (C_in*K + 12*K^2) + classes*K: thirteen 3x3 kernels plus the projection."""
    if K < 1:
        raise InvalidArgumentError(f"K must be >= 1, got {K}")
    return 9 * (input_channels * K + (NUM_LAYERS - 1) * K * K) + classes * K


def layer_channels(config, n):
    """(C_in, C_out) of layer ``n`` (1-based)."""
    return (config.input_channels if n == 1 else config.width), config.width


def build(config, rng=None):
    """Initialize parameters: He fan-in Gaussian kernels, N(0, 1/K) classifier."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dtype = config.dtype
    kernels = []
    for n in range(1, NUM_LAYERS + 1):
        cin, cout = layer_channels(config, n)
        std = math.sqrt(2.0 / (9 * cin))
        kernels.append((rng.standard_normal((3, 3, cin, cout)) * std).astype(dtype))
    classifier = (rng.standard_normal((config.width, config.classes)) * math.sqrt(1.0 / config.width)).astype(dtype)
    stats = [
        ops.NormStats.fresh(layer_channels(config, n)[0], config.norm_mode, dtype)
        for n in range(1, NUM_LAYERS + 1)
    ]
    return NetParams(kernels, classifier, stats)


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------


def _nonlinearity(config, n):
    if n == 1 or config.nonlinearity == "relu":
        return ops.relu, ops.relu_grad
    if config.nonlinearity == "rho-sqrt":
        return ops.rho_sqrt, ops.rho_sqrt_grad
    k = config.degree
    return (lambda z: ops.relu_degree(z, k)), (lambda z, g: ops.relu_degree_grad(z, k, g))


@dataclass
class _LayerCache:
    x_in: np.ndarray
    normed: np.ndarray
    pre: np.ndarray
    mask: np.ndarray = None
    pre_sub_shape: tuple = None


@dataclass
class _Pass:
    logits: np.ndarray
    activations: list  # x_0 .. x_13
    norm_stats: list
    caches: list = field(default_factory=list)


def _run(params, config, batch, phase, rng, keep_cache):
    ops._check4(batch, "batch")
    if batch.shape[3] != config.input_channels:
        raise InvalidArgumentError(
            f"batch has {batch.shape[3]} channels, network expects {config.input_channels}"
        )
    if batch.shape[1] < 4 or batch.shape[2] < 4:
        raise InvalidArgumentError(f"batch spatial size must be >= 4, got {batch.shape[1:3]}")
    if phase == "train" and rng is None and config.dropout_rate > 0 and config.dropout_layers:
        raise InvalidArgumentError("train phase with dropout needs an rng")
    x = batch.astype(config.dtype, copy=False)
    activations = [x]
    new_stats = []
    caches = []
    for n in range(1, NUM_LAYERS + 1):
        normed, stats = ops.batch_normalize(x, params.norm_stats[n - 1], phase)
        new_stats.append(stats)
        pre = ops.conv2d(normed, params.kernels[n - 1], 1)
        act, _ = _nonlinearity(config, n)
        out = act(pre)
        cache = _LayerCache(x, normed, pre) if keep_cache else None
        if phase == "train" and n in config.dropout_layers and config.dropout_rate > 0:
            mask = ops.dropout_mask(out.shape, config.dropout_rate, rng, out.dtype)
            out = out * mask
            if cache is not None:
                cache.mask = mask
        if n in config.downsample_after:
            if cache is not None:
                cache.pre_sub_shape = out.shape
            out = ops.subsample2(out)
        caches.append(cache)
        activations.append(out)
        x = out
    logits = ops.global_avg(x) @ params.classifier
    return _Pass(logits, activations, new_stats, caches if keep_cache else [])


def _check_taps(taps):
    taps = sorted(set(taps))
    bad = [t for t in taps if not 0 <= t <= NUM_LAYERS]
    if bad:
        raise InvalidArgumentError(f"tap depths must lie in 0..{NUM_LAYERS}, got {bad}")
    return taps


def forward(params, config, batch, phase="eval", taps=(), rng=None):
    """Run the network; returns (logits, {depth: spatially averaged features}).

    Depth 0 is the input itself.  Running statistics are not modified; use
    :func:`train_step` to advance them.
    """
    taps = _check_taps(taps)
    p = _run(params, config, batch, phase, rng, keep_cache=False)
    return p.logits, {t: ops.global_avg(p.activations[t]) for t in taps}


def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    n = logits.shape[0]
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


def _backward(params, config, p, phase, dlogits):
    last = p.activations[-1]
    pooled = ops.global_avg(last)
    g_classifier = pooled.T @ dlogits
    g = ops.global_avg_grad(last.shape, dlogits @ params.classifier.T)
    g_kernels = [None] * NUM_LAYERS
    for n in range(NUM_LAYERS, 0, -1):
        c = p.caches[n - 1]
        if c.pre_sub_shape is not None:
            g = ops.subsample2_grad(c.pre_sub_shape, g)
        if c.mask is not None:
            g = g * c.mask
        _, act_grad = _nonlinearity(config, n)
        g = act_grad(c.pre, g)
        g, g_kernels[n - 1] = ops.conv2d_grad(c.normed, params.kernels[n - 1], 1, g)
        g = ops.batch_normalize_grad(c.x_in, params.norm_stats[n - 1], phase, g)
    return g_kernels, g_classifier, g


def loss_and_grads(params, config, batch, labels, rng=None, phase="train"):
    """Loss, batch accuracy, gradients [kernels..., classifier] and updated norm stats."""
    labels = np.asarray(labels)
    if labels.shape != (batch.shape[0],):
        raise InvalidArgumentError(f"labels shape {labels.shape} does not match batch size {batch.shape[0]}")
    p = _run(params, config, batch, phase, rng, keep_cache=True)
    loss, dlogits = softmax_cross_entropy(p.logits, labels)
    accuracy = float(np.mean(p.logits.argmax(axis=1) == labels))
    g_kernels, g_classifier, _ = _backward(params, config, p, phase, dlogits)
    return loss, accuracy, [*g_kernels, g_classifier], p.norm_stats


def input_gradient(params, config, batch, labels, rng=None, phase="train"):
    """Gradient of the loss with respect to the input batch."""
    p = _run(params, config, batch, phase, rng, keep_cache=True)
    _, dlogits = softmax_cross_entropy(p.logits, np.asarray(labels))
    return _backward(params, config, p, phase, dlogits)[2]


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def lr_at(iteration, tc):
    if iteration < 0:
        raise InvalidArgumentError(f"iteration must be >= 0, got {iteration}")
    return tc.base_lr / 2 ** (iteration // tc.halving_period)


def init_velocity(params):
    return [np.zeros_like(w) for w in params.weights()]


@dataclass
class StepResult:
    params: NetParams
    velocity: list
    loss: float
    accuracy: float
    lr: float


def train_step(params, config, tc, batch, labels, velocity, iteration, rng):
    """One SGD-with-momentum step on softmax cross-entropy with l2 weight decay.

    ``v <- momentum*v - lr*(grad + weight_decay*w)``, ``w <- w + v`` for every
    kernel and the classifier; normalization statistics advance by their
    exponential moving average.
    """
    loss, accuracy, grads, new_stats = loss_and_grads(params, config, batch, labels, rng, "train")
    if not math.isfinite(loss):
        raise TrainingDivergedError(iteration, loss)
    lr = lr_at(iteration, tc)
    new_weights, new_velocity = [], []
    for w, g, v in zip(params.weights(), grads, velocity):
        v = tc.momentum * v - lr * (g + tc.weight_decay * w)
        new_velocity.append(v.astype(w.dtype, copy=False))
        new_weights.append((w + v).astype(w.dtype, copy=False))
    new_params = NetParams(new_weights[:NUM_LAYERS], new_weights[NUM_LAYERS], new_stats)
    return StepResult(new_params, new_velocity, loss, accuracy, lr)


def augment(image, rng, pad=4):
    """Random horizontal flip (p=1/2), then zero-pad by ``pad`` and crop back to H x W."""
    ops._check4(image, "image")
    if image.shape[0] != 1:
        raise InvalidArgumentError(f"augment expects a single image, got batch of {image.shape[0]}")
    flip = rng.random() < 0.5
    oy, ox = rng.integers(0, 2 * pad + 1, size=2)
    return flip_crop(image, flip, int(oy), int(ox), pad)


def flip_crop(image, flip, oy, ox, pad=4):
    """Deterministic part of :func:`augment`; offsets (pad, pad) give the centered crop."""
    _, h, w, _ = image.shape
    img = image[:, :, ::-1, :] if flip else image
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    return padded[:, oy:oy + h, ox:ox + w, :].copy()


def augment_batch(images, rng):
    return np.concatenate([augment(images[i:i + 1], rng) for i in range(images.shape[0])])


class BatchStream:
    """Endless stream of minibatch indices drawn from successive random permutations."""

    def __init__(self, size, batch_size, rng):
        self.size = size
        self.batch_size = batch_size
        self.rng = rng
        self._pool = np.empty(0, dtype=np.int64)

    def next(self):
        while self._pool.size < self.batch_size:
            self._pool = np.concatenate([self._pool, self.rng.permutation(self.size)])
        idx, self._pool = self._pool[:self.batch_size], self._pool[self.batch_size:]
        return idx


def train(params, config, tc, images, labels, on_step=None, iterations=None):
    """Run ``iterations`` (default ``tc.total_iterations``) SGD steps.

    ``on_step(iteration, result)`` is called after every step.  Three
    independent rng streams derived from ``tc.seed`` drive batch order,
    augmentation and dropout.
    """
    order_rng, aug_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(tc.seed).spawn(3))
    stream = BatchStream(images.shape[0], min(tc.batch_size, images.shape[0]), order_rng)
    velocity = init_velocity(params)
    total = tc.total_iterations if iterations is None else iterations
    for it in range(total):
        idx = stream.next()
        batch = images[idx]
        if tc.augment:
            batch = augment_batch(batch, aug_rng)
        result = train_step(params, config, tc, batch, labels[idx], velocity, it, drop_rng)
        params, velocity = result.params, result.velocity
        if on_step is not None:
            on_step(it, result)
    return params


def extract_features(params, config, images, labels, depths, batch_size=256):
    """Eval-phase spatially averaged features at each requested depth."""
    depths = _check_taps(depths)
    chunks = {d: [] for d in depths}
    for start in range(0, images.shape[0], batch_size):
        _, feats = forward(params, config, images[start:start + batch_size], "eval", depths)
        for d in depths:
            chunks[d].append(feats[d])
    labels = np.asarray(labels)
    out = {}
    for d in depths:
        mat = np.concatenate(chunks[d]) if chunks[d] else np.zeros((0, _depth_dim(config, d)), config.dtype)
        out[d] = FeatureSet(d, mat, labels)
    return out


def _depth_dim(config, depth):
    return config.input_channels if depth == 0 else config.width
