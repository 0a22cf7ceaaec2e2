"""Finite-difference and comparison helpers shared by the test modules."""

import numpy as np

from layerprobe import ops


def relative_error(a, b, floor=1e-12):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def directional_check(f, x, grad, rng, h=1e-5, directions=3):
    """Worst relative error between <grad, v> and a central difference of f along v."""
    worst = 0.0
    for _ in range(directions):
        v = rng.standard_normal(x.shape)
        v /= np.linalg.norm(v)
        fd = (f(x + h * v) - f(x - h * v)) / (2 * h)
        worst = max(worst, relative_error(np.sum(grad * v), fd))
    return worst


def entrywise_fd(f, x, h=1e-5):
    """Central-difference gradient of scalar f, one coordinate at a time."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def tiny_network(seed, nonlinearity="relu", degree=0, norm_mode="mean-variance", width=4, size=8, batch=3):
    """A float64 network small enough for finite differences, plus a batch and labels."""
    from layerprobe import network

    config = network.NetConfig(
        width=width, nonlinearity=nonlinearity, degree=degree, classes=3, input_channels=2,
        norm_mode=norm_mode, seed=seed, precision="float64",
    )
    params = network.build(config)
    rng = np.random.default_rng([seed, 99])
    x = rng.standard_normal((batch, size, size, 2))
    y = rng.integers(0, 3, size=batch)
    return config, params, x, y


def min_kink_distance(params, config, x, dropout_seed):
    """Smallest |preactivation| over every layer, for the given batch and dropout masks."""
    from layerprobe import network

    p = network._run(params, config, x, "train", np.random.default_rng(dropout_seed), keep_cache=True)
    return min(float(np.abs(c.pre).min()) for c in p.caches)


def _central(f, h, order):
    d = lambda step: (f(step) - f(-step)) / (2 * step)
    return d(h) if order == 2 else (4 * d(h / 2) - d(h)) / 3


def network_gradient_error(config, params, x, y, dropout_seed=7, h=1e-5, directions=2, order=2):
    """Worst directional FD error of the train-phase loss, over all weights and over the input.

    Returns ``(error, proximity)`` where ``proximity`` is the largest ratio
    |change of a preactivation| / |its distance from 0| over all stencil
    points.  A value near or above 1 means the stencil reached a kink and the
    comparison is meaningless; callers resample such instances.  Each direction mixes
    a random unit vector with the normalized gradient so the directional
    derivative is never vanishingly small.  ``order=4`` uses the
    Richardson-extrapolated five-point central stencil.
    """
    from layerprobe import network

    base = [c.pre for c in network._run(params, config, x, "train", np.random.default_rng(dropout_seed), True).caches]
    proximity = 0.0

    def loss(w, xx):
        nonlocal proximity
        trial = params.copy()
        trial.kernels = list(w[:-1])
        trial.classifier = w[-1]
        p = network._run(trial, config, xx, "train", np.random.default_rng(dropout_seed), keep_cache=True)
        for c, b in zip(p.caches, base):
            proximity = max(proximity, float(np.max(np.abs(c.pre - b) / np.maximum(np.abs(b), 1e-300))))
        return network.softmax_cross_entropy(p.logits, y)[0]

    def unit(parts):
        norm = np.sqrt(sum(np.sum(a * a) for a in parts))
        return [a / norm for a in parts]

    weights = params.weights()
    _, _, grads, _ = network.loss_and_grads(params, config, x, y, np.random.default_rng(dropout_seed))
    gx = network.input_gradient(params, config, x, y, np.random.default_rng(dropout_seed))
    rng = np.random.default_rng(config.seed + 1000)
    g_unit, gx_unit = unit(grads), unit([gx])[0]
    worst = 0.0
    for _ in range(directions):
        v = unit([a + b for a, b in zip(unit([rng.standard_normal(w.shape) for w in weights]), g_unit)])
        fd = _central(lambda t: loss([w + t * a for w, a in zip(weights, v)], x), h, order)
        worst = max(worst, relative_error(sum(np.sum(g * a) for g, a in zip(grads, v)), fd))
        u = unit([unit([rng.standard_normal(x.shape)])[0] + gx_unit])[0]
        fd = _central(lambda t: loss(weights, x + t * u), h, order)
        worst = max(worst, relative_error(np.sum(gx * u), fd))
    return worst, proximity


# rho-sqrt behaves like sqrt|x| next to its jump, so second derivatives blow
# up there: demand that the stencil moves every preactivation by at most 1%
# of its distance to 0.  Rectifiers are piecewise linear and only need the
# stencil not to cross a kink.
_FD_POLICY = {
    "relu": dict(h=1e-5, max_proximity=1.0, width=4, batch=3),
    "relu-degree": dict(h=1e-5, max_proximity=1.0, width=4, batch=3),
    "rho-sqrt": dict(h=1e-6, max_proximity=1e-2, width=3, batch=2),
}
KINK_RADIUS = 1e-4


def composition_errors(nonlinearity, norm_mode, count, degree=2, first_seed=0, max_tries=2000):
    """FD errors of the full 13-layer network on ``count`` accepted random instances.

    Instances whose preactivations sit within KINK_RADIUS of 0, or whose
    stencil reaches a kink, are resampled.  Returns (errors, seeds tried).
    """
    policy = _FD_POLICY[nonlinearity]
    errors, seed = [], first_seed
    while len(errors) < count:
        if seed - first_seed >= max_tries:
            raise RuntimeError(f"only {len(errors)} usable instances in {max_tries} tries")
        config, params, x, y = tiny_network(
            seed, nonlinearity, degree if nonlinearity == "relu-degree" else 0, norm_mode,
            width=policy["width"], batch=policy["batch"],
        )
        seed += 1
        if min_kink_distance(params, config, x, 7) < KINK_RADIUS:
            continue
        err, proximity = network_gradient_error(config, params, x, y, h=policy["h"], order=4)
        if proximity >= policy["max_proximity"]:
            continue
        errors.append(err)
    return errors, seed - first_seed


def _scalar(op, r):
    return lambda z: float(np.sum(op(z) * r))


def _away_from(x, lo):
    """Push entries with |x| < lo out to +-lo so kinks stay out of finite-difference reach."""
    return np.where(np.abs(x) < lo, np.copysign(2 * lo, x), x)


CASES = {
    "conv-stride1-input": lambda x, r, k: (lambda z: ops.conv2d(z, k, 1), lambda z, g: ops.conv2d_grad(z, k, 1, g)[0]),
    "conv-stride2-input": lambda x, r, k: (lambda z: ops.conv2d(z, k, 2), lambda z, g: ops.conv2d_grad(z, k, 2, g)[0]),
    "relu": lambda x, r, k: (ops.relu, ops.relu_grad),
    "relu-degree": lambda x, r, k: (lambda z: ops.relu_degree(z, 2), lambda z, g: ops.relu_degree_grad(z, 2, g)),
    "rho-sqrt": lambda x, r, k: (ops.rho_sqrt, ops.rho_sqrt_grad),
    "cyclic-shift": lambda x, r, k: (ops.cyclic_shift, lambda z, g: ops.cyclic_shift_grad(g)),
    "subsample": lambda x, r, k: (ops.subsample2, lambda z, g: ops.subsample2_grad(z.shape, g)),
    "global-avg": lambda x, r, k: (ops.global_avg, lambda z, g: ops.global_avg_grad(z.shape, g)),
    "dropout": lambda x, r, k: (
        lambda z: z * ops.dropout_mask(z.shape, 0.4, np.random.default_rng(5), z.dtype),
        lambda z, g: g * ops.dropout_mask(z.shape, 0.4, np.random.default_rng(5), z.dtype),
    ),
}
for _mode in ops.NORM_MODES:
    for _phase in ops.PHASES:
        def _bn(x, r, k, mode=_mode, phase=_phase):
            stats = ops.NormStats(np.linspace(-0.5, 0.5, x.shape[3]), np.linspace(0.5, 2.0, x.shape[3]), mode=mode)
            return (lambda z: ops.batch_normalize(z, stats, phase)[0],
                    lambda z, g: ops.batch_normalize_grad(z, stats, phase, g))
        CASES[f"batchnorm-{_mode}-{_phase}"] = _bn


def layer_gradient_errors(name, seeds):
    """Worst directional finite-difference error of one layer op over seeds."""
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 6, 6, 4))
        if name.startswith(("relu", "rho")):
            # the relu kink is 1e-4 away; rho's FD truncation needs |x| >= 1e-2
            x = _away_from(x, 1e-2 if name == "rho-sqrt" else 1e-4)
        k = rng.standard_normal((3, 3, 4, 3))
        f, g = CASES[name](x, None, k)
        r = rng.standard_normal(f(x).shape)
        worst = max(worst, directional_check(_scalar(f, r), x, g(x, r), rng))
    return worst
