"""Independent reference computations used by the test-suite.

Nothing here calls into the layer implementations' math: convolutions and
dense maps are plain loops, gradients are central differences.
"""

import numpy as np

from eeamc.nn import BatchNorm1D, Conv1D, Dense, Dropout, MaxPool1D, ReLU, Softmax, cross_entropy, softmax

H = 1e-3
REL_TOL = 1e-3
# denominator floor for the relative error, so exactly-zero gradients compare absolutely
REL_FLOOR = 1e-6


def numeric_grad(f, x, h=H):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def naive_conv1d(x, w, b, stride, padding):
    """x (C, L), w (O, C, K) -> (O, L_out) by explicit loops."""
    c_in, length = x.shape
    c_out, _, k = w.shape
    xp = np.zeros((c_in, length + 2 * padding))
    xp[:, padding:padding + length] = x
    l_out = (length + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, l_out))
    for o in range(c_out):
        for t in range(l_out):
            acc = float(b[o])
            for c in range(c_in):
                for j in range(k):
                    acc += float(w[o, c, j]) * float(xp[c, t * stride + j])
            out[o, t] = acc
    return out


def naive_dense(x, w, b):
    out = np.zeros(w.shape[0])
    for o in range(w.shape[0]):
        out[o] = b[o] + sum(float(w[o, i]) * float(x[i]) for i in range(w.shape[1]))
    return out


def brute_maxpool_grad(x, grad_out, window, stride):
    """Subgradient of max-pool: each window's gradient to its first maximum."""
    dx = np.zeros_like(x)
    n, c, _ = x.shape
    for a in range(n):
        for ch in range(c):
            for t in range(grad_out.shape[2]):
                seg = list(x[a, ch, t * stride:t * stride + window])
                j = seg.index(max(seg))
                dx[a, ch, t * stride + j] += grad_out[a, ch, t]
    return dx


# ---------------------------------------------------------------------------
# Finite-difference checks, one per layer kind. Each returns the worst relative
# error over input and parameter gradients for one random instance.


def _layer_check(layer, x, rng, train=True, reseed=None):
    layer.astype(np.float64)
    r = None

    def loss():
        if reseed is not None:
            reseed()
        out = layer.forward(x, train)
        return float(np.sum(out * r))

    if reseed is not None:
        reseed()
    out = layer.forward(x, train)
    r = rng.standard_normal(out.shape)
    layer.zero_grad()
    gx = layer.backward(r)
    analytic = {name: g.copy() for name, g in layer.grads.items()}
    errs = [rel_error(gx, numeric_grad(loss, x))]
    for name, p in layer.params.items():
        errs.append(rel_error(analytic[name], numeric_grad(loss, p)))
    return max(errs)


def check_conv(rng):
    c_in, c_out, k = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    stride, pad = rng.integers(1, 3), rng.integers(0, 2)
    length = rng.integers(k, 9)
    layer = Conv1D(int(c_in), int(c_out), int(k), int(stride), int(pad), rng=rng)
    layer.params["bias"][:] = rng.standard_normal(c_out)
    x = rng.standard_normal((2, c_in, length))
    return _layer_check(layer, x, rng)


def check_relu(rng):
    x = rng.standard_normal((2, 3, 6))
    x[np.abs(x) < 0.05] = 0.5  # keep finite-difference probes off the kink
    return _layer_check(ReLU(), x, rng)


def check_maxpool(rng):
    window = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    length = int(rng.integers(window, 9))
    # distinct values spaced far wider than the probe step
    x = rng.permutation(2 * 2 * length).astype(np.float64).reshape(2, 2, length) * 0.1
    return _layer_check(MaxPool1D(window, stride), x, rng)


def check_batchnorm(rng, train=True):
    c = int(rng.integers(1, 4))
    layer = BatchNorm1D(c)
    layer.params["gamma"][:] = rng.uniform(0.5, 1.5, c)
    layer.params["beta"][:] = rng.standard_normal(c)
    x = rng.standard_normal((3, c, 4))
    if not train:
        layer.buffers["running_mean"][:] = rng.standard_normal(c)
        layer.buffers["running_var"][:] = rng.uniform(0.5, 2, c)
    return _layer_check(layer, x, rng, train=train)


def check_dense(rng):
    d_in, d_out = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    layer = Dense(d_in, d_out, rng=rng)
    layer.params["bias"][:] = rng.standard_normal(d_out)
    return _layer_check(layer, rng.standard_normal((3, d_in)), rng)


def check_dropout(rng):
    layer = Dropout(0.3)
    seed = int(rng.integers(1 << 30))

    def reseed():
        layer.rng = np.random.default_rng(seed)

    return _layer_check(layer, rng.standard_normal((2, 3, 5)), rng, reseed=reseed)


def check_softmax(rng):
    return _layer_check(Softmax(), rng.standard_normal((3, 10)), rng)


def check_cross_entropy(rng):
    logits = rng.standard_normal((4, 10))
    labels = rng.integers(0, 10, 4)
    _, grad = cross_entropy(softmax(logits), labels)
    numeric = numeric_grad(lambda: cross_entropy(softmax(logits), labels)[0], logits)
    return rel_error(grad, numeric)


GRADIENT_CHECKS = {
    "Conv1D": check_conv,
    "ReLU": check_relu,
    "MaxPool1D": check_maxpool,
    "BatchNorm1D": check_batchnorm,
    "BatchNorm1D(eval)": lambda rng: check_batchnorm(rng, train=False),
    "Dense": check_dense,
    "Dropout": check_dropout,
    "Softmax": check_softmax,
    "CrossEntropy": check_cross_entropy,
}


def gradient_suite(instances=20, seed=0):
    """Worst relative error per layer kind over ``instances`` random cases."""
    worst = {}
    for kind, check in GRADIENT_CHECKS.items():
        rng = np.random.default_rng([seed, len(kind)])
        worst[kind] = max(check(rng) for _ in range(instances))
    return worst


# ---------------------------------------------------------------------------
# Closed forms for the default architecture


def default_param_count(variant):
    """Hand-written per-layer parameter counts for the default ArchConfig."""
    conv = [(2, 64), (64, 64), (64, 32), (32, 32), (32, 16), (16, 16)]
    k = 3
    conv_params = [ci * co * k + co for ci, co in conv]
    bn = {2: 2 * 64, 4: 2 * 32, 6: 2 * 16}  # gamma + beta after blocks 2, 4, 6
    fc = (16 * 8) * 128 + 128 + 128 * 64 + 64 + 64 * 10 + 10
    backbone = sum(conv_params) + sum(bn.values()) + fc
    if variant == "baseline":
        return backbone
    # exit head: pool(2) -> flatten -> 64 -> 10, input is Q after the branch block
    q = {"v0": (64, 128), "v1": (64, 64), "v2": (32, 32), "v3": (16, 32)}[variant]
    flat = q[0] * (q[1] // 2)
    return backbone + flat * 64 + 64 + 64 * 10 + 10


def default_flops():
    """(common, tail) MAC/element counts for the default plan, per branch block."""
    # per-layer costs along the backbone, in order, with the block they belong to
    costs = []
    length, c_in = 128, 2
    for block, (c_out, pool) in enumerate([(64, 0), (64, 1), (32, 0), (32, 1), (16, 0), (16, 1)], start=1):
        costs.append((block, c_out * length * c_in * 3))  # conv
        costs.append((block, c_out * length))  # relu
        if pool:
            costs.append((block, c_out * length))  # pool over its input
            length //= 2
            costs.append((block, c_out * length))  # batchnorm
        c_in = c_out
    costs.append((7, 16 * 16))  # final pool
    costs += [(7, 128 * 128), (7, 128), (7, 0), (7, 128 * 64), (7, 64), (7, 0), (7, 64 * 10), (7, 10)]
    return costs
