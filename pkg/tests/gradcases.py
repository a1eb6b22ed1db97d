"""Seeded random gradient-check cases, one builder per autograd primitive.

Each builder returns ``(fn, inputs)`` where ``fn(*inputs)`` is the primitive's
output; callers reduce it to a scalar with a fixed random projection.
"""

import numpy as np

from averagetime.autograd import PRIMITIVES, Tensor, apply, grad_check, sum_

SHAPES = [(3,), (2, 4), (2, 3, 4)]


def _t(rng, shape, low=None):
    x = rng.normal(size=shape)
    if low is not None:
        # keep away from kinks and poles
        x = np.sign(x) * (np.abs(x) + low)
    return Tensor(x, requires_grad=True)


def build(kind, rng):
    shape = SHAPES[rng.integers(len(SHAPES))]
    if kind == "matmul":
        b, m, k, n = rng.integers(1, 4, size=4)
        if rng.random() < 0.5:
            return lambda a, c: apply(kind, [a, c]), [_t(rng, (b, m, k)), _t(rng, (k, n))]
        return lambda a, c: apply(kind, [a, c]), [_t(rng, (m, k)), _t(rng, (b, k, n))]
    if kind in ("add", "subtract", "multiply"):
        other = shape[1:] if len(shape) > 1 and rng.random() < 0.5 else shape
        return lambda a, c: apply(kind, [a, c]), [_t(rng, shape), _t(rng, other)]
    if kind == "divide":
        return lambda a, c: apply(kind, [a, c]), [_t(rng, shape), _t(rng, shape, low=0.5)]
    if kind == "scale":
        f = float(rng.normal())
        return lambda a: apply(kind, [a], factor=f), [_t(rng, shape)]
    if kind == "transpose":
        return lambda a: apply(kind, [a]), [_t(rng, (2, 3, 4))]
    if kind == "reshape":
        return lambda a: apply(kind, [a], shape=(4, -1)), [_t(rng, (2, 3, 4))]
    if kind == "concat":
        axis = int(rng.integers(0, 2))
        s2 = (2, 5) if axis == 1 else (4, 3)
        return lambda a, c: apply(kind, [a, c], axis=axis), [_t(rng, (2, 3)), _t(rng, s2)]
    if kind == "slice":
        return lambda a: apply(kind, [a], index=(Ellipsis, slice(1, 3))), [_t(rng, (2, 3, 4))]
    if kind == "softmax":
        return lambda a: apply(kind, [a]), [_t(rng, shape)]
    if kind == "gelu":
        return lambda a: apply(kind, [a]), [_t(rng, shape)]
    if kind == "relu":
        return lambda a: apply(kind, [a]), [_t(rng, shape, low=0.1)]
    if kind == "layer_norm":
        d = shape[-1]
        return (
            lambda x, g, b: apply(kind, [x, g, b]),
            [_t(rng, shape), Tensor(rng.uniform(0.5, 1.5, d), requires_grad=True), _t(rng, (d,))],
        )
    if kind == "dropout":
        seed = int(rng.integers(1 << 30))
        # same mask on every call: a fresh generator per evaluation
        return (
            lambda a: apply(kind, [a], rate=0.3, rng=np.random.default_rng(seed), training=True),
            [_t(rng, shape)],
        )
    if kind in ("mean", "sum"):
        axis = None if rng.random() < 0.3 else -1
        return lambda a: apply(kind, [a], axis=axis), [_t(rng, shape)]
    if kind == "mse":
        return lambda a, c: apply(kind, [a, c]), [_t(rng, shape), _t(rng, shape)]
    raise KeyError(kind)


def max_error(kind, seed):
    """Largest grad-check error over every input of one seeded case."""
    rng = np.random.default_rng(seed)
    fn, inputs = build(kind, rng)
    out_shape = fn(*inputs).shape
    w = Tensor(rng.normal(size=out_shape))
    worst = 0.0
    for i, x in enumerate(inputs):

        def loss(_):
            return sum_(fn(*inputs) * w)

        worst = max(worst, grad_check(loss, inputs[i]))
    return worst


KINDS = sorted(PRIMITIVES)
