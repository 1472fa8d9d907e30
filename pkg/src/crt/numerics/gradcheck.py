"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import DiffArray, backward


def finite_difference_check(f: Callable[[], DiffArray], params: Sequence[DiffArray], h: float = 1e-5,
                            max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max over parameter entries of |analytic - central| / max(1, |analytic|).

    ``f`` must rebuild the graph from the current parameter values on every
    call. ``max_entries`` subsamples entries per parameter for large models.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.values).all():
        raise FloatingPointError("finite_difference_check: f returned a non-finite value")
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    def evaluate() -> float:
        value = float(f().values)
        if not np.isfinite(value):
            raise FloatingPointError("finite_difference_check: f returned a non-finite value")
        return value

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.values.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate()
            flat[i] = orig - h
            down = evaluate()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = grad.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


def _op_cases(rng: np.random.Generator):
    """(name, inputs, fn) triples; fn maps input DiffArrays to one output DiffArray."""
    from . import tensor as T

    def r(*shape, positive=False):
        v = rng.standard_normal(shape)
        return np.abs(v) + 0.5 if positive else v

    idx = rng.integers(0, 5, size=(3, 4))
    return [
        ("add", [r(3, 4), r(4)], lambda a, b: T.add(a, b)),
        ("sub", [r(3, 4), r(3, 1)], lambda a, b: T.sub(a, b)),
        ("mul", [r(3, 4), r(3, 4)], lambda a, b: T.mul(a, b)),
        ("div", [r(3, 4), r(3, 4, positive=True)], lambda a, b: T.div(a, b)),
        ("matmul", [r(2, 3, 4), r(4, 5)], lambda a, b: T.matmul(a, b)),
        ("conv1d", [r(2, 6, 3), r(3, 3, 4)], lambda x, w: T.conv1d(x, w)),
        ("layer_norm", [r(4, 8), r(8), r(8)], lambda x, g, b: T.layer_norm(x, g, b)),
        ("softmax", [r(3, 5)], lambda x: T.softmax(x, axis=-1)),
        ("log_softmax", [r(3, 5)], lambda x: T.log_softmax(x, axis=-1)),
        ("logsumexp", [r(3, 5)], lambda x: T.logsumexp(x, axis=1)),
        ("gelu", [r(3, 4)], lambda x: T.gelu(x)),
        # keep relu inputs away from the kink
        ("relu", [np.sign(r(3, 4)) * (np.abs(r(3, 4)) + 0.1)], lambda x: T.relu(x)),
        ("tanh", [r(3, 4)], lambda x: T.tanh(x)),
        ("sum", [r(3, 4)], lambda x: T.sum_(x, axis=0)),
        ("mean", [r(3, 4, 2)], lambda x: T.mean(x, axis=(0, 2))),
        ("concat", [r(2, 3), r(2, 2)], lambda a, b: T.concat([a, b], axis=1)),
        ("slice", [r(4, 5)], lambda x: T.slice_(x, (slice(1, 3), [0, 2, 2]))),
        ("transpose", [r(2, 3, 4)], lambda x: T.transpose(x, (2, 0, 1))),
        ("reshape", [r(2, 6)], lambda x: T.reshape(x, (3, 4))),
        ("take_rows", [r(3, 5, 2)], lambda x: T.take_rows(x, idx)),
        ("embedding", [r(5, 3)], lambda t: T.embedding(t, idx)),
        ("exp", [r(3, 4)], lambda x: T.exp(x)),
        ("log", [r(3, 4, positive=True)], lambda x: T.log(x)),
        ("power", [r(3, 4, positive=True)], lambda x: T.power(x, 1.7)),
        ("cosine_similarity", [r(3, 4), r(3, 4)], lambda a, b: T.cosine_similarity(a, b)),
    ]


def op_gradient_audit(trials: int = 20, seed: int = 0, h: float = 1e-6) -> dict[str, float]:
    """Worst relative gradient error per registered op over ``trials`` random draws."""
    from .tensor import DiffArray, mul, sum_

    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for _ in range(trials):
        for name, arrays, fn in _op_cases(rng):
            params = [DiffArray(a, requires_grad=True) for a in arrays]
            probe = rng.standard_normal(fn(*params).shape)

            def f(fn=fn, params=params, probe=probe):
                return sum_(mul(fn(*params), probe))

            err = finite_difference_check(f, params, h=h)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst
