"""Finite-difference verification of analytic gradients.

The numerical side only ever calls forward evaluations, so it stays
independent of the backward implementations it audits. All checks run in
float64: central differences at eps = 1e-5 leave roundoff well below the
1e-4 acceptance threshold.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, backward

EPS = 1e-5


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central-difference gradient of scalar-valued f w.r.t. array x.

    f must read x's current contents on each call; x is perturbed in place
    and restored.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f()
        flat[i] = orig - eps
        f_minus = f()
        flat[i] = orig
        grad.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, 1); relative above unit scale,
    absolute below it."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_op_gradients(
    build_loss: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    eps: float = EPS,
) -> float:
    """Compare backward() output against finite differences for every input.

    `build_loss` maps input tensors to a scalar loss tensor and must be a
    pure function of the inputs' current values. Returns the worst
    gradient error across all inputs.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks require float64 inputs")
        t.grad = None
    loss = build_loss(inputs)
    backward(loss)

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(lambda: build_loss(inputs).item(), t.data, eps)
        worst = max(worst, gradient_error(analytic, numeric))
    return worst


def _rt(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def standard_op_audit(seed: int = 0, shapes_per_op: int = 3) -> dict[str, float]:
    """Randomized finite-difference audit of every differentiable op.

    Per op, several random shapes are checked and the worst error kept.
    Returns {op name: max gradient error}.
    """
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}

    def record(name: str, err: float):
        report[name] = max(report.get(name, 0.0), err)

    for _ in range(shapes_per_op):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        h, w = int(rng.integers(5, 9)), int(rng.integers(5, 9))
        k = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 3))
        x = _rt(rng, c_in, h, w)
        wt = _rt(rng, c_out, c_in, k, k)
        b = _rt(rng, c_out)
        record(
            "conv2d",
            check_op_gradients(
                lambda ts: ops.tensor_sum(ops.tanh(ops.conv2d(ts[0], ts[1], ts[2], (1, 1), (pad, pad)))),
                (x, wt, b),
            ),
        )

        hp, wp = int(rng.integers(4, 8)), int(rng.integers(4, 8))
        cp = int(rng.integers(1, 3))
        # Well-separated values so an eps-perturbation cannot flip an argmax.
        xpool = Tensor(
            rng.permutation(cp * hp * wp).astype(np.float64).reshape(cp, hp, wp) * 0.1,
            requires_grad=True,
        )
        win = int(rng.integers(2, 4))
        stridep = int(rng.integers(1, 3))
        if win <= min(hp, wp):
            record(
                "maxpool2d",
                check_op_gradients(
                    lambda ts: ops.tensor_sum(ops.maxpool2d(ts[0], (win, win), (stridep, stridep))),
                    (xpool,),
                ),
            )

        n = int(rng.integers(2, 9))
        m = int(rng.integers(2, 9))
        xv = _rt(rng, n)
        wv = _rt(rng, m, n)
        bv = _rt(rng, m)
        record(
            "linear",
            check_op_gradients(
                lambda ts: ops.tensor_sum(ops.sigmoid(ops.linear(ts[0], ts[1], ts[2]))), (xv, wv, bv)
            ),
        )

        xa = _rt(rng, int(rng.integers(2, 6)))
        record("tanh", check_op_gradients(lambda ts: ops.tensor_sum(ops.tanh(ts[0])), (xa,)))
        record("sigmoid", check_op_gradients(lambda ts: ops.tensor_sum(ops.sigmoid(ts[0])), (xa,)))
        # relu kink: keep away from zero
        xr = Tensor(rng.standard_normal(5) + np.sign(rng.standard_normal(5)) * 0.5, requires_grad=True)
        record("relu", check_op_gradients(lambda ts: ops.tensor_sum(ops.relu(ts[0])), (xr,)))

        c = int(rng.integers(2, 7))
        logits = _rt(rng, c)
        label = int(rng.integers(0, c))
        record(
            "softmax_xent",
            check_op_gradients(lambda ts: ops.softmax_xent(ts[0], label), (logits,)),
        )

        xm = _rt(rng, 3, 4)
        ym = _rt(rng, 3, 4)
        record(
            "mul_add_sub",
            check_op_gradients(
                lambda ts: ops.tensor_sum(ops.sub(ops.mul(ts[0], ts[1]), ops.add(ts[0], ts[1]))),
                (xm, ym),
            ),
        )

        xs = Tensor(np.abs(rng.standard_normal(4)) + 0.5, requires_grad=True)
        record("sqrt", check_op_gradients(lambda ts: ops.tensor_sum(ops.sqrt(ts[0])), (xs,)))

    return report
