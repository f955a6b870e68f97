"""Dense float64 tensors with a reverse-mode gradient tape.

Every primitive has an exact forward rule and a hand-derived backward rule.
All arithmetic stays in 64-bit floats; broadcasting is restricted to
leading-batch expansion (the smaller operand's shape must equal a trailing
suffix of the larger's) so shape bugs surface as hard errors instead of
silently corrupted scores.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes incompatible with a primitive."""


class NumericError(ArithmeticError):
    """A primitive produced or propagated a non-finite value."""


class GradientError(RuntimeError):
    """Backward contract violated (non-scalar loss, loss off tape)."""


_ids = itertools.count(1)


class Tensor:
    """A float64 ndarray plus the identity used by the tape."""

    __slots__ = ("data", "requires_grad", "id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(id={self.id}, shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeNode:
    """One recorded primitive: inputs precede it on the tape (topological order)."""

    op: str
    input_ids: tuple[int, ...]
    output_id: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive applications, replayed in reverse by backward()."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.tensors: dict[int, Tensor] = {}
        self._produced: set[int] = set()

    def _register(self, t: Tensor):
        self.tensors.setdefault(t.id, t)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward) -> Tensor:
        for t in inputs:
            self._register(t)
        self._register(output)
        self._produced.add(output.id)
        self.nodes.append(TapeNode(op, tuple(t.id for t in inputs), output.id, backward))
        return output

    def leaves(self) -> list[Tensor]:
        return [t for i, t in self.tensors.items() if i not in self._produced]


def _check_finite(op: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced a non-finite value")
    return arr


def _suffix_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    """Allow equal shapes or one shape being a trailing suffix of the other."""
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if small != big[len(big) - len(small):]:
        raise ShapeError(f"{op}: shapes {sa} and {sb} are not suffix-compatible")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the leading axes introduced by suffix broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ---------------------------------------------------------------------------
# primitives


def matmul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    if a.data.ndim != b.data.ndim and min(a.data.ndim, b.data.ndim) != 2:
        raise ShapeError(f"matmul: leading dims of {a.shape} and {b.shape} incompatible")
    if a.data.ndim == b.data.ndim and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading dims of {a.shape} and {b.shape} differ")
    out = Tensor(_check_finite("matmul", a.data @ b.data))
    ad, bd = a.data, b.data

    def backward(g):
        # stacked @ 2D (the linear-layer case) collapses to single GEMMs,
        # avoiding a (batch, in, out) intermediate before the batch reduction
        if bd.ndim == 2 and ad.ndim > 2:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = ad.reshape(-1, ad.shape[-1]).T @ g2
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return tape.record("matmul", (a, b), out, backward)


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _suffix_broadcast("add", a.data, b.data)
    out = Tensor(_check_finite("add", a.data + b.data))
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return tape.record("add", (a, b), out, backward)


def scale(tape: Tape, a: Tensor, k: float) -> Tensor:
    k = float(k)
    out = Tensor(_check_finite("scale", a.data * k))
    return tape.record("scale", (a,), out, lambda g: (g * k,))


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _suffix_broadcast("mul", a.data, b.data)
    out = Tensor(_check_finite("mul", a.data * b.data))
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return tape.record("mul", (a, b), out, backward)


def transpose(tape: Tape, a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        if a.data.ndim < 2:
            raise ShapeError(f"transpose: need >=2-D, got {a.shape}")
        axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = np.argsort(axes)
    out = Tensor(a.data.transpose(axes))
    return tape.record("transpose", (a,), out, lambda g: (g.transpose(inv),))


def reshape(tape: Tape, a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.data.shape
    out = Tensor(a.data.reshape(shape))
    return tape.record("reshape", (a,), out, lambda g: (g.reshape(old),))


def concat(tape: Tape, tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input list")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        if len(s) != len(base) or s[:axis] + s[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise ShapeError(f"concat: shape {t.shape} incompatible with {tensors[0].shape} on axis {axis}")
    out = Tensor(_check_finite("concat", np.concatenate([t.data for t in tensors], axis=axis)))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(sizes)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return grads

    return tape.record("concat", tuple(tensors), out, backward)


def slice_axis(tape: Tape, a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = a.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_axis: [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(a.data[sl])
    shape = a.data.shape

    def backward(g):
        full = np.zeros(shape)
        full[sl] = g
        return (full,)

    return tape.record("slice_axis", (a,), out, backward)


def softmax(tape: Tape, a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with the max-shift for stability."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    s = ez / ez.sum(axis=-1, keepdims=True)
    out = Tensor(_check_finite("softmax", s))

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return tape.record("softmax", (a,), out, backward)


def layer_norm(tape: Tape, x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis (zero mean, unit variance, ddof 0) then apply gain/bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must be ({d},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(_check_finite("layer_norm", xhat * gain.data + bias.data))
    gd = gain.data
    reduce_axes = tuple(range(x.data.ndim - 1))

    def backward(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=reduce_axes)
        dbias = g.sum(axis=reduce_axes)
        return dx, dgain, dbias

    return tape.record("layer_norm", (x, gain, bias), out, backward)


def gelu(tape: Tape, a: Tensor) -> Tensor:
    """GELU via the tanh approximation; the backward rule differentiates that same form."""
    x = a.data
    x2 = x * x
    t = np.tanh(GELU_C * x * (1.0 + GELU_A * x2))
    out = Tensor(_check_finite("gelu", 0.5 * x * (1.0 + t)))

    def backward(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return tape.record("gelu", (a,), out, backward)


def mean(tape: Tape, a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.mean(axis=axis))
    shape = a.data.shape
    n = a.size if axis is None else shape[axis]

    def backward(g):
        if axis is None:
            return (np.full(shape, g / n),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return tape.record("mean", (a,), out, backward)


def tensor_sum(tape: Tape, a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))
    shape = a.data.shape

    def backward(g):
        if axis is None:
            return (np.full(shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return tape.record("sum", (a,), out, backward)


def cross_entropy_logits(tape: Tape, logits: Tensor, labels: np.ndarray, reduction: str = "mean") -> Tensor:
    """Cross entropy of integer labels against raw logits (B, C); scalar output.

    reduction "mean" averages over the batch; "sum" keeps per-sample losses
    additive so activation gradients stay per-sample quantities.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be (B, C), got {logits.shape}")
    labels = np.asarray(labels)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy: labels must be ({b},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError(f"cross_entropy: labels outside [0, {c})")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"cross_entropy: unknown reduction {reduction!r}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1)) + logits.data.max(axis=-1)
    per = lse - logits.data[np.arange(b), labels]
    val = per.mean() if reduction == "mean" else per.sum()
    out = Tensor(_check_finite("cross_entropy", np.asarray(val)))
    p = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)

    def backward(g):
        grad = p.copy()
        grad[np.arange(b), labels] -= 1.0
        if reduction == "mean":
            grad /= b
        return (grad * g,)

    return tape.record("cross_entropy", (logits,), out, backward)


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, loss: Tensor, retain_ids: Sequence[int] = ()) -> dict[int, np.ndarray]:
    """Propagate d(loss)/d(tensor) through the tape in reverse order.

    Returns gradients for every requires_grad leaf (zeros when unreached) and
    for every id in retain_ids. Gradients of other intermediates are freed as
    soon as their node has been processed, keeping peak memory near the size
    of the forward activations.
    """
    if loss.shape != ():
        raise GradientError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.id not in tape.tensors:
        raise GradientError("backward: loss is not on this tape")
    if not np.isfinite(loss.data):
        raise NumericError("backward: loss is not finite")

    retain = set(retain_ids)
    keep = retain | {t.id for t in tape.leaves() if t.requires_grad}
    grads: dict[int, np.ndarray] = {loss.id: np.ones(())}

    for node in reversed(tape.nodes):
        g = grads.get(node.output_id)
        if g is None:
            continue
        input_grads = node.backward(g)
        for tid, ig in zip(node.input_ids, input_grads):
            if ig is None:
                continue
            # single fused reduction instead of a full isnan bool array; a NaN
            # anywhere (or mixed infinities, equally fatal) poisons the sum
            if math.isnan(float(ig.sum())):
                raise NumericError(f"backward: NaN gradient produced by {node.op}")
            if tid in grads:
                grads[tid] = grads[tid] + ig
            else:
                grads[tid] = ig
        if node.output_id not in keep:
            del grads[node.output_id]

    out = {tid: g for tid, g in grads.items() if tid in keep}
    for t in tape.leaves():
        if t.requires_grad and t.id not in out:
            out[t.id] = np.zeros(t.shape)
    return out


def finite_diff_gradient(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError("finite_diff_gradient: h must be positive")
    base = x.data.copy()
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(base)))
        flat[i] = orig - h
        fm = float(f(Tensor(base)))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"finite_diff_gradient: non-finite evaluation at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
