"""Minimal reverse-mode differentiation over dense numpy tensors.

Just enough primitives for a small causal transformer: matmul, broadcast
add/mul, layer normalization, (log-)softmax, GELU, embedding lookup,
gather, concat/slice, reshape, masked fill, and axis sums.

A :class:`Tape` records primitive applications while active (``with
Tape() as tape: ...``); ``tape.backward(loss)`` walks the record in reverse
and leaves gradients on the leaf tensors' ``.grad``. With no active tape
the same primitives run as plain forward computations, which is the
inference path. One code path serves 32-bit and 64-bit tensors; dtype
follows the operands.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "mul",
    "scale",
    "matmul",
    "layernorm",
    "softmax",
    "masked_softmax",
    "log_softmax",
    "gelu",
    "embed",
    "gather",
    "concat",
    "slice_last",
    "reshape",
    "swap_last",
    "transpose",
    "mask_fill",
    "sum_axis",
    "sum_all",
]

_ACTIVE_TAPE: "Tape | None" = None

# Large negative fill for masked attention scores: exp() underflows to an
# exact 0 after max-subtraction, keeping causal outputs exactly prefix-local.
MASK_FILL_VALUE = -1e30


class Tensor:
    """A dense array plus a gradient slot."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, dtype={self.data.dtype})"


class Tape:
    """Execution-ordered record of primitive applications."""

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a Tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into each leaf tensor's ``.grad``.

        ``loss`` must be scalar. Non-leaf gradients are discarded once
        consumed; leaves (tensors no op on this tape produced) keep theirs.
        """
        if loss.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.data.shape}")
        produced = {id(out) for out, _, _ in self._ops}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, vjp in reversed(self._ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for tensor, gi in zip(inputs, vjp(g)):
                if gi is None:
                    continue
                key = id(tensor)
                holders[key] = tensor
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, g in grads.items():
            if key not in produced:
                holders[key].grad = g


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._ops.append((out, inputs, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)  # python float: keeps float32 operands float32
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; operands may carry matching batch dims, or one side
    may be an unbatched 2-D weight."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul needs >= 2-D operands")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        while ga.ndim > len(a.shape):
            ga = ga.sum(axis=0)
        while gb.ndim > len(b.shape):
            gb = gb.sum(axis=0)
        return ga, gb

    return _record(out, (a, b), vjp)


def layernorm(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    inv = 1.0 / np.sqrt(centered.var(axis=-1, keepdims=True) + eps)
    y = centered * inv
    out = Tensor(y)

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _record(out, (a,), vjp)


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), vjp)


def masked_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax along the last axis with masked entries carrying exactly
    zero weight (and zero gradient). Rows must keep at least one entry.

    Equivalent to ``softmax(mask_fill(a, mask))`` but multiplies the
    exponentials by a 0/1 keep matrix instead of exponentiating a huge
    negative fill; masked weights are exact zeros either way. The row max
    is taken after pushing masked entries to the fill value, so the result
    is bit-exactly a function of the unmasked entries alone (adding the
    fill absorbs any in-range score exactly).
    """
    mask = np.asarray(mask, dtype=a.data.dtype)
    keep = 1.0 - mask
    m = (a.data + MASK_FILL_VALUE * mask).max(axis=-1, keepdims=True)
    y = a.data - m
    # Unmasked entries are <= 0 here; clamping only touches masked ones,
    # whose exp would otherwise overflow before being zeroed out.
    np.minimum(y, 80.0, out=y)
    np.exp(y, out=y)
    y *= keep
    y /= y.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        gy = g * y
        dot = gy.sum(axis=-1, keepdims=True)
        np.subtract(g, dot, out=gy)
        gy *= y
        return (gy,)

    return _record(out, (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    out = Tensor(y)
    sm = np.exp(y)

    def vjp(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _record(out, (a,), vjp)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    t = x2 * x
    t *= 0.044715
    t += x
    t *= _GELU_C
    np.tanh(t, out=t)
    y = 1.0 + t
    y *= x
    y *= 0.5
    out = Tensor(y)

    def vjp(g):
        # d/dx = 0.5 (1 + t) + 0.5 x (1 - t^2) c (1 + 3 * 0.044715 x^2)
        dt = 1.0 - t * t
        dt *= _GELU_C + (3 * 0.044715 * _GELU_C) * x2
        dt *= 0.5 * x
        dt += 0.5 * (1.0 + t)
        dt *= g
        return (dt,)

    return _record(out, (a,), vjp)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    out = Tensor(table.data[ids])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(out, (table,), vjp)


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """Select one entry along the last axis: broadcasting integer index.

    ``index`` has the shape of ``a`` without its last axis (or broadcasts to
    it); the output drops the last axis.
    """
    idx = np.broadcast_to(np.asarray(index), a.data.shape[:-1])
    out = Tensor(np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0])

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
        return (ga,)

    return _record(out, (a,), vjp)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(parts), vjp)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[..., start:stop])

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[..., start:stop] = g
        return (ga,)

    return _record(out, (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def swap_last(a: Tensor) -> Tensor:
    """Transpose the last two axes."""
    out = Tensor(np.swapaxes(a.data, -1, -2))
    return _record(out, (a,), lambda g: (np.swapaxes(g, -1, -2),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    """Permute axes; gradient applies the inverse permutation."""
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    return _record(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def mask_fill(a: Tensor, mask: np.ndarray, value: float = MASK_FILL_VALUE) -> Tensor:
    """Replace entries where ``mask`` is True by ``value`` (no gradient there)."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    out = Tensor(np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data))
    return _record(out, (a,), lambda g: (np.where(mask, 0.0, g),))


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record(out, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum()))
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))
