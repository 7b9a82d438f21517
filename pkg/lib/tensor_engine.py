"""
Tensor Engine - float64 arrays + tape-based reverse mode
========================================================

Everything the transformer needs to train, and nothing it doesn't:
dense numpy float64 arrays wrapped in `Tensor`, a define-by-run
`Tape` rebuilt every step, and the handful of differentiable ops the
model is written in (matmul / linear, elementwise arithmetic with the
bias-shaped broadcasting the model uses, masked row softmax, layer
norm, embedding lookup, slicing/concat, relu/sigmoid, cross-entropy).

Contract:
- Ops record onto the active tape (`with Tape():`) only when an input
  requires grad. With no active tape nothing records and outputs never
  require grad; that is the inference path.
- `backward(loss)` walks the tape once, in reverse recording order.
  Gradients land in `.grad` of LEAF tensors with requires_grad=True
  (the trainable parameters). A leaf with requires_grad=False (a frozen
  parameter) still propagates gradient to its op's other inputs, but
  its own gradient is never computed or allocated.
- 64-bit floats throughout; the finite-difference checks need the
  headroom and desk scale makes speed irrelevant.
"""

import itertools
import threading
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

DEFAULT_LN_EPS = 1e-6

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class EngineError(Exception):
    """Base class for tensor engine errors."""


class DimensionError(EngineError, ValueError):
    """Operand dimensions are incompatible (message names both shapes)."""


class ShapeError(EngineError, ValueError):
    """A shape contract was violated (non-scalar loss, mask mismatch)."""


class DegenerateRowError(EngineError, ValueError):
    """A softmax row has every entry masked out."""


class TokenIndexError(EngineError, IndexError):
    """A token id falls outside the vocabulary."""


class TapeError(EngineError, RuntimeError):
    """backward() called without the tape that recorded the loss."""


# ---------------------------------------------------------------------------
# Tensor / Tape
# ---------------------------------------------------------------------------

class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "tape_id", "_node")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.tape_id: Optional[int] = None
        self._node: Optional[int] = None

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}"
                f"{', tape=' + str(self.tape_id) if self.tape_id else ''})")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None


class TapeNode:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs: Tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.inputs = inputs
        self.output = output
        self.backward = backward


_tape_ids = itertools.count(1)
_local = threading.local()


def current_tape() -> Optional["Tape"]:
    return getattr(_local, "tape", None)


class Tape:
    """Ordered record of the ops of one forward pass.

    Thread-local: independent tapes may run in parallel threads, each
    seeing only its own recording.
    """

    def __init__(self):
        self.id = next(_tape_ids)
        self.nodes: List[TapeNode] = []
        self._previous: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        self._previous = current_tape()
        _local.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _local.tape = self._previous
        self._previous = None
        return False

    def record(self, inputs: Tuple[Tensor, ...], output: Tensor, backward) -> None:
        output.tape_id = self.id
        output._node = len(self.nodes)
        self.nodes.append(TapeNode(inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.tape_id != self.id:
            raise TapeError(
                f"loss was recorded on tape {loss.tape_id}, not on tape {self.id}")
        pending = {id(loss): np.ones(loss.shape, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    inp.grad = np.array(gi) if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    pending[key] = gi if key not in pending else pending[key] + gi


def backward(loss: Tensor) -> None:
    """Populate .grad of every trainable leaf reachable from `loss`."""
    if loss.ndim != 0:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    if tape is None:
        raise TapeError("backward() called with no active tape")
    if not loss.requires_grad:
        raise TapeError("loss does not depend on any tensor that requires grad")
    tape.backward(loss)


def _make(data: np.ndarray, inputs: Tuple[Tensor, ...], backward) -> Tensor:
    tape = current_tape()
    requires = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        tape.record(inputs, out, backward)
    return out


def _coerce(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _broadcast_shape(a, b, "add")

    def _backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _broadcast_shape(a, b, "sub")

    def _backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _make(a.data - b.data, (a, b), _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _broadcast_shape(a, b, "mul")

    def _backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), _backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    return _make(np.where(positive, a.data, 0.0), (a,),
                 lambda g: (g * positive,))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.asarray(a.data.sum()), (a,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


# ---------------------------------------------------------------------------
# Matrix ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[..., m, k] @ [..., k, n]; a 2-D right operand is shared by every
    leading batch index of the left one."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions differ for {a.shape} @ {b.shape}")

    def _backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), _backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError(f"transpose needs >= 2 dims, got {a.shape}")
    return _make(np.swapaxes(a.data, -1, -2), (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weightᵀ (+ bias). Weights are stored [out, in]."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"linear: input {x.shape} does not match weight {weight.shape} ([out, in])")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(
            f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = np.matmul(x.data, weight.data.T)
    if bias is not None:
        out = out + bias.data
    n_in, n_out = weight.shape[1], weight.shape[0]

    def _backward(g):
        gx = np.matmul(g, weight.data) if x.requires_grad else None
        g2 = g.reshape(-1, n_out)
        gw = g2.T @ x.data.reshape(-1, n_in) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if bias.requires_grad else None)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, inputs, _backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {shape}")
    return _make(out, (a,), lambda g: (g.reshape(old),))


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """a[..., start:stop, ...] along `axis`."""
    axis = axis % a.ndim
    if not 0 <= start < stop <= a.shape[axis]:
        raise DimensionError(f"narrow: [{start}:{stop}] outside axis {axis} of {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def _backward(g):
        full = np.zeros(shape, dtype=np.float64)
        full[index] = g
        return (full,)

    return _make(a.data[index], (a,), _backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    axis = axis % tensors[0].ndim
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}")
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, tensors, _backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids of any shape -> ids.shape + (d,)."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)].flat[0]
        raise TokenIndexError(f"token id {int(bad)} outside vocabulary of size {vocab}")
    d = weight.shape[1]

    def _backward(g):
        gw = np.zeros(weight.shape, dtype=np.float64)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, d))
        return (gw,)

    return _make(weight.data[ids], (weight,), _backward)


# ---------------------------------------------------------------------------
# Fused sublayer ops
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor, mask: Optional[Union[np.ndarray, Tensor]] = None) -> Tensor:
    """Softmax over the last axis. mask=True marks VISIBLE entries;
    masked entries get exactly zero weight."""
    z = x.data
    keep = None
    if mask is not None:
        m = mask.data != 0 if isinstance(mask, Tensor) else np.asarray(mask, dtype=bool)
        try:
            keep = np.broadcast_to(m, z.shape)
        except ValueError:
            raise ShapeError(f"softmax mask {m.shape} does not match scores {z.shape}")
        if not keep.any(axis=-1).all():
            raise DegenerateRowError("softmax row has every entry masked")
        z = np.where(keep, z, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), _backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = DEFAULT_LN_EPS) -> Tensor:
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be > 0, got {eps}")
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError(f"layer_norm over an empty last axis: {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def _backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = (inv_std / d) * (d * dxhat
                                  - dxhat.sum(axis=-1, keepdims=True)
                                  - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        g2 = g.reshape(-1, d)
        ggain = (g2 * xhat.reshape(-1, d)).sum(axis=0) if gain.requires_grad else None
        gbias = g2.sum(axis=0) if bias.requires_grad else None
        return gx, ggain, gbias

    return _make(xhat * gain.data + bias.data, (x, gain, bias), _backward)


def _nll_terms(z: np.ndarray, targets: np.ndarray,
               ignore_index: Optional[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    v = z.shape[-1]
    z2 = z.reshape(-1, v)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != z2.shape[0]:
        raise ShapeError(f"cross_entropy: {t.shape[0]} targets for {z2.shape[0]} logit rows")
    keep = np.ones(t.shape, dtype=bool) if ignore_index is None else t != ignore_index
    live = t[keep]
    if live.size and (live.min() < 0 or live.max() >= v):
        bad = live[(live < 0) | (live >= v)][0]
        raise TokenIndexError(f"target id {int(bad)} outside vocabulary of size {v}")
    safe = np.where(keep, t, 0)
    zmax = z2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z2 - zmax).sum(axis=1, keepdims=True)) + zmax
    nll = lse[:, 0] - z2[np.arange(z2.shape[0]), safe]
    return np.where(keep, nll, 0.0), keep, safe, lse


def nll_sum(logits: np.ndarray, targets: np.ndarray,
            ignore_index: Optional[int] = None) -> Tuple[float, int]:
    """(summed negative log-likelihood, counted positions) without recording."""
    nll, keep, _, _ = _nll_terms(np.asarray(logits, dtype=np.float64), targets, ignore_index)
    return float(nll.sum()), int(keep.sum())


def cross_entropy(logits: Tensor, targets: np.ndarray,
                  ignore_index: Optional[int] = None) -> Tensor:
    """Mean negative log-softmax probability of `targets` over the
    positions whose target is not `ignore_index`."""
    nll, keep, safe, lse = _nll_terms(logits.data, targets, ignore_index)
    count = int(keep.sum())
    loss = nll.sum() / count if count else 0.0
    v = logits.shape[-1]

    def _backward(g):
        if not count:
            return (np.zeros(logits.shape, dtype=np.float64),)
        z2 = logits.data.reshape(-1, v)
        p = np.exp(z2 - lse)
        p[np.arange(p.shape[0]), safe] -= 1.0
        p *= (keep / count)[:, None]
        return ((g * p).reshape(logits.shape),)

    return _make(np.asarray(loss, dtype=np.float64), (logits,), _backward)
