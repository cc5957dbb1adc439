"""Dense 2-D float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a (rows, cols) numpy array. When at least one operand of an
operation is attached to a GradientTape, the result is attached too and the
tape records a pullback per input. Losses are assembled from these ops as a
single scalar; backward() replays the tape once in reverse to produce the
gradient of every watched parameter.

Scalars are (1, 1) tensors and vectors are (1, d) row tensors. Everything
is float64 and desk-scale; there is no broadcasting beyond 2-D numpy rules.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateVectorError, GradientContractError

EPS_NORM = 1e-12   # guard for norms of "nonzero" vectors
EPS_LOG = 1e-9     # clamp inside log/cross-entropy


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"tensors are 2-D; got ndim={arr.ndim}")
    return arr


class GradientTape:
    """Append-only op record; append order is a topological order.

    One tape per training run. Recording is single-threaded; reading tensor
    values is safe from anywhere.
    """

    def __init__(self):
        self._next_id = 0
        self._records: list[tuple[int, tuple[tuple[int, Callable], ...]]] = []
        self._watched: dict[int, "Tensor"] = {}

    def _fresh_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def watch(self, tensor: "Tensor") -> "Tensor":
        """Mark a tensor as a parameter whose gradient backward() reports."""
        if tensor.tape is not None and tensor.tape is not self:
            raise ValueError("tensor already belongs to a different tape")
        if tensor.node_id is None:
            tensor.tape = self
            tensor.node_id = self._fresh_id()
        self._watched[tensor.node_id] = tensor
        return tensor

    def clear(self) -> None:
        """Drop recorded ops (between optimizer steps); keep watched params."""
        self._records.clear()

    def release(self) -> None:
        """Detach all watched parameters and forget every record."""
        for t in self._watched.values():
            t.tape = None
            t.node_id = None
        self._watched.clear()
        self._records.clear()
        self._next_id = 0

    def _record(self, out: "Tensor", pulls: Iterable[tuple[int, Callable]]) -> None:
        out.tape = self
        out.node_id = self._fresh_id()
        self._records.append((out.node_id, tuple(pulls)))


class Tensor:
    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: GradientTape | None = None, node_id: int | None = None):
        self.data = _as_matrix(data)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, taped={self.node_id is not None})"

    # operator sugar; all routed through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors: Tensor) -> GradientTape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError("operands belong to different tapes")
            tape = t.tape
    return tape


def _emit(out_data: np.ndarray, pulls: Sequence[tuple[Tensor, Callable]]) -> Tensor:
    """Create the output tensor; record pullbacks for taped inputs only."""
    tape = _tape_of(*(t for t, _ in pulls))
    out = Tensor(out_data)
    if tape is not None:
        recorded = [(t.node_id, fn) for t, fn in pulls if t.node_id is not None]
        tape._record(out, recorded)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    for ax in (0, 1):
        if shape[ax] == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data
    return _emit(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data
    return _emit(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data
    return _emit(out, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data / b.data
    return _emit(out, [
        (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
    ])


def neg(a) -> Tensor:
    a = _lift(a)
    return _emit(-a.data, [(a, lambda g: -g)])


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data @ b.data
    return _emit(out, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


def transpose(a) -> Tensor:
    a = _lift(a)
    return _emit(a.data.T.copy(), [(a, lambda g: g.T)])


def reshape(a, rows: int, cols: int) -> Tensor:
    a = _lift(a)
    shape = a.data.shape
    return _emit(a.data.reshape(rows, cols).copy(), [(a, lambda g: g.reshape(shape))])


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_lift(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    pulls = []
    offset = 0
    for p in parts:
        size = p.data.shape[axis]
        lo, hi = offset, offset + size

        def pull(g, lo=lo, hi=hi):
            return g[lo:hi, :] if axis == 0 else g[:, lo:hi]

        pulls.append((p, pull))
        offset = hi
    return _emit(out, pulls)


def tsum(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    shape = a.data.shape
    if axis is None:
        out = a.data.sum().reshape(1, 1)
        return _emit(out, [(a, lambda g: np.broadcast_to(g, shape).copy())])
    out = a.data.sum(axis=axis, keepdims=True)
    return _emit(out, [(a, lambda g: np.broadcast_to(g, shape).copy())])


def tmean(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    shape = a.data.shape
    count = a.data.size if axis is None else shape[axis]
    if axis is None:
        out = a.data.mean().reshape(1, 1)
    else:
        out = a.data.mean(axis=axis, keepdims=True)
    return _emit(out, [(a, lambda g: np.broadcast_to(g / count, shape).copy())])


# -------------------------------------------------------------- elementwise

def log(a) -> Tensor:
    a = _lift(a)
    return _emit(np.log(a.data), [(a, lambda g: g / a.data)])


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    return _emit(out, [(a, lambda g: g * out)])


def cos(a) -> Tensor:
    a = _lift(a)
    return _emit(np.cos(a.data), [(a, lambda g: -g * np.sin(a.data))])


def sin(a) -> Tensor:
    a = _lift(a)
    return _emit(np.sin(a.data), [(a, lambda g: g * np.cos(a.data))])


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.data)
    return _emit(out, [(a, lambda g: g / (2.0 * out))])


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where a was not clipped."""
    a = _lift(a)
    mask = (a.data >= floor).astype(np.float64)
    return _emit(np.maximum(a.data, floor), [(a, lambda g: g * mask)])


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes on the unclipped region (inclusive)."""
    a = _lift(a)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return _emit(np.clip(a.data, lo, hi), [(a, lambda g: g * mask)])


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _lift(a)
    factor = np.where(a.data > 0.0, 1.0, slope)
    return _emit(a.data * factor, [(a, lambda g: g * factor)])


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _emit(out, [(a, lambda g: g * out * (1.0 - out))])


# ------------------------------------------------------- geometry primitives

def l2_normalize_rows(a) -> Tensor:
    """Scale each row to unit Euclidean norm.

    Raises DegenerateVectorError if any row norm is below EPS_NORM.
    """
    a = _lift(a)
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms <= EPS_NORM):
        bad = np.nonzero(norms.reshape(-1) <= EPS_NORM)[0].tolist()
        raise DegenerateVectorError(f"rows with norm <= {EPS_NORM}: {bad}")
    out = a.data / norms

    def pull(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (g - out * inner) / norms

    return _emit(out, [(a, pull)])


def l2_normalize(v) -> Tensor:
    """Unit-normalize a single vector (row tensor)."""
    v = _lift(v)
    if v.data.shape[0] != 1:
        raise ValueError("l2_normalize expects a single row vector")
    return l2_normalize_rows(v)


def cosine_similarity(a, b) -> Tensor:
    """Scalar cosine of two vectors, clamped to [-1, 1] against round-off."""
    a, b = _lift(a), _lift(b)
    if a.data.size != b.data.size:
        raise ValueError("cosine_similarity needs equal-length vectors")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na <= EPS_NORM or nb <= EPS_NORM:
        raise DegenerateVectorError("cosine_similarity on a near-zero vector")
    flat_a = reshape(a, 1, a.data.size)
    flat_b = reshape(b, 1, b.data.size)
    dot = tsum(mul(flat_a, flat_b))
    norm_a = sqrt(tsum(mul(flat_a, flat_a)))
    norm_b = sqrt(tsum(mul(flat_b, flat_b)))
    return clamp(div(dot, mul(norm_a, norm_b)), -1.0, 1.0)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax, computed shift-stably (subtract the row max)."""
    a = _lift(a)
    if not np.isfinite(a.data).all():
        raise ValueError("softmax on non-finite logits")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def pull(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return out * (g - inner)

    return _emit(out, [(a, pull)])


def softmax(logits) -> Tensor:
    """Softmax of a single logit vector."""
    t = _lift(logits)
    if t.data.shape[0] != 1:
        raise ValueError("softmax expects a single row vector; see softmax_rows")
    return softmax_rows(t)


def cross_entropy_rows(probs, labels: np.ndarray) -> Tensor:
    """Per-row -log(max(p[row, label], EPS_LOG)) as an (n, 1) tensor.

    labels are 0-based column indices into the probability rows.
    """
    p = _lift(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = p.data.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} probability rows")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= c:
        raise IndexError(f"label out of range [0, {c})")
    picked = p.data[np.arange(n), labels]
    clamped = np.maximum(picked, EPS_LOG)
    out = -np.log(clamped).reshape(n, 1)

    def pull(g):
        grad = np.zeros_like(p.data)
        live = picked >= EPS_LOG
        rows = np.arange(n)[live]
        grad[rows, labels[live]] = (-g.reshape(-1)[live]) / clamped[live]
        return grad

    return _emit(out, [(p, pull)])


def cross_entropy(probs, label: int) -> Tensor:
    """Cross entropy of one probability vector against one 0-based label."""
    p = _lift(probs)
    if p.data.shape[0] != 1:
        raise ValueError("cross_entropy expects a single probability row")
    if not np.all(p.data >= -1e-12) or abs(float(p.data.sum()) - 1.0) > 1e-6:
        raise ValueError("probs is not a probability distribution")
    return tmean(cross_entropy_rows(p, np.array([label])))


def grad_reversal(a, lam: float) -> Tensor:
    """Identity in the forward pass; scales the adjoint by -lam backward."""
    if lam < 0:
        raise ValueError("grad_reversal requires lam >= 0")
    a = _lift(a)
    return _emit(a.data.copy(), [(a, lambda g: -lam * g)])


# ------------------------------------------------------------------ backward

def backward(tape: GradientTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradient of a scalar loss with respect to every watched parameter.

    Replays the tape once in reverse topological order. Parameters that do
    not influence the loss get zero gradients.
    """
    if loss.data.shape != (1, 1):
        raise GradientContractError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss.tape is not tape or loss.node_id is None:
        raise GradientContractError("loss is not attached to this tape")
    adjoint: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1))}
    for out_id, pulls in reversed(tape._records):
        g = adjoint.pop(out_id, None)
        if g is None:
            continue
        for in_id, pull in pulls:
            contrib = pull(g)
            prev = adjoint.get(in_id)
            adjoint[in_id] = contrib if prev is None else prev + contrib
    return {
        t: adjoint.get(nid, np.zeros_like(t.data))
        for nid, t in tape._watched.items()
    }
