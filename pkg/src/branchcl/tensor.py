"""Dense 2-D float64 matrices with reverse-mode autodiff on an explicit tape.

The op set is deliberately small: matmul, add, scale, tanh, row_softmax,
topk_mask, take_row, mix (gate-weighted sum), cosine_similarity, the two
losses, and sum/mean reductions. Each op computes its forward value
eagerly with numpy and, when a tape is active and a gradient path exists,
records a backward closure. `backward` replays the tape in exact reverse
execution order and accumulates dLoss/dParam into `.grad` of trainable
leaves.

Masked gate entries use a large negative sentinel instead of -inf so that
row_softmax turns them into exact 0.0 (the exponential underflows) without
ever producing NaN in the backward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    DimensionError,
    ParameterError,
)

# exp(MASK_VALUE - rowmax) underflows to exactly 0.0 for any realistic score
# scale (float64 underflows below roughly -745 after the rowmax shift).
MASK_VALUE = -1.0e9


class Matrix:
    """A dense float64 matrix; the only tensor carrier in the package.

    `trainable` marks leaf parameters that should receive gradients.
    Frozen parameters are plain matrices with trainable=False: ops treat
    them as constants and the optimizer never touches them.
    """

    __slots__ = ("data", "grad", "trainable", "name", "_flow")

    def __init__(self, data, trainable: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(
                f"Matrix requires a 2-D value, got ndim={arr.ndim} for {name or 'matrix'}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"Matrix must be non-empty, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.trainable = bool(trainable)
        self.name = name
        self._flow = False  # set on op outputs that carry a gradient path

    @classmethod
    def zeros(cls, rows: int, cols: int, trainable: bool = False, name: str = "") -> "Matrix":
        return cls(np.zeros((rows, cols)), trainable=trainable, name=name)

    @classmethod
    def randn(
        cls,
        rng: np.random.Generator,
        rows: int,
        cols: int,
        std: float = 1.0,
        trainable: bool = False,
        name: str = "",
    ) -> "Matrix":
        return cls(rng.standard_normal((rows, cols)) * std, trainable=trainable, name=name)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.trainable or self._flow

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 matrix, got {self.data.shape}")
        return float(self.data[0, 0])

    def copy(self) -> "Matrix":
        out = Matrix(self.data, trainable=self.trainable, name=self.name)
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self.name or "matrix"
        return f"Matrix({tag}, {self.rows}x{self.cols}, trainable={self.trainable})"


def _result(arr: np.ndarray, flow: bool) -> Matrix:
    out = object.__new__(Matrix)
    out.data = arr
    out.grad = None
    out.trainable = False
    out.name = ""
    out._flow = flow
    return out


class TapeEntry:
    __slots__ = ("out", "inputs", "backward")

    def __init__(
        self,
        out: Matrix,
        inputs: tuple[Matrix, ...],
        backward: Callable[[np.ndarray], list],
    ):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable ops; a context manager.

    While active, every op whose output carries a gradient path appends
    one entry. `backward` walks the entries strictly in reverse.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPES.pop()

    def record(
        self,
        out: Matrix,
        inputs: tuple[Matrix, ...],
        backward: Callable[[np.ndarray], list],
    ) -> None:
        self.entries.append(TapeEntry(out, inputs, backward))

    def clear(self) -> None:
        self.entries = []

    def __len__(self) -> int:
        return len(self.entries)


_TAPES: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _record(out: Matrix, inputs: tuple[Matrix, ...], backward: Callable[[np.ndarray], list]) -> None:
    tape = _active_tape()
    if tape is not None and out._flow:
        tape.record(out, inputs, backward)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise DimensionError(
            f"matmul: inner dimensions differ, {a.rows}x{a.cols} @ {b.rows}x{b.cols}"
        )
    out = _result(a.data @ b.data, a.requires_grad or b.requires_grad)

    def backward(g: np.ndarray) -> list:
        contribs = []
        if a.requires_grad:
            contribs.append((a, g @ b.data.T))
        if b.requires_grad:
            contribs.append((b, a.data.T @ g))
        return contribs

    _record(out, (a, b), backward)
    return out


def add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ, {a.rows}x{a.cols} vs {b.rows}x{b.cols}")
    out = _result(a.data + b.data, a.requires_grad or b.requires_grad)

    def backward(g: np.ndarray) -> list:
        contribs = []
        if a.requires_grad:
            contribs.append((a, g))
        if b.requires_grad:
            contribs.append((b, g))
        return contribs

    _record(out, (a, b), backward)
    return out


def scale(a: Matrix, c: float) -> Matrix:
    c = float(c)
    out = _result(a.data * c, a.requires_grad)

    def backward(g: np.ndarray) -> list:
        return [(a, g * c)]

    _record(out, (a,), backward)
    return out


def tanh(a: Matrix) -> Matrix:
    y = np.tanh(a.data)
    out = _result(y, a.requires_grad)

    def backward(g: np.ndarray) -> list:
        return [(a, g * (1.0 - y * y))]

    _record(out, (a,), backward)
    return out


def row_softmax(a: Matrix) -> Matrix:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = _result(y, a.requires_grad)

    def backward(g: np.ndarray) -> list:
        dot = (g * y).sum(axis=1, keepdims=True)
        return [(a, y * (g - dot))]

    _record(out, (a,), backward)
    return out


def topk_mask(a: Matrix, k: int) -> Matrix:
    """Keep the k largest entries per row, set the rest to MASK_VALUE.

    Ties break toward the lowest column index. The gradient is
    straight-through on kept entries and zero on masked ones.
    """
    if not 1 <= k <= a.cols:
        raise ParameterError(f"topk_mask: k={k} out of range for {a.cols} columns")
    order = np.argsort(-a.data, axis=1, kind="stable")
    keep = np.zeros(a.shape, dtype=bool)
    rows = np.arange(a.rows)[:, None]
    keep[rows, order[:, :k]] = True
    out = _result(np.where(keep, a.data, MASK_VALUE), a.requires_grad)

    def backward(g: np.ndarray) -> list:
        return [(a, np.where(keep, g, 0.0))]

    _record(out, (a,), backward)
    return out


def take_row(a: Matrix, i: int) -> Matrix:
    if not 0 <= i < a.rows:
        raise ParameterError(f"take_row: row {i} out of range for {a.rows} rows")
    out = _result(a.data[i : i + 1].copy(), a.requires_grad)

    def backward(g: np.ndarray) -> list:
        da = np.zeros_like(a.data)
        da[i] = g[0]
        return [(a, da)]

    _record(out, (a,), backward)
    return out


def mix(
    gate: Matrix,
    parts: Sequence[Matrix],
    cols: Sequence[int] | None = None,
) -> Matrix:
    """Gate-weighted sum of same-shape matrices: sum_j gate[0,j] * parts[j].

    Gradients reach both the gate (d gate_j = <g, parts_j>) and every part
    (d part_j = gate_j * g); a part weighted by an exact 0.0 gate entry
    receives an exactly zero gradient.

    With ``cols``, parts[i] is weighted by gate[0, cols[i]] and the other
    gate columns are treated as exact zeros.  This lets a sparse-gated
    caller skip building terms it knows are zeroed out: the result and
    every gradient match the dense call as long as the omitted columns
    really hold 0.0 (checked).
    """
    if gate.rows != 1:
        raise DimensionError(f"mix: gate must be a row vector, got {gate.rows}x{gate.cols}")
    if cols is None:
        cols = range(gate.cols)
        if len(parts) != gate.cols:
            raise DimensionError(f"mix: gate width {gate.cols} != {len(parts)} parts")
    else:
        cols = [int(c) for c in cols]
        if len(parts) != len(cols):
            raise DimensionError(f"mix: {len(cols)} cols != {len(parts)} parts")
        if len(set(cols)) != len(cols):
            raise DimensionError(f"mix: duplicate cols {cols}")
        for c in cols:
            if not 0 <= c < gate.cols:
                raise DimensionError(f"mix: col {c} outside gate width {gate.cols}")
        dropped = np.delete(gate.data[0], cols)
        if dropped.size and np.any(dropped != 0.0):
            raise ContractError("mix: omitted gate columns must be exactly 0.0")
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise DimensionError(f"mix: part shapes differ, {shape} vs {p.shape}")
    w = gate.data[0]
    acc = np.zeros(shape)
    for c, p in zip(cols, parts):
        acc += w[c] * p.data
    flow = gate.requires_grad or any(p.requires_grad for p in parts)
    out = _result(acc, flow)

    def backward(g: np.ndarray) -> list:
        contribs = []
        if gate.requires_grad:
            dg = np.zeros((1, gate.cols))
            for c, p in zip(cols, parts):
                dg[0, c] = float((g * p.data).sum())
            contribs.append((gate, dg))
        for c, p in zip(cols, parts):
            if p.requires_grad:
                contribs.append((p, w[c] * g))
        return contribs

    _record(out, (gate, *parts), backward)
    return out


def _as_vector(a: Matrix, label: str) -> np.ndarray:
    if a.rows != 1 and a.cols != 1:
        raise DimensionError(f"cosine_similarity: {label} must be a vector, got {a.rows}x{a.cols}")
    return a.data.ravel()


def cosine_similarity(a: Matrix, b: Matrix) -> Matrix:
    """Cosine of the angle between two equal-length vectors, as a 1x1 matrix.

    Returned scalar-shaped so gradient can flow to either vector; use
    `.item()` for the plain value.
    """
    u = _as_vector(a, "a")
    v = _as_vector(b, "b")
    if u.size != v.size:
        raise DimensionError(f"cosine_similarity: lengths differ, {u.size} vs {v.size}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine_similarity: zero-norm vector")
    c = float(u @ v) / (nu * nv)
    out = _result(np.array([[c]]), a.requires_grad or b.requires_grad)

    def backward(g: np.ndarray) -> list:
        gs = float(g[0, 0])
        contribs = []
        if a.requires_grad:
            da = gs * (v / (nu * nv) - c * u / (nu * nu))
            contribs.append((a, da.reshape(a.shape)))
        if b.requires_grad:
            db = gs * (u / (nu * nv) - c * v / (nv * nv))
            contribs.append((b, db.reshape(b.shape)))
        return contribs

    _record(out, (a, b), backward)
    return out


def cross_entropy(logits: Matrix, labels) -> Matrix:
    """Mean cross-entropy of row-wise class logits against integer labels."""
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size != logits.rows:
        raise DimensionError(f"cross_entropy: {logits.rows} rows vs {y.size} labels")
    if y.size and (y.min() < 0 or y.max() >= logits.cols):
        raise ParameterError(
            f"cross_entropy: labels must lie in [0, {logits.cols}), got [{y.min()}, {y.max()}]"
        )
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    n = z.shape[0]
    losses = lse - z[np.arange(n), y]
    out = _result(np.array([[losses.mean()]]), logits.requires_grad)

    def backward(g: np.ndarray) -> list:
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), y] -= 1.0
        return [(logits, float(g[0, 0]) * p / n)]

    _record(out, (logits,), backward)
    return out


def mse_loss(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise DimensionError(f"mse_loss: shapes differ, {a.rows}x{a.cols} vs {b.rows}x{b.cols}")
    diff = a.data - b.data
    out = _result(np.array([[float((diff * diff).mean())]]), a.requires_grad or b.requires_grad)

    def backward(g: np.ndarray) -> list:
        gs = 2.0 * float(g[0, 0]) / diff.size
        contribs = []
        if a.requires_grad:
            contribs.append((a, gs * diff))
        if b.requires_grad:
            contribs.append((b, -gs * diff))
        return contribs

    _record(out, (a, b), backward)
    return out


def reduce_sum(a: Matrix) -> Matrix:
    out = _result(np.array([[float(a.data.sum())]]), a.requires_grad)

    def backward(g: np.ndarray) -> list:
        return [(a, np.full(a.shape, float(g[0, 0])))]

    _record(out, (a,), backward)
    return out


def reduce_mean(a: Matrix) -> Matrix:
    size = a.data.size
    out = _result(np.array([[float(a.data.mean())]]), a.requires_grad)

    def backward(g: np.ndarray) -> list:
        return [(a, np.full(a.shape, float(g[0, 0]) / size))]

    _record(out, (a,), backward)
    return out


def backward(tape: Tape, loss: Matrix) -> None:
    """Accumulate dLoss/dParam into .grad of every trainable leaf on the tape.

    Trainable leaves touched by any recorded op get a zero-initialized grad
    even when disconnected from this particular loss. Replaying an empty
    tape is a no-op.
    """
    if loss.data.shape != (1, 1):
        raise ContractError(f"backward: loss must be 1x1, got {loss.data.shape}")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for entry in reversed(tape.entries):
        g = adjoint.pop(id(entry.out), None)
        if g is None:
            continue
        for m, contrib in entry.backward(g):
            if m.trainable:
                if m.grad is None:
                    m.grad = np.zeros_like(m.data)
                m.grad += contrib
            else:
                key = id(m)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + contrib
                else:
                    adjoint[key] = contrib
    # Zero-fill grads of trainable leaves that appeared on the tape but were
    # not reachable from this loss, so "disconnected => zero gradient" holds.
    for entry in tape.entries:
        for m in entry.inputs:
            if m.trainable and m.grad is None:
                m.grad = np.zeros_like(m.data)
