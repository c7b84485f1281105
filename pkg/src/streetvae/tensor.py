"""Dense float64 tensors with a reverse-mode tape and an Adam optimizer.

Design constraints: define-by-run tape (thread-local, one per training
context), float64 everywhere, only the broadcasting actually needed
(scalar <-> tensor, row-vector <-> matrix), and every op raising as soon
as it produces a non-finite value.
"""
from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

CHECKPOINT_MAGIC = b"SVAE1"


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class DomainError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class OptimizerError(TensorError):
    pass


class DegenerateBatchError(TensorError):
    pass


class Tensor:
    """A row-major float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor {name or ''} initialized with non-finite values")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op: str


@dataclass
class Tape:
    records: list[_Record] = field(default_factory=list)

    def clear(self) -> None:
        self.records.clear()


_ctx = threading.local()


def _tape() -> Tape:
    tape = getattr(_ctx, "tape", None)
    if tape is None:
        tape = Tape()
        _ctx.tape = tape
    return tape


def _grad_enabled() -> bool:
    return getattr(_ctx, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference paths)."""
    prev = _grad_enabled()
    _ctx.grad_enabled = False
    try:
        yield
    finally:
        _ctx.grad_enabled = prev


def _finalize(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")
    requires = _grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = requires
    out.name = None
    if requires:
        _tape().records.append(_Record(out, inputs, backward, op))
    return out


def backward(loss: Tensor) -> None:
    """Reverse sweep: fill .grad on every requires_grad tensor, clear the tape."""
    if loss.data.shape != ():
        raise TensorError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    tape = _tape()
    loss.grad = np.ones((), dtype=np.float64)
    for rec in reversed(tape.records):
        g = rec.out.grad
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.data.shape:
                raise ShapeError(f"op '{rec.op}' backward produced grad shape {gi.shape} for input {inp.data.shape}")
            # grads are only ever rebound, never mutated in place, so views are safe
            inp.grad = gi if inp.grad is None else inp.grad + gi
    tape.clear()


def _broadcast_check(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    if a.shape == () or b.shape == ():
        return
    # row-vector against matrix
    for v, m in ((a, b), (b, a)):
        if m.ndim == 2 and (v.shape == (m.shape[1],) or v.shape == (1, m.shape[1])):
            return
    raise ShapeError(f"op '{op}': shapes {a.shape} and {b.shape} do not broadcast")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # reduce the broadcast row dimension
    out = g.sum(axis=0)
    if shape == (1,) + out.shape:
        out = out[None, :]
    return out.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a.data, b.data)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _finalize("add", out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _finalize("neg", -a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("mul", a.data, b.data)
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _finalize("mul", out, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _finalize("matmul", out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    return _finalize("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _finalize("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _finalize("sigmoid", out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)  # overflow becomes inf and raises NonFiniteError

    def bwd(g):
        return (g * out,)

    return _finalize("exp", out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    out = np.log(a.data)
    return _finalize("log", out, (a,), lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _finalize("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def tsum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    out = a.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.full_like(a.data, float(g)),)
        return (np.expand_dims(g, axis).repeat(a.data.shape[axis], axis=axis),)

    return _finalize("sum", np.asarray(out), (a,), bwd)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean())

    def bwd(g):
        return (np.full_like(a.data, float(g) / n),)

    return _finalize("mean", out, (a,), bwd)


def rows(table: Tensor, idx) -> Tensor:
    """Gather rows of a [K, d] table by an integer index vector."""
    index = np.asarray(idx, dtype=np.int64)
    if table.data.ndim != 2 or index.ndim != 1:
        raise ShapeError(f"rows: table {table.data.shape}, index {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= table.data.shape[0]):
        raise ShapeError(f"rows: index out of range for table with {table.data.shape[0]} rows")
    out = table.data[index]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        return (gt,)

    return _finalize("rows", out, (table,), bwd)


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= j0 < j1 <= a.data.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{j0}, {j1}) for shape {a.data.shape}")
    out = a.data[:, j0:j1].copy()

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[:, j0:j1] = g
        return (ga,)

    return _finalize("slice_cols", out, (a,), bwd)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts or any(p.data.ndim != 2 or p.data.shape[0] != parts[0].data.shape[0] for p in parts):
        raise ShapeError("concat_cols: parts must be 2-d with equal row counts")
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]

    def bwd(g):
        grads = []
        j = 0
        for w in widths:
            grads.append(g[:, j : j + w])
            j += w
        return grads

    return _finalize("concat_cols", out, tuple(parts), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    x = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _finalize("softmax_rows", s, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if x.data.ndim != 2 or gain.data.shape != (x.data.shape[1],) or bias.data.shape != (x.data.shape[1],):
        raise ShapeError(f"layer_norm: x {x.data.shape}, gain {gain.data.shape}, bias {bias.data.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        dgain = (g * xhat).sum(axis=0)
        dbias = g.sum(axis=0)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        return dx, dgain, dbias

    return _finalize("layer_norm", out, (x, gain, bias), bwd)


def softmax_cross_entropy(logits: Tensor, targets, ignore_index: int = -1) -> Tensor:
    """Mean NLL of integer targets under row-wise softmax of the logits."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or t.shape != (logits.data.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.data.shape}, targets {t.shape}")
    v = logits.data.shape[1]
    active = t != ignore_index
    if np.any(((t < 0) | (t >= v)) & active):
        raise ShapeError("softmax_cross_entropy: target out of vocabulary")
    count = int(active.sum())
    if count == 0:
        raise DegenerateBatchError("all positions ignored")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    nll = -logp[np.arange(len(t)), np.where(active, t, 0)]
    loss = np.asarray((nll * active).sum() / count)

    softmax = np.exp(logp)

    def bwd(g):
        grad = softmax.copy()
        grad[np.arange(len(t)), np.where(active, t, 0)] -= 1.0
        grad *= active[:, None]
        return (grad * (float(g) / count),)

    return _finalize("softmax_cross_entropy", loss, (logits,), bwd)


def gaussian_kl(mu: Tensor, log_var: Tensor) -> Tensor:
    """KL(q || N(0, I)) summed over all entries, divided by the row count."""
    if mu.data.shape != log_var.data.shape:
        raise ShapeError(f"gaussian_kl: {mu.data.shape} vs {log_var.data.shape}")
    n = mu.data.shape[0] if mu.data.ndim else 1
    ev = np.exp(log_var.data)
    loss = np.asarray(0.5 * (mu.data**2 + ev - 1.0 - log_var.data).sum() / n)

    def bwd(g):
        s = float(g) / n
        return mu.data * s, 0.5 * (ev - 1.0) * s

    return _finalize("gaussian_kl", loss, (mu, log_var), bwd)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One adaptive-moment update in place; missing grads count as zero."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter '{name}'")
        if g.shape != p.data.shape:
            raise OptimizerError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for '{name}'")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
    return state


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# checkpoints: magic, one-line JSON header, raw little-endian float64 payload
# ---------------------------------------------------------------------------


def save_checkpoint(path, tensors: Mapping[str, Union[Tensor, np.ndarray]]) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = tensors[name].data if isinstance(tensors[name], Tensor) else np.asarray(tensors[name])
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.astype("<f8").tobytes()
    header = json.dumps({"tensors": entries}, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(header + b"\n")
        fh.write(bytes(payload))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC + b"\n"):
        raise TensorError(f"{path}: bad checkpoint magic")
    rest = blob[len(CHECKPOINT_MAGIC) + 1 :]
    nl = rest.find(b"\n")
    if nl < 0:
        raise TensorError(f"{path}: truncated checkpoint header")
    header = json.loads(rest[:nl].decode("utf-8"))
    payload = rest[nl + 1 :]
    out: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=start).reshape(shape)
        out[entry["name"]] = arr.astype(np.float64)
    return out


def load_params(path, requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in load_checkpoint(path).items()}
