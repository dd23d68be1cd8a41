"""Minimal reverse-mode differentiation over numpy arrays.

Sized for the small actor/critic networks used here: dense layers, graph
convolutions, elementwise activations, and an Adam optimizer.  Graphs are
built eagerly; `Tensor.backward()` runs one reverse sweep and refuses to run
twice on the same graph.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class GradientContractError(RuntimeError):
    """Backward was invoked twice on the same graph without a rebuild."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Array node in the computation graph.

    `grad` accumulates across backward passes until the owning optimizer
    clears it, which is what mini-batch updates expect.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn",
                 "_needs_grad", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False, parents=(),
                 backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self._needs_grad = requires_grad or any(p._needs_grad for p in self.parents)
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, grad: np.ndarray):
        if not self._needs_grad:
            return
        self.grad = grad if self.grad is None else self.grad + grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        if self._backward_ran:
            raise GradientContractError(
                "backward() already ran on this graph; rebuild it before "
                "differentiating again")
        self._backward_ran = True
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent._needs_grad:
                    stack.append((parent, False))
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    # operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, rng: np.random.Generator | None = None,
              fan_in: int | None = None, shape=None) -> Tensor:
    """Trainable tensor; with `rng`/`fan_in` given, init uniform(+-1/sqrt(fan_in))."""
    if data is None:
        bound = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=True)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# -- primitive ops ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))
    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(-g, b.shape))
    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        a.accumulate(_unbroadcast(g * b.data, a.shape))
        b.accumulate(_unbroadcast(g * a.data, b.shape))
    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a.accumulate(g * factor)
    return Tensor(a.data * factor, parents=(a,), backward_fn=backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def backward(g):
        a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a.accumulate(g * mask)
    return Tensor(a.data * mask, parents=(a,), backward_fn=backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        a.accumulate(g * (1.0 - out_data * out_data))
    return Tensor(out_data, parents=(a,), backward_fn=backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a.accumulate(g * out_data * (1.0 - out_data))
    return Tensor(out_data, parents=(a,), backward_fn=backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        a.accumulate(g * (2.0 * a.data))
    return Tensor(a.data * a.data, parents=(a,), backward_fn=backward)


def mean(a: Tensor) -> Tensor:
    inv = 1.0 / a.data.size

    def backward(g):
        a.accumulate(np.full(a.shape, float(g) * inv))
    return Tensor(a.data.mean(), parents=(a,), backward_fn=backward)


def total(a: Tensor) -> Tensor:
    def backward(g):
        a.accumulate(np.full(a.shape, float(g)))
    return Tensor(a.data.sum(), parents=(a,), backward_fn=backward)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        a.accumulate(g.reshape(a.shape))
    return Tensor(a.data.reshape(shape), parents=(a,), backward_fn=backward)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for part, piece in zip(parts, np.split(g, splits, axis=axis)):
            part.accumulate(piece)
    return Tensor(out_data, parents=tuple(parts), backward_fn=backward)


def group_softmax(a: Tensor, groups) -> Tensor:
    """Softmax applied within each column group of the last axis; columns not
    covered by any group pass through unchanged."""
    out_data = a.data.copy()
    saved = []
    for cols in groups:
        z = a.data[..., cols]
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        out_data[..., cols] = y
        saved.append(y)

    def backward(g):
        gx = g.copy()
        for cols, y in zip(groups, saved):
            gg = g[..., cols]
            gx[..., cols] = y * (gg - (gg * y).sum(axis=-1, keepdims=True))
        a.accumulate(gx)
    return Tensor(out_data, parents=(a,), backward_fn=backward)


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid,
                "identity": lambda t: t}

_ACTIVATIONS_NP = {
    "relu": lambda x: x * (x > 0),
    "tanh": np.tanh,
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "identity": lambda x: x,
}


# -- layers ------------------------------------------------------------------

class Dense:
    """Affine layer with an elementwise activation."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: np.random.Generator | None = None, bias: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = parameter(None, rng, in_dim, (in_dim, out_dim))
        self.bias = parameter(None, rng, in_dim, (out_dim,)) if bias else None
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = add(y, self.bias)
        return _ACTIVATIONS[self.activation](y)

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.weight.data
        if self.bias is not None:
            y = y + self.bias.data
        return _ACTIVATIONS_NP[self.activation](y)

    def parameters(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class Gcn:
    """Graph convolution: activation(P @ H @ W), no bias."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = parameter(None, rng, in_dim, (in_dim, out_dim))
        self.activation = activation

    def __call__(self, prop: np.ndarray, h: Tensor) -> Tensor:
        mixed = matmul(Tensor(prop), h)
        return _ACTIVATIONS[self.activation](matmul(mixed, self.weight))

    def forward_np(self, prop: np.ndarray, h: np.ndarray) -> np.ndarray:
        return _ACTIVATIONS_NP[self.activation]((prop @ h) @ self.weight.data)

    def parameters(self) -> list[Tensor]:
        return [self.weight]


def param_count(source) -> int:
    """Exact number of trainable scalars in a network or parameter iterable."""
    params = source.parameters() if hasattr(source, "parameters") else source
    return int(sum(p.data.size for p in params))


# -- optimizer ----------------------------------------------------------------

class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_DTYPE = "<f8"


def save_checkpoint(named_params: dict, stem: str | Path) -> None:
    """Write parameters as one flat little-endian float array plus a JSON
    shape manifest (`<stem>.bin` / `<stem>.json`)."""
    stem = Path(stem)
    entries = []
    offset = 0
    chunks = []
    for name in sorted(named_params):
        arr = named_params[name]
        data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        flat = np.ascontiguousarray(data, dtype=CHECKPOINT_DTYPE).ravel()
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        offset += flat.size
        chunks.append(flat.tobytes())
    manifest = {"schema_version": 1, "dtype": CHECKPOINT_DTYPE,
                "total": offset, "tensors": entries}
    stem.with_suffix(".bin").write_bytes(b"".join(chunks))
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(stem: str | Path) -> dict:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(),
                        dtype=manifest["dtype"])
    if raw.size != manifest["total"]:
        raise ValueError("checkpoint payload size does not match its manifest")
    out = {}
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        chunk = raw[entry["offset"]:entry["offset"] + size]
        out[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)
    return out
