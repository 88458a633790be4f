"""Dense float64 tensors with a tape-free reverse-mode gradient.

Every differentiable op returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks that graph in reverse topological order and
accumulates into ``.grad`` of the leaves.

The op set is deliberately small: what the message-passing model needs and
nothing else.  There is no implicit broadcasting; row-wise bias addition and
row scaling are separate, explicit ops.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ShapeError

CHECKPOINT_VERSION = 1


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- linear ops

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _result(A @ B, (a, b), backward)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def add_row(x, bias):
    """``x[n, k] + bias[k]`` with the bias repeated on every row."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.data.ndim != 2 or bias.shape != (x.shape[1],):
        raise ShapeError(f"add_row: cannot add bias {bias.shape} to rows of {x.shape}")
    return _result(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same("mul", a, b)
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (g * B, g * A))


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def row_scale(x, s):
    """Multiply row ``i`` of ``x[n, k]`` by the scalar ``s[i, 0]``."""
    x, s = as_tensor(x), as_tensor(s)
    if x.data.ndim != 2 or s.shape != (x.shape[0], 1):
        raise ShapeError(f"row_scale: scale {s.shape} does not match rows of {x.shape}")
    X, S = x.data, s.data

    def backward(g):
        return (g * S if x.requires_grad else None,
                (g * X).sum(axis=1, keepdims=True) if s.requires_grad else None)

    return _result(X * S, (x, s), backward)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: nothing to concatenate")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, tuple(tensors), backward)


# ------------------------------------------------------------ index ops

def segment_matrix(index, n):
    """Sparse ``n x len(index)`` 0/1 matrix summing entries into their segment.

    Entries are summed in ascending position within each segment, so the
    result does not depend on anything but ``index``.
    """
    index = np.asarray(index, dtype=np.int64)
    m = index.shape[0]
    if m and (index.min() < 0 or index.max() >= n):
        raise ContractError(f"segment index out of range [0, {n})")
    order = np.argsort(index, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(index, minlength=n), out=indptr[1:])
    return sp.csr_matrix((np.ones(m), order, indptr), shape=(n, m))


def gather(x, index, seg=None):
    """Rows ``x[index]``; the gradient scatters back with summation."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def backward(g):
        m = seg if seg is not None else segment_matrix(index, n)
        return (np.asarray(m @ g),)

    return _result(x.data[index], (x,), backward)


def segment_sum(x, index, n, seg=None):
    """Sum rows of ``x`` that share a segment id; ``out`` has ``n`` rows."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"segment_sum: index {index.shape} does not match rows of {x.shape}")
    m = seg if seg is not None else segment_matrix(index, n)
    return _result(np.asarray(m @ x.data), (x,), lambda g: (g[index],))


# ------------------------------------------------------------ elementwise

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(np.atleast_1d(x.data)).reshape(x.shape)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def cos(x):
    x = as_tensor(x)
    X = x.data
    return _result(np.cos(X), (x,), lambda g: (-g * np.sin(X),))


# ------------------------------------------------------------ reductions

def reduce_sum(x):
    x = as_tensor(x)
    shape = x.shape
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def reduce_mean(x):
    x = as_tensor(x)
    shape, n = x.shape, x.data.size
    return _result(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    b, c = logits.shape
    if b == 0:
        raise ContractError("cross_entropy: empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractError(f"cross_entropy: label outside [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = np.mean(logsum - z[rows, labels])

    def backward(g):
        d = softmax(logits.data)
        d[rows, labels] -= 1.0
        return (d * (float(g) / b),)

    return _result(np.array(loss), (logits,), backward)


# ------------------------------------------------------------ autodiff

def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate ``d loss / d leaf`` into every ``requires_grad`` leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any trainable tensor")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg


# ------------------------------------------------------------ modules

def glorot(fan_in, fan_out, rng):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Mlp:
    """Affine layers with relu between them and an identity output."""

    def __init__(self, dims, rng, name="mlp"):
        if len(dims) < 2:
            raise ContractError(f"Mlp needs at least input and output dims, got {dims}")
        self.name = name
        self.layers = []
        for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = Tensor(glorot(fan_in, fan_out, rng), requires_grad=True, name=f"{name}.{k}.weight")
            b = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.{k}.bias")
            self.layers.append((w, b))

    @property
    def in_dim(self):
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self):
        return self.layers[-1][0].shape[1]

    def parameters(self):
        params = {}
        for w, b in self.layers:
            params[w.name] = w
            params[b.name] = b
        return params

    def __call__(self, x):
        return mlp_forward(self, x)


def mlp_forward(m, x):
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != m.in_dim:
        raise ShapeError(f"{m.name}: input {x.shape} does not match input dim {m.in_dim}")
    last = len(m.layers) - 1
    for k, (w, b) in enumerate(m.layers):
        x = add_row(matmul(x, w), b)
        if k < last:
            x = relu(x)
    return x


class Adam:
    """Adam with bias correction; gradients are zeroed after each step."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise ContractError(f"adam_step: no gradient for {missing}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            g[...] = 0.0


def adam_step(params, lr, state=None):
    """Functional wrapper: one Adam update, creating ``state`` on first use."""
    if state is None:
        state = Adam(params, lr)
    state.lr = float(lr)
    state.step()
    return state


# ------------------------------------------------------------ checkpoints

def save_params(params, path):
    """Write ``{name: array}`` as JSON (``.json``) or numpy ``.npz``."""
    path = Path(path)
    arrays = {k: np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64)
              for k, v in params.items()}
    if path.suffix == ".json":
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "params": {k: {"shape": list(a.shape), "data": a.ravel().tolist()}
                       for k, a in sorted(arrays.items())},
        }
        path.write_text(json.dumps(doc))
    else:
        with open(path, "wb") as fh:
            np.savez(fh, __format_version__=np.array(CHECKPOINT_VERSION), **arrays)


def load_params(path):
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        version = doc.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {version}")
        return {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                for k, v in doc["params"].items()}
    with np.load(path) as z:
        version = int(z["__format_version__"]) if "__format_version__" in z else None
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {version}")
        return {k: z[k].copy() for k in z.files if k != "__format_version__"}
