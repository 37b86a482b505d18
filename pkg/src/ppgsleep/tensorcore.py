"""Minimal dense-tensor engine with reverse-mode gradients.

Exactly the primitives the staging model needs: dilated 1D convolution
(cross-correlation convention), pair max-pooling, affine maps, ReLU, reshape,
elementwise add, softmax, and a masked softmax cross-entropy. Gradients are
accumulated on a tape of closures and released by :meth:`Tensor.backward`.

Arrays are float32 for training and float64 for gradient checking; every op
keeps the dtype of its inputs. The hot conv / pool loops are delegated to the
active kernel backend (see :mod:`ppgsleep.backend`).
"""

from contextlib import contextmanager

import numpy as np

from . import backend
from .errors import ConsistencyError, EmptyBatchError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextmanager
def no_grad():
    """Skip tape construction inside the block (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _contig(a):
    return np.ascontiguousarray(a)


class Tensor:
    """A dense array plus the bookkeeping to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        if self.data.dtype not in FLOAT_DTYPES:
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g):
        # grads are replaced, never mutated in place, so keeping a reference is safe
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Seed d(self)/d(self) = 1 and propagate to every reachable input.

        The tape is consumed: closures and parent links are dropped as each
        node fires, so the graph (and its activations) free immediately by
        refcount instead of waiting for cycle collection.
        """
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p is not None and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn()
            node._backward_fn = None
            node._parents = ()

    def __add__(self, other):
        other = as_tensor(other)
        if self.shape != other.shape:
            raise ShapeError(f"add: shapes {self.shape} and {other.shape} differ")
        req = _needs_grad(self, other)
        out = Tensor(self.data + other.data, requires_grad=req,
                     parents=(self, other) if req else ())
        if not req:
            return out

        def _bw():
            if self.requires_grad:
                self._accumulate(out.grad)
            if other.requires_grad:
                other._accumulate(out.grad)

        out._backward_fn = _bw
        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={'set' if self.grad is not None else 'none'})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*tensors):
    return _grad_enabled and any(t is not None and t.requires_grad for t in tensors)


def conv1d(x, kernels, bias=None, dilation=1, padding="valid"):
    """Dilated 1D cross-correlation over the length axis.

    x: (L, Cin) or (B, L, Cin); kernels: (K, Cin, Cout); bias: (Cout,) or None.
    ``same`` zero-pads symmetrically to keep L; ``valid`` yields
    L - (K-1)*dilation outputs.
    """
    x = as_tensor(x)
    w = as_tensor(kernels)
    b = as_tensor(bias) if bias is not None else None
    if w.data.ndim != 3:
        raise ShapeError(f"kernels must be (K, Cin, Cout), got {w.shape}")
    squeeze = x.data.ndim == 2
    x3 = x.data[None] if squeeze else x.data
    if x3.ndim != 3:
        raise ShapeError(f"input must be (L, Cin) or (B, L, Cin), got {x.shape}")
    if x3.shape[2] != w.shape[1]:
        raise ShapeError(f"input channels {x3.shape[2]} != kernel Cin {w.shape[1]}")
    K = w.shape[0]
    if K < 1 or dilation < 1:
        raise ShapeError("kernel size and dilation must be >= 1")
    if x.dtype != w.dtype:
        raise ShapeError(f"dtype mismatch: input {x.dtype}, kernels {w.dtype}")
    span = (K - 1) * dilation
    if padding == "same":
        pad_left = span // 2
        pad_right = span - pad_left
    elif padding == "valid":
        pad_left = pad_right = 0
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    L = x3.shape[1]
    if L + pad_left + pad_right - span <= 0:
        raise ShapeError(f"kernel span {span + 1} wider than padded input {L + pad_left + pad_right}")

    kb = backend.active()
    xc, wc = _contig(x3), _contig(w.data)
    y = kb.conv1d_fwd(xc, wc, dilation, pad_left, pad_right)
    if b is not None:
        y += b.data.astype(y.dtype, copy=False)
    req = _needs_grad(x, w, b)
    out = Tensor(y[0] if squeeze else y, requires_grad=req,
                 parents=(x, w, b) if req else ())
    if not req:
        return out

    def _bw():
        g3 = _contig(out.grad[None] if squeeze else out.grad)
        if x.requires_grad or w.requires_grad:
            gx, gw = kb.conv1d_bwd(xc, wc, g3, dilation, pad_left, pad_right)
            if x.requires_grad:
                x._accumulate(gx[0] if squeeze else gx)
            if w.requires_grad:
                w._accumulate(gw)
        if b is not None and b.requires_grad:
            b._accumulate(g3.sum(axis=(0, 1)))

    out._backward_fn = _bw
    return out


def maxpool1d(x):
    """Max over disjoint pairs along the length axis; gradient to the argmax
    (first index on ties)."""
    x = as_tensor(x)
    squeeze = x.data.ndim == 2
    x3 = x.data[None] if squeeze else x.data
    if x3.ndim != 3:
        raise ShapeError(f"input must be (L, C) or (B, L, C), got {x.shape}")
    if x3.shape[1] % 2 != 0:
        raise ShapeError(f"maxpool1d needs an even length, got {x3.shape[1]}")
    kb = backend.active()
    y, arg = kb.maxpool2_fwd(_contig(x3))
    req = _needs_grad(x)
    out = Tensor(y[0] if squeeze else y, requires_grad=req,
                 parents=(x,) if req else ())
    if not req:
        return out

    def _bw():
        g3 = _contig(out.grad[None] if squeeze else out.grad)
        gx = kb.maxpool2_bwd(g3, arg)
        x._accumulate(gx[0] if squeeze else gx)

    out._backward_fn = _bw
    return out


def dense(x, weight, bias=None):
    """Affine map over the last axis: (..., Din) @ (Din, Dout) + (Dout,)."""
    x = as_tensor(x)
    w = as_tensor(weight)
    b = as_tensor(bias) if bias is not None else None
    if w.data.ndim != 2 or x.data.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input (..., {x.data.shape[-1]}) vs weight {w.shape}")
    y = x.data @ w.data
    if b is not None:
        y += b.data.astype(y.dtype, copy=False)
    req = _needs_grad(x, w, b)
    out = Tensor(y, requires_grad=req, parents=(x, w, b) if req else ())
    if not req:
        return out

    def _bw():
        g = out.grad
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            din, dout = w.shape
            w._accumulate(x.data.reshape(-1, din).T @ g.reshape(-1, dout))
        if b is not None and b.requires_grad:
            b._accumulate(g.reshape(-1, w.shape[1]).sum(axis=0))

    out._backward_fn = _bw
    return out


def relu(x):
    x = as_tensor(x)
    req = _needs_grad(x)
    out = Tensor(np.maximum(x.data, 0), requires_grad=req, parents=(x,) if req else ())
    if not req:
        return out

    def _bw():
        x._accumulate(out.grad * (x.data > 0))

    out._backward_fn = _bw
    return out


def reshape(x, shape):
    x = as_tensor(x)
    req = _needs_grad(x)
    out = Tensor(x.data.reshape(shape), requires_grad=req, parents=(x,) if req else ())
    if not req:
        return out

    def _bw():
        x._accumulate(out.grad.reshape(x.data.shape))

    out._backward_fn = _bw
    return out


def softmax(x):
    """Stable softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    req = _needs_grad(x)
    out = Tensor(p, requires_grad=req, parents=(x,) if req else ())
    if not req:
        return out

    def _bw():
        g = out.grad
        x._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    out._backward_fn = _bw
    return out


def masked_softmax_ce(logits, labels, valid):
    """Mean cross-entropy over valid positions only.

    logits: (B, Q, C); labels: (B, Q) ints in [0, C) wherever valid;
    valid: (B, Q) bools. Invalid positions contribute exactly zero loss and
    zero gradient. Raises :class:`EmptyBatchError` when nothing is valid.
    """
    logits = as_tensor(logits)
    z = logits.data
    if z.ndim != 3:
        raise ShapeError(f"logits must be (B, Q, C), got {logits.shape}")
    labels = np.asarray(labels)
    valid = np.asarray(valid, dtype=bool)
    if labels.shape != z.shape[:2] or valid.shape != z.shape[:2]:
        raise ShapeError("labels/valid must both be shaped (B, Q)")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyBatchError("no valid positions in batch")
    safe = np.where(valid, labels, 0).astype(np.intp)
    if safe.min() < 0 or safe.max() >= z.shape[2]:
        raise ShapeError("labels out of range at valid positions")

    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    denom = e.sum(axis=-1, keepdims=True)
    logp = (z - zmax) - np.log(denom)
    picked = np.take_along_axis(logp, safe[:, :, None], axis=-1)[:, :, 0]
    loss = -(picked * valid).sum() / n_valid
    req = _needs_grad(logits)
    out = Tensor(np.asarray(loss, dtype=z.dtype), requires_grad=req,
                 parents=(logits,) if req else ())
    if not req:
        return out

    def _bw():
        p = e / denom
        g = p.copy()
        np.put_along_axis(
            g, safe[:, :, None],
            np.take_along_axis(g, safe[:, :, None], axis=-1) - 1.0, axis=-1)
        g *= valid[:, :, None]
        g *= out.grad / n_valid
        logits._accumulate(g.astype(z.dtype, copy=False))

    out._backward_fn = _bw
    return out


class ParamStore:
    """Named parameter tensors plus per-parameter Adam state.

    Names are unique, insertion order is the canonical parameter order, and
    the Adam step count is shared across parameters.
    """

    def __init__(self):
        self.params = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name, array):
        if name in self.params:
            raise ConsistencyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def grads(self):
        return {name: t.grad for name, t in self.params.items()}

    def n_params(self):
        return sum(t.data.size for t in self.params.values())


def adam_step(store, grads=None, lr=0.00025, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter in the store.

    ``grads`` maps name -> gradient array; by default the gradients left on
    the parameter tensors by ``backward`` are used. A missing gradient is a
    :class:`ConsistencyError`. The shared step count increments exactly once.
    """
    if grads is None:
        grads = store.grads()
    missing = [n for n in store.params if grads.get(n) is None]
    if missing:
        raise ConsistencyError(f"missing gradients for {missing}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        if g.shape != p.data.shape:
            raise ConsistencyError(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / np.asarray(c1, dtype=p.dtype)
        vhat = v / np.asarray(c2, dtype=p.dtype)
        p.data -= np.asarray(lr, dtype=p.dtype) * mhat / (np.sqrt(vhat) + np.asarray(eps, dtype=p.dtype))
    return store
