"""Minimal dense-tensor reverse-mode autodiff with an Adam optimizer.

Tensors wrap float64 numpy arrays and are immutable after construction.
Every op records its parents and a vector-Jacobian closure; ``backward``
walks the implicit graph once in reverse topological order.  This is
deliberately small: only the ops needed by the unfolded reconstruction
network exist (3x3 conv, relu, elementwise arithmetic, matmul, MSE).
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray.  ``requires_grad`` marks leaf
    parameters; intermediate nodes propagate gradients regardless, leaves
    without the flag absorb them silently.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, name=None,
                 _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = tuple(_parents)
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    # convenience operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def _check_same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")
    return Tensor(a.data + b.data, _parents=(a, b),
                  _vjp=lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")
    return Tensor(a.data - b.data, _parents=(a, b),
                  _vjp=lambda g: (g, -g))


def scale(x, s):
    """x * s with s a scalar (python float or 0-d/1-element Tensor)."""
    x = as_tensor(x)
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise ShapeError("scale: scalar expected")
        sval = float(s.data.reshape(()))
        xd = x.data

        def vjp(g):
            return (g * sval, np.asarray(np.sum(g * xd)).reshape(s.data.shape))

        return Tensor(x.data * sval, _parents=(x, s), _vjp=vjp)
    sval = float(s)
    return Tensor(x.data * sval, _parents=(x,), _vjp=lambda g: (g * sval,))


def exp(x):
    x = as_tensor(x)
    out_data = np.exp(x.data)
    return Tensor(out_data, _parents=(x,), _vjp=lambda g: (g * out_data,))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,),
                  _vjp=lambda g: (g * mask,))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.data.shape
    return Tensor(x.data.reshape(shape), _parents=(x,),
                  _vjp=lambda g: (g.reshape(old),))


def concat_channels(a, b):
    """Concatenate (Ca,H,W) and (Cb,H,W) along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[1:] != b.data.shape[1:]:
        raise ShapeError("concat_channels: spatial dims differ")
    ca = a.data.shape[0]
    return Tensor(np.concatenate([a.data, b.data], axis=0),
                  _parents=(a, b),
                  _vjp=lambda g: (g[:ca], g[ca:]))


def slice_channels(x, lo, hi):
    x = as_tensor(x)
    return Tensor(x.data[lo:hi].copy(), _parents=(x,),
                  _vjp=lambda g: (_scatter_channels(g, x.data.shape, lo),))


def _scatter_channels(g, shape, lo):
    out = np.zeros(shape, dtype=np.float64)
    out[lo:lo + g.shape[0]] = g
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: incompatible {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data
    return Tensor(ad @ bd, _parents=(a, b),
                  _vjp=lambda g: (g @ bd.T, ad.T @ g))


def bias_add(x, b):
    """Add a per-channel bias vector b (C,) to x (C,H,W)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 3 or b.data.shape != (x.data.shape[0],):
        raise ShapeError("bias_add: expected (C,H,W) and (C,)")
    return Tensor(x.data + b.data[:, None, None], _parents=(x, b),
                  _vjp=lambda g: (g, g.sum(axis=(1, 2))))


def conv2d(x, w, b):
    """3x3 stride-1 convolution with zero padding 1 (spatial dims kept)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 3:
        raise ShapeError("conv2d: input must be (Cin,H,W)")
    if w.data.ndim != 4 or w.data.shape[2:] != (3, 3):
        raise ShapeError("conv2d: kernel must be (Cout,Cin,3,3)")
    if w.data.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"conv2d: Cin mismatch: input {x.data.shape[0]}, "
            f"kernel {w.data.shape[1]}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError("conv2d: bias must be (Cout,)")
    xd, wd = x.data, w.data
    out = kernels.conv2d_forward(xd, wd, b.data)

    def vjp(g):
        return kernels.conv2d_backward(xd, wd, g)

    return Tensor(out, _parents=(x, w, b), _vjp=vjp)


def mean(x):
    x = as_tensor(x)
    n = x.data.size
    shape = x.data.shape
    return Tensor(np.asarray(x.data.mean()), _parents=(x,),
                  _vjp=lambda g: (np.full(shape, float(g) / n),))


def mse(a, b):
    """Mean squared difference; scalar output."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mse")
    diff = a.data - b.data
    n = diff.size
    return Tensor(np.asarray(np.mean(diff * diff)), _parents=(a, b),
                  _vjp=lambda g: ((2.0 * float(g) / n) * diff,
                                  (-2.0 * float(g) / n) * diff))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root):
    order, state = [], {}  # state: 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            state[id(node)] = 2
            order.append(node)
            continue
        st = state.get(id(node))
        if st == 2:
            continue
        if st == 1:
            raise GraphError("cycle detected in computation graph")
        state[id(node)] = 1
        stack.append((node, True))
        for p in node._parents:
            if state.get(id(p)) != 2:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Reverse-mode sweep from a scalar loss.

    Populates ``.grad`` on every node reachable from ``loss`` and, when
    ``params`` (name -> Tensor) is given, returns the gradient map for
    tensors with ``requires_grad``.
    """
    if loss.data.size != 1:
        raise ShapeError("backward: loss must be scalar")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + g
    if params is not None:
        return {name: p.grad for name, p in params.items()
                if p.requires_grad and p.grad is not None}
    return None


def zero_grads(params):
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# optimizer and LR schedule
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Frozen parameters (``requires_grad=False``) are skipped entirely.
    A non-finite gradient rejects the whole step.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 lr_scales=None):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr_scales = dict(lr_scales) if lr_scales else {}
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()
                  if p.requires_grad}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()
                  if p.requires_grad}

    def step(self, grads=None, lr=None):
        """Apply one update in place.  ``grads`` defaults to ``.grad``."""
        lr = self.lr if lr is None else lr
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()
                     if p.requires_grad}
        for k, g in grads.items():
            if g is not None and not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient for parameter {k!r}; step rejected")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for k in self.m:
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(self.params[k].data)
            g = np.asarray(g, dtype=np.float64).reshape(self.params[k].data.shape)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            mhat = self.m[k] / (1 - b1 ** t)
            vhat = self.v[k] / (1 - b2 ** t)
            lr_k = lr * self.lr_scales.get(k, 1.0)
            self.params[k].data = (
                self.params[k].data - lr_k * mhat / (np.sqrt(vhat) + self.eps))


def cosine_lr(epoch, total_epochs, lr0, lr_min):
    """Cosine annealing from lr0 (epoch 0) down to lr_min (final epoch)."""
    if lr_min > lr0:
        raise ValueError("cosine_lr: lr_min > lr0")
    if not (0 <= epoch <= total_epochs):
        raise ValueError("cosine_lr: epoch out of range")
    if total_epochs == 0:
        return lr0
    frac = epoch / total_epochs
    return lr_min + 0.5 * (lr0 - lr_min) * (1 + math.cos(math.pi * frac))
