#!/usr/bin/env python
# -*- coding: utf-8 -*-
# UTF-8? ✓

"""
Tensors with reverse-mode differentiation, and the AdamW optimizer

Every parameter and activation is a `Tensor` wrapping a numpy array.
Operations are `Function` subclasses: `forward` works on raw arrays,
`backward` maps the output gradient onto one gradient per input.
`backward(loss)` walks the recorded graph in reverse topological order
and accumulates gradients on the leaves.

Tensors are float32 unless created with `dtype=numpy.float64`; a float64
graph stays float64 end to end (gradient checks rely on this). Reductions
accumulate in float64 either way.
"""

# = Imports =

import math
import logging
import threading
import contextlib
from dataclasses import dataclass, field

import numpy as np

from lanjut.errors import LanjutError


# = Configuration =

DTYPE = np.float32
ACCUM = np.float64

GELU_C = math.sqrt(2.0 / math.pi)


# = Exceptions =

class NumericsError(LanjutError):
    pass


class ShapeError(NumericsError):
    pass


class AxisError(NumericsError):
    pass


class LabelRangeError(NumericsError):
    pass


class MissingGradError(NumericsError):
    pass


# = Gradient Recording =

# Thread-local, so evaluation workers can share a frozen model while
# a training loop in another thread records its graph.

_recording = threading.local()


def grad_enabled():
    return getattr(_recording, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """
    Do not record operations in the current thread
    """
    previous = grad_enabled()
    _recording.enabled = False
    try:
        yield
    finally:
        _recording.enabled = previous


# = Tensor Class =

class Tensor(object):
    """
    Dense n-dimensional array that takes part in a differentiation graph.

    `creator` is the `Function` that produced the tensor, `None` for leaves.
    Only leaves with `requires_grad` receive a `grad` buffer.
    """

    def __init__(self, data, requires_grad=False, creator=None, dtype=DTYPE, name=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.creator = creator
        self.grad = None
        self.name = name

    # == Properties ==

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype, name=self.name)

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s, requires_grad=%s%s)" % (
            self.shape, self.dtype, self.requires_grad,
            ", name=%r" % self.name if self.name else "")

    # == Operators ==

    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return Scale.apply(self, factor=float(other))
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise NumericsError("Tensor division is only defined for scalars")
        return Scale.apply(self, factor=1.0 / float(other))

    def __neg__(self):
        return Scale.apply(self, factor=-1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        return Transpose.apply(self, axes=tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)


# = Function Base Class =

class Function(object):
    """
    One differentiable operation. Subclasses implement `forward` on arrays
    and `backward`, which returns one gradient (or `None`) per input.
    """

    parents = ()
    saved = ()

    def save(self, *values):
        self.saved = values

    @classmethod
    def apply(cls, *inputs, **kwargs):
        like = next(x for x in inputs if isinstance(x, Tensor))
        parents = tuple(x if isinstance(x, Tensor) else Tensor(x, dtype=like.dtype)
                        for x in inputs)

        fn = cls()
        out = fn.forward(*[p.data for p in parents], **kwargs)

        requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
        if requires_grad:
            fn.parents = parents
        else:
            fn.saved = ()

        return Tensor(out, requires_grad=requires_grad,
                      creator=fn if requires_grad else None,
                      dtype=np.asarray(out).dtype)

    def forward(self, *args, **kwargs):
        raise NotImplementedError()

    def backward(self, grad):
        raise NotImplementedError()


# == Utility Functions ==

def _reduce_sum(x, axis=None, keepdims=False):
    """Sum with float64 accumulation, result in the dtype of `x`"""
    return np.asarray(np.sum(x, axis=axis, keepdims=keepdims, dtype=ACCUM), dtype=x.dtype)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting"""
    while grad.ndim > len(shape):
        grad = _reduce_sum(grad, axis=0)

    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = _reduce_sum(grad, axis=axis, keepdims=True)

    return grad


# = Elementwise Operations =

class Add(Function):
    def forward(self, x, y):
        self.save(x.shape, y.shape)
        return x + y

    def backward(self, grad):
        shape_x, shape_y = self.saved
        return _unbroadcast(grad, shape_x), _unbroadcast(grad, shape_y)


class Sub(Function):
    def forward(self, x, y):
        self.save(x.shape, y.shape)
        return x - y

    def backward(self, grad):
        shape_x, shape_y = self.saved
        return _unbroadcast(grad, shape_x), _unbroadcast(-grad, shape_y)


class Mul(Function):
    def forward(self, x, y):
        self.save(x, y)
        return x * y

    def backward(self, grad):
        x, y = self.saved
        return _unbroadcast(grad * y, x.shape), _unbroadcast(grad * x, y.shape)


class Scale(Function):
    def forward(self, x, factor):
        self.factor = factor
        return (x * factor).astype(x.dtype, copy=False)

    def backward(self, grad):
        return ((grad * self.factor).astype(grad.dtype, copy=False),)


class Gelu(Function):
    """GELU, tanh approximation"""

    def forward(self, x):
        wide = x.astype(ACCUM)
        t = np.tanh(GELU_C * (wide + 0.044715 * wide ** 3))
        self.save(wide, t)
        return (0.5 * wide * (1.0 + t)).astype(x.dtype)

    def backward(self, grad):
        wide, t = self.saved
        slope = (0.5 * (1.0 + t) +
                 0.5 * wide * (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * wide * wide))
        return ((grad * slope).astype(grad.dtype),)


# = Shape Operations =

class Reshape(Function):
    def forward(self, x, shape):
        self.save(x.shape)
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.saved[0]),)


class Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes or tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, x, index):
        self.save(x.shape, index)
        return x[index]

    def backward(self, grad):
        shape, index = self.saved
        out = np.zeros(shape, dtype=grad.dtype)
        np.add.at(out, index, grad)
        return (out,)


class Embedding(Function):
    """Row gather; the backward pass scatter-adds into the table"""

    def forward(self, weight, ids):
        self.save(weight.shape, ids)
        return weight[ids]

    def backward(self, grad):
        shape, ids = self.saved
        out = np.zeros(shape, dtype=grad.dtype)
        np.add.at(out, ids, grad)
        return (out,)


# = Reductions =

class Sum(Function):
    def forward(self, x, axis, keepdims):
        self.save(x.shape, axis, keepdims)
        return _reduce_sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape, axis, keepdims = self.saved
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, shape).copy(),)


class MatMul(Function):
    def forward(self, a, b):
        self.save(a, b)
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)


class Softmax(Function):
    def forward(self, x, axis):
        wide = x.astype(ACCUM)
        e = np.exp(wide - np.max(wide, axis=axis, keepdims=True))
        y = e / np.sum(e, axis=axis, keepdims=True)
        self.axis = axis
        self.save(y)
        return y.astype(x.dtype)

    def backward(self, grad):
        y, = self.saved
        gy = grad.astype(ACCUM) * y
        return ((gy - y * np.sum(gy, axis=self.axis, keepdims=True)).astype(grad.dtype),)


class LayerNorm(Function):
    def forward(self, x, gain, bias, epsilon):
        wide = x.astype(ACCUM)
        centered = wide - wide.mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + epsilon)
        normalized = centered * inv
        self.save(normalized, inv, gain.astype(ACCUM))
        return (normalized * gain + bias).astype(x.dtype)

    def backward(self, grad):
        normalized, inv, gain = self.saved
        wide = grad.astype(ACCUM)
        lead = tuple(range(grad.ndim - 1))

        grad_norm = wide * gain
        grad_x = inv * (grad_norm
                        - grad_norm.mean(axis=-1, keepdims=True)
                        - normalized * (grad_norm * normalized).mean(axis=-1, keepdims=True))

        return (grad_x.astype(grad.dtype),
                (wide * normalized).sum(axis=lead).astype(grad.dtype),
                wide.sum(axis=lead).astype(grad.dtype))


class CrossEntropy(Function):
    """Mean negative log-softmax over rows whose target is not ignored"""

    def forward(self, logits, targets, ignore_index):
        wide = logits.astype(ACCUM)
        shifted = wide - np.max(wide, axis=1, keepdims=True)
        log_probs = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))

        live = np.nonzero(targets != ignore_index)[0]
        self.save(log_probs, targets, live)

        if len(live) == 0:
            return np.zeros((), dtype=logits.dtype)

        picked = log_probs[live, targets[live]]
        return np.asarray(-picked.sum() / len(live), dtype=logits.dtype)

    def backward(self, grad):
        log_probs, targets, live = self.saved
        out = np.zeros(log_probs.shape, dtype=ACCUM)

        if len(live):
            out[live] = np.exp(log_probs[live])
            out[live, targets[live]] -= 1.0
            out *= float(grad) / len(live)

        return (out.astype(grad.dtype),)


# = Operations =

# Public entry points. These validate their arguments and
# dispatch to the `Function` classes above.

def as_tensor(x, dtype=DTYPE):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def matmul(a, b):
    """
    Matrix product of rank-2 or rank-3 tensors. A rank-3 operand
    broadcasts over the leading extent of the other one.
    """
    a, b = as_tensor(a), as_tensor(b)

    batch_ok = (a.ndim < 3 or b.ndim < 3 or a.shape[0] == b.shape[0] or
                1 in (a.shape[0], b.shape[0]))

    if not (2 <= a.ndim <= 3 and 2 <= b.ndim <= 3) or a.shape[-1] != b.shape[-2] or not batch_ok:
        raise ShapeError("matmul: cannot multiply %s by %s" % (a.shape, b.shape))

    return MatMul.apply(a, b)


def softmax(x, axis=-1):
    """
    Softmax along `axis` with max subtraction. Slices made only of
    `-inf` are not defined.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise AxisError("softmax: axis %d invalid for rank %d" % (axis, x.ndim))
    return Softmax.apply(x, axis=axis % x.ndim)


def layer_norm(x, gain, bias, epsilon=1e-12):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    expected = (x.shape[-1],)

    if gain.shape != expected or bias.shape != expected:
        raise ShapeError("layer_norm: gain %s and bias %s must both be %s" %
                         (gain.shape, bias.shape, expected))

    return LayerNorm.apply(x, gain, bias, epsilon=epsilon)


def gelu(x):
    return Gelu.apply(as_tensor(x))


def cross_entropy(logits, targets, ignore_index=-100):
    """
    Mean cross-entropy of `logits` (rows × classes) against integer
    `targets`. Rows whose target equals `ignore_index` do not count;
    if every row is ignored the loss is 0 with zero gradient.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)

    if logits.ndim != 2:
        raise ShapeError("cross_entropy: logits must be rank 2, got %s" % (logits.shape,))

    if len(targets) != logits.shape[0]:
        raise ShapeError("cross_entropy: %d targets for logits %s" % (len(targets), logits.shape))

    bad = (targets != ignore_index) & ((targets < 0) | (targets >= logits.shape[1]))
    if bad.any():
        raise LabelRangeError("cross_entropy: label %d outside [0, %d)" %
                              (targets[bad][0], logits.shape[1]))

    return CrossEntropy.apply(logits, targets=targets, ignore_index=ignore_index)


def embedding(weight, ids):
    return Embedding.apply(weight, ids=np.asarray(ids, dtype=np.int64))


def dropout(x, probability, rng, train_mode=True):
    """
    Inverted dropout. Identity outside training or for probability 0
    """
    if not train_mode or probability <= 0:
        return x
    keep = (rng.random(x.shape) >= probability).astype(x.dtype) / (1.0 - probability)
    return Mul.apply(x, keep)


# == Backward ==

def _topological_order(root):
    """
    Iterative depth-first post-order: every node comes after its inputs
    """
    order = []
    visited = set()
    stack = [(root, False)]

    while stack:
        node, expanded = stack.pop()

        if expanded:
            order.append(node)
            continue

        if id(node) in visited:
            continue

        visited.add(id(node))
        stack.append((node, True))

        if node.creator is not None:
            for parent in node.creator.parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

    return order


def backward(loss):
    """
    Populate `grad` on every leaf reachable from the scalar `loss`.
    Gradients accumulate across calls until the caller resets them.
    """
    if loss.size != 1:
        raise ShapeError("backward: loss must be scalar, got shape %s" % (loss.shape,))

    if not loss.requires_grad:
        raise NumericsError("backward: loss is not connected to any parameter")

    grads = {id(loss): np.ones_like(loss.data)}

    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue

        if node.creator is None:
            grad = grad.astype(node.dtype, copy=True)
            node.grad = grad if node.grad is None else node.grad + grad
            continue

        for parent, parent_grad in zip(node.creator.parents, node.creator.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue

            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


# = Optimizer =

@dataclass
class OptimizerState(object):
    """
    AdamW state. Moment buffers are keyed by parameter name.
    """
    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def create(cls, params, learning_rate=2e-5, weight_decay=0.01, **kwargs):
        state = cls(learning_rate=learning_rate, weight_decay=weight_decay, **kwargs)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        return state


def zero_grad(params):
    for p in params.values():
        p.zero_grad()


def adamw_step(params, state):
    """
    One Adam update with bias correction followed by decoupled weight
    decay `p ← p − lr·wd·p`. Gradients are left for the caller to clear.
    """
    log = logging.getLogger("adamw_step")

    for name, p in params.items():
        if p.grad is None:
            raise MissingGradError("adamw_step: parameter %r has no gradient" % name)

    state.step_count += 1
    correction1 = 1.0 - state.beta1 ** state.step_count
    correction2 = 1.0 - state.beta2 ** state.step_count
    decay = state.learning_rate * state.weight_decay

    for name, p in params.items():
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)

        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise ShapeError("adamw_step: moment %s does not match parameter %r %s" %
                             (m.shape, name, p.shape))

        g = p.grad
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g

        update = (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        data = p.data - state.learning_rate * update
        p.data = (data - decay * data).astype(p.dtype, copy=False)

        state.first_moment[name] = m.astype(p.dtype, copy=False)
        state.second_moment[name] = v.astype(p.dtype, copy=False)

    log.debug("step %d over %d parameters", state.step_count, len(params))
