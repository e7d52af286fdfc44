# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Reverse-mode automatic differentiation over dense float64 tensors.

Every primitive computes its value with numpy and, if any input takes part in
differentiation, appends an entry to a `Tape`.  The first recorded primitive
creates a tape; every later primitive that consumes one of its outputs
records onto the same tape.  When a primitive joins outputs of different
tapes, they are merged into one, in execution order.  `backward` replays the
tape in reverse.

A tape and its tensors belong to one thread.  Tensors with no tape are
read-only values and can be shared.

"""

import contextlib
import heapq
import itertools
import threading

import numpy as np

from graformer.exceptions import GraformerException, ShapeError


def make_rng(seed):
    """A seeded counter-based random generator (Philox)."""
    return np.random.Generator(np.random.Philox(seed))


_recording = threading.local()

# Entries from every tape share one ordering, so merged tapes stay in
# execution order.
_entry_order = itertools.count()


def is_recording():
    """Are primitives on this thread recording onto tapes?"""
    return getattr(_recording, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """A context manager to compute values without recording any tape."""
    old = is_recording()
    _recording.enabled = False
    try:
        yield
    finally:
        _recording.enabled = old


class Tape:
    """The ordered record of primitives executed for one computation."""

    def __init__(self):
        self.entries = []

    def __len__(self):
        return len(self.entries)

    def __repr__(self):
        return f"<Tape entries={len(self.entries)}>"

    def record(self, name, output, inputs, backward_fn):
        """Add an entry.

        `backward_fn` takes the gradient of `output` and returns one gradient
        (or None) per input.

        """
        self.entries.append((next(_entry_order), name, output, inputs, backward_fn))

    def absorb(self, other):
        """Move every entry of `other` onto this tape, keeping execution order."""
        for entry in other.entries:
            entry[2].tape = self
        self.entries = list(heapq.merge(self.entries, other.entries, key=lambda e: e[0]))
        other.entries = []


class Tensor:
    """A dense array of float64 values that can carry a gradient."""

    # Make numpy hand `ndarray @ Tensor` and friends to our reflected methods.
    __array_ufunc__ = None

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.tape = None

    def __repr__(self):
        extra = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.shape}{extra} requires_grad={self.requires_grad}>"

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def is_leaf(self):
        """Is this tensor an input to the computation rather than a result?"""
        return self.tape is None

    def item(self):
        """The value of a one-element tensor as a Python float."""
        if self.size != 1:
            raise ShapeError(f"item: tensor has shape {self.shape}, not one element")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return scale(self, other)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x):
    """`x` as a Tensor, wrapping arrays and numbers as constants."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(name, values, inputs, backward_fn):
    """Make the output tensor of a primitive, recording it if needed."""
    out = Tensor(values)
    if not is_recording():
        return out
    tapes = list({id(t.tape): t.tape for t in inputs if t.tape is not None}.values())
    if tapes:
        # Joining branches: the longest tape takes in the others.
        tapes.sort(key=len, reverse=True)
        tape = tapes[0]
        for other in tapes[1:]:
            tape.absorb(other)
    elif any(t.requires_grad for t in inputs):
        tape = Tape()
    else:
        return out
    out.requires_grad = True
    out.tape = tape
    tape.record(name, out, inputs, backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} don't broadcast") from None


def matmul(a, b):
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} don't align")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} don't broadcast") from None
    av, bv = a.values, b.values

    def backward_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _record("matmul", av @ bv, (a, b), backward_fn)


def add(a, b):
    """Elementwise sum with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def backward_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record("add", a.values + b.values, (a, b), backward_fn)


def sub(a, b):
    """Elementwise difference with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward_fn(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _record("sub", a.values - b.values, (a, b), backward_fn)


def scale(a, c):
    """Multiply by the constant `c`."""
    a = as_tensor(a)
    c = float(c)

    def backward_fn(g):
        return (c * g,)

    return _record("scale", c * a.values, (a,), backward_fn)


def transpose_last_two(a):
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose_last_two: shape {a.shape} has fewer than two axes")

    def backward_fn(g):
        return (np.swapaxes(g, -1, -2),)

    return _record("transpose_last_two", np.swapaxes(a.values, -1, -2), (a,), backward_fn)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        values = a.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: can't reshape {a.shape} to {shape}") from None
    old = a.shape

    def backward_fn(g):
        return (g.reshape(old),)

    return _record("reshape", values, (a,), backward_fn)


def concat(tensors):
    """Join tensors along the last axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: nothing to join")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} don't match")
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def backward_fn(g):
        return tuple(g[..., lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _record("concat", np.concatenate([t.values for t in tensors], axis=-1), tuple(tensors), backward_fn)


def slice_last(a, start, stop):
    """Columns start:stop of the last axis."""
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[-1]:
        raise ShapeError(f"slice_last: [{start}:{stop}] is outside shape {a.shape}")
    shape = a.shape

    def backward_fn(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _record("slice_last", a.values[..., start:stop], (a,), backward_fn)


def split(a, sections):
    """Cut the last axis into `sections` equal pieces."""
    a = as_tensor(a)
    width, rem = divmod(a.shape[-1], max(sections, 1))
    if sections < 1 or rem:
        raise ShapeError(f"split: last axis of {a.shape} doesn't divide into {sections}")
    return [slice_last(a, i * width, (i + 1) * width) for i in range(sections)]


def relu(a):
    a = as_tensor(a)
    mask = a.values > 0

    def backward_fn(g):
        return (g * mask,)

    return _record("relu", np.where(mask, a.values, 0.0), (a,), backward_fn)


def sigmoid(a):
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.values))

    def backward_fn(g):
        return (g * y * (1.0 - y),)

    return _record("sigmoid", y, (a,), backward_fn)


def normalize_rows(a):
    """Divide each row (last axis) by its sum.  Entries must be positive."""
    a = as_tensor(a)
    s = a.values.sum(axis=-1, keepdims=True)
    y = a.values / s

    def backward_fn(g):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) / s,)

    return _record("normalize_rows", y, (a,), backward_fn)


def softmax_last_axis(a):
    a = as_tensor(a)
    e = np.exp(a.values - a.values.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax_last_axis", y, (a,), backward_fn)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize the last axis to mean 0 and variance 1, then apply gain and bias."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: input {a.shape} needs gain and bias of shape ({d},), "
            f"got {gain.shape} and {bias.shape}"
        )
    centered = a.values - a.values.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gv = gain.values
    lead = tuple(range(a.ndim - 1))

    def backward_fn(g):
        dxhat = g * gv
        da = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return da, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record("layer_norm", xhat * gv + bias.values, (a, gain, bias), backward_fn)


def dropout(a, rate, rng, training):
    """Zero each element with probability `rate`, scaling survivors by 1/(1-rate).

    In eval mode, or with rate 0, `a` is returned unchanged.

    """
    a = as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise GraformerException(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backward_fn(g):
        return (g * mask,)

    return _record("dropout", a.values * mask, (a,), backward_fn)


def mean_all(a):
    a = as_tensor(a)
    shape, n = a.shape, a.size

    def backward_fn(g):
        return (np.full(shape, float(g) / n),)

    return _record("mean_all", np.array(a.values.mean()), (a,), backward_fn)


def sum_all(a):
    a = as_tensor(a)
    shape = a.shape

    def backward_fn(g):
        return (np.full(shape, float(g)),)

    return _record("sum_all", np.array(a.values.sum()), (a,), backward_fn)


def square(a):
    a = as_tensor(a)
    av = a.values

    def backward_fn(g):
        return (2.0 * av * g,)

    return _record("square", av * av, (a,), backward_fn)


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64).reshape(t.shape)
    else:
        t.grad = t.grad + g


def backward(loss, seed=None):
    """Accumulate d(loss)/d(leaf) into `.grad` of every leaf that requires it.

    `loss` must be a one-element tensor unless `seed`, the gradient to start
    from, is given with the shape of `loss`.  Calling again without clearing
    the leaves' grads adds to them.

    """
    if seed is None:
        if loss.size != 1:
            raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
        seed = np.ones(loss.shape)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != loss.shape:
            raise ShapeError(f"backward: seed shape {seed.shape} doesn't match {loss.shape}")

    if loss.tape is None:
        if not loss.requires_grad:
            raise GraformerException("backward: loss wasn't computed from anything that needs a gradient")
        _accumulate(loss, seed)
        return

    grads = {id(loss): seed}
    for _, _, output, inputs, backward_fn in reversed(loss.tape.entries):
        g = grads.pop(id(output), None)
        if g is None:
            continue
        for inp, ig in zip(inputs, backward_fn(g)):
            if ig is None or not inp.requires_grad:
                continue
            if inp.tape is None:
                _accumulate(inp, ig)
            elif id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + ig
            else:
                grads[id(inp)] = ig


class GradCheckReport:
    """The outcome of `grad_check`."""

    def __init__(self, max_rel_error, tol, worst_index, analytic, numeric):
        self.max_rel_error = max_rel_error
        self.tol = tol
        self.passed = max_rel_error < tol
        self.worst_index = worst_index
        self.analytic = analytic
        self.numeric = numeric

    def __repr__(self):
        return (
            f"<GradCheckReport max_rel_error={self.max_rel_error:.3g} "
            f"tol={self.tol:g} passed={self.passed}>"
        )

    def as_dict(self):
        return {"max_rel_error": self.max_rel_error, "pass": self.passed}


def grad_check(f, x, tol, step=1e-5, seed=0):
    """Compare the analytic gradient of `f` at `x` with central differences.

    `f` maps the Tensor `x` to a Tensor.  A non-scalar output is reduced to
    sum(f(x) * r) for a fixed random `r`.  The error per element is
    |a - n| / max(1, |a| + |n|).

    `f` must be deterministic: turn dropout off before checking.

    """
    if not x.requires_grad:
        raise GraformerException("grad_check: x must require a gradient")
    saved_grad = x.grad
    x.grad = None
    try:
        out = f(x)
        r = make_rng(seed).standard_normal(out.shape)
        backward(out, seed=r)
        analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
    finally:
        x.grad = saved_grad

    numeric = np.zeros(x.shape)
    flat = x.values.flat
    with no_grad():
        for i in range(x.size):
            old = flat[i]
            flat[i] = old + step
            plus = float((f(x).values * r).sum())
            flat[i] = old - step
            minus = float((f(x).values * r).sum())
            flat[i] = old
            numeric.flat[i] = (plus - minus) / (2.0 * step)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic) + np.abs(numeric))
    worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
    max_err = float(err.max()) if err.size else 0.0
    return GradCheckReport(max_err, tol, worst, analytic, numeric)
