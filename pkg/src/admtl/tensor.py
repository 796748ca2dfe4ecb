"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`GradientTape` is active and at
least one input requires a gradient; outside a tape every op is plain numpy
arithmetic. A tape records nodes in execution order, which is a valid
topological order, so the backward sweep simply walks the record in reverse.

    >>> w = Parameter(np.ones((2, 2)), name="w")
    >>> with GradientTape() as tape:
    ...     loss = sum_all(matmul(w, w))
    >>> grads = tape.backward(loss, [w])
"""
import threading

import numpy as np

_state = threading.local()

CE_LOG_FLOOR = 1e-12
MASK_LOGIT = -1e9


class DimensionError(ValueError):
    """Raised when operand extents do not agree."""


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A named leaf tensor; only trainable parameters collect gradients.

    ``frozen_rows`` (boolean vector over axis 0) marks rows whose gradient is
    always zeroed, e.g. the PAD and ENTITY rows of an embedding table.
    """

    __slots__ = ("name", "trainable", "frozen_rows")

    def __init__(self, data, name, trainable=True, frozen_rows=None):
        super().__init__(np.array(data, dtype=np.float64, order="C"), requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.frozen_rows = None if frozen_rows is None else np.asarray(frozen_rows, dtype=bool)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def _tapes():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def current_tape():
    stack = _tapes()
    return stack[-1] if stack else None


class GradientTape:
    """Ordered record of differentiable ops executed inside its context."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss, params=None):
        """Gradients of scalar ``loss`` w.r.t. trainable leaves.

        Returns a dict keyed by Parameter. With ``params`` given, every listed
        trainable parameter gets an entry (zeros when off the loss path);
        otherwise only parameters reached from the loss appear.
        """
        loss = as_tensor(loss)
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        if loss.requires_grad and loss._backward is None:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if parent._backward is None:
                    leaves[key] = parent
        out = {}
        for key, leaf in leaves.items():
            if isinstance(leaf, Parameter):
                g = grads[key]
                if leaf.frozen_rows is not None:
                    g = g.copy()
                    g[leaf.frozen_rows] = 0.0
                out[leaf] = g
        if params is not None:
            result = {}
            for p in params:
                if p.trainable:
                    result[p] = out.get(p, np.zeros_like(p.data))
            return result
        return out


class no_grad:
    """Suspend recording: ops inside run as plain numpy even under a tape."""

    def __enter__(self):
        _tapes().append(None)
        return self

    def __exit__(self, *exc):
        _tapes().pop()
        return False


def backward(loss, params, tape=None):
    """Module-level form of :meth:`GradientTape.backward`."""
    tape = tape or current_tape()
    if tape is None:
        loss = as_tensor(loss)
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        return {p: np.zeros_like(p.data) for p in params if p.trainable}
    return tape.backward(loss, params)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x):
    x = as_tensor(x)
    on = x.data > 0
    return _node(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def gradient_reversal(x, lam=1.0):
    """Identity forward; multiplies the incoming gradient by ``-lam``."""
    x = as_tensor(x)
    return _node(x.data.copy(), (x,), lambda g: (-lam * g,))


# -- reductions and shape ---------------------------------------------------

def sum_all(x):
    x = as_tensor(x)
    return _node(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def sum_axis(x, axis, keepdims=False):
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), bw)


def reshape(x, shape):
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat along axis {axis}: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw)


def take_rows(table, indices):
    """Gather rows of a 2-D ``table`` by an integer index array of any shape."""
    table = as_tensor(table)
    indices = np.asarray(indices, dtype=np.intp)

    def bw(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _node(table.data[indices], (table,), bw)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    """Matrix product. ``a`` may carry leading batch axes; ``b`` is 2-D or
    has the same batch axes as ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ in {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _node(a.data @ b.data, (a, b), bw)


# -- probability ------------------------------------------------------------

def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _node(y, (x,), bw)


def masked_softmax(x, mask, axis=-1):
    """Softmax with positions where ``mask == 0`` pushed to zero weight.

    The mask enters additively as a large negative logit so gradients stay
    finite; masked positions get weight exactly 0 after the max shift.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all(np.any(mask > 0, axis=axis)):
        raise ValueError("masked_softmax: every position along the axis is masked")
    return softmax(add(x, (1.0 - mask) * MASK_LOGIT), axis=axis)


def cross_entropy(pred, gold):
    """Summed cross-entropy ``-sum(gold * log(pred))`` with a log floor.

    ``gold`` must be one-hot per row.
    """
    pred = as_tensor(pred)
    gold = np.asarray(gold.data if isinstance(gold, Tensor) else gold, dtype=np.float64)
    if gold.shape != pred.shape:
        raise DimensionError(f"cross_entropy: prediction {pred.shape} vs gold {gold.shape}")
    if not (np.all((gold == 0) | (gold == 1)) and np.all(gold.sum(axis=-1) == 1)):
        raise ValueError("cross_entropy: gold rows must be one-hot")
    clamped = np.maximum(pred.data, CE_LOG_FLOOR)
    loss = -np.sum(gold * np.log(clamped))

    def bw(g):
        return (np.where(pred.data > CE_LOG_FLOOR, -g * gold / clamped, 0.0),)

    return _node(loss, (pred,), bw)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


# -- verification -----------------------------------------------------------

def finite_difference_check(f, param, eps=1e-5, indices=None, reference=None):
    """Max relative error between tape gradients and central differences.

    ``f`` maps nothing to a scalar and must read ``param`` by reference. The
    relative error per element is ``|a - n| / (|a| + |n| + 1e-10)``.
    ``indices`` optionally restricts the check to some flat positions.

    ``reference`` is the scalar function differenced numerically (default
    ``f``). Graphs containing a gradient reversal layer need it: their tape
    gradient is the derivative of a different, sign-flipped objective.
    """
    if not eps > 0:
        raise ValueError(f"finite-difference step must be positive, got {eps}")
    reference = f if reference is None else reference
    first = float(as_tensor(reference()).data)
    second = float(as_tensor(reference()).data)
    if first != second:
        raise ValueError("finite_difference_check: f is not deterministic (two evaluations differ)")
    with GradientTape() as tape:
        loss = f()
    analytic = tape.backward(loss, [param])[param].reshape(-1)
    flat = param.data.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    if param.frozen_rows is not None:
        row_size = flat.size // param.shape[0]
        positions = [i for i in positions if not param.frozen_rows[i // row_size]]
    worst = 0.0
    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        up = float(as_tensor(reference()).data)
        flat[i] = orig - eps
        down = float(as_tensor(reference()).data)
        flat[i] = orig
        numeric = (up - down) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / (abs(analytic[i]) + abs(numeric) + 1e-10)
        worst = max(worst, err)
    return worst
