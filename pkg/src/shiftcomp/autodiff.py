"""Dense 2-D float64 tensors with taped reverse-mode differentiation.

Graphs are define-by-run: every operation records its output as a node
holding references to its parents and a closure that pushes gradients
back to them.  ``Tensor.backward()`` on a 1x1 loss visits the reachable
nodes in exact reverse recording order, so every visit happens after all
of the node's consumers.

Numerical policy: sigmoid outputs are clamped to [1e-6, 1 - 1e-6] and
log inputs to >= 1e-12, which keeps downstream probability ratios and
log-likelihoods finite.  Any op that still produces NaN/Inf raises
NonFiniteError rather than letting the poison spread.
"""

import itertools

import numpy as np
from scipy.special import expit

from .errors import GraphError, NonFiniteError, ShapeError

SIGMOID_CLAMP = 1e-6
LOG_CLAMP = 1e-12

_node_ids = itertools.count()


class Tensor:
    """A 2-D float64 array that participates in a differentiation graph.

    Scalars are represented as 1x1 tensors; 1-D input is promoted to a
    single row.  ``requires_grad`` marks trainable leaves: after
    ``backward()`` they hold d(loss)/d(leaf), while non-trainable leaves
    in the graph hold exact zeros.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_op", "_node_id", "_backward_done")

    def __init__(self, values, requires_grad=False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D; got array of ndim {arr.ndim}")
        if arr.size == 0:
            raise ShapeError(f"tensors must be non-empty; got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor created with non-finite values")
        self.values = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._op = "leaf"
        self._node_id = next(_node_ids)
        self._backward_done = False

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        if self.values.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.values.shape}")
        return float(self.values[0, 0])

    def detach(self):
        """A new leaf with the same values, cut off from the graph."""
        return Tensor(self.values.copy())

    @property
    def is_leaf(self):
        return not self._parents

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _make(values, parents, backward_fn, op):
        if not np.isfinite(values).all():
            raise NonFiniteError(f"op '{op}' produced non-finite values")
        out = Tensor.__new__(Tensor)
        out.values = values
        out.grad = None
        out.requires_grad = False
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
        out._node_id = next(_node_ids)
        out._backward_done = False
        return out

    def _accum(self, delta):
        if self.is_leaf and not self.requires_grad:
            return
        self.grad += delta

    # -- linear algebra ----------------------------------------------------

    def __matmul__(self, other):
        a, b = self, _ensure(other)
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
        out_values = a.values @ b.values

        def backward(out):
            a._accum(out.grad @ b.values.T)
            b._accum(a.values.T @ out.grad)

        return Tensor._make(out_values, (a, b), backward, "matmul")

    @property
    def T(self):
        a = self

        def backward(out):
            a._accum(out.grad.T)

        return Tensor._make(a.values.T.copy(), (a,), backward, "transpose")

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        a = self
        if isinstance(other, (int, float)):
            c = float(other)

            def backward(out):
                a._accum(out.grad)

            return Tensor._make(a.values + c, (a,), backward, "add_scalar")
        b = _ensure(other)
        if a.shape == b.shape:

            def backward(out):
                a._accum(out.grad)
                b._accum(out.grad)

            return Tensor._make(a.values + b.values, (a, b), backward, "add")
        # row-vector bias broadcast, the only broadcast supported
        if b.shape == (1, a.shape[1]):

            def backward(out):
                a._accum(out.grad)
                b._accum(out.grad.sum(axis=0, keepdims=True))

            return Tensor._make(a.values + b.values, (a, b), backward, "add_bias")
        if a.shape == (1, b.shape[1]):
            return b + a
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")

    def __radd__(self, other):
        return self + other

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-float(other))
        return self + (-_ensure(other))

    def __rsub__(self, other):
        return (-self) + float(other)

    def __mul__(self, other):
        a = self
        if isinstance(other, (int, float)):
            c = float(other)

            def backward(out):
                a._accum(out.grad * c)

            return Tensor._make(a.values * c, (a,), backward, "scale")
        b = _ensure(other)
        if a.shape != b.shape:
            raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")

        def backward(out):
            a._accum(out.grad * b.values)
            b._accum(out.grad * a.values)

        return Tensor._make(a.values * b.values, (a, b), backward, "mul")

    def __rmul__(self, other):
        return self * other

    def __truediv__(self, other):
        a = self
        if isinstance(other, (int, float)):
            return a * (1.0 / float(other))
        b = _ensure(other)
        if a.shape != b.shape:
            raise ShapeError(f"div shapes differ: {a.shape} vs {b.shape}")
        out_values = a.values / b.values

        def backward(out):
            a._accum(out.grad / b.values)
            b._accum(-out.grad * out_values / b.values)

        return Tensor._make(out_values, (a, b), backward, "div")

    # -- elementwise nonlinearities ------------------------------------------

    def relu(self):
        a = self
        mask = a.values > 0.0

        def backward(out):
            a._accum(out.grad * mask)

        return Tensor._make(np.where(mask, a.values, 0.0), (a,), backward, "relu")

    def sigmoid(self):
        a = self
        s = np.clip(expit(a.values), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)

        def backward(out):
            a._accum(out.grad * s * (1.0 - s))

        return Tensor._make(s, (a,), backward, "sigmoid")

    def log(self):
        a = self
        clamped = np.maximum(a.values, LOG_CLAMP)
        live = a.values > LOG_CLAMP

        def backward(out):
            a._accum(np.where(live, out.grad / clamped, 0.0))

        return Tensor._make(np.log(clamped), (a,), backward, "log")

    def exp(self):
        a = self
        with np.errstate(over="ignore"):
            out_values = np.exp(a.values)

        def backward(out):
            a._accum(out.grad * out_values)

        return Tensor._make(out_values, (a,), backward, "exp")

    # -- reductions ----------------------------------------------------------

    def sum(self, axis="all"):
        a = self
        if axis == "all":
            out_values = np.array([[a.values.sum()]])

            def backward(out):
                a._accum(np.full_like(a.values, out.grad[0, 0]))

        elif axis == "rows":
            out_values = a.values.sum(axis=0, keepdims=True)

            def backward(out):
                a._accum(np.broadcast_to(out.grad, a.shape))

        elif axis == "cols":
            out_values = a.values.sum(axis=1, keepdims=True)

            def backward(out):
                a._accum(np.broadcast_to(out.grad, a.shape))

        else:
            raise ValueError(f"axis must be 'rows', 'cols' or 'all', got {axis!r}")
        return Tensor._make(out_values, (a,), backward, f"sum[{axis}]")

    def mean(self, axis="all"):
        counts = {"all": self.values.size, "rows": self.shape[0], "cols": self.shape[1]}
        if axis not in counts:
            raise ValueError(f"axis must be 'rows', 'cols' or 'all', got {axis!r}")
        return self.sum(axis) * (1.0 / counts[axis])

    def l2norm(self):
        """Euclidean norm of the flattened tensor, as a 1x1 tensor."""
        a = self
        norm = float(np.sqrt((a.values ** 2).sum()))

        def backward(out):
            if norm > 0.0:
                a._accum(out.grad[0, 0] * a.values / norm)

        return Tensor._make(np.array([[norm]]), (a,), backward, "l2norm")

    # -- reverse pass ----------------------------------------------------------

    def backward(self):
        """Populate gradients of every reachable node for this 1x1 loss."""
        if self.values.shape != (1, 1):
            raise GraphError(f"backward needs a scalar loss, got shape {self.values.shape}")
        if self._backward_done:
            raise GraphError("backward already ran for this graph; rebuild it first")
        self._backward_done = True

        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        # node ids increase in recording order, so sorted order is topological
        nodes.sort(key=lambda t: t._node_id)

        for node in nodes:
            node.grad = np.zeros_like(node.values)
        self.grad = np.ones((1, 1))
        for node in reversed(nodes):
            if node._backward_fn is not None:
                node._backward_fn(node)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"


def _ensure(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(values):
    """A non-trainable leaf tensor."""
    return Tensor(values)


def parameter(values):
    """A trainable leaf tensor."""
    return Tensor(values, requires_grad=True)


def matmul(a, b):
    return _ensure(a) @ _ensure(b)
