"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: each forward op appends a node to the Tape that produced its
inputs, so the recorded graph is already topologically ordered and a single
reverse sweep yields exact analytic gradients for every leaf. The op set is
deliberately small: elementwise arithmetic with numpy broadcasting, 2-d
matmul, a few pointwise maps, reductions, row gather/scatter, L2
normalization, and a gradient-reversal node for adversarial objectives.

Everything runs in double precision; the finite-difference checker in this
module relies on that. Tapes are cheap and rebuilt per forward pass. A Tape
must stay confined to the thread that builds it.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DivisionByZeroError,
    DomainError,
    NearZeroNormError,
    NumericalError,
    ShapeMismatchError,
)

# Vectors with Euclidean norm at or below this floor are rejected, never clamped.
NORM_FLOOR = 1e-12

# Test hook: when set, exp's backward rule uses the wrong sign. The
# finite-difference suite must detect this as a failing check; nothing else
# may ever set it.
WRONG_SIGN_EXP = False


def _as_array(value):
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A graph node holding a float64 numpy array.

    Create leaves through Tape.leaf / Tape.constant and everything else by
    applying ops to existing Tensors. Values are treated as immutable once
    wrapped; the engine never writes into them.
    """

    __slots__ = ("value", "requires_grad", "tape", "_id", "_parents", "_backward")

    def __init__(self, value, tape, requires_grad=False, parents=(), backward=None):
        self.value = value
        self.tape = tape
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward if self.requires_grad else None
        tape._register(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return self.transpose()

    def item(self):
        if self.value.size != 1:
            raise ShapeMismatchError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.value.reshape(()))

    def _lift(self, other):
        if isinstance(other, Tensor):
            if other.tape is not self.tape:
                raise ValueError("cannot combine tensors recorded on different tapes")
            return other
        return self.tape.constant(other)

    # -- elementwise arithmetic (numpy broadcasting rules) --------------------

    def __add__(self, other):
        other = self._lift(other)
        return _binary_op(self, other, np.add, lambda g, a, b, out: g, lambda g, a, b, out: g, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        return _binary_op(self, other, np.subtract, lambda g, a, b, out: g, lambda g, a, b, out: -g, "sub")

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        other = self._lift(other)
        return _binary_op(
            self, other, np.multiply, lambda g, a, b, out: g * b, lambda g, a, b, out: g * a, "mul"
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        if np.any(other.value == 0.0):
            raise DivisionByZeroError("division requires nonzero divisor entries")
        return _binary_op(
            self,
            other,
            np.divide,
            lambda g, a, b, out: g / b,
            lambda g, a, b, out: -g * a / (b * b),
            "div",
        )

    def __rtruediv__(self, other):
        return self._lift(other).__truediv__(self)

    def __neg__(self):
        return _unary_op(self, np.negative, lambda g, x, out: -g)

    def __matmul__(self, other):
        other = self._lift(other)
        return matmul(self, other)

    # -- pointwise maps --------------------------------------------------------

    def exp(self):
        return _unary_op(self, np.exp, lambda g, x, out: (-g * out) if WRONG_SIGN_EXP else g * out)

    def log(self):
        if np.any(self.value <= 0.0):
            raise DomainError("log requires strictly positive entries")
        return _unary_op(self, np.log, lambda g, x, out: g / x)

    def tanh(self):
        return _unary_op(self, np.tanh, lambda g, x, out: g * (1.0 - out * out))

    def abs(self):
        # Subgradient 0 at exactly zero (np.sign(0) == 0).
        return _unary_op(self, np.abs, lambda g, x, out: g * np.sign(x))

    def sqrt(self):
        if np.any(self.value <= 0.0):
            raise DomainError("sqrt requires strictly positive entries (gradient undefined at 0)")
        return _unary_op(self, np.sqrt, lambda g, x, out: g / (2.0 * out))

    def relu(self):
        return _unary_op(self, lambda x: np.maximum(x, 0.0), lambda g, x, out: g * (x > 0.0))

    # -- reductions and reshaping ----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        value = np.sum(self.value, axis=axis, keepdims=keepdims)
        in_shape = self.shape

        def backward(g):
            if axis is None:
                return (np.full(in_shape, g.reshape(())),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, in_shape).copy(),)

        return Tensor(_as_array(value), self.tape, parents=(self,), backward=backward)

    def mean(self, axis=None, keepdims=False):
        count = self.value.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def reshape(self, shape):
        value = self.value.reshape(shape)
        in_shape = self.shape
        return Tensor(value, self.tape, parents=(self,), backward=lambda g: (g.reshape(in_shape),))

    def transpose(self):
        if self.ndim != 2:
            raise ShapeMismatchError(f"transpose expects a 2-d tensor, got shape {self.shape}")
        return Tensor(self.value.T.copy(), self.tape, parents=(self,), backward=lambda g: (g.T,))


def _unary_op(x, fwd, bwd):
    out_value = _as_array(fwd(x.value))
    holder = {}

    def backward(g):
        return (bwd(g, x.value, holder["out"]),)

    t = Tensor(out_value, x.tape, parents=(x,), backward=backward)
    holder["out"] = out_value
    return t


def _binary_op(a, b, fwd, bwd_a, bwd_b, name):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatchError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from exc
    out_value = _as_array(fwd(a.value, b.value))
    holder = {}

    def backward(g):
        ga = _unbroadcast(_as_array(bwd_a(g, a.value, b.value, holder["out"])), a.shape) if a.requires_grad else None
        gb = _unbroadcast(_as_array(bwd_b(g, a.value, b.value, holder["out"])), b.shape) if b.requires_grad else None
        return (ga, gb)

    t = Tensor(out_value, a.tape, parents=(a, b), backward=backward)
    holder["out"] = out_value
    return t


def matmul(a, b):
    """2-d matrix product with exact transpose-rule backward."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if a.tape is not b.tape:
        raise ValueError("cannot combine tensors recorded on different tapes")
    value = a.value @ b.value

    def backward(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return (ga, gb)

    return Tensor(value, a.tape, parents=(a, b), backward=backward)


def gather_rows(x, indices):
    """Select rows of `x` by an integer index array; backward scatter-adds."""
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ShapeMismatchError("gather_rows expects a 1-d integer index array")
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeMismatchError(f"gather_rows index out of range for {n} rows")
    value = x.value[idx]
    in_shape = x.shape

    def backward(g):
        buf = np.zeros(in_shape)
        np.add.at(buf, idx, g)
        return (buf,)

    return Tensor(value, x.tape, parents=(x,), backward=backward)


def scatter_rows(x, indices, num_rows):
    """Sum rows of `x` into `num_rows` buckets given by `indices`."""
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ShapeMismatchError("scatter_rows expects a 1-d integer index array")
    if idx.shape[0] != x.shape[0]:
        raise ShapeMismatchError(f"scatter_rows needs one index per row: {idx.shape[0]} vs {x.shape[0]}")
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise ShapeMismatchError(f"scatter_rows index out of range for {num_rows} buckets")
    buf = np.zeros((num_rows,) + x.shape[1:])
    np.add.at(buf, idx, x.value)

    return Tensor(buf, x.tape, parents=(x,), backward=lambda g: (g[idx],))


def l2_normalize(x):
    """Normalize a vector (1-d) or each row (2-d) to unit Euclidean norm.

    Raises NearZeroNormError when any norm is at or below NORM_FLOOR; inputs
    are rejected rather than clamped so downstream cosines stay exact.
    """
    if x.ndim == 1:
        norm_sq = float(np.dot(x.value, x.value))
        if norm_sq <= NORM_FLOOR * NORM_FLOOR:
            raise NearZeroNormError(f"vector norm {np.sqrt(norm_sq):.3e} at or below floor {NORM_FLOOR:.0e}")
        return x / (x * x).sum().sqrt()
    if x.ndim == 2:
        norms = np.sqrt(np.sum(x.value * x.value, axis=1))
        bad = np.nonzero(norms <= NORM_FLOOR)[0]
        if bad.size:
            raise NearZeroNormError(
                f"row {int(bad[0])} has norm {norms[bad[0]]:.3e} at or below floor {NORM_FLOOR:.0e}"
            )
        return x / (x * x).sum(axis=1, keepdims=True).sqrt()
    raise ShapeMismatchError(f"l2_normalize expects a 1-d or 2-d tensor, got shape {x.shape}")


def dot(u, w):
    """Inner product of two 1-d tensors."""
    if u.ndim != 1 or w.ndim != 1 or u.shape != w.shape:
        raise ShapeMismatchError(f"dot expects matching 1-d tensors, got {u.shape} and {w.shape}")
    return (u * w).sum()


def cosine_sim(u, w):
    """Cosine similarity of two 1-d tensors, exact chain-rule backward."""
    return dot(l2_normalize(u), l2_normalize(w))


def grad_reverse(x, strength):
    """Identity forward; backward multiplies the incoming gradient by -strength."""
    strength = float(strength)
    if strength < 0.0:
        raise DomainError(f"gradient reversal strength must be >= 0, got {strength}")
    return Tensor(x.value, x.tape, parents=(x,), backward=lambda g: (-strength * g,))


class GradMap:
    """Gradients from one backward pass, keyed by tensor identity.

    Every requires-grad leaf of the tape gets an entry (zeros when the loss
    never touched it), plus any extra tensors requested via `wrt`.
    """

    def __init__(self):
        self._grads = {}

    def _set(self, tensor, grad):
        self._grads[id(tensor)] = (tensor, grad)

    def __getitem__(self, tensor):
        try:
            return self._grads[id(tensor)][1]
        except KeyError:
            raise KeyError("tensor has no entry in this GradMap") from None

    def __contains__(self, tensor):
        return id(tensor) in self._grads

    def __len__(self):
        return len(self._grads)

    def tensors(self):
        return [t for t, _ in self._grads.values()]

    def items(self):
        return [(t, g) for t, g in self._grads.values()]


class Tape:
    """Record of one forward computation, replayed backward for gradients."""

    def __init__(self):
        self.nodes = []
        self._released = False

    def _register(self, tensor):
        if self._released:
            raise ValueError("cannot record on a released tape")
        tensor._id = len(self.nodes)
        self.nodes.append(tensor)

    def release(self):
        """Sever the recorded graph so its buffers free immediately.

        Tensors hold the tape and the tape holds every tensor, so a dropped
        tape only frees during a full gc generation pass. Training loops
        build one large tape per step and outrun the collector; releasing
        at the end of each step keeps memory flat. The tape is unusable
        afterward: recording or backward on it raises.
        """
        for node in self.nodes:
            node._backward = None
            node._parents = ()
        self.nodes.clear()
        self._released = True

    def leaf(self, value, requires_grad=True):
        return Tensor(_as_array(value), self, requires_grad=requires_grad)

    def constant(self, value):
        return self.leaf(value, requires_grad=False)

    def backward(self, root, wrt=()):
        """Run the reverse sweep from a scalar `root`.

        Returns a GradMap covering every requires-grad leaf on the tape plus
        any tensors listed in `wrt` (useful for probing non-leaf gradients).
        Gradients accumulate additively across shared subexpressions.
        """
        if root.tape is not self:
            raise ValueError("backward root was recorded on a different tape")
        if self._released:
            raise ValueError("cannot run backward on a released tape")
        if root.value.size != 1:
            raise ShapeMismatchError(f"backward needs a scalar root, got shape {root.shape}")
        keep = {t._id for t in wrt}
        grads = {root._id: np.ones_like(root.value)}
        for node in reversed(self.nodes[: root._id + 1]):
            g = grads.get(node._id)
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(parent._id)
                grads[parent._id] = pg if acc is None else acc + pg
            # nodes run in reverse creation order, so this buffer is spent
            if node._parents and node._id not in keep:
                del grads[node._id]
        out = GradMap()
        for node in self.nodes:
            if not node._parents and node.requires_grad:
                out._set(node, grads.get(node._id, np.zeros_like(node.value)))
        for t in wrt:
            if t.tape is not self:
                raise ValueError("wrt tensor was recorded on a different tape")
            out._set(t, grads.get(t._id, np.zeros_like(t.value)))
        return out


def grad_check(f, leaf_values, eps=1e-5):
    """Compare analytic gradients of `f` against central finite differences.

    `f` takes (tape, [leaf tensors]) and returns a scalar Tensor; it is
    re-evaluated from scratch for every perturbed entry. Returns the maximum
    over all leaf entries of |analytic - numeric| / max(|analytic|, |numeric|,
    1e-12).

    Raises DomainError for eps outside (0, 1e-3] and NumericalError when any
    evaluation or gradient is non-finite.
    """
    eps = float(eps)
    if not 0.0 < eps <= 1e-3:
        raise DomainError(f"grad_check eps must lie in (0, 1e-3], got {eps}")
    base = [_as_array(v).copy() for v in leaf_values]

    def evaluate(values):
        tape = Tape()
        leaves = [tape.leaf(v.copy()) for v in values]
        out = f(tape, leaves)
        if out.value.size != 1:
            raise ShapeMismatchError(f"grad_check target must be scalar, got shape {out.shape}")
        val = float(out.value.reshape(()))
        if not np.isfinite(val):
            raise NumericalError("grad_check target evaluated to a non-finite value")
        return tape, leaves, out, val

    tape, leaves, out, _ = evaluate(base)
    gm = tape.backward(out)
    analytic = [gm[leaf] for leaf in leaves]
    for g in analytic:
        if not np.all(np.isfinite(g)):
            raise NumericalError("analytic gradient contains non-finite entries")

    worst = 0.0
    for li, arr in enumerate(base):
        flat_analytic = analytic[li].reshape(-1)
        for j in range(arr.size):
            bumped = [v.copy() for v in base]
            flat = bumped[li].reshape(-1)
            orig = flat[j]
            flat[j] = orig + eps
            _, _, _, hi = evaluate(bumped)
            flat[j] = orig - eps
            _, _, _, lo = evaluate(bumped)
            numeric = (hi - lo) / (2.0 * eps)
            if not np.isfinite(numeric):
                raise NumericalError("finite-difference quotient is non-finite")
            a = flat_analytic[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
