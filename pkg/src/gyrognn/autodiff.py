"""Minimal reverse-mode autodiff over dense float64 arrays.

Just enough engine to differentiate the ball operations end-to-end: a
Tensor wraps a numpy array plus a closure that pushes gradients to its
inputs, and backward() replays the closures in reverse topological order.
Primitives follow numpy broadcasting; gradients for broadcast inputs are
summed back down to the input shape.

Every op checks its output for non-finite values and raises
FloatingPointError naming the op (set_finite_checks(False) or
GYROGNN_NO_CHECKS=1 turns this off; the check is a cheap sum-reduction,
not an elementwise scan).
"""

import os

import numpy as np

from . import _accel

# inputs this close to +-1 are treated as boundary values: atanh value is
# evaluated at the clamp and its gradient is zeroed there
ATANH_GUARD = 1.0 - 1e-12

_finite_checks = os.environ.get("GYROGNN_NO_CHECKS", "") != "1"


def set_finite_checks(enabled):
    global _finite_checks
    _finite_checks = bool(enabled)


def finite_checks_enabled():
    return _finite_checks


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._prev = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        # iterative post-order: recursion would blow the stack on graphs
        # thousands of ops deep (64-layer forward passes)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, emit = stack.pop()
            if emit:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
        # each node sits in a reference cycle (closure captures the node);
        # break the cycles so refcounting frees the graph immediately instead
        # of leaving multi-GB epochs to the cyclic collector
        for node in topo:
            node._backward = None
            node._prev = ()

    def release(self):
        """Free this tensor's graph without running backward (for
        forward-only passes); .data on every node stays valid."""
        stack = [self]
        seen = set()
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.extend(node._prev)
            node._backward = None
            node._prev = ()

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum g down to `shape` (the reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, prev, op):
    if _finite_checks and not np.isfinite(np.sum(data)):
        raise FloatingPointError("non-finite value produced by op '%s'" % op)
    parents = tuple(p for p in prev if p.requires_grad)
    out = Tensor(data, requires_grad=bool(parents))
    out._prev = parents
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = _node(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.shape))
        out._backward = _backward
    return out


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out = _node(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g, b.shape))
        out._backward = _backward
    return out


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = _node(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * a.data, b.shape))
        out._backward = _backward
    return out


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out = _node(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
        out._backward = _backward
    return out


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out = _node(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)
        out._backward = _backward
    return out


def transpose(a):
    a = _wrap(a)
    out = _node(a.data.T, (a,), "transpose")
    if out.requires_grad:
        def _backward():
            _accum(a, out.grad.T)
        out._backward = _backward
    return out


def sum(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.shape).copy())
        out._backward = _backward
    return out


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.size if axis is None else a.shape[axis]
    out = _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), "mean")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.shape) / n)
        out._backward = _backward
    return out


def norm2(a, axis=-1, keepdims=True):
    """Euclidean norm along `axis`; gradient is zero at the exact origin."""
    a = _wrap(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=keepdims))
    out = _node(n, (a,), "norm2")
    if out.requires_grad:
        def _backward():
            g = out.grad
            nn = n
            if not keepdims:
                g = np.expand_dims(g, axis)
                nn = np.expand_dims(n, axis)
            _accum(a, g * a.data / np.maximum(nn, 1e-300))
        out._backward = _backward
    return out


def sqrt(a):
    a = _wrap(a)
    with np.errstate(invalid="ignore"):
        out = _node(np.sqrt(a.data), (a,), "sqrt")
    if out.requires_grad:
        def _backward():
            # zero subgradient at/below zero rather than an inf that would
            # poison the whole backward pass
            safe = np.where(a.data > 0.0, out.data, 1.0)
            _accum(a, np.where(a.data > 0.0, out.grad / (2.0 * safe), 0.0))
        out._backward = _backward
    return out


def tanh(a):
    a = _wrap(a)
    t = np.tanh(a.data)
    out = _node(t, (a,), "tanh")
    if out.requires_grad:
        def _backward():
            _accum(a, out.grad * (1.0 - t * t))
        out._backward = _backward
    return out


def atanh(a):
    a = _wrap(a)
    xc = np.clip(a.data, -ATANH_GUARD, ATANH_GUARD)
    out = _node(np.arctanh(xc), (a,), "atanh")
    if out.requires_grad:
        def _backward():
            inside = np.abs(a.data) <= ATANH_GUARD
            _accum(a, np.where(inside, out.grad / (1.0 - xc * xc), 0.0))
        out._backward = _backward
    return out


def exp(a):
    a = _wrap(a)
    e = np.exp(a.data)
    out = _node(e, (a,), "exp")
    if out.requires_grad:
        def _backward():
            _accum(a, out.grad * e)
        out._backward = _backward
    return out


def log(a):
    a = _wrap(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = _node(np.log(a.data), (a,), "log")
    if out.requires_grad:
        def _backward():
            _accum(a, out.grad / a.data)
        out._backward = _backward
    return out


def relu(a):
    a = _wrap(a)
    out = _node(np.maximum(a.data, 0.0), (a,), "relu")
    if out.requires_grad:
        def _backward():
            _accum(a, out.grad * (a.data > 0.0))
        out._backward = _backward
    return out


def clamp(a, lo=None, hi=None):
    """Clip to [lo, hi]; zero gradient where the clip was active."""
    a = _wrap(a)
    out = _node(np.clip(a.data, lo, hi), (a,), "clamp")
    if out.requires_grad:
        def _backward():
            inside = np.ones(a.shape, dtype=bool)
            if lo is not None:
                inside &= a.data >= lo
            if hi is not None:
                inside &= a.data <= hi
            _accum(a, np.where(inside, out.grad, 0.0))
        out._backward = _backward
    return out


def concat_rows(tensors):
    tensors = [_wrap(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=0),
                tuple(tensors), "concat_rows")
    if out.requires_grad:
        sizes = [t.shape[0] for t in tensors]
        def _backward():
            g = out.grad
            off = 0
            for t, n in zip(tensors, sizes):
                if t.requires_grad:
                    _accum(t, g[off:off + n])
                off += n
        out._backward = _backward
    return out


def take(a, key):
    """a[key] with gradient scatter-added back (duplicate indices sum)."""
    a = _wrap(a)
    out = _node(a.data[key], (a,), "take")
    if out.requires_grad:
        def _backward():
            ga = np.zeros_like(a.data)
            np.add.at(ga, key, out.grad)
            _accum(a, ga)
        out._backward = _backward
    return out


def broadcast(a, shape):
    a = _wrap(a)
    out = _node(np.broadcast_to(a.data, shape).copy(), (a,), "broadcast")
    if out.requires_grad:
        def _backward():
            _accum(a, _unbroadcast(out.grad, a.shape))
        out._backward = _backward
    return out


def spmm(adj, x, adj_t=None):
    """Sparse-dense product adj @ x; adj is a constant scipy CSR matrix.

    Backward contracts against adj^T; pass adj_t when adj is not symmetric
    (the normalized graph adjacency is, so the default reuses adj).
    """
    x = _wrap(x)
    out = _node(_accel.spmm(adj, x.data), (x,), "spmm")
    if out.requires_grad:
        def _backward():
            back = adj if adj_t is None else adj_t
            _accum(x, _accel.spmm(back, out.grad))
        out._backward = _backward
    return out


def ball_fc(h, W, b1, b2, c, mask=None):
    """Fused ball FC layer: one node for the whole closed-form transform.

        num   = 2 sqrt(c) h W^T + b1 (1 + c|h|^2)
        omega = mask * (num / (sqrt(c)(1 - c|h|^2)) + b2)
        out   = omega / (1 + sqrt(1 + c|omega|^2))

    Composing this from primitives costs ~20 graph nodes per layer and the
    per-node bookkeeping dominates at small widths, so the layer gets a
    hand-written backward instead. `mask` is a constant dropout mask
    (already scaled by 1/keep).
    """
    h, W, b1, b2 = _wrap(h), _wrap(W), _wrap(b1), _wrap(b2)
    sq = c ** 0.5
    h2 = np.sum(h.data * h.data, axis=1, keepdims=True)
    num = 2.0 * sq * (h.data @ W.data.T) + b1.data * (1.0 + c * h2)
    den = sq * (1.0 - c * h2)
    omega = num / den + b2.data
    if mask is not None:
        omega = omega * mask
    r = np.sqrt(1.0 + c * np.sum(omega * omega, axis=1, keepdims=True))
    out = _node(omega / (1.0 + r), (h, W, b1, b2), "ball_fc")
    if out.requires_grad:
        def _backward():
            g = out.grad
            d = 1.0 + r
            go = g / d - (c * np.sum(g * omega, axis=1, keepdims=True)
                          / (r * d * d)) * omega
            if mask is not None:
                go = go * mask
            if b2.requires_grad:
                _accum(b2, go.sum(axis=0))
            gn = go / den
            gh2 = c * (gn @ b1.data)[:, None]
            gh2 += np.sum(go * num, axis=1, keepdims=True) / (den * den) * (sq * c)
            if b1.requires_grad:
                _accum(b1, (gn * (1.0 + c * h2)).sum(axis=0))
            if W.requires_grad:
                _accum(W, 2.0 * sq * (gn.T @ h.data))
            if h.requires_grad:
                _accum(h, 2.0 * sq * (gn @ W.data) + 2.0 * h.data * gh2)
        out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction and decoupled L2 decay.

    Decay applies only to the tensors in `decay_params` (the model passes
    its weight matrices; biases and other parameters are never decayed).
    """

    def __init__(self, params, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0, decay_params=()):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self._decay_ids = {id(p) for p in decay_params}
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and id(p) in self._decay_ids:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


# ---------------------------------------------------------------------------
# finite-difference verification harness
# ---------------------------------------------------------------------------

def finite_diff_check(closure, params, step=1e-5):
    """Max relative error of tape gradients vs central differences.

    `closure` rebuilds the loss from the current param values. Returns a
    dict keyed by param name (or its index) plus "max" for the overall
    worst entry. Relative error uses max(|g_ad|, |g_fd|, 1e-2) as the
    denominator so near-zero gradients are compared absolutely.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = closure()
    loss.backward()
    analytic = [np.array(p.grad if p.grad is not None else np.zeros_like(p.data))
                for p in params]

    report = {}
    worst = 0.0
    for idx, p in enumerate(params):
        flat = p.data.reshape(-1)
        err = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = float(closure().data)
            flat[j] = orig - step
            f_minus = float(closure().data)
            flat[j] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            ad = analytic[idx].reshape(-1)[j]
            denom = max(abs(ad), abs(fd), 1e-2)
            err = max(err, abs(ad - fd) / denom)
        key = p.name if p.name is not None else "param%d" % idx
        report[key] = err
        worst = max(worst, err)
    report["max"] = worst
    return report
