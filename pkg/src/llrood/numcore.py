"""Small reverse-mode autodiff engine on float64 numpy arrays.

A :class:`Tape` records primitive operations in execution order. Values are
held on the tape; :class:`Var` is a thin handle (tape, node id) with operator
overloads so model code reads like ordinary array code.

    tape = Tape()
    w = tape.param(np.array([3.0]))
    loss = (w * w).sum()
    grads = backward(tape, loss.id)      # {w.id: array([6.])}
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class TapeError(ValueError):
    pass


@dataclass
class Tensor:
    """Shape + row-major float64 data; the serialisable form of a parameter."""

    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.data = np.ascontiguousarray(self.data, dtype=DTYPE).ravel()
        if any(s < 1 for s in self.shape):
            raise ValueError(f"tensor dimensions must be >= 1, got {self.shape}")
        if int(np.prod(self.shape)) != self.data.size:
            raise ValueError("product(shape) != len(data)")

    @classmethod
    def from_array(cls, arr) -> "Tensor":
        arr = np.asarray(arr, dtype=DTYPE)
        return cls(arr.shape, arr.ravel())

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.shape).copy()


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: int
    ctx: dict = field(default_factory=dict)


class Var:
    __slots__ = ("tape", "id")
    __array_priority__ = 100

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other):
        return other if isinstance(other, Var) else self.tape.const(other)

    def __add__(self, other):
        return self.tape.add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.sub(self._lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, self._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, self._lift(other))

    def __getitem__(self, i):
        return self.tape.index(self, i)

    def sum(self):
        return self.tape.reduce_sum(self)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


class Tape:
    """Ordered record of primitive ops; node ids are indices into ``values``."""

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.records: list[_Record] = []
        self.trainable: set[int] = set()

    # -- leaves -----------------------------------------------------------
    def _new(self, value) -> int:
        self.values.append(value)
        return len(self.values) - 1

    def param(self, value) -> Var:
        node = self._new(np.asarray(value, dtype=DTYPE))
        self.trainable.add(node)
        return Var(self, node)

    def const(self, value) -> Var:
        return Var(self, self._new(np.asarray(value, dtype=DTYPE)))

    def _emit(self, op, inputs, value, **ctx) -> Var:
        for v in inputs:
            if v.tape is not self:
                raise TapeError("operand belongs to a different tape")
        out = self._new(value)
        self.records.append(_Record(op, tuple(v.id for v in inputs), out, ctx))
        return Var(self, out)

    # -- primitives -------------------------------------------------------
    def matmul(self, a: Var, b: Var) -> Var:
        return self._emit("matmul", (a, b), a.value @ b.value)

    def add(self, a: Var, b: Var) -> Var:
        # b may be a row vector broadcast over the leading dims of a (bias)
        if b.value.shape != a.value.shape and a.value.shape[-b.value.ndim:] != b.value.shape:
            raise TapeError(f"add: cannot broadcast {b.value.shape} onto {a.value.shape}")
        return self._emit("add", (a, b), a.value + b.value)

    def sub(self, a: Var, b: Var) -> Var:
        if a.value.shape != b.value.shape:
            raise TapeError("sub: shape mismatch")
        return self._emit("sub", (a, b), a.value - b.value)

    def mul(self, a: Var, b: Var) -> Var:
        if a.value.shape != b.value.shape:
            raise TapeError("mul: shape mismatch")
        return self._emit("mul", (a, b), a.value * b.value)

    def scale(self, a: Var, c: float) -> Var:
        return self._emit("scale", (a,), a.value * c, c=c)

    def sigmoid(self, a: Var) -> Var:
        return self._emit("sigmoid", (a,), sigmoid(a.value))

    def tanh(self, a: Var) -> Var:
        return self._emit("tanh", (a,), np.tanh(a.value))

    def relu(self, a: Var) -> Var:
        return self._emit("relu", (a,), np.maximum(a.value, 0.0))

    def exp(self, a: Var) -> Var:
        return self._emit("exp", (a,), np.exp(a.value))

    def log(self, a: Var) -> Var:
        return self._emit("log", (a,), np.log(a.value))

    def concat(self, parts, axis=-1) -> Var:
        parts = list(parts)
        value = np.concatenate([p.value for p in parts], axis=axis)
        sizes = [p.value.shape[axis] for p in parts]
        return self._emit("concat", parts, value, axis=axis, sizes=sizes)

    def slice(self, a: Var, start: int, stop: int, axis=-1) -> Var:
        idx = [slice(None)] * a.value.ndim
        idx[axis] = slice(start, stop)
        idx = tuple(idx)
        return self._emit("slice", (a,), a.value[idx].copy(), idx=idx)

    def index(self, a: Var, i: int) -> Var:
        """Select entry ``i`` along axis 0."""
        return self._emit("index", (a,), a.value[i].copy(), i=i)

    def stack(self, parts) -> Var:
        parts = list(parts)
        return self._emit("stack", parts, np.stack([p.value for p in parts]))

    def reshape(self, a: Var, shape) -> Var:
        return self._emit("reshape", (a,), a.value.reshape(shape))

    def reduce_sum(self, a: Var, axis=None) -> Var:
        return self._emit("reduce_sum", (a,), np.asarray(a.value.sum(axis=axis)), axis=axis)

    def max_pool(self, a: Var) -> Var:
        """Global max over axis 1 of a (B, T, F) array."""
        arg = a.value.argmax(axis=1)
        value = np.take_along_axis(a.value, arg[:, None, :], axis=1)[:, 0, :]
        return self._emit("max_pool", (a,), value, arg=arg)

    def conv1d(self, x: Var, w: Var) -> Var:
        """Valid 1-D convolution: x (B, T, C), w (width, C, F) -> (B, T-width+1, F)."""
        width, c, f = w.value.shape
        cols = _unfold(x.value, width)
        out = cols @ w.value.reshape(width * c, f)
        return self._emit("conv1d", (x, w), out, cols=cols)

    def softmax_cross_entropy(self, logits: Var, target) -> Var:
        """Per-row cross-entropy of softmax(logits) against ``target``.

        ``target`` is an int array of class indices or a row-stochastic matrix.
        """
        z = logits.value
        if z.ndim != 2:
            raise TapeError("softmax_cross_entropy expects 2-D logits")
        lse = logsumexp(z)
        logp = z - lse[:, None]
        target = np.asarray(target)
        if target.ndim == 1:
            q = np.zeros_like(z)
            q[np.arange(z.shape[0]), target.astype(np.int64)] = 1.0
        else:
            q = target.astype(DTYPE)
        loss = -(q * logp).sum(axis=1)
        return self._emit("softmax_xent", (logits,), loss, q=q, p=np.exp(logp))

    def lstm_gates(self, pre: Var, c_prev: Var) -> tuple:
        """Standard LSTM cell nonlinearity from fused pre-activations.

        ``pre`` is (B, 4H) ordered [input, forget, cell, output]. Equivalent to
        slicing + sigmoid/tanh/mul/add primitives, recorded as one node pair to
        keep long unrolled sequences cheap.
        """
        z = pre.value
        hdim = z.shape[1] // 4
        i = sigmoid(z[:, :hdim])
        f = sigmoid(z[:, hdim:2 * hdim])
        g = np.tanh(z[:, 2 * hdim:3 * hdim])
        o = sigmoid(z[:, 3 * hdim:])
        c = f * c_prev.value + i * g
        tc = np.tanh(c)
        h = o * tc
        c_var = self._emit("lstm_c", (pre, c_prev), c, i=i, f=f, g=g)
        h_var = self._emit("lstm_h", (pre, c_var), h, o=o, tc=tc)
        return h_var, c_var


def sigmoid(x):
    # tanh form is overflow-free
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=DTYPE)))


def logsumexp(z):
    m = z.max(axis=-1)
    return m + np.log(np.exp(z - m[..., None]).sum(axis=-1))


def softmax(z):
    z = np.asarray(z, dtype=DTYPE)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _unfold(x, width):
    b, t, c = x.shape
    tt = t - width + 1
    view = np.lib.stride_tricks.sliding_window_view(x, width, axis=1)  # (B, T', C, width)
    return np.ascontiguousarray(view.transpose(0, 1, 3, 2)).reshape(b, tt, width * c)


def _fold_grad(gcols, width, c, t):
    b, tt, _ = gcols.shape
    g = gcols.reshape(b, tt, width, c)
    gx = np.zeros((b, t, c), dtype=DTYPE)
    for k in range(width):
        gx[:, k:k + tt, :] += g[:, :, k, :]
    return gx


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def backward(tape: Tape, loss_node: int) -> dict:
    """Reverse-mode gradients of a scalar node w.r.t. every trainable leaf.

    Returns ``{leaf_id: gradient array}``.
    """
    n = len(tape.values)
    if not 0 <= loss_node < n:
        raise TapeError(f"loss node {loss_node} not on tape")
    if tape.values[loss_node].size != 1:
        raise TapeError("loss must be scalar")
    produced = {rec.output for rec in tape.records}
    grads: list = [None] * n
    grads[loss_node] = np.ones_like(tape.values[loss_node])

    owned = set()

    def acc(node, g):
        grads[node] = g if grads[node] is None else grads[node] + g
        owned.discard(node)

    def acc_at(node, idx, g):
        # scatter-add into an owned buffer; avoids a dense zero array per call
        cur = grads[node]
        if cur is None:
            cur = np.zeros_like(tape.values[node])
        elif node not in owned:
            cur = cur.copy()
        cur[idx] += g
        grads[node] = cur
        owned.add(node)

    for rec in reversed(tape.records):
        if rec.output > loss_node:
            continue
        gout = grads[rec.output]
        if gout is None:
            continue
        v = tape.values
        ins = rec.inputs
        if any(i >= rec.output for i in ins):
            raise TapeError(f"dangling node reference in {rec.op}")
        op = rec.op
        if op == "matmul":
            a, b = v[ins[0]], v[ins[1]]
            acc(ins[0], gout @ b.T)
            acc(ins[1], a.T @ gout)
        elif op == "add":
            acc(ins[0], gout)
            acc(ins[1], _unbroadcast(gout, v[ins[1]].shape))
        elif op == "sub":
            acc(ins[0], gout)
            acc(ins[1], -gout)
        elif op == "mul":
            acc(ins[0], gout * v[ins[1]])
            acc(ins[1], gout * v[ins[0]])
        elif op == "scale":
            acc(ins[0], gout * rec.ctx["c"])
        elif op == "sigmoid":
            s = v[rec.output]
            acc(ins[0], gout * s * (1.0 - s))
        elif op == "tanh":
            t = v[rec.output]
            acc(ins[0], gout * (1.0 - t * t))
        elif op == "relu":
            acc(ins[0], gout * (v[ins[0]] > 0))
        elif op == "exp":
            acc(ins[0], gout * v[rec.output])
        elif op == "log":
            acc(ins[0], gout / v[ins[0]])
        elif op == "concat":
            axis = rec.ctx["axis"]
            offs = np.cumsum([0] + rec.ctx["sizes"])
            for k, node in enumerate(ins):
                idx = [slice(None)] * gout.ndim
                idx[axis] = slice(offs[k], offs[k + 1])
                acc(node, gout[tuple(idx)])
        elif op == "slice":
            acc_at(ins[0], rec.ctx["idx"], gout)
        elif op == "index":
            acc_at(ins[0], rec.ctx["i"], gout)
        elif op == "stack":
            for k, node in enumerate(ins):
                acc(node, gout[k])
        elif op == "reshape":
            acc(ins[0], gout.reshape(v[ins[0]].shape))
        elif op == "reduce_sum":
            axis = rec.ctx["axis"]
            shape = v[ins[0]].shape
            g = gout if axis is None else np.expand_dims(gout, axis)
            acc(ins[0], np.broadcast_to(g, shape).copy())
        elif op == "max_pool":
            x = v[ins[0]]
            g = np.zeros_like(x)
            np.put_along_axis(g, rec.ctx["arg"][:, None, :], gout[:, None, :], axis=1)
            acc(ins[0], g)
        elif op == "conv1d":
            x, w = v[ins[0]], v[ins[1]]
            width, c, f = w.shape
            cols = rec.ctx["cols"]
            gw = np.tensordot(cols, gout, axes=([0, 1], [0, 1]))
            acc(ins[1], gw.reshape(w.shape))
            if ins[0] in tape.trainable or ins[0] in produced:
                gcols = gout @ w.reshape(width * c, f).T
                acc(ins[0], _fold_grad(gcols, width, c, x.shape[1]))
        elif op == "softmax_xent":
            acc(ins[0], gout[:, None] * (rec.ctx["p"] - rec.ctx["q"]))
        elif op == "lstm_c":
            i, f, g = rec.ctx["i"], rec.ctx["f"], rec.ctx["g"]
            c_prev = v[ins[1]]
            gpre = np.concatenate(
                [gout * g * i * (1 - i), gout * c_prev * f * (1 - f),
                 gout * i * (1 - g * g), np.zeros_like(gout)], axis=1)
            acc(ins[0], gpre)
            acc(ins[1], gout * f)
        elif op == "lstm_h":
            o, tc = rec.ctx["o"], rec.ctx["tc"]
            hdim = o.shape[1]
            gpre = np.zeros((o.shape[0], 4 * hdim), dtype=DTYPE)
            gpre[:, 3 * hdim:] = gout * tc * o * (1 - o)
            acc(ins[0], gpre)
            acc(ins[1], gout * o * (1 - tc * tc))
        else:  # pragma: no cover
            raise TapeError(f"unknown op {op}")

    out = {}
    for node in sorted(tape.trainable):
        g = grads[node]
        out[node] = np.zeros_like(tape.values[node]) if g is None else g
    return out


def finite_diff_check(fn, params, h=1e-5, analytic=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(params) -> (loss, grads)`` where ``params`` is a list of arrays and
    ``grads`` the matching list of analytic gradients; if ``analytic`` is given,
    ``fn`` may return just the loss and those gradients are checked instead.
    """
    params = [np.array(p, dtype=DTYPE) for p in params]
    if analytic is None:
        _, analytic = fn(params)
    worst = 0.0
    for k, p in enumerate(params):
        flat = p.reshape(-1)
        ga = np.asarray(analytic[k], dtype=DTYPE).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = _loss_of(fn(params))
            flat[j] = orig - h
            fm = _loss_of(fn(params))
            flat[j] = orig
            num = (fp - fm) / (2 * h)
            denom = max(abs(ga[j]), abs(num), 1e-8)
            worst = max(worst, abs(ga[j] - num) / denom)
    return worst


def _loss_of(res):
    return float(res[0] if isinstance(res, tuple) else res)


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: OptimizerState, decay=None) -> tuple:
    """One Adam update in place on ``params``; returns ``(params, state)``.

    L2 enters as ``l2 * param`` added to the gradient, for names in ``decay``
    (all names when ``decay`` is None).
    """
    if set(grads) - set(params):
        raise KeyError(f"gradients for unknown parameters: {sorted(set(grads) - set(params))}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else g
        if g.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: {g.shape} vs {p.shape}")
        if state.l2 > 0 and (decay is None or name in decay):
            g = g + state.l2 * p
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = b1 * m + (1 - b1) * g
        vv = b2 * state.v[name] + (1 - b2) * g * g
        state.m[name] = m
        state.v[name] = vv
        p -= state.lr * (m / corr1) / (np.sqrt(vv / corr2) + state.eps)
    return params, state


def xavier_uniform(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
