"""Minimal reverse-mode differentiation over batched numpy arrays.

The tape records each primitive with its inputs and saved forward values and
replays them backwards. The primitive set is just what the unrolled decoders
need: elementwise arithmetic and nonlinearities, the kinked min-sum pieces,
and the Tanner-graph gathers.

Subgradient conventions at kinks: clip passes gradient only strictly inside
its bounds, ``max(x, c)`` passes it only where ``x > c``, ``|x|`` has slope 0
at 0, a minimum routes to its unique selected argument (lowest index on
ties), and sign is piecewise constant.
"""
from __future__ import annotations

import numpy as np

from .codes import TannerGraph
from .decoder import ATANH_GUARD, _loo_product, _pad, sigmoid


class Var:
    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None  # make ndarray (op) Var defer to Var

    def __init__(self, tape, index, value):
        self.tape, self.index, self.value = tape, index, value

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.scale(self, -1.0)


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    grad = np.asarray(grad)
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered record of primitive applications.

    Each entry is ``(op, input_indices, attrs, saved)``; ``op.forward`` maps
    input values to ``(output, saved)`` and ``op.backward`` maps an output
    adjoint to input adjoints.
    """

    def __init__(self):
        self.values = []
        self.entries = []
        self.names = {}

    def _push(self, value, entry):
        self.values.append(value)
        self.entries.append(entry)
        return Var(self, len(self.values) - 1, value)

    def leaf(self, value, name=None) -> Var:
        v = self._push(np.array(value, dtype=float), None)
        if name is not None:
            self.names[name] = v.index
        return v

    def const(self, value) -> Var:
        return self._push(np.asarray(value, dtype=float), None)

    def _lift(self, x):
        return x if isinstance(x, Var) else self.const(x)

    def apply(self, op, *inputs, **attrs) -> Var:
        inputs = [self._lift(x) for x in inputs]
        out, saved = op.forward(*[x.value for x in inputs], **attrs)
        return self._push(out, (op, [x.index for x in inputs], attrs, saved))

    # elementwise
    def add(self, a, b):
        return self.apply(Add, a, b)

    def sub(self, a, b):
        return self.apply(Sub, a, b)

    def mul(self, a, b):
        return self.apply(Mul, a, b)

    def scale(self, a, c):
        return self.apply(Scale, a, c=float(c))

    def tanh(self, a):
        return self.apply(Tanh, a)

    def atanh(self, a):
        return self.apply(Atanh, a)

    def sigmoid(self, a):
        return self.apply(Sigmoid, a)

    def log(self, a):
        return self.apply(Log, a)

    def clip(self, a, lo, hi):
        return self.apply(Clip, a, lo=lo, hi=hi)

    def maximum(self, a, c):
        return self.apply(MaxConst, a, c=c)

    def abs(self, a):
        return self.apply(Abs, a)

    def sign(self, a):
        return self.apply(Sign, a)

    def mean(self, a):
        return self.apply(Mean, a)

    def sum(self, a):
        return self.apply(Sum, a)

    def row(self, a, i):
        return self.apply(Row, a, i=i)

    def where_const(self, a, mask, fill):
        return self.apply(WhereConst, a, mask=mask, fill=fill)

    # graph structure
    def var_sum(self, a, graph):
        return self.apply(VarSum, a, graph=graph)

    def to_edges(self, a, graph):
        return self.apply(ToEdges, a, graph=graph)

    def pair_sum(self, x, w, graph):
        return self.apply(PairSum, x, w, graph=graph)

    def loo_prod(self, a, graph):
        return self.apply(LooProd, a, graph=graph)

    def loo_min_abs(self, a, graph):
        return self.apply(LooMinAbs, a, graph=graph)

    def loo_sign(self, a, graph):
        return self.apply(LooSign, a, graph=graph)

    # -------------------------------------------------------------------
    def backward(self, out: Var, seed=1.0) -> dict[int, np.ndarray]:
        """Adjoints of every recorded value reachable from ``out``."""
        grads = {out.index: np.broadcast_to(np.asarray(seed, dtype=float), np.shape(out.value)).copy()}
        for idx in range(out.index, -1, -1):
            g = grads.get(idx)
            entry = self.entries[idx]
            if g is None or entry is None:
                continue
            op, ins, attrs, saved = entry
            in_vals = [self.values[i] for i in ins]
            for i, gi in zip(ins, op.backward(g, saved, self.values[idx], *in_vals, **attrs)):
                if gi is None:
                    continue
                gi = unbroadcast(gi, np.shape(self.values[i]))
                grads[i] = gi if i not in grads else grads[i] + gi
        return grads

    def gradients(self, out: Var, names=None) -> dict[str, np.ndarray]:
        grads = self.backward(out)
        names = self.names if names is None else {n: self.names[n] for n in names}
        return {n: grads.get(i, np.zeros(np.shape(self.values[i]))) for n, i in names.items()}

    def replay(self, leaves: dict[str, np.ndarray] | None = None) -> list:
        """Recompute every recorded value from the leaves (optionally overridden)."""
        values = list(self.values)
        by_index = {self.names[n]: np.asarray(v, dtype=float) for n, v in (leaves or {}).items()}
        for idx, entry in enumerate(self.entries):
            if entry is None:
                values[idx] = by_index.get(idx, self.values[idx])
                continue
            op, ins, attrs, _ = entry
            values[idx] = op.forward(*[values[i] for i in ins], **attrs)[0]
        return values

    def branch_signature(self) -> bytes:
        """Concatenated branch decisions of every kinked primitive."""
        parts = []
        for entry in self.entries:
            if entry is not None and hasattr(entry[0], "branches"):
                parts.append(entry[0].branches(entry[3], **entry[2]))
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


# ---------------------------------------------------------------------------
# Primitives

class Add:
    @staticmethod
    def forward(a, b):
        return a + b, None

    @staticmethod
    def backward(g, saved, out, a, b):
        return g, g


class Sub:
    @staticmethod
    def forward(a, b):
        return a - b, None

    @staticmethod
    def backward(g, saved, out, a, b):
        return g, -g


class Mul:
    @staticmethod
    def forward(a, b):
        return a * b, None

    @staticmethod
    def backward(g, saved, out, a, b):
        return g * b, g * a


class Scale:
    @staticmethod
    def forward(a, c):
        return c * a, None

    @staticmethod
    def backward(g, saved, out, a, c):
        return (c * g,)


class Tanh:
    @staticmethod
    def forward(a):
        return np.tanh(a), None

    @staticmethod
    def backward(g, saved, out, a):
        return (g * (1 - out * out),)


class Atanh:
    @staticmethod
    def forward(a):
        return np.arctanh(a), None

    @staticmethod
    def backward(g, saved, out, a):
        return (g / (1 - a * a),)


class Sigmoid:
    @staticmethod
    def forward(a):
        return sigmoid(a), None

    @staticmethod
    def backward(g, saved, out, a):
        return (g * out * (1 - out),)


class Log:
    @staticmethod
    def forward(a):
        return np.log(a), None

    @staticmethod
    def backward(g, saved, out, a):
        return (g / a,)


class Clip:
    @staticmethod
    def forward(a, lo, hi):
        inside = (a > lo) & (a < hi)
        return np.clip(a, lo, hi), inside

    @staticmethod
    def backward(g, inside, out, a, lo, hi):
        return (g * inside,)

    @staticmethod
    def branches(inside, **_):
        return inside


class MaxConst:
    @staticmethod
    def forward(a, c):
        above = a > c
        return np.where(above, a, c), above

    @staticmethod
    def backward(g, above, out, a, c):
        return (g * above,)

    @staticmethod
    def branches(above, **_):
        return above


class Abs:
    @staticmethod
    def forward(a):
        s = np.sign(a)
        return np.abs(a), s

    @staticmethod
    def backward(g, s, out, a):
        return (g * s,)

    @staticmethod
    def branches(s, **_):
        return s.astype(np.int8)


class Sign:
    @staticmethod
    def forward(a):
        s = np.sign(a)
        return s, s

    @staticmethod
    def backward(g, s, out, a):
        return (None,)

    @staticmethod
    def branches(s, **_):
        return s.astype(np.int8)


class Mean:
    @staticmethod
    def forward(a):
        return np.asarray(a.mean()), None

    @staticmethod
    def backward(g, saved, out, a):
        return (np.full(a.shape, g / a.size),)


class Sum:
    @staticmethod
    def forward(a):
        return np.asarray(a.sum()), None

    @staticmethod
    def backward(g, saved, out, a):
        return (np.full(a.shape, g),)


class Row:
    """Index along the leading axis (layer selection of feed-forward params)."""

    @staticmethod
    def forward(a, i):
        return a[i], None

    @staticmethod
    def backward(g, saved, out, a, i):
        full = np.zeros(a.shape)
        full[i] = g
        return (full,)


class WhereConst:
    """Replace entries under ``mask`` by a constant."""

    @staticmethod
    def forward(a, mask, fill):
        return np.where(mask, fill, a), None

    @staticmethod
    def backward(g, saved, out, a, mask, fill):
        return (np.where(mask, 0.0, g),)


class VarSum:
    """(..., E) -> (..., N): sum over each variable's edges."""

    @staticmethod
    def forward(a, graph: TannerGraph):
        return _pad(a, 0.0)[..., graph.var_pad].sum(axis=-1), None

    @staticmethod
    def backward(g, saved, out, a, graph):
        return (g[..., graph.edge_var],)


class ToEdges:
    """(..., N) -> (..., E): copy each variable's value onto its edges."""

    @staticmethod
    def forward(a, graph: TannerGraph):
        return a[..., graph.edge_var], None

    @staticmethod
    def backward(g, saved, out, a, graph):
        return (_pad(g, 0.0)[..., graph.var_pad].sum(axis=-1),)


class PairSum:
    """u_e = sum over (e, e') pairs of w_p x_e'."""

    @staticmethod
    def forward(x, w, graph: TannerGraph):
        out = np.zeros(x.shape)
        if graph.n_pairs:
            contrib = x[..., graph.pair_src] * w
            starts = np.flatnonzero(np.r_[True, np.diff(graph.pair_dst) != 0])
            out[..., graph.pair_dst[starts]] = np.add.reduceat(contrib, starts, axis=-1)
        return out, None

    @staticmethod
    def backward(g, saved, out, x, w, graph):
        gp = g[..., graph.pair_dst]
        gw = gp * x[..., graph.pair_src]
        gx = np.zeros(x.shape)
        flat = gx.reshape(-1, x.shape[-1])
        contrib = (gp * w).reshape(-1, graph.n_pairs)
        for row in range(flat.shape[0]):
            flat[row] = np.bincount(graph.pair_src, contrib[row], minlength=x.shape[-1])
        return gx, gw


class LooProd:
    """Leave-one-out product over each check's edges; lonely edges give 0.

    The adjoint of input k is the dual part of the leave-one-out product of
    the dual numbers (p_j + g_j eps), computed with the same prefix/suffix
    sweep as the forward pass.
    """

    @staticmethod
    def forward(a, graph: TannerGraph):
        loo = _loo_product(_pad(a, 1.0)[..., graph.chk_pad])
        out = loo[..., graph.edge_chk, graph.chk_slot]
        out[..., graph.lonely_edge] = 0.0
        return out, None

    @staticmethod
    def backward(g, saved, out, a, graph):
        g = np.where(graph.lonely_edge, 0.0, g)
        p = _pad(a, 1.0)[..., graph.chk_pad]
        d = _pad(g, 0.0)[..., graph.chk_pad]
        dc = p.shape[-1]
        pre_p = np.ones(p.shape)
        pre_d = np.zeros(p.shape)
        for j in range(1, dc):
            pre_p[..., j] = pre_p[..., j - 1] * p[..., j - 1]
            pre_d[..., j] = pre_d[..., j - 1] * p[..., j - 1] + pre_p[..., j - 1] * d[..., j - 1]
        suf_p = np.ones(p.shape)
        suf_d = np.zeros(p.shape)
        for j in range(dc - 2, -1, -1):
            suf_p[..., j] = suf_p[..., j + 1] * p[..., j + 1]
            suf_d[..., j] = suf_d[..., j + 1] * p[..., j + 1] + suf_p[..., j + 1] * d[..., j + 1]
        grad = pre_p * suf_d + pre_d * suf_p
        return (grad[..., graph.edge_chk, graph.chk_slot],)


class LooMinAbs:
    """min over the other edges of the check of |x|; lonely edges give 0."""

    @staticmethod
    def forward(a, graph: TannerGraph):
        mag = _pad(np.abs(a), np.inf)[..., graph.chk_pad]
        first = np.argmin(mag, axis=-1)
        min1 = np.take_along_axis(mag, first[..., None], -1)[..., 0]
        np.put_along_axis(mag, first[..., None], np.inf, -1)
        second = np.argmin(mag, axis=-1)
        min2 = np.take_along_axis(mag, second[..., None], -1)[..., 0]
        c, slot = graph.edge_chk, graph.chk_slot
        is_first = slot == first[..., c]
        out = np.where(is_first, min2[..., c], min1[..., c])
        src_slot = np.where(is_first, second[..., c], first[..., c])
        src_edge = graph.chk_pad[c, src_slot]
        src_edge = np.where(graph.lonely_edge, -1, src_edge)
        out = np.where(graph.lonely_edge, 0.0, out)
        return out, src_edge

    @staticmethod
    def backward(g, src_edge, out, a, graph):
        ok = src_edge >= 0
        safe = np.where(ok, src_edge, 0)
        s = np.sign(np.take_along_axis(a, safe, -1)) if a.ndim > 1 else np.sign(a[safe])
        contrib = np.where(ok, g * s, 0.0)
        E = a.shape[-1]
        flat_src = safe.reshape(-1, E)
        flat_c = contrib.reshape(-1, E)
        rows = np.arange(flat_src.shape[0])[:, None] * E
        grad = np.bincount((flat_src + rows).ravel(), flat_c.ravel(), minlength=flat_src.size)
        return (grad.reshape(a.shape),)

    @staticmethod
    def branches(src_edge, **_):
        return src_edge


class LooSign:
    """Product of signs over the other edges of the check (sign(0) taken as +1)."""

    @staticmethod
    def forward(a, graph: TannerGraph):
        neg = a < 0
        parity = _pad(neg, False)[..., graph.chk_pad].sum(axis=-1) & 1
        out = 1.0 - 2.0 * (parity[..., graph.edge_chk] ^ neg)
        return out, out

    @staticmethod
    def backward(g, saved, out, a, graph):
        return (None,)

    @staticmethod
    def branches(saved, **_):
        return saved.astype(np.int8)


def clip_guard(tape: Tape, x: Var) -> Var:
    return tape.clip(x, -1 + ATANH_GUARD, 1 - ATANH_GUARD)
