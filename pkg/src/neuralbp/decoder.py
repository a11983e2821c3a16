"""Unrolled message-passing decoders on a Tanner graph.

One engine covers plain sum-product BP, weighted (neural) BP in feed-forward
or recurrent form, min-sum with its normalized/offset variants and their
per-edge learnable versions, and relaxation of check-to-variable messages.

All message arrays have shape ``(..., E)`` with edges in the graph's canonical
(check, variable) order; LLR arrays have shape ``(..., N)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .codes import LinearCode, TannerGraph

ATANH_GUARD = 1e-12

CHECK_RULES = ("sum_product", "min_sum")
WEIGHT_MODES = ("none", "scalar_weight", "scalar_offset", "per_edge_weight", "per_edge_offset")
TYINGS = ("feed_forward", "recurrent")
RELAXATIONS = ("off", "single", "per_edge")
MIN_SUM_VARIANT = {
    "none": "plain",
    "scalar_weight": "nms",
    "scalar_offset": "oms",
    "per_edge_weight": "nnms",
    "per_edge_offset": "noms",
}


@dataclass(frozen=True)
class DecoderSpec:
    check_rule: str = "sum_product"
    weight_mode: str = "none"
    tying: str = "recurrent"
    relaxation: str = "off"
    iterations: int = 5
    clip: float = 10.0
    early_stop: bool = False
    fixed_post_scale: float | None = None
    # index sum-product weights by (target, source) edge pair instead of source edge
    pair_weights: bool = False
    learn_channel_weights: bool = False

    def __post_init__(self):
        if self.check_rule not in CHECK_RULES:
            raise ValueError(f"check_rule must be one of {CHECK_RULES}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.tying not in TYINGS:
            raise ValueError(f"tying must be one of {TYINGS}")
        if self.relaxation not in RELAXATIONS:
            raise ValueError(f"relaxation must be one of {RELAXATIONS}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.clip > 0:
            raise ValueError("clip must be positive")
        if self.check_rule == "sum_product" and "offset" in self.weight_mode:
            raise ValueError("offsets apply to min-sum check updates only")
        if self.pair_weights and not (self.check_rule == "sum_product"
                                      and self.weight_mode == "per_edge_weight"):
            raise ValueError("pair_weights requires per-edge weighted sum-product")

    @property
    def neural(self) -> bool:
        """Sum-product with weights: tanh-domain variable messages, sigmoid outputs."""
        return self.check_rule == "sum_product" and self.weight_mode != "none"

    @property
    def min_sum_variant(self) -> str:
        return MIN_SUM_VARIANT[self.weight_mode]

    def replace(self, **changes) -> "DecoderSpec":
        return dataclasses.replace(self, **changes)

    def describe(self) -> str:
        post = "none" if self.fixed_post_scale is None else repr(float(self.fixed_post_scale))
        return (f"check={self.check_rule};weights={self.weight_mode};tying={self.tying};"
                f"relax={self.relaxation};T={self.iterations};clip={float(self.clip)!r};"
                f"early_stop={int(self.early_stop)};post_scale={post};"
                f"pairs={int(self.pair_weights)};channel={int(self.learn_channel_weights)}")


PRESETS = {
    "bp": DecoderSpec(),
    "bp-ff": DecoderSpec(weight_mode="per_edge_weight", tying="feed_forward"),
    "bp-rnn": DecoderSpec(weight_mode="per_edge_weight", tying="recurrent"),
    "bp-ff-pairs": DecoderSpec(weight_mode="per_edge_weight", tying="feed_forward", pair_weights=True),
    "ms": DecoderSpec(check_rule="min_sum"),
    "nms": DecoderSpec(check_rule="min_sum", weight_mode="scalar_weight"),
    "oms": DecoderSpec(check_rule="min_sum", weight_mode="scalar_offset"),
    "nnms-ff": DecoderSpec(check_rule="min_sum", weight_mode="per_edge_weight", tying="feed_forward"),
    "nnms-rnn": DecoderSpec(check_rule="min_sum", weight_mode="per_edge_weight"),
    "noms-ff": DecoderSpec(check_rule="min_sum", weight_mode="per_edge_offset", tying="feed_forward"),
    "noms-rnn": DecoderSpec(check_rule="min_sum", weight_mode="per_edge_offset"),
    "noms-rnn-half": DecoderSpec(check_rule="min_sum", weight_mode="per_edge_offset",
                                 fixed_post_scale=0.5),
    "relaxed-ms": DecoderSpec(check_rule="min_sum", relaxation="single"),
    "relaxed-ms-edge": DecoderSpec(check_rule="min_sum", relaxation="per_edge"),
    "relaxed-noms-ff": DecoderSpec(check_rule="min_sum", weight_mode="per_edge_offset",
                                   tying="feed_forward", relaxation="single"),
    "relaxed-bp-rnn": DecoderSpec(weight_mode="per_edge_weight", relaxation="single"),
}

_KEYS = {
    "check": ("check_rule", str), "weights": ("weight_mode", str), "tying": ("tying", str),
    "relax": ("relaxation", str), "T": ("iterations", int), "clip": ("clip", float),
    "early_stop": ("early_stop", lambda s: bool(int(s))),
    "post_scale": ("fixed_post_scale", lambda s: None if s == "none" else float(s)),
    "pairs": ("pair_weights", lambda s: bool(int(s))),
    "channel": ("learn_channel_weights", lambda s: bool(int(s))),
}


def parse_spec(text: str) -> DecoderSpec:
    """Preset name, optionally followed by ``:key=value,...``, or a full descriptor."""
    text = text.strip()
    name, _, rest = text.partition(":")
    if name in PRESETS:
        base, items = PRESETS[name], rest
    elif "=" in name:
        base, items = DecoderSpec(), text
    else:
        raise ValueError(f"unknown decoder spec {name!r} (presets: {', '.join(PRESETS)})")
    changes = {}
    for item in filter(None, (s.strip() for s in items.replace(";", ",").split(","))):
        key, _, value = item.partition("=")
        if key not in _KEYS:
            raise ValueError(f"unknown spec key {key!r}")
        attr, conv = _KEYS[key]
        changes[attr] = conv(value)
    return base.replace(**changes) if changes else base


# ---------------------------------------------------------------------------
# Parameters

PARAM_FIELDS = ("edge_weights", "offsets", "output_weights", "gamma_raw",
                "channel_weights", "output_channel_weights")


def parameter_shapes(spec: DecoderSpec, graph: TannerGraph) -> dict[str, tuple]:
    T, E, N = spec.iterations, graph.n_edges, graph.n_vars

    def per_edge(base):
        return (T, base) if spec.tying == "feed_forward" else (base,)

    shapes = {}
    if spec.weight_mode == "scalar_weight":
        shapes["edge_weights"] = (1,)
    elif spec.weight_mode == "per_edge_weight":
        shapes["edge_weights"] = per_edge(graph.n_pairs if spec.pair_weights else E)
    elif spec.weight_mode == "scalar_offset":
        shapes["offsets"] = (1,)
    elif spec.weight_mode == "per_edge_offset":
        shapes["offsets"] = per_edge(E)
    if spec.neural and spec.weight_mode == "per_edge_weight":
        shapes["output_weights"] = per_edge(E)
    if spec.relaxation == "single":
        shapes["gamma_raw"] = (1,)
    elif spec.relaxation == "per_edge":
        shapes["gamma_raw"] = (E,)
    if spec.neural:
        shapes["channel_weights"] = (N,)
        shapes["output_channel_weights"] = (N,)
    return shapes


@dataclass
class Parameters:
    """Learnable tensors of a decoder; unused fields stay ``None``."""

    edge_weights: np.ndarray | None = None
    offsets: np.ndarray | None = None
    output_weights: np.ndarray | None = None
    gamma_raw: np.ndarray | None = None
    channel_weights: np.ndarray | None = None
    output_channel_weights: np.ndarray | None = None

    @classmethod
    def default(cls, spec: DecoderSpec, graph: TannerGraph) -> "Parameters":
        """Weights 1, offsets 0, gamma_raw 0 (gamma = 1/2)."""
        out = {}
        for name, shape in parameter_shapes(spec, graph).items():
            fill = 0.0 if name in ("offsets", "gamma_raw") else 1.0
            out[name] = np.full(shape, fill)
        return cls(**out)

    def arrays(self) -> dict[str, np.ndarray]:
        return {f: getattr(self, f) for f in PARAM_FIELDS if getattr(self, f) is not None}

    def replace(self, **changes) -> "Parameters":
        return dataclasses.replace(self, **changes)

    def copy(self) -> "Parameters":
        return Parameters(**{k: np.array(v, dtype=float) for k, v in self.arrays().items()})

    @property
    def gamma(self):
        return None if self.gamma_raw is None else sigmoid(self.gamma_raw)

    def validate(self, spec: DecoderSpec, graph: TannerGraph):
        want = parameter_shapes(spec, graph)
        have = {k: tuple(np.shape(v)) for k, v in self.arrays().items()}
        if want != have:
            raise ValueError(f"parameter shapes {have} do not match spec {want}")
        for k, v in self.arrays().items():
            if not np.all(np.isfinite(v)) and k != "gamma_raw":
                raise ValueError(f"parameter {k} has non-finite entries")


def layer(arr, t: int, spec: DecoderSpec):
    """Slice of a (possibly feed-forward) parameter used at iteration ``t``."""
    if arr is None:
        return None
    if spec.tying == "feed_forward" and arr.ndim == 2:
        return arr[min(t, arr.shape[0] - 1)]
    return arr


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# Graph gathers

def _pad(x, fill):
    pad = np.full(x.shape[:-1] + (1,), fill, dtype=x.dtype)
    return np.concatenate([x, pad], axis=-1)


def var_sum(graph: TannerGraph, x) -> np.ndarray:
    """Sum of edge values over each variable's edges: (..., E) -> (..., N)."""
    return _pad(x, 0.0)[..., graph.var_pad].sum(axis=-1)


def pair_sum(graph: TannerGraph, x, w) -> np.ndarray:
    """u_e = sum over e' sharing e's variable, e' != e, of w_(e,e') x_e'."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    if graph.n_pairs:
        contrib = x[..., graph.pair_src] * w
        starts = np.flatnonzero(np.r_[True, np.diff(graph.pair_dst) != 0])
        out[..., graph.pair_dst[starts]] = np.add.reduceat(contrib, starts, axis=-1)
    return out


# ---------------------------------------------------------------------------
# Node updates

def node_totals(graph: TannerGraph, llr, messages, weights=None, channel_weight=None):
    """s_v = w_v l_v + sum over all edges of v of w_e' x_e'."""
    llr = np.asarray(llr, dtype=float)
    weighted = messages if weights is None else messages * weights
    base = llr if channel_weight is None else channel_weight * llr
    return base + var_sum(graph, weighted)


def leave_one_out(graph: TannerGraph, totals, messages, weights=None):
    """x_e = s_v - w_e x_e for every edge e = (v, c)."""
    weighted = messages if weights is None else messages * weights
    return totals[..., graph.edge_var] - weighted


def variable_update(graph: TannerGraph, llr, messages, weights=None, channel_weight=None,
                    clip: float = np.inf, neural: bool = False, pair_weights: bool = False):
    """Variable-to-check messages from check-to-variable ``messages``.

    The leave-one-out sum is clipped to [-clip, clip]; neural mode returns
    tanh(sum / 2) as the outgoing message.
    """
    llr = np.asarray(llr, dtype=float)
    messages = np.asarray(messages, dtype=float)
    if messages.shape[-1] != graph.n_edges or llr.shape[-1] != graph.n_vars:
        raise ValueError("message/LLR shapes do not match the graph")
    if pair_weights:
        base = llr if channel_weight is None else channel_weight * llr
        u = base[..., graph.edge_var] + pair_sum(graph, messages, weights)
    else:
        s = node_totals(graph, llr, messages, weights, channel_weight)
        u = leave_one_out(graph, s, messages, weights)
    u = np.clip(u, -clip, clip)
    return np.tanh(u / 2) if neural else u


def variable_update_naive(graph: TannerGraph, llr, messages, weights=None, channel_weight=None):
    """Direct leave-one-out recomputation, one edge at a time (reference path)."""
    llr = np.asarray(llr, dtype=float)
    messages = np.asarray(messages, dtype=float)
    w = np.ones(graph.n_edges) if weights is None else np.broadcast_to(weights, (graph.n_edges,))
    cw = np.ones(graph.n_vars) if channel_weight is None else np.broadcast_to(channel_weight, (graph.n_vars,))
    out = np.empty(messages.shape)
    for e in range(graph.n_edges):
        v = graph.edge_var[e]
        acc = cw[v] * llr[..., v]
        for e2 in graph.var_edges[v]:
            if e2 != e:
                acc = acc + w[e2] * messages[..., e2]
        out[..., e] = acc
    return out


def _loo_product(tp):
    """Exclusive prefix times exclusive suffix product along the last axis."""
    ones = np.ones(tp.shape[:-1] + (1,))
    pre = np.concatenate([ones, np.cumprod(tp[..., :-1], axis=-1)], axis=-1)
    suf = np.concatenate([np.cumprod(tp[..., :0:-1], axis=-1)[..., ::-1], ones], axis=-1)
    return pre * suf


def check_update_sum_product(graph: TannerGraph, messages, neural: bool = False):
    """x_e = 2 atanh(prod over the other edges of the check of tau(x_e'))."""
    messages = np.asarray(messages, dtype=float)
    t = messages if neural else np.tanh(messages / 2)
    loo = _loo_product(_pad(t, 1.0)[..., graph.chk_pad])
    p = loo[..., graph.edge_chk, graph.chk_slot]
    p = np.clip(p, -1 + ATANH_GUARD, 1 - ATANH_GUARD)
    out = 2 * np.arctanh(p)
    out[..., graph.lonely_edge] = 0.0
    return out


def check_min_totals(graph: TannerGraph, messages):
    """Per-check (min1, min2, argmin slot, negative-sign parity) of ``messages``."""
    mag = _pad(np.abs(messages), np.inf)[..., graph.chk_pad]
    first = np.argmin(mag, axis=-1)  # lowest slot, i.e. lowest edge index, on ties
    min1 = np.take_along_axis(mag, first[..., None], -1)[..., 0]
    np.put_along_axis(mag, first[..., None], np.inf, -1)
    min2 = mag.min(axis=-1)
    neg = _pad(messages < 0, False)[..., graph.chk_pad]
    parity = neg.sum(axis=-1) & 1
    return min1, min2, first, parity


def check_update_min_sum(graph: TannerGraph, messages, variant: str = "plain",
                         weight=None, offset=None, post_scale=None):
    """Min-sum check update with optional normalization, offset and fixed scale.

    ``variant`` in {plain, nms, nnms, oms, noms}; ``weight``/``offset`` are a
    scalar (nms/oms) or per-edge array (nnms/noms) already sliced for the
    current iteration.
    """
    messages = np.asarray(messages, dtype=float)
    min1, min2, first, parity = check_min_totals(graph, messages)
    c, slot = graph.edge_chk, graph.chk_slot
    mag = np.where(slot == first[..., c], min2[..., c], min1[..., c])
    mag = np.where(np.isinf(mag), 0.0, mag)
    sign = 1.0 - 2.0 * (parity[..., c] ^ (messages < 0))
    return _finish_min_sum(mag, sign, variant, weight, offset, post_scale)


def _finish_min_sum(mag, sign, variant, weight, offset, post_scale):
    if variant in ("oms", "noms"):
        mag = np.maximum(mag - offset, 0.0)
    out = sign * mag
    if variant in ("nms", "nnms"):
        out = weight * out
    elif variant not in ("plain", "oms", "noms"):
        raise ValueError(f"unknown min-sum variant {variant!r}")
    if post_scale is not None:
        out = post_scale * out
    return out


def check_update_min_sum_naive(graph: TannerGraph, messages, variant="plain",
                               weight=None, offset=None, post_scale=None):
    messages = np.asarray(messages, dtype=float)
    mag = np.zeros(messages.shape)
    sign = np.ones(messages.shape)
    for e in range(graph.n_edges):
        others = [e2 for e2 in graph.chk_edges[graph.edge_chk[e]] if e2 != e]
        if not others:
            continue
        vals = messages[..., others]
        mag[..., e] = np.abs(vals).min(axis=-1)
        sign[..., e] = np.prod(np.where(vals < 0, -1.0, 1.0), axis=-1)
    return _finish_min_sum(mag, sign, variant, weight, offset, post_scale)


def relax(new_messages, previous, gamma):
    """m'_t = gamma m'_{t-1} + (1 - gamma) m_t; ``previous=None`` warm-starts."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0) or np.any(gamma >= 1):
        raise ValueError("relaxation factor must lie in [0, 1)")
    if previous is None:
        return np.array(new_messages, dtype=float)
    return gamma * previous + (1 - gamma) * new_messages


def marginal_totals(graph: TannerGraph, llr, messages, output_weights=None, channel_weight=None):
    return node_totals(graph, llr, messages, output_weights, channel_weight)


def marginalize(graph: TannerGraph, llr, messages, output_weights=None, channel_weight=None,
                neural: bool = False):
    """LLR totals (plain) or sigmoid of the weighted totals (neural)."""
    totals = marginal_totals(graph, llr, messages, output_weights, channel_weight)
    return sigmoid(totals) if neural else totals


# ---------------------------------------------------------------------------
# Full decode

@dataclass
class DecodeOutput:
    marginals: np.ndarray          # (..., T, N) probabilities of bit 1
    marginal_llrs: np.ndarray      # (..., T, N) pre-sigmoid totals
    hard_decisions: np.ndarray     # (..., N)
    iterations_used: np.ndarray    # (...)
    valid: np.ndarray              # (...)
    messages_final: np.ndarray = field(repr=False)  # (..., E) check-to-variable

    @property
    def marginals_per_iteration(self):
        return self.marginals


def _graph_of(code_or_graph) -> TannerGraph:
    if isinstance(code_or_graph, TannerGraph):
        return code_or_graph
    if isinstance(code_or_graph, LinearCode):
        return tanner_for(code_or_graph)
    return TannerGraph(code_or_graph)


_TANNER: dict[int, tuple[LinearCode, TannerGraph]] = {}


def tanner_for(code: LinearCode) -> TannerGraph:
    """Cached Tanner graph of a code."""
    hit = _TANNER.get(id(code))
    if hit is None or hit[0] is not code:
        hit = (code, TannerGraph(code.h))
        _TANNER[id(code)] = hit
    return hit[1]


class Iteration:
    """Shared per-iteration step, used by ``decode`` and the mRRD wrapper."""

    def __init__(self, spec: DecoderSpec, params: Parameters, graph: TannerGraph):
        params.validate(spec, graph)
        self.spec, self.params, self.graph = spec, params, graph
        self.gamma = params.gamma

    def step(self, t, llr, x_cv, relax_state):
        spec, p, g = self.spec, self.params, self.graph
        cw = p.channel_weights
        if spec.check_rule == "sum_product":
            w = layer(p.edge_weights, t, spec)
            xv = variable_update(g, llr, x_cv, w, cw, spec.clip, spec.neural, spec.pair_weights)
            xc = check_update_sum_product(g, xv, neural=spec.neural)
            if spec.fixed_post_scale is not None:
                xc = spec.fixed_post_scale * xc
        else:
            xv = variable_update(g, llr, x_cv, clip=spec.clip)
            xc = check_update_min_sum(g, xv, spec.min_sum_variant,
                                      layer(p.edge_weights, t, spec),
                                      layer(p.offsets, t, spec), spec.fixed_post_scale)
        if spec.relaxation != "off":
            xc = relax(xc, relax_state, self.gamma)
            relax_state = xc
        totals = marginal_totals(g, llr, xc, layer(p.output_weights, t, spec),
                                 p.output_channel_weights)
        return xc, relax_state, totals


def decode(spec: DecoderSpec, params: Parameters | None, code, llr,
           iterations: int | None = None) -> DecodeOutput:
    """Run up to ``spec.iterations`` flooding iterations on one frame or a batch."""
    graph = _graph_of(code)
    if params is None:
        params = Parameters.default(spec, graph)
    step = Iteration(spec, params, graph)
    llr = np.asarray(llr, dtype=float)
    single = llr.ndim == 1
    llr2 = llr[None] if single else llr.reshape(-1, llr.shape[-1])
    if llr2.shape[-1] != graph.n_vars:
        raise ValueError(f"LLR length {llr2.shape[-1]} != N={graph.n_vars}")
    T = spec.iterations if iterations is None else iterations
    B, N, E = llr2.shape[0], graph.n_vars, graph.n_edges

    tot_all = np.empty((B, T, N))
    hard = np.zeros((B, N), dtype=np.uint8)
    used = np.full(B, T, dtype=np.int64)
    valid = np.zeros(B, dtype=bool)
    final = np.zeros((B, E))

    active = np.arange(B)
    l, x, state = llr2, np.zeros((B, E)), None
    for t in range(T):
        x, state, totals = step.step(t, l, x, state)
        tot_all[active, t] = totals
        if spec.early_stop:
            bits = (totals > 0).astype(np.uint8)
            ok = graph.satisfied(bits)
            if ok.any():
                done = active[ok]
                hard[done], used[done], valid[done], final[done] = bits[ok], t + 1, True, x[ok]
                tot_all[done, t + 1:] = totals[ok][:, None, :]
                keep = ~ok
                active, l, x = active[keep], l[keep], x[keep]
                if state is not None:
                    state = state[keep]
                if active.size == 0:
                    break
    if active.size:
        bits = (tot_all[active, T - 1] > 0).astype(np.uint8)
        hard[active], final[active] = bits, x
        valid[active] = graph.satisfied(bits)

    out = DecodeOutput(sigmoid(tot_all), tot_all, hard, used, valid, final)
    if single:
        return DecodeOutput(*(getattr(out, f.name)[0] for f in dataclasses.fields(out)))
    shape = llr.shape[:-1]
    return DecodeOutput(out.marginals.reshape(shape + (T, N)), tot_all.reshape(shape + (T, N)),
                        hard.reshape(shape + (N,)), used.reshape(shape), valid.reshape(shape),
                        final.reshape(shape + (E,)))
