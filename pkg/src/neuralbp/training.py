"""Gradient training of the unrolled decoders.

The forward pass here rebuilds the decoder out of tape primitives; it is kept
separate from :func:`neuralbp.decoder.decode` so the two paths can be checked
against each other.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import channel
from .autodiff import Tape, Var, clip_guard
from .codes import LinearCode, TannerGraph
from .decoder import DecoderSpec, Parameters, decode, tanner_for

log = logging.getLogger(__name__)

LOG_GUARD = 1e-12


class TrainingDiverged(RuntimeError):
    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass(frozen=True)
class LossConfig:
    kind: str = "multiloss"            # "final" or "multiloss"
    taps: tuple[int, ...] | None = None  # 1-based iterations; None means all

    def tap_indices(self, iterations: int) -> list[int]:
        if self.kind == "final":
            return [iterations - 1]
        if self.kind != "multiloss":
            raise ValueError(f"unknown loss kind {self.kind!r}")
        taps = range(1, iterations + 1) if self.taps is None else self.taps
        if any(not 1 <= t <= iterations for t in taps):
            raise ValueError(f"multiloss taps must lie in 1..{iterations}")
        return [t - 1 for t in taps]


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "rmsprop"
    learning_rate: float = 0.001
    minibatch_size: int = 120
    steps: int = 1000
    decay: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")

    @property
    def eps(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 1e-8 if self.kind == "adam" else 1e-10


@dataclass
class Batch:
    llr: np.ndarray
    targets: np.ndarray
    ebno_db: np.ndarray


# ---------------------------------------------------------------------------
# Losses (tape-free)

def cross_entropy(outputs, targets) -> float:
    """Mean binary cross-entropy with log arguments floored at 1e-12."""
    o = np.asarray(outputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if np.any((o < 0) | (o > 1)) or not np.all(np.isfinite(o)):
        raise ValueError("outputs must be probabilities")
    terms = y * np.log(np.maximum(o, LOG_GUARD)) + (1 - y) * np.log(np.maximum(1 - o, LOG_GUARD))
    return float(-terms.mean())


def multiloss(outputs_per_iteration, targets, taps=None) -> float:
    """Sum over iterations of the cross-entropy; iteration axis is -2."""
    o = np.asarray(outputs_per_iteration, dtype=float)
    idx = range(o.shape[-2]) if taps is None else taps
    return float(sum(cross_entropy(o[..., t, :], targets) for t in idx))


def decode_loss(spec: DecoderSpec, params: Parameters, code, batch: Batch,
                loss: LossConfig = LossConfig()) -> float:
    """Loss through the plain engine, for cross-checking the tape."""
    out = decode(spec.replace(early_stop=False), params, code, batch.llr)
    return multiloss(out.marginals, batch.targets, loss.tap_indices(spec.iterations))


# ---------------------------------------------------------------------------
# Tape forward pass

TRAINABLE = ("edge_weights", "offsets", "output_weights", "gamma_raw")


def trainable_names(spec: DecoderSpec, params: Parameters) -> list[str]:
    names = [n for n in TRAINABLE if getattr(params, n) is not None]
    if spec.learn_channel_weights:
        names += [n for n in ("channel_weights", "output_channel_weights")
                  if getattr(params, n) is not None]
    return names


@dataclass
class ForwardPass:
    tape: Tape
    loss: Var
    outputs: list = field(repr=False)
    trainable: list = field(default_factory=list)

    @property
    def loss_value(self) -> float:
        return float(self.loss.value)


def forward_with_tape(spec: DecoderSpec, params: Parameters, graph: TannerGraph,
                      batch: Batch, loss: LossConfig = LossConfig()) -> ForwardPass:
    if spec.early_stop:
        raise ValueError("training forward passes require early_stop=False")
    params.validate(spec, graph)
    tape = Tape()
    names = trainable_names(spec, params)
    pv = {}
    for name, arr in params.arrays().items():
        pv[name] = tape.leaf(arr, name) if name in names else tape.const(arr)

    def at(name, t):
        v = pv.get(name)
        if v is None:
            return None
        if spec.tying == "feed_forward" and v.value.ndim == 2:
            return tape.row(v, min(t, v.value.shape[0] - 1))
        return v

    llr = tape.const(batch.llr)
    cw, ocw = pv.get("channel_weights"), pv.get("output_channel_weights")
    base_n = llr if cw is None else cw * llr
    base_e = tape.to_edges(base_n, graph)
    out_base = llr if ocw is None else ocw * llr
    gamma = tape.sigmoid(pv["gamma_raw"]) if "gamma_raw" in pv else None

    x = state = None
    outputs = []
    A = spec.clip
    for t in range(spec.iterations):
        w = at("edge_weights", t)
        if x is None:
            u = base_e
        elif spec.check_rule == "sum_product" and spec.pair_weights:
            u = base_e + tape.pair_sum(x, w, graph)
        else:
            wx = x * w if (w is not None and spec.check_rule == "sum_product") else x
            u = tape.to_edges(base_n + tape.var_sum(wx, graph), graph) - wx
        u = tape.clip(u, -A, A)
        if spec.check_rule == "sum_product":
            prod = clip_guard(tape, tape.loo_prod(tape.tanh(tape.scale(u, 0.5)), graph))
            xc = tape.scale(tape.atanh(prod), 2.0)
        else:
            mag = tape.loo_min_abs(u, graph)
            sgn = tape.loo_sign(u, graph)
            variant = spec.min_sum_variant
            if variant in ("oms", "noms"):
                mag = tape.maximum(mag - at("offsets", t), 0.0)
            xc = sgn * mag
            if variant in ("nms", "nnms"):
                xc = w * xc
        if spec.fixed_post_scale is not None:
            xc = tape.scale(xc, spec.fixed_post_scale)
        if gamma is not None and state is not None:
            xc = gamma * state + (1.0 - gamma) * xc
        state = x = xc
        wo = at("output_weights", t)
        totals = out_base + tape.var_sum(x if wo is None else x * wo, graph)
        outputs.append(tape.sigmoid(totals))

    y = batch.targets
    total = None
    for t in loss.tap_indices(spec.iterations):
        o = outputs[t]
        pos = tape.log(tape.maximum(o, LOG_GUARD))
        neg = tape.log(tape.maximum(1.0 - o, LOG_GUARD))
        term = tape.scale(tape.mean(y * pos + (1.0 - y) * neg), -1.0)
        total = term if total is None else total + term
    return ForwardPass(tape, total, outputs, names)


def backward(fp: ForwardPass) -> dict[str, np.ndarray]:
    """Gradient of the loss w.r.t. every trainable parameter, in layout order."""
    return fp.tape.gradients(fp.loss, fp.trainable)


def loss_and_grad(spec, params, graph, batch, loss=LossConfig()):
    fp = forward_with_tape(spec, params, graph, batch, loss)
    return fp.loss_value, backward(fp)


# ---------------------------------------------------------------------------
# Data

def snr_grid(lo: float, hi: float) -> np.ndarray:
    if lo > hi:
        raise ValueError(f"empty SNR range [{lo}, {hi}]")
    return np.arange(lo, hi + 1e-9, 1.0)


def sample_batch(rng: np.random.Generator, code: LinearCode, snr_range_db=(1.0, 8.0),
                 minibatch_size: int = 120) -> Batch:
    """Noisy all-zero codewords, frames split evenly over the integer-dB grid.

    Leftover frames go to the lowest SNRs.
    """
    grid = snr_grid(*snr_range_db)
    base, extra = divmod(minibatch_size, len(grid))
    counts = np.full(len(grid), base) + (np.arange(len(grid)) < extra)
    ebno = np.repeat(grid, counts)
    sigma = channel.sigma_from_ebno(ebno, code.rate)
    y = channel.transmit(rng, np.ones((minibatch_size, code.n)), sigma)
    return Batch(channel.llr(y, sigma), np.zeros((minibatch_size, code.n)), ebno)


# ---------------------------------------------------------------------------
# Optimizers

class Optimizer:
    """SGD, RMSProp or Adam over a dict of parameter arrays (updated in place)."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        c = self.config
        self.t += 1
        for name, g in grads.items():
            p = params[name]
            if c.kind == "sgd":
                p -= c.learning_rate * g
            elif c.kind == "rmsprop":
                ms = self.v.setdefault(name, np.zeros_like(p))
                ms *= c.decay
                ms += (1 - c.decay) * g * g
                p -= c.learning_rate * g / (np.sqrt(ms) + c.eps)
            else:
                m = self.m.setdefault(name, np.zeros_like(p))
                v = self.v.setdefault(name, np.zeros_like(p))
                m *= c.beta1
                m += (1 - c.beta1) * g
                v *= c.beta2
                v += (1 - c.beta2) * g * g
                mhat = m / (1 - c.beta1 ** self.t)
                vhat = v / (1 - c.beta2 ** self.t)
                p -= c.learning_rate * mhat / (np.sqrt(vhat) + c.eps)
        return params


def optimizer_step(optimizer: Optimizer, params: Parameters, grads) -> Parameters:
    arrays = params.arrays()
    optimizer.step(arrays, grads)
    return params


# ---------------------------------------------------------------------------
# Training loop

@dataclass
class TrainResult:
    params: Parameters
    losses: list[float]
    gammas: list[float]

    def trace_csv(self) -> str:
        lines = ["step,loss,gamma"]
        for i, loss in enumerate(self.losses):
            g = repr(self.gammas[i]) if self.gammas else ""
            lines.append(f"{i + 1},{loss!r},{g}")
        return "\n".join(lines) + "\n"


def train(code: LinearCode, spec: DecoderSpec, loss: LossConfig = LossConfig(),
          optimizer: OptimizerConfig = OptimizerConfig(), seed: int = 0,
          init: Parameters | None = None, snr_range_db=(1.0, 8.0),
          callback=None) -> TrainResult:
    """Minibatch training on noisy all-zero codewords.

    Deterministic for a fixed seed. Raises :class:`TrainingDiverged` on a
    non-finite loss.
    """
    graph = tanner_for(code)
    spec = spec.replace(early_stop=False)
    params = (init or Parameters.default(spec, graph)).copy()
    opt = Optimizer(optimizer)
    rng = channel.rng_stream(seed, 0)
    losses, gammas = [], []
    for step in range(optimizer.steps):
        batch = sample_batch(rng, code, snr_range_db, optimizer.minibatch_size)
        value, grads = loss_and_grad(spec, params, graph, batch, loss)
        if not np.isfinite(value):
            raise TrainingDiverged(step, value)
        opt.step(params.arrays(), grads)
        losses.append(value)
        if params.gamma_raw is not None and params.gamma_raw.size == 1:
            gammas.append(float(params.gamma[0]))
        if callback is not None:
            callback(step, value, params)
        if step % 100 == 0:
            log.debug("step %d loss %.5f", step, value)
    return TrainResult(params, losses, gammas)


# ---------------------------------------------------------------------------
# Finite-difference audit

@dataclass
class GradcheckResult:
    max_rel_error: float
    points: int
    excluded: int
    per_point: list[float]


def _relative_error(a, f, floor):
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)


def gradcheck_point(spec, params, graph, batch, loss=LossConfig(), h=1e-4, floor=1e-6):
    """Max relative error of tape gradients against central differences.

    Returns ``None`` when any +-h perturbation changes a branch decision of a
    kinked primitive (the point is kink-adjacent).
    """
    fp = forward_with_tape(spec, params, graph, batch, loss)
    grads = backward(fp)
    base_sig = fp.tape.branch_signature()
    worst = 0.0
    for name in fp.trainable:
        arr = getattr(params, name)
        fd = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            vals = []
            for sgn in (1.0, -1.0):
                trial = params.copy()
                getattr(trial, name)[idx] += sgn * h
                f = forward_with_tape(spec, trial, graph, batch, loss)
                if f.tape.branch_signature() != base_sig:
                    return None
                vals.append(f.loss_value)
            fd[idx] = (vals[0] - vals[1]) / (2 * h)
        if arr.size:
            worst = max(worst, float(_relative_error(grads[name], fd, floor).max()))
    return worst


def random_point(rng, spec: DecoderSpec, graph: TannerGraph, code: LinearCode, batch_size=2,
                 ebno_db=2.0):
    """Random parameters around the classical decoder plus a noisy batch."""
    params = Parameters.default(spec, graph)
    for name, arr in params.arrays().items():
        if name in ("edge_weights", "output_weights"):
            arr += 0.3 * rng.standard_normal(arr.shape)
        elif name == "offsets":
            arr += rng.uniform(0.0, 0.6, arr.shape)
        elif name == "gamma_raw":
            arr += rng.standard_normal(arr.shape)
        elif spec.learn_channel_weights:
            arr += 0.2 * rng.standard_normal(arr.shape)
    sigma = channel.sigma_from_ebno(ebno_db, code.rate)
    bits = code.encode(rng.integers(0, 2, (batch_size, code.k)))
    y = channel.transmit(rng, channel.modulate(bits), sigma)
    batch = Batch(channel.llr(y, sigma), bits.astype(float), np.full(batch_size, ebno_db))
    return params, batch


def gradient_audit(code: LinearCode, spec: DecoderSpec, points: int = 100, seed: int = 0,
                   loss: LossConfig = LossConfig(), h: float = 1e-4, max_attempts: int | None = None):
    """Finite-difference check at ``points`` random non-kink points."""
    graph = tanner_for(code)
    spec = spec.replace(early_stop=False)
    rng = np.random.default_rng(seed)
    max_attempts = max_attempts or 20 * points
    errors, excluded = [], 0
    while len(errors) < points:
        if len(errors) + excluded >= max_attempts:
            raise RuntimeError(f"only {len(errors)} non-kink points in {max_attempts} attempts")
        params, batch = random_point(rng, spec, graph, code)
        err = gradcheck_point(spec, params, graph, batch, loss, h)
        if err is None:
            excluded += 1
        else:
            errors.append(err)
    return GradcheckResult(max(errors), len(errors), excluded, errors)
