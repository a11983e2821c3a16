"""Permutation-based multi-branch decoding around a short inner decoder.

Each of ``m`` branches runs up to ``c`` blocks. A block is ``inner_iterations``
iterations of the inner decoder; if its hard decision is a codeword the branch
stops, otherwise the branch moves to a freshly permuted copy of the word
(a random automorphism of the cyclic code) and tries again. Candidates from all
branches go through a least-metric selector.

Everything is vectorised over frames. Position bookkeeping is kept as
``pos[f, k]`` = original index of the bit that sits at position ``k``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import channel
from .codes import LinearCode, read_keyvalue
from .decoder import DecoderSpec, Parameters, decode, parse_spec, tanner_for


@dataclass(frozen=True)
class MrrdConfig:
    m: int = 1
    c: int = 30
    inner_iterations: int = 2
    inner_spec: DecoderSpec = DecoderSpec()
    inner_params: Parameters | None = None
    seed: int = 0
    carry_extrinsic: bool = False

    def __post_init__(self):
        if self.m < 1 or self.c < 1 or self.inner_iterations < 1:
            raise ValueError("m, c and inner_iterations must all be >= 1")

    def block_spec(self) -> DecoderSpec:
        return self.inner_spec.replace(iterations=self.inner_iterations, early_stop=False)

    def block_params(self, graph) -> Parameters:
        spec = self.block_spec()
        if self.inner_params is None:
            return Parameters.default(spec, graph)
        params = self.inner_params.copy()
        if spec.tying == "feed_forward":
            # a feed-forward bundle trained for more iterations: keep the first layers
            for name, arr in params.arrays().items():
                if arr.ndim == 2:
                    setattr(params, name, arr[: self.inner_iterations])
        params.validate(spec, graph)
        return params


@dataclass
class Candidate:
    codeword: np.ndarray        # original frame
    positions: np.ndarray       # pos[k] = original index at branch-frame position k
    branch: int
    block: int                  # 1-based block at which the codeword was found

    def branch_frame_word(self) -> np.ndarray:
        return self.codeword[self.positions]


@dataclass
class MrrdStats:
    iterations: np.ndarray      # per frame, summed over branches
    wall_time: float            # seconds for the whole call
    branches_with_candidate: np.ndarray  # per frame count

    @property
    def mean_iterations(self) -> float:
        return float(np.mean(self.iterations)) if self.iterations.size else 0.0


@dataclass
class BranchResult:
    found: np.ndarray           # (B,) bool
    words: np.ndarray           # (B, N) candidate in the original frame (valid where found)
    positions: np.ndarray       # (B, N)
    blocks: np.ndarray          # (B,) blocks executed
    iterations: np.ndarray      # (B,)


def automorphism_params(rng: np.random.Generator, n: int, frames: int, blocks: int):
    """Frobenius exponents and shifts, one pair per (frame, block)."""
    m = n.bit_length()
    if n < 3 or n != (1 << m) - 1:
        raise ValueError(f"automorphism sampling needs n = 2^m - 1, got {n}")
    return rng.integers(m, size=(frames, blocks)), rng.integers(n, size=(frames, blocks))


def _permute_rows(values, a, b, n):
    """Per-row automorphism i -> (2**a i + b) mod n; entry i moves to perm[i]."""
    perm = (np.left_shift(1, a)[:, None] % n * np.arange(n) + b[:, None]) % n
    out = np.empty_like(values)
    np.put_along_axis(out, perm, values, axis=-1)
    return out


class _Inner:
    """Inner decoder shared by all branches of one configuration."""

    def __init__(self, code: LinearCode, config: MrrdConfig):
        self.code, self.graph = code, tanner_for(code)
        self.spec = config.block_spec()
        self.params = config.block_params(self.graph)
        self.T = config.inner_iterations

    def block(self, llr):
        out = decode(self.spec, self.params, self.graph, llr)
        totals = out.marginal_llrs[:, -1]
        return out.hard_decisions, totals


def _branch_batch(inner: _Inner, llr, a, b, first=None, carry=False) -> BranchResult:
    """Run one branch on every frame; ``first`` reuses a shared first block."""
    B, N = llr.shape
    c = a.shape[1]
    found = np.zeros(B, bool)
    words = np.zeros((B, N), np.uint8)
    pos_out = np.tile(np.arange(N), (B, 1))
    blocks = np.zeros(B, np.int64)

    active = np.arange(B)
    pos = np.tile(np.arange(N), (B, 1))
    cur = llr
    for j in range(c):
        if j == 0 and first is not None:
            hard, totals = first
        else:
            hard, totals = inner.block(cur)
        blocks[active] += 1
        orig = np.empty_like(hard)
        np.put_along_axis(orig, pos, hard, axis=-1)
        ok = inner.graph.satisfied(orig)
        if ok.any():
            done = active[ok]
            found[done], words[done], pos_out[done] = True, orig[ok], pos[ok]
            keep = ~ok
            active, pos, cur, totals = active[keep], pos[keep], cur[keep], totals[keep]
        if active.size == 0 or j == c - 1:
            break
        aj, bj = a[active, j], b[active, j]
        pos = _permute_rows(pos, aj, bj, N)
        cur = np.take_along_axis(llr[active], pos, axis=-1)
        if carry:
            cur = _permute_rows(totals, aj, bj, N)
    return BranchResult(found, words, pos_out, blocks, blocks * inner.T)


def correlation(y, words):
    """BPSK correlation sum y (1 - 2c); larger means closer to ``y``."""
    return np.sum(np.asarray(y, float) * (1.0 - 2.0 * np.asarray(words, float)), axis=-1)


def least_metric_select(candidates, y):
    """Maximum-correlation candidate; ties go to the lowest branch index.

    ``candidates`` is a list of :class:`Candidate` or of bit vectors.
    """
    if len(candidates) == 0:
        raise ValueError("least_metric_select needs at least one candidate")
    words = [c.codeword if isinstance(c, Candidate) else np.asarray(c) for c in candidates]
    branch = [c.branch if isinstance(c, Candidate) else i for i, c in enumerate(candidates)]
    scores = correlation(y, np.array(words))
    best = max(range(len(words)), key=lambda i: (scores[i], -branch[i]))
    return candidates[best]


def branch_stream(seed: int, branch: int, batch) -> np.random.Generator:
    """Permutation stream of one branch; ``batch`` is an int or a tuple key."""
    key = tuple(batch) if isinstance(batch, tuple) else (batch,)
    return channel.rng_stream(seed, 1, branch, *key)


def run_branch(rng: np.random.Generator, llr, config: MrrdConfig, code: LinearCode,
               branch: int = 0):
    """One branch on one frame; returns ``(Candidate or None, iterations)``."""
    llr = np.asarray(llr, float)[None]
    inner = _Inner(code, config)
    a, b = automorphism_params(rng, code.n, 1, config.c)
    r = _branch_batch(inner, llr, a, b, carry=config.carry_extrinsic)
    cand = None
    if r.found[0]:
        cand = Candidate(r.words[0], r.positions[0], branch, int(r.blocks[0]))
    return cand, int(r.iterations[0])


@dataclass
class MrrdBatchResult:
    words: np.ndarray
    found: np.ndarray
    winner_branch: np.ndarray   # -1 when falling back
    stats: MrrdStats
    branch_results: list = field(repr=False, default_factory=list)


def mrrd_decode_batch(llr, y, config: MrrdConfig, code: LinearCode, batch=0) -> MrrdBatchResult:
    """Decode a batch of frames; branch ``i`` draws from stream (seed, i, batch).

    Branch randomness does not depend on ``m``, so runs with different ``m``
    at the same seed use nested branch sets.
    """
    t0 = time.perf_counter()
    llr = np.atleast_2d(np.asarray(llr, float))
    y = np.atleast_2d(np.asarray(y, float))
    B, N = llr.shape
    inner = _Inner(code, config)
    first = inner.block(llr)  # block 1 sees the unpermuted word in every branch

    best = np.full(B, -np.inf)
    winner = np.full(B, -1)
    words = first[0].copy()
    iters = np.zeros(B, np.int64)
    with_cand = np.zeros(B, np.int64)
    results = []
    for i in range(config.m):
        a, b = automorphism_params(branch_stream(config.seed, i, batch), N, B, config.c)
        r = _branch_batch(inner, llr, a, b, first, config.carry_extrinsic)
        results.append(r)
        iters += r.iterations
        with_cand += r.found
        score = np.where(r.found, correlation(y, r.words), -np.inf)
        better = r.found & (score > best)
        best[better], winner[better], words[better] = score[better], i, r.words[better]
    stats = MrrdStats(iters, time.perf_counter() - t0, with_cand)
    return MrrdBatchResult(words, winner >= 0, winner, stats, results)


def mrrd_decode(rng_or_seed, llr, config: MrrdConfig, code: LinearCode, y=None):
    """Single-frame convenience wrapper; returns ``(codeword, MrrdStats)``.

    ``y`` defaults to the channel output implied by the LLRs (any positive
    multiple of it selects the same winner).
    """
    llr = np.asarray(llr, float)
    if y is None:
        y = -llr
    seed = rng_or_seed if isinstance(rng_or_seed, (int, np.integer)) else int(
        rng_or_seed.integers(2**63))
    res = mrrd_decode_batch(llr[None], np.asarray(y, float)[None],
                            replace(config, seed=int(seed)), code)
    return res.words[0], res.stats


# ---------------------------------------------------------------------------
# Config file

def load_config(path) -> tuple[MrrdConfig, str]:
    """Flat key-value file: code, spec, params, m, c, inner_iterations, seed, carry_extrinsic."""
    from .paramio import load_params

    path = Path(path)
    kv = read_keyvalue(path.read_text())
    spec = parse_spec(kv.get("spec", "bp"))
    params = None
    if kv.get("params"):
        p = Path(kv["params"])
        params = load_params(p if p.is_absolute() else path.parent / p).params
    cfg = MrrdConfig(m=int(kv.get("m", 1)), c=int(kv.get("c", 30)),
                     inner_iterations=int(kv.get("inner_iterations", 2)),
                     inner_spec=spec, inner_params=params, seed=int(kv.get("seed", 0)),
                     carry_extrinsic=kv.get("carry_extrinsic", "0") in ("1", "true"))
    return cfg, kv.get("code", "")
