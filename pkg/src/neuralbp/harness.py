"""Monte-Carlo BER/FER estimation, exhaustive oracles and CSV reports.

Frames are simulated in rounds. In round ``r`` worker ``w`` draws its frames
from the stream keyed ``(seed, 0, snr_index, w, r)``, and per-round results are
reduced in worker order, so a run is reproducible for a fixed seed and worker
count. Several decoders can be evaluated on the same frames, which is what the
paired comparisons in the test-suite rely on.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import __version__, channel
from .codes import LinearCode
from .decoder import DecoderSpec, Parameters, decode, tanner_for
from .mrrd import MrrdConfig, mrrd_decode_batch

CSV_HEADER = "ebno_db,frames,frame_errors,bits,bit_errors,ber,fer,mean_iterations"
DEFAULT_MIN_FRAME_ERRORS = 100
DEFAULT_MAX_FRAMES = 10**7


# ---------------------------------------------------------------------------
# Frame decoders (picklable, so they can be shipped to worker processes)

@dataclass
class BpFrameDecoder:
    spec: DecoderSpec
    params: Parameters | None = None
    label: str = ""

    def describe(self) -> str:
        return self.spec.describe()

    def __call__(self, code, llr, y, key):
        out = decode(self.spec, self.params, tanner_for(code), llr)
        return out.hard_decisions, out.iterations_used


@dataclass
class MrrdFrameDecoder:
    config: MrrdConfig
    label: str = ""

    def describe(self) -> str:
        c = self.config
        return (f"mrrd(m={c.m},c={c.c},inner_T={c.inner_iterations},"
                f"carry={int(c.carry_extrinsic)}):{c.block_spec().describe()}")

    def __call__(self, code, llr, y, key):
        res = mrrd_decode_batch(llr, y, self.config, code, batch=key)
        return res.words, res.stats.iterations


# ---------------------------------------------------------------------------
# Reports

@dataclass
class BerPoint:
    ebno_db: float
    frames: int = 0
    frame_errors: int = 0
    bits: int = 0
    bit_errors: int = 0
    iterations: int = 0
    bit_error_sq: int = 0       # sum over frames of (bit errors in frame)**2
    wall_time: float = field(default=0.0, compare=False)

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames if self.frames else 0.0

    @property
    def mean_iterations(self) -> float:
        return self.iterations / self.frames if self.frames else 0.0

    @property
    def ber_stderr(self) -> float:
        """Standard error of the BER from the per-frame bit-error variance."""
        if self.frames < 2:
            return math.inf
        n_bits = self.bits / self.frames
        mean = self.bit_errors / self.frames
        var = (self.bit_error_sq - self.frames * mean**2) / (self.frames - 1)
        return math.sqrt(max(var, 0.0) / self.frames) / n_bits

    def add(self, frames, frame_errors, bits, bit_errors, iterations, bit_error_sq):
        self.frames += frames
        self.frame_errors += frame_errors
        self.bits += bits
        self.bit_errors += bit_errors
        self.iterations += iterations
        self.bit_error_sq += bit_error_sq


@dataclass
class BerReport:
    points: list[BerPoint]
    provenance: dict[str, str] = field(default_factory=dict)

    def point(self, ebno_db) -> BerPoint:
        for p in self.points:
            if p.ebno_db == ebno_db:
                return p
        raise KeyError(ebno_db)


def _fmt(x) -> str:
    return repr(float(x))


def emit_csv(report: BerReport) -> str:
    buf = io.StringIO()
    for key, value in report.provenance.items():
        buf.write(f"# {key}={value}\n")
    buf.write(CSV_HEADER + "\n")
    for p in report.points:
        buf.write(",".join([_fmt(p.ebno_db), str(p.frames), str(p.frame_errors), str(p.bits),
                            str(p.bit_errors), _fmt(p.ber), _fmt(p.fer),
                            _fmt(p.mean_iterations)]) + "\n")
    return buf.getvalue()


def parse_csv(text: str) -> BerReport:
    provenance, points, header_seen = {}, [], False
    for no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            provenance[key] = value
            continue
        if not header_seen:
            if line.strip() != CSV_HEADER:
                raise ValueError(f"line {no}: unexpected header {line!r}")
            header_seen = True
            continue
        cols = line.split(",")
        if len(cols) != 8:
            raise ValueError(f"line {no}: expected 8 columns")
        p = BerPoint(float(cols[0]), int(cols[1]), int(cols[2]), int(cols[3]), int(cols[4]))
        p.iterations = round(float(cols[7]) * p.frames)
        points.append(p)
    if not header_seen:
        raise ValueError("missing CSV header")
    return BerReport(points, provenance)


# ---------------------------------------------------------------------------
# Simulation

@dataclass
class ExperimentConfig:
    code: LinearCode
    decoder: object                     # BpFrameDecoder or MrrdFrameDecoder
    snrs: tuple[float, ...]
    min_frame_errors: int = DEFAULT_MIN_FRAME_ERRORS
    max_frames: int = DEFAULT_MAX_FRAMES
    seed: int = 0
    workers: int = 1
    initial_batch: int = 256
    max_batch: int = 4096
    all_zero: bool = False

    def __post_init__(self):
        if len(self.snrs) == 0:
            raise ValueError("SNR grid must be nonempty")
        if self.min_frame_errors < 1:
            raise ValueError("min_frame_errors must be >= 1")
        if self.max_frames < 1 or self.workers < 1:
            raise ValueError("max_frames and workers must be >= 1")


def simulate_frames(code, decoders, ebno_db, seed, key, frames, all_zero=False):
    """Counts for each decoder on ``frames`` frames of stream ``(seed, *key)``."""
    rng = channel.rng_stream(seed, *key)
    if all_zero:
        bits = np.zeros((frames, code.n), np.uint8)
    else:
        bits = code.encode(rng.integers(0, 2, (frames, code.k), dtype=np.uint8))
    sigma = channel.sigma_from_ebno(ebno_db, code.rate)
    y = channel.transmit(rng, channel.modulate(bits), sigma)
    llr = channel.llr(y, sigma)
    out = []
    for dec in decoders:
        hard, iters = dec(code, llr, y, key)
        errs = np.count_nonzero(hard != bits, axis=-1)
        out.append((frames, int(np.count_nonzero(errs)), frames * code.n, int(errs.sum()),
                    int(np.sum(iters)), int(np.sum(errs.astype(np.int64) ** 2))))
    return out


_WORKER_STATE = {}


def _init_worker(code, decoders, seed, all_zero):
    _WORKER_STATE.update(code=code, decoders=decoders, seed=seed, all_zero=all_zero)


def _worker_task(args):
    ebno, key, frames = args
    s = _WORKER_STATE
    return simulate_frames(s["code"], s["decoders"], ebno, s["seed"], key, frames, s["all_zero"])


def _next_batch(points, target, initial, max_batch, workers):
    """Deterministic per-worker batch size from the counts so far."""
    worst = min(points, key=lambda p: (p.frame_errors, -p.frames))
    if worst.frames == 0:
        return initial
    if worst.frame_errors == 0:
        return min(2 * max(worst.frames // workers, initial), max_batch)
    need = (target - worst.frame_errors) * worst.frames / worst.frame_errors
    return int(min(max(need / workers, initial / 4), max_batch))


def compare_decoders(code, decoders, snrs, min_frame_errors=DEFAULT_MIN_FRAME_ERRORS,
                     max_frames=DEFAULT_MAX_FRAMES, seed=0, workers=1, initial_batch=256,
                     max_batch=4096, all_zero=False) -> list[list[BerPoint]]:
    """Run every decoder on the same frames.

    At each SNR frames are added until every decoder has at least
    ``min_frame_errors`` frame errors or ``max_frames`` is reached. Returns one
    list of points per decoder.
    """
    results = [[] for _ in decoders]
    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(workers, initializer=_init_worker,
                                   initargs=(code, decoders, seed, all_zero))
    try:
        for si, ebno in enumerate(snrs):
            pts = [BerPoint(float(ebno)) for _ in decoders]
            rnd = 0
            while min(p.frame_errors for p in pts) < min_frame_errors and pts[0].frames < max_frames:
                size = _next_batch(pts, min_frame_errors, initial_batch, max_batch, workers)
                left = max_frames - pts[0].frames
                sizes = [min(size, max(0, left - w * size)) for w in range(workers)]
                tasks = [(float(ebno), (0, si, w, rnd), n) for w, n in enumerate(sizes) if n > 0]
                if pool is None:
                    outs = [simulate_frames(code, decoders, e, seed, k, n, all_zero)
                            for e, k, n in tasks]
                else:
                    outs = list(pool.map(_worker_task, tasks))
                for out in outs:  # worker order
                    for p, counts in zip(pts, out):
                        p.add(*counts)
                rnd += 1
            for res, p in zip(results, pts):
                res.append(p)
    finally:
        if pool is not None:
            pool.shutdown()
    return results


def provenance(code: LinearCode, decoder, seed, workers, extra=None) -> dict[str, str]:
    prov = {"code_id": code.code_id, "n": str(code.n), "k": str(code.k),
            "h_hash": code.h_hash, "decoder": decoder.describe(), "seed": str(seed),
            "workers": str(workers), "version": f"neuralbp {__version__}"}
    prov.update(extra or {})
    return prov


def run_ber_sweep(config: ExperimentConfig) -> BerReport:
    (points,) = compare_decoders(config.code, [config.decoder], config.snrs,
                                 config.min_frame_errors, config.max_frames, config.seed,
                                 config.workers, config.initial_batch, config.max_batch,
                                 config.all_zero)
    prov = provenance(config.code, config.decoder, config.seed, config.workers,
                      {"min_frame_errors": str(config.min_frame_errors),
                       "max_frames": str(config.max_frames)})
    return BerReport(points, prov)


# ---------------------------------------------------------------------------
# Exhaustive oracles

def _codebook(code: LinearCode):
    if code.k > 20:
        raise ValueError(f"exhaustive oracle needs K <= 20, got {code.k}")
    return code.codebook()


def exhaustive_map_oracle(code: LinearCode, llr) -> np.ndarray:
    """Exact bitwise posteriors Pr(c_v = 1 | y) by enumeration of the codebook."""
    book = _codebook(code).astype(float)
    llr = np.asarray(llr, float)
    score = llr @ book.T                     # log-likelihood up to a per-frame constant
    norm = logsumexp(score, axis=-1)
    with np.errstate(divide="ignore"):
        num = logsumexp(score[..., :, None] + np.log(book), axis=-2)
    return np.exp(num - norm[..., None])


def exhaustive_ml_oracle(code: LinearCode, y) -> np.ndarray:
    """Maximum-correlation codeword; ties go to the lexicographically smallest."""
    book = _codebook(code)
    book = book[np.lexsort(book.T[::-1])]
    scores = np.asarray(y, float) @ (1.0 - 2.0 * book.T)
    return book[np.argmax(scores, axis=-1)]
