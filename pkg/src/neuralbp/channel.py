"""BPSK over the binary-input AWGN channel.

Mapping is 0 -> +1, 1 -> -1. LLRs follow log Pr(c=1|y) / Pr(c=0|y), so a
positive LLR favours bit 1 and ``llr = -2 y / sigma**2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigma_from_ebno(ebno_db, rate):
    """Noise standard deviation for a given Eb/N0 (dB) and code rate."""
    if not 0 < rate <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    return 1.0 / np.sqrt(2.0 * rate * 10.0 ** (np.asarray(ebno_db, dtype=float) / 10.0))


@dataclass(frozen=True)
class ChannelConfig:
    ebno_db: float
    rate: float

    @property
    def sigma(self) -> float:
        return float(sigma_from_ebno(self.ebno_db, self.rate))


def rng_stream(seed: int, *stream_id: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *stream_id)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=stream_id)))


def modulate(bits) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(bits, dtype=float)


def transmit(rng: np.random.Generator, symbols, sigma) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    # sigma may be per-frame, shaped to broadcast against the leading axis
    if sigma.ndim == 1 and symbols.ndim == 2:
        sigma = sigma[:, None]
    return symbols + sigma * rng.standard_normal(symbols.shape)


def llr(received, sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive to form LLRs")
    received = np.asarray(received, dtype=float)
    if sigma.ndim == 1 and received.ndim == 2:
        sigma = sigma[:, None]
    return -2.0 * received / sigma**2


def hard_decision(llrs) -> np.ndarray:
    """Bit 1 iff the LLR is strictly positive; ties go to 0."""
    return (np.asarray(llrs) > 0).astype(np.uint8)
