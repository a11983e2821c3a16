"""Unrolled belief-propagation decoders with learnable weights, min-sum
variants, relaxation, permutation decoding and a Monte-Carlo BER harness."""

__version__ = "0.1.0"
