"""Counter-based randomness: Philox streams plus stable seed derivation.

Every stochastic component draws from its own Philox stream, keyed by
(seed, stream). Stream ids are derived from string labels so independent
stages (model init, per-round exploitation, per-environment generation)
never share draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_stream(*parts) -> int:
    """Stable 64-bit stream id from a label tuple (order-sensitive)."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def philox(seed: int, *stream_parts) -> np.random.Generator:
    """Generator on the Philox stream (seed, derive_stream(*stream_parts))."""
    key = np.array([seed & _MASK64, derive_stream(*stream_parts)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def data_keyed_uniforms(rows: np.ndarray, targets: np.ndarray, seed: int) -> np.ndarray:
    """One uniform in [0, 1) per sample, keyed by the sample's bytes and the seed.

    Permuting the samples permutes the outputs identically, which keeps
    jittered optimizers permutation-equivariant.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    key = (seed & _MASK64).to_bytes(8, "little")
    out = np.empty(rows.shape[0])
    for i in range(rows.shape[0]):
        digest = hashlib.blake2b(
            rows[i].tobytes() + targets[i].tobytes(), key=key, digest_size=8
        ).digest()
        out[i] = int.from_bytes(digest, "little") / 2.0**64
    return out
