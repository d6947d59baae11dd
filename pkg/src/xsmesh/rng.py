"""Seeded 63-bit linear congruential generator with independent streams.

All randomness in the package flows through this generator so that every
run is bit-reproducible from a single seed.  The recurrence is

    state' = (2806196910506780709 * state + 1) mod 2**63
    u      = state' / 2**63

Independent streams are derived with :func:`mix_seed`, which scrambles a
(seed, stream_id) pair through a golden-ratio multiply plus eight warm-up
steps of the generator.
"""

from __future__ import annotations

import numpy as np

LCG_MULTIPLIER = 2806196910506780709
LCG_INCREMENT = 1
LCG_MOD_BITS = 63
_MASK = (1 << LCG_MOD_BITS) - 1
_NORM = 1.0 / float(1 << LCG_MOD_BITS)

_GOLDEN = 0x9E3779B97F4A7C15

# Block size for the vectorized generator; per-offset multipliers and
# increment sums are precomputed once at import.
_BLOCK = 8192


def lcg_next(state: int) -> tuple[int, float]:
    """Advance the generator one step.

    Returns ``(state', u)`` where ``u = state' / 2**63`` lies in [0, 1).
    """
    state = (LCG_MULTIPLIER * state + LCG_INCREMENT) & _MASK
    return state, state * _NORM


def mix_seed(seed: int, stream_id: int) -> int:
    """Derive the starting state of an independent stream.

    The stream id is spread across the word with a golden-ratio multiply,
    XORed into the seed, and the result is pushed through eight generator
    steps to decorrelate nearby ids.
    """
    state = (seed ^ ((stream_id * _GOLDEN) & _MASK)) & _MASK
    for _ in range(8):
        state, _ = lcg_next(state)
    return state


def _block_tables(length: int) -> tuple[np.ndarray, np.ndarray]:
    # powers[t] = A**(t+1) mod 2**63, incsum[t] = sum_{j<=t} A**j mod 2**63,
    # so state after t+1 steps is powers[t]*s0 + incsum[t]*C (mod 2**63).
    powers = np.empty(length, dtype=np.uint64)
    incsum = np.empty(length, dtype=np.uint64)
    p, s = LCG_MULTIPLIER, 1
    for t in range(length):
        powers[t] = p & _MASK
        incsum[t] = s & _MASK
        s = (s + p) & _MASK
        p = (p * LCG_MULTIPLIER) & _MASK
    return powers, incsum


_POWERS, _INCSUM = _block_tables(_BLOCK)
_MASK_U64 = np.uint64(_MASK)


def lcg_states(state: int, count: int) -> tuple[int, np.ndarray]:
    """Produce ``count`` successive generator states as a uint64 array.

    Bitwise identical to ``count`` calls of :func:`lcg_next`; the closed
    form state(t) = A**t * s0 + C * (A**(t-1) + ... + 1) is evaluated per
    block so the sequential recurrence vectorizes.
    """
    out = np.empty(count, dtype=np.uint64)
    filled = 0
    s0 = np.uint64(state)
    while filled < count:
        k = min(_BLOCK, count - filled)
        block = (_POWERS[:k] * s0 + _INCSUM[:k]) & _MASK_U64
        out[filled : filled + k] = block
        s0 = block[-1]
        filled += k
    return int(s0), out


def lcg_uniforms(state: int, count: int) -> tuple[int, np.ndarray]:
    """Draw ``count`` uniforms in [0, 1) as float64, advancing the state."""
    state, states = lcg_states(state, count)
    return state, states.astype(np.float64) * _NORM


def shuffle_in_place(values: np.ndarray, state: int) -> int:
    """Fisher-Yates shuffle driven by the generator; returns the new state."""
    n = len(values)
    for i in range(n - 1, 0, -1):
        state, u = lcg_next(state)
        j = int(u * (i + 1))
        values[i], values[j] = values[j], values[i]
    return state
