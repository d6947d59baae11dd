"""Hot per-PE kernels, jit-compiled when numba is available.

The simulator calls these once per (PE, nuclide slice, superstep); at
full tile sizes that is millions of calls on ~30-particle arrays, where
numpy dispatch overhead dominates.  Each function has a numpy fallback
with identical float32/float64 operation order, so results are bitwise
independent of whether numba is present; the test suite asserts this.
"""

from __future__ import annotations

import numpy as np

from .rng import LCG_MULTIPLIER

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is normally installed
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

_MASK63 = np.uint64((1 << 63) - 1)
_A = np.uint64(LCG_MULTIPLIER)
_ONE = np.uint64(1)
_NORM = 1.0 / float(1 << 63)


@njit(cache=True)
def _jit_lookup_linear(energies, xs, e, macro, density):
    top = len(energies) - 2
    n_channels = xs.shape[1]
    for p in range(len(e)):
        ep = e[p]
        lo, hi = 0, len(energies)
        while lo < hi:
            mid = (lo + hi) >> 1
            if ep < energies[mid]:
                hi = mid
            else:
                lo = mid + 1
        i = lo - 1
        if i > top:
            i = top
        e_lo = energies[i]
        e_hi = energies[i + 1]
        f = (e_hi - ep) / (e_hi - e_lo)
        for r in range(n_channels):
            xl = xs[i, r]
            xh = xs[i + 1, r]
            macro[p, r] += density * (xh - f * (xh - xl))


@njit(cache=True)
def _jit_lookup_stochastic(energies, xs, e, macro, density, state):
    top = len(energies) - 2
    n_channels = xs.shape[1]
    s = np.uint64(state)
    for p in range(len(e)):
        ep = e[p]
        lo, hi = 0, len(energies)
        while lo < hi:
            mid = (lo + hi) >> 1
            if ep < energies[mid]:
                hi = mid
            else:
                lo = mid + 1
        i = lo - 1
        if i > top:
            i = top
        s = (_A * s + _ONE) & _MASK63
        u = np.float64(s) * _NORM
        e_lo = np.float64(energies[i])
        e_hi = np.float64(energies[i + 1])
        sample = e_lo + u * (e_hi - e_lo)
        pick = i + 1 if np.float64(ep) >= sample else i
        for r in range(n_channels):
            macro[p, r] += density * xs[pick, r]
    return s


@njit(cache=True)
def _jit_partition_by_band(e, ids, bounds, row):
    n = len(e)
    last = len(bounds) - 2
    target = np.empty(n, dtype=np.int64)
    n_keep = n_up = n_down = 0
    for p in range(n):
        ep = e[p]
        lo, hi = 0, len(bounds)
        while lo < hi:
            mid = (lo + hi) >> 1
            if ep < bounds[mid]:
                hi = mid
            else:
                lo = mid + 1
        t = lo - 1
        if t > last:
            t = last
        target[p] = t
        if t == row:
            n_keep += 1
        elif t < row:
            n_up += 1
        else:
            n_down += 1
    keep_e = np.empty(n_keep, dtype=np.float32)
    keep_i = np.empty(n_keep, dtype=np.uint64)
    up_e = np.empty(n_up, dtype=np.float32)
    up_i = np.empty(n_up, dtype=np.uint64)
    down_e = np.empty(n_down, dtype=np.float32)
    down_i = np.empty(n_down, dtype=np.uint64)
    a = b = c = 0
    for p in range(n):
        t = target[p]
        if t == row:
            keep_e[a] = e[p]
            keep_i[a] = ids[p]
            a += 1
        elif t < row:
            up_e[b] = e[p]
            up_i[b] = ids[p]
            b += 1
        else:
            down_e[c] = e[p]
            down_i[c] = ids[p]
            c += 1
    return keep_e, keep_i, up_e, up_i, down_e, down_i


def _np_lookup_linear(energies, xs, e, macro, density):
    idx = np.minimum(
        np.searchsorted(energies, e, side="right") - 1, len(energies) - 2
    )
    e_lo = energies[idx]
    e_hi = energies[idx + 1]
    f = (e_hi - e) / (e_hi - e_lo)
    lo = xs[idx]
    hi = xs[idx + 1]
    macro += density * (hi - f[:, None] * (hi - lo))


def _np_lookup_stochastic(energies, xs, e, macro, density, state):
    from .rng import lcg_uniforms

    idx = np.minimum(
        np.searchsorted(energies, e, side="right") - 1, len(energies) - 2
    )
    state, u = lcg_uniforms(int(state), len(e))
    e_lo = energies[idx].astype(np.float64)
    e_hi = energies[idx + 1].astype(np.float64)
    sample = e_lo + u * (e_hi - e_lo)
    pick = np.where(e.astype(np.float64) >= sample, idx + 1, idx)
    macro += density * xs[pick]
    return state


def _np_partition_by_band(e, ids, bounds, row):
    target = np.minimum(
        np.searchsorted(bounds, e, side="right") - 1, len(bounds) - 2
    )
    keep = target == row
    up = target < row
    down = target > row
    return e[keep], ids[keep], e[up], ids[up], e[down], ids[down]


if HAVE_NUMBA:
    lookup_linear = _jit_lookup_linear
    lookup_stochastic = _jit_lookup_stochastic
    partition_by_band = _jit_partition_by_band
else:  # pragma: no cover
    lookup_linear = _np_lookup_linear
    lookup_stochastic = _np_lookup_stochastic
    partition_by_band = _np_partition_by_band
