"""Per-particle cross-section computation.

The macroscopic cross section of a material at energy e is the density-
weighted sum over nuclides of the microscopic value interpolated from
each nuclide's table:

    Sigma[r] = sum_n  rho_n * sigma_{n,r}(e)

For each nuclide a binary search finds the bracketing gridpoints, then
either linear interpolation

    f = (e_high - e) / (e_high - e_low)
    sigma = sigma_high - f * (sigma_high - sigma_low)

or stochastic interpolation is applied.  The stochastic form draws a
sample s uniformly inside the bracket and selects the higher gridpoint's
values when e >= s, the lower otherwise, so the selection probability
equals the linear weight and the expectation matches linear interpolation
while skipping the float32 divide.

All tabulated arithmetic is float32.  The uniform draw is generated in
float64 and the sample s is formed in float64 from the widened bracket
endpoints, which guarantees s <= e_high exactly (a query at e_high always
selects the higher gridpoint, and a query at e_low selects the lower
unless the draw is exactly zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateBracketError, OutOfRangeError
from .rng import lcg_next, lcg_uniforms
from .xsdata import GridSlice, Material


@dataclass
class Particle:
    """A particle: its energy and the macroscopic accumulator vector."""

    energy: np.float32
    macro_xs: np.ndarray  # float32 [n_channels]
    id: int = 0

    @staticmethod
    def fresh(energy: float, n_channels: int, id: int = 0) -> "Particle":
        return Particle(np.float32(energy), np.zeros(n_channels, dtype=np.float32), id)


@dataclass(frozen=True)
class InterpBracket:
    """Bracketing gridpoints and the linear interpolation factor for one query."""

    lower_index: int
    e_low: np.float32
    e_high: np.float32
    f: np.float32


def lower_bound(energies: np.ndarray, e: float) -> int:
    """Largest index i with energies[i] <= e, clamped to len - 2.

    The clamp keeps i + 1 valid, so e equal to the top gridpoint brackets
    against the final interval.  Queries outside the table raise
    OutOfRangeError: they indicate a mis-sorted particle or a bad slice.
    """
    if e < energies[0] or e > energies[-1]:
        raise OutOfRangeError(
            f"energy {e!r} outside table [{energies[0]!r}, {energies[-1]!r}]"
        )
    i = int(np.searchsorted(energies, np.float32(e), side="right")) - 1
    return min(i, len(energies) - 2)


def lower_bound_many(energies: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Vectorized lower_bound over a float32 query array."""
    if len(e) and (e.min() < energies[0] or e.max() > energies[-1]):
        bad = e[(e < energies[0]) | (e > energies[-1])][0]
        raise OutOfRangeError(
            f"energy {bad!r} outside table [{energies[0]!r}, {energies[-1]!r}]"
        )
    idx = np.searchsorted(energies, e, side="right") - 1
    return np.minimum(idx, len(energies) - 2)


def interp_factor(e_low: float, e_high: float, e: float) -> np.float32:
    """Linear interpolation factor (e_high - e) / (e_high - e_low), float32."""
    if not (e_low < e_high):
        raise DegenerateBracketError(f"degenerate bracket [{e_low!r}, {e_high!r}]")
    e_low = np.float32(e_low)
    e_high = np.float32(e_high)
    return (e_high - np.float32(e)) / (e_high - e_low)


def bracket(energies: np.ndarray, e: float) -> InterpBracket:
    """Locate e in a sorted table and compute its interpolation factor."""
    i = lower_bound(energies, e)
    e_low, e_high = energies[i], energies[i + 1]
    return InterpBracket(i, e_low, e_high, interp_factor(e_low, e_high, e))


def micro_xs_linear(slice_xs: np.ndarray, brk: InterpBracket) -> np.ndarray:
    """Interpolated channel vector sigma_high - f * (sigma_high - sigma_low)."""
    lo = slice_xs[brk.lower_index]
    hi = slice_xs[brk.lower_index + 1]
    return hi - brk.f * (hi - lo)


def micro_xs_stochastic(
    sl: GridSlice, lower_index: int, e: float, rng_state: int
) -> tuple[np.ndarray, int]:
    """Select one bracketing gridpoint's channel vector at random.

    Consumes exactly one generator draw.  The higher gridpoint is chosen
    with probability (e - e_low) / (e_high - e_low).
    """
    rng_state, u = lcg_next(rng_state)
    e_low = float(sl.energies[lower_index])
    e_high = float(sl.energies[lower_index + 1])
    s = e_low + u * (e_high - e_low)
    pick = lower_index + 1 if float(e) >= s else lower_index
    return sl.xs[pick].copy(), rng_state


def accumulate(particle: Particle, micro: np.ndarray, density: float) -> Particle:
    """Add density * micro into the particle's macroscopic vector, in place."""
    if len(micro) != len(particle.macro_xs):
        raise ConfigurationError(
            f"channel mismatch: micro has {len(micro)}, "
            f"particle has {len(particle.macro_xs)}"
        )
    particle.macro_xs += np.float32(density) * np.asarray(micro, dtype=np.float32)
    return particle


def lookup_all_nuclides(
    material: Material, e: float, mode: str = "linear", rng_state: int = 0
) -> tuple[np.ndarray, int]:
    """Full macroscopic lookup over every nuclide of the material, in id order.

    This is the shared-memory single-kernel form: one binary search per
    nuclide on its full grid.  Linear mode consumes no generator draws;
    stochastic mode consumes exactly one per nuclide.
    """
    macro = np.zeros(material.n_channels, dtype=np.float32)
    e32 = np.float32(e)
    for grid, density in zip(material.nuclides, material.densities):
        i = lower_bound(grid.energies, e32)
        if mode == "linear":
            e_low, e_high = grid.energies[i], grid.energies[i + 1]
            f = interp_factor(e_low, e_high, e32)
            lo = grid.xs[i]
            hi = grid.xs[i + 1]
            micro = hi - f * (hi - lo)
        elif mode == "stochastic":
            rng_state, u = lcg_next(rng_state)
            s = float(grid.energies[i]) + u * (
                float(grid.energies[i + 1]) - float(grid.energies[i])
            )
            micro = grid.xs[i + 1] if float(e32) >= s else grid.xs[i]
        else:
            raise ConfigurationError(f"unknown mode {mode!r}")
        macro += density * micro
    return macro, rng_state


# -- vectorized forms used by the grid simulator ----------------------------


def micro_linear_block(
    energies: np.ndarray, xs: np.ndarray, e: np.ndarray
) -> np.ndarray:
    """Linear interpolation of a particle batch against one table.

    Elementwise float32 operation order matches the scalar path, so the
    results are bitwise identical to per-particle evaluation.
    """
    idx = lower_bound_many(energies, e)
    e_low = energies[idx]
    e_high = energies[idx + 1]
    f = (e_high - e) / (e_high - e_low)
    lo = xs[idx]
    hi = xs[idx + 1]
    return hi - f[:, None] * (hi - lo)


def micro_stochastic_block(
    energies: np.ndarray, xs: np.ndarray, e: np.ndarray, rng_state: int
) -> tuple[np.ndarray, int]:
    """Stochastic selection for a particle batch; one draw per particle."""
    idx = lower_bound_many(energies, e)
    rng_state, u = lcg_uniforms(rng_state, len(e))
    e_low = energies[idx].astype(np.float64)
    e_high = energies[idx + 1].astype(np.float64)
    s = e_low + u * (e_high - e_low)
    pick = np.where(e.astype(np.float64) >= s, idx + 1, idx)
    return xs[pick], rng_state


def accumulate_block(
    macro: np.ndarray, micro: np.ndarray, density: np.float32
) -> None:
    """macro += density * micro for a particle batch, float32 in place."""
    macro += density * micro
