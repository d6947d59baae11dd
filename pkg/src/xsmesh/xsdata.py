"""Synthetic cross-section data: generation, band slicing, serialization.

A material is a set of nuclides, each tabulating several reaction-channel
values on its own sorted energy grid.  Energies are normalized to [0, 1]
with both endpoints forced, so every sampled particle energy is bracketed
by two gridpoints.  All tabulated values are float32.

For the decomposed simulator the energy axis is cut into equal-width
bands, one per grid row; :func:`slice_for_band` extracts the portion of a
nuclide's table one processing element stores, including one padding
point on each side so any in-band lookup stays local.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError
from .rng import lcg_uniforms, mix_seed

# Stream-id offset separating density streams from nuclide grid streams.
DENSITY_STREAM_BASE = 1 << 32

WMCX_MAGIC = b"WMCX"
WMCX_VERSION = 1


@dataclass(frozen=True)
class NuclideGrid:
    """One nuclide's energy grid and per-gridpoint reaction-channel values."""

    nuclide_id: int
    energies: np.ndarray  # float32 [n_gridpoints], strictly increasing, 0.0 .. 1.0
    xs: np.ndarray  # float32 [n_gridpoints, n_channels], values in [0, 1)

    @property
    def n_gridpoints(self) -> int:
        return len(self.energies)

    @property
    def n_channels(self) -> int:
        return self.xs.shape[1]

    @property
    def nbytes(self) -> int:
        return self.energies.nbytes + self.xs.nbytes


@dataclass(frozen=True)
class Material:
    """Nuclide set plus per-nuclide number-density weights."""

    nuclides: list[NuclideGrid]
    densities: np.ndarray  # float32 [n_nuclides], all > 0

    @property
    def n_nuclides(self) -> int:
        return len(self.nuclides)

    @property
    def n_channels(self) -> int:
        return self.nuclides[0].n_channels

    @property
    def nbytes(self) -> int:
        return sum(g.nbytes for g in self.nuclides)


@dataclass(frozen=True)
class EnergyBand:
    """Contiguous energy sub-interval owned by one grid row.

    Band r of h covers [r/h, (r+1)/h); the last band includes 1.0.  Bounds
    are stored as float32 and all band membership tests compare against
    these stored values, so assignment is consistent everywhere.
    """

    row_index: int
    e_lo: np.float32
    e_hi: np.float32
    is_last: bool

    @staticmethod
    def for_row(row: int, n_rows: int) -> "EnergyBand":
        if not (0 <= row < n_rows):
            raise ConfigurationError(f"row {row} outside grid of {n_rows} rows")
        bounds = band_bounds(n_rows)
        return EnergyBand(row, bounds[row], bounds[row + 1], row == n_rows - 1)


def band_bounds(n_rows: int) -> np.ndarray:
    """Float32 band boundary array of length n_rows + 1 (0.0 ... 1.0)."""
    bounds = (np.arange(n_rows + 1, dtype=np.float64) / n_rows).astype(np.float32)
    bounds[0] = np.float32(0.0)
    bounds[-1] = np.float32(1.0)
    return bounds


def band_of(energies: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Row index owning each energy, consistent with the float32 bounds."""
    idx = np.searchsorted(bounds, energies, side="right") - 1
    return np.minimum(idx, len(bounds) - 2)


@dataclass(frozen=True)
class GridSlice:
    """The part of one nuclide's table stored on one processing element.

    Contains every parent gridpoint inside the band plus one padding point
    below e_lo and one at/above e_hi (where they exist), so that any query
    in the band is bracketed by two consecutive slice points.
    """

    nuclide_id: int
    band: EnergyBand
    energies: np.ndarray  # float32, contiguous sub-range of the parent grid
    xs: np.ndarray  # float32 [len(energies), n_channels]
    global_offset: int  # index of energies[0] in the parent grid

    @property
    def n_points(self) -> int:
        return len(self.energies)

    @property
    def nbytes(self) -> int:
        return self.energies.nbytes + self.xs.nbytes


def resolve_duplicate_energies(energies: np.ndarray) -> np.ndarray:
    """Nudge duplicate interior points up by the smallest float32 step.

    The array must be sorted.  Endpoints are pinned at 0.0 and 1.0; a
    nudge cascading into the upper endpoint would break monotonicity and
    is rejected (cannot occur for realistic gridpoint counts).
    """
    out = energies.copy()
    for i in range(1, len(out)):
        if out[i] <= out[i - 1]:
            out[i] = np.nextafter(out[i - 1], np.float32(np.inf), dtype=np.float32)
    if len(out) > 1 and out[-2] >= out[-1]:
        raise ConfigurationError("energy grid too dense to keep strictly increasing")
    return out


def generate_nuclide_grid(
    seed: int, nuclide_id: int, n_gridpoints: int, n_channels: int
) -> NuclideGrid:
    """Generate one nuclide's synthetic table from stream mix(seed, nuclide_id).

    Energies are the forced endpoints {0.0, 1.0} around n_gridpoints - 2
    sorted uniform draws; channel values are uniform in [0, 1).  The same
    (seed, nuclide_id) always reproduces the identical table bit for bit.
    """
    if n_gridpoints < 2:
        raise ConfigurationError(f"n_gridpoints must be >= 2, got {n_gridpoints}")
    if n_channels < 1:
        raise ConfigurationError(f"n_channels must be >= 1, got {n_channels}")

    state = mix_seed(seed, nuclide_id)
    state, interior = lcg_uniforms(state, n_gridpoints - 2)
    energies = np.empty(n_gridpoints, dtype=np.float32)
    energies[0] = 0.0
    energies[-1] = 1.0
    energies[1:-1] = np.sort(interior.astype(np.float32))
    energies = resolve_duplicate_energies(energies)

    state, draws = lcg_uniforms(state, n_gridpoints * n_channels)
    xs = draws.astype(np.float32).reshape(n_gridpoints, n_channels)
    return NuclideGrid(nuclide_id, energies, xs)


def generate_material(
    seed: int, n_nuclides: int, n_gridpoints: int, n_channels: int
) -> Material:
    """Generate a full material; densities are uniform in (0, 1]."""
    if n_nuclides < 1:
        raise ConfigurationError(f"n_nuclides must be >= 1, got {n_nuclides}")
    nuclides = [
        generate_nuclide_grid(seed, i, n_gridpoints, n_channels)
        for i in range(n_nuclides)
    ]
    densities = np.empty(n_nuclides, dtype=np.float32)
    for i in range(n_nuclides):
        _, u = lcg_uniforms(mix_seed(seed, DENSITY_STREAM_BASE + i), 1)
        densities[i] = np.float32(1.0 - u[0])  # (0, 1]
    return Material(nuclides, densities)


def slice_for_band(grid: NuclideGrid, band: EnergyBand) -> GridSlice:
    """Extract the band's gridpoints plus one bracketing point per side.

    An empty in-band set still yields the two bracketing padding points,
    so every query in [e_lo, e_hi) can be interpolated locally.
    """
    e = grid.energies
    i0 = int(np.searchsorted(e, band.e_lo, side="left"))
    if band.is_last:
        i1 = len(e)
    else:
        i1 = int(np.searchsorted(e, band.e_hi, side="left"))
    lo = i0 - 1 if i0 > 0 else 0
    hi = i1 + 1 if i1 < len(e) else len(e)
    return GridSlice(
        nuclide_id=grid.nuclide_id,
        band=band,
        energies=np.ascontiguousarray(e[lo:hi]),
        xs=np.ascontiguousarray(grid.xs[lo:hi]),
        global_offset=lo,
    )


def footprint_bytes(slices: list[GridSlice], buffer_reserve: int = 0) -> int:
    """Bytes of table data held by one PE, plus a particle-buffer reserve.

    Each slice point costs 4 bytes of energy plus 4 bytes per channel.
    Callers compare the result against the per-PE memory budget.
    """
    total = buffer_reserve
    for s in slices:
        total += s.n_points * 4 + s.n_points * s.xs.shape[1] * 4
    return total


# -- flat binary cache (magic "WMCX") --------------------------------------


def save_material(material: Material, path: str) -> None:
    """Write a material to the WMCX flat binary format.

    Layout: magic, u32 version, u32 counts (nuclides, gridpoints,
    channels), float32 densities, then per nuclide the energy array
    followed by the row-major channel table.  All values little-endian.
    """
    n = material.n_nuclides
    g = material.nuclides[0].n_gridpoints
    c = material.n_channels
    with open(path, "wb") as f:
        f.write(WMCX_MAGIC)
        f.write(np.array([WMCX_VERSION, n, g, c], dtype="<u4").tobytes())
        f.write(material.densities.astype("<f4").tobytes())
        for grid in material.nuclides:
            f.write(grid.energies.astype("<f4").tobytes())
            f.write(grid.xs.astype("<f4").tobytes())


def load_material(path: str) -> Material:
    """Read a WMCX file back; raises FormatError on corruption."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 20 or data[:4] != WMCX_MAGIC:
        raise FormatError(f"{path}: not a WMCX file")
    version, n, g, c = np.frombuffer(data[4:20], dtype="<u4")
    if version != WMCX_VERSION:
        raise FormatError(f"{path}: unsupported WMCX version {version}")
    expected = 20 + 4 * n + n * (4 * g + 4 * g * c)
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for counts "
            f"({n} nuclides, {g} gridpoints, {c} channels), found {len(data)}"
        )
    off = 20
    densities = np.frombuffer(data, dtype="<f4", count=int(n), offset=off).astype(
        np.float32
    )
    off += 4 * int(n)
    nuclides = []
    for i in range(int(n)):
        energies = np.frombuffer(data, dtype="<f4", count=int(g), offset=off).astype(
            np.float32
        )
        off += 4 * int(g)
        xs = (
            np.frombuffer(data, dtype="<f4", count=int(g * c), offset=off)
            .astype(np.float32)
            .reshape(int(g), int(c))
        )
        off += 4 * int(g * c)
        nuclides.append(NuclideGrid(i, energies, xs))
    return Material(nuclides, densities)


def wmcx_file_bytes(n_nuclides: int, n_gridpoints: int, n_channels: int) -> int:
    """Exact WMCX file size for the given counts."""
    return 20 + 4 * n_nuclides + n_nuclides * (
        4 * n_gridpoints + 4 * n_gridpoints * n_channels
    )
