"""Shared-memory reference paths used as oracles and baselines.

Three independent routes to the same macroscopic results live here:

* a unionized energy grid (UEG) that merges every nuclide's energy points
  and pre-tabulates per-nuclide bracket indices, so a lookup needs a
  single binary search instead of one per nuclide;
* an order-matched batch oracle that accumulates nuclides in exactly the
  order the distributed round robin visits them, written as a plain
  straight-line loop so the pipeline can be checked bitwise against an
  implementation that shares none of its code;
* an energy-sorted batch baseline that sorts particles before looking
  them up and restores the original order afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .kernel import Particle, lower_bound
from .rng import lcg_next, mix_seed
from .xsdata import Material


@dataclass(frozen=True)
class UnionizedGrid:
    """Merged energy grid with per-nuclide lower-bound index table.

    index_table[k, j] is the largest index into nuclide j's grid whose
    energy is <= union_energies[k]; union points below a nuclide's first
    gridpoint clamp to 0 (impossible for generated data, whose grids all
    start at 0.0, but defined for safety).
    """

    union_energies: np.ndarray  # float32, strictly increasing, deduplicated
    index_table: np.ndarray  # int32 [n_union, n_nuclides]

    @property
    def n_union(self) -> int:
        return len(self.union_energies)

    @property
    def memory_bytes(self) -> int:
        return self.union_energies.nbytes + self.index_table.nbytes


def ueg_structure_bytes(
    n_union: int, n_nuclides: int, index_width: int = 4
) -> int:
    """Size estimate of a UEG: union energies plus the full index table."""
    return n_union * 4 + n_union * n_nuclides * index_width


def build_ueg(material: Material) -> UnionizedGrid:
    """Merge all nuclide grids and tabulate per-nuclide bracket indices."""
    union = np.unique(np.concatenate([g.energies for g in material.nuclides]))
    table = np.empty((len(union), material.n_nuclides), dtype=np.int32)
    for j, grid in enumerate(material.nuclides):
        idx = np.searchsorted(grid.energies, union, side="right") - 1
        table[:, j] = np.maximum(idx, 0)
    return UnionizedGrid(union, table)


def lookup_ueg(
    ueg: UnionizedGrid,
    material: Material,
    e: float,
    mode: str = "linear",
    rng_state: int = 0,
) -> tuple[np.ndarray, int]:
    """Macroscopic lookup with one union search instead of one per nuclide.

    Because every nuclide gridpoint is also a union point, the table row
    of the union bracket reproduces each nuclide's own lower bound
    exactly, and linear-mode results are bitwise equal to the per-nuclide
    search path.
    """
    k = lower_bound(ueg.union_energies, e)
    macro = np.zeros(material.n_channels, dtype=np.float32)
    e32 = np.float32(e)
    for j, (grid, density) in enumerate(zip(material.nuclides, material.densities)):
        i = min(int(ueg.index_table[k, j]), grid.n_gridpoints - 2)
        e_low, e_high = grid.energies[i], grid.energies[i + 1]
        if mode == "linear":
            f = (e_high - e32) / (e_high - e_low)
            lo = grid.xs[i]
            hi = grid.xs[i + 1]
            micro = hi - f * (hi - lo)
        elif mode == "stochastic":
            rng_state, u = lcg_next(rng_state)
            s = float(e_low) + u * (float(e_high) - float(e_low))
            micro = grid.xs[i + 1] if float(e32) >= s else grid.xs[i]
        else:
            raise ConfigurationError(f"unknown mode {mode!r}")
        macro += density * micro
    return macro, rng_state


def ueg_bracket_indices(ueg: UnionizedGrid, material: Material, e: float) -> list[int]:
    """Per-nuclide lower-bound indices derived from the union table."""
    k = lower_bound(ueg.union_energies, e)
    return [
        min(int(ueg.index_table[k, j]), material.nuclides[j].n_gridpoints - 2)
        for j in range(material.n_nuclides)
    ]


def oracle_batch(
    material: Material,
    particles: list[Particle],
    column_order: list[list[int]],
    start_columns: list[int] | None = None,
) -> list[np.ndarray]:
    """Order-matched oracle for the distributed round-robin pipeline.

    column_order[c] lists the nuclide ids column c owns; together the
    columns must cover every nuclide exactly once.  Each particle is
    accumulated starting from its start column's nuclides, then successive
    columns ascending with wraparound, so linear-mode results can be
    compared bitwise against the pipeline.

    Deliberately written as a straight-line scalar loop independent of
    the kernel and pattern code paths.
    """
    seen = sorted(nid for col in column_order for nid in col)
    if seen != list(range(material.n_nuclides)):
        raise ConfigurationError(
            "column_order must list every nuclide exactly once"
        )
    n_cols = len(column_order)
    if start_columns is None:
        start_columns = [0] * len(particles)
    if len(start_columns) != len(particles):
        raise ConfigurationError("one start column is required per particle")

    results = []
    for p, start in zip(particles, start_columns):
        e = np.float32(p.energy)
        macro = np.zeros(material.n_channels, dtype=np.float32)
        for hop in range(n_cols):
            col = (start + hop) % n_cols
            for nid in column_order[col]:
                grid = material.nuclides[nid]
                i = int(np.searchsorted(grid.energies, e, side="right")) - 1
                i = min(i, grid.n_gridpoints - 2)
                e_low = grid.energies[i]
                e_high = grid.energies[i + 1]
                f = (e_high - e) / (e_high - e_low)
                lo = grid.xs[i]
                hi = grid.xs[i + 1]
                macro += material.densities[nid] * (hi - f * (hi - lo))
        results.append(macro)
    return results


def sorted_batch(
    material: Material,
    particles: list[Particle],
    mode: str = "linear",
    rng_seed: int = 0,
) -> list[np.ndarray]:
    """Look up a batch in ascending-energy order, then restore input order.

    Sorting is stable with ties broken by particle id.  Per-particle work
    is independent, so linear-mode results are bitwise identical to the
    unsorted path; only stochastic draws depend on the processing order.
    """
    from .kernel import lookup_all_nuclides

    order = sorted(
        range(len(particles)), key=lambda i: (particles[i].energy, particles[i].id)
    )
    state = mix_seed(rng_seed, 0)
    results: list[np.ndarray | None] = [None] * len(particles)
    for i in order:
        results[i], state = lookup_all_nuclides(
            material, particles[i].energy, mode, state
        )
    return results
