"""Deterministic superstep simulator of the 2D processing-element grid.

The machine model is a tile of tile_h x tile_w processing elements, each
with a small local memory, connected only to its four neighbors.  Tiles
replicate the same decomposed dataset and run independently, so one tile
is simulated and whole-machine figures scale by the tile count.

Execution is bulk-synchronous: in each superstep every PE runs a step
function against its own state and outgoing mailboxes, and every message
produced is delivered before the next superstep begins.  Delivery order
is fixed by topology (row-major sender order, FIFO per link), so results
are bitwise independent of evaluation order and worker count.

Costs are charged analytically per superstep from :class:`CycleModel`:
lookup compute per (particle, nuclide), per-message ramp and per-word hop
charges, a per-particle scan cost during sorting, and a fixed
orchestration cost per communication iteration.  PE cycle counters are
synchronized to the slowest PE at each superstep boundary, which models
the stall time that load imbalance creates on real hardware.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PipelineStateError, ProtocolError
from .rng import mix_seed
from .xsdata import (
    EnergyBand,
    GridSlice,
    Material,
    band_bounds,
    footprint_bytes,
    generate_material,
    slice_for_band,
)

UP, DOWN, LEFT, RIGHT = "up", "down", "left", "right"
_OPPOSITE = {UP: DOWN, DOWN: UP, LEFT: RIGHT, RIGHT: LEFT}

MEMORY_BUDGET_BYTES = 49152
CLOCK_HZ = 850_000_000


@dataclass(frozen=True)
class GridConfig:
    """Problem shape, decomposition and run options for one simulation."""

    tile_h: int
    tile_w: int
    n_particles_per_pe: int
    n_nuclides: int
    n_gridpoints: int
    n_channels: int = 5
    tiles_y: int = 1
    tiles_x: int = 1
    seed: int = 1
    mode: str = "linear"  # linear | stochastic
    distribution: str = "random"  # random | ideal
    diffusion_iters: int = 0
    memory_budget_bytes: int = MEMORY_BUDGET_BYTES
    sort_wire_full: bool = False  # sort/diffuse messages carry channels too

    def validate(self) -> None:
        if self.tile_h < 1 or self.tile_w < 1:
            raise ConfigurationError("tile dimensions must be >= 1")
        if self.tiles_y < 1 or self.tiles_x < 1:
            raise ConfigurationError("tile counts must be >= 1")
        if self.n_nuclides < 1:
            raise ConfigurationError("need at least one nuclide")
        if self.n_nuclides % self.tile_w != 0:
            raise ConfigurationError(
                f"n_nuclides ({self.n_nuclides}) must be divisible by "
                f"tile_w ({self.tile_w})"
            )
        if self.n_particles_per_pe < 0:
            raise ConfigurationError("particle count must be >= 0")
        if self.mode not in ("linear", "stochastic"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.distribution not in ("random", "ideal"):
            raise ConfigurationError(f"unknown distribution {self.distribution!r}")
        if self.diffusion_iters < 0:
            raise ConfigurationError("diffusion_iters must be >= 0")

    @property
    def n_tiles(self) -> int:
        return self.tiles_y * self.tiles_x

    @property
    def total_pes(self) -> int:
        return self.tile_h * self.tile_w * self.n_tiles

    @property
    def nuclides_per_column(self) -> int:
        return self.n_nuclides // self.tile_w

    @property
    def particle_bytes(self) -> int:
        # energy word plus one word per channel
        return 4 * (1 + self.n_channels)

    @property
    def sort_wire_words(self) -> int:
        return 1 + self.n_channels if self.sort_wire_full else 1


@dataclass(frozen=True)
class CycleModel:
    """Calibrated per-operation cycle costs.

    c_lookup_* are cycles per particle per nuclide for the two kernel
    modes.  Messages cost one ramp traversal at each end plus one hop
    cycle per 32-bit word per router hop.  c_iteration is the fixed
    orchestration cost every PE pays per communication iteration (buffer
    and length handling); c_sort_scan is the cost of examining one
    particle during band claiming.  c_div_fp32 is informational only.
    The optional log2 coefficient lets lookup cost grow with the local
    gridpoint count; the default keeps it constant.
    """

    c_lookup_linear: int = 463
    c_lookup_stochastic: int = 250
    c_hop_word: int = 1
    c_ramp: int = 7
    c_div_fp32: int = 50
    clock_hz: int = CLOCK_HZ
    c_iteration: int = 200
    c_sort_scan: int = 8
    c_lookup_log2_coeff: float = 0.0

    def validate(self) -> None:
        for name in (
            "c_lookup_linear",
            "c_lookup_stochastic",
            "c_hop_word",
            "c_ramp",
            "c_div_fp32",
            "c_iteration",
            "c_sort_scan",
        ):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.clock_hz <= 0:
            raise ConfigurationError("clock_hz must be > 0")

    def lookup_cycles(self, mode: str, n_points: int = 0) -> int:
        base = self.c_lookup_linear if mode == "linear" else self.c_lookup_stochastic
        if self.c_lookup_log2_coeff:
            return int(round(base + self.c_lookup_log2_coeff * math.log2(max(n_points, 2))))
        return base


def charge_message(model: CycleModel, n_words: int, n_hops: int) -> int:
    """Cycle cost of one message: ramp down, per-word transit, ramp up."""
    if n_words < 0:
        raise ConfigurationError("n_words must be >= 0")
    return 2 * model.c_ramp + n_words * model.c_hop_word * n_hops


class ParticleBlock:
    """Struct-of-arrays particle storage local to one PE."""

    __slots__ = ("energies", "ids", "macro")

    def __init__(self, energies: np.ndarray, ids: np.ndarray, macro=None):
        self.energies = energies
        self.ids = ids
        self.macro = macro  # float32 [k, n_channels] once lookups begin

    @staticmethod
    def empty(n_channels: int | None = None) -> "ParticleBlock":
        macro = None
        if n_channels is not None:
            macro = np.zeros((0, n_channels), dtype=np.float32)
        return ParticleBlock(
            np.empty(0, dtype=np.float32), np.empty(0, dtype=np.uint64), macro
        )

    def __len__(self) -> int:
        return len(self.energies)

    @property
    def nbytes(self) -> int:
        n = self.macro.nbytes if self.macro is not None else 0
        return self.energies.nbytes + n

    def select(self, mask_or_idx) -> "ParticleBlock":
        macro = self.macro[mask_or_idx] if self.macro is not None else None
        return ParticleBlock(
            self.energies[mask_or_idx], self.ids[mask_or_idx], macro
        )

    def split_tail(self, count: int) -> tuple["ParticleBlock", "ParticleBlock"]:
        """(head, tail) with the last ``count`` particles in the tail."""
        cut = len(self) - count
        return self.select(slice(None, cut)), self.select(slice(cut, None))

    @staticmethod
    def concat(blocks: list["ParticleBlock"]) -> "ParticleBlock":
        blocks = [b for b in blocks if len(b)]
        if not blocks:
            return ParticleBlock.empty()
        macro = None
        if blocks[0].macro is not None:
            macro = np.concatenate([b.macro for b in blocks])
        return ParticleBlock(
            np.concatenate([b.energies for b in blocks]),
            np.concatenate([b.ids for b in blocks]),
            macro,
        )


class PeState:
    """One processing element: its table slices, particles, RNG and clock."""

    __slots__ = (
        "row",
        "col",
        "pe_index",
        "band",
        "nuclide_ids",
        "slices",
        "densities",
        "particles",
        "rng_state",
        "cycles",
        "slices_bytes",
        "inbox",
        "_outbox",
        "_step_lookup",
        "_step_other",
        "_sent",
    )

    def __init__(self, row, col, pe_index, band, nuclide_ids, slices, densities, rng_state):
        self.row = row
        self.col = col
        self.pe_index = pe_index
        self.band: EnergyBand = band
        self.nuclide_ids: list[int] = nuclide_ids
        self.slices: list[GridSlice] = slices
        self.densities: np.ndarray = densities
        self.particles = ParticleBlock.empty()
        self.rng_state = rng_state
        self.cycles = 0
        self.slices_bytes = footprint_bytes(slices)
        self.inbox: dict[str, list] = {}
        self._outbox: list[tuple[str, object, bool]] = []
        self._step_lookup = 0
        self._step_other = 0
        self._sent = 0

    def send(self, direction: str, payload, periodic: bool = False) -> None:
        self._outbox.append((direction, payload, periodic))

    def charge(self, lookup: int = 0, other: int = 0) -> None:
        self._step_lookup += lookup
        self._step_other += other
        self.cycles += lookup + other

    def take_inbox(self, direction: str) -> list:
        return self.inbox.pop(direction, [])


@dataclass
class PipelineStageTrace:
    """Summary of one pipeline stage run.

    superstep_costs holds (max lookup cycles, max other cycles) per
    superstep across the tile, including non-exchange passes.
    """

    stage: str
    supersteps: int
    particles_moved: int
    max_pe_cycles: int
    superstep_costs: list[tuple[int, int]] = field(default_factory=list)


class PeGrid:
    """One simulated tile plus logical replication bookkeeping."""

    def __init__(self, config: GridConfig, model: CycleModel, material: Material):
        self.config = config
        self.model = model
        self.material = material
        self.bounds = band_bounds(config.tile_h)
        self.pes: list[list[PeState]] = []
        self.clock = 0
        self.compute_cycles = 0
        self.stage_overhead: dict[str, int] = {}
        self.traces: list[PipelineStageTrace] = []
        self.pipeline_complete = False
        self.peak_load_before: float | None = None
        self.peak_load_after: float | None = None

    # -- topology ----------------------------------------------------------

    def pe(self, row: int, col: int) -> PeState:
        return self.pes[row][col]

    def all_pes(self) -> list[PeState]:
        return [pe for row in self.pes for pe in row]

    def _resolve(self, pe: PeState, direction: str, periodic: bool) -> PeState:
        h, w = self.config.tile_h, self.config.tile_w
        r, c = pe.row, pe.col
        if direction == UP:
            r -= 1
        elif direction == DOWN:
            r += 1
        elif direction == LEFT:
            c -= 1
        elif direction == RIGHT:
            c += 1
        else:
            raise ProtocolError(f"unknown direction {direction!r}")
        if periodic and direction in (LEFT, RIGHT):
            c %= w
        if not (0 <= r < h and 0 <= c < w):
            raise ProtocolError(
                f"PE ({pe.row},{pe.col}) sent {direction} across a non-periodic edge"
            )
        return self.pes[r][c]

    # -- particle bookkeeping ----------------------------------------------

    def particle_counts(self) -> np.ndarray:
        return np.array(
            [[len(pe.particles) for pe in row] for row in self.pes], dtype=np.int64
        )

    def total_particles(self) -> int:
        held = int(self.particle_counts().sum())
        inflight = sum(
            len(b)
            for pe in self.all_pes()
            for msgs in pe.inbox.values()
            for b in msgs
            if isinstance(b, ParticleBlock)
        )
        return held + inflight

    def peak_load(self) -> float:
        counts = self.particle_counts()
        mean = counts.mean()
        return float(counts.max() / mean) if mean > 0 else 0.0

    def particles_by_id(self) -> dict[int, tuple[np.float32, np.ndarray]]:
        out = {}
        for pe in self.all_pes():
            blk = pe.particles
            for k in range(len(blk)):
                macro = blk.macro[k] if blk.macro is not None else None
                out[int(blk.ids[k])] = (blk.energies[k], macro)
        return out

    def _check_occupancy(self) -> None:
        budget = self.config.memory_budget_bytes
        pb = self.config.particle_bytes
        for pe in self.all_pes():
            held = len(pe.particles) + sum(
                len(b)
                for msgs in pe.inbox.values()
                for b in msgs
                if isinstance(b, ParticleBlock)
            )
            occupancy = pe.slices_bytes + held * pb
            if occupancy > budget:
                raise ConfigurationError(
                    f"PE ({pe.row},{pe.col}) buffer occupancy {occupancy} B "
                    f"exceeds memory budget {budget} B"
                )


def build_grid(
    config: GridConfig,
    material: Material | None = None,
    model: CycleModel | None = None,
) -> PeGrid:
    """Construct one tile: band slices per PE, streams, memory audit.

    Tiles beyond the first are logical replicas sharing the same immutable
    slice data and identical per-PE particle streams, so per-tile metrics
    are identical and whole-machine totals scale by the tile count.
    """
    config.validate()
    model = model or CycleModel()
    model.validate()
    if material is None:
        material = generate_material(
            config.seed, config.n_nuclides, config.n_gridpoints, config.n_channels
        )
    if material.n_nuclides != config.n_nuclides:
        raise ConfigurationError(
            f"material has {material.n_nuclides} nuclides, config wants "
            f"{config.n_nuclides}"
        )
    if material.n_channels != config.n_channels:
        raise ConfigurationError(
            f"material has {material.n_channels} channels, config wants "
            f"{config.n_channels}"
        )

    grid = PeGrid(config, model, material)
    g = config.nuclides_per_column
    reserve = 2 * config.n_particles_per_pe * config.particle_bytes
    for r in range(config.tile_h):
        band = EnergyBand(
            r, grid.bounds[r], grid.bounds[r + 1], r == config.tile_h - 1
        )
        row_pes = []
        for c in range(config.tile_w):
            nuclide_ids = list(range(c * g, (c + 1) * g))
            slices = [
                slice_for_band(material.nuclides[nid], band) for nid in nuclide_ids
            ]
            footprint = footprint_bytes(slices, reserve)
            if footprint > config.memory_budget_bytes:
                raise ConfigurationError(
                    f"PE ({r},{c}) footprint {footprint} B exceeds memory "
                    f"budget {config.memory_budget_bytes} B "
                    f"({len(slices)} slices plus {reserve} B particle reserve)"
                )
            densities = material.densities[nuclide_ids].copy()
            pe_index = r * config.tile_w + c
            row_pes.append(
                PeState(
                    r,
                    c,
                    pe_index,
                    band,
                    nuclide_ids,
                    slices,
                    densities,
                    mix_seed(config.seed, pe_index),
                )
            )
        grid.pes.append(row_pes)
    return grid


def superstep(
    grid: PeGrid,
    step_fn,
    *,
    stage: str = "generic",
    exchange: bool = False,
    post_fn=None,
    threads: int = 1,
    pool: ThreadPoolExecutor | None = None,
) -> tuple[int, int]:
    """Run one superstep: step every PE, deliver messages, sync clocks.

    step_fn(pe) may read the PE's inbox, mutate its state, charge cycles
    and queue sends.  Messages queue during the step and are delivered
    afterwards in row-major sender order, FIFO per link, keyed by the
    direction they arrived from.  post_fn(pe), if given, runs after
    delivery within the same superstep (receive-side processing).

    Exchange supersteps charge every PE the fixed per-iteration
    orchestration cost.  At the end all PE clocks are raised to the
    slowest PE, the superstep's (max lookup, max other) costs are
    accumulated into the grid totals, and buffer occupancy is audited.
    Results are bitwise independent of the worker count.
    """
    pes = grid.all_pes()
    c_iter = grid.model.c_iteration if exchange else 0

    own_pool = None
    if threads > 1 and pool is None:
        pool = own_pool = ThreadPoolExecutor(max_workers=threads)

    def run_chunk(chunk, fn):
        for pe in chunk:
            fn(pe)

    def run_phase(fn):
        if threads > 1 and pool is not None and len(pes) > 1:
            size = (len(pes) + threads - 1) // threads
            chunks = [pes[i : i + size] for i in range(0, len(pes), size)]
            list(pool.map(lambda ch: run_chunk(ch, fn), chunks))
        else:
            run_chunk(pes, fn)

    def step_one(pe: PeState):
        pe._step_lookup = 0
        pe._step_other = 0
        if c_iter:
            pe.charge(other=c_iter)
        step_fn(pe)

    run_phase(step_one)

    # deliver in fixed topology order: row-major senders, FIFO per link
    for pe in pes:
        pe.inbox = {}
    for pe in pes:
        for direction, payload, periodic in pe._outbox:
            dest = grid._resolve(pe, direction, periodic)
            dest.inbox.setdefault(_OPPOSITE[direction], []).append(payload)
        pe._outbox = []

    if post_fn is not None:
        run_phase(post_fn)

    max_lookup = max(pe._step_lookup for pe in pes)
    max_total = max(pe._step_lookup + pe._step_other for pe in pes)
    base = grid.clock
    grid.clock = base + max_total
    for pe in pes:
        pe.cycles = grid.clock
    grid.compute_cycles += max_lookup
    grid.stage_overhead[stage] = grid.stage_overhead.get(stage, 0) + (
        max_total - max_lookup
    )
    grid._check_occupancy()
    if own_pool is not None:
        own_pool.shutdown(wait=True)
    return max_lookup, max_total - max_lookup


@dataclass
class SimReport:
    """Per-run metrics: wall cycles, stage breakdown, load factors, FOM."""

    tile_h: int
    tile_w: int
    tiles_y: int
    tiles_x: int
    total_pes: int
    mode: str
    distribution: str
    diffusion_iters: int
    seed: int
    particles_per_pe: int
    total_lookups: int
    max_cycles: int
    cycles_sort: int
    cycles_diffuse: int
    cycles_roundrobin: int
    cycles_compute: int
    peak_load_before: float
    peak_load_after: float
    fom_lookups_per_s: float
    overhead_vs_ideal_compute: float | None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def finalize_report(grid: PeGrid, config: GridConfig, model: CycleModel) -> SimReport:
    """Assemble the report once the pipeline has completed.

    One "lookup" is a full macroscopic accumulation over every nuclide,
    so total lookups equal the total particle count across all tiles.
    The ideal compute reference is lookup cost x nuclides x particles
    per PE, i.e. a perfectly balanced run with no communication.
    """
    if not grid.pipeline_complete:
        raise PipelineStateError("pipeline has not completed; no report available")
    n = config.n_particles_per_pe
    total_lookups = config.total_pes * n
    max_cycles = grid.clock
    fom = 0.0
    if total_lookups and max_cycles:
        fom = total_lookups / (max_cycles / model.clock_hz)
    overhead = None
    if n > 0:
        ideal = model.lookup_cycles(config.mode) * config.n_nuclides * n
        overhead = max_cycles / ideal - 1.0
    return SimReport(
        tile_h=config.tile_h,
        tile_w=config.tile_w,
        tiles_y=config.tiles_y,
        tiles_x=config.tiles_x,
        total_pes=config.total_pes,
        mode=config.mode,
        distribution=config.distribution,
        diffusion_iters=config.diffusion_iters,
        seed=config.seed,
        particles_per_pe=n,
        total_lookups=total_lookups,
        max_cycles=max_cycles,
        cycles_sort=grid.stage_overhead.get("sort", 0),
        cycles_diffuse=grid.stage_overhead.get("diffuse", 0),
        cycles_roundrobin=grid.stage_overhead.get("roundrobin", 0),
        cycles_compute=grid.compute_cycles,
        peak_load_before=grid.peak_load_before or 0.0,
        peak_load_after=grid.peak_load_after or 0.0,
        fom_lookups_per_s=fom,
        overhead_vs_ideal_compute=overhead,
    )
