"""Communication patterns of the decomposed lookup pipeline.

A run proceeds in stages, each built from supersteps of the grid engine:

1. init: every PE starts with the same number of particles.  In random
   mode energies are uniform over [0, 1); in ideal mode each row's quota
   is sampled inside its own band and the column is then shuffled, so the
   sort stage still does full work but ends perfectly balanced.
2. column sort: h - 1 neighbor exchanges move every particle to the row
   whose energy band contains it (one row per superstep, so the worst
   case particle realizes the bound exactly).
3. diffusion: each iteration every PE passes half its particles to its
   right neighbor (periodic), flattening per-row load peaks.
4. round robin: an initial local lookup pass, then w - 1 rightward
   exchanges (periodic) so each particle accumulates every column's
   nuclides exactly once.

Per-particle accumulation order is therefore: the nuclides of the column
the particle occupied when round robin began, then successive columns
ascending with wraparound, nuclides within a column in ascending id.
An alternative row-reduction pattern (broadcast, bulk compute, chain
reduction) is provided for comparison.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext

import numpy as np

from . import _fastpath
from .errors import OutOfRangeError, ProtocolError
from .gridsim import (
    DOWN,
    LEFT,
    RIGHT,
    UP,
    CycleModel,
    GridConfig,
    ParticleBlock,
    PeGrid,
    PeState,
    PipelineStageTrace,
    SimReport,
    build_grid,
    charge_message,
    finalize_report,
    superstep,
)
from .kernel import Particle
from .rng import lcg_uniforms, mix_seed, shuffle_in_place
from .xsdata import Material

# Stream-id offset for the per-column shuffle streams used in ideal mode.
IDEAL_COLUMN_STREAM_BASE = 1 << 33


def _pool(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else nullcontext()


def init_particles(grid: PeGrid) -> None:
    """Give every PE its starting particles per the configured distribution."""
    config = grid.config
    n = config.n_particles_per_pe
    h, w = config.tile_h, config.tile_w

    if config.distribution == "random":
        for pe in grid.all_pes():
            pe.rng_state, u = lcg_uniforms(pe.rng_state, n)
            ids = (np.uint64(pe.pe_index * n) + np.arange(n, dtype=np.uint64))
            pe.particles = ParticleBlock(u.astype(np.float32), ids)
        return

    # ideal: sample each row's quota inside its own band, then shuffle the
    # column so sorting still has work to do but ends exactly uniform
    bounds64 = grid.bounds.astype(np.float64)
    for c in range(w):
        energies = np.empty(h * n, dtype=np.float32)
        ids = np.empty(h * n, dtype=np.uint64)
        for r in range(h):
            pe = grid.pe(r, c)
            pe.rng_state, u = lcg_uniforms(pe.rng_state, n)
            e = (bounds64[r] + u * (bounds64[r + 1] - bounds64[r])).astype(np.float32)
            if r < h - 1:
                # float32 rounding may land on the upper bound; keep in band
                top = np.nextafter(grid.bounds[r + 1], np.float32(0.0), dtype=np.float32)
                e = np.minimum(e, top)
            energies[r * n : (r + 1) * n] = e
            ids[r * n : (r + 1) * n] = np.uint64(pe.pe_index * n) + np.arange(
                n, dtype=np.uint64
            )
        perm = np.arange(h * n, dtype=np.int64)
        shuffle_in_place(perm, mix_seed(config.seed, IDEAL_COLUMN_STREAM_BASE + c))
        for r in range(h):
            take = perm[r * n : (r + 1) * n]
            grid.pe(r, c).particles = ParticleBlock(energies[take], ids[take])


def _sort_message_words(config: GridConfig, count: int) -> int:
    return 1 + count * config.sort_wire_words


def column_sort(
    grid: PeGrid,
    *,
    threads: int = 1,
    skip_final_superstep: bool = False,
    arrival_log: dict[int, int] | None = None,
) -> PipelineStageTrace:
    """Move every particle to the row owning its energy band.

    Runs one local claim pass (each PE scans its starting particles,
    keeps the in-band ones and posts the rest toward their band) followed
    by exactly h - 1 exchange supersteps.  Each superstep a PE scans its
    arrivals, claims those in band and forwards the rest one row onward,
    so a particle needing k hops is claimed at superstep k.

    skip_final_superstep is a fault-injection hook for the verification
    suite: the final forwarding round is cut short, stranding particles
    that still needed one hop on the wrong row (visible for h >= 3).
    """
    config, model = grid.config, grid.model
    h = config.tile_h
    bounds = grid.bounds
    moved = 0
    costs: list[tuple[int, int]] = []
    clock_start = grid.clock

    empty = ParticleBlock.empty()

    def classify(pe: PeState, block: ParticleBlock, check_range: bool = False):
        if not len(block):
            return empty, empty, empty
        e = block.energies
        if check_range and (e.min() < 0.0 or e.max() > 1.0):
            bad = e[(e < 0.0) | (e > 1.0)][0]
            raise OutOfRangeError(f"particle energy {bad!r} outside [0, 1]")
        pe.charge(other=model.c_sort_scan * len(block))
        ke, ki, ue, ui, de, di = _fastpath.partition_by_band(
            e, block.ids, bounds, pe.row
        )
        return (
            ParticleBlock(ke, ki),
            ParticleBlock(ue, ui),
            ParticleBlock(de, di),
        )

    def post_sends(pe: PeState, up: ParticleBlock, down: ParticleBlock):
        if pe.row > 0:
            pe.send(UP, up)
            pe.charge(other=charge_message(model, _sort_message_words(config, len(up)), 1))
        elif len(up):
            raise ProtocolError(f"PE (0,{pe.col}) has particles below the lowest band")
        if pe.row < h - 1:
            pe.send(DOWN, down)
            pe.charge(
                other=charge_message(model, _sort_message_words(config, len(down)), 1)
            )
        elif len(down):
            raise ProtocolError(
                f"PE ({pe.row},{pe.col}) has particles above the highest band"
            )
        pe._sent = len(up) + len(down)

    def log_claims(pe: PeState, claimed: ParticleBlock, k: int):
        if arrival_log is not None:
            for pid in claimed.ids:
                arrival_log[int(pid)] = k

    def claim_pass(pe: PeState):
        keep, up, down = classify(pe, pe.particles, check_range=True)
        pe.particles = keep
        log_claims(pe, keep, 0)
        post_sends(pe, up, down)

    costs.append(superstep(grid, claim_pass, stage="sort", threads=threads))
    moved += sum(getattr(pe, "_sent", 0) for pe in grid.all_pes())

    exchanges = h - 1
    suppress_at = 0
    if skip_final_superstep:
        exchanges = max(0, h - 2)
        suppress_at = exchanges

    with _pool(threads) as pool:
        for k in range(1, exchanges + 1):
            def exchange(pe: PeState, k=k, strand=(k == suppress_at)):
                arrivals = ParticleBlock.concat(
                    pe.take_inbox(UP) + pe.take_inbox(DOWN)
                )
                keep, up, down = classify(pe, arrivals)
                pe.particles = ParticleBlock.concat([pe.particles, keep])
                log_claims(pe, keep, k)
                if strand:
                    pe.particles = ParticleBlock.concat([pe.particles, up, down])
                    pe._sent = 0
                else:
                    post_sends(pe, up, down)

            costs.append(
                superstep(
                    grid,
                    exchange,
                    stage="sort",
                    exchange=True,
                    threads=threads,
                    pool=pool if threads > 1 else None,
                )
            )
            moved += sum(getattr(pe, "_sent", 0) for pe in grid.all_pes())

    if skip_final_superstep:
        # adopt anything still in flight, wherever it happens to be
        for pe in grid.all_pes():
            arrivals = ParticleBlock.concat(pe.take_inbox(UP) + pe.take_inbox(DOWN))
            pe.particles = ParticleBlock.concat([pe.particles, arrivals])
            pe.inbox = {}
    else:
        for pe in grid.all_pes():
            stragglers = sum(
                len(b) for msgs in pe.inbox.values() for b in msgs
            )
            if stragglers:
                raise ProtocolError(
                    f"{stragglers} particles still in flight after "
                    f"{h - 1} sort supersteps"
                )
            pe.inbox = {}

    trace = PipelineStageTrace("sort", h - 1, moved, grid.clock - clock_start, costs)
    grid.traces.append(trace)
    return trace


def diffuse(grid: PeGrid, iterations: int, *, threads: int = 1) -> PipelineStageTrace:
    """Flatten per-row load peaks by repeated halving transfers.

    Each iteration every PE sends floor(count / 2) particles (the tail of
    its local list) to its right neighbor with periodic wraparound and
    appends what arrives from its left.  Row totals are conserved and the
    per-row maximum never increases.
    """
    config, model = grid.config, grid.model
    moved = 0
    costs: list[tuple[int, int]] = []
    clock_start = grid.clock
    before = grid.total_particles()

    with _pool(threads) as pool:
        for _ in range(iterations):
            def push_half(pe: PeState):
                keep, tail = pe.particles.split_tail(len(pe.particles) // 2)
                pe.particles = keep
                pe.send(RIGHT, tail, periodic=True)
                pe.charge(
                    other=charge_message(
                        model, _sort_message_words(config, len(tail)), 1
                    )
                )
                pe._sent = len(tail)

            def adopt(pe: PeState):
                arrivals = pe.take_inbox(LEFT)
                pe.particles = ParticleBlock.concat([pe.particles] + arrivals)

            costs.append(
                superstep(
                    grid,
                    push_half,
                    post_fn=adopt,
                    stage="diffuse",
                    exchange=True,
                    threads=threads,
                    pool=pool if threads > 1 else None,
                )
            )
            moved += sum(getattr(pe, "_sent", 0) for pe in grid.all_pes())

    if grid.total_particles() != before:
        raise ProtocolError("diffusion lost or duplicated particles")
    trace = PipelineStageTrace(
        "diffuse", iterations, moved, grid.clock - clock_start, costs
    )
    grid.traces.append(trace)
    return trace


def _lookup_block(pe: PeState, block: ParticleBlock, model: CycleModel, mode: str) -> None:
    """Accumulate all of this PE's nuclides into a particle block, in id order."""
    if not len(block):
        return
    for sl, density in zip(pe.slices, pe.densities):
        if mode == "linear":
            _fastpath.lookup_linear(
                sl.energies, sl.xs, block.energies, block.macro, density
            )
        else:
            pe.rng_state = int(
                _fastpath.lookup_stochastic(
                    sl.energies, sl.xs, block.energies, block.macro, density,
                    pe.rng_state,
                )
            )
        pe.charge(lookup=model.lookup_cycles(mode, sl.n_points) * len(block))


def round_robin(grid: PeGrid, mode: str | None = None, *, threads: int = 1) -> PipelineStageTrace:
    """Circulate particles rightward so each visits every column once.

    Superstep 0 performs lookups for the particles each PE already holds;
    each of the following w - 1 exchange supersteps sends the full held
    set right (periodic), then performs lookups for the arrivals.
    """
    config, model = grid.config, grid.model
    mode = mode or config.mode
    w = config.tile_w
    n_channels = config.n_channels
    row_counts_before = grid.particle_counts().sum(axis=1)
    moved = 0
    costs: list[tuple[int, int]] = []
    clock_start = grid.clock

    def local_pass(pe: PeState):
        pe.particles.macro = np.zeros((len(pe.particles), n_channels), dtype=np.float32)
        _lookup_block(pe, pe.particles, model, mode)

    costs.append(superstep(grid, local_pass, stage="roundrobin", threads=threads))

    particle_words = 1 + n_channels
    with _pool(threads) as pool:
        for _ in range(w - 1):
            def forward(pe: PeState):
                block = pe.particles
                pe.particles = ParticleBlock.empty(n_channels)
                pe.send(RIGHT, block, periodic=True)
                pe.charge(
                    other=charge_message(model, 1 + len(block) * particle_words, 1)
                )
                pe._sent = len(block)

            def arrive(pe: PeState):
                arrivals = pe.take_inbox(LEFT)
                if len(arrivals) != 1:
                    raise ProtocolError(
                        f"PE ({pe.row},{pe.col}) expected one round-robin message, "
                        f"got {len(arrivals)}"
                    )
                pe.particles = arrivals[0]
                _lookup_block(pe, pe.particles, model, mode)

            costs.append(
                superstep(
                    grid,
                    forward,
                    post_fn=arrive,
                    stage="roundrobin",
                    exchange=True,
                    threads=threads,
                    pool=pool if threads > 1 else None,
                )
            )
            moved += sum(getattr(pe, "_sent", 0) for pe in grid.all_pes())

    row_counts_after = grid.particle_counts().sum(axis=1)
    if not np.array_equal(row_counts_before, row_counts_after):
        raise ProtocolError("round robin changed per-row particle counts")

    trace = PipelineStageTrace(
        "roundrobin", w - 1, moved, grid.clock - clock_start, costs
    )
    grid.traces.append(trace)
    return trace


def row_reduce(grid: PeGrid, mode: str | None = None, *, threads: int = 1) -> list[Particle]:
    """Alternative accumulation: broadcast particles, compute, chain-reduce.

    Every row's particle set is first replicated to all of its PEs
    (w - 1 rightward broadcast supersteps), each PE then computes partial
    results for the whole row over its local nuclides in one bulk pass,
    and a left-to-right chain of w - 1 sends sums the partials onto the
    rightmost PE.  Unlike round robin, no superstep mixes lookups with
    communication.  The broadcast's replicated buffers are tracked as
    cycle cost but are host-side bookkeeping, not PE-resident particles.

    Returns the reduced particles (energy, id, macroscopic vector) in
    row-major row order, each row ordered by source column.
    """
    config, model = grid.config, grid.model
    mode = mode or config.mode
    h, w = config.tile_h, config.tile_w
    n_channels = config.n_channels
    costs: list[tuple[int, int]] = []
    clock_start = grid.clock

    # host-side bookkeeping, keyed per PE so worker threads never resize
    gathered: dict[int, dict[int, ParticleBlock]] = {
        pe.pe_index: {pe.col: pe.particles} for pe in grid.all_pes()
    }
    relay: dict[int, tuple[int, ParticleBlock]] = {
        pe.pe_index: (pe.col, pe.particles) for pe in grid.all_pes()
    }
    partials: dict[int, ParticleBlock | None] = {
        pe.pe_index: None for pe in grid.all_pes()
    }

    with _pool(threads) as pool:
        pool_arg = pool if threads > 1 else None

        for _ in range(w - 1):
            def broadcast(pe: PeState):
                origin, block = relay[pe.pe_index]
                pe.send(RIGHT, (origin, block), periodic=True)
                pe.charge(
                    other=charge_message(
                        model, _sort_message_words(config, len(block)), 1
                    )
                )

            def adopt(pe: PeState):
                (origin, block), = pe.take_inbox(LEFT)
                gathered[pe.pe_index][origin] = block
                relay[pe.pe_index] = (origin, block)

            costs.append(
                superstep(
                    grid,
                    broadcast,
                    post_fn=adopt,
                    stage="rowreduce",
                    exchange=True,
                    threads=threads,
                    pool=pool_arg,
                )
            )

        def bulk_compute(pe: PeState):
            parts = [gathered[pe.pe_index][c] for c in range(w)]
            block = ParticleBlock.concat(parts) if w > 1 else parts[0]
            block = ParticleBlock(block.energies, block.ids)
            block.macro = np.zeros((len(block), n_channels), dtype=np.float32)
            _lookup_block(pe, block, model, mode)
            partials[pe.pe_index] = block

        costs.append(superstep(grid, bulk_compute, stage="rowreduce", threads=threads))

        for j in range(1, w):
            def chain_send(pe: PeState, j=j):
                if pe.col == j - 1:
                    pe.send(RIGHT, partials[pe.pe_index].macro)
                    words = 1 + len(partials[pe.pe_index]) * n_channels
                    pe.charge(other=charge_message(model, words, 1))

            def chain_add(pe: PeState, j=j):
                if pe.col == j:
                    (incoming,) = pe.take_inbox(LEFT)
                    partials[pe.pe_index].macro += incoming

            costs.append(
                superstep(
                    grid,
                    chain_send,
                    post_fn=chain_add,
                    stage="rowreduce",
                    exchange=True,
                    threads=threads,
                    pool=pool_arg,
                )
            )

    trace = PipelineStageTrace(
        "rowreduce", w - 1, 0, grid.clock - clock_start, costs
    )
    grid.traces.append(trace)

    results = []
    for r in range(h):
        block = partials[grid.pe(r, w - 1).pe_index]
        for k in range(len(block)):
            results.append(
                Particle(block.energies[k], block.macro[k].copy(), int(block.ids[k]))
            )
    return results


def run_pipeline(
    config: GridConfig,
    *,
    material: Material | None = None,
    model: CycleModel | None = None,
    threads: int = 1,
    trace_sink: list[PipelineStageTrace] | None = None,
) -> SimReport:
    """Full run: build, init, sort, optional diffusion, round robin, report.

    trace_sink, if given, receives the per-stage traces of the run.
    """
    model = model or CycleModel()
    grid = build_grid(config, material, model)
    init_particles(grid)
    column_sort(grid, threads=threads)
    grid.peak_load_before = grid.peak_load()
    if config.diffusion_iters > 0:
        diffuse(grid, config.diffusion_iters, threads=threads)
    grid.peak_load_after = grid.peak_load()
    round_robin(grid, threads=threads)
    grid.pipeline_complete = True
    if trace_sink is not None:
        trace_sink.extend(grid.traces)
    return finalize_report(grid, config, model)
