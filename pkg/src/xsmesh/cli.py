"""Command-line harness: verification, scaling sweeps, full-tile runs.

Subcommands::

    verify    correctness suite (oracle, UEG, stochastic, sort, diffusion)
    weak      weak-scaling sweep along a row or column, CSV + figure
    strong    strong-scaling sweep at fixed global problem size
    fullsim   the three load-distribution regimes on one configuration
    gen       generate cross-section data and cache it as a WMCX file

Every CSV embeds a '#'-prefixed run manifest; apart from the timestamp
line, identical configurations produce byte-identical files.  Exit codes:
0 success, 1 check failure, 2 configuration error, 3 format or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import subprocess
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, FormatError
from .gridsim import GridConfig, build_grid
from .kernel import Particle, lookup_all_nuclides, micro_stochastic_block
from .patterns import column_sort, diffuse, init_particles, round_robin, run_pipeline
from .reference import build_ueg, lookup_ueg, oracle_batch, ueg_bracket_indices
from .rng import lcg_uniforms, mix_seed
from .xsdata import (
    Material,
    band_of,
    generate_material,
    load_material,
    save_material,
    wmcx_file_bytes,
)

DESK_DEFAULTS = {
    "seed": 1,
    "tile_h": 10,
    "tile_w": 10,
    "tiles_x": 1,
    "tiles_y": 1,
    "nuclides": 20,
    "gridpoints": 1000,
    "channels": 5,
    "particles_per_pe": 10,
    "mode": "linear",
    "distribution": "random",
    "diffusion_iters": 0,
}

_INT_KEYS = {
    "seed",
    "tile_h",
    "tile_w",
    "tiles_x",
    "tiles_y",
    "nuclides",
    "gridpoints",
    "channels",
    "particles_per_pe",
    "diffusion_iters",
}


@dataclass
class RunManifest:
    """Provenance header embedded in every emitted CSV."""

    command: str
    config: dict
    seed: int
    version: str
    timestamp: str

    def header_lines(self) -> list[str]:
        settings = " ".join(f"{k}={v}" for k, v in sorted(self.config.items()))
        return [
            f"# xsmesh {self.command}",
            f"# version={self.version}",
            f"# timestamp={self.timestamp}",
            f"# seed={self.seed}",
            f"# {settings}",
        ]


def artifact_version() -> str:
    try:
        sha = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        ).stdout.strip()
        if sha:
            return f"{__version__}+g{sha}"
    except Exception:
        pass
    return __version__


def make_manifest(command: str, settings: dict) -> RunManifest:
    return RunManifest(
        command=command,
        config=settings,
        seed=settings.get("seed", 0),
        version=artifact_version(),
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )


def write_csv(path: str, manifest: RunManifest, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        for line in manifest.header_lines():
            f.write(line + "\n")
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fieldnames})


def parse_config_file(path: str) -> dict:
    """Read key=value lines; '#' starts a comment, blank lines are skipped."""
    settings = {}
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DESK_DEFAULTS:
                raise ConfigurationError(f"{path}: unknown setting {key!r}")
            settings[key] = int(value) if key in _INT_KEYS else value
    return settings


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, an optional config file, and explicit flags."""
    settings = dict(DESK_DEFAULTS)
    if getattr(args, "config", None):
        settings.update(parse_config_file(args.config))
    for key in DESK_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def grid_config(settings: dict, **overrides) -> GridConfig:
    merged = dict(settings)
    merged.update(overrides)
    return GridConfig(
        tile_h=merged["tile_h"],
        tile_w=merged["tile_w"],
        tiles_y=merged["tiles_y"],
        tiles_x=merged["tiles_x"],
        n_particles_per_pe=merged["particles_per_pe"],
        n_nuclides=merged["nuclides"],
        n_gridpoints=merged["gridpoints"],
        n_channels=merged["channels"],
        seed=merged["seed"],
        mode=merged["mode"],
        distribution=merged["distribution"],
        diffusion_iters=merged["diffusion_iters"],
    )


def load_or_generate(settings: dict, material_path: str | None) -> Material:
    if material_path:
        return load_material(material_path)
    return generate_material(
        settings["seed"], settings["nuclides"], settings["gridpoints"],
        settings["channels"],
    )


def figure_path(out_path: str) -> str:
    return str(Path(out_path).with_suffix(".png"))


def parse_int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as err:
        raise ConfigurationError(f"bad integer list {text!r}") from err
    if not values or any(v < 1 for v in values):
        raise ConfigurationError(f"list entries must be >= 1: {text!r}")
    return values


# -- verify ------------------------------------------------------------------


def _check_oracle_equivalence(settings, material, threads) -> tuple[bool, str]:
    config = grid_config(settings, mode="linear")
    grid = build_grid(config, material)
    init_particles(grid)
    column_sort(grid, threads=threads)
    if config.diffusion_iters:
        diffuse(grid, config.diffusion_iters, threads=threads)
    start_col = {
        int(pid): pe.col for pe in grid.all_pes() for pid in pe.particles.ids
    }
    round_robin(grid, threads=threads)
    column_order = [pe.nuclide_ids for pe in grid.pes[0]]
    final = grid.particles_by_id()
    ids = sorted(final)
    particles = [
        Particle(final[i][0], np.zeros(config.n_channels, np.float32), i) for i in ids
    ]
    expected = oracle_batch(
        grid.material, particles, column_order, [start_col[i] for i in ids]
    )
    mismatches = sum(
        0 if np.array_equal(final[i][1], exp) else 1 for i, exp in zip(ids, expected)
    )
    return mismatches == 0, f"{mismatches} of {len(ids)} particles differ"


def _check_ueg_equivalence(settings, material) -> tuple[bool, str]:
    ueg = build_ueg(material)
    state, draws = lcg_uniforms(mix_seed(settings["seed"], 77), 2000)
    bad = 0
    for e in draws.astype(np.float32):
        via_union, _ = lookup_ueg(ueg, material, e, "linear")
        direct, _ = lookup_all_nuclides(material, e, "linear")
        idx_union = ueg_bracket_indices(ueg, material, e)
        idx_direct = [
            min(
                int(np.searchsorted(g.energies, e, side="right")) - 1,
                g.n_gridpoints - 2,
            )
            for g in material.nuclides
        ]
        if idx_union != idx_direct or not np.array_equal(via_union, direct):
            bad += 1
    return bad == 0, f"{bad} of {len(draws)} energies differ"


def _check_stochastic_mean(settings, material) -> tuple[bool, str]:
    n_draws = 100_000
    state = mix_seed(settings["seed"], 99)
    grid = material.nuclides[0]
    worst = ""
    for trial in range(5):
        state, pick = lcg_uniforms(state, 1)
        i = int(pick[0] * (grid.n_gridpoints - 1))
        i = min(i, grid.n_gridpoints - 2)
        e_lo, e_hi = grid.energies[i], grid.energies[i + 1]
        e = np.float32((float(e_lo) + float(e_hi)) / 2.0)
        e_batch = np.full(n_draws, e, dtype=np.float32)
        micro, state = micro_stochastic_block(grid.energies, grid.xs, e_batch, state)
        linear_f = (e_hi - e) / (e_hi - e_lo)
        expected = grid.xs[i + 1] - linear_f * (grid.xs[i + 1] - grid.xs[i])
        # statistics in float64: float32 accumulation noise rivals sigma/sqrt(n)
        micro64 = micro.astype(np.float64)
        mean = micro64.mean(axis=0)
        sigma = micro64.std(axis=0, ddof=1) / np.sqrt(n_draws)
        if np.any(np.abs(mean - expected) > 3 * np.maximum(sigma, 1e-12)):
            return False, f"bracket {i}: channel mean off by more than 3 sigma"
        frac_high = float((micro == grid.xs[i + 1]).all(axis=1).mean())
        p = 1.0 - float(linear_f)
        binom_sigma = np.sqrt(p * (1 - p) / n_draws)
        if abs(frac_high - p) > 3 * binom_sigma:
            return False, f"bracket {i}: selection frequency off by 3 sigma"
        worst = f"last bracket {i}: mean ok, freq ok"
    return True, worst


def _check_sort(settings, material, corrupt: bool, threads) -> tuple[bool, str]:
    config = grid_config(settings)
    grid = build_grid(config, material)
    init_particles(grid)
    column_sort(grid, threads=threads, skip_final_superstep=corrupt)
    misplaced = 0
    for pe in grid.all_pes():
        target = band_of(pe.particles.energies, grid.bounds)
        misplaced += int((target != pe.row).sum())
    return misplaced == 0, f"{misplaced} particles outside their band"


def _check_diffusion(settings, material, threads) -> tuple[bool, str]:
    config = grid_config(settings, distribution="random")
    grid = build_grid(config, material)
    init_particles(grid)
    column_sort(grid, threads=threads)
    counts = grid.particle_counts()
    row_totals = counts.sum(axis=1)
    peaks = counts.max(axis=1)
    for iteration in range(8):
        diffuse(grid, 1, threads=threads)
        counts = grid.particle_counts()
        if not np.array_equal(counts.sum(axis=1), row_totals):
            return False, f"iteration {iteration}: per-row totals changed"
        new_peaks = counts.max(axis=1)
        if np.any(new_peaks > peaks):
            return False, f"iteration {iteration}: a per-row peak increased"
        peaks = new_peaks
    return True, "8 iterations, peaks non-increasing, totals conserved"


def cmd_verify(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    material = load_or_generate(settings, args.material)
    threads = args.threads
    checks = [
        (
            "oracle_equivalence",
            lambda: _check_oracle_equivalence(settings, material, threads),
        ),
        ("ueg_equivalence", lambda: _check_ueg_equivalence(settings, material)),
        ("stochastic_mean", lambda: _check_stochastic_mean(settings, material)),
        (
            "sort_completeness",
            lambda: _check_sort(settings, material, args.corrupt_sort, threads),
        ),
        ("diffusion_monotone", lambda: _check_diffusion(settings, material, threads)),
    ]
    failures = 0
    for name, run in checks:
        ok, detail = run()
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} check(s) failed")
        return 1
    print("all checks passed")
    return 0


# -- scaling sweeps ----------------------------------------------------------


def _weak_config(axis: str, width: int, n: int, seed: int, mode: str) -> GridConfig:
    if axis == "row":
        return GridConfig(
            tile_h=1,
            tile_w=width,
            n_particles_per_pe=n,
            n_nuclides=width,
            n_gridpoints=1000,
            n_channels=5,
            seed=seed,
            mode=mode,
        )
    return GridConfig(
        tile_h=width,
        tile_w=1,
        n_particles_per_pe=n,
        n_nuclides=1,
        n_gridpoints=1000,
        n_channels=5,
        seed=seed,
        mode=mode,
    )


def cmd_weak(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    widths = parse_int_list(args.width_list)
    n_list = parse_int_list(args.n_list)
    seed, mode = settings["seed"], settings["mode"]
    rows = []
    for n in n_list:
        baseline = run_pipeline(
            _weak_config(args.axis, 1, n, seed, mode), threads=args.threads
        )
        per_unit_1 = baseline.max_cycles / (n if args.axis == "column" else n * 1)
        for width in widths:
            if width == 1:
                report = baseline
            else:
                report = run_pipeline(
                    _weak_config(args.axis, width, n, seed, mode),
                    threads=args.threads,
                )
            work = n if args.axis == "column" else n * width
            per_unit = report.max_cycles / work
            rows.append(
                {
                    "axis": args.axis,
                    "width": width,
                    "n": n,
                    "cycles_per_pe_per_particle": f"{per_unit:.4f}",
                    "efficiency_vs_width1": f"{per_unit_1 / per_unit:.6f}",
                }
            )
    manifest = make_manifest(
        "weak",
        {"axis": args.axis, "widths": args.width_list, "n_list": args.n_list,
         "seed": seed, "mode": mode},
    )
    fields = ["axis", "width", "n", "cycles_per_pe_per_particle", "efficiency_vs_width1"]
    write_csv(args.out, manifest, fields, rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    if not args.no_figures:
        from .plotting import render_weak

        plot_rows = [
            {**r,
             "n": int(r["n"]),
             "width": int(r["width"]),
             "efficiency_vs_width1": float(r["efficiency_vs_width1"])}
            for r in rows
        ]
        render_weak(plot_rows, figure_path(args.out))
        print(f"wrote {figure_path(args.out)}")
    return 0


def _strong_config(axis: str, width: int, seed: int, mode: str) -> GridConfig:
    if axis == "column":
        total_particles, nuclides, gridpoints, channels = 100, 1, 800, 5
        if total_particles % width:
            raise ConfigurationError(
                f"width {width} does not divide {total_particles} particles"
            )
        return GridConfig(
            tile_h=width,
            tile_w=1,
            n_particles_per_pe=total_particles // width,
            n_nuclides=nuclides,
            n_gridpoints=gridpoints,
            n_channels=channels,
            seed=seed,
            mode=mode,
        )
    total_particles, nuclides, gridpoints, channels = 250, 250, 10, 1
    if total_particles % width or nuclides % width:
        raise ConfigurationError(
            f"width {width} does not divide the fixed global problem"
        )
    return GridConfig(
        tile_h=1,
        tile_w=width,
        n_particles_per_pe=total_particles // width,
        n_nuclides=nuclides,
        n_gridpoints=gridpoints,
        n_channels=channels,
        seed=seed,
        mode=mode,
    )


def cmd_strong(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    widths = parse_int_list(args.width_list)
    seed, mode = settings["seed"], settings["mode"]
    rows = []
    for width in widths:
        report = run_pipeline(
            _strong_config(args.axis, width, seed, mode), threads=args.threads
        )
        rows.append(
            {"axis": args.axis, "width": width, "total_cycles": report.max_cycles}
        )
    best = min(rows, key=lambda r: r["total_cycles"])
    for row in rows:
        row["is_minimum"] = 1 if row["width"] == best["width"] else 0
    manifest = make_manifest(
        "strong",
        {"axis": args.axis, "widths": args.width_list, "seed": seed, "mode": mode},
    )
    fields = ["axis", "width", "total_cycles", "is_minimum"]
    write_csv(args.out, manifest, fields, rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    print(f"minimum modeled cycles at width {best['width']}")
    if not args.no_figures:
        from .plotting import render_strong

        render_strong(rows, figure_path(args.out))
        print(f"wrote {figure_path(args.out)}")
    return 0


# -- full simulation ---------------------------------------------------------

_FULLSIM_FIELDS = [
    "regime",
    "tile_h",
    "tile_w",
    "tiles_y",
    "tiles_x",
    "total_pes",
    "mode",
    "particles_per_pe",
    "diffusion_iters",
    "total_lookups",
    "max_cycles",
    "cycles_sort",
    "cycles_diffuse",
    "cycles_roundrobin",
    "cycles_compute",
    "peak_load_before",
    "peak_load_after",
    "fom_lookups_per_s",
    "overhead_vs_ideal_compute",
]


def cmd_fullsim(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    material = load_or_generate(settings, args.material)
    base = grid_config(settings)
    diffusion = base.diffusion_iters if base.diffusion_iters > 0 else 100
    regimes = [
        ("ideal", replace(base, distribution="ideal", diffusion_iters=0)),
        ("random", replace(base, distribution="random", diffusion_iters=0)),
        (
            "random+diffusion",
            replace(base, distribution="random", diffusion_iters=diffusion),
        ),
    ]
    rows = []
    trace_rows = []
    for name, config in regimes:
        traces = []
        report = run_pipeline(
            config, material=material, threads=args.threads, trace_sink=traces
        )
        for trace in traces:
            trace_rows.append(
                {
                    "regime": name,
                    "stage": trace.stage,
                    "supersteps": trace.supersteps,
                    "particles_moved": trace.particles_moved,
                    "max_pe_cycles": trace.max_pe_cycles,
                }
            )
        row = {"regime": name, **report.to_dict()}
        row["fom_lookups_per_s"] = f"{report.fom_lookups_per_s:.6e}"
        row["peak_load_before"] = f"{report.peak_load_before:.4f}"
        row["peak_load_after"] = f"{report.peak_load_after:.4f}"
        overhead = report.overhead_vs_ideal_compute
        row["overhead_vs_ideal_compute"] = (
            "" if overhead is None else f"{overhead:.4f}"
        )
        rows.append(row)
        print(
            f"{name:18s} FOM {report.fom_lookups_per_s:.3e} lookups/s  "
            f"peak load {report.peak_load_before:.2f} -> "
            f"{report.peak_load_after:.2f}  max cycles {report.max_cycles}"
        )
    manifest = make_manifest("fullsim", settings)
    write_csv(args.out, manifest, _FULLSIM_FIELDS, rows)
    print(f"wrote {args.out}")
    if args.trace_out:
        write_csv(
            args.trace_out,
            manifest,
            ["regime", "stage", "supersteps", "particles_moved", "max_pe_cycles"],
            trace_rows,
        )
        print(f"wrote {args.trace_out}")
    if not args.no_figures:
        from .plotting import render_fullsim

        plot_rows = [
            {**r,
             "fom_lookups_per_s": float(r["fom_lookups_per_s"]),
             "peak_load_before": float(r["peak_load_before"]),
             "peak_load_after": float(r["peak_load_after"])}
            for r in rows
        ]
        render_fullsim(plot_rows, figure_path(args.out))
        print(f"wrote {figure_path(args.out)}")
    return 0


# -- data generation ---------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    material = generate_material(
        settings["seed"], settings["nuclides"], settings["gridpoints"],
        settings["channels"],
    )
    save_material(material, args.out)
    expected = wmcx_file_bytes(
        settings["nuclides"], settings["gridpoints"], settings["channels"]
    )
    actual = Path(args.out).stat().st_size
    if actual != expected:
        raise FormatError(f"{args.out}: wrote {actual} bytes, expected {expected}")
    print(f"wrote {args.out} ({actual} bytes, payload {material.nbytes})")
    return 0


# -- argument parsing ---------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value settings file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--tile-h", type=int, dest="tile_h")
    p.add_argument("--tile-w", type=int, dest="tile_w")
    p.add_argument("--tiles-x", type=int, dest="tiles_x")
    p.add_argument("--tiles-y", type=int, dest="tiles_y")
    p.add_argument("--nuclides", type=int)
    p.add_argument("--gridpoints", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--particles-per-pe", type=int, dest="particles_per_pe")
    p.add_argument("--mode", choices=["linear", "stochastic"])
    p.add_argument("--distribution", choices=["random", "ideal"])
    p.add_argument("--diffusion-iters", type=int, dest="diffusion_iters")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--material", help="WMCX file to load instead of generating")
    p.add_argument("--no-figures", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xsmesh",
        description="decomposed macroscopic cross-section lookup simulator",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the correctness suite")
    _add_common(p)
    p.add_argument(
        "--corrupt-sort",
        action="store_true",
        help="fault-injection hook: drop the final sort superstep",
    )
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("weak", help="weak scaling sweep")
    _add_common(p)
    p.add_argument("--axis", choices=["row", "column"], required=True)
    p.add_argument("--n-list", default="1,5,30", dest="n_list")
    p.add_argument("--width-list", default="1,2,5,10,25,50,125,250", dest="width_list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weak)

    p = sub.add_parser("strong", help="strong scaling sweep")
    _add_common(p)
    p.add_argument("--axis", choices=["row", "column"], required=True)
    p.add_argument("--width-list", dest="width_list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_strong)

    p = sub.add_parser("fullsim", help="three-regime full simulation")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--trace-out", dest="trace_out",
                   help="also write per-stage trace rows to this CSV")
    p.set_defaults(func=cmd_fullsim)

    p = sub.add_parser("gen", help="generate and cache cross-section data")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "width_list", None) is None and args.command == "strong":
        args.width_list = (
            "1,2,4,5,10,20,25,50,100" if args.axis == "column" else "1,2,5,10,25,50,125,250"
        )
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as err:
        print(f"format/I-O error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
