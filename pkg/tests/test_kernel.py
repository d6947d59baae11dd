import numpy as np
import pytest

from xsmesh import _fastpath
from xsmesh.errors import (
    ConfigurationError,
    DegenerateBracketError,
    OutOfRangeError,
)
from xsmesh.kernel import (
    InterpBracket,
    Particle,
    accumulate,
    bracket,
    interp_factor,
    lookup_all_nuclides,
    lower_bound,
    lower_bound_many,
    micro_linear_block,
    micro_stochastic_block,
    micro_xs_linear,
    micro_xs_stochastic,
)
from xsmesh.rng import LCG_MULTIPLIER, lcg_uniforms, mix_seed
from xsmesh.xsdata import (
    EnergyBand,
    GridSlice,
    Material,
    NuclideGrid,
    generate_material,
    generate_nuclide_grid,
)

F32 = np.float32


def make_slice(energies, xs):
    e = np.asarray(energies, dtype=np.float32)
    x = np.asarray(xs, dtype=np.float32)
    band = EnergyBand(0, e[0], e[-1], True)
    return GridSlice(0, band, e, x, 0)


# -- lower_bound ----------------------------------------------------------------


def test_lower_bound_interior():
    e = np.array([0.1, 0.2, 0.4, 0.8], dtype=np.float32)
    assert lower_bound(e, F32(0.3)) == 1


def test_lower_bound_clamps_at_top():
    e = np.array([0.0, 1.0], dtype=np.float32)
    assert lower_bound(e, F32(1.0)) == 0


def test_lower_bound_agrees_with_linear_scan():
    grid = generate_nuclide_grid(5, 0, 10000, 1)
    _, draws = lcg_uniforms(mix_seed(5, 1), 1000)
    for e in draws.astype(np.float32):
        i = lower_bound(grid.energies, e)
        scan = 0
        for j in range(grid.n_gridpoints):
            if grid.energies[j] <= e:
                scan = j
        scan = min(scan, grid.n_gridpoints - 2)
        assert i == scan


def test_lower_bound_rejects_out_of_range():
    e = np.array([0.2, 0.4], dtype=np.float32)
    with pytest.raises(OutOfRangeError):
        lower_bound(e, F32(0.1))
    with pytest.raises(OutOfRangeError):
        lower_bound_many(e, np.array([0.3, 0.5], dtype=np.float32))


# -- interpolation factor ---------------------------------------------------------


def test_interp_factor_values():
    assert interp_factor(1.0, 2.0, 1.25) == F32(0.75)
    assert interp_factor(0.25, 0.5, 0.25) == F32(1.0)
    assert interp_factor(0.25, 0.5, 0.5) == F32(0.0)


def test_interp_factor_degenerate():
    with pytest.raises(DegenerateBracketError):
        interp_factor(0.5, 0.5, 0.5)


# -- linear interpolation ----------------------------------------------------------


def test_micro_linear_scalar_example():
    sl = make_slice([0.0, 1.0], [[10.0], [20.0]])
    out = micro_xs_linear(sl.xs, InterpBracket(0, F32(0), F32(1), F32(0.75)))
    assert out[0] == F32(12.5)


def test_micro_linear_endpoint_identities():
    sl = make_slice([0.0, 1.0], [[10.0, 3.0], [20.0, 7.0]])
    at_low = micro_xs_linear(sl.xs, InterpBracket(0, F32(0), F32(1), F32(1.0)))
    at_high = micro_xs_linear(sl.xs, InterpBracket(0, F32(0), F32(1), F32(0.0)))
    # f = 0 short-circuits to sigma_high exactly; f = 1 goes through the
    # update form, which reproduces sigma_low only to the last ulp when
    # the channel difference is not representable
    assert np.array_equal(at_high, sl.xs[1])
    assert np.array_equal(at_low, sl.xs[0])


def test_micro_linear_f1_is_within_one_ulp_of_low():
    grid = generate_nuclide_grid(21, 0, 64, 5)
    for i in (0, 30, 62):
        got = micro_xs_linear(grid.xs, InterpBracket(i, F32(0), F32(1), F32(1.0)))
        # rounding scale is set by the larger bracket operand
        ulp = np.spacing(np.maximum(np.abs(grid.xs[i]), np.abs(grid.xs[i + 1])))
        assert np.all(np.abs(got - grid.xs[i]) <= ulp)


def test_micro_linear_matches_per_channel_recomputation():
    grid = generate_nuclide_grid(2, 0, 50, 5)
    brk = bracket(grid.energies, F32(0.37))
    vec = micro_xs_linear(grid.xs, brk)
    for r in range(5):
        lo = grid.xs[brk.lower_index, r]
        hi = grid.xs[brk.lower_index + 1, r]
        assert vec[r] == hi - brk.f * (hi - lo)


# -- stochastic interpolation -------------------------------------------------------


def _state_with_next_zero():
    # craft the state whose successor is 0, i.e. the u = 0 edge draw
    return ((1 << 63) - 1) * pow(LCG_MULTIPLIER, -1, 1 << 63) % (1 << 63)


def test_stochastic_at_lower_edge():
    sl = make_slice([0.25, 0.75], [[1.0], [2.0]])
    # u > 0 selects the lower gridpoint at e = e_low
    state = mix_seed(3, 3)
    for _ in range(200):
        out, state = micro_xs_stochastic(sl, 0, F32(0.25), state)
        assert out[0] == F32(1.0)
    # the measure-zero u = 0 draw selects the higher one
    out, _ = micro_xs_stochastic(sl, 0, F32(0.25), _state_with_next_zero())
    assert out[0] == F32(2.0)


def test_stochastic_at_upper_edge_always_picks_high():
    sl = make_slice([0.25, 0.75], [[1.0], [2.0]])
    state = mix_seed(4, 4)
    for _ in range(500):
        out, state = micro_xs_stochastic(sl, 0, F32(0.75), state)
        assert out[0] == F32(2.0)


def test_stochastic_midpoint_statistics():
    grid = generate_nuclide_grid(8, 0, 100, 5)
    i = 40
    e_lo, e_hi = grid.energies[i], grid.energies[i + 1]
    e = F32((float(e_lo) + float(e_hi)) / 2)
    n = 100_000
    micro, _ = micro_stochastic_block(
        grid.energies, grid.xs, np.full(n, e, dtype=np.float32), mix_seed(8, 1)
    )
    f = interp_factor(e_lo, e_hi, e)
    linear = grid.xs[i + 1] - f * (grid.xs[i + 1] - grid.xs[i])
    micro64 = micro.astype(np.float64)
    z = np.abs(micro64.mean(axis=0) - linear) / (
        micro64.std(axis=0, ddof=1) / np.sqrt(n)
    )
    assert np.all(z < 3.0)
    p_high = 1.0 - float(f)
    frac = float((micro == grid.xs[i + 1]).all(axis=1).mean())
    assert abs(frac - p_high) < 3.0 * np.sqrt(p_high * (1 - p_high) / n)


def test_stochastic_consumes_exactly_one_draw():
    sl = make_slice([0.0, 1.0], [[1.0], [2.0]])
    state0 = mix_seed(1, 1)
    _, state1 = micro_xs_stochastic(sl, 0, F32(0.5), state0)
    expected, _ = lcg_uniforms(state0, 1)
    from xsmesh.rng import lcg_next

    assert state1 == lcg_next(state0)[0]


# -- accumulation ---------------------------------------------------------------


def test_accumulate_example():
    p = Particle.fresh(0.5, 2)
    accumulate(p, np.array([2.0, 4.0], dtype=np.float32), 0.5)
    assert list(p.macro_xs) == [F32(1.0), F32(2.0)]


def test_accumulate_zero_density_is_noop():
    p = Particle.fresh(0.5, 2)
    p.macro_xs[:] = [3.0, 4.0]
    accumulate(p, np.array([2.0, 4.0], dtype=np.float32), 0.0)
    assert list(p.macro_xs) == [F32(3.0), F32(4.0)]


def test_accumulate_length_mismatch():
    p = Particle.fresh(0.5, 2)
    with pytest.raises(ConfigurationError):
        accumulate(p, np.array([1.0, 2.0, 3.0], dtype=np.float32), 1.0)


def test_accumulation_order_reassociates_within_tolerance():
    m = generate_material(4, 2, 100, 5)
    e = F32(0.4)
    ab = np.zeros(5, dtype=np.float32)
    ba = np.zeros(5, dtype=np.float32)
    micros = []
    for grid in m.nuclides:
        brk = bracket(grid.energies, e)
        micros.append(micro_xs_linear(grid.xs, brk))
    ab += m.densities[0] * micros[0]
    ab += m.densities[1] * micros[1]
    ba += m.densities[1] * micros[1]
    ba += m.densities[0] * micros[0]
    assert np.allclose(ab, ba, rtol=1e-6)


# -- whole-material lookup ---------------------------------------------------------


def test_lookup_at_gridpoint_recovers_tabulated_values():
    grid = generate_nuclide_grid(6, 0, 50, 5)
    material = Material([grid], np.ones(1, dtype=np.float32))
    for idx in (0, 17, 49):
        e = grid.energies[idx]
        macro, _ = lookup_all_nuclides(material, e, "linear")
        # f is exactly 1 (or 0 on the final interval); the update form
        # reproduces the tabulated vector to within the last ulp
        assert np.all(np.abs(macro - grid.xs[idx]) <= np.spacing(grid.xs[idx]))


def test_lookup_constant_grids():
    def const_grid(nid, value):
        e = np.linspace(0, 1, 8).astype(np.float32)
        xs = np.full((8, 3), value, dtype=np.float32)
        return NuclideGrid(nid, e, xs)

    material = Material(
        [const_grid(0, 2.0), const_grid(1, 5.0)],
        np.array([0.25, 0.5], dtype=np.float32),
    )
    for e in [0.0, 0.123, 0.77, 1.0]:
        macro, _ = lookup_all_nuclides(material, F32(e), "linear")
        assert np.allclose(macro, 0.25 * 2.0 + 0.5 * 5.0, rtol=1e-6)


def test_lookup_matches_straight_line_reimplementation(big_material):
    # independent textbook loop: search, factor, interpolate, accumulate
    def straight_line(material, e):
        e = np.float32(e)
        macro = np.zeros(material.n_channels, dtype=np.float32)
        for n, grid in enumerate(material.nuclides):
            lo, hi = 0, len(grid.energies)
            while lo < hi:
                mid = (lo + hi) // 2
                if e < grid.energies[mid]:
                    hi = mid
                else:
                    lo = mid + 1
            i = min(lo - 1, grid.n_gridpoints - 2)
            e_lo = grid.energies[i]
            e_hi = grid.energies[i + 1]
            f = (e_hi - e) / (e_hi - e_lo)
            for r in range(material.n_channels):
                s_lo = grid.xs[i, r]
                s_hi = grid.xs[i + 1, r]
                macro[r] += material.densities[n] * (s_hi - f * (s_hi - s_lo))
        return macro

    _, draws = lcg_uniforms(mix_seed(1, 12345), 100)
    for e in draws.astype(np.float32):
        ours, _ = lookup_all_nuclides(big_material, e, "linear")
        assert np.array_equal(ours, straight_line(big_material, e))


def test_lookup_rng_draw_accounting(material20):
    state = mix_seed(2, 2)
    _, after_linear = lookup_all_nuclides(material20, F32(0.5), "linear", state)
    assert after_linear == state
    _, after_stoch = lookup_all_nuclides(material20, F32(0.5), "stochastic", state)
    expected = state
    from xsmesh.rng import lcg_next

    for _ in range(material20.n_nuclides):
        expected, _ = lcg_next(expected)
    assert after_stoch == expected


# -- fast path equivalence ----------------------------------------------------------


def test_fastpath_linear_matches_kernel_blocks():
    grid = generate_nuclide_grid(13, 0, 777, 5)
    _, draws = lcg_uniforms(mix_seed(13, 1), 500)
    e = draws.astype(np.float32)
    density = F32(0.37)
    fast = np.zeros((500, 5), dtype=np.float32)
    _fastpath.lookup_linear(grid.energies, grid.xs, e, fast, density)
    ref = np.zeros((500, 5), dtype=np.float32)
    ref += density * micro_linear_block(grid.energies, grid.xs, e)
    assert np.array_equal(fast, ref)


def test_fastpath_stochastic_matches_kernel_blocks():
    grid = generate_nuclide_grid(14, 0, 777, 5)
    _, draws = lcg_uniforms(mix_seed(14, 1), 500)
    e = draws.astype(np.float32)
    density = F32(0.61)
    state = mix_seed(14, 2)
    fast = np.zeros((500, 5), dtype=np.float32)
    end_fast = int(_fastpath.lookup_stochastic(grid.energies, grid.xs, e, fast, density, state))
    ref = np.zeros((500, 5), dtype=np.float32)
    micro, end_ref = micro_stochastic_block(grid.energies, grid.xs, e, state)
    ref += density * micro
    assert end_fast == end_ref
    assert np.array_equal(fast, ref)


def test_fastpath_partition_matches_numpy():
    from xsmesh.xsdata import band_bounds

    _, draws = lcg_uniforms(mix_seed(15, 1), 400)
    e = draws.astype(np.float32)
    ids = np.arange(400, dtype=np.uint64)
    bounds = band_bounds(9)
    for row in (0, 4, 8):
        got = _fastpath.partition_by_band(e, ids, bounds, row)
        want = _fastpath._np_partition_by_band(e, ids, bounds, row)
        for g, w in zip(got, want):
            assert np.array_equal(g, w)


def test_linear_interpolation_monotone_within_bracket():
    grid = generate_nuclide_grid(31, 0, 64, 5)
    i = 20
    e_lo, e_hi = float(grid.energies[i]), float(grid.energies[i + 1])
    samples = np.linspace(e_lo, e_hi, 64).astype(np.float32)
    values = np.stack([
        micro_xs_linear(grid.xs, bracket(grid.energies, e)) for e in samples
    ])
    for r in range(5):
        diffs = np.diff(values[:, r].astype(np.float64))
        assert np.all(diffs >= 0) or np.all(diffs <= 0)
