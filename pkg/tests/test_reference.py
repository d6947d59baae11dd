import numpy as np
import pytest

from xsmesh.errors import ConfigurationError
from xsmesh.kernel import Particle, lookup_all_nuclides
from xsmesh.reference import (
    build_ueg,
    lookup_ueg,
    oracle_batch,
    sorted_batch,
    ueg_bracket_indices,
    ueg_structure_bytes,
)
from xsmesh.rng import lcg_uniforms, mix_seed
from xsmesh.xsdata import Material, NuclideGrid, generate_material

F32 = np.float32


def grid_from(energies, nuclide_id=0, n_channels=2):
    e = np.asarray(energies, dtype=np.float32)
    xs = (np.arange(len(e) * n_channels, dtype=np.float32) + 10 * nuclide_id).reshape(
        len(e), n_channels
    )
    return NuclideGrid(nuclide_id, e, xs)


@pytest.fixture
def hand_material():
    a = grid_from([0.1, 0.5, 0.9], 0)
    b = grid_from([0.2, 0.6], 1)
    return Material([a, b], np.array([1.0, 1.0], dtype=np.float32))


# -- unionized grid -----------------------------------------------------------


def test_hand_union_and_index_rows(hand_material):
    ueg = build_ueg(hand_material)
    assert list(ueg.union_energies) == pytest.approx([0.1, 0.2, 0.5, 0.6, 0.9])
    # per union point: largest index with energy <= point, clamped at 0
    assert list(ueg.index_table[0]) == [0, 0]  # 0.1 -> A0, B clamped to 0
    assert list(ueg.index_table[2]) == [1, 0]  # 0.5 -> A1, B0
    assert list(ueg.index_table[4]) == [2, 1]  # 0.9 -> A2, B1


def test_hand_lookup_brackets(hand_material):
    # e = 0.55 sits at union index 2: A bracket [0.5, 0.9], B bracket [0.2, 0.6]
    idx = ueg_bracket_indices(build_ueg(hand_material), hand_material, F32(0.55))
    assert idx == [1, 0]


def test_union_size_for_generated_material(material20):
    ueg = build_ueg(material20)
    total = material20.n_nuclides * material20.nuclides[0].n_gridpoints
    # all nuclides share the forced 0.0/1.0 endpoints; interior collisions
    # are possible but rare, so the union is just below nuclides x gridpoints
    assert total - 2 * (material20.n_nuclides - 1) - 20 <= ueg.n_union <= total
    assert ueg.memory_bytes == ueg_structure_bytes(ueg.n_union, 20)


def test_structure_size_estimate_at_full_scale():
    # 250 nuclides x 10,000 points with 32-bit indices: about 2.5 GB
    n_union = 250 * 10000
    assert ueg_structure_bytes(n_union, 250) == 2_510_000_000


def test_index_table_columns_monotone(material20):
    ueg = build_ueg(material20)
    assert np.all(np.diff(ueg.index_table.astype(np.int64), axis=0) >= 0)


def test_ueg_lookup_bitwise_equals_per_nuclide_search(material20):
    ueg = build_ueg(material20)
    _, draws = lcg_uniforms(mix_seed(1, 321), 1000)
    for e in draws.astype(np.float32):
        via_union, _ = lookup_ueg(ueg, material20, e, "linear")
        direct, _ = lookup_all_nuclides(material20, e, "linear")
        assert np.array_equal(via_union, direct)


def test_ueg_lookup_at_union_point(material20):
    ueg = build_ueg(material20)
    e = ueg.union_energies[12345]
    idx = ueg_bracket_indices(ueg, material20, e)
    for j, grid in enumerate(material20.nuclides):
        direct = min(
            int(np.searchsorted(grid.energies, e, side="right")) - 1,
            grid.n_gridpoints - 2,
        )
        assert idx[j] == direct


# -- order-matched oracle -------------------------------------------------------


def test_single_column_oracle_reduces_to_plain_lookup(material20):
    _, draws = lcg_uniforms(mix_seed(2, 17), 50)
    particles = [
        Particle(F32(e), np.zeros(5, dtype=np.float32), i)
        for i, e in enumerate(draws)
    ]
    got = oracle_batch(material20, particles, [list(range(20))])
    for p, macro in zip(particles, got):
        direct, _ = lookup_all_nuclides(material20, p.energy, "linear")
        assert np.array_equal(macro, direct)


def test_oracle_visitation_order_wraps():
    m = generate_material(5, 4, 64, 3)
    column_order = [[0], [1], [2], [3]]
    p = Particle(F32(0.42), np.zeros(3, dtype=np.float32), 0)
    got = oracle_batch(m, [p], column_order, [2])[0]
    # explicit accumulation in the wrapped order 2, 3, 0, 1
    macro = np.zeros(3, dtype=np.float32)
    for nid in (2, 3, 0, 1):
        g = m.nuclides[nid]
        i = min(
            int(np.searchsorted(g.energies, F32(0.42), side="right")) - 1,
            g.n_gridpoints - 2,
        )
        f = (g.energies[i + 1] - F32(0.42)) / (g.energies[i + 1] - g.energies[i])
        macro += m.densities[nid] * (g.xs[i + 1] - f * (g.xs[i + 1] - g.xs[i]))
    assert np.array_equal(got, macro)


def test_oracle_rejects_bad_column_order(material20):
    p = [Particle(F32(0.5), np.zeros(5, dtype=np.float32), 0)]
    with pytest.raises(ConfigurationError):
        oracle_batch(material20, p, [list(range(19))])  # one missing
    with pytest.raises(ConfigurationError):
        oracle_batch(material20, p, [list(range(20)), [0]])  # one duplicated


# -- sorted batch ----------------------------------------------------------------


def _particles_from(draws):
    return [
        Particle(F32(e), np.zeros(2, dtype=np.float32), i)
        for i, e in enumerate(draws)
    ]


def test_sorted_batch_matches_unsorted_linear():
    m = generate_material(6, 3, 128, 2)
    _, draws = lcg_uniforms(mix_seed(6, 1), 200)
    for ordering in (sorted(draws), sorted(draws, reverse=True), list(draws)):
        batch = _particles_from(ordering)
        got = sorted_batch(m, batch, "linear")
        for p, macro in zip(batch, got):
            direct, _ = lookup_all_nuclides(m, p.energy, "linear")
            assert np.array_equal(macro, direct)


def test_sorted_batch_restores_input_order():
    m = generate_material(7, 2, 64, 2)
    _, draws = lcg_uniforms(mix_seed(7, 1), 100_000)
    particles = _particles_from(draws)
    got = sorted_batch(m, particles, "linear")
    assert len(got) == len(particles)
    # spot-check a deterministic sample of positions against direct lookups
    for i in range(0, 100_000, 9973):
        direct, _ = lookup_all_nuclides(m, particles[i].energy, "linear")
        assert np.array_equal(got[i], direct)
