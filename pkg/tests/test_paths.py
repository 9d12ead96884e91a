import numpy as np
import pytest

from bspde.exceptions import InvalidArgument
from bspde.paths import (counter_normals, increments, load_ensemble, make_grid, philox4x32,
                         sample_ensemble)


def test_philox_known_answers():
    # Random123 known-answer vectors for Philox-4x32-10
    assert [int(v) for v in philox4x32([0, 0, 0, 0], (0, 0))] == \
        [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]
    m = 0xFFFFFFFF
    assert [int(v) for v in philox4x32([m, m, m, m], (m, m))] == \
        [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]
    assert [int(v) for v in philox4x32([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344],
                                       (0xA4093822, 0x299F31D0))] == \
        [0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1]


def test_grid_nodes():
    np.testing.assert_array_equal(make_grid(1, 4).nodes, [0, 0.25, 0.5, 0.75, 1])
    np.testing.assert_array_equal(make_grid(0.5, 1).nodes, [0, 0.5])


def test_grid_uniform_spacing_exact():
    g = make_grid(0.3, 7)
    assert np.max(np.abs(np.diff(g.nodes) - g.mesh)) <= 1e-16
    assert g.nodes[-1] == 0.3


def test_grid_mesh_guard():
    with pytest.raises(InvalidArgument) as err:
        make_grid(10, 5)
    assert err.value.code == "mesh_too_large"


@pytest.mark.parametrize("args", [(1.0, 0), (0.0, 3), (-1.0, 2)])
def test_grid_rejects(args):
    with pytest.raises(InvalidArgument):
        make_grid(*args)


def test_ensemble_deterministic_and_starts_at_zero():
    g = make_grid(1.0, 8)
    a = sample_ensemble(g, 50, 42)
    b = sample_ensemble(g, 50, 42)
    assert a.values.tobytes() == b.values.tobytes()
    assert np.all(a.values[:, 0] == 0.0)


def test_distinct_seeds_differ():
    g = make_grid(1.0, 4)
    a = sample_ensemble(g, 20, 1).values[:, -1]
    b = sample_ensemble(g, 20, 2).values[:, -1]
    assert not np.any(a == b)


def test_counter_based_order_independence():
    g = make_grid(1.0, 5)
    full = sample_ensemble(g, 9000, 7).values
    # paths regenerated individually and in reverse order match the batch
    for m in (8999, 4096, 17, 0):
        dw = np.sqrt(g.mesh) * counter_normals(7, [m], np.arange(5))[0]
        np.testing.assert_array_equal(np.cumsum(dw), full[m, 1:])


def test_thread_count_does_not_change_paths(monkeypatch):
    g = make_grid(1.0, 3)
    monkeypatch.setenv("BSPDE_NUM_THREADS", "1")
    a = sample_ensemble(g, 10000, 5).values
    monkeypatch.setenv("BSPDE_NUM_THREADS", "4")
    b = sample_ensemble(g, 10000, 5).values
    assert a.tobytes() == b.tobytes()


def test_terminal_moments_million_paths():
    e = sample_ensemble(make_grid(1.0, 1), 10**6, 2024)
    w = e.values[:, 1]
    assert abs(w.mean()) <= 4 / np.sqrt(10**6)
    assert abs(w.var() - 1.0) <= 0.01


def test_increments():
    e = sample_ensemble(make_grid(1.0, 6), 100, 3)
    total = sum(increments(e, j) for j in range(6))
    np.testing.assert_allclose(total, e.values[:, -1], rtol=0, atol=1e-14)
    e1 = sample_ensemble(make_grid(1.0, 1), 10, 3)
    np.testing.assert_array_equal(increments(e1, 0), e1.values[:, 1])
    with pytest.raises(InvalidArgument):
        increments(e, 6)


def test_increment_variance():
    e = sample_ensemble(make_grid(1.0, 4), 10**6, 99)
    for j in range(4):
        assert abs(increments(e, j).var() / 0.25 - 1.0) <= 0.01


def test_dump_roundtrip(tmp_path):
    e = sample_ensemble(make_grid(0.5, 3), 17, 2**63 + 5)
    path = tmp_path / "ens.bin"
    e.dump(path)
    raw = path.read_bytes()
    assert len(raw) == 32 + 8 * 17 * 4
    back = load_ensemble(path)
    assert (back.grid.horizon_T, back.grid.N, back.M, back.seed) == (0.5, 3, 17, 2**63 + 5)
    assert back.values.tobytes() == e.values.tobytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(InvalidArgument):
        load_ensemble(path)


def test_seed_range():
    with pytest.raises(InvalidArgument):
        sample_ensemble(make_grid(1, 2), 3, -1)
