import numpy as np
import pytest
from hypothesis import given, strategies as st

from chainguide.simplex import (
    LatticeState,
    LatticeCapError,
    ProjectionError,
    SimplexPoint,
    enumerate_lattice,
    enumerate_lattice_counts,
    lattice_size,
    project_to_simplex,
    round_to_lattice,
    single_jump_neighbors,
)


def test_simplex_point_clips_tiny_negatives():
    p = SimplexPoint([1.0 + 1e-13, -1e-13])
    assert p.coords[1] == 0.0
    assert abs(p.coords.sum() - 1.0) <= 1e-10


def test_simplex_point_rejects_material_negatives():
    with pytest.raises(ProjectionError):
        SimplexPoint([1.1, -0.1])


def test_simplex_point_renormalizes():
    p = SimplexPoint([0.3, 0.7 + 5e-8])
    assert abs(p.coords.sum() - 1.0) <= 1e-10


@given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=5))
def test_simplex_point_from_positive_weights(weights):
    arr = np.asarray(weights)
    p = SimplexPoint(arr / arr.sum())
    assert np.all(p.coords >= 0.0)
    assert abs(p.coords.sum() - 1.0) <= 1e-10


def test_project_reports_displacement():
    out, disp = project_to_simplex(np.array([0.5, 0.5 + 1e-9]))
    assert disp <= 1e-8
    assert abs(out.sum() - 1.0) < 1e-15
    with pytest.raises(ProjectionError):
        project_to_simplex(np.array([0.5, 0.6]), limit=1e-6)


def test_lattice_state_basics():
    s = LatticeState([2, 2])
    assert s.total == 4
    assert s.spacing == 0.25
    assert np.allclose(s.coords(), [0.5, 0.5])
    with pytest.raises(ValueError):
        LatticeState([2, 2], total=5)
    with pytest.raises(ValueError):
        LatticeState([-1, 5])


def test_lattice_jump_moves_one_particle():
    s = LatticeState([2, 2])
    t = s.jump(0, 1)
    assert list(t.counts) == [1, 3]
    with pytest.raises(ValueError):
        LatticeState([0, 4]).jump(0, 1)


def test_enumerate_lattice_counts_and_order():
    states = enumerate_lattice(2, 4)
    assert [tuple(s.counts) for s in states] == [(0, 4), (1, 3), (2, 2), (3, 1), (4, 0)]
    assert len(enumerate_lattice(3, 2)) == 6
    assert len(enumerate_lattice(2, 1)) == 2


@pytest.mark.parametrize("d,total", [(2, 7), (3, 5), (4, 3)])
def test_enumeration_matches_composition_count(d, total):
    counts = enumerate_lattice_counts(d, total)
    assert counts.shape == (lattice_size(d, total), d)
    assert np.all(counts.sum(axis=1) == total)
    # lexicographic and duplicate-free
    keys = [tuple(row) for row in counts]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)


def test_enumeration_cap():
    with pytest.raises(LatticeCapError):
        enumerate_lattice_counts(4, 1000, cap=10**5)


def test_round_to_lattice_preserves_total_and_is_nearest():
    y = round_to_lattice([1.0, 0.0], 20)
    assert list(y.counts) == [20, 0]
    y = round_to_lattice([0.4999, 0.5001], 3)
    assert y.total == 3
    # largest remainder: 3*0.5001 = 1.5003 gets the extra particle
    assert list(y.counts) == [1, 2]


@given(st.integers(min_value=1, max_value=50), st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=2, max_size=4))
def test_round_to_lattice_total_preserved(total, weights):
    w = np.asarray(weights)
    state = round_to_lattice(w / w.sum(), total)
    assert state.total == total
    assert np.all(np.abs(state.counts - w / w.sum() * total) < 1.0 + 1e-9)


def test_single_jump_neighbors_skip_empty_types():
    s = LatticeState([0, 4])
    triples = single_jump_neighbors(s)
    assert [(i, j) for i, j, _ in triples] == [(1, 0)]
    assert list(triples[0][2].counts) == [1, 3]
