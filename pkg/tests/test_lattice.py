import numpy as np
import pytest
from hypothesis import given, strategies as st

from sixvertex.lattice import AlignmentError, FrameState, OccupancyWindow, Order, ParticleConfig, collapse, compare, shift

windows = st.builds(
    lambda off, vals: OccupancyWindow(off, vals),
    st.integers(-50, 50),
    st.lists(st.integers(0, 1), min_size=1, max_size=20),
)


def test_window_validation():
    with pytest.raises(ValueError):
        OccupancyWindow(0, [])
    with pytest.raises(ValueError):
        OccupancyWindow(0, [0, 2])
    w = OccupancyWindow(0, [0, 2], capacity=2)
    assert w.at(1) == 2
    with pytest.raises(IndexError):
        w.at(2)


def test_window_is_immutable():
    w = OccupancyWindow(0, [1, 0])
    with pytest.raises(ValueError):
        w.values[0] = 0


def test_shift_examples():
    w = OccupancyWindow(5, [1, 0, 1])
    assert shift(w, 0) == w
    assert shift(shift(w, 1), -1) == w
    s = shift(w, 2)
    assert s.offset == 3 and s.values.tolist() == [1, 0, 1]


def test_collapse_examples():
    assert collapse(OccupancyWindow(0, [1, 0, 1, 1]), 2).values.tolist() == [1, 2]
    w = OccupancyWindow(3, [1, 0, 1])
    assert collapse(w, 1) == OccupancyWindow(3, [1, 0, 1], 1)
    assert collapse(OccupancyWindow(0, [0] * 6), 3).values.tolist() == [0, 0]
    with pytest.raises(AlignmentError):
        collapse(OccupancyWindow(1, [0, 0]), 2)
    with pytest.raises(AlignmentError):
        collapse(OccupancyWindow(0, [0, 0, 0]), 2)


def test_compare_examples():
    a = OccupancyWindow(0, [1, 1, 0])
    assert compare(a, a) == Order.EQUAL
    assert compare(a, OccupancyWindow(0, [1, 0, 0])) == Order.GREATER
    assert compare(OccupancyWindow(0, [1, 0, 0]), a) == Order.LESS
    assert compare(OccupancyWindow(0, [1, 0]), OccupancyWindow(0, [0, 1])) == Order.INCOMPARABLE


@given(windows, st.integers(-10, 10))
def test_shift_inverse(w, n):
    assert shift(shift(w, n), -n) == w


@given(st.integers(-5, 5), st.integers(1, 4), st.data())
def test_collapse_preserves_mass(k, n, data):
    vals = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=5 * n).filter(lambda v: len(v) % n == 0))
    c = collapse(OccupancyWindow(k * n, vals), n)
    assert c.values.sum() == sum(vals)
    assert c.capacity == n and c.offset == k


@given(windows)
def test_serialization_roundtrip(w):
    assert OccupancyWindow.from_dict(w.to_dict()) == w
    assert OccupancyWindow.from_csv(w.to_csv()) == w


def test_csv_format():
    assert OccupancyWindow(-1, [1, 0]).to_csv() == "site,value\n-1,1\n0,0\n"


def test_particles_roundtrip():
    w = OccupancyWindow(-2, [1, 0, 1, 1])
    pc = w.particles()
    assert list(pc) == [-2, 0, 1]
    assert pc.window(-2, 1) == w
    with pytest.raises(ValueError):
        ParticleConfig([1, 1])


def test_frame_state():
    f = FrameState(shifted=True)
    f2 = f.advance().advance()
    assert (f2.time, f2.frame_shift) == (2, 2)
    g = FrameState().advance()
    assert (g.time, g.frame_shift) == (1, 0)
    with pytest.raises(ValueError):
        FrameState(3, 1, True)
