import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sixvertex.coupling import (
    CoupledState,
    TwoClassConfig,
    TwoClassRandomness,
    coupled_step,
    discrepancy_influx,
    influx_matrix,
    merged_sites,
    trajectory_currents,
    two_class_step,
)
from sixvertex.dynamics import s6v_step_finite
from sixvertex.exact import build_transfer_kernel, state_index
from sixvertex.lattice import OccupancyWindow, ParticleConfig
from sixvertex.mc import check_coupled_step
from sixvertex.qseries import SixVertexParams

P = SixVertexParams(2 / 3, 1 / 3)


def _rand(L, chi1=None, jump1=None, chi2=None, jump2=None, b_in=0, j_in=1, offset=0):
    z = np.zeros(L, dtype=bool)
    o = np.ones(L, dtype=np.int64)
    return TwoClassRandomness(
        offset,
        z if chi1 is None else np.array(chi1, bool), o if jump1 is None else np.array(jump1),
        z if chi2 is None else np.array(chi2, bool), o if jump2 is None else np.array(jump2),
        b_in, j_in,
    )


def test_second_class_stopped_by_first_class_mover():
    L = 10
    jump1 = np.ones(L, dtype=np.int64)
    jump1[2] = 2
    jump2 = np.ones(L, dtype=np.int64)
    jump2[0] = 5
    cfg = TwoClassConfig(0, [2, 0, 1] + [0] * 7)
    out = two_class_step(cfg, rand=_rand(L, jump1=jump1, jump2=jump2))
    assert out.config.positions(1) == [4]
    assert out.config.positions(2) == [2]


def test_second_class_stays_when_crossed():
    L = 8
    jump1 = np.full(L, 3)
    cfg = TwoClassConfig(0, [1, 2, 0, 0, 0, 0, 0, 0])
    out = two_class_step(cfg, rand=_rand(L, jump1=jump1, jump2=np.full(L, 4)))
    assert out.config.positions(1) == [3] and out.config.positions(2) == [1]


@given(st.lists(st.sampled_from([0, 1]), min_size=1, max_size=12), st.integers(0, 2**32 - 1))
def test_no_second_class_matches_one_class_rule(vals, seed):
    rng = np.random.default_rng(seed)
    L = len(vals)
    r = TwoClassRandomness.draw(0, L, P, 0.0, rng)
    out = two_class_step(TwoClassConfig(0, vals), rand=r)
    tr = {"chi": {x: int(r.chi1[x]) for x in range(L)}, "jump": {x: int(r.jump1[x]) for x in range(L)}}
    pc = ParticleConfig(tuple(np.flatnonzero(vals).tolist()))
    new, _ = s6v_step_finite(pc, P, transcript=tr)
    assert [y for y in new.positions if y < L] == out.config.positions(1)


@pytest.mark.parametrize("start", [[2, 0, 1], [1, 2, 2], [2, 1, 0], [0, 2, 0]])
def test_unclassing_matches_one_class_kernel(start):
    # the class labels do not affect the occupation law
    rng = np.random.default_rng(3)
    N, L = 60000, len(start)
    K = build_transfer_kernel(L, P, 0.25).matrix[state_index([int(v > 0) for v in start], 2)]
    cfg = TwoClassConfig(0, start)
    counts = np.zeros(2**L)
    for _ in range(N):
        out = two_class_step(cfg, P, rng=rng, zeta_in=0.25)
        counts[state_index(out.config.unclass().values.tolist(), 2)] += 1
    freq = counts / N
    assert np.all(np.abs(freq - K) <= 4 * np.sqrt(K * (1 - K) / N) + 1e-12)


def test_second_class_count_conserved_up_to_exits():
    rng = np.random.default_rng(5)
    for _ in range(300):
        vals = rng.integers(0, 3, size=15)
        out = two_class_step(TwoClassConfig(0, vals), P, rng=rng, zeta_in=0.5)
        exits = sum(1 for _, y in out.second_moves if y is None)
        assert (out.config.values == 2).sum() + exits == (vals == 2).sum()
        assert all(y is None or y >= x for x, y in out.second_moves)


def test_trajectory_currents():
    K = trajectory_currents([(0, 2), (3, None)], 0, 5)
    assert K.tolist() == [0, 1, 1, 0, 1, 1]


def test_equal_copies_stay_equal():
    rng = np.random.default_rng(1)
    w = OccupancyWindow(0, rng.integers(0, 2, 30))
    s = CoupledState.start(w, w)
    for _ in range(50):
        s, ev = coupled_step(s, P, rng, zeta_in=0.5)
        assert np.array_equal(s.eta.values, s.xi.values) and not ev


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["ge", "le", "free"]), st.floats(0.1, 0.9), st.floats(0.1, 0.9))
def test_coupled_step_invariants(seed, order, b1, b2):
    p = SixVertexParams(max(b1, b2) if b1 != b2 else 0.9, min(b1, b2) if b1 != b2 else 0.1)
    rng = np.random.default_rng(seed)
    L = 25
    e = rng.integers(0, 2, L)
    x = rng.integers(0, 2, L)
    if order == "ge":
        x = e & x
    elif order == "le":
        x = e | x
    s = CoupledState.start(OccupancyWindow(0, e), OccupancyWindow(0, x))
    for _ in range(20):
        s2, ev = coupled_step(s, p, rng, zeta_in=0.5)
        tally = check_coupled_step(s, s2, merged_sites(ev))
        assert tally["max_influx"] <= 2
        if order == "ge":
            assert np.all(s2.eta.values >= s2.xi.values)
        if order == "le":
            assert np.all(s2.eta.values <= s2.xi.values)
        s = s2


def test_influx_zero_without_discrepancies():
    w = OccupancyWindow(0, [1, 0, 1, 1, 0])
    s = CoupledState.start(w, w)
    s2, ev = coupled_step(s, P, np.random.default_rng(0))
    assert discrepancy_influx(s, s2, 0, 4, merged_sites(ev)) == 0
    assert not influx_matrix(s, s2, np.array(merged_sites(ev), dtype=int)).any()


def test_influx_matrix_agrees_with_scalar():
    rng = np.random.default_rng(9)
    s = CoupledState.start(OccupancyWindow(0, rng.integers(0, 2, 12)), OccupancyWindow(0, rng.integers(0, 2, 12)))
    for _ in range(30):
        s2, ev = coupled_step(s, P, rng, zeta_in=0.5)
        ms = merged_sites(ev)
        M = influx_matrix(s, s2, np.array(ms, dtype=int))
        for a in range(12):
            for b in range(a, 12):
                assert M[a, b] == discrepancy_influx(s, s2, a, b, ms)
        s = s2


def test_ledger_tracks_merges_and_exits():
    rng = np.random.default_rng(2)
    s = CoupledState.start(OccupancyWindow(0, rng.integers(0, 2, 20)), OccupancyWindow(0, rng.integers(0, 2, 20)))
    n0 = len(s.ledger)
    assert n0 == s.discrepancy_sites().size
    for _ in range(200):
        s, ev = coupled_step(s, P, rng, zeta_in=0.5)
        open_sites = sorted(d.site for d in s.ledger if d.open)
        assert open_sites == s.discrepancy_sites().tolist()
        assert len(s.ledger) == n0
    ann = [d for d in s.ledger if d.annihilated_t is not None]
    assert sum(d.type == "eta" for d in ann) == sum(d.type == "xi" for d in ann)


def test_coupled_events_serialise():
    rng = np.random.default_rng(4)
    s = CoupledState.start(OccupancyWindow(0, [1, 0, 0, 1]), OccupancyWindow(0, [0, 1, 1, 0]))
    s, ev = coupled_step(s, P, rng)
    for e in ev:
        assert '"event"' in e.to_json()


def test_overlapping_particles_rejected():
    with pytest.raises(ValueError):
        TwoClassConfig(0, [0, 3])
    with pytest.raises(ValueError):
        CoupledState(OccupancyWindow(0, [1]), OccupancyWindow(1, [1]))
