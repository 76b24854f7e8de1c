import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sixvertex.dynamics import (
    InvariantViolation,
    UpdateRandomness,
    _field_jumps,
    check_conservation,
    draw_field_randomness,
    draw_randomness,
    moving_frame_step,
    row_cdfs,
    s6v_step_batch,
    s6v_step_finite,
    s6v_step_window,
    shifted_step,
    shs6v_step,
    shs6v_step_batch,
    sweep,
    unfused_step,
    unfused_step_batch,
)
from sixvertex.lattice import FrameState, OccupancyWindow, ParticleConfig, shift
from sixvertex.mc import two_sample_tv
from sixvertex.measures import BernoulliProduct, Blocking, Inhomogeneous, boundary_current_law, inhomogeneous_boundary_law, sample_windows
from sixvertex.qseries import ModelParams, SixVertexParams, b_field, build_L_tensor, six_vertex_weights

P = SixVertexParams(2 / 3, 1 / 3)


def test_finite_examples():
    out, rec = s6v_step_finite(ParticleConfig([]), P, np.random.default_rng(0))
    assert len(out) == 0
    out, rec = s6v_step_finite(ParticleConfig([0]), P, transcript={"chi": {0: 0}, "jump": {0: 2}})
    assert list(out) == [2]
    assert rec.currents[0] == 1 and rec.currents[1] == 1 and rec.currents[2] == 0
    out, _ = s6v_step_finite(ParticleConfig([0, 1]), P, transcript={"chi": {0: 0, 1: 1}, "jump": {0: 5, 1: 3}})
    assert list(out) == [1, 4]


def test_finite_records_draws():
    _, rec = s6v_step_finite(ParticleConfig([0, 4]), P, np.random.default_rng(3))
    assert set(rec.transcript["chi"]) == {0, 4}


@st.composite
def config_and_transcript(draw):
    L = draw(st.integers(1, 12))
    vals = draw(st.lists(st.integers(0, 1), min_size=L, max_size=L))
    chi = draw(st.lists(st.integers(0, 1), min_size=L, max_size=L))
    jump = draw(st.lists(st.integers(1, 4), min_size=L, max_size=L))
    return vals, chi, jump


@given(config_and_transcript())
def test_window_sweep_matches_particle_rule(data):
    # the vectorised sweep and the particle-by-particle rule must agree under one transcript
    vals, chi, jump = data
    L = len(vals)
    pad = L + 8
    v = np.array(vals + [0] * (pad - L))
    tr = UpdateRandomness(0, np.array([chi + [1] * (pad - L)]), np.array([jump + [1] * (pad - L)]), np.array([0]), np.array([1]))
    new, K, _ = sweep(v[None, :], tr)
    cfg = OccupancyWindow(0, v).particles()
    tx = {"chi": {x: chi[x] for x in range(L)}, "jump": {x: jump[x] for x in range(L)}}
    out, rec = s6v_step_finite(cfg, P, transcript=tx)
    assert np.flatnonzero(new[0]).tolist() == list(out)
    for y, k in rec.currents.items():
        if 0 <= y < pad:
            assert K[0, y] == k


def test_window_examples():
    rng = np.random.default_rng(0)
    rec = s6v_step_window(OccupancyWindow(0, [0] * 5), P, 0.0, rng)
    assert rec.next.values.sum() == 0 and all(k == 0 for k in rec.currents.values())
    N = 100_000
    b = s6v_step_batch(np.zeros((N, 3), dtype=int), 0, P, 1.0, rng)
    est = b.currents[:, 0].mean()
    assert abs(est - 1 / 3) <= 4 * math.sqrt(2 / 9 / N)


def test_product_measure_one_step_marginals():
    rng = np.random.default_rng(5)
    N, L = 100_000, 8
    v = sample_windows(BernoulliProduct(0.5), 0, L, N, rng)
    b = s6v_step_batch(v, 0, P, boundary_current_law(BernoulliProduct(0.5), P, 0), rng)
    z = (b.values.mean(axis=0) - 0.5) / math.sqrt(0.25 / N)
    assert np.all(np.abs(z) <= 4)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0, 1), st.integers(1, 10), st.integers(-5, 5))
def test_interval_conservation(seed, b1, b2, zeta, L, offset):
    rng = np.random.default_rng(seed)
    v = (rng.random((4, L)) < 0.5).astype(int)
    b = s6v_step_batch(v, offset, SixVertexParams(b1, b2), zeta, rng)
    assert set(np.unique(b.currents)).issubset({0, 1})
    Kin = np.concatenate([b.boundary_in[:, None], b.currents], axis=1)
    for x in range(L):
        for y in range(x, L):
            lhs = Kin[:, x] + v[:, x : y + 1].sum(axis=1)
            rhs = b.currents[:, y] + b.values[:, x : y + 1].sum(axis=1)
            assert np.array_equal(lhs, rhs)


def test_conservation_check_detects_tampering():
    v = np.array([[1, 0, 0]])
    with pytest.raises(InvariantViolation):
        check_conservation(v, np.array([[0, 0, 0]]), np.array([0]), np.array([[0, 0, 0]]))
    with pytest.raises(InvariantViolation):
        check_conservation(v, np.array([[0, 0, 0]]), np.array([0]), np.array([[1, 1, 2]]))


def test_transcript_replay():
    rng = np.random.default_rng(1)
    v = sample_windows(BernoulliProduct(0.5), 0, 10, 3, rng)
    tr = draw_randomness(3, 0, 10, P, 0.3, rng)
    a = s6v_step_batch(v, 0, P, 0.3, transcript=tr)
    b = s6v_step_batch(v, 0, P, 0.3, transcript=tr)
    assert np.array_equal(a.values, b.values)
    rec = a.record(1)
    d = json.loads(rec.to_json(4, [7, 1]))
    assert d["t"] == 4 and d["seed_path"] == [7, 1] and d["values"] == a.values[1].tolist()
    assert tr.to_dict(1)["boundary_in"] == int(tr.boundary_in[1])


def test_field_jump_law():
    b2 = np.array([0.2, 0.6, 0.45])
    rng = np.random.default_rng(2)
    N = 200_000
    j = _field_jumps(np.zeros(N, dtype=np.int64), lambda y: b2[y % 3], rng)
    for n in range(1, 6):
        want = (1 - b2[n % 3]) * math.prod(b2[k % 3] for k in range(1, n))
        est = (j == n).mean()
        assert abs(est - want) <= 4 * math.sqrt(want * (1 - want) / N)


def test_unfused_reduces_to_s6v():
    params = ModelParams(2.0, -0.25)
    assert b_field(3, 5, params) == b_field(0, 0, params)
    assert (b_field(0, 0, params).b1, b_field(0, 0, params).b2) == pytest.approx((P.b1, P.b2), abs=1e-12)
    rng = np.random.default_rng(4)
    v = sample_windows(BernoulliProduct(0.5), 0, 12, 50, rng)
    tr = draw_field_randomness(50, 0, 12, 0, params, 0.4, rng)
    a = unfused_step_batch(v, 0, 0, params, 0.4, transcript=tr)
    b = s6v_step_batch(v, 0, P, 0.4, transcript=tr)
    assert np.array_equal(a.values, b.values)


def test_unfused_periodicity():
    params = ModelParams(2.0, -0.05, 2, 3)
    for x in range(-2, 3):
        for t in range(3):
            assert b_field(x, t, params) == b_field(x + 2, t + 3, params)


def test_unfused_marginals_inhomogeneous():
    params = ModelParams(2.0, -0.05, 2, 2)
    spec = Inhomogeneous(0.4, 2.0, 2)
    rng = np.random.default_rng(8)
    N, L = 100_000, 6
    v = sample_windows(spec, 0, L, N, rng)
    for t in range(2):
        v = unfused_step_batch(v, 0, t, params, inhomogeneous_boundary_law(0.4, params, t), rng).values
        d = spec.densities(0, L)[:, 1]
        z = (v.mean(axis=0) - d) / np.sqrt(d * (1 - d) / N)
        assert np.all(np.abs(z) <= 4)
    rec = unfused_step(OccupancyWindow(0, v[0]), 0, params, 0.1, rng)
    assert len(rec.next) == L


def test_shs6v_empty_and_reduction():
    t11 = build_L_tensor(ModelParams(2.0, -0.25))
    rng = np.random.default_rng(0)
    rec = shs6v_step(OccupancyWindow(0, [0, 0, 0]), 0, t11, rng)
    assert rec.next.values.sum() == 0
    N = 100_000
    start = np.array([1, 0, 1, 1])
    a = shs6v_step_batch(np.tile(start, (N, 1)), 0, 0, t11, rng).values
    b = s6v_step_batch(np.tile(start, (N, 1)), 0, P, 0.0, rng).values
    idx = lambda v: v @ (2 ** np.arange(3, -1, -1))
    tv, sigma = two_sample_tv(np.bincount(idx(a), minlength=16), np.bincount(idx(b), minlength=16))
    assert tv <= 3 * sigma


def _pick(cdf, g, h, target):
    lo = 0.0 if target == 0 else cdf[g, h, target - 1]
    return (lo + cdf[g, h, target]) / 2


def test_shs6v_sequential_trace():
    # (3, 2, 1) with no incoming lines; rows chosen so the horizontal line counts are 2, 1, 0
    tensor = build_L_tensor(ModelParams(2.0, -0.02, 3, 2))
    cdf = row_cdfs(tensor)
    u = np.array([[_pick(cdf, 3, 0, 1), _pick(cdf, 2, 2, 3), _pick(cdf, 1, 1, 2)]])
    b = shs6v_step_batch(np.array([[3, 2, 1]]), 0, 0, tensor, h_in=0, uniforms=u)
    assert [int(b.boundary_in[0])] + b.currents[0].tolist() == [0, 2, 1, 0]
    assert b.values[0].tolist() == [1, 3, 2]


def test_shs6v_capacity_check():
    t = build_L_tensor(ModelParams(2.0, -0.05, 2, 2))
    with pytest.raises(ValueError):
        shs6v_step(OccupancyWindow(0, [1, 0]), 0, t, np.random.default_rng(0))
    with pytest.raises(ValueError):
        shs6v_step_batch(np.array([[1, 0]]), 0, 0, t, np.random.default_rng(0), h_in=3)


def test_shifted_step_examples():
    rng = np.random.default_rng(0)
    rec = shifted_step(s6v_step_window, FrameState(shifted=True), OccupancyWindow(3, [0, 0]), P, 0.0, rng)
    assert rec.next.offset == 2 and rec.next.values.sum() == 0 and rec.frame.frame_shift == 1
    with pytest.raises(ValueError):
        shifted_step(s6v_step_window, FrameState(), OccupancyWindow(3, [0, 0]), P, 0.0, rng)


def test_shifted_equals_shifted_unshifted_path():
    rng = np.random.default_rng(9)
    w0 = OccupancyWindow(0, (rng.random(12) < 0.5).astype(int))
    trs = [draw_randomness(1, 0, 12, P, 0.4, rng) for _ in range(4)]
    w, frame = w0, FrameState(shifted=True)
    u = w0
    for tr in trs:
        u = s6v_step_window(u, P, 0.4, transcript=tr).next
        # frame site x after s steps is lattice site x + s, so the same draws sit at the frame offset
        rec = shifted_step(s6v_step_window, frame, w, P, 0.4, transcript=replace(tr, offset=w.offset))
        w, frame = rec.next, rec.frame
    assert w == shift(u, 4)
    assert frame.frame_shift == 4


def test_blocking_one_shifted_step_marginals():
    spec = Blocking(2.0)
    rng = np.random.default_rng(6)
    N, off, L = 100_000, -8, 16
    v = sample_windows(spec, off, L, N, rng)
    right = sample_windows(spec, off + L, 1, N, rng)
    nxt, dropped, exits = moving_frame_step(v, off, P, boundary_current_law(spec, P, off), right, rng)
    d = spec.densities(off, L)[:, 1]
    z = (nxt.mean(axis=0) - d) / np.sqrt(d * (1 - d) / N)
    assert np.all(np.abs(z) <= 4)
    assert dropped.shape == (N,) and exits.shape == (N,)
