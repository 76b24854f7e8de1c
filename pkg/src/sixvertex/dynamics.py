"""One-step updates for the six-vertex particle systems.

All window steps sweep sites left to right. The line entering the window from
the left is drawn as Bernoulli(zeta_in) and, when present, behaves like a
particle that departed from site ``offset - 1``. Lines leaving the right edge
are recorded in ``boundary_out`` and dropped.

Batched variants act on an ``(R, L)`` integer array holding R independent
replicas of the same window; the single-window functions wrap them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .lattice import FrameState, OccupancyWindow, ParticleConfig
from .qseries import ModelParams, SixVertexParams, VertexWeightTensor, b_field


class InvariantViolation(AssertionError):
    """A hard invariant (conservation, ordering, current bits) failed."""


@dataclass(frozen=True, eq=False)
class UpdateRandomness:
    """Per-site draws for one step of R replicas on sites offset..offset+L-1.

    ``chi`` is the stay indicator, ``jump`` the jump length of a particle leaving
    the site. ``jump_in`` is the jump of the incoming line, measured from
    ``offset - 1``.
    """

    offset: int
    chi: np.ndarray
    jump: np.ndarray
    boundary_in: np.ndarray
    jump_in: np.ndarray

    def replica(self, r: int) -> "UpdateRandomness":
        return UpdateRandomness(
            self.offset, self.chi[r : r + 1], self.jump[r : r + 1],
            self.boundary_in[r : r + 1], self.jump_in[r : r + 1],
        )

    def to_dict(self, r: int = 0) -> dict:
        sites = range(self.offset, self.offset + self.chi.shape[1])
        return {
            "chi": {str(x): int(c) for x, c in zip(sites, self.chi[r])},
            "jump": {str(x): int(j) for x, j in zip(sites, self.jump[r])},
            "boundary_in": int(self.boundary_in[r]),
            "jump_in": int(self.jump_in[r]),
        }


@dataclass(frozen=True, eq=False)
class StepRecord:
    next: OccupancyWindow
    currents: dict[int, int]
    boundary_in: int
    boundary_out: int
    transcript: UpdateRandomness | np.ndarray | dict | None = field(default=None, repr=False)
    frame: FrameState | None = None

    def to_json(self, t: int, seed_path: list[int] | None = None) -> str:
        return json.dumps({
            "t": t,
            "offset": self.next.offset,
            "values": self.next.values.tolist(),
            "currents": {str(y): k for y, k in self.currents.items()},
            "boundary_in": self.boundary_in,
            "boundary_out": self.boundary_out,
            "seed_path": list(seed_path or []),
        })


@dataclass(frozen=True, eq=False)
class StepBatch:
    """Outputs of one step for R replicas.

    ``currents[:, i]`` is the current across the bond from site offset+i to
    offset+i+1, so its last column equals ``boundary_out``.
    """

    offset_in: int
    offset_out: int
    values: np.ndarray
    currents: np.ndarray
    boundary_in: np.ndarray
    boundary_out: np.ndarray
    capacity: int = 1
    transcript: UpdateRandomness | np.ndarray | None = field(default=None, repr=False)

    def record(self, r: int = 0) -> StepRecord:
        K = {self.offset_in - 1: int(self.boundary_in[r])}
        for i, k in enumerate(self.currents[r]):
            K[self.offset_in + i] = int(k)
        tr = self.transcript
        if isinstance(tr, UpdateRandomness):
            tr = tr.replica(r)
        elif isinstance(tr, np.ndarray):
            tr = tr[r : r + 1]
        return StepRecord(
            OccupancyWindow(self.offset_out, self.values[r], self.capacity),
            K, int(self.boundary_in[r]), int(self.boundary_out[r]), tr,
        )

    def shifted(self, n: int = 1) -> "StepBatch":
        return replace(self, offset_out=self.offset_out - n)


def check_conservation(before: np.ndarray, after: np.ndarray, k_in: np.ndarray, currents: np.ndarray, max_current: int = 1):
    """K_{x-1} + eta_t(x) = K_x + eta_{t+1}(x) at every site, and currents in range."""
    prev = np.concatenate([k_in.reshape(-1, 1), currents[:, :-1]], axis=1)
    if not np.array_equal(prev + before, currents + after):
        bad = np.argwhere(prev + before != currents + after)[0]
        raise InvariantViolation(f"line conservation fails at replica {bad[0]}, window index {bad[1]}")
    if currents.min(initial=0) < 0 or currents.max(initial=0) > max_current:
        raise InvariantViolation(f"current outside [0, {max_current}]")


def _geometric_jumps(b2: float, shape, rng: np.random.Generator) -> np.ndarray:
    return rng.geometric(1.0 - b2, size=shape).astype(np.int64)


def _field_jumps(sources: np.ndarray, b2_of_site: Callable[[np.ndarray], np.ndarray], rng: np.random.Generator) -> np.ndarray:
    """Jumps with P(n) = (1 - b2(x+n)) prod_{k<n} b2(x+k), drawn by sequential passes."""
    flat = sources.reshape(-1)
    out = np.ones(flat.shape, dtype=np.int64)
    active = np.arange(flat.size)
    n = 1
    while active.size:
        passes = rng.random(active.size) < b2_of_site(flat[active] + n)
        active = active[passes]
        n += 1
        out[active] = n
    return out.reshape(sources.shape)


def draw_randomness(
    R: int, offset: int, L: int, p: SixVertexParams, zeta_in: float, rng: np.random.Generator
) -> UpdateRandomness:
    chi = rng.random((R, L)) < p.b1
    jump = _geometric_jumps(p.b2, (R, L), rng)
    b_in = (rng.random(R) < zeta_in).astype(np.int64)
    jump_in = _geometric_jumps(p.b2, R, rng)
    return UpdateRandomness(offset, chi, jump, b_in, jump_in)


def draw_field_randomness(
    R: int, offset: int, L: int, t: int, params: ModelParams, zeta_in: float, rng: np.random.Generator
) -> UpdateRandomness:
    I = params.I
    b1 = np.array([b_field(x, t, params).b1 for x in range(I)])
    b2 = np.array([b_field(x, t, params).b2 for x in range(I)])
    sites = np.arange(offset, offset + L)
    chi = rng.random((R, L)) < b1[sites % I]
    jump = _field_jumps(np.broadcast_to(sites, (R, L)).copy(), lambda y: b2[y % I], rng)
    b_in = (rng.random(R) < zeta_in).astype(np.int64)
    jump_in = _field_jumps(np.full(R, offset - 1), lambda y: b2[y % I], rng)
    return UpdateRandomness(offset, chi, jump, b_in, jump_in)


def sweep(values: np.ndarray, tr: UpdateRandomness) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply a transcript to (R, L) occupancies; returns (next, currents, boundary_out)."""
    values = np.asarray(values)
    R, L = values.shape
    offset = tr.offset
    carrying = tr.boundary_in.astype(bool).copy()
    target = offset - 1 + tr.jump_in
    new = np.zeros((R, L), dtype=np.int64)
    K = np.zeros((R, L), dtype=np.int64)
    for i in range(L):
        x = offset + i
        occ = values[:, i] == 1
        chi = tr.chi[:, i].astype(bool)
        land = carrying & (occ | (target == x))
        depart = (land & occ) | (~carrying & occ & ~chi)
        new[:, i] = np.where(carrying, land, occ & chi)
        carrying = depart | (carrying & ~land)
        target = np.where(depart, x + tr.jump[:, i], target)
        K[:, i] = carrying
    return new, K, K[:, -1].copy()


def _as_batch(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64)
    return v.reshape(1, -1) if v.ndim == 1 else v


def s6v_step_batch(
    values: np.ndarray,
    offset: int,
    p: SixVertexParams,
    zeta_in: float,
    rng: np.random.Generator | None = None,
    transcript: UpdateRandomness | None = None,
) -> StepBatch:
    values = _as_batch(values)
    if values.max(initial=0) > 1:
        raise ValueError("six-vertex windows hold at most one particle per site")
    R, L = values.shape
    tr = transcript if transcript is not None else draw_randomness(R, offset, L, p, zeta_in, rng)
    new, K, out = sweep(values, tr)
    check_conservation(values, new, tr.boundary_in, K)
    return StepBatch(offset, offset, new, K, tr.boundary_in, out, 1, tr)


def s6v_step_window(
    w: OccupancyWindow,
    p: SixVertexParams,
    zeta_in: float,
    rng: np.random.Generator | None = None,
    transcript: UpdateRandomness | None = None,
) -> StepRecord:
    if w.capacity != 1:
        raise ValueError("six-vertex windows must have capacity 1")
    return s6v_step_batch(w.values, w.offset, p, zeta_in, rng, transcript).record(0)


def unfused_step_batch(
    values: np.ndarray,
    offset: int,
    t: int,
    params: ModelParams,
    zeta_in: float,
    rng: np.random.Generator | None = None,
    transcript: UpdateRandomness | None = None,
) -> StepBatch:
    values = _as_batch(values)
    R, L = values.shape
    tr = transcript if transcript is not None else draw_field_randomness(R, offset, L, t, params, zeta_in, rng)
    new, K, out = sweep(values, tr)
    check_conservation(values, new, tr.boundary_in, K)
    return StepBatch(offset, offset, new, K, tr.boundary_in, out, 1, tr)


def unfused_step(
    w: OccupancyWindow,
    t: int,
    params: ModelParams,
    zeta_in: float,
    rng: np.random.Generator | None = None,
    transcript: UpdateRandomness | None = None,
) -> StepRecord:
    if w.capacity != 1:
        raise ValueError("unfused windows must have capacity 1")
    return unfused_step_batch(w.values, w.offset, t, params, zeta_in, rng, transcript).record(0)


def row_cdfs(tensor: VertexWeightTensor) -> np.ndarray:
    """cdf[g, h, i2] of the top output given bottom g and left h."""
    I, J = tensor.I, tensor.J
    probs = np.zeros((I + 1, J + 1, I + 1))
    for g in range(I + 1):
        for h in range(J + 1):
            for i2 in range(I + 1):
                j2 = g + h - i2
                if 0 <= j2 <= J:
                    probs[g, h, i2] = tensor[g, h, i2, j2]
    return np.cumsum(probs, axis=2)


def shs6v_step_batch(
    values: np.ndarray,
    offset: int,
    t: int,
    tensor: VertexWeightTensor,
    rng: np.random.Generator | None = None,
    h_in: int | np.ndarray = 0,
    uniforms: np.ndarray | None = None,
) -> StepBatch:
    """Fused sequential update; ``uniforms`` (R, L) replays a recorded step."""
    values = _as_batch(values)
    if values.max(initial=0) > tensor.I:
        raise ValueError(f"window values exceed the tensor capacity I={tensor.I}")
    R, L = values.shape
    h = np.broadcast_to(np.asarray(h_in, dtype=np.int64), (R,)).copy()
    if h.max(initial=0) > tensor.J or h.min(initial=0) < 0:
        raise ValueError(f"incoming line count must lie in [0, {tensor.J}]")
    u = uniforms if uniforms is not None else rng.random((R, L))
    cdf = row_cdfs(tensor)
    h0 = h.copy()
    new = np.zeros((R, L), dtype=np.int64)
    K = np.zeros((R, L), dtype=np.int64)
    for i in range(L):
        g = values[:, i]
        gp = (u[:, i, None] >= cdf[g, h, :-1]).sum(axis=1)
        h = g + h - gp
        new[:, i] = gp
        K[:, i] = h
    check_conservation(values, new, h0, K, max_current=tensor.J)
    return StepBatch(offset, offset, new, K, h0, K[:, -1].copy(), tensor.I, u)


def shs6v_step(
    g: OccupancyWindow,
    t: int,
    tensor: VertexWeightTensor,
    rng: np.random.Generator | None = None,
    h_in: int = 0,
    uniforms: np.ndarray | None = None,
) -> StepRecord:
    if g.capacity != tensor.I:
        raise ValueError(f"window capacity {g.capacity} does not match tensor I={tensor.I}")
    return shs6v_step_batch(g.values, g.offset, t, tensor, rng, h_in, uniforms).record(0)


def shifted_step(step: Callable[..., StepRecord | StepBatch], frame: FrameState, *args, **kwargs):
    """Run ``step`` and relabel its output one site to the left."""
    if not frame.shifted:
        raise ValueError("shifted_step needs a moving-frame FrameState")
    out = step(*args, **kwargs)
    nxt = frame.advance()
    if isinstance(out, StepBatch):
        return out.shifted(1), nxt
    w = out.next
    return replace(out, next=OccupancyWindow(w.offset - 1, w.values, w.capacity), frame=nxt)


def moving_frame_step(
    values: np.ndarray,
    offset: int,
    p: SixVertexParams,
    zeta_in: float,
    right_fill: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance a fixed window of the moving-frame process by one step.

    The window is extended by one site on the right whose occupancy is
    ``right_fill``; after the step and the unit shift that extra site is back
    inside the window and the leftmost updated site falls out. Returns
    (next values, dropped left column, exits on the right).
    """
    ext = np.concatenate([values, np.asarray(right_fill, dtype=np.int64).reshape(-1, 1)], axis=1)
    batch = s6v_step_batch(ext, offset, p, zeta_in, rng)
    return batch.values[:, 1:], batch.values[:, 0], batch.boundary_out


def s6v_step_finite(
    cfg: ParticleConfig,
    p: SixVertexParams,
    rng: np.random.Generator | None = None,
    transcript: dict | None = None,
) -> tuple[ParticleConfig, StepRecord]:
    """Particle-by-particle update of a finite configuration.

    ``transcript`` may map ``"chi"`` and ``"jump"`` to dicts keyed by site; any
    missing draw is taken from ``rng`` and recorded.
    """
    tr = {"chi": dict((transcript or {}).get("chi", {})), "jump": dict((transcript or {}).get("jump", {}))}

    def chi(x):
        if x not in tr["chi"]:
            tr["chi"][x] = int(rng.random() < p.b1)
        return tr["chi"][x]

    def jump(x):
        if x not in tr["jump"]:
            tr["jump"][x] = int(rng.geometric(1.0 - p.b2))
        return tr["jump"][x]

    old = [int(x) for x in cfg.positions]
    new: list[int] = []
    prev_new = None
    for i, x in enumerate(old):
        nxt = old[i + 1] if i + 1 < len(old) else None
        bumped = prev_new == x
        if not bumped and chi(x) == 1:
            y = x
        else:
            y = x + jump(x)
            if nxt is not None:
                y = min(y, nxt)
        new.append(y)
        prev_new = y
    out = ParticleConfig(new)
    if old:
        lo, hi = old[0], max(new)
        w = out.window(lo, hi)
        currents = {y: sum(1 for a, b in zip(old, new) if a <= y < b) for y in range(lo - 1, hi + 1)}
    else:
        w = OccupancyWindow(0, [0])
        currents = {}
    return out, StepRecord(w, currents, 0, 0, tr)
