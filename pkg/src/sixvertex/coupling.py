"""Two-class dynamics and the coupling of two copies through shared randomness."""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import InvariantViolation
from .lattice import OccupancyWindow
from .qseries import SixVertexParams

ETA, XI = "eta", "xi"


@dataclass(frozen=True, eq=False)
class TwoClassConfig:
    """Site classes on a window: 0 empty, 1 first class, 2 second class."""

    offset: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.int64).reshape(-1)
        if v.size < 1 or v.min() < 0 or v.max() > 2:
            raise ValueError("two-class values must lie in {0, 1, 2}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return isinstance(other, TwoClassConfig) and self.offset == other.offset and np.array_equal(self.values, other.values)

    @property
    def last(self) -> int:
        return self.offset + self.values.size - 1

    def positions(self, cls: int) -> list[int]:
        return (np.flatnonzero(self.values == cls) + self.offset).tolist()

    def unclass(self) -> OccupancyWindow:
        return OccupancyWindow(self.offset, (self.values > 0).astype(np.int64))


@dataclass(frozen=True, eq=False)
class TwoClassRandomness:
    """Stay bits and jumps for both classes on one window, plus the incoming first-class line."""

    offset: int
    chi1: np.ndarray
    jump1: np.ndarray
    chi2: np.ndarray
    jump2: np.ndarray
    boundary_in: int = 0
    jump_in: int = 1

    @classmethod
    def draw(cls, offset: int, L: int, p: SixVertexParams, zeta_in: float, rng: np.random.Generator) -> "TwoClassRandomness":
        u = rng.random((2, L))
        j = rng.geometric(1.0 - p.b2, size=(2, L))
        return cls(offset, u[0] < p.b1, j[0], u[1] < p.b1, j[1], int(rng.random() < zeta_in), int(rng.geometric(1.0 - p.b2)))


@dataclass(frozen=True)
class TwoClassOutcome:
    config: TwoClassConfig
    first_moves: list[tuple[int, int]]
    second_moves: list[tuple[int, int | None]]


def _first_class(old: list[int], chi, jump, offset: int, b_in: int, j_in: int) -> tuple[list[int], list[int]]:
    """Particle recursion for first-class particles; the incoming line is a forced mover at offset - 1."""
    src = ([offset - 1] if b_in else []) + old
    new: list[int] = []
    prev = None
    for i, x in enumerate(src):
        nxt = src[i + 1] if i + 1 < len(src) else None
        if x == offset - 1 and b_in and i == 0:
            y = x + j_in
        elif prev != x and chi[x - offset]:
            y = x
        else:
            y = x + int(jump[x - offset])
        if nxt is not None and y > nxt:
            y = nxt
        new.append(y)
        prev = y
    return src, new


def two_class_step(cfg: TwoClassConfig, p: SixVertexParams | None = None, rand: TwoClassRandomness | None = None, rng: np.random.Generator | None = None, zeta_in: float = 0.0) -> TwoClassOutcome:
    """One step of the two-class model on a window.

    First-class particles follow the one-class rule and ignore the second class.
    A second-class particle stays if a first-class particle jumped strictly across
    it, or if it was not displaced and its stay bit is set; otherwise it moves to
    min(U, V, next second-class old position). Second-class particles are
    completed left to right.
    """
    if rand is None:
        rand = TwoClassRandomness.draw(cfg.offset, cfg.values.size, p, zeta_in, rng)
    off, last = cfg.offset, cfg.last
    P1 = cfg.positions(1)
    P2 = cfg.positions(2)
    src, N1 = _first_class(P1, rand.chi1, rand.jump1, off, rand.boundary_in, rand.jump_in)

    stayers = sorted(x for x, y in zip(src, N1) if x == y)
    new_first = set(N1)
    movers_old = [x for x, y in zip(src, N1) if x != y]

    new2: list[int | None] = []
    prev = None
    for i, s in enumerate(P2):
        nxt = P2[i + 1] if i + 1 < len(P2) else None
        k = bisect.bisect_left(src, s) - 1
        crossed = k >= 0 and N1[k] > s
        displaced = (prev is not None and prev >= s) or s in new_first
        if crossed or (not displaced and rand.chi2[s - off]):
            y = s
        else:
            m = bisect.bisect_right(movers_old, s)
            U = movers_old[m] if m < len(movers_old) else None
            j = int(rand.jump2[s - off])
            V, count = s, 0
            idx = bisect.bisect_right(stayers, s)
            while count < j:
                V += 1
                if idx < len(stayers) and stayers[idx] == V:
                    idx += 1
                    continue
                count += 1
            y = min(c for c in (U, V, nxt) if c is not None)
        new2.append(y)
        prev = y

    vals = np.zeros(cfg.values.size, dtype=np.int64)
    for y in N1:
        if y <= last:
            vals[y - off] = 1
    moves2 = []
    for s, y in zip(P2, new2):
        if y > last:
            moves2.append((s, None))
            continue
        if vals[y - off]:
            raise InvariantViolation(f"two particles at site {y} after a two-class step")
        vals[y - off] = 2
        moves2.append((s, y))
    return TwoClassOutcome(TwoClassConfig(off, vals), list(zip(src, N1)), moves2)


def trajectory_currents(moves: list[tuple[int, int | None]], offset: int, L: int) -> np.ndarray:
    """K_y for y = offset-1 .. offset+L-1 from (old, new) pairs; new=None means exit."""
    d = np.zeros(L + 2, dtype=np.int64)
    last = offset + L - 1
    for a, b in moves:
        b = last + 1 if b is None or b > last else b
        if b > a:
            d[a - offset + 1] += 1
            d[b - offset + 1] -= 1
    return np.cumsum(d)[:-1]


def check_line_conservation(before: np.ndarray, after: np.ndarray, K: np.ndarray):
    if K.min() < 0 or K.max() > 1:
        raise InvariantViolation("current outside {0, 1}")
    if not np.array_equal(K[:-1] + before, K[1:] + after):
        raise InvariantViolation("line conservation violated in a coupled step")


@dataclass(frozen=True)
class Discrepancy:
    id: int
    type: str
    site: int | None
    created_t: int
    annihilated_t: int | None = None
    exited_t: int | None = None

    @property
    def open(self) -> bool:
        return self.annihilated_t is None and self.exited_t is None


@dataclass(frozen=True, eq=False)
class CoupledState:
    eta: OccupancyWindow
    xi: OccupancyWindow
    t: int = 0
    ledger: tuple[Discrepancy, ...] = field(default=())

    def __post_init__(self):
        if self.eta.offset != self.xi.offset or len(self.eta) != len(self.xi):
            raise ValueError("coupled copies must share the window")

    @classmethod
    def start(cls, eta: OccupancyWindow, xi: OccupancyWindow, t: int = 0) -> "CoupledState":
        led = []
        for typ, sites in ((ETA, _disc(eta, xi)), (XI, _disc(xi, eta))):
            for s in sites:
                led.append(Discrepancy(len(led), typ, s, t))
        return cls(eta, xi, t, tuple(led))

    def tilde(self) -> tuple[TwoClassConfig, TwoClassConfig]:
        e, x = self.eta.values, self.xi.values
        et = np.where(e & x, 1, np.where(e & (1 - x), 2, 0))
        xt = np.where(e & x, 1, np.where(x & (1 - e), 2, 0))
        return TwoClassConfig(self.eta.offset, et), TwoClassConfig(self.eta.offset, xt)

    def discrepancy_sites(self) -> np.ndarray:
        return np.flatnonzero(self.eta.values != self.xi.values) + self.eta.offset


def _disc(a: OccupancyWindow, b: OccupancyWindow) -> list[int]:
    return (np.flatnonzero((a.values == 1) & (b.values == 0)) + a.offset).tolist()


@dataclass(frozen=True)
class CoupledEvent:
    t: int
    event: str
    site: int | None
    type: str

    def to_json(self) -> str:
        return json.dumps({"t": self.t, "event": self.event, "site": self.site, "type": self.type})


def coupled_step(
    s: CoupledState,
    p: SixVertexParams,
    rng: np.random.Generator | None = None,
    zeta_in: float = 0.0,
    rand: TwoClassRandomness | None = None,
    track: bool = True,
) -> tuple[CoupledState, list[CoupledEvent]]:
    """Advance both copies with shared randomness and merge coinciding opposite discrepancies."""
    if track and not s.ledger and s.discrepancy_sites().size:
        s = CoupledState.start(s.eta, s.xi, s.t)
    et, xt = s.tilde()
    L, off = et.values.size, et.offset
    if rand is None:
        rand = TwoClassRandomness.draw(off, L, p, zeta_in, rng)
    oe = two_class_step(et, rand=rand)
    ox = two_class_step(xt, rand=rand)

    ev, xv = oe.config.values, ox.config.values
    merged = (ev == 2) & (xv == 2)
    eta_new = (ev > 0).astype(np.int64)
    xi_new = (xv > 0).astype(np.int64)

    for before, after, out in ((s.eta.values, eta_new, oe), (s.xi.values, xi_new, ox)):
        moves = out.first_moves + out.second_moves
        K = trajectory_currents(moves, off, L)
        check_line_conservation(before, after, K)

    t1 = s.t + 1
    events: list[CoupledEvent] = []
    ledger: tuple[Discrepancy, ...] = ()
    if track:
        ledger, events = _update_ledger(s, oe.second_moves, ox.second_moves, merged, off, t1)
    return CoupledState(OccupancyWindow(off, eta_new), OccupancyWindow(off, xi_new), t1, ledger), events


def _update_ledger(s: CoupledState, moves_e, moves_x, merged, off, t1):
    open_by = {(d.type, d.site): d for d in s.ledger if d.open}
    closed = [d for d in s.ledger if not d.open]
    merged_sites = set((np.flatnonzero(merged) + off).tolist())
    events = []
    out = list(closed)
    for typ, moves in ((ETA, moves_e), (XI, moves_x)):
        if len(moves) != sum(1 for k in open_by if k[0] == typ):
            raise InvariantViolation(f"{typ}-type discrepancy count changed outside moves")
        for old, new in moves:
            d = open_by[(typ, old)]
            if new is None:
                out.append(Discrepancy(d.id, typ, None, d.created_t, None, t1))
                events.append(CoupledEvent(t1, "exit", old, typ))
            elif new in merged_sites:
                out.append(Discrepancy(d.id, typ, new, d.created_t, t1))
                events.append(CoupledEvent(t1, "annihilate", new, typ))
            else:
                out.append(Discrepancy(d.id, typ, new, d.created_t))
                if new != old:
                    events.append(CoupledEvent(t1, "move", new, typ))
    out.sort(key=lambda d: d.id)
    return tuple(out), events


def discrepancy_influx(before: CoupledState, after: CoupledState, a: int, b: int, annihilated: list[int] | np.ndarray) -> int:
    """Discrepancies in [a, b] after minus before, plus two per merge inside [a, b]."""
    def count(st):
        d = st.discrepancy_sites()
        return int(((d >= a) & (d <= b)).sum())

    ann = np.asarray(annihilated)
    inside = int(((ann >= a) & (ann <= b)).sum()) if ann.size else 0
    return count(after) - count(before) + 2 * inside


def influx_matrix(before: CoupledState, after: CoupledState, merged_sites: np.ndarray) -> np.ndarray:
    """Influx for every sub-interval [a, b] of the window at once (entry [a, b] in window indices)."""
    L = len(before.eta)
    d0 = np.concatenate([[0], np.cumsum(before.eta.values != before.xi.values)])
    d1 = np.concatenate([[0], np.cumsum(after.eta.values != after.xi.values)])
    m = np.zeros(L, dtype=np.int64)
    if len(merged_sites):
        m[np.asarray(merged_sites) - before.eta.offset] = 1
    mm = np.concatenate([[0], np.cumsum(m)])
    inter = lambda c: c[None, 1:] - c[:-1, None]  # [a, b] -> c[b+1] - c[a]
    return inter(d1) - inter(d0) + 2 * inter(mm)


def merged_sites(events: list[CoupledEvent]) -> list[int]:
    return sorted({e.site for e in events if e.event == "annihilate"})
