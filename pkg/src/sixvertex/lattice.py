"""Finite windows of lattice configurations and the maps acting on them."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class AlignmentError(ValueError):
    pass


class Order(str, Enum):
    LESS = "less"
    EQUAL = "equal"
    GREATER = "greater"
    INCOMPARABLE = "incomparable"


@dataclass(frozen=True, eq=False)
class OccupancyWindow:
    """Occupancies of sites ``offset, offset+1, ..., offset+len-1``."""

    offset: int
    values: np.ndarray = field(repr=False)
    capacity: int = 1

    def __post_init__(self):
        v = np.array(self.values, dtype=np.int64).reshape(-1)
        if v.size < 1:
            raise ValueError("window must hold at least one site")
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        if v.min() < 0 or v.max() > self.capacity:
            raise ValueError(f"values must lie in [0, {self.capacity}]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "offset", int(self.offset))

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, OccupancyWindow):
            return NotImplemented
        return (
            self.offset == other.offset
            and self.capacity == other.capacity
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.offset, self.capacity, self.values.tobytes()))

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + len(self))

    @property
    def last(self) -> int:
        return self.offset + len(self) - 1

    def at(self, site: int) -> int:
        i = site - self.offset
        if not 0 <= i < len(self):
            raise IndexError(f"site {site} outside window [{self.offset}, {self.last}]")
        return int(self.values[i])

    def particles(self) -> "ParticleConfig":
        if self.capacity != 1:
            raise ValueError("particle positions are only defined for capacity-1 windows")
        return ParticleConfig(self.sites[self.values == 1])

    def to_dict(self) -> dict:
        return {"offset": self.offset, "capacity": self.capacity, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "OccupancyWindow":
        return cls(int(d["offset"]), d["values"], int(d.get("capacity", 1)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["site", "value"])
        for s, v in zip(self.sites, self.values):
            w.writerow([int(s), int(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, capacity: int = 1) -> "OccupancyWindow":
        rows = [r for r in csv.DictReader(io.StringIO(text))]
        sites = [int(r["site"]) for r in rows]
        if sites != list(range(sites[0], sites[0] + len(sites))):
            raise ValueError("CSV sites must be consecutive")
        return cls(sites[0], [int(r["value"]) for r in rows], capacity)


@dataclass(frozen=True, eq=False)
class ParticleConfig:
    positions: np.ndarray

    def __post_init__(self):
        p = np.array(self.positions, dtype=np.int64).reshape(-1)
        if p.size > 1 and np.any(np.diff(p) <= 0):
            raise ValueError("particle positions must be strictly increasing")
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)

    def __len__(self):
        return self.positions.size

    def __eq__(self, other):
        if not isinstance(other, ParticleConfig):
            return NotImplemented
        return np.array_equal(self.positions, other.positions)

    def __iter__(self):
        return iter(int(x) for x in self.positions)

    def window(self, lo: int, hi: int) -> OccupancyWindow:
        """Occupancy on sites lo..hi inclusive."""
        v = np.zeros(hi - lo + 1, dtype=np.int64)
        inside = (self.positions >= lo) & (self.positions <= hi)
        v[self.positions[inside] - lo] = 1
        return OccupancyWindow(lo, v)


@dataclass(frozen=True)
class FrameState:
    time: int = 0
    frame_shift: int = 0
    shifted: bool = False

    def __post_init__(self):
        want = self.time if self.shifted else 0
        if self.frame_shift != want:
            raise ValueError(f"frame_shift must equal {want} (time={self.time}, shifted={self.shifted})")

    def advance(self) -> "FrameState":
        t = self.time + 1
        return FrameState(t, t if self.shifted else 0, self.shifted)


def shift(w: OccupancyWindow, n: int) -> OccupancyWindow:
    """tau_n: the output reads site i+n of the input at site i."""
    return OccupancyWindow(w.offset - n, w.values, w.capacity)


def collapse(w: OccupancyWindow, n: int) -> OccupancyWindow:
    """Block sums over n consecutive sites: site k collects sites kn..kn+n-1."""
    if n < 1:
        raise ValueError("block size must be positive")
    if w.capacity != 1:
        raise ValueError("collapse expects a capacity-1 window")
    if w.offset % n or len(w) % n:
        raise AlignmentError(f"window offset {w.offset} and length {len(w)} must be divisible by {n}")
    return OccupancyWindow(w.offset // n, w.values.reshape(-1, n).sum(axis=1), n)


def compare(a: OccupancyWindow, b: OccupancyWindow) -> Order:
    if a.offset != b.offset or len(a) != len(b) or a.capacity != b.capacity:
        raise ValueError("compare needs windows of identical offset, length and capacity")
    ge = bool(np.all(a.values >= b.values))
    le = bool(np.all(a.values <= b.values))
    if ge and le:
        return Order.EQUAL
    if ge:
        return Order.GREATER
    if le:
        return Order.LESS
    return Order.INCOMPARABLE
