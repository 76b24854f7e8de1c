"""q-series numerics and stochastic vertex weights.

Everything here is evaluated in double precision. The weight tensor
``L[i1, j1, i2, j2]`` is indexed by the number of lines on the bottom, left,
top and right of a vertex, in that order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ROW_SUM_TOL = 1e-10
RENORMALIZE_TOL = 1e-10
CLAMP_TOL = 1e-12
HARD_ROW_TOL = 1e-8


class StochasticityError(ArithmeticError):
    """A weight row failed to sum to one; indicates a numerics bug."""


@dataclass(frozen=True)
class ModelParams:
    q: float
    alpha: float
    I: int = 1
    J: int = 1

    def __post_init__(self):
        if int(self.I) != self.I or int(self.J) != self.J or self.I < 1 or self.J < 1:
            raise ValueError(f"capacities must be positive integers, got I={self.I}, J={self.J}")
        if not regime_ok(self.q, self.alpha, self.I, self.J):
            raise ValueError(
                "parameters violate the stochasticity conditions: need either "
                "(1) 0 <= q < 1 and alpha < -q^(-I-J+1), or "
                "(2) q > 1 and -q^(-I-J+1) < alpha < 0; "
                f"got q={self.q}, alpha={self.alpha}, I={self.I}, J={self.J}"
            )

    @property
    def nu(self) -> float:
        return self.q ** (-self.I)

    def with_alpha(self, alpha: float, I: int | None = None, J: int | None = None) -> "ModelParams":
        return ModelParams(self.q, alpha, self.I if I is None else I, self.J if J is None else J)


def regime_ok(q: float, alpha: float, I: int, J: int) -> bool:
    if q <= 0 or q == 1:
        return False
    bound = -(q ** (-I - J + 1))
    if q < 1:
        return alpha < bound
    return bound < alpha < 0


@dataclass(frozen=True)
class SixVertexParams:
    b1: float
    b2: float

    def __post_init__(self):
        if not (0 < self.b1 < 1 and 0 < self.b2 < 1):
            raise ValueError(f"b1, b2 must lie in (0, 1); got b1={self.b1}, b2={self.b2}")

    @property
    def q(self) -> float:
        return self.b1 / self.b2


@dataclass(frozen=True, eq=False)
class VertexWeightTensor:
    I: int
    J: int
    entries: np.ndarray = field(repr=False)
    q: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (self.I + 1, self.J + 1, self.I + 1, self.J + 1):
            raise ValueError(f"entries have shape {e.shape}, expected {(self.I + 1, self.J + 1) * 2}")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def __getitem__(self, key):
        return self.entries[key]

    def row(self, i1: int, j1: int) -> np.ndarray:
        return self.entries[i1, j1]

    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=(2, 3))

    def to_dict(self) -> dict:
        out = []
        for (i1, j1, i2, j2), w in np.ndenumerate(self.entries):
            if w != 0.0:
                out.append({"i1": i1, "j1": j1, "i2": i2, "j2": j2, "w": float(w)})
        return {"I": self.I, "J": self.J, "q": self.q, "alpha": self.alpha, "entries": out}

    @classmethod
    def from_dict(cls, d: dict) -> "VertexWeightTensor":
        I, J = int(d["I"]), int(d["J"])
        e = np.zeros((I + 1, J + 1, I + 1, J + 1))
        for ent in d["entries"]:
            e[ent["i1"], ent["j1"], ent["i2"], ent["j2"]] = ent["w"]
        return cls(I, J, e, d.get("q"), d.get("alpha"))


def q_pochhammer(b: float, q: float, n: int) -> float:
    """(b; q)_n, including the inverse product for negative n."""
    if n == 0:
        return 1.0
    if n > 0:
        out = 1.0
        for k in range(n):
            out *= 1.0 - b * q**k
        return out
    out = 1.0
    for k in range(-n):
        f = 1.0 - b * q ** (n + k)
        if abs(f) < 1e-14:
            raise ZeroDivisionError(f"(b; q)_{n} has a vanishing factor at k={k} (b={b}, q={q})")
        out /= f
    return out


def reg_hypergeometric_4phi3(n_top: int, a: Sequence[float], b: Sequence[float], q: float, z: float) -> float:
    """Regularized terminating 4phi3 with top parameter q^(-n_top).

    Summed in order k = 0..n_top with Neumaier compensation.
    """
    if n_top < 0:
        raise ValueError("n_top must be nonnegative")
    qn = q ** (-n_top)
    total = 0.0
    comp = 0.0
    for k in range(n_top + 1):
        term = z**k * q_pochhammer(qn, q, k) / q_pochhammer(q, q, k)
        for ai, bi in zip(a, b):
            term *= q_pochhammer(ai, q, k) * q_pochhammer(bi * q**k, q, n_top - k)
        t = total + term
        if abs(total) >= abs(term):
            comp += (total - t) + term
        else:
            comp += (term - t) + total
        total = t
    return total + comp


def _weight(i1: int, j1: int, i2: int, j2: int, q: float, alpha: float, I: int, J: int) -> float:
    nu = q ** (-I)
    expo = (
        (2 * j1 - j1 * j1) / 4
        - (2 * j2 - j2 * j2) / 4
        + (i2 * i2 + i1 * i1) / 4
        + (i2 * (j2 - 1) + i1 * j1) / 2
    )
    num = nu ** (j1 - i2) * alpha ** (j2 - j1 + i2) * q_pochhammer(-alpha / nu, q, j2 - i1)
    den = q_pochhammer(q, q, i2) * q_pochhammer(-alpha, q, i2 + j2) * q_pochhammer(q ** (J + 1 - j1), q, j1 - j2)
    series = reg_hypergeometric_4phi3(
        i2,
        (q ** (-i1), -alpha * q**J, -q * nu / alpha),
        (nu, q ** (1 + j2 - i1), q ** (J + 1 - i2 - j2)),
        q,
        q,
    )
    return q**expo * num / den * series


def _finalize(entries: np.ndarray, I: int, J: int) -> np.ndarray:
    for i1 in range(I + 1):
        for j1 in range(J + 1):
            row = entries[i1, j1]
            if row.min() < -CLAMP_TOL:
                raise StochasticityError(f"row ({i1},{j1}) has entry {row.min():.3e} < 0")
            row[row < 0] = 0.0
            s = row.sum()
            if abs(s - 1.0) > HARD_ROW_TOL:
                raise StochasticityError(f"row ({i1},{j1}) sums to {s!r}")
            if abs(s - 1.0) < RENORMALIZE_TOL:
                row /= s
    return entries


def build_L_tensor(params: ModelParams) -> VertexWeightTensor:
    I, J, q, alpha = params.I, params.J, params.q, params.alpha
    e = np.zeros((I + 1, J + 1, I + 1, J + 1))
    for i1 in range(I + 1):
        for j1 in range(J + 1):
            for i2 in range(I + 1):
                j2 = i1 + j1 - i2
                if 0 <= j2 <= J:
                    e[i1, j1, i2, j2] = _weight(i1, j1, i2, j2, q, alpha, I, J)
    return VertexWeightTensor(I, J, _finalize(e, I, J), q, alpha)


def six_vertex_weights(p: SixVertexParams) -> VertexWeightTensor:
    e = np.zeros((2, 2, 2, 2))
    e[0, 0, 0, 0] = 1.0
    e[1, 1, 1, 1] = 1.0
    e[0, 1, 0, 1] = p.b2
    e[0, 1, 1, 0] = 1.0 - p.b2
    e[1, 0, 1, 0] = p.b1
    e[1, 0, 0, 1] = 1.0 - p.b1
    return VertexWeightTensor(1, 1, e, p.q, None)


def unit_weights(q: float, alpha: float) -> SixVertexParams:
    """b1, b2 of the I = J = 1 weights at spectral parameter alpha."""
    return SixVertexParams((1 + alpha * q) / (1 + alpha), (alpha + 1 / q) / (1 + alpha))


def b_field(x: int, t: int, params: ModelParams) -> SixVertexParams:
    # Python's % already returns the nonnegative remainder for negative x.
    beta = x % params.I + t % params.J
    return unit_weights(params.q, params.alpha * params.q**beta)


def b_table(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """(b1, b2) over one period, indexed [x mod I, t mod J]."""
    b1 = np.empty((params.I, params.J))
    b2 = np.empty((params.I, params.J))
    for x in range(params.I):
        for t in range(params.J):
            p = b_field(x, t, params)
            b1[x, t], b2[x, t] = p.b1, p.b2
    return b1, b2


def reflect_tensor(t: VertexWeightTensor) -> VertexWeightTensor:
    return VertexWeightTensor(
        t.J, t.I, np.transpose(t.entries, (1, 0, 3, 2)),
        None if t.q is None else 1 / t.q,
        None if t.alpha is None else 1 / t.alpha,
    )


__all__ = [
    "ModelParams",
    "SixVertexParams",
    "VertexWeightTensor",
    "StochasticityError",
    "q_pochhammer",
    "reg_hypergeometric_4phi3",
    "build_L_tensor",
    "six_vertex_weights",
    "unit_weights",
    "b_field",
    "b_table",
    "reflect_tensor",
    "regime_ok",
]
