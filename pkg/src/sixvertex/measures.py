"""Product measures on windows, q-negative-binomial laws and the Lambda kernels."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .lattice import OccupancyWindow
from .qseries import ModelParams, SixVertexParams, b_field, q_pochhammer

QNB_TOL = 1e-12


class UnsupportedParameterError(ValueError):
    pass


class UnsupportedMeasureError(ValueError):
    pass


class IterationCapError(RuntimeError):
    pass


@dataclass(frozen=True)
class QNBParams:
    """qNB(b, p) with b = q^(-K) for a positive integer K."""

    b: float
    p: float
    q: float

    def __post_init__(self):
        if self.q <= 0 or self.q == 1 or self.b <= 0:
            raise UnsupportedParameterError(f"need q > 0, q != 1 and b > 0; got b={self.b}, q={self.q}")
        K = round(-math.log(self.b) / math.log(self.q))
        if K < 1 or abs(self.b - self.q ** (-K)) > QNB_TOL * max(1.0, self.b):
            raise UnsupportedParameterError(f"b={self.b} is not q^(-K) for a positive integer K (q={self.q})")

    @property
    def K(self) -> int:
        return round(-math.log(self.b) / math.log(self.q))

    @classmethod
    def from_K(cls, K: int, p: float, q: float) -> "QNBParams":
        return cls(q ** (-K), p, q)


def qnb_pmf(params: QNBParams, n: int) -> float:
    K, p, q = params.K, params.p, params.q
    if n < 0 or n > K:
        return 0.0
    norm = 1.0
    for m in range(1, K + 1):
        norm *= 1.0 - p * q ** (-m)
    return p**n * q_pochhammer(params.b, q, n) / q_pochhammer(q, q, n) / norm


def qnb_law(params: QNBParams) -> np.ndarray:
    return np.array([qnb_pmf(params, n) for n in range(params.K + 1)])


def bernoulli_sum_law(probs) -> np.ndarray:
    """Exact law of a sum of independent Bernoulli variables."""
    law = np.array([1.0])
    for p in probs:
        law = np.convolve(law, [1.0 - p, p])
    return law


def _ber(p: float) -> np.ndarray:
    return np.array([1.0 - p, p])


def q_logistic(q: float, e: float) -> float:
    # q^e / (1 + q^e), evaluated without overflow
    z = e * math.log(q)
    if z > 0:
        return 1.0 / (1.0 + math.exp(-z))
    w = math.exp(z)
    return w / (1.0 + w)


class MeasureSpec:
    kind: ClassVar[str]
    capacity: int = 1

    def density(self, k: int) -> np.ndarray:
        raise NotImplementedError

    def densities(self, offset: int, length: int) -> np.ndarray:
        return np.stack([self.density(k) for k in range(offset, offset + length)])

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: dict) -> "MeasureSpec":
        kinds = {c.kind: c for c in (BernoulliProduct, Blocking, Inhomogeneous, QNBProduct)}
        try:
            cls = kinds[d["kind"]]
        except KeyError:
            raise UnsupportedMeasureError(f"unknown measure kind {d.get('kind')!r}") from None
        return cls(**{k: v for k, v in d.items() if k != "kind"})


@dataclass(frozen=True)
class BernoulliProduct(MeasureSpec):
    kind: ClassVar[str] = "bernoulli_product"
    rho: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")

    def density(self, k: int) -> np.ndarray:
        return _ber(self.rho)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rho": self.rho}


@dataclass(frozen=True)
class Blocking(MeasureSpec):
    """Occupation probability q^(t-k) / (1 + q^(t-k)) at site k."""

    kind: ClassVar[str] = "blocking"
    q: float
    t: int = 0

    def __post_init__(self):
        if self.q <= 0 or self.q == 1:
            raise ValueError(f"blocking measure needs q > 0 and q != 1, got {self.q}")

    def density(self, k: int) -> np.ndarray:
        return _ber(q_logistic(self.q, self.t - k))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "q": self.q, "t": self.t}


@dataclass(frozen=True)
class Inhomogeneous(MeasureSpec):
    """Period-I Bernoulli product whose I-blocks sum to a qNB law."""

    kind: ClassVar[str] = "inhomogeneous"
    rho: float
    q: float
    I: int

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")

    def site_rho(self, k: int) -> float:
        m = (self.I - 1 - k) % self.I
        w = self.rho * self.q**m
        return w / (1.0 - self.rho + w)

    def density(self, k: int) -> np.ndarray:
        return _ber(self.site_rho(k))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rho": self.rho, "q": self.q, "I": self.I}


@dataclass(frozen=True)
class QNBProduct(MeasureSpec):
    """Site laws qNB(q^-I, p_k) on {0..I}.

    ``profile="homogeneous"`` uses p_k = -q^I rho / (1 - rho); ``profile="blocking"``
    uses p_k = -q^(1 - kI).
    """

    kind: ClassVar[str] = "qnb_product"
    q: float
    I: int
    profile: str = "homogeneous"
    rho: float | None = None

    def __post_init__(self):
        if self.profile not in ("homogeneous", "blocking"):
            raise ValueError(f"unknown qNB profile {self.profile!r}")
        if self.profile == "homogeneous" and (self.rho is None or not 0.0 <= self.rho < 1.0):
            raise ValueError("homogeneous qNB product needs rho in [0, 1)")

    @property
    def capacity(self) -> int:
        return self.I

    def site_params(self, k: int) -> QNBParams:
        if self.profile == "homogeneous":
            p = -(self.q**self.I) * self.rho / (1.0 - self.rho)
        else:
            p = -(self.q ** (1 - k * self.I))
        return QNBParams.from_K(self.I, p, self.q)

    def density(self, k: int) -> np.ndarray:
        return qnb_law(self.site_params(k))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "q": self.q, "I": self.I, "profile": self.profile}
        if self.rho is not None:
            d["rho"] = self.rho
        return d


def sample_windows(spec: MeasureSpec, offset: int, length: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent windows as a (count, length) integer array."""
    cdf = np.cumsum(spec.densities(offset, length), axis=1)
    u = rng.random((count, length))
    return (u[:, :, None] >= cdf[None, :, :-1]).sum(axis=2).astype(np.int64)


def sample_window(spec: MeasureSpec, offset: int, length: int, rng: np.random.Generator) -> OccupancyWindow:
    return OccupancyWindow(offset, sample_windows(spec, offset, length, 1, rng)[0], spec.capacity)


@dataclass(frozen=True)
class LambdaKernel:
    """q-exchangeable laws on {0,1}^n given the tuple sum.

    ``reversed_=False`` gives weight q^(sum (r-1) v_r); ``reversed_=True`` reads
    the tuple back to front.
    """

    n: int
    q: float
    reversed_: bool = False

    def exponent(self, tup) -> int:
        n = self.n
        if self.reversed_:
            return sum((n - s) * w for s, w in enumerate(tup, start=1))
        return sum((r - 1) * w for r, w in enumerate(tup, start=1))


def tuples(n: int) -> list[tuple[int, ...]]:
    return list(itertools.product((0, 1), repeat=n))


def lambda_row(kernel: LambdaKernel, v: int) -> dict[tuple[int, ...], float]:
    if not 0 <= v <= kernel.n:
        raise ValueError(f"v must lie in [0, {kernel.n}], got {v}")
    tups = tuples(kernel.n)
    support = [t for t in tups if sum(t) == v]
    ex = np.array([kernel.exponent(t) for t in support], dtype=float)
    logw = (ex - ex.max()) * math.log(kernel.q)
    w = np.exp(logw)
    w /= w.sum()
    out = dict.fromkeys(tups, 0.0)
    out.update(zip(support, w.tolist()))
    return out


def boundary_current_law(spec: MeasureSpec, p: SixVertexParams, x0: int, t: int = 0) -> float:
    """Law of the current entering site x0 from the left, as a Bernoulli parameter.

    For the blocking measure the configuration is taken to be ``spec`` advanced by
    ``t`` unshifted steps, i.e. blocking with time offset ``spec.t + t``.
    """
    if isinstance(spec, BernoulliProduct):
        rho, b1, b2 = spec.rho, p.b1, p.b2
        num = (1.0 - b1) * rho
        den = (1.0 - b2) * (1.0 - rho) + num
        return 0.0 if den == 0.0 else num / den
    if isinstance(spec, Blocking):
        return q_logistic(spec.q, 1 - x0 + spec.t + t)
    raise UnsupportedMeasureError(f"no boundary current law for {spec.kind}")


def inhomogeneous_boundary_law(rho: float, params: ModelParams, t: int) -> float:
    """Boundary current for the period-I product under the space-time field."""
    a = -params.alpha * rho * params.q**params.I * params.q ** (t % params.J)
    return a / (1.0 - rho + a)


def check_inhomogeneous_balance(rho: float, params: ModelParams, x: int, t: int) -> float:
    """Residual of the local balance rho(x)(1-b1)(1-zeta) = zeta(1-b2)(1-rho(x))."""
    r = Inhomogeneous(rho, params.q, params.I).site_rho(x)
    z = inhomogeneous_boundary_law(rho, params, t)
    b = b_field(x, t, params)
    return r * (1 - b.b1) * (1 - z) - z * (1 - b.b2) * (1 - r)


def blocking_tail_mass(q: float, R: int) -> float:
    """Upper bound on the expected number of sites outside [-R, R] that differ from the step profile."""
    if q <= 1:
        raise UnsupportedParameterError("tail certificate is defined for q > 1")
    return 2.0 * q ** (-R) / (q - 1.0)


@dataclass(frozen=True)
class ProjectedSample:
    windows: np.ndarray
    offset: int
    acceptance_rate: float
    tail_mass: float


def project_blocking_sampler(
    q: float,
    n: int,
    count: int,
    rng: np.random.Generator,
    truncation_radius: int = 40,
    batch: int = 4096,
    max_batches: int = 1000,
    tail_tol: float = 1e-9,
) -> ProjectedSample:
    """Rejection samples of the blocking measure restricted to the class with balance n.

    Windows cover sites -R..R; everything left of -R is occupied and everything
    right of R is empty.
    """
    if q <= 1:
        raise UnsupportedParameterError("the projected blocking sampler requires q > 1")
    R = truncation_radius
    tail = blocking_tail_mass(q, R)
    if tail >= tail_tol:
        raise UnsupportedParameterError(f"truncation radius {R} leaves tail mass {tail:.2e} >= {tail_tol:.0e}")
    spec = Blocking(q, 0)
    offset, length = -R, 2 * R + 1
    left = slice(0, R + 1)
    got, tried = [], 0
    need = count
    for _ in range(max_batches):
        w = sample_windows(spec, offset, length, batch, rng)
        tried += batch
        holes_left = (1 - w[:, left]).sum(axis=1)
        right = w[:, R + 1 :].sum(axis=1)
        ok = w[holes_left + n == right]
        got.append(ok[:need])
        need -= len(got[-1])
        if need <= 0:
            acc = sum(len(g) for g in got) / tried
            return ProjectedSample(np.concatenate(got), offset, acc, tail)
    raise IterationCapError(f"only {count - need} of {count} samples accepted after {tried} proposals")


def an_balance(values: np.ndarray, offset: int) -> np.ndarray:
    """sum_{i>=1} eta(i) - sum_{i<=0} (1 - eta(i)) over a window with packed left and empty right exterior."""
    v = np.atleast_2d(values)
    sites = np.arange(offset, offset + v.shape[1])
    return v[:, sites >= 1].sum(axis=1) - (1 - v[:, sites <= 0]).sum(axis=1)
