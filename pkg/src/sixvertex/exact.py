"""Exact finite verifications by enumeration."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import OccupancyWindow, collapse
from .measures import (
    BernoulliProduct,
    Blocking,
    Inhomogeneous,
    LambdaKernel,
    MeasureSpec,
    QNBParams,
    bernoulli_sum_law,
    boundary_current_law,
    inhomogeneous_boundary_law,
    lambda_row,
    qnb_law,
)
from .qseries import (
    ModelParams,
    SixVertexParams,
    VertexWeightTensor,
    b_field,
    build_L_tensor,
    reflect_tensor,
    six_vertex_weights,
    unit_weights,
)

DEFAULT_STATE_BUDGET = 1024


class BudgetExceeded(ValueError):
    pass


@dataclass(frozen=True)
class ResidualReport:
    name: str
    max_abs_residual: float
    tolerance: float
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_residual <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "check": self.name,
            "max_abs_residual": self.max_abs_residual,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "params": self.params,
            "details": self.details,
        }


def vertex_pushforward(rho: float, zeta: float, p: SixVertexParams) -> np.ndarray:
    """Joint law out[v', h'] of one vertex fed with Ber(rho) from below and Ber(zeta) from the left."""
    w = six_vertex_weights(p).entries
    inp = np.outer([1 - rho, rho], [1 - zeta, zeta])
    return np.einsum("vh,vhab->ab", inp, w)


def swap_zeta(rho: float, q: float) -> float:
    """Solves q rho (1 - zeta) = zeta (1 - rho)."""
    return q * rho / (1.0 - rho + q * rho)


@dataclass(frozen=True, eq=False)
class TransferKernel:
    """One-step transition matrix on {0..capacity}^L, site offset_in first (most significant)."""

    L: int
    capacity: int
    offset_in: int
    offset_out: int
    matrix: np.ndarray = field(repr=False)
    exit_law: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_states(self) -> int:
        return (self.capacity + 1) ** self.L

    def state(self, index: int) -> OccupancyWindow:
        return OccupancyWindow(self.offset_out, state_digits(index, self.L, self.capacity + 1), self.capacity)


def state_digits(index: int, L: int, base: int) -> list[int]:
    out = []
    for _ in range(L):
        index, d = divmod(index, base)
        out.append(d)
    return out[::-1]


def state_index(values, base: int) -> int:
    i = 0
    for v in values:
        i = i * base + int(v)
    return i


def _digits_table(L: int, base: int) -> np.ndarray:
    return np.array(list(itertools.product(range(base), repeat=L)), dtype=np.int64).reshape(-1, L)


def _site_tensors(L: int, offset: int, p: SixVertexParams | None, params: ModelParams | None, t: int):
    if (p is None) == (params is None):
        raise ValueError("give exactly one of a six-vertex point or a model parameter field")
    if p is not None:
        w = six_vertex_weights(p).entries
        return [w] * L
    return [six_vertex_weights(b_field(offset + i, t, params)).entries for i in range(L)]


def _vertex_dp(site_w: list[np.ndarray], base: int, h_law: np.ndarray, budget: int) -> tuple[np.ndarray, np.ndarray]:
    L = len(site_w)
    S = base**L
    if S > budget:
        raise BudgetExceeded(f"{S} states exceed the budget of {budget}")
    digits = _digits_table(L, base)
    H = len(h_law)
    P = np.zeros((S, H, 1))
    P[:, :, 0] = h_law
    for i, w in enumerate(site_w):
        W = w[digits[:, i]]  # (S, H, base, H)
        P = np.einsum("shp,shvk->skpv", P, W).reshape(S, H, -1)
    return P.sum(axis=1), P.sum(axis=2)


def build_transfer_kernel(
    L: int,
    p: SixVertexParams | None = None,
    zeta: float = 0.0,
    *,
    params: ModelParams | None = None,
    t: int = 0,
    offset: int = 0,
    shift_after: bool = False,
    method: str = "vertex",
    budget: int = DEFAULT_STATE_BUDGET,
) -> TransferKernel:
    """Exact one-step kernel of the windowed six-vertex chain.

    ``method="vertex"`` samples vertex by vertex; ``method="particle"`` enumerates
    stay bits and jump lengths, folding every jump past the right edge into a
    single exit branch. The two are computed independently.
    """
    if method == "vertex":
        site_w = _site_tensors(L, offset, p, params, t)
        M, exit_law = _vertex_dp(site_w, 2, np.array([1 - zeta, zeta]), budget)
    elif method == "particle":
        M = _particle_kernel(L, offset, p, params, t, zeta, budget)
        exit_law = None
    else:
        raise ValueError(f"unknown kernel method {method!r}")
    return TransferKernel(L, 1, offset, offset - 1 if shift_after else offset, M, exit_law)


def _particle_kernel(L, offset, p, params, t, zeta, budget) -> np.ndarray:
    S = 2**L
    if S > budget:
        raise BudgetExceeded(f"{S} states exceed the budget of {budget}")
    last = offset + L - 1
    if p is not None:
        b1 = {x: p.b1 for x in range(offset - 1, last + 1)}
        b2 = {x: p.b2 for x in range(offset - 1, last + 1)}
    else:
        b1, b2 = {}, {}
        for x in range(offset - 1, last + 1):
            bp = b_field(x, t, params)
            b1[x], b2[x] = bp.b1, bp.b2

    def jumps(src):
        # (target or None for beyond the window, probability)
        out, surv = [], 1.0
        for y in range(src + 1, last + 1):
            out.append((y, surv * (1 - b2[y])))
            surv *= b2[y]
        out.append((None, surv))
        return out

    M = np.zeros((S, S))
    for s in range(S):
        eta = state_digits(s, L, 2)
        # carry: None (nothing moving), or target site, or "far" (beyond window)
        dist = {(None, ()): 1 - zeta}
        if zeta > 0:
            for y, pr in jumps(offset - 1):
                key = ("far" if y is None else y, ())
                dist[key] = dist.get(key, 0.0) + zeta * pr
        for i in range(L):
            x = offset + i
            new = {}
            for (carry, out), pr in dist.items():
                if pr == 0.0:
                    continue
                occ = eta[i] == 1
                branches = []
                if carry is None:
                    if not occ:
                        branches.append((None, 0, 1.0))
                    else:
                        branches.append((None, 1, b1[x]))
                        branches += [("far" if y is None else y, 0, (1 - b1[x]) * q) for y, q in jumps(x)]
                elif occ:
                    branches += [("far" if y is None else y, 1, q) for y, q in jumps(x)]
                elif carry == x:
                    branches.append((None, 1, 1.0))
                else:
                    branches.append((carry, 0, 1.0))
                for c, v, q in branches:
                    key = (c, out + (v,))
                    new[key] = new.get(key, 0.0) + pr * q
            dist = new
        for (_, out), pr in dist.items():
            M[s, state_index(out, 2)] += pr
    return M


def product_law(spec: MeasureSpec, offset: int, L: int) -> np.ndarray:
    law = np.array([1.0])
    for k in range(offset, offset + L):
        law = np.kron(law, spec.density(k))
    return law


def stationarity_residual(spec: MeasureSpec, kernel: TransferKernel, target: MeasureSpec, name: str = "stationarity", tol: float = 1e-10) -> ResidualReport:
    pi = product_law(spec, kernel.offset_in, kernel.L)
    out = pi @ kernel.matrix
    want = product_law(target, kernel.offset_out, kernel.L)
    return ResidualReport(name, float(np.max(np.abs(out - want))), tol, {
        "L": kernel.L, "offset_in": kernel.offset_in, "offset_out": kernel.offset_out,
        "spec": spec.to_dict(), "target": target.to_dict(),
    })


def product_stationarity(rho: float, p: SixVertexParams, L: int, offset: int = 0, tol: float = 1e-10) -> ResidualReport:
    spec = BernoulliProduct(rho)
    K = build_transfer_kernel(L, p, boundary_current_law(spec, p, offset), offset=offset)
    r = stationarity_residual(spec, K, spec, "product_stationarity", tol)
    r.params.update(b1=p.b1, b2=p.b2)
    return r


def blocking_stationarity(p: SixVertexParams, L: int, offset: int, tol: float = 1e-10) -> ResidualReport:
    spec = Blocking(p.q, 0)
    K = build_transfer_kernel(L, p, boundary_current_law(spec, p, offset), offset=offset, shift_after=True)
    r = stationarity_residual(spec, K, spec, "blocking_moving_frame_stationarity", tol)
    r.params.update(b1=p.b1, b2=p.b2)
    return r


def inhomogeneous_stationarity(rho: float, params: ModelParams, L: int, t: int, offset: int = 0, tol: float = 1e-10) -> ResidualReport:
    spec = Inhomogeneous(rho, params.q, params.I)
    K = build_transfer_kernel(L, params=params, t=t, offset=offset, zeta=inhomogeneous_boundary_law(rho, params, t))
    r = stationarity_residual(spec, K, spec, "periodic_product_stationarity", tol)
    r.params.update(q=params.q, alpha=params.alpha, I=params.I, J=params.J, t=t)
    return r


def build_fused_kernel(tensor: VertexWeightTensor, L: int, h_law: np.ndarray, offset: int = 0, budget: int = DEFAULT_STATE_BUDGET) -> TransferKernel:
    M, exit_law = _vertex_dp([tensor.entries] * L, tensor.I + 1, np.asarray(h_law, dtype=float), budget)
    return TransferKernel(L, tensor.I, offset, offset, M, exit_law)


def _unit(q: float, alpha: float) -> np.ndarray:
    return six_vertex_weights(unit_weights(q, alpha)).entries


def _row_pass(state: dict, weights: list[np.ndarray], h_left: int) -> dict:
    """Push (tuple, exits) -> prob through one row of vertices fed by h_left from the left."""
    out: dict = {}
    for (tup, exits), pr in state.items():
        partial = {((), h_left): pr}
        for i, w in enumerate(weights):
            nxt: dict = {}
            for (top, h), pp in partial.items():
                v = tup[i]
                for v2 in range(w.shape[2]):
                    h2 = v + h - v2
                    if 0 <= h2 < w.shape[3] and w[v, h, v2, h2] > 0:
                        key = (top + (v2,), h2)
                        nxt[key] = nxt.get(key, 0.0) + pp * w[v, h, v2, h2]
            partial = nxt
        for (top, h), pp in partial.items():
            key = (top, exits + h)
            out[key] = out.get(key, 0.0) + pp
    return out


def fusion_grid(params: ModelParams) -> np.ndarray:
    """Right side of the fusion identity by summing over all spin-1/2 grid states."""
    I, J, q, a = params.I, params.J, params.q, params.alpha
    rows = [[_unit(q, a * q ** (i + j)) for i in range(I)] for j in range(J)]
    out = np.zeros((I + 1, J + 1, I + 1, J + 1))
    for v in range(I + 1):
        bottom = lambda_row(LambdaKernel(I, q, reversed_=True), v)
        for h in range(J + 1):
            left = lambda_row(LambdaKernel(J, q), h)
            for ltup, lp in left.items():
                if lp == 0.0:
                    continue
                state = {(b, 0): bp * lp for b, bp in bottom.items() if bp > 0}
                for j in range(J):
                    state = _row_pass(state, rows[j], ltup[j])
                for (top, exits), pr in state.items():
                    out[v, h, sum(top), exits] += pr
    return out


def fusion_column(params: ModelParams) -> np.ndarray:
    """Stack J capacity-(I,1) vertices with parameters alpha q^(j-1), left bits from Lambda_J."""
    I, J, q, a = params.I, params.J, params.q, params.alpha
    cols = [build_L_tensor(ModelParams(q, a * q**j, I, 1)).entries for j in range(J)]
    out = np.zeros((I + 1, J + 1, I + 1, J + 1))
    for h in range(J + 1):
        for ltup, lp in lambda_row(LambdaKernel(J, q), h).items():
            if lp == 0.0:
                continue
            for v in range(I + 1):
                state = {(v, 0): lp}
                for j in range(J):
                    nxt: dict = {}
                    for (vc, ex), pr in state.items():
                        for v2 in range(I + 1):
                            h2 = vc + ltup[j] - v2
                            if 0 <= h2 <= 1 and cols[j][vc, ltup[j], v2, h2] > 0:
                                key = (v2, ex + h2)
                                nxt[key] = nxt.get(key, 0.0) + pr * cols[j][vc, ltup[j], v2, h2]
                    state = nxt
                for (v2, ex), pr in state.items():
                    out[v, h, v2, ex] += pr
    return out


def fusion_identity_check(params: ModelParams, tol: float = 1e-9, max_cells: int = 9) -> ResidualReport:
    if params.I * params.J > max_cells:
        raise BudgetExceeded(f"grid of {params.I}x{params.J} vertices exceeds {max_cells} cells")
    L = build_L_tensor(params).entries
    grid = float(np.max(np.abs(fusion_grid(params) - L)))
    col = float(np.max(np.abs(fusion_column(params) - L)))
    return ResidualReport("fusion_identity", max(grid, col), tol, _pdict(params), {"grid": grid, "column": col})


def _pdict(params: ModelParams) -> dict:
    return {"q": params.q, "alpha": params.alpha, "I": params.I, "J": params.J}


def reflection_check(params: ModelParams, tol: float = 1e-10) -> ResidualReport:
    """L^{I,J}(alpha, q) against the reflected L^{J,I}(1/alpha, 1/q)."""
    a = build_L_tensor(params).entries
    b = reflect_tensor(build_L_tensor(ModelParams(1 / params.q, 1 / params.alpha, params.J, params.I))).entries
    return ResidualReport("reflection", float(np.max(np.abs(a - b))), tol, _pdict(params))


def qexchangeability_check(params: ModelParams, tol: float = 1e-10) -> ResidualReport:
    """Push Lambda'_I rows through a row of (1,J) vertices with parameters alpha q^(i-1).

    Checks that the top tuple, given its total, is again Lambda'_I distributed
    (adjacent transpositions 01 -> 10 multiply its probability by q), and that the
    (total, exit) law equals L^{I,J}.
    """
    I, J, q, a = params.I, params.J, params.q, params.alpha
    row = [build_L_tensor(ModelParams(q, a * q**i, 1, J)).entries for i in range(I)]
    L = build_L_tensor(params).entries
    kern = LambdaKernel(I, q, reversed_=True)
    ratio_res = law_res = sum_res = 0.0
    for v in range(I + 1):
        for h in range(J + 1):
            state = {(b, 0): bp for b, bp in lambda_row(kern, v).items() if bp > 0}
            out = _row_pass(state, row, h)
            by_total: dict = {}
            for (top, ex), pr in out.items():
                by_total.setdefault((sum(top), ex), {})[top] = pr
            for (v2, ex), law in by_total.items():
                mass = sum(law.values())
                sum_res = max(sum_res, abs(mass - L[v, h, v2, ex]))
                if mass < 1e-300:
                    continue
                cond = {tup: pr / mass for tup, pr in law.items()}
                want = lambda_row(kern, v2)
                law_res = max(law_res, max(abs(cond.get(tup, 0.0) - want[tup]) for tup in want))
                for tup, pr in cond.items():
                    for s in range(I - 1):
                        if tup[s] == 0 and tup[s + 1] == 1:
                            sw = tup[:s] + (1, 0) + tup[s + 2 :]
                            ratio_res = max(ratio_res, abs(cond.get(sw, 0.0) - q * pr))
    return ResidualReport(
        "q_exchangeability", max(ratio_res, law_res, sum_res), tol, _pdict(params),
        {"ratio": ratio_res, "conditional_law": law_res, "row_sum": sum_res},
    )


def qnb_sum_check(n: int, gamma: float, q: float, tol: float = 1e-10) -> ResidualReport:
    probs = [q ** (i - 1) * gamma / (1 + q ** (i - 1) * gamma) for i in range(1, n + 1)]
    conv = bernoulli_sum_law(probs)
    qnb = qnb_law(QNBParams.from_K(n, -(q**n) * gamma, q))
    return ResidualReport("qnb_sum", float(np.max(np.abs(conv - qnb))), tol, {"n": n, "gamma": gamma, "q": q})


def collapse_law(law: np.ndarray, L: int, I: int) -> dict[tuple[int, ...], float]:
    """Push a law on {0,1}^L (site 0 most significant) through block sums of size I."""
    out: dict = {}
    for s, pr in enumerate(law):
        if pr == 0.0:
            continue
        w = collapse(OccupancyWindow(0, state_digits(s, L, 2)), I)
        key = tuple(int(x) for x in w.values)
        out[key] = out.get(key, 0.0) + pr
    return out


def fused_unfused_law(params: ModelParams, g: tuple[int, ...], h: int) -> tuple[dict, dict]:
    """One fused step from (g, h) against J unfused steps from Lambda'_I-prepared input.

    Returns both laws of the next block configuration.
    """
    I, J, q = params.I, params.J, params.q
    nb = len(g)
    L = nb * I
    tensor = build_L_tensor(params)
    hl = np.zeros(J + 1)
    hl[h] = 1.0
    fused = build_fused_kernel(tensor, nb, hl)
    row = fused.matrix[state_index(g, I + 1)]
    fused_law = {tuple(state_digits(s, nb, I + 1)): float(pr) for s, pr in enumerate(row) if pr > 0}

    kern = LambdaKernel(I, q, reversed_=True)
    start = np.array([1.0])
    for gb in g:
        blk = lambda_row(kern, gb)
        start = np.kron(start, np.array([blk[t] for t in itertools.product((0, 1), repeat=I)]))
    steps = {}
    for t in range(J):
        for bit in (0, 1):
            steps[t, bit] = build_transfer_kernel(L, params=params, t=t, zeta=float(bit)).matrix
    end = np.zeros_like(start)
    for btup, bp in lambda_row(LambdaKernel(J, q), h).items():
        if bp == 0.0:
            continue
        law = start * bp
        for t in range(J):
            law = law @ steps[t, btup[t]]
        end += law
    return fused_law, collapse_law(end, L, I)


def fused_unfused_check(params: ModelParams, g: tuple[int, ...], h: int, tol: float = 1e-10) -> ResidualReport:
    a, b = fused_unfused_law(params, g, h)
    keys = set(a) | set(b)
    res = max(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)
    d = _pdict(params)
    d.update(g=list(g), h=h)
    return ResidualReport("fused_vs_unfused_exact", float(res), tol, d)


def weight_tensor_check(params: ModelParams, tol: float = 1e-10) -> ResidualReport:
    t = build_L_tensor(params).entries
    I, J = params.I, params.J
    row = float(np.max(np.abs(t.sum(axis=(2, 3)) - 1.0)))
    leak = 0.0
    for i1, j1, i2, j2 in itertools.product(range(I + 1), range(J + 1), range(I + 1), range(J + 1)):
        if i1 + j1 != i2 + j2 and t[i1, j1, i2, j2] != 0.0:
            leak = math.inf
    neg = float(max(0.0, -t.min()))
    return ResidualReport("weight_tensor", max(row, leak, neg), tol, _pdict(params), {"row_sum": row, "conservation": leak, "negativity": neg})


def unit_reduction_check(q: float, alpha: float, tol: float = 1e-12) -> ResidualReport:
    a = build_L_tensor(ModelParams(q, alpha, 1, 1)).entries
    b = six_vertex_weights(unit_weights(q, alpha)).entries
    return ResidualReport("unit_reduction", float(np.max(np.abs(a - b))), tol, {"q": q, "alpha": alpha})


def lcs_check(rho: float, p: SixVertexParams, tol: float = 1e-12) -> ResidualReport:
    z = boundary_current_law(BernoulliProduct(rho), p, 0)
    out = vertex_pushforward(rho, z, p)
    want = np.outer([1 - rho, rho], [1 - z, z])
    return ResidualReport("local_product_balance", float(np.max(np.abs(out - want))), tol, {"rho": rho, "b1": p.b1, "b2": p.b2, "zeta": z})


def swap_check(rho: float, p: SixVertexParams, tol: float = 1e-12) -> ResidualReport:
    z = swap_zeta(rho, p.q)
    out = vertex_pushforward(rho, z, p)
    want = np.outer([1 - z, z], [1 - rho, rho])
    return ResidualReport("local_swap_balance", float(np.max(np.abs(out - want))), tol, {"rho": rho, "b1": p.b1, "b2": p.b2, "zeta": z})


# parameter points used by the default suite
REGIME_POINTS = {
    (1, 1): [(2.0, -0.25), (3.0, -0.1), (1.5, -0.5), (5.0, -0.05), (0.5, -3.0), (0.3, -5.0), (0.8, -2.0), (0.5, -10.0)],
    (1, 2): [(2.0, -0.2), (3.0, -0.05), (1.5, -0.3), (4.0, -0.01), (0.5, -5.0), (0.3, -20.0), (0.8, -2.0), (0.6, -4.0)],
    (2, 1): [(2.0, -0.2), (3.0, -0.05), (1.5, -0.3), (4.0, -0.01), (0.5, -5.0), (0.3, -20.0), (0.8, -2.0), (0.6, -4.0)],
    (2, 2): [(2.0, -0.05), (3.0, -0.02), (1.5, -0.2), (4.0, -0.01), (0.5, -10.0), (0.3, -40.0), (0.8, -3.0), (0.6, -6.0)],
    (3, 2): [(2.0, -0.05), (3.0, -0.01), (1.5, -0.1), (1.2, -0.3), (0.5, -20.0), (0.3, -200.0), (0.8, -4.0), (0.6, -10.0)],
}

UNIT_GRID = [(q, a) for q in (1.5, 2.0, 3.0, 5.0) for a in (-0.02, -0.05, -0.1)] + [
    (q, a) for q in (0.3, 0.5, 0.8) for a in (-4.0, -5.0, -10.0, -50.0)
]


def weight_suite() -> list[ResidualReport]:
    out = []
    for (I, J), pts in REGIME_POINTS.items():
        for q, a in pts:
            out.append(weight_tensor_check(ModelParams(q, a, I, J)))
    out += [unit_reduction_check(q, a) for q, a in UNIT_GRID]
    return out


def single_vertex_suite() -> list[ResidualReport]:
    grid = (0.1, 0.3, 0.5, 0.7, 0.9)
    out = [lcs_check(r, SixVertexParams(b1, b2)) for r in grid for b1 in grid for b2 in grid]
    for r in grid:
        for q in (0.25, 0.5, 2.0, 3.0, 5.0):
            b2 = 0.8 / q if q > 1 else 0.8
            out.append(swap_check(r, SixVertexParams(q * b2, b2)))
    return out


STATIONARITY_POINTS = [(0.5, SixVertexParams(2 / 3, 1 / 3)), (0.3, SixVertexParams(0.4, 0.7)), (0.8, SixVertexParams(0.9, 0.2)), (0.6, SixVertexParams(0.5, 0.5))]
BLOCKING_POINTS = [SixVertexParams(2 / 3, 1 / 3), SixVertexParams(0.8, 0.2), SixVertexParams(0.3, 0.6), SixVertexParams(0.5, 0.4)]


def stationarity_suite(lengths=(2, 4, 6)) -> list[ResidualReport]:
    out = []
    for L in lengths:
        for rho, p in STATIONARITY_POINTS:
            out.append(product_stationarity(rho, p, L))
        for p in BLOCKING_POINTS:
            out.append(blocking_stationarity(p, L, -(L // 2)))
    return out


FUSION_POINTS = [(1, 1, 2.0, -0.25), (2, 1, 2.0, -0.1), (1, 2, 2.0, -0.1), (2, 2, 2.0, -0.05), (2, 2, 0.5, -10.0), (2, 1, 0.5, -5.0)]


def fusion_suite() -> list[ResidualReport]:
    out = [fusion_identity_check(ModelParams(q, a, I, J)) for I, J, q, a in FUSION_POINTS]
    out += [reflection_check(ModelParams(q, a, I, J)) for I, J, q, a in [(1, 2, 2.0, -0.1), (2, 1, 2.0, -0.1), (2, 2, 2.0, -0.05), (2, 2, 0.5, -10.0)]]
    out += [qnb_sum_check(n, g, q) for n in range(1, 7) for g in (0.25, 1.0, 2.0) for q in (0.5, 2.0)]
    for I in range(1, 5):
        for J in (1, 2):
            q, a = 2.0, -0.5 * 2.0 ** (-I - J + 1)
            out.append(qexchangeability_check(ModelParams(q, a, I, J)))
    return out


def default_suite() -> list[ResidualReport]:
    return weight_suite() + single_vertex_suite() + stationarity_suite() + fusion_suite()
