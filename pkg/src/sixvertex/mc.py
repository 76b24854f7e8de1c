"""Monte Carlo harness: seeded replica streams, estimators and the statistical battery.

Every replica batch draws from its own ``SeedSequence`` keyed by the master
seed, a purpose tag and a chunk index, so results do not depend on the number
of workers. Aggregates are sums combined in chunk order.
"""
from __future__ import annotations

import csv
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from .coupling import (
    CoupledState,
    TwoClassConfig,
    TwoClassRandomness,
    coupled_step,
    influx_matrix,
    merged_sites,
    two_class_step,
)
from .dynamics import (
    InvariantViolation,
    draw_field_randomness,
    moving_frame_step,
    s6v_step_batch,
    shs6v_step_batch,
    unfused_step_batch,
)
from .exact import build_fused_kernel, build_transfer_kernel, state_index
from .lattice import OccupancyWindow, Order, compare
from .measures import (
    BernoulliProduct,
    Blocking,
    Inhomogeneous,
    LambdaKernel,
    MeasureSpec,
    UnsupportedMeasureError,
    UnsupportedParameterError,
    an_balance,
    boundary_current_law,
    inhomogeneous_boundary_law,
    lambda_row,
    project_blocking_sampler,
    q_logistic,
    sample_windows,
)
from .qseries import ModelParams, SixVertexParams, build_L_tensor

EQUALITY_Z = 4.0
BOUND_SIGMAS = 3.0
ONE_SIDED_99 = float(stats.norm.ppf(0.99))


# --------------------------------------------------------------------------- plans and reports


@dataclass(frozen=True)
class ReplicaPlan:
    replicas: int = 1000
    steps: int = 10
    burn_in: int = 0
    master_seed: int = 0
    offset: int = 0
    length: int = 64
    chunk: int = 1000
    workers: int = 1

    def __post_init__(self):
        if self.replicas < 2:
            raise ValueError("replicas must be at least 2 for a variance estimate")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.length < 1:
            raise ValueError("length must be positive")
        if self.chunk < 1 or self.workers < 1:
            raise ValueError("chunk and workers must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def chunk_sizes(self, total: int | None = None) -> list[int]:
        n = self.replicas if total is None else total
        full, rest = divmod(n, self.chunk)
        return [self.chunk] * full + ([rest] if rest else [])

    def to_dict(self) -> dict:
        return asdict(self)


def stream(master_seed: int, purpose: str, chunk: int) -> np.random.Generator:
    """Independent generator for one chunk of one named computation."""
    key = zlib.crc32(purpose.encode())
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(key, chunk)))


def _run_job(job):
    fn, seed, purpose, i, n, args = job
    return fn(n, stream(seed, purpose, i), *args)


def map_chunks(fn: Callable, plan: ReplicaPlan, purpose: str, *args, total: int | None = None) -> list:
    """Run ``fn(n, rng, *args)`` for every chunk; results come back in chunk order."""
    jobs = [(fn, plan.master_seed, purpose, i, n, args) for i, n in enumerate(plan.chunk_sizes(total))]
    if plan.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(plan.workers) as ex:
            return list(ex.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


@dataclass
class EstimatorReport:
    name: str
    estimate: float
    stderr: float
    target: float
    z_score: float
    verdict: str
    kind: str = "equality"
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "bound_respected")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("estimate", "stderr", "target", "z_score"):
            v = d[k]
            d[k] = None if v is None or not math.isfinite(v) else v
        return d


def equality_report(name: str, estimate: float, stderr: float, target: float, details: dict | None = None) -> EstimatorReport:
    diff = estimate - target
    if stderr > 0:
        z = diff / stderr
    else:
        z = 0.0 if abs(diff) < 1e-12 else math.copysign(math.inf, diff)
    verdict = "pass" if abs(z) <= EQUALITY_Z else "fail"
    return EstimatorReport(name, float(estimate), float(stderr), float(target), float(z), verdict, "equality", details or {})


def bound_report(name: str, estimate: float, stderr: float, bound: float, details: dict | None = None) -> EstimatorReport:
    diff = estimate - bound
    z = diff / stderr if stderr > 0 else (0.0 if diff <= 1e-12 else math.inf)
    ok = estimate <= bound + BOUND_SIGMAS * stderr + 1e-12
    return EstimatorReport(name, float(estimate), float(stderr), float(bound), float(z), "bound_respected" if ok else "fail", "bound", details or {})


def reports_to_csv(reports: Sequence[EstimatorReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "kind", "estimate", "stderr", "target", "z_score", "verdict"])
    for r in reports:
        w.writerow([r.name, r.kind, repr(r.estimate), repr(r.stderr), repr(r.target), repr(r.z_score), r.verdict])
    return buf.getvalue()


def reports_table(reports: Sequence[EstimatorReport]) -> str:
    lines = [f"{'name':44s} {'estimate':>10s} {'stderr':>9s} {'target':>10s} {'z':>8s}  verdict"]
    for r in reports:
        lines.append(f"{r.name[:44]:44s} {r.estimate:10.5f} {r.stderr:9.5f} {r.target:10.5f} {r.z_score:8.2f}  {r.verdict}")
    return "\n".join(lines)


def _mean_se(total: float, total_sq: float, n: int) -> tuple[float, float]:
    m = total / n
    var = max(total_sq / n - m * m, 0.0) * n / (n - 1)
    return m, math.sqrt(var / n)


# --------------------------------------------------------------------------- stationarity


def _product_rows(spec: MeasureSpec, offset: int, length: int, n: int, rng) -> np.ndarray:
    return sample_windows(spec, offset, length, n, rng)


def _stationarity_chunk(n, rng, spec, kind, p, params, offset, L, steps, t0):
    vals = _product_rows(spec, offset, L, n, rng)
    counts = np.zeros((steps, L), dtype=np.int64)
    for s in range(steps):
        if kind == "shifted":
            zeta = boundary_current_law(spec, p, offset)
            right = sample_windows(spec, offset + L, 1, n, rng)
            vals, _, _ = moving_frame_step(vals, offset, p, zeta, right, rng)
        elif isinstance(spec, Inhomogeneous):
            zeta = inhomogeneous_boundary_law(spec.rho, params, t0 + s)
            vals = unfused_step_batch(vals, offset, t0 + s, params, zeta, rng).values
        else:
            zeta = boundary_current_law(spec, p, offset, s)
            vals = s6v_step_batch(vals, offset, p, zeta, rng).values
        counts[s] = vals.sum(axis=0)
    return counts


def _stationarity_target(spec: MeasureSpec, kind: str, offset: int, L: int, s: int) -> np.ndarray:
    if isinstance(spec, Blocking) and kind == "unshifted":
        spec = Blocking(spec.q, spec.t + s + 1)
    return spec.densities(offset, L)[:, 1]


def stationarity_mc(
    spec: MeasureSpec,
    kind: str,
    plan: ReplicaPlan,
    p: SixVertexParams | None = None,
    params: ModelParams | None = None,
    t0: int = 0,
) -> list[EstimatorReport]:
    """Per-site occupancy after each step against the product densities.

    ``kind`` is ``"unshifted"`` or ``"shifted"``. Bernoulli and blocking specs
    use the homogeneous weights ``p``; the period-I product uses the
    space-time field of ``params`` starting at time ``t0``.
    """
    if kind not in ("unshifted", "shifted"):
        raise ValueError("kind must be 'unshifted' or 'shifted'")
    if isinstance(spec, Inhomogeneous):
        if params is None or kind != "unshifted":
            raise UnsupportedMeasureError("the period-I product needs field parameters and unshifted dynamics")
    elif not isinstance(spec, (BernoulliProduct, Blocking)):
        raise UnsupportedMeasureError(f"no boundary law for {spec.kind}")
    elif p is None:
        raise ValueError("homogeneous dynamics need SixVertexParams")
    off, L, N = plan.offset, plan.length, plan.replicas
    parts = map_chunks(_stationarity_chunk, plan, f"stationarity:{kind}", spec, kind, p, params, off, L, plan.steps, t0)
    counts = np.sum(parts, axis=0)
    out = []
    for s in range(plan.steps):
        target = _stationarity_target(spec, kind, off, L, s)
        for i in range(L):
            d = float(target[i])
            se = math.sqrt(d * (1 - d) / N)
            out.append(equality_report(f"occupancy[t={s + 1},x={off + i}]", counts[s, i] / N, se, d))
    return out


# --------------------------------------------------------------------------- current law under the blocking measure


def blocking_current_target(q: float, t: int, y: int) -> float:
    """P(K_y = 1) under the blocking measure with time offset t."""
    return q_logistic(q, t - y)


def _current_chunk(n, rng, spec, p, offset, L, steps, idx):
    vals = sample_windows(spec, offset, L, n, rng)
    zeta = boundary_current_law(spec, p, offset)
    acc = np.zeros((n, len(idx)))
    for _ in range(steps):
        right = sample_windows(spec, offset + L, 1, n, rng)
        ext = np.concatenate([vals, right], axis=1)
        batch = s6v_step_batch(ext, offset, p, zeta, rng)
        K = np.concatenate([batch.boundary_in.reshape(-1, 1), batch.currents], axis=1)
        acc += K[:, idx]
        vals = batch.values[:, 1:]
    per = acc / steps
    return per.sum(axis=0), (per**2).sum(axis=0)


def current_law_profile_mc(spec: Blocking, ys: Sequence[int], plan: ReplicaPlan, p: SixVertexParams) -> list[EstimatorReport]:
    """Empirical P(K_y = 1) in the moving frame, pooled over steps per replica."""
    if not isinstance(spec, Blocking):
        raise UnsupportedMeasureError("the closed-form current law is for the blocking measure")
    if abs(spec.q - p.q) > 1e-12 * max(1.0, p.q):
        raise ValueError(f"blocking q={spec.q} does not match b1/b2={p.q}")
    if abs(p.q - 1.0) < 1e-12:
        raise UnsupportedParameterError("the blocking measure needs q != 1")
    off, L = plan.offset, plan.length
    idx = []
    for y in ys:
        if not off - 1 <= y <= off + L - 1:
            raise ValueError(f"bond {y} lies outside the window [{off - 1}, {off + L - 1}]")
        idx.append(y - off + 1)
    parts = map_chunks(_current_chunk, plan, "current_law", spec, p, off, L, plan.steps, np.array(idx))
    tot = np.sum([a for a, _ in parts], axis=0)
    tot2 = np.sum([b for _, b in parts], axis=0)
    out = []
    for k, y in enumerate(ys):
        m, se = _mean_se(tot[k], tot2[k], plan.replicas)
        target = blocking_current_target(spec.q, spec.t, y)
        if se == 0.0:
            se = math.sqrt(target * (1 - target) / (plan.replicas * plan.steps))
        out.append(equality_report(f"current[y={y}]", m, se, target, {"q": spec.q, "t": spec.t}))
    return out


def current_law_mc(spec: Blocking, y: int, plan: ReplicaPlan, p: SixVertexParams) -> EstimatorReport:
    return current_law_profile_mc(spec, [y], plan, p)[0]


# --------------------------------------------------------------------------- coupled runs


def check_coupled_step(before: CoupledState, after: CoupledState, merges: list[int], count_nonincreasing: bool = True) -> dict:
    """Hard assertions on one coupled step; raises InvariantViolation on failure."""
    rel = compare(before.eta, before.xi)
    if rel in (Order.GREATER, Order.EQUAL, Order.LESS):
        nrel = compare(after.eta, after.xi)
        if not (nrel == rel or nrel == Order.EQUAL):
            raise InvariantViolation(f"attractivity lost: {rel.value} became {nrel.value} at t={after.t}")
    M = influx_matrix(before, after, np.array(merges, dtype=np.int64))
    worst = int(M[np.triu_indices(M.shape[0])].max())
    if worst > 2:
        raise InvariantViolation(f"discrepancy influx {worst} > 2 at t={after.t}")
    n0, n1 = before.discrepancy_sites().size, after.discrepancy_sites().size
    if count_nonincreasing and n1 > n0:
        raise InvariantViolation(f"discrepancy count grew from {n0} to {n1} at t={after.t}")
    return {"max_influx": worst, "ordered": rel != Order.INCOMPARABLE}


def _coupled_assert_chunk(n, rng, p, rho, L, steps):
    zeta = boundary_current_law(BernoulliProduct(rho), p, 0)
    spec = BernoulliProduct(rho)
    tallies = {"steps": 0, "ordered_steps": 0, "merges": 0, "exits": 0, "max_influx": 0}
    for r in range(n):
        eta = sample_windows(spec, 0, L, 1, rng)[0]
        extra = sample_windows(spec, 0, L, 1, rng)[0]
        mode = r % 3
        if mode == 0:
            xi = eta & extra  # eta >= xi
        elif mode == 1:
            xi = eta | extra  # eta <= xi
        else:
            xi = extra  # unordered
        s = CoupledState.start(OccupancyWindow(0, eta), OccupancyWindow(0, xi))
        for _ in range(steps):
            s2, ev = coupled_step(s, p, rng, zeta_in=zeta)
            m = merged_sites(ev)
            info = check_coupled_step(s, s2, m)
            tallies["steps"] += 1
            tallies["ordered_steps"] += int(info["ordered"])
            tallies["merges"] += len(m)
            tallies["exits"] += sum(1 for e in ev if e.event == "exit")
            tallies["max_influx"] = max(tallies["max_influx"], info["max_influx"])
            s = s2
    return tallies


def coupled_assertion_run(p: SixVertexParams, rho: float, plan: ReplicaPlan) -> dict:
    """Run ``replicas`` coupled trajectories of ``steps`` steps each with every hard check enabled.

    A third of the replicas start with eta >= xi, a third with eta <= xi and a
    third unordered. Violations raise; the returned tallies describe the run.
    """
    parts = map_chunks(_coupled_assert_chunk, plan, "coupled_assertions", p, rho, plan.length, plan.steps)
    out = {"steps": 0, "ordered_steps": 0, "merges": 0, "exits": 0, "max_influx": 0}
    for t in parts:
        for k in out:
            out[k] = max(out[k], t[k]) if k == "max_influx" else out[k] + t[k]
    out["violations"] = 0
    return out


def _phi_chunk(n, rng, p, rho, L, T, lo):
    spec = BernoulliProduct(rho)
    zeta = boundary_current_law(spec, p, 0)
    per = np.zeros((n, T + 1))
    for r in range(n):
        base = sample_windows(spec, 0, L + 1, 1, rng)[0]
        s = CoupledState.start(OccupancyWindow(0, base[:-1]), OccupancyWindow(0, base[1:]))
        per[r, 0] = np.mean(s.eta.values[lo:] != s.xi.values[lo:])
        for t in range(1, T + 1):
            s2, ev = coupled_step(s, p, rng, zeta_in=zeta)
            check_coupled_step(s, s2, merged_sites(ev))
            s = s2
            per[r, t] = np.mean(s.eta.values[lo:] != s.xi.values[lo:])
    return per.sum(axis=0), (per**2).sum(axis=0), (np.diff(per, axis=1)).sum(axis=0), (np.diff(per, axis=1) ** 2).sum(axis=0), (per[:, T] - per[:, 0]).sum(), ((per[:, T] - per[:, 0]) ** 2).sum()


def phi_decay_mc(rho: float, plan: ReplicaPlan, p: SixVertexParams, margin: int = 150) -> list[EstimatorReport]:
    """phi(t) = P(eta_t(0) != xi_t(0)) for the coupling started from (eta, shifted eta).

    The probability is averaged over the sites of the window at least
    ``margin`` sites from its left edge; the truncated left boundary is shared
    by both copies and its influence travels right. ``plan.steps`` is T.
    """
    L, T, N = plan.length, plan.steps, plan.replicas
    if margin >= L:
        raise ValueError("margin must leave measured sites inside the window")
    parts = map_chunks(_phi_chunk, plan, "phi_decay", p, rho, L, T, margin)
    tot = np.sum([x[0] for x in parts], axis=0)
    tot2 = np.sum([x[1] for x in parts], axis=0)
    dtot = np.sum([x[2] for x in parts], axis=0)
    dtot2 = np.sum([x[3] for x in parts], axis=0)
    gap, gap2 = sum(x[4] for x in parts), sum(x[5] for x in parts)
    phi = [_mean_se(tot[t], tot2[t], N) for t in range(T + 1)]
    details = {"phi": [m for m, _ in phi], "stderr": [s for _, s in phi], "measured_from": margin, "rho": rho}
    m0, s0 = phi[0]
    out = [equality_report("phi(0)", m0, s0 if s0 > 0 else 0.0, 2 * rho * (1 - rho), details)]
    for t in range(T):
        m, se = _mean_se(dtot[t], dtot2[t], N)
        out.append(bound_report(f"phi({t + 1})-phi({t})", m, se, 0.0))
    if rho * (1 - rho) > 0:
        m, se = _mean_se(gap, gap2, N)
        ok = m + ONE_SIDED_99 * se < 0
        z = m / se if se > 0 else -math.inf
        out.append(EstimatorReport(f"phi({T})-phi(0)", float(m), float(se), 0.0, float(z), "pass" if ok else "fail", "strict_decrease", {"confidence": 0.99}))
    return out


def _coalescence_chunk(n, rng, p, rho, L, x, y):
    spec = BernoulliProduct(rho)
    zeta = boundary_current_law(spec, p, 0)
    hits = 0
    for _ in range(n):
        base = sample_windows(spec, 0, L, 1, rng)[0]
        eta, xi = base.copy(), base.copy()
        eta[x], xi[x] = 1, 0
        eta[y], xi[y] = 0, 1
        s = CoupledState.start(OccupancyWindow(0, eta), OccupancyWindow(0, xi))
        s2, ev = coupled_step(s, p, rng, zeta_in=zeta)
        check_coupled_step(s, s2, merged_sites(ev))
        hits += any(e.event == "annihilate" and x <= e.site <= y for e in ev)
    return hits


def coalescence_mc(p: SixVertexParams, rho: float, x: int, y: int, plan: ReplicaPlan) -> EstimatorReport:
    """One-step probability that an eta-type at x and a xi-type at y merge inside [x, y].

    The rest of the configuration is a common draw from the product measure.
    Reported with a one-sided 99% Clopper-Pearson lower bound; the verdict
    passes when that bound is positive.
    """
    L = plan.length
    if not 0 <= x < y < L:
        raise ValueError("need 0 <= x < y < length")
    hits = int(sum(map_chunks(_coalescence_chunk, plan, "coalescence", p, rho, L, x, y)))
    N = plan.replicas
    m = hits / N
    lower = float(stats.beta.ppf(0.01, hits, N - hits + 1)) if hits else 0.0
    se = math.sqrt(m * (1 - m) / N)
    return EstimatorReport(f"coalescence[x={x},y={y}]", m, se, 0.0, m / se if se else 0.0, "pass" if lower > 0 else "fail", "positive", {"lower_99": lower, "hits": hits})


# --------------------------------------------------------------------------- second-class tail


def second_class_tail_empty(p: SixVertexParams, r: int) -> float:
    """P(displacement >= r) for a lone second-class particle on an empty lattice."""
    return 1.0 if r <= 0 else (1.0 - p.b1) * p.b2 ** (r - 1)


def _tail_chunk(n, rng, p, rho, L, site, rmax):
    spec = BernoulliProduct(rho)
    zeta = boundary_current_law(spec, p, 0)
    hist = np.zeros(rmax + 1, dtype=np.int64)
    for _ in range(n):
        v = sample_windows(spec, 0, L, 1, rng)[0]
        v[site] = 2
        out = two_class_step(TwoClassConfig(0, v), p, rng=rng, zeta_in=zeta)
        (old, new), = out.second_moves
        d = L - old if new is None else new - old
        hist[min(d, rmax)] += 1
    return hist


def second_class_tail_mc(p: SixVertexParams, plan: ReplicaPlan, rho: float = 0.5, rmax: int = 8, site: int | None = None) -> list[EstimatorReport]:
    """Tail of the one-step displacement of a tracked second-class particle against max(b1, b2)^(r-1)."""
    L = plan.length
    site = L // 2 if site is None else site
    if L - site <= rmax:
        raise ValueError("the window must leave at least rmax sites right of the tracked particle")
    hist = np.sum(map_chunks(_tail_chunk, plan, "second_class_tail", p, rho, L, site, rmax), axis=0)
    N = plan.replicas
    bmax = max(p.b1, p.b2)
    out = []
    for r in range(1, rmax + 1):
        m = hist[r:].sum() / N
        se = math.sqrt(m * (1 - m) / N)
        out.append(bound_report(f"second_class_tail[r={r}]", m, se, bmax ** (r - 1), {"rho": rho}))
    return out


# --------------------------------------------------------------------------- convergence to the projected blocking measure


def blocking_radius(q: float, tol: float = 1e-9) -> int:
    """Smallest radius whose blocking tail certificate is below ``tol``."""
    return max(1, math.ceil(math.log(2.0 / ((q - 1.0) * tol)) / math.log(q)))


def _convergence_chunk(n, rng, p, nbal, a, L, burn, steps):
    sites = np.arange(a, a + L)
    vals = np.broadcast_to((sites <= nbal).astype(np.int64), (n, L)).copy()
    exits = np.zeros(n, dtype=np.int64)
    zero = np.zeros(n, dtype=np.int64)
    acc = np.zeros((n, L))
    for s in range(burn + steps):
        vals, dropped, out = moving_frame_step(vals, a, p, 1.0, zero, rng)
        if not np.all(dropped == 1):
            raise InvariantViolation(f"a hole reached the left edge of the window at step {s + 1}")
        exits += out
        bal = an_balance(vals, a) + exits
        if not np.all(bal == nbal):
            raise InvariantViolation(f"A_n balance changed at step {s + 1}")
        if s >= burn:
            acc += vals
    per = acc / steps
    return per.sum(axis=0), (per**2).sum(axis=0), int(exits.sum())


def blocking_convergence_mc(p: SixVertexParams, n: int, plan: ReplicaPlan, radius: int | None = None, sampler_count: int | None = None) -> list[EstimatorReport]:
    """Moving-frame trajectories from the step configuration 1{x <= n} against the projected blocking measure.

    Per-replica time averages over ``plan.steps`` steps after ``plan.burn_in``
    are compared site by site with rejection samples of the projection; every
    step asserts the left edge stays packed and the balance (window plus
    exited particles) stays equal to n.
    """
    q = p.q
    if q <= 1:
        raise UnsupportedParameterError("convergence to the projected blocking measure is run for q > 1")
    R = blocking_radius(q) if radius is None else radius
    a, b = min(n, 0) - R, max(n, 0) + R
    L = b - a + 1
    parts = map_chunks(_convergence_chunk, plan, f"blocking_convergence:{n}", p, n, a, L, plan.burn_in, plan.steps)
    tot = np.sum([x[0] for x in parts], axis=0)
    tot2 = np.sum([x[1] for x in parts], axis=0)
    exits = sum(x[2] for x in parts)
    N = plan.replicas
    M = sampler_count or N
    R2 = max(abs(a), abs(b), blocking_radius(q))
    ref = project_blocking_sampler(q, n, M, stream(plan.master_seed, f"blocking_sampler:{n}", 0), truncation_radius=R2)
    lo = a - ref.offset
    ref_mean = ref.windows[:, lo : lo + L].mean(axis=0)
    out = []
    for i in range(L):
        m, se = _mean_se(tot[i], tot2[i], N)
        r = float(ref_mean[i])
        pooled = (m * N + r * M) / (N + M)
        se_ref = math.sqrt(pooled * (1 - pooled) / M)
        se_all = math.hypot(se, se_ref)
        out.append(equality_report(f"profile[n={n},x={a + i}]", m, se_all, r, {"reference_stderr": se_ref}))
    out.append(EstimatorReport(f"balance[n={n}]", 0.0, 0.0, 0.0, 0.0, "pass", "hard_assertion", {"steps": plan.burn_in + plan.steps, "replicas": N, "exits": exits, "acceptance_rate": ref.acceptance_rate}))
    return out


# --------------------------------------------------------------------------- fused against unfused


def _fused_chunk(n, rng, params, g, h):
    tensor = build_L_tensor(params)
    vals = np.broadcast_to(np.asarray(g, dtype=np.int64), (n, len(g))).copy()
    nxt = shs6v_step_batch(vals, 0, 0, tensor, rng, h_in=h).values
    return np.bincount(_indices(nxt, params.I + 1), minlength=(params.I + 1) ** len(g))


def _indices(vals: np.ndarray, base: int) -> np.ndarray:
    w = base ** np.arange(vals.shape[1] - 1, -1, -1)
    return vals @ w


def _draw_tuples(law: dict, n: int, rng) -> np.ndarray:
    keys = list(law)
    probs = np.array([law[k] for k in keys])
    pick = rng.choice(len(keys), size=n, p=probs / probs.sum())
    return np.array(keys, dtype=np.int64)[pick]


def _unfused_chunk(n, rng, params, g, h):
    I, J, q = params.I, params.J, params.q
    prep = LambdaKernel(I, q, reversed_=True)
    vals = np.concatenate([_draw_tuples(lambda_row(prep, gb), n, rng) for gb in g], axis=1)
    bits = _draw_tuples(lambda_row(LambdaKernel(J, q), h), n, rng)
    L = vals.shape[1]
    for t in range(J):
        tr = draw_field_randomness(n, 0, L, t, params, 0.0, rng)
        tr = replace(tr, boundary_in=bits[:, t].copy())
        vals = unfused_step_batch(vals, 0, t, params, 0.0, transcript=tr).values
    blocks = vals.reshape(n, len(g), I).sum(axis=2)
    return np.bincount(_indices(blocks, I + 1), minlength=(I + 1) ** len(g))


def two_sample_tv(c1: np.ndarray, c2: np.ndarray) -> tuple[float, float]:
    """Total variation between two empirical laws and its null standard deviation scale."""
    n1, n2 = c1.sum(), c2.sum()
    p1, p2 = c1 / n1, c2 / n2
    pooled = (c1 + c2) / (n1 + n2)
    tv = 0.5 * float(np.abs(p1 - p2).sum())
    sigma = 0.5 * float(np.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2)).sum())
    return tv, sigma


def fused_unfused_mc(params: ModelParams, g: Sequence[int], h: int, plan: ReplicaPlan) -> EstimatorReport:
    """One fused step against J unfused steps on a block window, as a two-sample TV test."""
    g = tuple(int(x) for x in g)
    if any(not 0 <= x <= params.I for x in g) or not 0 <= h <= params.J:
        raise ValueError("block occupancies must lie in [0, I] and h in [0, J]")
    fused = np.sum(map_chunks(_fused_chunk, plan, "fused", params, g, h), axis=0)
    unfused = np.sum(map_chunks(_unfused_chunk, plan, "unfused", params, g, h), axis=0)
    tv, sigma = two_sample_tv(fused, unfused)
    hl = np.zeros(params.J + 1)
    hl[h] = 1.0
    exact = build_fused_kernel(build_L_tensor(params), len(g), hl).matrix[state_index(g, params.I + 1)]
    details = {
        "I": params.I, "J": params.J, "q": params.q, "alpha": params.alpha, "g": list(g), "h": h,
        "exact_tv_fused": 0.5 * float(np.abs(fused / fused.sum() - exact).sum()),
        "exact_tv_unfused": 0.5 * float(np.abs(unfused / unfused.sum() - exact).sum()),
    }
    return bound_report(f"fused_vs_unfused[g={list(g)},h={h}]", tv, sigma, 0.0, details)


# --------------------------------------------------------------------------- kernel cross-validation


def _kernel_chunk(n, rng, p, start, zeta):
    vals = np.broadcast_to(np.asarray(start, dtype=np.int64), (n, len(start))).copy()
    nxt = s6v_step_batch(vals, 0, p, zeta, rng).values
    return np.bincount(_indices(nxt, 2), minlength=2 ** len(start))


def kernel_crosscheck_mc(p: SixVertexParams, start: Sequence[int], zeta: float, plan: ReplicaPlan) -> list[EstimatorReport]:
    """Direct simulation frequencies from one start state against the enumerated kernel row."""
    L = len(start)
    row = build_transfer_kernel(L, p, zeta).matrix[state_index(start, 2)]
    counts = np.sum(map_chunks(_kernel_chunk, plan, "kernel_crosscheck", p, tuple(start), zeta), axis=0)
    N = plan.replicas
    out = []
    for k in range(2**L):
        pr = float(row[k])
        out.append(equality_report(f"kernel[{k:0{L}b}]", counts[k] / N, math.sqrt(pr * (1 - pr) / N), pr))
    return out


# --------------------------------------------------------------------------- battery


@dataclass(frozen=True)
class BatteryConfig:
    """Sizes of the default statistical battery."""

    master_seed: int = 20240601
    p: tuple[float, float] = (2 / 3, 1 / 3)
    current_replicas: int = 4000
    current_steps: int = 20
    tail_replicas: int = 40000
    phi_replicas: int = 200
    phi_length: int = 250
    phi_steps: int = 50
    convergence_replicas: int = 2000
    convergence_steps: int = 50
    convergence_n: tuple[int, ...] = (0, 1)
    fusion_replicas: int = 40000
    fusion_params: tuple = ((2, 2, 2.0, -0.05), (2, 1, 0.5, -5.0))
    workers: int = 1


def battery(cfg: BatteryConfig = BatteryConfig()) -> dict[str, list[EstimatorReport]]:
    """The statistical checks grouped by claim."""
    p = SixVertexParams(*cfg.p)
    seed, wk = cfg.master_seed, cfg.workers
    out: dict[str, list[EstimatorReport]] = {}

    plan = ReplicaPlan(cfg.current_replicas, cfg.current_steps, 0, seed, offset=-30, length=50, workers=wk)
    out["current_law"] = current_law_profile_mc(Blocking(p.q, 0), list(range(-6, 7)), plan, p)

    plan = ReplicaPlan(cfg.tail_replicas, 1, 0, seed, length=40, chunk=5000, workers=wk)
    out["second_class_tail"] = second_class_tail_mc(p, plan, rho=0.5) + second_class_tail_mc(
        SixVertexParams(0.5, 0.5), replace(plan, master_seed=seed + 1), rho=0.5
    )

    plan = ReplicaPlan(cfg.phi_replicas, cfg.phi_steps, 0, seed, length=cfg.phi_length, chunk=50, workers=wk)
    out["phi_decay"] = phi_decay_mc(0.5, plan, p)

    conv = []
    for n in cfg.convergence_n:
        R = blocking_radius(p.q)
        L = abs(n) + 2 * R + 1
        plan = ReplicaPlan(cfg.convergence_replicas, cfg.convergence_steps, 10 * L, seed, length=L, chunk=500, workers=wk)
        conv += blocking_convergence_mc(p, n, plan)
    out["blocking_convergence"] = conv

    fus = []
    for k, (I, J, q, a) in enumerate(cfg.fusion_params):
        params = ModelParams(q, a, I, J)
        plan = ReplicaPlan(cfg.fusion_replicas, 1, 0, seed + k, chunk=10000, workers=wk)
        for g, h in (((1, 0), 1), ((2, 1), J), ((0, 2), 0)):
            fus.append(fused_unfused_mc(params, g, h, plan))
    out["fused_vs_unfused"] = fus
    return out


def battery_json(results: dict[str, list[EstimatorReport]]) -> str:
    return json.dumps({k: [r.to_dict() for r in v] for k, v in results.items()}, indent=2)
