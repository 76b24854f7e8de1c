"""HTTP service over the core package.

Each endpoint has a plain function counterpart (``run_verify`` and so on) that
the command-line client calls directly when no server URL is given.
"""
from __future__ import annotations

import json
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .dynamics import s6v_step_batch
from .exact import fused_unfused_check, fusion_identity_check, fusion_suite, single_vertex_suite, stationarity_suite, weight_suite
from .mc import (
    BatteryConfig,
    EstimatorReport,
    ReplicaPlan,
    battery,
    blocking_convergence_mc,
    blocking_radius,
    coupled_assertion_run,
    current_law_profile_mc,
    fused_unfused_mc,
    phi_decay_mc,
    second_class_tail_mc,
    stationarity_mc,
    stream,
)
from .measures import BernoulliProduct, Blocking, boundary_current_law, sample_windows
from .qseries import ModelParams, SixVertexParams, build_L_tensor

SUITES = {
    "weights": weight_suite,
    "single_vertex": single_vertex_suite,
    "stationarity": stationarity_suite,
    "fusion": fusion_suite,
}


class ReportsResponse(BaseModel):
    command: str
    passed: bool
    reports: list[dict]
    summary: dict = Field(default_factory=dict)
    request: dict = Field(default_factory=dict)


class VerifyRequest(BaseModel):
    suites: list[Literal["weights", "single_vertex", "stationarity", "fusion"]] = list(SUITES)


class WeightsRequest(BaseModel):
    q: float = 2.0
    alpha: float = -0.25
    I: int = Field(1, ge=1)
    J: int = Field(1, ge=1)


class WeightsResponse(BaseModel):
    tensor: dict
    max_row_sum_error: float


class SimulateRequest(BaseModel):
    b1: float = 2 / 3
    b2: float = 1 / 3
    rho: float = Field(0.5, ge=0.0, le=1.0)
    offset: int = 0
    length: int = Field(16, ge=1)
    steps: int = Field(10, ge=1)
    seed: int = Field(20240601, ge=0, lt=2**64)


class SimulateResponse(BaseModel):
    seed: int
    records: list[dict]


class MCRequest(BaseModel):
    check: Literal["battery", "stationarity", "current", "phi", "tail", "convergence", "fused", "coupled"] = "battery"
    b1: float = 2 / 3
    b2: float = 1 / 3
    q: float = 2.0
    alpha: float = -0.05
    I: int = Field(2, ge=1)
    J: int = Field(2, ge=1)
    rho: float = Field(0.5, ge=0.0, le=1.0)
    offset: int | None = None
    length: int | None = Field(None, ge=1)
    replicas: int | None = Field(None, ge=2)
    steps: int | None = Field(None, ge=1)
    burn_in: int | None = Field(None, ge=0)
    n: int = 0
    seed: int = Field(20240601, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)


class FusionRequest(BaseModel):
    q: float = 2.0
    alpha: float = -0.05
    I: int = Field(2, ge=1)
    J: int = Field(2, ge=1)
    g: list[int] = [1, 0]
    h: int = 1
    replicas: int = Field(40000, ge=2)
    seed: int = Field(20240601, ge=0, lt=2**64)


def _summary(reports: list[dict], key: str = "pass") -> dict:
    n_pass = sum(1 for r in reports if r[key])
    return {"total": len(reports), "passed": n_pass, "failed": len(reports) - n_pass}


def run_verify(req: VerifyRequest) -> ReportsResponse:
    reports = []
    for s in req.suites:
        reports += [r.to_dict() for r in SUITES[s]()]
    summ = _summary(reports)
    return ReportsResponse(command="verify", passed=summ["failed"] == 0, reports=reports, summary=summ, request=req.model_dump())


def run_dump_weights(req: WeightsRequest) -> WeightsResponse:
    t = build_L_tensor(ModelParams(req.q, req.alpha, req.I, req.J))
    return WeightsResponse(tensor=t.to_dict(), max_row_sum_error=float(np.max(np.abs(t.row_sums() - 1.0))))


def run_simulate(req: SimulateRequest) -> SimulateResponse:
    """A single trajectory started from the product measure, stepped with its boundary law."""
    p = SixVertexParams(req.b1, req.b2)
    rng = stream(req.seed, "simulate", 0)
    spec = BernoulliProduct(req.rho)
    zeta = boundary_current_law(spec, p, req.offset)
    vals = sample_windows(spec, req.offset, req.length, 1, rng)
    records = [{"t": 0, "offset": req.offset, "values": vals[0].tolist(), "seed_path": [req.seed, 0]}]
    for t in range(1, req.steps + 1):
        batch = s6v_step_batch(vals, req.offset, p, zeta, rng)
        records.append(json.loads(batch.record(0).to_json(t, [req.seed, 0])))
        vals = batch.values
    return SimulateResponse(seed=req.seed, records=records)


def _mc_reports(req: MCRequest) -> list:
    p = SixVertexParams(req.b1, req.b2)

    def plan(replicas, steps, length, offset=0, burn_in=0, chunk=1000):
        return ReplicaPlan(
            req.replicas or replicas, req.steps or steps, req.burn_in if req.burn_in is not None else burn_in,
            req.seed, req.offset if req.offset is not None else offset, req.length or length, chunk, req.workers,
        )

    c = req.check
    if c == "battery":
        res = battery(BatteryConfig(master_seed=req.seed, p=(req.b1, req.b2), workers=req.workers))
        return [r for group in res.values() for r in group]
    if c == "stationarity":
        return stationarity_mc(BernoulliProduct(req.rho), "unshifted", plan(2000, 10, 64), p)
    if c == "current":
        pl = plan(4000, 20, 50, offset=-30)
        return current_law_profile_mc(Blocking(p.q, 0), list(range(pl.offset - 1, pl.offset + pl.length)), pl, p)
    if c == "phi":
        pl = plan(200, 50, 250, chunk=50)
        return phi_decay_mc(req.rho, pl, p, margin=min(150, 3 * pl.length // 5))
    if c == "tail":
        return second_class_tail_mc(p, plan(40000, 1, 40, chunk=5000), rho=req.rho)
    if c == "convergence":
        L = abs(req.n) + 2 * blocking_radius(p.q) + 1 if p.q > 1 else 1
        return blocking_convergence_mc(p, req.n, plan(2000, 50, L, burn_in=10 * L, chunk=500))
    if c == "fused":
        return [fused_unfused_mc(ModelParams(req.q, req.alpha, req.I, req.J), (1, 0), 1, plan(40000, 1, 2, chunk=10000))]
    tallies = coupled_assertion_run(p, req.rho, plan(500, 20, 30, chunk=100))
    return [EstimatorReport("coupled_hard_assertions", 0.0, 0.0, 0.0, 0.0, "pass", "hard_assertion", tallies)]


def run_mc(req: MCRequest) -> ReportsResponse:
    reports = [dict(r.to_dict(), **{"pass": r.passed}) for r in _mc_reports(req)]
    summ = _summary(reports)
    return ReportsResponse(command="mc", passed=summ["failed"] == 0, reports=reports, summary=summ, request=req.model_dump())


def run_fusion(req: FusionRequest) -> ReportsResponse:
    params = ModelParams(req.q, req.alpha, req.I, req.J)
    reports = [fusion_identity_check(params).to_dict(), fused_unfused_check(params, tuple(req.g), req.h).to_dict()]
    r = fused_unfused_mc(params, req.g, req.h, ReplicaPlan(req.replicas, 1, 0, req.seed, chunk=10000))
    reports.append(dict(r.to_dict(), **{"pass": r.passed}))
    summ = _summary(reports)
    return ReportsResponse(command="fusion", passed=summ["failed"] == 0, reports=reports, summary=summ, request=req.model_dump())


app = FastAPI(title="sixvertex", version=__version__)


def _guard(fn, req):
    try:
        return fn(req)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e)) from None


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/verify", response_model=ReportsResponse)
def verify_endpoint(req: VerifyRequest) -> ReportsResponse:
    return _guard(run_verify, req)


@app.post("/dump-weights", response_model=WeightsResponse)
def dump_weights_endpoint(req: WeightsRequest) -> WeightsResponse:
    return _guard(run_dump_weights, req)


@app.post("/simulate", response_model=SimulateResponse)
def simulate_endpoint(req: SimulateRequest) -> SimulateResponse:
    return _guard(run_simulate, req)


@app.post("/mc", response_model=ReportsResponse)
def mc_endpoint(req: MCRequest) -> ReportsResponse:
    return _guard(run_mc, req)


@app.post("/fusion", response_model=ReportsResponse)
def fusion_endpoint(req: FusionRequest) -> ReportsResponse:
    return _guard(run_fusion, req)
