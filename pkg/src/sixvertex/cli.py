"""Command-line client.

Parses flags and an optional config file into a ``RunConfig``, turns it into a
service request and either calls the service functions in-process or posts to
a running server (``--server URL``). Exit status: 0 all checks passed, 1 a
check failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import COMMANDS, MC_CHECKS, ConfigError, RunConfig, build_config, parse_config_text

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _error_record("usage", message)
        sys.exit(EXIT_USAGE)


def _error_record(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--config", help="flat key = value file; flags override its values")
    add("--q", type=float)
    add("--alpha", type=float)
    add("--I", type=int, dest="I")
    add("--J", type=int, dest="J")
    add("--b1", type=float)
    add("--b2", type=float)
    add("--rho", type=float)
    add("--n", type=int, help="balance class for the convergence check")
    add("--length", type=int)
    add("--offset", type=int)
    add("--replicas", type=int)
    add("--steps", type=int)
    add("--burn-in", type=int, dest="burn_in")
    add("--seed", type=int)
    add("--workers", type=int)
    add("--out", help="output path (JSON; mc also writes <out>.csv)")
    add("--server", help="base URL of a running sixvertex service")

    p = _Parser(prog="sixvertex", description="Stochastic six-vertex model: exact checks, simulation and Monte Carlo battery.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for c in COMMANDS:
        sp = sub.add_parser(c, parents=[common])
        if c == "mc":
            sp.add_argument("--check", choices=MC_CHECKS)
    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    file_values = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                file_values = parse_config_text(fh.read())
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from None
    keys = ("command", "q", "alpha", "I", "J", "b1", "b2", "rho", "n", "length", "offset", "replicas", "steps", "burn_in", "seed", "workers", "out", "check")
    overrides = {k: getattr(ns, k, None) for k in keys}
    return build_config(file_values, overrides)


def _request(cfg: RunConfig):
    from . import service as s

    if cfg.command == "verify":
        return "/verify", s.run_verify, s.VerifyRequest()
    if cfg.command == "dump-weights":
        return "/dump-weights", s.run_dump_weights, s.WeightsRequest(q=cfg.q, alpha=cfg.alpha, I=cfg.I, J=cfg.J)
    if cfg.command == "simulate":
        req = s.SimulateRequest(
            b1=cfg.b1, b2=cfg.b2, rho=cfg.rho, offset=cfg.offset or 0, length=cfg.length or 16, steps=cfg.steps or 10, seed=cfg.seed
        )
        return "/simulate", s.run_simulate, req
    if cfg.command == "fusion":
        g = [min(1, cfg.I), 0]
        req = s.FusionRequest(q=cfg.q, alpha=cfg.alpha, I=cfg.I, J=cfg.J, g=g, h=min(1, cfg.J), replicas=cfg.replicas or 40000, seed=cfg.seed)
        return "/fusion", s.run_fusion, req
    req = s.MCRequest(
        check=cfg.check, b1=cfg.b1, b2=cfg.b2, q=cfg.q, alpha=cfg.alpha, I=cfg.I, J=cfg.J, rho=cfg.rho, n=cfg.n,
        offset=cfg.offset, length=cfg.length, replicas=cfg.replicas, steps=cfg.steps, burn_in=cfg.burn_in,
        seed=cfg.seed, workers=cfg.workers,
    )
    return "/mc", s.run_mc, req


def _call(cfg: RunConfig, server: str | None) -> dict:
    path, fn, req = _request(cfg)
    if server:
        import httpx

        r = httpx.post(server.rstrip("/") + path, json=req.model_dump(), timeout=None)
        if r.status_code == 422:
            raise ConfigError(str(r.json().get("detail")))
        r.raise_for_status()
        return r.json()
    return fn(req).model_dump()


def _table(reports: list[dict]) -> str:
    lines = []
    for r in reports:
        name = r.get("check") or r.get("name")
        val = r.get("max_abs_residual", r.get("estimate"))
        ref = r.get("tolerance", r.get("target"))
        vtxt = "-" if val is None else f"{val:.3e}"
        rtxt = "-" if ref is None else f"{ref:.3e}"
        lines.append(f"{'PASS' if r['pass'] else 'FAIL'}  {name:44s} {vtxt:>11s} {rtxt:>11s}")
    return "\n".join(lines)


def _csv(reports: list[dict]) -> str:
    from .mc import EstimatorReport, reports_to_csv

    rows = []
    for r in reports:
        if "estimate" in r:
            v = {k: (float("nan") if r[k] is None else r[k]) for k in ("estimate", "stderr", "target", "z_score")}
            rows.append(EstimatorReport(r["name"], v["estimate"], v["stderr"], v["target"], v["z_score"], r["verdict"], r["kind"]))
    return reports_to_csv(rows)


def run(cfg: RunConfig, server: str | None = None, stdout=None) -> int:
    out = stdout or sys.stdout
    res = _call(cfg, server)
    if cfg.command == "dump-weights":
        text = json.dumps(res["tensor"], indent=2)
        print(text, file=out)
        if cfg.out:
            with open(cfg.out, "w") as fh:
                fh.write(text + "\n")
        return EXIT_OK if res["max_row_sum_error"] <= 1e-10 else EXIT_FAIL
    if cfg.command == "simulate":
        lines = [json.dumps(r) for r in res["records"]]
        if cfg.out:
            with open(cfg.out, "w") as fh:
                fh.write("\n".join(lines) + "\n")
        else:
            print("\n".join(lines), file=out)
        return EXIT_OK
    res["config"] = cfg.to_dict()
    if cfg.out:
        with open(cfg.out, "w") as fh:
            json.dump(res, fh, indent=2)
        if cfg.command == "mc":
            with open(cfg.out + ".csv", "w") as fh:
                fh.write(_csv(res["reports"]))
    else:
        for r in res["reports"]:
            print(json.dumps(r), file=out)
    print(_table(res["reports"]), file=out)
    s = res["summary"]
    print(f"{cfg.command}: {s['passed']}/{s['total']} passed (seed {cfg.seed})", file=out)
    return EXIT_OK if res["passed"] else EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if ns.command == "serve":
        import uvicorn

        uvicorn.run("sixvertex.service:app", host=ns.host, port=ns.port)
        return EXIT_OK
    try:
        cfg = config_from_args(ns)
        return run(cfg, ns.server)
    except ValueError as e:
        # ConfigError, request validation and unsupported-parameter errors alike
        _error_record("config", str(e))
        return EXIT_USAGE
    except AssertionError as e:
        _error_record("invariant", str(e))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
