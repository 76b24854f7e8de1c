"""Run configuration: a flat ``key = value`` file merged with command-line overrides.

Recognised keys mirror the command-line flags::

    command   verify | simulate | mc | fusion | dump-weights
    q, alpha, I, J          higher-spin parameter point
    b1, b2                  six-vertex parameter point
    rho                     density of the initial product measure
    n                       balance class for the convergence check
    offset, length          window
    replicas, steps, burn_in, seed, workers
    check                   which statistical check ``mc`` runs (default: battery)
    out                     output path

Blank lines and lines starting with ``#`` are ignored.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .qseries import ModelParams, SixVertexParams

COMMANDS = ("verify", "simulate", "mc", "fusion", "dump-weights")
MC_CHECKS = ("battery", "stationarity", "current", "phi", "tail", "convergence", "fused", "coupled")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    q: float = 2.0
    alpha: float = -0.25
    I: int = 1
    J: int = 1
    b1: float = 2 / 3
    b2: float = 1 / 3
    rho: float = 0.5
    n: int = 0
    offset: int | None = None
    length: int | None = None
    replicas: int | None = None
    steps: int | None = None
    burn_in: int | None = None
    seed: int = 20240601
    workers: int = 1
    check: str = "battery"
    out: str | None = None

    def __post_init__(self):
        validate(self)

    def model_params(self) -> ModelParams:
        return ModelParams(self.q, self.alpha, self.I, self.J)

    def six_vertex(self) -> SixVertexParams:
        return SixVertexParams(self.b1, self.b2)

    def to_dict(self) -> dict:
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw):
    if raw is None:
        return None
    t = _TYPES[key]
    try:
        if "int" in t:
            return int(raw)
        if "float" in t:
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return str(raw)


def validate(c: RunConfig) -> None:
    if c.command not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}; got {c.command!r}")
    if c.command in ("fusion", "dump-weights"):
        try:
            c.model_params()
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if c.command in ("simulate", "mc"):
        try:
            c.six_vertex()
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if not 0.0 <= c.rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1]; got {c.rho}")
    if c.length is not None and c.length < 1:
        raise ConfigError("length must be positive")
    for k in ("replicas", "steps"):
        v = getattr(c, k)
        if v is not None and v < 1:
            raise ConfigError(f"{k} must be positive")
    if c.replicas is not None and c.replicas < 2 and c.command in ("mc", "fusion"):
        raise ConfigError("replicas must be at least 2 for a variance estimate")
    if c.burn_in is not None and c.burn_in < 0:
        raise ConfigError("burn_in must be nonnegative")
    if not 0 <= c.seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if c.workers < 1:
        raise ConfigError("workers must be positive")
    if c.check not in MC_CHECKS:
        raise ConfigError(f"check must be one of {', '.join(MC_CHECKS)}")


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        out[key] = val
    return out


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge file values with overrides (overrides win; ``None`` means unset)."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "command" not in merged:
        raise ConfigError("no command given")
    kwargs = {k: _coerce(k, v) for k, v in merged.items()}
    return RunConfig(**kwargs)


def dump_config(c: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in c.to_dict().items() if v is not None)
