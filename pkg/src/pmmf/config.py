"""Flat run configuration: defaults, then a ``key = value`` file, then flags."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from .clustering import ClusterParams
from .factorize import FactorizeParams
from .solver import SolveConfig

__all__ = ["ConfigError", "RunConfig", "read_config_file", "RUNTIME_KEYS"]

# keys that do not influence any numeric output and are left out of reports
RUNTIME_KEYS = ("threads", "out", "summary", "timings", "config")


class ConfigError(ValueError):
    pass


def _int_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _str_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [str(x) for x in text]
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected on/off, got {text!r}")


def _opt_int(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return int(text)


@dataclass
class RunConfig:
    # input
    input: str | None = None
    graph: str | None = None
    format: str | None = None
    transform: str | None = None
    shift: float = 0.0
    # factorization
    k: int = 2
    stages: int = 15
    eta: float = 0.5
    clusters: int = 2
    cmin: int = 10
    cmax: int = 5000
    dmax: int = 500
    bypass: bool = True
    core_min: int = 10
    max_core: int = 4096
    drop_tol: float = 0.0
    seed: int = 0
    # solve
    tol: float = 1e-5
    max_iter: int = 100
    rhs: int = 20
    precond: list = field(default_factory=lambda: ["pmmf"])
    # compress
    cores: list = field(default_factory=lambda: [8, 16, 32, 64])
    rank_k: int | None = None
    # bench
    sizes: list = field(default_factory=lambda: [1000, 2000, 4000, 8000, 16000, 32000])
    degree: int = 8
    # runtime only
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    out: str | None = None
    summary: str | None = None
    timings: str | None = None
    config: str | None = None

    _PARSERS = {
        "bypass": _bool,
        "precond": _str_list,
        "cores": _int_list,
        "sizes": _int_list,
        "rank_k": _opt_int,
    }

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in fields(cls)]

    @classmethod
    def coerce(cls, key: str, value):
        key = key.replace("-", "_")
        ftypes = {f.name: f.type for f in fields(cls)}
        if key not in ftypes:
            raise ConfigError(f"unknown config key {key!r}")
        if value is None:
            return key, None
        try:
            if key in cls._PARSERS:
                return key, cls._PARSERS[key](value)
            t = ftypes[key]
            if t == "int":
                return key, int(value)
            if t == "float":
                return key, float(value)
            return key, str(value)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad value for {key}: {value!r} ({err})") from None

    @classmethod
    def resolve(cls, file_values: dict | None = None, flags: dict | None = None) -> "RunConfig":
        """Defaults, overridden by ``file_values``, overridden by ``flags``."""
        cfg = cls()
        for source in (file_values or {}, flags or {}):
            for key, value in source.items():
                if value is None:
                    continue
                key, value = cls.coerce(key, value)
                setattr(cfg, key, value)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.factorize_params()
            for name in self.precond:
                self.solve_config(name)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.rhs < 1:
            raise ConfigError("rhs must be >= 1")

    def factorize_params(self, **overrides) -> FactorizeParams:
        cluster = ClusterParams(m_target=self.clusters, c_min=self.cmin, c_max=self.cmax,
                                d_max=self.dmax, bypass_enabled=self.bypass, seed=self.seed)
        kw = dict(k=self.k, n_stages=self.stages, eta=self.eta, cluster=cluster,
                  core_min=self.core_min, seed=self.seed, max_core=self.max_core,
                  drop_tol=self.drop_tol)
        kw.update(overrides)
        return FactorizeParams(**kw)

    def solve_config(self, precond: str) -> SolveConfig:
        return SolveConfig(tol=self.tol, max_iter=self.max_iter, preconditioner=precond,
                           pmmf=self.factorize_params(), rhs_count=self.rhs, seed=self.seed)

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not include_runtime:
            for key in RUNTIME_KEYS:
                d.pop(key)
        return d

    def to_json(self) -> str:
        """Canonical one-line JSON of the numeric configuration."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out: dict = {}
    try:
        fh = open(path)
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key = key.strip().replace("-", "_")
            if key not in RunConfig.keys():
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out
