"""Scenario description for the serving simulator, loadable from JSON.

Example::

    {
      "duration_s": 60, "seed": 1, "routing": "least-loaded",
      "arrival": {"kind": "poisson", "rate": 400},
      "tiers": [{"name": "vip", "share": 0.2, "token_rate": null, "capacity": 0, "priority": true},
                {"name": "std", "share": 0.8, "token_rate": 500, "capacity": 50}],
      "fleet": {"initial_replicas": 2, "max_replicas": 6, "warm_pool_size": 1, "cold_start_ms": 500},
      "batching": {"max_batch": 8, "max_wait_ms": 5},
      "service": {"alpha": 1e-6, "beta": 5, "m": 50, "depth": 3, "h": 64, "noise": "lognormal", "sigma": 0.1},
      "cascade": {"m_prime": 10, "stage1_factor": 0.02},
      "autoscale": {"u_hi": 0.8, "u_lo": 0.3, "window_s": 5, "cooldown_s": 30},
      "limiter": {"reserve_capacity": 10, "reserve_rate": 5, "shed_threshold": 0.95}
    }

``arrival.kind`` is ``poisson`` (``rate`` req/s), ``deterministic``
(``interval_ms``) or ``piecewise`` (``segments``: ``[[start_s, rate], ...]``).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..exceptions import ConfigError
from .components import POLICIES


@dataclass(frozen=True)
class Arrival:
    kind: str = "poisson"
    rate: float = 0.0
    interval_ms: float = 0.0
    segments: tuple = ()

    def __post_init__(self):
        if self.kind not in ("poisson", "deterministic", "piecewise"):
            raise ConfigError(f"unknown arrival kind {self.kind!r}")
        if self.rate < 0:
            raise ConfigError("arrival rate must be >= 0")
        if self.kind == "deterministic" and self.interval_ms <= 0:
            raise ConfigError("deterministic arrivals need interval_ms > 0")
        if self.kind == "piecewise":
            if not self.segments:
                raise ConfigError("piecewise arrivals need segments")
            starts = [s for s, _ in self.segments]
            if starts != sorted(starts) or any(r < 0 for _, r in self.segments):
                raise ConfigError("segments must be sorted by start with rates >= 0")


@dataclass(frozen=True)
class Tier:
    name: str
    share: float
    token_rate: Optional[float] = None
    capacity: float = 0.0
    priority: bool = False
    network_delay_ms: float = 0.0


@dataclass(frozen=True)
class Fleet:
    initial_replicas: int = 1
    max_replicas: int = 1
    warm_pool_size: int = 0
    cold_start_ms: float = 0.0
    provision_ms: Optional[float] = None
    queue_capacity: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.initial_replicas <= self.max_replicas:
            raise ConfigError("need 1 <= initial_replicas <= max_replicas")
        if self.queue_capacity is not None and self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")

    @property
    def replenish_ms(self) -> float:
        return self.cold_start_ms if self.provision_ms is None else self.provision_ms


@dataclass(frozen=True)
class Batching:
    max_batch: int = 1
    max_wait_ms: float = 0.0
    priority_bypass: bool = True

    def __post_init__(self):
        if self.max_batch < 1 or self.max_wait_ms < 0:
            raise ConfigError("need max_batch >= 1 and max_wait_ms >= 0")


@dataclass(frozen=True)
class ServiceModel:
    alpha: float = 1e-6
    beta: float = 5.0
    m: int = 50
    depth: int = 3
    h: int = 64
    noise: str = "lognormal"
    sigma: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if self.noise not in ("lognormal", "exponential", "none"):
            raise ConfigError(f"unknown service noise {self.noise!r}")


@dataclass(frozen=True)
class Cascade:
    m_prime: int
    stage1_factor: float = 0.02


@dataclass(frozen=True)
class Autoscale:
    u_hi: float = 0.8
    u_lo: float = 0.3
    window_s: float = 5.0
    cooldown_s: float = 30.0

    def __post_init__(self):
        if not self.u_lo < self.u_hi:
            raise ConfigError("need u_lo < u_hi")


@dataclass(frozen=True)
class Limiter:
    reserve_capacity: float = 0.0
    reserve_rate: Optional[float] = 0.0
    shed_threshold: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    duration_s: float
    arrival: Arrival = field(default_factory=Arrival)
    tiers: tuple = (Tier("default", 1.0),)
    fleet: Fleet = field(default_factory=Fleet)
    batching: Batching = field(default_factory=Batching)
    routing: str = "least-loaded"
    service: ServiceModel = field(default_factory=ServiceModel)
    cascade: Optional[Cascade] = None
    autoscale: Optional[Autoscale] = None
    limiter: Limiter = field(default_factory=Limiter)
    monitor_interval_s: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.duration_s < 0:
            raise ConfigError("duration_s must be >= 0")
        if not self.tiers:
            raise ConfigError("need at least one tier")
        if abs(sum(t.share for t in self.tiers) - 1.0) > 1e-9:
            raise ConfigError("tier shares must sum to 1")
        if len({t.name for t in self.tiers}) != len(self.tiers):
            raise ConfigError("tier names must be unique")
        if self.routing not in POLICIES:
            raise ConfigError(f"routing must be one of {POLICIES}")
        if self.cascade is not None and not 1 <= self.cascade.m_prime <= self.service.m:
            raise ConfigError("cascade m_prime must lie in [1, m]")
        if self.monitor_interval_s <= 0:
            raise ConfigError("monitor_interval_s must be > 0")

    def replace(self, **changes) -> "Scenario":
        from dataclasses import replace
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        d = dict(d)
        try:
            if "arrival" in d:
                arr = dict(d["arrival"])
                arr["segments"] = tuple(tuple(s) for s in arr.get("segments", ()))
                d["arrival"] = Arrival(**arr)
            if "tiers" in d:
                d["tiers"] = tuple(Tier(**t) for t in d["tiers"])
            for key, typ in (("fleet", Fleet), ("batching", Batching), ("service", ServiceModel),
                             ("limiter", Limiter)):
                if key in d:
                    d[key] = typ(**d[key])
            for key, typ in (("cascade", Cascade), ("autoscale", Autoscale)):
                if d.get(key) is not None:
                    d[key] = typ(**d[key])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"malformed scenario: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "Scenario":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
