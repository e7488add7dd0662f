"""Discrete-event simulator of an elastic inference-serving layer."""
from .components import (
    ADMIT, HOLD, QUEUE_FULL, SCALE_DOWN, SCALE_UP, SHED, THROTTLED,
    HybridRateLimiter, Replica, Request, Router, TokenBucket, WarmPool, autoscale_decide,
    batcher_dispatch, rate_limiter_admit, route, screen_candidates, service_time,
    warm_pool_acquire,
)
from .engine import MetricsReport, Simulation, simulate, write_metrics
from .scenario import (
    Arrival, Autoscale, Batching, Cascade, Fleet, Limiter, Scenario, ServiceModel, Tier,
)

__all__ = [
    "ADMIT", "HOLD", "QUEUE_FULL", "SCALE_DOWN", "SCALE_UP", "SHED", "THROTTLED",
    "Arrival", "Autoscale", "Batching", "Cascade", "Fleet", "HybridRateLimiter", "Limiter",
    "MetricsReport", "Replica", "Request", "Router", "Scenario", "ServiceModel", "Simulation",
    "Tier", "TokenBucket", "WarmPool", "autoscale_decide", "batcher_dispatch",
    "rate_limiter_admit", "route", "screen_candidates", "service_time", "simulate",
    "warm_pool_acquire", "write_metrics",
]
