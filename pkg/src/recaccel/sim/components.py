"""Building blocks of the serving simulator.  Times are in milliseconds."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..exceptions import ConfigError

ADMIT = "admit"
THROTTLED = "throttled"
SHED = "shed"
QUEUE_FULL = "queue_full"


@dataclass
class Request:
    id: int
    arrival: float
    tier: str
    priority: bool
    m: int
    enqueued: float = 0.0
    replica: int = -1
    batch_size: int = 0
    service_start: float = math.nan
    service_time: float = math.nan
    completion: Optional[float] = None
    drop_reason: Optional[str] = None


class TokenBucket:
    """Bucket of ``capacity`` tokens refilled at ``rate`` tokens per second.

    ``rate=None`` means unlimited.
    """

    def __init__(self, capacity: float, rate: Optional[float], now: float = 0.0):
        self.capacity = capacity
        self.rate = rate
        self.tokens = capacity
        self.last = now

    def refill(self, now: float) -> float:
        if self.rate is not None and now > self.last:
            self.tokens = min(self.capacity, self.tokens + self.rate * (now - self.last) / 1000.0)
        self.last = max(self.last, now)
        return self.tokens

    def try_consume(self, now: float, n: float = 1.0) -> bool:
        if self.rate is None:
            return True
        self.refill(now)
        # Tolerate float drift from fractional refills.
        if self.tokens + 1e-9 >= n:
            self.tokens = max(0.0, self.tokens - n)
            return True
        return False


class HybridRateLimiter:
    """Per-tier token buckets, a shared reserve for priority traffic, and
    utilization-driven shedding of non-priority requests.

    Above ``shed_threshold`` utilization, a non-priority request is admitted
    with probability ``1 - (u - shed_threshold) / (1 - shed_threshold)``.
    """

    def __init__(self, tiers, reserve_capacity: float = 0.0, reserve_rate: Optional[float] = 0.0,
                 shed_threshold: Optional[float] = None):
        self.buckets = {t.name: TokenBucket(t.capacity, t.token_rate) for t in tiers}
        self.reserve = TokenBucket(reserve_capacity, reserve_rate)
        self.shed_threshold = shed_threshold

    def admit(self, request: Request, now: float, utilization: float = 0.0, rng=None) -> str:
        if request.tier not in self.buckets:
            raise ConfigError(f"unknown tier {request.tier!r}")
        thr = self.shed_threshold
        if thr is not None and not request.priority and utilization > thr:
            p_admit = max(0.0, 1.0 - (utilization - thr) / (1.0 - thr)) if thr < 1 else 0.0
            if rng is None or rng.random() >= p_admit:
                return SHED
        if self.buckets[request.tier].try_consume(now):
            return ADMIT
        if request.priority and self.reserve.capacity > 0 and self.reserve.try_consume(now):
            return ADMIT
        return THROTTLED


def rate_limiter_admit(state: HybridRateLimiter, request: Request, now: float,
                       utilization: float = 0.0, rng=None) -> str:
    return state.admit(request, now, utilization, rng)


POLICIES = ("least-loaded", "round-robin", "random")


def route(loads, policy: str, rng=None, counter: int = 0) -> int:
    """Pick a replica index from per-replica outstanding request counts."""
    n = len(loads)
    if n == 0:
        raise ConfigError("no replicas to route to")
    if policy == "least-loaded":
        return int(np.argmin(loads))
    if policy == "round-robin":
        return counter % n
    if policy == "random":
        return int(rng.integers(n))
    raise ConfigError(f"unknown routing policy {policy!r}")


class Router:
    def __init__(self, policy: str, rng):
        if policy not in POLICIES:
            raise ConfigError(f"unknown routing policy {policy!r}")
        self.policy = policy
        self.rng = rng
        self.counter = 0

    def __call__(self, loads) -> int:
        i = route(loads, self.policy, self.rng, self.counter)
        self.counter += 1
        return i


def batcher_dispatch(queue: deque, max_batch: int, max_wait_ms: float, now: float):
    """Pop a batch when ``max_batch`` requests wait or the oldest timed out.

    Returns the list of dispatched requests or ``None`` to keep waiting.
    """
    if max_batch < 1:
        raise ConfigError("max_batch must be >= 1")
    if len(queue) >= max_batch:
        return [queue.popleft() for _ in range(max_batch)]
    if queue and now >= queue[0].enqueued + max_wait_ms:
        return [queue.popleft() for _ in range(len(queue))]
    return None


@dataclass
class Replica:
    index: int
    cold: bool = False
    active: bool = True
    priority_queue: deque = field(default_factory=deque)
    queue: deque = field(default_factory=deque)
    busy: bool = False
    batch: list = field(default_factory=list)
    busy_since: float = 0.0
    busy_total: float = 0.0
    timer_at: Optional[float] = None

    @property
    def waiting(self) -> int:
        return len(self.priority_queue) + len(self.queue)

    @property
    def load(self) -> int:
        return self.waiting + (len(self.batch) if self.busy else 0)

    def enqueue(self, request: Request, bypass: bool = True) -> None:
        if request.priority and bypass:
            self.priority_queue.append(request)
        else:
            self.queue.append(request)

    def next_batch(self, now: float, max_batch: int, max_wait_ms: float):
        """Priority requests go first, alone; otherwise defer to the batcher."""
        if self.priority_queue:
            return [self.priority_queue.popleft()]
        return batcher_dispatch(self.queue, max_batch, max_wait_ms, now)

    def busy_until(self, now: float) -> float:
        """Cumulative busy time up to ``now``."""
        return self.busy_total + (now - self.busy_since if self.busy else 0.0)


def effective_candidates(m: int, cascade=None) -> float:
    """Candidate count charged to the full model (plus the screening stage)."""
    if cascade is None:
        return float(m)
    return cascade.m_prime + cascade.stage1_factor * m


def service_time(batch_size: int, service, cold: bool = False, cold_start_ms: float = 0.0,
                 rng=None, cascade=None) -> float:
    """``alpha * batch * m * depth * h**2 + beta`` with optional noise and cold start."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    m_eff = effective_candidates(service.m, cascade)
    base = service.alpha * batch_size * m_eff * service.depth * service.h ** 2 + service.beta
    if service.noise == "lognormal" and service.sigma > 0:
        base *= math.exp(service.sigma * rng.standard_normal())
    elif service.noise == "exponential":
        base = rng.exponential(base)
    return base + (cold_start_ms if cold else 0.0)


class WarmPool:
    """Pre-initialized instances handed out on scale-up and refilled in the background."""

    def __init__(self, size: int, provision_ms: float):
        self.target = size
        self.available = size
        self.provision_ms = provision_ms

    def acquire(self, now: float) -> tuple:
        """Returns ``(warm, replenish_at)``; ``replenish_at`` is ``None`` when cold."""
        if self.available > 0:
            self.available -= 1
            return True, now + self.provision_ms
        return False, None

    def replenish(self) -> None:
        self.available = min(self.target, self.available + 1)


def warm_pool_acquire(pool: WarmPool, now: float) -> tuple:
    return pool.acquire(now)


SCALE_UP, SCALE_DOWN, HOLD = 1, -1, 0


def autoscale_decide(window, policy, now: float, replicas: int, max_replicas: int,
                     last_action: float = -math.inf) -> int:
    """Threshold rule on the mean of ``window`` utilizations, with cooldown.

    ``now`` and ``last_action`` are in seconds.
    """
    if not len(window):
        return HOLD
    if now - last_action < policy.cooldown_s:
        return HOLD
    u = float(np.mean(window))
    if u > policy.u_hi and replicas < max_replicas:
        return SCALE_UP
    if u < policy.u_lo and replicas > 1:
        return SCALE_DOWN
    return HOLD


def screen_candidates(stage1_scores, m_prime: int) -> np.ndarray:
    """Indices of the ``m_prime`` best stage-1 scores, ties to the lower index."""
    scores = np.asarray(stage1_scores, dtype=np.float64)
    if not 1 <= m_prime <= scores.shape[-1]:
        raise ConfigError(f"m_prime must lie in [1, {scores.shape[-1]}]")
    order = np.argsort(-scores, axis=-1, kind="stable")
    return np.sort(order[..., :m_prime], axis=-1)
