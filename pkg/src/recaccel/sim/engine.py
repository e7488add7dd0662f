"""Virtual-time discrete-event simulation of the serving layer.

Events are ``(time_ms, sequence_number, kind, payload)`` tuples on a heap, so
simultaneous events resolve in scheduling order and a run is a pure function
of the scenario.  The simulation stops at ``duration_s``; requests still
queued or in service then count as in flight.
"""
from __future__ import annotations

import csv
import heapq
import json
import math
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .components import (
    ADMIT, HOLD, QUEUE_FULL, SCALE_DOWN, SCALE_UP, HybridRateLimiter, Replica, Request, Router,
    WarmPool, autoscale_decide, service_time,
)
from .scenario import Scenario

ARRIVAL, COMPLETE, TIMEOUT, TICK, REPLENISH = range(5)


@dataclass
class MetricsReport:
    completed: int
    arrivals: int
    dropped: int
    throughput_rps: float
    latency_mean_ms: float
    latency_p50_ms: float
    latency_p95_ms: float
    latency_p99_ms: float
    drop_rate: float
    mean_utilization: float
    max_queue_length: int
    total_compute_ms: float
    replica_timeline: list
    tiers: dict
    drops_by_reason: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _percentiles(x) -> tuple:
    if len(x) == 0:
        return 0.0, 0.0, 0.0, 0.0
    a = np.asarray(x)
    p50, p95, p99 = np.percentile(a, [50, 95, 99])
    return float(a.mean()), float(p50), float(p95), float(p99)


def arrival_times(arrival, duration_ms: float, rng) -> list:
    if arrival.kind == "deterministic":
        n = int(math.ceil(duration_ms / arrival.interval_ms))
        return [k * arrival.interval_ms for k in range(n) if k * arrival.interval_ms < duration_ms]
    if arrival.kind == "poisson":
        segments = [(0.0, arrival.rate)]
    else:
        segments = list(arrival.segments)
    times = []
    for i, (start_s, rate) in enumerate(segments):
        start = start_s * 1000.0
        end = segments[i + 1][0] * 1000.0 if i + 1 < len(segments) else duration_ms
        end = min(end, duration_ms)
        if rate <= 0 or start >= end:
            continue
        # Memorylessness lets each segment restart from its own start.
        t = start + rng.exponential(1000.0 / rate)
        while t < end:
            times.append(t)
            t += rng.exponential(1000.0 / rate)
    return times


class Simulation:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        streams = np.random.SeedSequence(scenario.seed).spawn(5)
        self.rng_arrival, self.rng_tier, self.rng_service, self.rng_route, self.rng_shed = (
            np.random.default_rng(s) for s in streams)
        self.events: list = []
        self.seq = 0
        self.now = 0.0
        self.duration_ms = scenario.duration_s * 1000.0
        fl = scenario.fleet
        self.replicas = [Replica(i) for i in range(fl.initial_replicas)]
        self.pool = WarmPool(fl.warm_pool_size, fl.replenish_ms)
        self.router = Router(scenario.routing, self.rng_route)
        lim = scenario.limiter
        self.limiter = HybridRateLimiter(scenario.tiers, lim.reserve_capacity, lim.reserve_rate,
                                         lim.shed_threshold)
        self.tiers = {t.name: t for t in scenario.tiers}
        self.requests: list = []
        self.utilization = 0.0
        self.util_window: deque = deque()
        self.last_sample = {}
        self.last_tick = 0.0
        self.last_action = -math.inf
        self.timeline = [(0.0, fl.initial_replicas)]
        self.max_queue = 0
        self.total_compute = 0.0

    # -- event plumbing ---------------------------------------------------------
    def push(self, t: float, kind: int, payload=None) -> None:
        heapq.heappush(self.events, (t, self.seq, kind, payload))
        self.seq += 1

    def active(self) -> list:
        return [r for r in self.replicas if r.active]

    def run(self) -> MetricsReport:
        sc = self.sc
        names = [t.name for t in sc.tiers]
        shares = np.array([t.share for t in sc.tiers])
        for i, t in enumerate(arrival_times(sc.arrival, self.duration_ms, self.rng_arrival)):
            tier = names[int(self.rng_tier.choice(len(names), p=shares))]
            req = Request(i, t, tier, self.tiers[tier].priority, sc.service.m)
            self.requests.append(req)
            self.push(t, ARRIVAL, req)
        if self.duration_ms > 0:
            self.push(sc.monitor_interval_s * 1000.0, TICK)
        for r in self.replicas:
            self.last_sample[r.index] = 0.0
        while self.events:
            t, _, kind, payload = heapq.heappop(self.events)
            if t > self.duration_ms:
                break
            self.now = t
            if kind == ARRIVAL:
                self.on_arrival(payload)
            elif kind == COMPLETE:
                self.on_complete(payload)
            elif kind == TIMEOUT:
                payload.timer_at = None
                self.dispatch(payload)
            elif kind == TICK:
                self.on_tick()
            elif kind == REPLENISH:
                self.pool.replenish()
        return self.report()

    # -- handlers ---------------------------------------------------------------
    def on_arrival(self, req: Request) -> None:
        verdict = self.limiter.admit(req, self.now, self.utilization, self.rng_shed)
        if verdict != ADMIT:
            req.drop_reason = verdict
            return
        replicas = self.active()
        r = replicas[self.router([x.load for x in replicas])]
        cap = self.sc.fleet.queue_capacity
        if cap is not None and r.waiting >= cap:
            req.drop_reason = QUEUE_FULL
            return
        req.enqueued = self.now
        req.replica = r.index
        r.enqueue(req, self.sc.batching.priority_bypass)
        self.max_queue = max(self.max_queue, r.waiting)
        self.dispatch(r)

    def dispatch(self, r: Replica) -> None:
        if r.busy or not r.active:
            return
        b = self.sc.batching
        batch = r.next_batch(self.now, b.max_batch, b.max_wait_ms)
        if batch is None:
            if r.queue:
                due = r.queue[0].enqueued + b.max_wait_ms
                if r.timer_at != due:
                    r.timer_at = due
                    self.push(due, TIMEOUT, r)
            return
        st = service_time(len(batch), self.sc.service, r.cold, self.sc.fleet.cold_start_ms,
                          self.rng_service, self.sc.cascade)
        r.cold = False
        r.busy = True
        r.batch = batch
        r.busy_since = self.now
        for req in batch:
            req.batch_size = len(batch)
            req.service_start = self.now
            req.service_time = st
        self.push(self.now + st, COMPLETE, r)

    def on_complete(self, r: Replica) -> None:
        for req in r.batch:
            req.completion = self.now
        r.busy_total += self.now - r.busy_since
        self.total_compute += self.now - r.busy_since
        r.busy = False
        r.batch = []
        self.dispatch(r)

    def on_tick(self) -> None:
        sc = self.sc
        dt = self.now - self.last_tick
        utils = []
        for r in self.active():
            b = r.busy_until(self.now)
            utils.append((b - self.last_sample.get(r.index, b)) / dt if dt > 0 else 0.0)
        for r in self.replicas:
            self.last_sample[r.index] = r.busy_until(self.now)
        self.last_tick = self.now
        self.utilization = float(np.mean(utils)) if utils else 0.0
        self.util_window.append(self.utilization)
        if sc.autoscale is not None:
            keep = max(1, int(round(sc.autoscale.window_s / sc.monitor_interval_s)))
            while len(self.util_window) > keep:
                self.util_window.popleft()
            self.autoscale()
        self.push(self.now + sc.monitor_interval_s * 1000.0, TICK)

    def autoscale(self) -> None:
        sc = self.sc
        now_s = self.now / 1000.0
        n_active = len(self.active())
        action = autoscale_decide(self.util_window, sc.autoscale, now_s, n_active,
                                  sc.fleet.max_replicas, self.last_action)
        if action == SCALE_UP:
            warm, replenish_at = self.pool.acquire(self.now)
            r = Replica(len(self.replicas), cold=not warm)
            self.replicas.append(r)
            self.last_sample[r.index] = 0.0
            if replenish_at is not None:
                self.push(replenish_at, REPLENISH)
        elif action == SCALE_DOWN:
            idle = [r for r in self.active() if not r.busy and r.waiting == 0]
            if not idle:
                return
            idle[-1].active = False
        if action != HOLD:
            self.last_action = now_s
            self.timeline.append((self.now, len(self.active())))

    # -- summary ----------------------------------------------------------------
    def report(self) -> MetricsReport:
        sc = self.sc
        D = self.duration_ms
        done = [r for r in self.requests if r.completion is not None]
        lat = [r.completion - r.arrival + self.tiers[r.tier].network_delay_ms for r in done]
        dropped = [r for r in self.requests if r.drop_reason is not None]
        arrivals = [r for r in self.requests if r.arrival <= D]
        busy = sum(r.busy_until(D) for r in self.replicas)
        replica_time = 0.0
        for (t0, n), (t1, _) in zip(self.timeline, self.timeline[1:] + [(D, 0)]):
            replica_time += n * (min(t1, D) - t0)
        mean, p50, p95, p99 = _percentiles(lat)
        reasons: dict = {}
        for r in dropped:
            reasons[r.drop_reason] = reasons.get(r.drop_reason, 0) + 1
        tiers = {}
        for t in sc.tiers:
            reqs = [r for r in self.requests if r.tier == t.name]
            tl = [r.completion - r.arrival + t.network_delay_ms for r in reqs if r.completion is not None]
            tmean, t50, t95, t99 = _percentiles(tl)
            admitted = [r for r in reqs if r.drop_reason not in ("throttled", "shed")]
            tiers[t.name] = {
                "arrivals": len(reqs),
                "admitted": len(admitted),
                "completed": len(tl),
                "dropped_after_admit": sum(r.drop_reason == QUEUE_FULL for r in reqs),
                "in_flight": sum(r.completion is None and r.drop_reason is None for r in reqs),
                "latency_mean_ms": tmean, "latency_p50_ms": t50,
                "latency_p95_ms": t95, "latency_p99_ms": t99,
            }
        return MetricsReport(
            completed=len(done),
            arrivals=len(arrivals),
            dropped=len(dropped),
            throughput_rps=len(done) / sc.duration_s if sc.duration_s > 0 else 0.0,
            latency_mean_ms=mean, latency_p50_ms=p50, latency_p95_ms=p95, latency_p99_ms=p99,
            drop_rate=len(dropped) / len(arrivals) if arrivals else 0.0,
            mean_utilization=busy / replica_time if replica_time > 0 else 0.0,
            max_queue_length=self.max_queue,
            total_compute_ms=self.total_compute,
            replica_timeline=[[t, n] for t, n in self.timeline],
            tiers=tiers,
            drops_by_reason=dict(sorted(reasons.items())),
        )


def simulate(scenario: Scenario, return_requests: bool = False):
    """Run one scenario.  Optionally also return the per-request records."""
    sim = Simulation(scenario)
    rep = sim.run()
    return (rep, sim.requests) if return_requests else rep


def request_latency(scenario: Scenario, req: Request) -> float:
    delay = {t.name: t.network_delay_ms for t in scenario.tiers}[req.tier]
    return req.completion - req.arrival + delay


CSV_FIELDS = ("id", "tier", "arrival_ms", "completion_ms", "latency_ms", "replica", "batch_size")


def write_metrics(report: MetricsReport, requests, out_dir, scenario: Scenario) -> tuple:
    """Write ``metrics.json`` and ``requests.csv`` (completed requests only)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / "metrics.json"
    jpath.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    cpath = out / "requests.csv"
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in requests:
            if r.completion is None:
                continue
            w.writerow([r.id, r.tier, repr(r.arrival), repr(r.completion),
                        repr(request_latency(scenario, r)), r.replica, r.batch_size])
    return jpath, cpath
