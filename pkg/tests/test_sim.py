import json
from collections import deque

import numpy as np
import pytest

from recaccel.exceptions import ConfigError
from recaccel.sim import (
    ADMIT, HOLD, SCALE_UP, THROTTLED, Arrival, Autoscale, Batching, Cascade, Fleet,
    HybridRateLimiter, Replica, Request, Scenario, ServiceModel, Tier, TokenBucket,
    WarmPool, autoscale_decide, batcher_dispatch, route, screen_candidates, service_time, simulate,
    write_metrics,
)


def _req(i, t=0.0, tier="default", priority=False):
    r = Request(i, t, tier, priority, 50)
    r.enqueued = t
    return r


def test_token_bucket():
    b = TokenBucket(10, 5)
    assert sum(b.try_consume(0.0) for _ in range(12)) == 10
    assert b.refill(1000.0) == pytest.approx(5.0)
    assert TokenBucket(3, 5).refill(10_000.0) == 3


def test_reserve_admits_priority():
    tiers = [Tier("vip", 0.5, token_rate=1, capacity=0, priority=True), Tier("std", 0.5, 1, 0)]
    lim = HybridRateLimiter(tiers, reserve_capacity=2, reserve_rate=0)
    assert lim.admit(_req(0, tier="vip", priority=True), 0.0) == ADMIT
    assert lim.admit(_req(1, tier="std"), 0.0) == THROTTLED


def test_shedding_spares_priority():
    lim = HybridRateLimiter([Tier("default", 1.0)], shed_threshold=0.5)
    rng = np.random.default_rng(0)
    assert lim.admit(_req(0), 0.0, utilization=1.0, rng=rng) == "shed"
    assert lim.admit(_req(1, priority=True), 0.0, utilization=1.0, rng=rng) == ADMIT


def test_routing():
    assert route([3, 1, 2], "least-loaded") == 1
    assert route([2, 2], "least-loaded") == 0
    counts = [0, 0, 0]
    for i in range(6):
        counts[route([0, 0, 0], "round-robin", counter=i)] += 1
    assert counts == [2, 2, 2]
    with pytest.raises(ConfigError):
        route([], "least-loaded")


def test_batcher():
    q = deque(_req(i) for i in range(6))
    assert len(batcher_dispatch(q, 4, 10.0, 0.0)) == 4 and len(q) == 2
    q = deque([_req(0)])
    assert batcher_dispatch(q, 8, 5.0, 1.0) is None
    assert len(batcher_dispatch(q, 8, 5.0, 5.0)) == 1


def test_priority_bypass():
    r = Replica(0)
    for i in range(7):
        r.enqueue(_req(i))
    r.enqueue(_req(7, priority=True))
    batch = r.next_batch(0.0, 8, 5.0)
    assert [x.id for x in batch] == [7]


def test_service_time():
    sm = ServiceModel(alpha=1e-6, beta=5, m=50, depth=3, h=64, noise="none")
    assert service_time(1, sm) == pytest.approx(5.6144)
    var1 = service_time(1, sm) - 5
    assert service_time(8, sm) - 5 == pytest.approx(8 * var1)
    assert service_time(1, sm, cold=True, cold_start_ms=100) == pytest.approx(105.6144)
    cas = Cascade(m_prime=10, stage1_factor=0.02)
    assert service_time(1, sm, cascade=cas) == pytest.approx(1e-6 * 11 * 3 * 4096 + 5)


def test_warm_pool():
    pool = WarmPool(2, 50.0)
    warm, at = pool.acquire(0.0)
    assert warm and pool.available == 1 and at == 50.0
    pool.acquire(0.0)
    assert pool.acquire(0.0) == (False, None)
    pool.replenish()
    pool.replenish()
    pool.replenish()
    assert pool.available == 2


def test_autoscale_rules():
    pol = Autoscale(u_hi=0.8, u_lo=0.3, window_s=5, cooldown_s=30)
    assert autoscale_decide([0.95], pol, 100.0, 1, 4) == SCALE_UP
    assert autoscale_decide([0.1], pol, 100.0, 1, 4) == HOLD
    assert autoscale_decide([0.95], pol, 101.0, 2, 4, last_action=100.0) == HOLD


def test_screening():
    assert list(screen_candidates([0.1, 0.9, 0.5], 2)) == [1, 2]
    assert list(screen_candidates([0.3, 0.1, 0.2], 3)) == [0, 1, 2]


def test_empty_workload():
    rep = simulate(Scenario(duration_s=5, arrival=Arrival("poisson", rate=0)))
    assert rep.throughput_rps == 0 and rep.dropped == 0 and rep.completed == 0


def test_dd1_exact():
    sc = Scenario(duration_s=1.0, arrival=Arrival("deterministic", interval_ms=20.0),
                  service=ServiceModel(alpha=1e-9, beta=10.0 - 1e-9 * 50 * 3 * 4096, noise="none"))
    rep, reqs = simulate(sc, return_requests=True)
    lat = [r.completion - r.arrival for r in reqs if r.completion is not None]
    assert rep.completed == 50
    assert all(x == pytest.approx(10.0, abs=1e-9) for x in lat)
    assert rep.mean_utilization == pytest.approx(0.5, abs=1e-9)


def test_cold_start_and_scale_up():
    sc = Scenario(duration_s=30, arrival=Arrival("poisson", rate=300),
                  fleet=Fleet(1, 4, warm_pool_size=1, cold_start_ms=200),
                  service=ServiceModel(alpha=1e-5, beta=1, noise="none"),
                  autoscale=Autoscale(0.8, 0.2, window_s=2, cooldown_s=3), seed=1)
    rep = simulate(sc)
    counts = [n for _, n in rep.replica_timeline]
    assert max(counts) > 1


def test_tier_accounting_and_csv(tmp_path):
    sc = Scenario(duration_s=5, arrival=Arrival("poisson", rate=100),
                  tiers=(Tier("vip", 0.3, priority=True, network_delay_ms=2.0),
                         Tier("std", 0.7, token_rate=20, capacity=5)),
                  batching=Batching(4, 3.0), seed=2)
    rep, reqs = simulate(sc, return_requests=True)
    t = rep.tiers
    assert t["vip"]["arrivals"] + t["std"]["arrivals"] == rep.arrivals
    for stats in t.values():
        assert stats["admitted"] == stats["completed"] + stats["dropped_after_admit"] + stats["in_flight"]
    assert rep.drops_by_reason.get("throttled", 0) > 0
    jpath, cpath = write_metrics(rep, reqs, tmp_path, sc)
    lines = cpath.read_text().splitlines()
    assert lines[0] == "id,tier,arrival_ms,completion_ms,latency_ms,replica,batch_size"
    assert len(lines) == rep.completed + 1
    assert json.loads(jpath.read_text())["completed"] == rep.completed


def test_determinism():
    sc = Scenario(duration_s=5, arrival=Arrival("poisson", rate=150), fleet=Fleet(2, 2),
                  batching=Batching(4, 2.0), routing="random", seed=9)
    assert simulate(sc).to_dict() == simulate(sc).to_dict()


def test_piecewise_arrivals():
    sc = Scenario(duration_s=4, arrival=Arrival("piecewise", segments=((0, 0.0), (2, 100.0))),
                  service=ServiceModel(noise="none"))
    rep, reqs = simulate(sc, return_requests=True)
    assert all(r.arrival >= 2000 for r in reqs) and rep.arrivals > 100


def test_scenario_json(tmp_path):
    d = {"duration_s": 2, "arrival": {"kind": "poisson", "rate": 10},
         "fleet": {"initial_replicas": 1, "max_replicas": 2}, "cascade": {"m_prime": 5}}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    sc = Scenario.from_json(p)
    assert sc.cascade.m_prime == 5
    assert Scenario.from_dict(json.loads(json.dumps(sc.to_dict()))) == sc
    with pytest.raises(ConfigError):
        Scenario.from_dict({"duration_s": 1, "bogus": 1})
    with pytest.raises(ConfigError):
        Scenario.from_dict({"duration_s": 1, "fleet": {"size": 3}})
    with pytest.raises(ConfigError):
        Scenario(duration_s=1, tiers=(Tier("a", 0.5),))
