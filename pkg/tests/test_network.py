import math

import pytest

from tlrusim.network import (PUBLISHER, EventKind, NodeSpec, SimEvent, Simulation, Topology, TopologyError,
                             aggregate_rate, run_simulation)
from tlrusim.policy import NEVER
from tlrusim.tlru import TlruConfig
from tlrusim.workload import ContentMeta, TtuLaw, WorkloadSpec, build_catalog


def tree():
    """Two leaves under one interior node, which hangs off the publisher."""
    return Topology([NodeSpec(PUBLISHER, policy=PUBLISHER),
                     NodeSpec("top", 4, "lru", PUBLISHER),
                     NodeSpec("a", 2, "lru", "top"),
                     NodeSpec("b", 2, "lru", "top")], PUBLISHER)


def forever(k):
    return [ContentMeta(i, 1, NEVER, i) for i in range(1, k + 1)]


def test_topology_validation():
    t = tree()
    assert t.levels == {PUBLISHER: 0, "top": 1, "a": 2, "b": 2}
    assert sorted(t.leaves) == ["a", "b"]
    assert t.path_to_publisher("a") == ["a", "top", PUBLISHER]
    with pytest.raises(TopologyError):
        Topology([NodeSpec("x", 1, "lru", "ghost"), NodeSpec(PUBLISHER)], PUBLISHER)
    with pytest.raises(TopologyError):
        Topology([NodeSpec("x", 1, "lru", "y"), NodeSpec("y", 1, "lru", "x"), NodeSpec(PUBLISHER)], PUBLISHER)
    with pytest.raises(TopologyError):
        Topology([NodeSpec("x", 1, "random", PUBLISHER), NodeSpec(PUBLISHER)], PUBLISHER)
    with pytest.raises(TopologyError):
        Topology([NodeSpec("x", 1, "lru", None), NodeSpec(PUBLISHER)], PUBLISHER)


def test_cascade_fills_every_node_on_the_way_back():
    sim = Simulation(tree(), forever(5))
    assert sim.serve("a", 1, 0.0) == 2
    assert 1 in sim.states["a"] and 1 in sim.states["top"]
    # the sibling leaf misses but its parent now holds the content
    assert sim.serve("b", 1, 1.0) == 1
    assert sim.serve("b", 1, 2.0) == 0
    m = sim.metrics
    assert m.nodes["top"].endogenous[1] == 2
    assert m.nodes["top"].hits[1] == 1
    assert m.nodes[PUBLISHER].requests[1] == 1
    assert m.hops["a"] == {2: 1} and m.hops["b"] == {1: 1, 0: 1}


def test_route_request_matches_serve():
    a = Simulation(tree(), forever(5))
    b = Simulation(tree(), forever(5))
    for t, (node, c) in enumerate([("a", 1), ("b", 1), ("a", 2), ("a", 3), ("a", 1)]):
        a.serve(node, c, float(t))
        pending = [SimEvent(float(t), EventKind.EXOGENOUS_REQUEST, c, node, node)]
        while pending:
            pending = b.route_request(pending.pop())
    for node in ("a", "b", "top"):
        assert list(a.states[node].recency) == list(b.states[node].recency)
        assert a.metrics.nodes[node].hits == b.metrics.nodes[node].hits
    with pytest.raises(KeyError):
        b.route_request(SimEvent(9.0, EventKind.EXOGENOUS_REQUEST, 99, "a", "a"))


def test_uncacheable_content_always_goes_to_the_publisher():
    catalog = [ContentMeta(1, 1, None, 1), ContentMeta(2, 1, NEVER, 2)]
    sim = Simulation(Topology.single(1), catalog)
    for t in range(3):
        sim.serve("n1", 1, float(t))
    assert sim.metrics.nodes["n1"].hits[1] == 0
    assert sim.metrics.nodes["n1"].uncacheable == 3


def test_expired_copies_are_never_served():
    catalog = [ContentMeta(1, 1, 0.5, 1)]
    sim = Simulation(Topology.single(2), catalog)
    sim.serve("n1", 1, 0.0)
    assert sim.serve("n1", 1, 0.4) == 0
    assert sim.serve("n1", 1, 0.5) == 1  # expiry instant is already dead
    assert sim.metrics.nodes["n1"].expired_misses[1] == 1
    assert sim.metrics.expired_hit_violations == 0


def test_level_scaling_shortens_deeper_copies():
    catalog = [ContentMeta(1, 1, 10.0, 1)]
    topo = Topology.chain([2, 2])
    sim = Simulation(topo, catalog, ttu_level_scale=0.5)
    sim.serve("n1", 1, 0.0)
    assert sim.states["n2"].entries[1].expiry == 10.0
    assert sim.states["n1"].entries[1].expiry == 5.0


def test_warmup_excludes_early_requests():
    sim = Simulation(Topology.single(1), forever(3), warmup=1.0)
    sim.serve("n1", 1, 0.5)
    sim.serve("n1", 1, 1.5)
    m = sim.metrics.nodes["n1"]
    assert m.total("requests") == 1 and m.total("hits") == 1


def test_paired_policies_share_the_stream():
    law = TtuLaw.normal(1e6, 2.5e5)
    wl = {"n1": WorkloadSpec(500, 0.8, 50.0, law, seed=4)}
    catalog = build_catalog(500, law, 4)
    runs = {p: run_simulation(Topology.single(20, p), wl, 200.0, catalog) for p in ("lru", "tlru", "fifo")}
    digests = {p: m.stream_digests["n1"] for p, m in runs.items()}
    assert len(set(digests.values())) == 1
    requests = {p: m.nodes["n1"].requests for p, m in runs.items()}
    assert requests["lru"] == requests["tlru"] == requests["fifo"]
    assert all(m.expired_hit_violations == 0 for m in runs.values())


def test_runs_are_deterministic():
    law = TtuLaw.normal(20.0, 5.0)
    wl = {"a": WorkloadSpec(100, 0.8, 20.0, law, 3), "b": WorkloadSpec(100, 0.8, 10.0, law, 3)}
    one = run_simulation(tree().with_policy("tlru"), wl, 100.0, trace=True)
    two = run_simulation(tree().with_policy("tlru"), wl, 100.0, trace=True)
    assert one.trace == two.trace and one.evictions == two.evictions
    assert one.trace  # something happened


def test_aggregate_rate_from_trace():
    wl = {"n1": WorkloadSpec(50, 0.8, 40.0, TtuLaw.constant(1e9), 2)}
    m = run_simulation(Topology.single(5), wl, 100.0, trace=True)
    assert aggregate_rate(m, "n1", window=50.0) == pytest.approx(40.0, rel=0.1)
    total = aggregate_rate(m, "n1", window=100.0)
    assert total == aggregate_rate(m, "n1", window=100.0, kinds="exogenous")
    assert aggregate_rate(m, "n1", window=100.0, kinds="endogenous") == 0.0
    assert aggregate_rate(m, PUBLISHER, window=100.0) == aggregate_rate(m, "n1", window=100.0, kinds="miss")
    with pytest.raises(ValueError):
        aggregate_rate(run_simulation(Topology.single(5), wl, 1.0), "n1")


def test_zero_horizon_and_bad_inputs():
    wl = {"n1": WorkloadSpec(10, 0.8, 1.0, TtuLaw.constant(5.0))}
    m = run_simulation(Topology.single(2), wl, 0.0)
    assert m.nodes["n1"].total("requests") == 0
    with pytest.raises(TopologyError):
        Simulation(Topology.single(2), forever(10), {"ghost": wl["n1"]})
    with pytest.raises(ValueError):
        run_simulation(Topology.single(2), wl, -1.0)


def test_tlru_node_rejects_and_stays_within_capacity():
    law = TtuLaw.normal(5e5, 1.25e5)
    wl = {"n1": WorkloadSpec(2000, 0.8, 100.0, law, 7)}
    m = run_simulation(Topology.single(50, "tlru"), wl, 300.0, tlru_config=TlruConfig())
    node = m.nodes["n1"]
    assert node.total("rejections") > 0
    assert node.total("hits") + node.total("misses") + node.total("expired_misses") == node.total("requests")
    assert math.isfinite(node.hit_ratio())


def test_indexed_tlru_run_matches_scan_oracle(monkeypatch):
    from tlrusim.policy import CacheState
    from tlrusim.tlru import contraction_set

    law = TtuLaw.normal(3.0, 1.0, floor=0.05)
    wl = {"n1": WorkloadSpec(300, 0.8, 60.0, law, seed=13)}
    topo = Topology.single(25, "tlru")
    fast = run_simulation(topo, wl, 150.0, trace=True)

    def scan(self, now):
        judged = {c for c in contraction_set(self, now) if self.tau(c) is not None}
        return self.evict_victim_lru(judged) if judged else None

    monkeypatch.setattr(CacheState, "doomed_lru", scan)
    slow = run_simulation(topo, wl, 150.0, trace=True)
    assert fast.trace == slow.trace
    assert fast.evictions == slow.evictions
    assert fast.nodes["n1"].total("evictions") > 100
