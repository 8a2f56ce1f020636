"""Event-driven simulation of a tree of caches rooted at the content publisher.

Requests enter at nodes with exogenous Poisson streams. A miss forwards the
request to the parent (an endogenous request there) until some node hits; the
publisher always hits. Content then flows back down the miss path and every
node on it may store a copy. Downloads take zero time, so a request and all
its forwards and fills form one atomic cascade at a single instant.
"""

from __future__ import annotations

import enum
import heapq
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .policy import BASELINE_POLICIES, CacheEntry, CacheState, Result, UncacheableError
from .tlru import Decision, RateSnapshot, TlruConfig, tlru_insert
from .workload import ArrivalStream, ContentMeta, WorkloadSpec, build_catalog, zipf_distribution

__all__ = [
    "POLICIES",
    "NodeSpec",
    "Topology",
    "TopologyError",
    "EventKind",
    "SimEvent",
    "NodeMetrics",
    "Metrics",
    "Simulation",
    "run_simulation",
    "aggregate_rate",
]

POLICIES = BASELINE_POLICIES + ("tlru",)
PUBLISHER = "publisher"


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    name: str
    capacity: float = math.inf
    policy: str = "lru"
    parent: Optional[str] = None


class Topology:
    """Directed tree of cache nodes; every parent chain ends at the publisher."""

    def __init__(self, nodes: Iterable[NodeSpec], publisher: str):
        self.nodes = {}
        for spec in nodes:
            if spec.name in self.nodes:
                raise TopologyError(f"duplicate node {spec.name!r}")
            self.nodes[spec.name] = spec
        if publisher not in self.nodes:
            raise TopologyError(f"publisher {publisher!r} is not a node")
        self.publisher = publisher
        pub = self.nodes[publisher]
        if pub.parent is not None:
            raise TopologyError(f"publisher {publisher!r} cannot have a parent")
        if pub.capacity != math.inf or pub.policy != PUBLISHER:
            self.nodes[publisher] = replace(pub, capacity=math.inf, policy=PUBLISHER)
        self.parent = {}
        for name, spec in self.nodes.items():
            if name == publisher:
                continue
            if spec.parent is None:
                raise TopologyError(f"node {name!r} has no parent; only the publisher may be a root")
            if spec.parent not in self.nodes:
                raise TopologyError(f"node {name!r}: parent {spec.parent!r} is not defined")
            if spec.policy not in POLICIES:
                raise TopologyError(f"node {name!r}: unknown policy {spec.policy!r}")
            if not spec.capacity > 0:
                raise TopologyError(f"node {name!r}: capacity must be > 0")
            self.parent[name] = spec.parent
        self.levels = {publisher: 0}
        for name in self.nodes:
            self._depth(name, set())
        self.children = {name: [] for name in self.nodes}
        for child, parent in self.parent.items():
            self.children[parent].append(child)

    def _depth(self, name, seen):
        if name in self.levels:
            return self.levels[name]
        if name in seen:
            raise TopologyError(f"cycle through node {name!r}")
        seen.add(name)
        depth = self._depth(self.parent[name], seen) + 1
        self.levels[name] = depth
        return depth

    @property
    def caches(self) -> list[str]:
        return [n for n in self.nodes if n != self.publisher]

    @property
    def leaves(self) -> list[str]:
        return [n for n in self.caches if not self.children[n]]

    def path_to_publisher(self, node: str) -> list[str]:
        path = [node]
        while path[-1] != self.publisher:
            path.append(self.parent[path[-1]])
        return path

    @classmethod
    def chain(cls, capacities: list, policy: str = "lru") -> "Topology":
        """Leaf ``n1`` up through ``n2``... to the publisher; capacities listed leaf first."""
        names = [f"n{i + 1}" for i in range(len(capacities))]
        parents = names[1:] + [PUBLISHER]
        specs = [NodeSpec(n, c, policy, p) for n, c, p in zip(names, capacities, parents)]
        return cls(specs + [NodeSpec(PUBLISHER, policy=PUBLISHER)], PUBLISHER)

    @classmethod
    def single(cls, capacity: float, policy: str = "lru") -> "Topology":
        return cls.chain([capacity], policy)

    def with_policy(self, policy: str) -> "Topology":
        specs = [s if s.name == self.publisher else replace(s, policy=policy) for s in self.nodes.values()]
        return Topology(specs, self.publisher)

    def with_capacity(self, capacity: float) -> "Topology":
        specs = [s if s.name == self.publisher else replace(s, capacity=capacity) for s in self.nodes.values()]
        return Topology(specs, self.publisher)


class EventKind(enum.Enum):
    EXOGENOUS_REQUEST = "exogenous"
    FORWARDED_REQUEST = "forwarded"


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: EventKind
    content: int
    node: str
    origin_node: str
    hops_so_far: int = 0
    path: tuple = ()


class NodeMetrics:
    """Per-content counters at one node, indexed by content id."""

    FIELDS = ("requests", "exogenous", "endogenous", "hits", "misses", "expired_misses",
              "rejections", "evictions")

    def __init__(self, node: str, k: int):
        self.node = node
        for name in self.FIELDS:
            setattr(self, name, [0] * (k + 1))
        self.uncacheable = 0

    def total(self, name: str) -> int:
        return sum(getattr(self, name))

    def hit_ratio(self) -> float:
        requests = self.total("requests")
        return self.total("hits") / requests if requests else 0.0

    def per_content(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name)[1:])


@dataclass
class Metrics:
    nodes: dict
    hops: dict
    expired_hit_violations: int = 0
    measured_from: float = 0.0
    measured_until: float = 0.0
    seed: Optional[int] = None
    config_digest: Optional[str] = None
    stream_digests: dict = field(default_factory=dict)
    trace: Optional[list] = None
    evictions: Optional[list] = None

    @property
    def duration(self) -> float:
        return self.measured_until - self.measured_from

    def origin_terminations(self) -> int:
        return sum(sum(h.values()) for h in self.hops.values())


class Simulation:
    """Owns every node's state for one deterministic run.

    ``trace=True`` records each request as ``(time, node, content, kind, result)``
    and each eviction as ``(time, node, content)``.
    """

    def __init__(self, topology: Topology, catalog: list[ContentMeta],
                 workloads: Optional[dict] = None, tlru_config: TlruConfig = TlruConfig(),
                 warmup: float = 0.0, trace: bool = False, ttu_level_scale: float = 1.0):
        self.topology = topology
        self.catalog = catalog
        self.k = len(catalog)
        self.workloads = dict(workloads or {})
        for node in self.workloads:
            if node not in topology.nodes:
                raise TopologyError(f"workload attached to unknown node {node!r}")
        self.tlru_config = tlru_config
        self.warmup = warmup
        self.ttu_level_scale = ttu_level_scale
        self.states = {}
        self.policies = {}
        for name in topology.caches:
            spec = topology.nodes[name]
            self.states[name] = CacheState(name, spec.capacity, track_rates=spec.policy == "tlru")
            self.policies[name] = spec.policy
        self.metrics = Metrics(
            nodes={name: NodeMetrics(name, self.k) for name in topology.nodes},
            hops={name: Counter() for name in topology.nodes},
            measured_from=warmup,
            trace=[] if trace else None,
            evictions=[] if trace else None,
        )
        self.now = 0.0

    # -- single steps ---------------------------------------------------

    def _visit(self, node: str, content: int, now: float, exogenous: bool) -> bool:
        counting = now >= self.warmup
        m = self.metrics.nodes[node]
        if counting:
            m.requests[content] += 1
            if exogenous:
                m.exogenous[content] += 1
            else:
                m.endogenous[content] += 1
        state = self.states.get(node)
        if state is None:
            if counting:
                m.hits[content] += 1
            if self.metrics.trace is not None:
                self.metrics.trace.append((now, node, content, exogenous, "hit"))
            return True
        if state.track_rates:
            state.record_request(content, now)
        outcome = state.lookup(content, now)
        result = outcome.result
        if result is Result.HIT:
            if outcome.served_entry.expiry <= now:
                self.metrics.expired_hit_violations += 1
            if counting:
                m.hits[content] += 1
        elif counting:
            if result is Result.MISS:
                m.misses[content] += 1
            else:
                m.expired_misses[content] += 1
        if self.metrics.trace is not None:
            self.metrics.trace.append((now, node, content, exogenous, result.value))
        return result is Result.HIT

    def route_request(self, event: SimEvent) -> list[SimEvent]:
        """Process one request at one node.

        A miss yields the forwarded request for the parent; a hit fills the
        nodes on ``event.path`` (the misses below) and yields nothing.
        """
        if event.content < 1 or event.content > self.k:
            raise KeyError(f"content {event.content} is not in the catalog")
        self.now = event.time
        exogenous = event.kind is EventKind.EXOGENOUS_REQUEST
        if self._visit(event.node, event.content, event.time, exogenous):
            if event.time >= self.warmup:
                self.metrics.hops[event.origin_node][event.hops_so_far] += 1
            if event.path:
                self.fill_on_return(event.content, list(event.path), event.time)
            return []
        return [SimEvent(event.time, EventKind.FORWARDED_REQUEST, event.content,
                         self.topology.parent[event.node], event.origin_node,
                         event.hops_so_far + 1, event.path + (event.node,))]

    def serve(self, origin: str, content: int, now: float) -> int:
        """Run one exogenous request's whole cascade; returns the hop count to the hit."""
        parent = self.topology.parent
        path = []
        node = origin
        exogenous = True
        while not self._visit(node, content, now, exogenous):
            path.append(node)
            node = parent[node]
            exogenous = False
        hops = len(path)
        if now >= self.warmup:
            self.metrics.hops[origin][hops] += 1
        if path:
            self.fill_on_return(content, path, now)
        return hops

    def fill_on_return(self, content: int, path: list, now: float) -> dict:
        """Offer the content to every node on the miss path, closest to the hit first."""
        meta = self.catalog[content - 1]
        counting = now >= self.warmup
        outcomes = {}
        for node in reversed(path):
            state = self.states[node]
            m = self.metrics.nodes[node]
            if meta.publisher_ttu is None:
                outcomes[node] = Decision.NOT_CACHEABLE
                if counting:
                    m.uncacheable += 1
                continue
            ttu = meta.publisher_ttu
            if self.ttu_level_scale != 1.0:
                ttu *= self.ttu_level_scale ** (self.topology.levels[node] - 1)
            policy = self.policies[node]
            if policy == "tlru":
                item = meta if ttu == meta.publisher_ttu else replace(meta, publisher_ttu=ttu)
                res = tlru_insert(state, item, now, RateSnapshot(state.rates, state.rate_total),
                                  self.tlru_config)
                decision, evicted = res.decision, res.evicted
                if counting and decision is Decision.REJECTED:
                    m.rejections[content] += 1
            else:
                try:
                    evicted = state.insert(CacheEntry(content, meta.size, now + ttu, now), policy, now)
                    decision = Decision.STORED
                except UncacheableError:
                    decision, evicted = Decision.NOT_CACHEABLE, ()
            if decision is Decision.NOT_CACHEABLE and counting:
                m.uncacheable += 1
            for victim in evicted:
                if counting:
                    m.evictions[victim] += 1
                if self.metrics.evictions is not None:
                    self.metrics.evictions.append((now, node, victim))
            outcomes[node] = decision
        return outcomes

    # -- event loop -----------------------------------------------------

    def run(self, horizon: float) -> Metrics:
        if horizon < 0:
            raise ValueError("horizon must be >= 0")
        self.metrics.measured_until = horizon
        self.metrics.measured_from = min(self.warmup, horizon)
        if horizon == 0 or not self.workloads:
            return self.metrics
        probs = {}
        streams = []
        for node in sorted(self.workloads):
            spec = self.workloads[node]
            key = (spec.catalog_size, spec.zipf_alpha)
            if key not in probs:
                probs[key] = zipf_distribution(*key)
            if spec.catalog_size != self.k:
                raise TopologyError(f"workload at {node!r} has catalog size {spec.catalog_size}, expected {self.k}")
            streams.append(ArrivalStream(node, spec, probs[key]))
        if len(streams) == 1:
            events = _tagged(streams[0], 0)
        else:
            # ties in time resolve by stream index, a fixed order
            events = heapq.merge(*(_tagged(s, i) for i, s in enumerate(streams)))
        names = [s.node for s in streams]
        serve = self.serve
        last = 0.0
        for t, i, content in events:
            if t > horizon:
                break
            if t < last:
                raise RuntimeError(f"event time regressed from {last} to {t}")
            last = t
            serve(names[i], content, t)
        self.now = last
        self.metrics.stream_digests = {s.node: s.digest for s in streams}
        return self.metrics


def _tagged(stream: ArrivalStream, index: int):
    for times, contents in stream.chunks():
        yield from zip(times, [index] * len(times), contents)


def run_simulation(topology: Topology, workloads: dict, horizon: float,
                   catalog: Optional[list] = None, tlru_config: TlruConfig = TlruConfig(),
                   warmup: float = 0.0, trace: bool = False, ttu_level_scale: float = 1.0) -> Metrics:
    """Simulate until ``horizon``; counters only cover requests at or after ``warmup``.

    Without an explicit ``catalog`` one is built from the first workload's
    TTU law and seed.
    """
    if catalog is None:
        if not workloads:
            raise ValueError("need a catalog or at least one workload")
        spec = workloads[sorted(workloads)[0]]
        catalog = build_catalog(spec.catalog_size, spec.ttu_law, spec.seed)
    sim = Simulation(topology, catalog, workloads, tlru_config, warmup, trace, ttu_level_scale)
    metrics = sim.run(horizon)
    if workloads:
        metrics.seed = workloads[sorted(workloads)[0]].seed
    return metrics


def aggregate_rate(metrics: Metrics, node: str, content: Optional[int] = None,
                   window: float = 1.0, end: Optional[float] = None,
                   kinds: str = "all") -> float:
    """Request rate seen at ``node`` over ``(end - window, end]`` from the run trace.

    ``kinds`` selects ``"all"`` (exogenous plus endogenous), ``"exogenous"``,
    ``"endogenous"`` or ``"miss"`` (requests the node passed upward).
    """
    if not window > 0:
        raise ValueError("window must be > 0")
    if metrics.trace is None:
        raise ValueError("aggregate_rate needs a traced run (trace=True)")
    if end is None:
        end = metrics.measured_until
    start = end - window
    count = 0
    for t, n, c, exogenous, result in metrics.trace:
        if n != node or not start < t <= end or (content is not None and c != content):
            continue
        if kinds == "all" or (kinds == "exogenous" and exogenous) or \
                (kinds == "endogenous" and not exogenous) or (kinds == "miss" and result != "hit"):
            count += 1
    return count / window
