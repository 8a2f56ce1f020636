"""Exhaustive state-space checks of eviction-policy classification on tiny caches.

Each policy is reduced to a finite, canonical state (a tuple) and a
deterministic transition per requested content. Breadth-first closure from the
empty cache yields the full transition graph, on which we decide:

* protectiveness: a policy is non-protective when, from every full state,
  every cached item can be made the victim without changing which contents are
  cached first (hits and same-content refreshes only). FIFO fails this since
  hits never reorder its queue; LRU, LFU and TLRU pass.
* recurrence: closed strongly connected components of the graph.

TLRU lifetimes are discretized: a stored item starts at level ``ttu_levels``
and loses one level per request step; level 1 is "low" (member of the
contraction set) and level 0 is expired. Admission is taken as always granted,
since it only filters which items enter, not which can leave.
"""

from __future__ import annotations

import string
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx

__all__ = [
    "ABSTRACT_POLICIES",
    "StateSpaceError",
    "UnreachableError",
    "Edge",
    "TransitionGraph",
    "enumerate_reachable",
    "Classification",
    "classify_protective",
    "Recurrence",
    "check_recurrence",
    "fifo_reorder_cost",
    "contents_of",
    "next_victim",
    "state_label",
    "find_state",
]

ABSTRACT_POLICIES = ("fifo", "lru", "lfu", "tlru")
MAX_CATALOG = 6
MAX_CACHE = 3
MAX_TTU_LEVELS = 3
OUTSIDER = "*"
PROTECTIVE = "PROTECTIVE"
NON_PROTECTIVE = "NON_PROTECTIVE"


class StateSpaceError(ValueError):
    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class UnreachableError(LookupError):
    pass


@dataclass(frozen=True)
class Edge:
    symbol: str
    target: tuple
    evicted: frozenset
    weight: float


def contents_of(state: tuple) -> tuple:
    return tuple(item[0] if isinstance(item, tuple) else item for item in state)


# -- per-policy transitions --------------------------------------------------
# every step function maps (state, request) to (next state, evicted contents)

def _fifo_step(state, x, size, levels):
    if x in state:
        return state, frozenset()
    if len(state) < size:
        return state + (x,), frozenset()
    return state[1:] + (x,), frozenset(state[:1])


def _lru_step(state, x, size, levels):
    if x in state:
        return tuple(c for c in state if c != x) + (x,), frozenset()
    if len(state) < size:
        return state + (x,), frozenset()
    return state[1:] + (x,), frozenset(state[:1])


def _lfu_step(state, x, size, levels):
    cap = size + 1
    for i, (c, n) in enumerate(state):
        if c == x:
            return state[:i] + state[i + 1:] + ((x, min(n + 1, cap)),), frozenset()
    if len(state) < size:
        return state + ((x, 1),), frozenset()
    # min count, ties to the least recent (earliest position)
    victim = min(range(len(state)), key=lambda i: (state[i][1], i))
    return state[:victim] + state[victim + 1:] + ((x, 1),), frozenset([state[victim][0]])


def _tlru_step(state, x, size, levels):
    state = tuple((c, max(level - 1, 0)) for c, level in state)
    for i, (c, level) in enumerate(state):
        if c == x:
            rest = state[:i] + state[i + 1:]
            # a hit keeps the stamp; an expired copy is dropped and re-stored fresh
            return rest + ((x, level if level > 0 else levels),), frozenset()
    if len(state) < size:
        return state + ((x, levels),), frozenset()
    expired = [i for i, (_, level) in enumerate(state) if level == 0]
    low = [i for i, (_, level) in enumerate(state) if level == 1]
    victim = expired[0] if expired else (low[0] if low else 0)
    return state[:victim] + state[victim + 1:] + ((x, levels),), frozenset([state[victim][0]])


_STEPS = {"fifo": _fifo_step, "lru": _lru_step, "lfu": _lfu_step, "tlru": _tlru_step}


@dataclass
class TransitionGraph:
    policy: str
    catalog_size: int
    cache_size: int
    ttu_levels: int
    symbols: tuple
    states: list
    edges: dict = field(repr=False)

    def full_states(self) -> list:
        return [s for s in self.states if len(s) == self.cache_size]

    def step(self, state: tuple, symbol: str) -> tuple:
        return _STEPS[self.policy](state, symbol, self.cache_size, self.ttu_levels)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.states)
        for s, out in self.edges.items():
            g.add_edges_from((s, e.target) for e in out)
        return g


def enumerate_reachable(policy: str, catalog_size: int, cache_size: int, ttu_levels: int = 2,
                        max_states: int = 10**7) -> TransitionGraph:
    if policy not in _STEPS:
        raise ValueError(f"unknown policy {policy!r}; expected one of {ABSTRACT_POLICIES}")
    if not 1 <= catalog_size <= MAX_CATALOG:
        raise StateSpaceError(f"catalog_size {catalog_size} outside 1..{MAX_CATALOG}")
    if not 1 <= cache_size <= MAX_CACHE:
        raise StateSpaceError(f"cache_size {cache_size} outside 1..{MAX_CACHE}")
    if not 1 <= ttu_levels <= MAX_TTU_LEVELS:
        raise StateSpaceError(f"ttu_levels {ttu_levels} outside 1..{MAX_TTU_LEVELS}")
    symbols = tuple(string.ascii_lowercase[:catalog_size])
    step = _STEPS[policy]
    weight = 1.0 / catalog_size
    start = ()
    seen = {start}
    order = [start]
    edges = {}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        out = []
        for x in symbols:
            t, evicted = step(s, x, cache_size, ttu_levels)
            out.append(Edge(x, t, evicted, weight))
            if t not in seen:
                seen.add(t)
                order.append(t)
                if len(seen) > max_states:
                    raise StateSpaceError(
                        f"state budget {max_states} exceeded ({len(seen)} states)", len(seen))
                queue.append(t)
        edges[s] = out
    return TransitionGraph(policy, catalog_size, cache_size, ttu_levels, symbols, order, edges)


@dataclass
class Classification:
    verdict: str
    witnesses: list
    one_step_nonprotective: bool
    one_step_witnesses: list
    eventually_evictable: bool

    @property
    def protective(self) -> bool:
        return self.verdict == PROTECTIVE


def _preserving_closure(graph: TransitionGraph, state: tuple) -> list:
    """States reachable from ``state`` without any content entering or leaving."""
    held = set(contents_of(state))
    seen = {state}
    order = [state]
    queue = deque([state])
    while queue:
        s = queue.popleft()
        for e in graph.edges[s]:
            if not e.evicted and set(contents_of(e.target)) == held and e.target not in seen:
                seen.add(e.target)
                order.append(e.target)
                queue.append(e.target)
    return order


def next_victim(graph: TransitionGraph, state: tuple):
    """The item a content from outside the catalog would displace at the next step."""
    if len(state) < graph.cache_size:
        return None
    _, evicted = graph.step(state, OUTSIDER)
    return next(iter(evicted)) if evicted else None


def classify_protective(graph: TransitionGraph) -> Classification:
    """Decide protectiveness; witnesses are ``(state, content)`` pairs.

    A witness is a cached item that no contents-preserving request sequence
    can move to the head of the eviction order. Eviction order is probed with
    a content from outside the catalog, so a cache holding the whole catalog
    is still judged. The one-step reading (some single catalog request evicts
    the item right now) and the unrestricted reading (some request sequence
    eventually evicts it) are reported alongside.
    """
    witnesses = []
    one_step = []
    for s in graph.full_states():
        immediate = set().union(*(e.evicted for e in graph.edges[s]))
        movable = {next_victim(graph, t) for t in _preserving_closure(graph, s)}
        for c in contents_of(s):
            if c not in immediate:
                one_step.append((s, c))
            if c not in movable:
                witnesses.append((s, c))
    verdict = PROTECTIVE if witnesses else NON_PROTECTIVE
    return Classification(verdict, witnesses, not one_step, one_step, _eventually_evictable(graph))


def _eventually_evictable(graph: TransitionGraph) -> bool:
    """Whether every item of every full state is evicted along some future path."""
    reverse = {s: [] for s in graph.states}
    evicting = {}
    for s, out in graph.edges.items():
        for e in out:
            reverse[e.target].append(s)
            for c in e.evicted:
                evicting.setdefault(c, set()).add(s)
    can_evict = {}
    for c, sources in evicting.items():
        seen = set(sources)
        queue = deque(sources)
        while queue:
            for p in reverse[queue.popleft()]:
                if p not in seen:
                    seen.add(p)
                    queue.append(p)
        can_evict[c] = seen
    return all(s in can_evict.get(c, ()) for s in graph.full_states() for c in contents_of(s))


@dataclass
class Recurrence:
    recurrent: set
    closed_classes: list
    is_ergodic_set: bool
    all_full_recurrent: bool


def check_recurrence(graph: TransitionGraph) -> Recurrence:
    """Recurrent states are those in closed communicating classes.

    Any request distribution with full support induces the same reachability,
    so recurrence is purely a graph property here. ``is_ergodic_set`` holds
    when there is exactly one closed class; ``all_full_recurrent`` when it
    also contains every full-cache state. LFU start-up count patterns, for
    instance, are full yet transient.
    """
    g = graph.to_networkx()
    cond = nx.condensation(g)
    closed = []
    for node in sorted(cond.nodes):
        if cond.out_degree(node) == 0:
            members = cond.nodes[node]["members"]
            closed.append(sorted(members, key=graph.states.index))
    recurrent = set().union(*map(set, closed)) if closed else set()
    full = set(graph.full_states())
    single = len(closed) == 1
    return Recurrence(recurrent, closed, single, single and full <= set(closed[0]))


def fifo_reorder_cost(graph: TransitionGraph, from_order: tuple, to_order: tuple) -> int:
    """Fewest requests taking the cache from one state to another (BFS)."""
    if from_order not in graph.edges:
        raise UnreachableError(f"{from_order} is not a reachable state")
    if to_order not in graph.edges:
        raise UnreachableError(f"{to_order} is not a reachable state")
    dist = {from_order: 0}
    queue = deque([from_order])
    while queue:
        s = queue.popleft()
        if s == to_order:
            return dist[s]
        for e in graph.edges[s]:
            if e.target not in dist:
                dist[e.target] = dist[s] + 1
                queue.append(e.target)
    raise UnreachableError(f"{to_order} cannot be reached from {from_order}")


def state_label(state: tuple) -> str:
    parts = [f"{item[0]}:{item[1]}" if isinstance(item, tuple) else str(item) for item in state]
    return "(" + ",".join(parts) + ")"


def find_state(graph: TransitionGraph, contents: tuple) -> Optional[tuple]:
    """First enumerated state whose content order matches ``contents``."""
    for s in graph.states:
        if contents_of(s) == tuple(contents):
            return s
    return None
