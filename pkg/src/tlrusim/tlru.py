"""Time-aware LRU: local TTU stamping, admission control and contracted eviction.

A node derives a local TTU for arriving content from two worth signals, one
driven by content size and one by request frequency, combined by a
configurable rule and clamped into ``[ttu_floor, publisher_ttu]``. Content is
stored only if its local TTU outlives the expected gap to its next request.
When room is needed, LRU runs first over the contraction set: cached entries
whose remaining lifetime is shorter than their expected next-request gap.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Optional

from .policy import CacheEntry, CacheState, UncacheableError
from .workload import ContentMeta

__all__ = [
    "CompositeRule",
    "TlruConfig",
    "RateSnapshot",
    "NotCacheableError",
    "Decision",
    "InsertOutcome",
    "f_worth",
    "g_worth",
    "local_ttu",
    "admit",
    "contraction_set",
    "tlru_insert",
]


class CompositeRule(enum.Enum):
    MAX = "max"
    MIN = "min"
    F_ONLY = "f_only"
    G_ONLY = "g_only"


@dataclass(frozen=True)
class TlruConfig:
    composite_rule: CompositeRule = CompositeRule.MIN
    cold_start_admit: bool = True
    ttu_floor: float = 0.001

    def __post_init__(self):
        if not self.ttu_floor > 0:
            raise ValueError("ttu_floor must be > 0")
        if not isinstance(self.composite_rule, CompositeRule):
            object.__setattr__(self, "composite_rule", CompositeRule(self.composite_rule))


@dataclass(frozen=True)
class RateSnapshot:
    """Per-content total request rates at one node.

    ``total`` may be supplied when the caller already maintains the sum.
    """

    rho: Mapping = field(default_factory=dict)
    total: Optional[float] = None

    def rate(self, content) -> float:
        return self.rho.get(content, 0.0)

    def others(self, content) -> float:
        total = sum(self.rho.values()) if self.total is None else self.total
        return max(0.0, total - self.rate(content))


class NotCacheableError(ValueError):
    """Content carries no publisher TTU, so no node may store it."""


class Decision(enum.Enum):
    STORED = "stored"
    REJECTED = "rejected"
    NOT_CACHEABLE = "not_cacheable"


@dataclass(frozen=True)
class InsertOutcome:
    decision: Decision
    evicted: tuple = ()
    local_ttu: Optional[float] = None


def f_worth(content_size: float, cache_capacity: float, publisher_ttu: float) -> float:
    """Size worth: the share of the cache the content occupies, times its TTU."""
    if not 0 < content_size <= cache_capacity:
        raise ValueError(f"content size {content_size} does not fit capacity {cache_capacity}")
    if not publisher_ttu > 0:
        raise ValueError("publisher_ttu must be > 0")
    return content_size / cache_capacity * publisher_ttu


def g_worth(content, rates: RateSnapshot, publisher_ttu: float) -> float:
    """Frequency worth: own rate over everyone else's, times TTU, capped at TTU.

    With no competing traffic, or no estimate yet for the content itself,
    the worth is the full publisher TTU, leaving the decision to the size
    worth and the admission test.
    """
    if not publisher_ttu > 0:
        raise ValueError("publisher_ttu must be > 0")
    others = rates.others(content)
    if others <= 0 or rates.rate(content) <= 0:
        return publisher_ttu
    value = rates.rate(content) / others * publisher_ttu
    return min(value, publisher_ttu)


def local_ttu(content: ContentMeta, cache_capacity: float, rates: RateSnapshot,
              config: TlruConfig = TlruConfig()) -> float:
    ttu = content.publisher_ttu
    if ttu is None:
        raise NotCacheableError(f"content {content.id} has no publisher TTU")
    rule = config.composite_rule
    if rule is CompositeRule.F_ONLY:
        value = f_worth(content.size, cache_capacity, ttu)
    elif rule is CompositeRule.G_ONLY:
        value = g_worth(content.id, rates, ttu)
    else:
        f = f_worth(content.size, cache_capacity, ttu)
        g = g_worth(content.id, rates, ttu)
        value = max(f, g) if rule is CompositeRule.MAX else min(f, g)
    # floor cannot lift a stamp above the publisher's own TTU
    return min(max(value, config.ttu_floor), ttu)


def admit(local: float, tau: Optional[float], config: TlruConfig = TlruConfig()) -> bool:
    if tau is None:
        return config.cold_start_admit
    return local > tau


def _doomed(state: CacheState, now: float):
    estimators = state.estimators

    def predicate(entry: CacheEntry) -> bool:
        remaining = entry.expiry - now
        if remaining <= 0:
            return True
        est = estimators.get(entry.content)
        gap = None if est is None else est.ewma_gap
        return gap is not None and remaining < gap

    return predicate


def contraction_set(state: CacheState, now: float) -> set:
    """Cached contents that will likely expire before their next request.

    Entries without a gap estimate cannot be judged and stay out, unless
    already expired.
    """
    doomed = _doomed(state, now)
    return {c for c, entry in state.entries.items() if doomed(entry)}


def tlru_insert(state: CacheState, content: ContentMeta, now: float, rates: RateSnapshot,
                config: TlruConfig = TlruConfig(), tau: Optional[float] = None) -> InsertOutcome:
    """Run the TLRU storage decision for content arriving at ``now``.

    ``tau`` defaults to the node's own estimate for the content. A rejected
    content is still delivered downstream; it is just not stored here.
    """
    if content.publisher_ttu is None:
        return InsertOutcome(Decision.NOT_CACHEABLE)
    if content.size > state.capacity:
        return InsertOutcome(Decision.NOT_CACHEABLE)
    ttu = local_ttu(content, state.capacity, rates, config)
    if tau is None:
        tau = state.tau(content.id)
    if not admit(ttu, tau, config):
        return InsertOutcome(Decision.REJECTED, local_ttu=ttu)
    if content.id in state.entries:
        state.evict(content.id)

    def choose_victim():
        victim = state.doomed_lru(now)
        return state.evict_victim_lru() if victim is None else victim

    try:
        evicted = state.make_room(content.size, now, choose_victim)
    except UncacheableError:
        return InsertOutcome(Decision.NOT_CACHEABLE)
    state.store(CacheEntry(content.id, content.size, now + ttu, now))
    return InsertOutcome(Decision.STORED, tuple(evicted), ttu)
