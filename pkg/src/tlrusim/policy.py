"""Per-node cache state, request-rate estimators and baseline eviction policies.

An entry is servable strictly before its expiry: at ``now == expiry`` it is
dead. Expired entries are removed lazily, on lookup or when an insert needs
room, and they are always the first victims.
"""

from __future__ import annotations

import enum
import heapq
import math
from collections import OrderedDict
from typing import Iterable, NamedTuple, Optional

__all__ = [
    "NEVER",
    "EWMA_WEIGHT",
    "CacheEntry",
    "RateEstimator",
    "Result",
    "AccessOutcome",
    "CacheState",
    "OrderingError",
    "UncacheableError",
    "BASELINE_POLICIES",
]

NEVER = math.inf
EWMA_WEIGHT = 0.125
BASELINE_POLICIES = ("fifo", "lru", "lfu")


class OrderingError(ValueError):
    """A request was observed earlier than the previous one for the same content."""


class UncacheableError(ValueError):
    """The content does not fit in this cache at all."""


class CacheEntry:
    __slots__ = ("content", "size", "expiry", "insert_time", "last_access", "insert_seq", "access_count",
                 "doom_version")

    def __init__(self, content: int, size: int, expiry: float, insert_time: float,
                 insert_seq: int = -1, access_count: int = 1):
        if not expiry > insert_time:
            raise ValueError(f"entry {content}: expiry {expiry} must be after insert time {insert_time}")
        self.content = content
        self.size = size
        self.expiry = expiry
        self.insert_time = insert_time
        self.last_access = insert_time
        self.insert_seq = insert_seq
        self.access_count = access_count
        self.doom_version = 0

    def alive(self, now: float) -> bool:
        return self.expiry > now

    def snapshot(self) -> "CacheEntry":
        copy = CacheEntry.__new__(CacheEntry)
        for name in self.__slots__:
            setattr(copy, name, getattr(self, name))
        return copy

    def __repr__(self):
        return (f"CacheEntry(content={self.content}, size={self.size}, expiry={self.expiry}, "
                f"last_access={self.last_access}, seq={self.insert_seq}, count={self.access_count})")


class RateEstimator:
    """EWMA of inter-request gaps for one content at one node.

    The gap estimate plays the role of tau while the content is absent from the
    cache and of tau-hat while it is present; both are defined over the same
    request stream.
    """

    __slots__ = ("last_request_time", "ewma_gap", "sample_count")

    def __init__(self):
        self.last_request_time: Optional[float] = None
        self.ewma_gap: Optional[float] = None
        self.sample_count = 0

    def observe(self, now: float, weight: float = EWMA_WEIGHT) -> Optional[float]:
        last = self.last_request_time
        if last is not None:
            if now < last:
                raise OrderingError(f"request at {now} precedes previous request at {last}")
            gap = now - last
            if gap > 0:
                if self.ewma_gap is None:
                    self.ewma_gap = gap
                else:
                    self.ewma_gap += weight * (gap - self.ewma_gap)
        self.last_request_time = now
        self.sample_count += 1
        return self.ewma_gap

    @property
    def rate(self) -> float:
        return 1.0 / self.ewma_gap if self.ewma_gap else 0.0


class Result(enum.Enum):
    HIT = "hit"
    MISS = "miss"
    EXPIRED_MISS = "expired_miss"


class AccessOutcome(NamedTuple):
    result: Result
    served_entry: Optional[CacheEntry] = None


_MISS = AccessOutcome(Result.MISS)


class CacheState:
    """One node's content store.

    ``entries`` keeps insertion order (FIFO order) and ``recency`` keeps
    last-access order, oldest first. Expiry deadlines sit in a lazy heap.
    """

    def __init__(self, node: str, capacity: float, track_rates: bool = False):
        if not capacity > 0:
            raise ValueError(f"node {node}: capacity must be > 0")
        self.node = node
        self.capacity = capacity
        self.used = 0
        self.entries: dict[int, CacheEntry] = {}
        self.recency: OrderedDict[int, None] = OrderedDict()
        self.estimators: dict[int, RateEstimator] = {}
        self.seq_counter = 0
        self.track_rates = track_rates
        # running sum of 1/ewma_gap over all estimators; feeds the TLRU frequency worth
        self.rate_total = 0.0
        self.rates: dict[int, float] = {}
        self._expiry_heap: list[tuple[float, int, int]] = []
        self._lfu_heap: Optional[list[tuple[int, float, int, int]]] = None
        # contraction index: entries wait in _pending keyed by the instant their
        # remaining lifetime drops below their gap estimate, then move to _doomed
        # keyed by recency
        self._pending: list[tuple[float, int, int]] = []
        self._doomed: list[tuple[float, int, int, int]] = []
        self._doom_clock = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, content):
        return content in self.entries

    # -- estimators -----------------------------------------------------

    def record_request(self, content: int, now: float) -> Optional[float]:
        """Feed one observed request into the content's gap estimator.

        Returns the current EWMA gap, or None until two requests have been seen.
        """
        est = self.estimators.get(content)
        if est is None:
            est = self.estimators[content] = RateEstimator()
        gap = est.observe(now)
        if gap is not None:
            new = 1.0 / gap
            old = self.rates.get(content, 0.0)
            self.rates[content] = new
            self.rate_total = max(0.0, self.rate_total + new - old)
            entry = self.entries.get(content)
            if entry is not None:
                self._refresh_doom(entry)
        return gap

    def tau(self, content: int) -> Optional[float]:
        est = self.estimators.get(content)
        return None if est is None else est.ewma_gap

    # -- lookup ---------------------------------------------------------

    def lookup(self, content: int, now: float) -> AccessOutcome:
        entry = self.entries.get(content)
        if entry is None:
            return _MISS
        if entry.expiry <= now:
            self._remove(content)
            return AccessOutcome(Result.EXPIRED_MISS, entry)
        entry.last_access = now
        entry.access_count += 1
        self.recency.move_to_end(content)
        if self._lfu_heap is not None:
            self._push_lfu(entry)
        self._refresh_doom(entry)
        return AccessOutcome(Result.HIT, entry)

    # -- victim selection -----------------------------------------------

    def evict_victim_fifo(self) -> int:
        if not self.entries:
            raise LookupError(f"node {self.node}: no victim in an empty cache")
        return next(iter(self.entries))

    def evict_victim_lru(self, candidates: Optional[Iterable[int]] = None) -> int:
        """Least recently used entry; ties on access time go to the oldest insertion."""
        entries = self.entries
        if candidates is not None:
            pool = [c for c in candidates if c in entries]
            if not pool:
                raise LookupError(f"node {self.node}: empty candidate set")
            return min(pool, key=lambda c: (entries[c].last_access, entries[c].insert_seq))
        if not entries:
            raise LookupError(f"node {self.node}: no victim in an empty cache")
        return self.first_in_recency(lambda entry: True)

    def first_in_recency(self, predicate) -> Optional[int]:
        """LRU-order scan: the least recent entry satisfying ``predicate``.

        Recency order is sorted by last access, so equal access times are
        contiguous and only that run needs the insertion-order tie-break.
        """
        entries = self.entries
        best = None
        for content in self.recency:
            entry = entries[content]
            if best is not None:
                if entry.last_access != best.last_access:
                    break
                if entry.insert_seq < best.insert_seq and predicate(entry):
                    best = entry
            elif predicate(entry):
                best = entry
        return None if best is None else best.content

    def _refresh_doom(self, entry: CacheEntry):
        # versions come from one counter so a re-stored content never matches
        # index items left over from its previous residency
        self._doom_clock += 1
        entry.doom_version = self._doom_clock
        est = self.estimators.get(entry.content)
        if est is None or est.ewma_gap is None or entry.expiry == NEVER:
            return
        heapq.heappush(self._pending, (entry.expiry - est.ewma_gap, entry.doom_version, entry.content))
        if len(self._pending) > 4 * len(self.entries) + 64:
            self._rebuild_doom()

    def _rebuild_doom(self):
        pending = []
        for entry in self.entries.values():
            est = self.estimators.get(entry.content)
            if est is not None and est.ewma_gap is not None and entry.expiry != NEVER:
                pending.append((entry.expiry - est.ewma_gap, entry.doom_version, entry.content))
        heapq.heapify(pending)
        self._pending = pending
        self._doomed = [item for item in self._doomed
                        if (e := self.entries.get(item[3])) is not None and e.doom_version == item[2]]
        heapq.heapify(self._doomed)

    def doomed_lru(self, now: float) -> Optional[int]:
        """Least recent entry whose remaining lifetime is below its gap estimate.

        Same answer as ``first_in_recency`` over that predicate, but amortized
        O(log n): an entry's doom instant only moves when it is hit or its
        estimator is updated, and both refresh the index.
        """
        entries = self.entries
        pending = self._pending
        doomed = self._doomed
        while pending and pending[0][0] < now:
            _, version, content = heapq.heappop(pending)
            entry = entries.get(content)
            if entry is not None and entry.doom_version == version:
                heapq.heappush(doomed, (entry.last_access, entry.insert_seq, version, content))
        while doomed:
            _, _, version, content = doomed[0]
            entry = entries.get(content)
            if entry is not None and entry.doom_version == version:
                return content
            heapq.heappop(doomed)
        return None

    def evict_victim_lfu(self) -> int:
        """Fewest accesses in the current residency; ties by LRU, then insertion."""
        if not self.entries:
            raise LookupError(f"node {self.node}: no victim in an empty cache")
        if self._lfu_heap is None:
            self._lfu_heap = []
            for entry in self.entries.values():
                self._push_lfu(entry)
        heap = self._lfu_heap
        while True:
            count, last, seq, content = heap[0]
            entry = self.entries.get(content)
            if (entry is not None and entry.insert_seq == seq and entry.access_count == count
                    and entry.last_access == last):
                return content
            heapq.heappop(heap)

    def _push_lfu(self, entry: CacheEntry):
        heap = self._lfu_heap
        heapq.heappush(heap, (entry.access_count, entry.last_access, entry.insert_seq, entry.content))
        if len(heap) > 4 * len(self.entries) + 64:
            self._lfu_heap = [(e.access_count, e.last_access, e.insert_seq, e.content)
                              for e in self.entries.values()]
            heapq.heapify(self._lfu_heap)

    def oldest_expired(self, now: float) -> Optional[int]:
        """Entry with the earliest expiry, if that expiry has passed."""
        heap = self._expiry_heap
        entries = self.entries
        while heap:
            expiry, seq, content = heap[0]
            entry = entries.get(content)
            if entry is None or entry.insert_seq != seq:
                heapq.heappop(heap)
                continue
            return content if expiry <= now else None
        return None

    def expired(self, now: float) -> list[int]:
        return [c for c, e in self.entries.items() if e.expiry <= now]

    # -- mutation -------------------------------------------------------

    def _remove(self, content: int) -> CacheEntry:
        entry = self.entries.pop(content)
        del self.recency[content]
        self.used -= entry.size
        return entry

    def evict(self, content: int) -> CacheEntry:
        return self._remove(content)

    def store(self, entry: CacheEntry) -> None:
        """Place an entry, assuming room has already been made."""
        if entry.content in self.entries:
            self._remove(entry.content)
        self.seq_counter += 1
        entry.insert_seq = self.seq_counter
        self.entries[entry.content] = entry
        self.recency[entry.content] = None
        self.used += entry.size
        self._refresh_doom(entry)
        if entry.expiry != NEVER:
            heap = self._expiry_heap
            heapq.heappush(heap, (entry.expiry, entry.insert_seq, entry.content))
            if len(heap) > 4 * len(self.entries) + 64:
                self._expiry_heap = [(e.expiry, e.insert_seq, e.content)
                                     for e in self.entries.values() if e.expiry != NEVER]
                heapq.heapify(self._expiry_heap)
        if self._lfu_heap is not None:
            self._push_lfu(entry)

    def make_room(self, size: int, now: float, choose_victim) -> list[int]:
        """Evict until ``size`` more units fit: expired entries first, then ``choose_victim()``."""
        if size > self.capacity:
            raise UncacheableError(f"node {self.node}: size {size} exceeds capacity {self.capacity}")
        evicted = []
        while self.used + size > self.capacity:
            victim = self.oldest_expired(now)
            if victim is None:
                victim = choose_victim()
            self._remove(victim)
            evicted.append(victim)
        return evicted

    def insert(self, entry: CacheEntry, policy: str, now: Optional[float] = None) -> list[int]:
        """Store ``entry`` under a baseline policy and return the evicted contents.

        Raises UncacheableError when the entry can never fit.
        """
        if now is None:
            now = entry.insert_time
        if policy == "lru":
            choose = self.evict_victim_lru
        elif policy == "fifo":
            choose = self.evict_victim_fifo
        elif policy == "lfu":
            choose = self.evict_victim_lfu
        else:
            raise ValueError(f"unknown baseline policy {policy!r}")
        if entry.content in self.entries:
            self._remove(entry.content)
        evicted = self.make_room(entry.size, now, choose)
        self.store(entry)
        return evicted
