"""Content catalog, Zipf popularity, Poisson arrivals and TTU stamps."""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

__all__ = [
    "ContentMeta",
    "TtuLaw",
    "WorkloadSpec",
    "RequestKind",
    "RequestEvent",
    "zipf_weight",
    "zipf_distribution",
    "next_arrival",
    "assign_ttu",
    "build_catalog",
    "catalog_rng",
    "node_rng",
    "ArrivalStream",
]

DEFAULT_TTU_FLOOR = 0.001
# typical TTU measured in mean inter-request times of the node's total stream
DEFAULT_TTU_SCALE = 1e8


@dataclass(frozen=True)
class ContentMeta:
    id: int
    size: int = 1
    publisher_ttu: Optional[float] = None
    popularity_rank: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"content {self.id}: size must be >= 1, got {self.size}")
        if self.publisher_ttu is not None and not self.publisher_ttu > 0:
            raise ValueError(f"content {self.id}: publisher_ttu must be > 0")

    @property
    def cacheable(self) -> bool:
        return self.publisher_ttu is not None


@dataclass(frozen=True)
class TtuLaw:
    """Distribution of publisher TTU stamps.

    ``kind`` is one of ``"constant"``, ``"normal"`` or ``"absent"``.
    """

    kind: str
    value: float = 0.0
    mean: float = 0.0
    stddev: float = 0.0
    floor: float = DEFAULT_TTU_FLOOR

    def __post_init__(self):
        if self.kind not in ("constant", "normal", "absent"):
            raise ValueError(f"unknown ttu law {self.kind!r}")
        if self.kind == "constant" and not self.value > 0:
            raise ValueError("constant TTU must be > 0")
        if self.kind == "normal":
            if not self.floor > 0:
                raise ValueError("normal TTU floor must be > 0")
            if self.stddev < 0:
                raise ValueError("normal TTU stddev must be >= 0")

    @classmethod
    def constant(cls, value: float) -> "TtuLaw":
        return cls("constant", value=float(value))

    @classmethod
    def normal(cls, mean: float, stddev: float, floor: float = DEFAULT_TTU_FLOOR) -> "TtuLaw":
        return cls("normal", mean=float(mean), stddev=float(stddev), floor=float(floor))

    @classmethod
    def absent(cls) -> "TtuLaw":
        return cls("absent")

    @classmethod
    def default_normal(cls, total_rate: float, scale: float = DEFAULT_TTU_SCALE) -> "TtuLaw":
        """Normal law with mean ``scale / total_rate`` and stddev a quarter of the mean."""
        mean = scale / total_rate
        return cls.normal(mean, mean / 4.0)


@dataclass(frozen=True)
class WorkloadSpec:
    catalog_size: int
    zipf_alpha: float
    total_rate: float
    ttu_law: TtuLaw
    seed: int = 0

    def __post_init__(self):
        if self.catalog_size < 1:
            raise ValueError("catalog_size must be >= 1")
        if not self.zipf_alpha > 0:
            raise ValueError("zipf_alpha must be > 0")
        if not self.total_rate > 0:
            raise ValueError("total_rate must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


class RequestKind(enum.Enum):
    EXOGENOUS = "exogenous"
    ENDOGENOUS = "endogenous"


@dataclass(frozen=True)
class RequestEvent:
    time: float
    content: int
    node: str
    kind: RequestKind = RequestKind.EXOGENOUS


def zipf_weight(rank: int, alpha: float) -> float:
    """Unnormalized Zipf popularity ``rank ** -alpha``."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    return float(rank) ** -alpha


def zipf_distribution(k: int, alpha: float) -> np.ndarray:
    """Zipf probabilities for ranks ``1..k``, normalized over the finite catalog."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    weights = np.arange(1, k + 1, dtype=float) ** -alpha
    return weights / math.fsum(weights)


def next_arrival(rate: float, rng: np.random.Generator) -> float:
    """Exponential inter-arrival time for a Poisson process of the given rate."""
    if not rate > 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    return float(rng.exponential(1.0 / rate))


def assign_ttu(law: TtuLaw, rng: np.random.Generator) -> Optional[float]:
    if law.kind == "constant":
        return law.value
    if law.kind == "normal":
        return max(law.floor, float(rng.normal(law.mean, law.stddev)))
    return None


def catalog_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0,))))


def node_rng(seed: int, node: str) -> np.random.Generator:
    # keyed by node name, not creation order, so topology edits leave other streams intact
    key = zlib.crc32(node.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1, key))))


def build_catalog(k: int, ttu_law: TtuLaw, seed: int, sizes=None) -> list[ContentMeta]:
    """Catalog where content ``i`` has popularity rank ``i`` (id 1 is most popular).

    TTU stamps are drawn in id order from a stream that depends only on ``seed``.
    """
    rng = catalog_rng(seed)
    catalog = []
    for i in range(1, k + 1):
        size = 1 if sizes is None else int(sizes[i - 1])
        catalog.append(ContentMeta(i, size, assign_ttu(ttu_law, rng), i))
    return catalog


class ArrivalStream:
    """Poisson request stream at one node, drawn in vectorized chunks.

    Each arrival picks a content from the Zipf law, which is the superposition
    of independent per-content Poisson streams with rates ``total_rate * p_i``.
    """

    chunk = 1 << 16

    def __init__(self, node: str, spec: WorkloadSpec, probs: Optional[np.ndarray] = None):
        self.node = node
        self.spec = spec
        if probs is None:
            probs = zipf_distribution(spec.catalog_size, spec.zipf_alpha)
        self._cdf = np.cumsum(probs)
        self._cdf[-1] = 1.0
        self._rng = node_rng(spec.seed, node)
        self._clock = 0.0
        self._digest = 0

    @property
    def digest(self) -> int:
        """CRC32 over every chunk drawn so far; equal digests mean equal streams."""
        return self._digest

    def chunks(self) -> Iterator[tuple[list, list]]:
        scale = 1.0 / self.spec.total_rate
        while True:
            gaps = self._rng.exponential(scale, self.chunk)
            times = np.cumsum(gaps) + self._clock
            self._clock = float(times[-1])
            contents = np.searchsorted(self._cdf, self._rng.random(self.chunk), side="right") + 1
            self._digest = zlib.crc32(contents.tobytes(), zlib.crc32(times.tobytes(), self._digest))
            yield times.tolist(), contents.tolist()

    def __iter__(self) -> Iterator[tuple[float, int]]:
        for times, contents in self.chunks():
            yield from zip(times, contents)
