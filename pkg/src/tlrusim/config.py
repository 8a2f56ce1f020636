"""Experiment configuration files (TOML, ``schema = "tlrusim/1"``).

Every key is validated; unknown keys are errors so typos never pass silently.
"""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .network import POLICIES, NodeSpec, Topology, TopologyError
from .tlru import CompositeRule, TlruConfig
from .workload import DEFAULT_TTU_FLOOR, DEFAULT_TTU_SCALE, TtuLaw, WorkloadSpec

__all__ = ["SCHEMA", "ConfigError", "ExperimentConfig", "parse_config", "load_config"]

SCHEMA = "tlrusim/1"


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class CatalogConfig:
    size: int
    zipf_alpha: float = 0.8
    content_size: int = 1
    ttu_law: str = "normal"
    ttu_value: Optional[float] = None
    ttu_mean: Optional[float] = None
    ttu_stddev: Optional[float] = None
    ttu_floor: float = DEFAULT_TTU_FLOOR
    ttu_scale: float = DEFAULT_TTU_SCALE


@dataclass(frozen=True)
class RunConfig:
    horizon: float
    warmup_fraction: float = 0.2
    metric_window: float = 10.0
    compare: tuple = ()
    experiment: str = "experiment"


@dataclass(frozen=True)
class AnalyticsConfig:
    tolerance: float = 1e-9
    max_iter: int = 100
    eq3_product_mode: str = "inclusive"
    service_rate: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    catalog: CatalogConfig
    nodes: tuple
    publisher: str
    rates: dict
    seed: int
    run: RunConfig
    tlru: TlruConfig = TlruConfig()
    analytics: AnalyticsConfig = AnalyticsConfig()
    ttu_level_scale: float = 1.0
    digest: str = field(default="", compare=False)

    def topology(self) -> Topology:
        return Topology(self.nodes, self.publisher)

    @property
    def total_rate(self) -> float:
        return sum(self.rates.values())

    def ttu_law(self) -> TtuLaw:
        c = self.catalog
        if c.ttu_law == "absent":
            return TtuLaw.absent()
        if c.ttu_law == "constant":
            return TtuLaw.constant(c.ttu_value)
        mean = c.ttu_mean if c.ttu_mean is not None else c.ttu_scale / self.total_rate
        stddev = c.ttu_stddev if c.ttu_stddev is not None else mean / 4.0
        return TtuLaw.normal(mean, stddev, c.ttu_floor)

    def workloads(self) -> dict:
        law = self.ttu_law()
        return {node: WorkloadSpec(self.catalog.size, self.catalog.zipf_alpha, rate, law, self.seed)
                for node, rate in self.rates.items()}

    def policies(self) -> list:
        """Policies to run; with ``run.compare`` unset, the per-node policies as configured."""
        return list(self.run.compare) or [None]

    def with_overrides(self, seed: Optional[int] = None, policy: Optional[str] = None,
                       cache_size: Optional[float] = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError("--seed", "must be a 64-bit unsigned integer")
            cfg = replace(cfg, seed=seed)
        if policy is not None:
            if policy not in POLICIES:
                raise ConfigError("--policy", f"unknown policy {policy!r}")
            nodes = tuple(n if n.name == cfg.publisher else replace(n, policy=policy) for n in cfg.nodes)
            cfg = replace(cfg, nodes=nodes, run=replace(cfg.run, compare=()))
        if cache_size is not None:
            if not cache_size > 0:
                raise ConfigError("--cache-size", "must be > 0")
            nodes = tuple(n if n.name == cfg.publisher else replace(n, capacity=cache_size) for n in cfg.nodes)
            cfg = replace(cfg, nodes=nodes)
        return cfg


class _Section:
    """Typed accessor over one table that remembers which keys were read."""

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path, "must be a table")
        self.data = data
        self.path = path
        self.used = set()

    def _key(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, kind, default=None, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(self._key(key), "missing required key")
            return default
        value = self.data[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, kind) or (kind in (int, float) and isinstance(value, bool)):
            raise ConfigError(self._key(key), f"expected {getattr(kind, '__name__', kind)}, got {value!r}")
        return value

    def positive(self, key, kind=float, default=None, required=False):
        value = self.get(key, kind, default, required)
        if value is not None and not value > 0:
            raise ConfigError(self._key(key), f"must be > 0, got {value!r}")
        return value

    def sub(self, key, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(self._key(key), "missing required section")
            return _Section({}, self._key(key))
        return _Section(self.data[key], self._key(key))

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self._key(extra[0]), "unknown key")


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"malformed TOML: {exc}") from None
    root = _Section(raw, "")
    schema = root.get("schema", str, required=True)
    if schema != SCHEMA:
        raise ConfigError("schema", f"unsupported schema {schema!r}, expected {SCHEMA!r}")

    cat = root.sub("catalog", required=True)
    size = cat.positive("size", int, required=True)
    alpha = cat.positive("zipf_alpha", float, 0.8)
    content_size = cat.positive("content_size", int, 1)
    ttu = cat.sub("ttu")
    law = ttu.get("law", str, "normal")
    if law not in ("constant", "normal", "absent"):
        raise ConfigError("catalog.ttu.law", f"expected constant, normal or absent, got {law!r}")
    value = ttu.positive("value", float, required=law == "constant")
    mean = ttu.positive("mean", float)
    stddev = ttu.get("stddev", float)
    if stddev is not None and stddev < 0:
        raise ConfigError("catalog.ttu.stddev", "must be >= 0")
    floor = ttu.positive("floor", float, DEFAULT_TTU_FLOOR)
    scale = ttu.positive("scale", float, DEFAULT_TTU_SCALE)
    ttu.finish()
    cat.finish()
    catalog = CatalogConfig(size, alpha, content_size, law, value, mean, stddev, floor, scale)

    topo = root.sub("topology", required=True)
    publisher = topo.get("publisher", str, "publisher")
    level_scale = topo.positive("ttu_level_scale", float, 1.0)
    raw_nodes = topo.get("nodes", list, required=True)
    topo.finish()
    nodes = [NodeSpec(publisher, math.inf, "publisher", None)]
    for i, item in enumerate(raw_nodes):
        sec = _Section(item, f"topology.nodes[{i}]")
        name = sec.get("name", str, required=True)
        if name == publisher:
            raise ConfigError(f"topology.nodes[{i}].name", "publisher is implicit and must not be listed")
        parent = sec.get("parent", str, publisher)
        capacity = sec.positive("capacity", float, required=True)
        policy = sec.get("policy", str, "lru")
        if policy not in POLICIES:
            raise ConfigError(f"topology.nodes[{i}].policy", f"unknown policy {policy!r}")
        sec.finish()
        nodes.append(NodeSpec(name, capacity, policy, parent))
    names = {n.name for n in nodes}
    for i, n in enumerate(nodes[1:]):
        if n.parent not in names:
            raise ConfigError(f"topology.nodes[{i}].parent", f"undefined node {n.parent!r}")
    try:
        Topology(nodes, publisher)
    except TopologyError as exc:
        raise ConfigError("topology", str(exc)) from None

    wl = root.sub("workload", required=True)
    seed = wl.get("seed", int, 0)
    if not 0 <= seed < 2**64:
        raise ConfigError("workload.seed", "must be a 64-bit unsigned integer")
    rate_sec = wl.sub("rates", required=True)
    rates = {}
    for node in sorted(rate_sec.data):
        if node not in names or node == publisher:
            raise ConfigError(f"workload.rates.{node}", "undefined cache node")
        rates[node] = rate_sec.positive(node, float)
    if not rates:
        raise ConfigError("workload.rates", "at least one node needs an exogenous rate")
    rate_sec.finish()
    wl.finish()

    run = root.sub("run", required=True)
    horizon = run.get("horizon", float, required=True)
    if horizon < 0:
        raise ConfigError("run.horizon", "must be >= 0")
    warmup = run.get("warmup_fraction", float, 0.2)
    if not 0 <= warmup < 1:
        raise ConfigError("run.warmup_fraction", "must lie in [0, 1)")
    window = run.positive("metric_window", float, 10.0)
    compare = run.get("compare", list, [])
    for p in compare:
        if p not in POLICIES:
            raise ConfigError("run.compare", f"unknown policy {p!r}")
    experiment = run.get("experiment", str, "experiment")
    run.finish()
    run_cfg = RunConfig(horizon, warmup, window, tuple(compare), experiment)

    tl = root.sub("tlru")
    rule = tl.get("composite_rule", str, TlruConfig().composite_rule.value)
    try:
        rule = CompositeRule(rule)
    except ValueError:
        raise ConfigError("tlru.composite_rule", f"expected one of max, min, f_only, g_only, got {rule!r}") from None
    tlru_cfg = TlruConfig(rule, tl.get("cold_start_admit", bool, True), tl.positive("ttu_floor", float, 0.001))
    tl.finish()

    an = root.sub("analytics")
    mode = an.get("eq3_product_mode", str, "inclusive")
    if mode not in ("inclusive", "exclusive"):
        raise ConfigError("analytics.eq3_product_mode", f"expected inclusive or exclusive, got {mode!r}")
    analytics = AnalyticsConfig(an.positive("tolerance", float, 1e-9), an.positive("max_iter", int, 100),
                                mode, an.positive("service_rate", float))
    an.finish()
    root.finish()

    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    return ExperimentConfig(catalog, tuple(nodes), publisher, rates, seed, run_cfg, tlru_cfg,
                            analytics, level_scale, digest)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    return parse_config(text)
