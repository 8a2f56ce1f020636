"""Glue between a parsed config, the simulator and the analytic predictions."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .analytics import (CheProblem, HitCurve, NoRootError, chain_delay, che_F,
                        predict_hit_curve)
from .config import ExperimentConfig
from .network import Metrics, run_simulation
from .workload import build_catalog, zipf_distribution

__all__ = [
    "NodePrediction",
    "RunResult",
    "predict_network",
    "predict_delays",
    "simulate",
    "simulate_many",
    "result_rows",
    "RESULT_COLUMNS",
]

RESULT_COLUMNS = ("experiment", "node", "content", "rank", "requests", "hits", "hit_ratio",
                  "predicted_lru", "predicted_tlru", "policy", "cache_size", "seed")


@dataclass
class NodePrediction:
    node: str
    capacity: float
    policy: str
    rates: np.ndarray
    curve: Optional[HitCurve] = None
    error: Optional[str] = None

    @property
    def served(self) -> np.ndarray:
        """Per-content hit probability under the node's own policy."""
        if self.curve is None:
            # the cache never fills: everything requested stays
            return (self.rates > 0).astype(float)
        return self.curve.tlru if self.policy == "tlru" else self.curve.lru

    def aggregate(self, which: str) -> float:
        total = self.rates.sum()
        if self.curve is None or total <= 0:
            return math.nan
        return float((self.rates * getattr(self.curve, which)).sum() / total)


@dataclass
class RunResult:
    config: ExperimentConfig
    policy: str
    metrics: Metrics
    predictions: dict


def predict_network(cfg: ExperimentConfig, strict: bool = True) -> dict:
    """Che predictions for every cache node, leaves first.

    A node's arrival rates are its own exogenous stream plus whatever its
    children are predicted to miss. With ``strict`` a node whose cache can
    hold every requested content raises :class:`NoRootError`; otherwise its
    prediction is left empty.
    """
    topo = cfg.topology()
    probs = zipf_distribution(cfg.catalog.size, cfg.catalog.zipf_alpha)
    law = cfg.ttu_law()
    rule = cfg.tlru.composite_rule.value
    out = {}
    for node in sorted(topo.caches, key=lambda n: (-topo.levels[n], n)):
        rates = probs * cfg.rates.get(node, 0.0)
        for child in topo.children.get(node, ()):
            below = out[child]
            rates = rates + below.rates * (1.0 - below.served)
        spec = topo.nodes[node]
        pred = NodePrediction(node, spec.capacity, spec.policy, rates)
        problem = CheProblem(spec.capacity, rates)
        try:
            problem.check_well_posed()
            pred.curve = predict_hit_curve(problem, law, cfg.analytics.tolerance,
                                           cfg.analytics.max_iter, rule)
        except NoRootError as exc:
            if strict:
                raise NoRootError(f"node {node}: {exc}") from None
            pred.error = str(exc)
        out[node] = pred
    return out


def predict_delays(cfg: ExperimentConfig, predictions: dict) -> list:
    """Mean queueing delay seen by each exogenous stream along its path upward.

    Every cache on the path is an M/M/1 queue at the configured service
    rate, loaded by that node's total predicted arrival rate.
    """
    mu = cfg.analytics.service_rate
    if mu is None:
        return []
    topo = cfg.topology()
    rows = []
    for origin in sorted(cfg.rates):
        path = [n for n in topo.path_to_publisher(origin) if n != cfg.publisher]
        per_hop, hits = [], []
        for node in path:
            p = predictions[node]
            total = p.rates.sum()
            per_hop.append((total, mu))
            hits.append(float((p.rates * p.served).sum() / total) if total > 0 else 0.0)
        delay = chain_delay(per_hop, hits, len(path), cfg.analytics.eq3_product_mode)
        rows.append((origin, len(path), delay))
    return rows


def che_iterations(pred: NodePrediction) -> list:
    """``(iteration, T, residual)`` for every recorded solver step."""
    if pred.curve is None:
        return []
    problem = CheProblem(pred.capacity, pred.rates)
    return [(i, t, che_F(t, problem)) for i, t in enumerate(pred.curve.solution.history)]


def simulate(cfg: ExperimentConfig, policy: Optional[str] = None) -> RunResult:
    """One run; ``policy`` (if given) replaces every cache node's policy."""
    if policy is not None:
        cfg = cfg.with_overrides(policy=policy)
    topo = cfg.topology()
    law = cfg.ttu_law()
    sizes = None if cfg.catalog.content_size == 1 else [cfg.catalog.content_size] * cfg.catalog.size
    catalog = build_catalog(cfg.catalog.size, law, cfg.seed, sizes)
    horizon = cfg.run.horizon
    metrics = run_simulation(topo, cfg.workloads(), horizon, catalog, cfg.tlru,
                             warmup=cfg.run.warmup_fraction * horizon,
                             ttu_level_scale=cfg.ttu_level_scale)
    metrics.config_digest = cfg.digest
    label = policy or "+".join(sorted({topo.nodes[n].policy for n in topo.caches}))
    return RunResult(cfg, label, metrics, predict_network(cfg, strict=False))


def simulate_many(cfg: ExperimentConfig, policies: list, workers: int = 1) -> list:
    """Paired-seed runs, one per policy, in the order given."""
    if workers <= 1 or len(policies) <= 1:
        return [simulate(cfg, p) for p in policies]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: simulate(cfg, p), policies))


def result_rows(result: RunResult) -> list:
    """ResultRow tuples sorted by (node, rank), in :data:`RESULT_COLUMNS` order."""
    cfg = result.config
    topo = cfg.topology()
    rows = []
    for node in sorted(topo.caches):
        m = result.metrics.nodes[node]
        pred = result.predictions.get(node)
        curve = pred.curve if pred is not None else None
        capacity = topo.nodes[node].capacity
        for content in range(1, cfg.catalog.size + 1):
            requests = m.requests[content]
            hits = m.hits[content]
            ratio = hits / requests if requests else math.nan
            lru = float(curve.lru[content - 1]) if curve is not None else math.nan
            tlru = float(curve.tlru[content - 1]) if curve is not None else math.nan
            # content id and popularity rank coincide for generated catalogs
            rows.append((cfg.run.experiment, node, content, content, requests, hits, ratio,
                         lru, tlru, result.policy, capacity, cfg.seed))
    return rows


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seed=seed)
