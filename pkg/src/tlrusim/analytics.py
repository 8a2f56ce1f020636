"""Che approximation, characteristic-time solver and queueing delay formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .workload import TtuLaw

__all__ = [
    "NoRootError",
    "UnstableQueueError",
    "CheProblem",
    "CheSolution",
    "che_F",
    "che_F_prime",
    "che_initial_guess",
    "solve_characteristic_time",
    "hit_probability_lru",
    "hit_probability_tlru",
    "admit_probability",
    "local_ttu_factor",
    "mm1_waiting_time",
    "chain_delay",
    "HitCurve",
    "predict_hit_curve",
]


class NoRootError(ValueError):
    """The capacity fixed point has no positive solution."""


class UnstableQueueError(ValueError):
    pass


@dataclass
class CheProblem:
    capacity: float
    rates: np.ndarray
    ttu_admit_prob: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        if not self.capacity > 0:
            raise ValueError("capacity must be > 0")
        if np.any(self.rates < 0):
            raise ValueError("rates must be non-negative")
        if self.ttu_admit_prob is not None:
            self.ttu_admit_prob = np.asarray(self.ttu_admit_prob, dtype=float)
            if self.ttu_admit_prob.shape != self.rates.shape:
                raise ValueError("ttu_admit_prob must match rates in length")
            if np.any((self.ttu_admit_prob < 0) | (self.ttu_admit_prob > 1)):
                raise ValueError("ttu_admit_prob entries must lie in [0, 1]")

    @property
    def active(self) -> int:
        return int(np.count_nonzero(self.rates > 0))

    def check_well_posed(self):
        if self.capacity >= self.active:
            raise NoRootError(
                f"capacity {self.capacity:g} >= {self.active} contents with positive rate: "
                "the cache never fills, so no characteristic time exists")


@dataclass
class CheSolution:
    T: float
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)
    method: str = "newton"


def che_F(T: float, problem: CheProblem) -> float:
    """Capacity minus the expected number of contents requested within ``T``."""
    if T < 0:
        raise ValueError("T must be >= 0")
    return problem.capacity - float(np.sum(-np.expm1(-problem.rates * T)))


def che_F_prime(T: float, problem: CheProblem) -> float:
    r = problem.rates
    return -float(np.sum(r * np.exp(-r * T)))


def che_initial_guess(problem: CheProblem) -> float:
    total = float(np.sum(problem.rates))
    if not total > 0:
        raise ValueError("all rates are zero")
    return problem.capacity / total


def _bisect(problem: CheProblem, lo: float, hi: float, tolerance: float, max_iter: int):
    f_lo = che_F(lo, problem)
    T = hi
    for i in range(1, max_iter + 1):
        T = 0.5 * (lo + hi)
        f = che_F(T, problem)
        if abs(f) < tolerance or hi - lo <= 4 * np.finfo(float).eps * hi:
            return T, f, i
        if (f > 0) == (f_lo > 0):
            lo, f_lo = T, f
        else:
            hi = T
    return T, che_F(T, problem), max_iter


def solve_characteristic_time(problem: CheProblem, tolerance: float = 1e-9,
                              max_iter: int = 100) -> CheSolution:
    """Newton iteration from ``capacity / sum(rates)``, with a bisection safeguard.

    F is convex and decreasing, and the guess sits left of the root, so plain
    Newton climbs monotonically; the safeguard only triggers on numerical
    trouble (non-finite iterates, vanishing slope, no progress).
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    problem.check_well_posed()
    T = che_initial_guess(problem)
    history = [T]
    residual = che_F(T, problem)
    for i in range(1, max_iter + 1):
        if abs(residual) < tolerance:
            return CheSolution(T, i - 1, abs(residual), True, history)
        slope = che_F_prime(T, problem)
        if slope == 0 or not math.isfinite(slope):
            break
        T_new = T - residual / slope
        if not (math.isfinite(T_new) and T_new > 0):
            break
        T = T_new
        history.append(T)
        residual = che_F(T, problem)
    else:
        if abs(residual) < tolerance:
            return CheSolution(T, max_iter, abs(residual), True, history)
        return CheSolution(T, max_iter, abs(residual), False, history)

    # bracket: F(0) = capacity > 0, grow the upper end until F turns negative
    hi = che_initial_guess(problem)
    while che_F(hi, problem) >= 0:
        hi *= 2.0
        if not math.isfinite(hi):
            raise NoRootError("could not bracket the characteristic time")
    T, f, used = _bisect(problem, 0.0, hi, tolerance, max_iter)
    history.append(T)
    return CheSolution(T, len(history) - 1 + used, abs(f), abs(f) < tolerance, history, "bisection")


def hit_probability_lru(rho, T):
    """Probability that a content is requested again within the characteristic time."""
    return -np.expm1(-np.asarray(rho, dtype=float) * T) if np.ndim(rho) else -math.expm1(-rho * T)


def hit_probability_tlru(rho, T, admit_prob):
    return hit_probability_lru(rho, T) * admit_prob


def local_ttu_factor(rates: np.ndarray, capacity: float, sizes=None, rule: str = "min") -> np.ndarray:
    """Per-content ratio of local TTU to publisher TTU.

    Combines the size worth ``size / capacity`` and the frequency worth
    ``rho_i / sum_{k != i} rho_k`` by ``rule`` (max, min, f_only, g_only),
    capped at 1.
    """
    rates = np.asarray(rates, dtype=float)
    others = rates.sum() - rates
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(others > 0, rates / others, 1.0)
    f = (np.ones_like(rates) if sizes is None else np.asarray(sizes, float)) / capacity
    combine = {"max": np.maximum, "min": np.minimum,
               "f_only": lambda f, g: f, "g_only": lambda f, g: g}
    if rule not in combine:
        raise ValueError(f"unknown composite rule {rule!r}")
    return np.minimum(combine[rule](f, g), 1.0)


def admit_probability(ttu_law: TtuLaw, rho, ttu_factor=1.0):
    """P(ttu_factor * TTU > 1/rho), the stored stamp outliving the mean request gap.

    ``ttu_factor`` scales publisher TTU into the node's local stamp; the
    default of 1 compares the publisher stamp directly. Accepts arrays.
    """
    rho_a = np.asarray(rho, dtype=float)
    factor = np.asarray(ttu_factor, dtype=float)
    if np.any(rho_a <= 0):
        raise ValueError("rho must be > 0")
    if np.any(factor <= 0):
        raise ValueError("ttu_factor must be > 0")
    threshold = 1.0 / (rho_a * factor)
    if ttu_law.kind == "absent":
        p = np.zeros_like(threshold)
    elif ttu_law.kind == "constant":
        p = (ttu_law.value > threshold).astype(float)
    elif ttu_law.stddev == 0:
        p = (max(ttu_law.mean, ttu_law.floor) > threshold).astype(float)
    else:
        p = ndtr((ttu_law.mean - threshold) / ttu_law.stddev)
        # the floor clamp moves all mass below `floor` onto `floor`
        p = np.where(threshold < ttu_law.floor, 1.0, p)
    return float(p) if p.ndim == 0 else p


def mm1_waiting_time(sigma: float, service_rate: float) -> float:
    """Mean M/M/1 queueing delay ``sigma / (mu (mu - sigma))``."""
    if sigma < 0:
        raise ValueError("arrival rate must be >= 0")
    if sigma >= service_rate:
        raise UnstableQueueError(f"arrival rate {sigma} >= service rate {service_rate}")
    return sigma / (service_rate * (service_rate - sigma))


def chain_delay(per_hop: Sequence[tuple], hit_probs: Sequence[float], L: Optional[int] = None,
                product_mode: str = "inclusive") -> float:
    """Average delay across ``L`` hops, each hop's wait weighted by the miss probability.

    ``product_mode="inclusive"`` weights hop i by the misses at hops 1..i;
    ``"exclusive"`` by the misses at hops 1..i-1 (the request reaching hop i).
    """
    if L is None:
        L = len(per_hop)
    if len(per_hop) != L or len(hit_probs) != L:
        raise ValueError(f"expected {L} hops, got {len(per_hop)} queues and {len(hit_probs)} hit probabilities")
    if product_mode not in ("inclusive", "exclusive"):
        raise ValueError(f"unknown product mode {product_mode!r}")
    total = 0.0
    unserved = 1.0
    for (sigma, mu), h in zip(per_hop, hit_probs):
        wait = mm1_waiting_time(sigma, mu)
        if product_mode == "exclusive":
            total += wait * unserved
            unserved *= 1.0 - h
        else:
            unserved *= 1.0 - h
            total += wait * unserved
    return total


@dataclass
class HitCurve:
    solution: CheSolution
    rates: np.ndarray
    admit: np.ndarray
    lru: np.ndarray
    tlru: np.ndarray


def predict_hit_curve(problem: CheProblem, ttu_law: Optional[TtuLaw] = None,
                      tolerance: float = 1e-9, max_iter: int = 100, rule: str = "min") -> HitCurve:
    """Per-content LRU and TLRU hit probabilities from one characteristic time.

    Admission probabilities come from ``problem.ttu_admit_prob`` when given,
    otherwise from ``ttu_law`` evaluated against each content's local stamp.
    """
    solution = solve_characteristic_time(problem, tolerance, max_iter)
    rates = problem.rates
    if problem.ttu_admit_prob is not None:
        admit = problem.ttu_admit_prob
    elif ttu_law is None:
        admit = np.ones_like(rates)
    else:
        factor = local_ttu_factor(rates, problem.capacity, rule=rule)
        admit = np.zeros_like(rates)
        live = rates > 0
        admit[live] = admit_probability(ttu_law, rates[live], factor[live])
    lru = hit_probability_lru(rates, solution.T)
    return HitCurve(solution, rates, admit, lru, lru * admit)
