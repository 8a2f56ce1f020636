"""Time-aware LRU caching: simulator, analytic hit model and policy classification."""

from .analytics import CheProblem, CheSolution, predict_hit_curve, solve_characteristic_time
from .network import Simulation, Topology, run_simulation
from .policy import CacheState
from .tlru import TlruConfig, tlru_insert
from .workload import TtuLaw, WorkloadSpec, build_catalog, zipf_distribution

__version__ = "0.1.0"

__all__ = [
    "CacheState",
    "CheProblem",
    "CheSolution",
    "Simulation",
    "TlruConfig",
    "Topology",
    "TtuLaw",
    "WorkloadSpec",
    "build_catalog",
    "predict_hit_curve",
    "run_simulation",
    "solve_characteristic_time",
    "tlru_insert",
    "zipf_distribution",
]
