"""Acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (shown in the terminal summary).
Tolerances are pinned as module constants.
"""

import filecmp
import math
import time
from importlib import resources

import numpy as np
import pytest
from scipy.optimize import brentq

from tlrusim import ergodicity as erg
from tlrusim.analytics import (CheProblem, che_F, che_initial_guess, hit_probability_lru, mm1_waiting_time,
                               solve_characteristic_time)
from tlrusim.cli import main, run_classify
from tlrusim.config import parse_config
from tlrusim.experiment import simulate
from tlrusim.network import PUBLISHER, NodeSpec, Topology, aggregate_rate, run_simulation
from tlrusim.workload import TtuLaw, WorkloadSpec, build_catalog, zipf_distribution, zipf_weight

from conftest import record

NEWTON_STABLE_BY = 5
NEWTON_RESIDUAL = 1e-9
NEWTON_RUNTIME = 1.0
ORACLE_PROBLEMS = 100
ORACLE_REL = 1e-6
ORACLE_RUNTIME = 10.0
CLOSED_FORM_REL = 1e-9
CHE_PER_RANK = 0.05
CHE_AGGREGATE = 0.02
CHE_TOP_RANKS = 100
CHE_MIN_REQUESTS = 10**6
CHE_RUNTIME = 120.0
TREND_SEEDS = (1, 2, 3, 4, 5)
TREND_CAPACITIES = (100, 500, 1000)
TREND_HORIZON = 5000.0
TREND_RUNTIME = 15 * 60.0
CLASSIFY_RUNTIME = 30.0
EQ1_SLACK = 2
EQUIV_REQUESTS = 10**5

# expired-hit counters from every simulation run in this module
VIOLATIONS = []


def recipe(name):
    return resources.files("tlrusim.recipes").joinpath(f"{name}.toml").read_text("utf-8")


def sig6(x):
    return float(f"{x:.6g}")


def test_criterion_01_newton_convergence(tmp_path, capsys):
    start = time.perf_counter()
    code = main(["analyze", "--config", str(resources.files("tlrusim.recipes").joinpath("fig5.toml")),
                 "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    import csv
    with open(tmp_path / "che_iterations.csv") as fh:
        Ts = [float(r["T"]) for r in csv.DictReader(fh)]
    with open(tmp_path / "che_solution.csv") as fh:
        sol = next(csv.DictReader(fh))
    final = sig6(Ts[-1])
    stable_from = next(i for i in range(len(Ts)) if all(sig6(t) == final for t in Ts[i:]))
    residual = float(sol["residual"])
    ok = code == 0 and stable_from <= NEWTON_STABLE_BY and residual < NEWTON_RESIDUAL and elapsed < NEWTON_RUNTIME
    record(1, ok, f"T={Ts[-1]:.9g} stable from iteration {stable_from} (<= {NEWTON_STABLE_BY}), "
                  f"residual {residual:.2e} (< {NEWTON_RESIDUAL}), {elapsed:.2f}s (< {NEWTON_RUNTIME}s)")
    assert ok


def _bisection_oracle(problem):
    hi = che_initial_guess(problem)
    while che_F(hi, problem) > 0:
        hi *= 2.0
    return brentq(lambda t: che_F(t, problem), 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=1000)


def test_criterion_02_solver_oracle_equivalence():
    rng = np.random.default_rng(20240602)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(ORACLE_PROBLEMS):
        k = int(rng.integers(10, 10**4 + 1))
        alpha = float(rng.uniform(0.6, 1.2))
        capacity = int(rng.integers(1, k // 2 + 1))
        total = float(10 ** rng.uniform(-2, 3))
        problem = CheProblem(capacity, total * zipf_distribution(k, alpha))
        T = solve_characteristic_time(problem).T
        worst = max(worst, abs(T - _bisection_oracle(problem)) / _bisection_oracle(problem))
    elapsed = time.perf_counter() - start
    ok = worst < ORACLE_REL and elapsed < ORACLE_RUNTIME
    record(2, ok, f"{ORACLE_PROBLEMS} problems, worst relative gap {worst:.2e} (< {ORACLE_REL}), "
                  f"{elapsed:.2f}s (< {ORACLE_RUNTIME}s)")
    assert ok


def test_criterion_03_symmetric_closed_form():
    rng = np.random.default_rng(7)
    worst = 0.0
    cases = [(2, 1, 1.0)] + [(int(k), int(rng.integers(1, k)), float(10 ** rng.uniform(-3, 3)))
                             for k in rng.integers(2, 10**4, 50)]
    for k, c, r in cases:
        T = solve_characteristic_time(CheProblem(c, np.full(k, r))).T
        exact = -math.log(1 - c / k) / r
        worst = max(worst, abs(T - exact) / exact)
    ok = worst < CLOSED_FORM_REL
    record(3, ok, f"{len(cases)} symmetric problems, worst relative gap {worst:.2e} (< {CLOSED_FORM_REL})")
    assert ok


CHE_CONFIG = """
schema = "tlrusim/1"
[catalog]
size = 10000
zipf_alpha = 0.8
[catalog.ttu]
law = "constant"
value = 1e12
[topology]
nodes = [{ name = "n1", capacity = 100, policy = "lru" }]
[workload]
seed = 11
rates = { n1 = 100.0 }
[run]
experiment = "che-accuracy"
horizon = 12600.0
warmup_fraction = 0.2
"""


def test_criterion_04_che_accuracy():
    start = time.perf_counter()
    result = simulate(parse_config(CHE_CONFIG))
    elapsed = time.perf_counter() - start
    m = result.metrics.nodes["n1"]
    VIOLATIONS.append(result.metrics.expired_hit_violations)
    curve = result.predictions["n1"].curve
    req = m.per_content("requests")
    hits = m.per_content("hits")
    top = slice(0, CHE_TOP_RANKS)
    sim = hits[top] / req[top]
    worst = float(np.max(np.abs(sim - curve.lru[top])))
    agg_sim = hits.sum() / req.sum()
    agg_pred = result.predictions["n1"].aggregate("lru")
    ok = (req.sum() >= CHE_MIN_REQUESTS and worst <= CHE_PER_RANK and abs(agg_sim - agg_pred) <= CHE_AGGREGATE
          and elapsed < CHE_RUNTIME)
    record(4, ok, f"{req.sum()} requests, worst rank<={CHE_TOP_RANKS} gap {worst:.4f} (<= {CHE_PER_RANK}), "
                  f"aggregate {agg_sim:.4f} vs {agg_pred:.4f} (<= {CHE_AGGREGATE}), {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_05_tlru_gap_grows_with_cache_size():
    base = parse_config(recipe("fig6").replace("horizon = 12500.0", f"horizon = {TREND_HORIZON}"))
    start = time.perf_counter()
    gaps = {}
    notes = []
    ok = True
    for seed in TREND_SEEDS:
        for cap in TREND_CAPACITIES:
            cfg = base.with_overrides(seed=seed, cache_size=cap)
            runs = {p: simulate(cfg, p) for p in ("lru", "tlru")}
            for r in runs.values():
                VIOLATIONS.append(r.metrics.expired_hit_violations)
            assert runs["lru"].metrics.stream_digests == runs["tlru"].metrics.stream_digests
            lru, tlru = (runs[p].metrics.nodes["n1"].hit_ratio() for p in ("lru", "tlru"))
            gaps[seed, cap] = tlru - lru
            ok &= tlru >= lru
        ok &= gaps[seed, 1000] > gaps[seed, 100]
        notes.append(f"seed {seed}: " + " ".join(f"{c}:{gaps[seed, c]:+.4f}" for c in TREND_CAPACITIES))
    elapsed = time.perf_counter() - start
    ok &= elapsed < TREND_RUNTIME
    record(5, ok, f"TLRU-LRU gaps {'; '.join(notes)}; {elapsed:.0f}s (< {TREND_RUNTIME:.0f}s)")
    assert ok


def test_criterion_06_policy_classification():
    start = time.perf_counter()
    table, _ = run_classify(erg.ABSTRACT_POLICIES, [3, 4, 5], [2, 3])
    from tlrusim.cli import reorder_checks
    steps = {r[0]: r[5] for r in reorder_checks()}
    elapsed = time.perf_counter() - start
    expected = {"fifo": erg.PROTECTIVE, "lru": erg.NON_PROTECTIVE, "lfu": erg.NON_PROTECTIVE,
                "tlru": erg.NON_PROTECTIVE}
    wrong = [(r[0], r[1], r[2], r[6]) for r in table if r[6] != expected[r[0]]]
    ok = not wrong and len(table) == 24 and steps["lru"] == 1 and steps["fifo"] >= 4 and elapsed < CLASSIFY_RUNTIME
    record(6, ok, f"24 cases, mismatches {wrong or 'none'}; reorder LRU {steps['lru']} step, "
                  f"FIFO {steps['fifo']} steps (measured minimum); {elapsed:.1f}s (< {CLASSIFY_RUNTIME}s)")
    assert ok


def _three_level_tree(policy):
    nodes = [NodeSpec(PUBLISHER, policy=PUBLISHER), NodeSpec("core", 60, policy, PUBLISHER)]
    for m in ("m1", "m2"):
        nodes.append(NodeSpec(m, 30, policy, "core"))
        for leaf in ("a", "b"):
            nodes.append(NodeSpec(f"{m}{leaf}", 15, policy, m))
    return Topology(nodes, PUBLISHER)


def test_criterion_08_rate_conservation():
    law = TtuLaw.normal(4.0, 1.5, floor=0.01)
    worst = 0
    windows = 0
    for policy in ("lru", "tlru"):
        topo = _three_level_tree(policy)
        # exogenous load at every leaf and at one interior node
        rates = {"m1a": 40.0, "m1b": 25.0, "m2a": 30.0, "m2b": 20.0, "m2": 10.0}
        wl = {n: WorkloadSpec(800, 0.8, r, law, seed=21) for n, r in rates.items()}
        m = run_simulation(topo, wl, 200.0, trace=True, warmup=0.0)
        VIOLATIONS.append(m.expired_hit_violations)
        for node in ("m1", "m2", "core"):
            for end in np.arange(10.0, 200.0 + 1e-9, 10.0):
                total = aggregate_rate(m, node, window=10.0, end=end) * 10.0
                exo = aggregate_rate(m, node, window=10.0, end=end, kinds="exogenous") * 10.0
                below = sum(aggregate_rate(m, c, window=10.0, end=end, kinds="miss") * 10.0
                            for c in topo.children[node])
                worst = max(worst, abs(round(total - exo - below)))
                windows += 1
    ok = worst <= EQ1_SLACK
    record(8, ok, f"{windows} node-windows on a 3-level tree, worst imbalance {worst} events (<= {EQ1_SLACK})")
    assert ok


def test_criterion_09_formula_units_and_degenerate_equivalence():
    eq2 = mm1_waiting_time(1.0, 2.0)
    eq4 = zipf_weight(2, 1.0)
    law = TtuLaw.constant(1e30)
    wl = {"n1": WorkloadSpec(10**4, 0.8, 100.0, law, seed=5)}
    catalog = build_catalog(10**4, law, 5)
    horizon = EQUIV_REQUESTS / 100.0
    traces = {}
    for p in ("lru", "tlru"):
        m = run_simulation(Topology.single(100, p), wl, horizon, catalog, trace=True)
        VIOLATIONS.append(m.expired_hit_violations)
        traces[p] = (m.trace, m.evictions)
    n = len(traces["lru"][0])
    same = traces["lru"] == traces["tlru"]
    ok = eq2 == 0.5 and eq4 == 0.5 and same and n >= 0.97 * EQUIV_REQUESTS
    record(9, ok, f"M/M/1 wait {eq2} (= 0.5), Zipf weight {eq4} (= 0.5), "
                  f"TLRU and LRU traces identical over {n} requests: {same}")
    assert ok


def test_criterion_07_no_expired_hits():
    # a short-lived workload where expiry is constantly exercised
    law = TtuLaw.normal(2.0, 1.0, floor=0.05)
    for policy in ("fifo", "lru", "lfu", "tlru"):
        wl = {n: WorkloadSpec(500, 0.8, 50.0, law, seed=9) for n in ("m1a", "m1b", "m2a", "m2b")}
        m = run_simulation(_three_level_tree(policy), wl, 200.0)
        VIOLATIONS.append(m.expired_hit_violations)
        assert sum(m.nodes[n].total("expired_misses") for n in m.nodes) > 0
    ok = sum(VIOLATIONS) == 0 and len(VIOLATIONS) >= 5
    record(7, ok, f"{sum(VIOLATIONS)} expired hits across {len(VIOLATIONS)} simulation runs (= 0)")
    assert ok


DET_CONFIG = """
schema = "tlrusim/1"
[catalog]
size = 400
[topology]
nodes = [{ name = "top", capacity = 40 }, { name = "a", capacity = 20, parent = "top", policy = "tlru" }]
[workload]
seed = 8
rates = { a = 40.0, top = 5.0 }
[run]
horizon = 80.0
compare = ["lru", "tlru"]
[analytics]
service_rate = 300.0
"""


def test_criterion_10_determinism(tmp_path, capsys):
    config = tmp_path / "det.toml"
    config.write_text(DET_CONFIG)
    fig = tmp_path / "fig8.toml"
    fig.write_text(recipe("fig8").replace("horizon = 12500.0", "horizon = 300.0"))
    commands = {
        "simulate": ["simulate", "--config", str(config)],
        "analyze": ["analyze", "--config", str(config)],
        "classify": ["classify", "--catalog-sizes", "3,4", "--cache-sizes", "2"],
        "reproduce-fig5": ["reproduce", "fig5"],
        "reproduce-fig8": ["reproduce", "fig8", "--config", str(fig)],
    }
    mismatched = []
    files = 0
    for name, argv in commands.items():
        dirs = []
        for rep in (1, 2):
            out = tmp_path / f"{name}-{rep}"
            assert main(argv + ["--out", str(out)]) == 0
            dirs.append(out)
        capsys.readouterr()
        listed = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
        assert listed == sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*") if p.is_file())
        for rel in listed:
            files += 1
            if not filecmp.cmp(dirs[0] / rel, dirs[1] / rel, shallow=False):
                mismatched.append(f"{name}:{rel}")
    ok = not mismatched
    record(10, ok, f"{files} output files across {len(commands)} subcommand runs, "
                   f"differences: {mismatched or 'none'}")
    assert ok
