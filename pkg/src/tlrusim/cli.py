"""Command line entry point: ``tlrusim {simulate,analyze,classify,reproduce}``.

Exit codes are 0 on success, 2 for configuration or usage errors and 3 for
runtime or model errors. Failures print exactly one line on stderr::

    tlrusim: error: kind=<config|runtime> detail=<message>
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import ergodicity as erg
from .analytics import NoRootError, UnstableQueueError
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import (RESULT_COLUMNS, che_iterations, predict_delays, predict_network,
                         result_rows, simulate_many)
from .network import TopologyError
from .report import write_csv, write_text

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
FIGURES = ("fig5", "fig6", "fig7", "fig8")

SUMMARY_COLUMNS = ("experiment", "policy", "node", "cache_size", "seed", "requests", "hits",
                   "hit_ratio", "predicted_lru", "predicted_tlru", "misses", "expired_misses",
                   "rejections", "evictions", "expired_hit_violations", "stream_digest")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message: str, code: int) -> int:
    detail = " ".join(str(message).split())
    print(f"tlrusim: error: kind={kind} detail={detail}", file=sys.stderr)
    return code


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(part) for part in text.split(",") if part.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _load(args, recipe=None) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif recipe is not None:
        cfg = parse_config(resources.files("tlrusim.recipes").joinpath(f"{recipe}.toml").read_text("utf-8"))
    else:
        raise ConfigError("--config", "a config file is required")
    return cfg.with_overrides(seed=args.seed, policy=args.policy, cache_size=args.cache_size)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- simulate ---------------------------------------------------------------

def _summary_rows(result) -> list:
    cfg = result.config
    topo = cfg.topology()
    m = result.metrics
    rows = []
    for node in sorted(topo.caches):
        nm = m.nodes[node]
        pred = result.predictions[node]
        requests = nm.total("requests")
        digest = m.stream_digests.get(node)
        rows.append((cfg.run.experiment, result.policy, node, topo.nodes[node].capacity, cfg.seed,
                     requests, nm.total("hits"), nm.hit_ratio() if requests else math.nan,
                     pred.aggregate("lru"), pred.aggregate("tlru"), nm.total("misses"),
                     nm.total("expired_misses"), nm.total("rejections"), nm.total("evictions"),
                     m.expired_hit_violations, "" if digest is None else f"{digest:08x}"))
    return rows


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out(args)
    policies = cfg.policies()
    results = simulate_many(cfg, policies, args.workers)
    summary = []
    for policy, result in zip(policies, results):
        name = "results.csv" if policy is None else f"results_{policy}.csv"
        write_csv(out / name, RESULT_COLUMNS, result_rows(result))
        rows = _summary_rows(result)
        summary.extend(rows)
        if not any(r[5] for r in rows):
            print("tlrusim: warning: no requests fell inside the measurement window "
                  "(horizon too short for the warmup)", file=sys.stderr)
        for r in rows:
            ratio = "nan" if math.isnan(r[7]) else f"{r[7]:.6f}"
            print(f"policy={r[1]} node={r[2]} requests={r[5]} hit_ratio={ratio}")
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    return EXIT_OK


# -- analyze ----------------------------------------------------------------

PREDICTION_COLUMNS = ("experiment", "node", "content", "rank", "rate", "admit_probability",
                      "predicted_lru", "predicted_tlru")
ITERATION_COLUMNS = ("node", "iteration", "T", "residual")
SOLUTION_COLUMNS = ("node", "capacity", "T", "iterations", "residual", "converged", "method",
                    "aggregate_lru", "aggregate_tlru")
DELAY_COLUMNS = ("origin", "hops", "mean_delay")


def run_analysis(cfg: ExperimentConfig, out: Path) -> dict:
    preds = predict_network(cfg, strict=True)
    exp = cfg.run.experiment
    rows, iters, sols = [], [], []
    for node in sorted(preds):
        p = preds[node]
        c = p.curve
        for i in range(len(p.rates)):
            rows.append((exp, node, i + 1, i + 1, p.rates[i], c.admit[i], c.lru[i], c.tlru[i]))
        iters.extend((node,) + it for it in che_iterations(p))
        s = c.solution
        sols.append((node, p.capacity, s.T, s.iterations, s.residual, s.converged, s.method,
                     p.aggregate("lru"), p.aggregate("tlru")))
    write_csv(out / "predictions.csv", PREDICTION_COLUMNS, rows)
    write_csv(out / "che_iterations.csv", ITERATION_COLUMNS, iters)
    write_csv(out / "che_solution.csv", SOLUTION_COLUMNS, sols)
    delays = predict_delays(cfg, preds)
    if delays:
        write_csv(out / "delay.csv", DELAY_COLUMNS, delays)
    return preds


def cmd_analyze(args) -> int:
    cfg = _load(args)
    preds = run_analysis(cfg, _out(args))
    for node in sorted(preds):
        s = preds[node].curve.solution
        print(f"node={node} T={s.T:.9g} iterations={s.iterations} residual={s.residual:.3g} "
              f"method={s.method} aggregate_lru={preds[node].aggregate('lru'):.6f} "
              f"aggregate_tlru={preds[node].aggregate('tlru'):.6f}")
    return EXIT_OK


# -- classify ---------------------------------------------------------------

CLASS_COLUMNS = ("policy", "catalog_size", "cache_size", "ttu_levels", "states", "full_states",
                 "verdict", "witnesses", "one_step_nonprotective", "eventually_evictable",
                 "closed_classes", "single_closed_class", "all_full_recurrent")
WITNESS_COLUMNS = ("policy", "catalog_size", "cache_size", "state", "content")
REORDER_COLUMNS = ("policy", "catalog_size", "cache_size", "from_order", "to_order", "steps")

# the recency swap of a two-slot cache over a four-content catalog
REORDER_SCENARIO = (4, 2, ("d", "c"), ("c", "d"))


def reorder_checks(ttu_levels: int = 2) -> list:
    catalog, cache, src, dst = REORDER_SCENARIO
    rows = []
    for policy in ("fifo", "lru"):
        g = erg.enumerate_reachable(policy, catalog, cache, ttu_levels)
        steps = erg.fifo_reorder_cost(g, erg.find_state(g, src), erg.find_state(g, dst))
        rows.append((policy, catalog, cache, "".join(src), "".join(dst), steps))
    return rows


def run_classify(policies, catalogs, caches, ttu_levels=2, max_states=10**7) -> tuple:
    table, witnesses = [], []
    for policy in policies:
        for k in catalogs:
            for c in caches:
                g = erg.enumerate_reachable(policy, k, c, ttu_levels, max_states)
                cls = erg.classify_protective(g)
                rec = erg.check_recurrence(g)
                table.append((policy, k, c, ttu_levels, len(g.states), len(g.full_states()),
                              cls.verdict, len(cls.witnesses), cls.one_step_nonprotective,
                              cls.eventually_evictable, len(rec.closed_classes),
                              rec.is_ergodic_set, rec.all_full_recurrent))
                witnesses.extend((policy, k, c, erg.state_label(s), x) for s, x in cls.witnesses)
    return table, witnesses


def cmd_classify(args) -> int:
    policies = [args.policy] if args.policy else args.policies
    caches = [int(args.cache_size)] if args.cache_size else args.cache_sizes
    for p in policies:
        if p not in erg.ABSTRACT_POLICIES:
            raise ConfigError("--policies", f"unknown policy {p!r}")
    out = _out(args)
    table, witnesses = run_classify(policies, args.catalog_sizes, caches, args.ttu_levels, args.max_states)
    reorder = reorder_checks(args.ttu_levels)
    write_csv(out / "classification.csv", CLASS_COLUMNS, table)
    write_csv(out / "witnesses.csv", WITNESS_COLUMNS, witnesses)
    write_csv(out / "reorder.csv", REORDER_COLUMNS, reorder)
    lines = []
    for p in policies:
        verdicts = {r[6] for r in table if r[0] == p}
        overall = erg.PROTECTIVE if erg.PROTECTIVE in verdicts else erg.NON_PROTECTIVE
        sizes = " ".join(f"({r[1]},{r[2]})={r[6]}" for r in table if r[0] == p)
        lines.append(f"policy={p} verdict={overall} {sizes}")
    for r in reorder:
        lines.append(f"reorder policy={r[0]} catalog={r[1]} cache={r[2]} from={r[3]} to={r[4]} steps={r[5]}")
    write_text(out / "classification.txt", lines)
    print("\n".join(lines))
    return EXIT_OK


# -- reproduce --------------------------------------------------------------

FIG5_COLUMNS = ("iteration", "T", "residual")
FIG_COLUMNS = ("rank", "rate", "simulated_lru", "simulated_tlru", "predicted_lru", "predicted_tlru",
               "requests_lru", "hits_lru", "requests_tlru", "hits_tlru")


def reproduce_fig5(cfg: ExperimentConfig, out: Path, name: str) -> int:
    from .plotting import convergence_figure

    preds = run_analysis(cfg, out / "analysis")
    node = sorted(preds)[0]
    its = che_iterations(preds[node])
    write_csv(out / f"{name}.csv", FIG5_COLUMNS, [it for it in its])
    convergence_figure(out / f"{name}.png", {f"capacity {preds[node].capacity:g}": [t for _, t, _ in its]},
                       "Characteristic time per Newton iteration")
    s = preds[node].curve.solution
    print(f"figure={name} T={s.T:.9g} iterations={s.iterations} residual={s.residual:.3g}")
    return EXIT_OK


def reproduce_hits(cfg: ExperimentConfig, out: Path, name: str, workers: int) -> int:
    from .plotting import hit_curve_figure

    policies = list(cfg.run.compare) or ["lru", "tlru"]
    if sorted(policies) != ["lru", "tlru"]:
        raise ConfigError("run.compare", "hit-curve figures compare exactly lru and tlru")
    results = dict(zip(policies, simulate_many(cfg, policies, workers)))
    node = sorted(cfg.rates)[0]
    lru, tlru = results["lru"], results["tlru"]
    pred = lru.predictions[node]
    if pred.curve is None:
        raise NoRootError(pred.error)
    ml, mt = lru.metrics.nodes[node], tlru.metrics.nodes[node]
    rows = []
    for i in range(cfg.catalog.size):
        c = i + 1
        rl, rt = ml.requests[c], mt.requests[c]
        rows.append((c, pred.rates[i], ml.hits[c] / rl if rl else math.nan,
                     mt.hits[c] / rt if rt else math.nan, pred.curve.lru[i], pred.curve.tlru[i],
                     rl, ml.hits[c], rt, mt.hits[c]))
    write_csv(out / f"{name}.csv", FIG_COLUMNS, rows)
    summary = [r for p in policies for r in _summary_rows(results[p]) if r[2] == node]
    write_csv(out / f"{name}_summary.csv", SUMMARY_COLUMNS, summary)
    ranks = np.arange(1, cfg.catalog.size + 1)
    hit_curve_figure(
        out / f"{name}.png", ranks,
        {"LRU": (ml.per_content("hits"), ml.per_content("requests")),
         "TLRU": (mt.per_content("hits"), mt.per_content("requests"))},
        {"LRU": pred.curve.lru, "TLRU": pred.curve.tlru},
        f"Hit probability, cache size {pred.capacity:g}")
    for r in summary:
        print(f"figure={name} policy={r[1]} cache_size={r[3]:g} hit_ratio={r[7]:.6f} "
              f"expired_hit_violations={r[14]}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    if args.figure not in FIGURES:
        raise ConfigError("figure", f"unknown figure {args.figure!r}; expected one of {', '.join(FIGURES)}")
    if args.policy is not None:
        raise ConfigError("--policy", "reproduce runs the recipe's own policy comparison")
    cfg = _load(args, recipe=args.figure)
    out = _out(args)
    if args.figure == "fig5":
        return reproduce_fig5(cfg, out, args.figure)
    return reproduce_hits(cfg, out, args.figure, args.workers)


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (TOML)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, metavar="N", help="override the workload seed")
    common.add_argument("--policy", metavar="NAME", help="override every cache node's policy")
    common.add_argument("--cache-size", type=float, metavar="N", help="override every cache node's capacity")
    common.add_argument("--workers", type=int, default=1, metavar="N", help="parallel runs (default: 1)")

    parser = _Parser(prog="tlrusim", description="Cache policy simulator and analytic models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="run the configured network simulation")
    sub.add_parser("analyze", parents=[common], help="characteristic-time hit predictions")
    cl = sub.add_parser("classify", parents=[common], help="exhaustive policy classification")
    cl.add_argument("--policies", type=_csv_list(str), default=list(erg.ABSTRACT_POLICIES))
    cl.add_argument("--catalog-sizes", type=_csv_list(int), default=[3, 4, 5])
    cl.add_argument("--cache-sizes", type=_csv_list(int), default=[2, 3])
    cl.add_argument("--ttu-levels", type=int, default=2)
    cl.add_argument("--max-states", type=int, default=10**7)
    rp = sub.add_parser("reproduce", parents=[common], help="regenerate a figure's data and plot")
    rp.add_argument("figure", help="one of " + ", ".join(FIGURES))
    return parser


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "classify": cmd_classify,
            "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
    except UsageError as exc:
        return _fail("config", f"usage: {exc}", EXIT_CONFIG)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    started = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (NoRootError, UnstableQueueError, erg.StateSpaceError, erg.UnreachableError,
            TopologyError, ValueError, ArithmeticError, OSError, RuntimeError) as exc:
        return _fail("runtime", f"{type(exc).__name__}: {exc}", EXIT_RUNTIME)
    print(f"elapsed_seconds={time.perf_counter() - started:.3f}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
