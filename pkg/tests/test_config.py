import math

import pytest

from tlrusim.config import ConfigError, load_config, parse_config

MINIMAL = """
schema = "tlrusim/1"
[catalog]
size = 10
[topology]
nodes = [{ name = "n1", capacity = 2 }]
[workload]
rates = { n1 = 1.0 }
[run]
horizon = 100
"""


def test_minimal_config_and_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.catalog.size == 10 and cfg.catalog.zipf_alpha == 0.8
    assert cfg.run.warmup_fraction == 0.2 and cfg.run.metric_window == 10.0
    assert cfg.analytics.eq3_product_mode == "inclusive"
    assert cfg.tlru.composite_rule.value == "min"
    topo = cfg.topology()
    assert topo.nodes["n1"].policy == "lru" and topo.parent["n1"] == "publisher"
    law = cfg.ttu_law()
    assert law.kind == "normal" and law.mean == 1e8 and law.stddev == 2.5e7
    assert cfg.policies() == [None]
    assert len(cfg.digest) == 16


def edit(old, new):
    assert old in MINIMAL
    return MINIMAL.replace(old, new)


@pytest.mark.parametrize("text,path", [
    (edit('capacity = 2 }', 'capacity = 2, parent = "ghost" }'), "topology.nodes[0].parent"),
    (edit("size = 10", "size = 10\nzipf_alpha = -0.8"), "catalog.zipf_alpha"),
    (edit("size = 10", "size = 10\nszie = 3"), "catalog.szie"),
    (edit("n1 = 1.0", "n1 = 0.0"), "workload.rates.n1"),
    (edit("n1 = 1.0", "n2 = 1.0"), "workload.rates.n2"),
    (edit("horizon = 100", "horizon = 100\nwarmup_fraction = 1.0"), "run.warmup_fraction"),
    (edit('schema = "tlrusim/1"', 'schema = "tlrusim/9"'), "schema"),
    (edit("size = 10\n", ""), "catalog.size"),
    (edit("capacity = 2", "capacity = 0"), "topology.nodes[0].capacity"),
    (edit("capacity = 2", 'capacity = 2, policy = "arc"'), "topology.nodes[0].policy"),
    (edit("horizon = 100", 'horizon = 100\ncompare = ["lru", "mru"]'), "run.compare"),
    (MINIMAL + '[tlru]\ncomposite_rule = "avg"\n', "tlru.composite_rule"),
    (MINIMAL + '[analytics]\neq3_product_mode = "both"\n', "analytics.eq3_product_mode"),
    (edit("size = 10", 'size = "ten"'), "catalog.size"),
    ("schema = [", "<document>"),
])
def test_validation_errors_name_the_key(text, path):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.path == path
    assert str(info.value).startswith(path)


def test_cycle_and_duplicate_publisher():
    text = MINIMAL.replace('nodes = [{ name = "n1", capacity = 2 }]',
                           'nodes = [{ name = "n1", capacity = 2, parent = "n2" },'
                           ' { name = "n2", capacity = 2, parent = "n1" }]')
    with pytest.raises(ConfigError, match="cycle"):
        parse_config(text)
    with pytest.raises(ConfigError):
        parse_config(MINIMAL.replace('name = "n1"', 'name = "publisher"'))


def test_ttu_law_variants():
    cfg = parse_config(MINIMAL.replace("size = 10", 'size = 10\n[catalog.ttu]\nlaw = "constant"\nvalue = 5'))
    assert cfg.ttu_law().value == 5.0
    with pytest.raises(ConfigError, match="catalog.ttu.value"):
        parse_config(MINIMAL.replace("size = 10", 'size = 10\n[catalog.ttu]\nlaw = "constant"'))
    cfg = parse_config(MINIMAL.replace("size = 10", 'size = 10\n[catalog.ttu]\nmean = 40\nstddev = 0'))
    assert (cfg.ttu_law().mean, cfg.ttu_law().stddev) == (40.0, 0.0)
    cfg = parse_config(MINIMAL.replace("size = 10", 'size = 10\n[catalog.ttu]\nlaw = "absent"'))
    assert cfg.ttu_law().kind == "absent"


def test_overrides():
    cfg = parse_config(MINIMAL.replace("horizon = 100", 'horizon = 100\ncompare = ["lru", "tlru"]'))
    assert cfg.policies() == ["lru", "tlru"]
    o = cfg.with_overrides(seed=5, policy="fifo", cache_size=7)
    assert o.seed == 5 and o.policies() == [None]
    node = o.topology().nodes["n1"]
    assert node.policy == "fifo" and node.capacity == 7
    assert math.isinf(o.topology().nodes["publisher"].capacity)
    with pytest.raises(ConfigError, match="--policy"):
        cfg.with_overrides(policy="mru")
    with pytest.raises(ConfigError, match="--cache-size"):
        cfg.with_overrides(cache_size=0)
    with pytest.raises(ConfigError, match="--seed"):
        cfg.with_overrides(seed=-1)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")
    path = tmp_path / "ok.toml"
    path.write_text(MINIMAL)
    assert load_config(path).catalog.size == 10
