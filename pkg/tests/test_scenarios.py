import dataclasses

import numpy as np
import pytest
import yaml

from awafs.cli import main
from awafs.scenarios import (KINDS, MISMATCH_VARIANTS, ConfigError, ScenarioConfig,
                             derive_static_thresholds, run_scenario, scenario_presets)
from awafs.workload import TrafficPlan, load_cdf, parse_cdf


def small(kind, **traffic):
    """A preset shrunk to a few hundred flows on the 1 Gbps desk fabric."""
    cfg = scenario_presets(kind)
    cfg.topology = dataclasses.replace(cfg.topology, downlink_bps=1e9, uplink_bps=4e9)
    cfg.traffic.flow_count, cfg.traffic.duration = 300, None
    for k, v in traffic.items():
        setattr(cfg.traffic, k, v)
    cfg.reps = 1
    cfg.warmup = 0.0
    if kind == "overhead":
        cfg.window_sizes = [0.01, 0.02]
    return cfg


def test_derive_examples():
    assert derive_static_thresholds(parse_cdf("1460 1.0"), 4) == [1460, 1460, 1460]
    assert derive_static_thresholds(load_cdf("bimodal_10k"), 2) == [10_000]


def test_derive_matches_grid_inversion():
    cdf = parse_cdf("1000 0.1\n5000 0.4\n20000 0.8\n100000 1.0")
    grid = np.arange(1000, 100_001, dtype=np.float64)
    F = cdf.cdf(grid)
    oracle = [grid[np.argmax(F >= j / 4 - 1e-12)] for j in range(1, 4)]
    got = derive_static_thresholds(cdf, 4)
    assert all(abs(g - o) <= 1 for g, o in zip(got, oracle))


def test_presets():
    ov = scenario_presets("overhead")
    assert ov.window_sizes == [0.25, 0.5, 0.75, 1.0]
    assert [p.workload for p in ov.traffic.phases] == ["data_mining", "web_search"]
    conv = scenario_presets("convergence")
    assert conv.topology.queues_per_port == 4
    assert conv.adapt.resolved(4).initial_thresholds == (7000, 14000, 21000)
    assert conv.adapt.resolved(4).ref_pcts == (0.1, 0.2, 0.3)
    for v, (traffic, derived) in MISMATCH_VARIANTS.items():
        m = scenario_presets("mismatch-comparison", v)
        assert m.traffic.phases[0].workload == traffic and m.static_from == derived
        assert m.traffic.load == 0.8 and m.traffic.flow_count == 10_000 and m.reps >= 5
    het = scenario_presets("heterogeneous")
    assert het.traffic.pairing == "heterogeneous-ij" and het.static_from == "web_search"
    with pytest.raises(ConfigError):
        scenario_presets("nope")
    with pytest.raises(ConfigError):
        scenario_presets("mismatch-comparison", 9)


@pytest.mark.parametrize("kind", KINDS)
def test_yaml_round_trip(kind):
    cfg = scenario_presets(kind)
    again = ScenarioConfig.from_yaml(cfg.to_yaml())
    assert again.to_dict() == cfg.to_dict()
    again.validate()


def test_config_errors_name_fields():
    cfg = scenario_presets("custom")
    cfg.traffic = TrafficPlan(load=1.5, flow_count=10)
    with pytest.raises(ConfigError, match="traffic"):
        cfg.validate()
    cfg = scenario_presets("custom")
    cfg.scheduler, cfg.static_from, cfg.static_thresholds = "static", None, None
    with pytest.raises(ConfigError, match="static.thresholds"):
        cfg.validate()
    doc = scenario_presets("custom").to_dict()
    doc["topology"]["warp_drive"] = 1
    with pytest.raises(ConfigError, match="warp_drive"):
        ScenarioConfig.from_dict(doc)


def test_static_run_never_adapts(tmp_path):
    cfg = small("custom")
    cfg.scheduler, cfg.out = "static", str(tmp_path)
    rep = run_scenario(cfg)
    st = rep.runs[0].result.stats
    assert st["adapt_updated"] == st["adapt_insufficient"] == st["adapt_rejected"] == 0
    thr = derive_static_thresholds(load_cdf("web_search"), 8)
    assert np.all(rep.runs[0].result.final_thresholds == thr)


def test_layout_and_manifest(tmp_path):
    cfg = small("custom")
    cfg.out, cfg.reps = str(tmp_path), 2
    run_scenario(cfg)
    base = tmp_path / "custom" / "awafs"
    for seed in (1, 2):
        d = base / f"run-{seed}"
        assert {p.name for p in d.iterdir()} == {"flows.csv", "summary.csv", "trajectory.csv",
                                                 "manifest.yaml"}
        man = yaml.safe_load((d / "manifest.yaml").read_text())
        assert man["run"]["seed"] == seed
        assert ScenarioConfig.from_dict({k: v for k, v in man.items() if k != "run"}).to_dict() \
            == cfg.to_dict()
    assert (base / "summary.csv").read_text().splitlines()[1].split(",")[-1] == "2"


def test_overhead_outputs(tmp_path):
    cfg = small("overhead", duration=0.08, flow_count=None)
    cfg.out = str(tmp_path)
    rep = run_scenario(cfg)
    assert [w for w, *_ in rep.overhead] == [0.01, 0.02]
    lines = (tmp_path / "overhead" / "awafs" / "overhead.csv").read_text().splitlines()
    assert lines[0] == "window,mean_entries,max_entries,max_footprint_bytes,over_8kb"
    assert len(lines) == 3
    assert (tmp_path / "overhead" / "awafs" / "run-1" / "w-0.01" / "flows.csv").exists()


def test_cli_smoke(tmp_path, capsys):
    rc = main(["run", "--scenario", "custom", "--flows", "200", "--scheduler", "both",
               "--reps", "2", "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "awafs_vs_static" in out
    for s in ("static", "awafs"):
        assert (tmp_path / "custom" / s / "summary.csv").exists()


def test_cli_convergence_shape(tmp_path):
    rc = main(["run", "--scenario", "convergence", "--queues", "4", "--seed", "1", "--reps", "3",
               "--duration", "0.02", "--out", str(tmp_path)])
    assert rc == 0
    base = tmp_path / "convergence" / "awafs"
    assert sorted(p.name for p in base.iterdir()) == ["run-1", "run-2", "run-3", "summary.csv"]
    assert all((base / f"run-{s}" / "trajectory.csv").stat().st_size > 0 for s in (1, 2, 3))


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert main(["run", "--scenario", "custom", "--load", "1.5", "--out", str(tmp_path)]) == 1
    assert "traffic" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario: {kind: custom}\nbogus: 1\n")
    assert main(["run", "--config", str(bad)]) == 1


def test_cli_dump_config_round_trip(tmp_path, capsys):
    assert main(["run", "--scenario", "heterogeneous", "--dump-config"]) == 0
    text = capsys.readouterr().out
    path = tmp_path / "het.yaml"
    path.write_text(text)
    assert ScenarioConfig.load(path).to_dict() == scenario_presets("heterogeneous").to_dict()


def test_cli_runtime_error_exit_code(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("x")
    assert main(["run", "--scenario", "custom", "--flows", "20", "--out", str(blocker)]) == 2


@pytest.mark.parametrize("text,field", [
    ("topology: {leaf_count: four}", "topology.leaf_count"),
    ("scenario: {seed: x}", "scenario.seed"),
    ("adapt: {ref_pcts: [a, b]}", r"adapt.ref_pcts\[0\]"),
    ("static: {thresholds: [x]}", r"static.thresholds\[0\]"),
    ("scenario: {window_sizes: 3}", "scenario.window_sizes"),
    ("traffic: {flow_count: 2.5}", "flow_count"),
    ("topology: {queues_per_port: 2.5}", "topology.queues_per_port"),
])
def test_mistyped_values_are_config_errors(text, field):
    with pytest.raises(ConfigError, match=field):
        ScenarioConfig.from_yaml(text).validate()


def test_partial_config_and_unsigned_exponents():
    cfg = ScenarioConfig.from_yaml("topology: {downlink_bps: 1.0e9, uplink_bps: 4.0e9}\n"
                                   "traffic: {load: 0.3}\n")
    cfg.validate()
    assert cfg.topology.downlink_bps == 1e9 and cfg.traffic.flow_count == 1000
