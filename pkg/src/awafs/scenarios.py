"""Scenario configs, presets, static-threshold derivation and the run driver.

Output layout per scenario::

    <out>/<name>/<scheduler>/run-<seed>/{flows,summary,trajectory}.csv
    <out>/<name>/<scheduler>/run-<seed>/manifest.yaml
    <out>/<name>/<scheduler>/summary.csv        (across repetitions)
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .adapt import AdaptParams, exceeds_footprint_bound, window_footprint
from .metrics import MetricsLedger, aggregate, emit, write_aggregate
from .network import SCHEDULERS, RunResult, simulate
from .topology import TopologyConfig
from .transport import TransportParams
from .workload import BUILTIN_WORKLOADS, Phase, TrafficPlan, WorkloadCdf, generate, inverse_sample, load_cdf

log = logging.getLogger(__name__)

KINDS = ("overhead", "convergence", "mismatch-comparison", "heterogeneous", "custom")

# (traffic workload, workload the static thresholds are derived from)
MISMATCH_VARIANTS = {
    1: ("web_search", "data_mining"),
    2: ("data_mining", "web_search"),
    3: ("cache", "data_mining"),
    4: ("hadoop", "data_mining"),
}


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending field."""


def derive_static_thresholds(cdf: WorkloadCdf, k: int) -> list[int]:
    """Sizes at cumulative probability j/k, j = 1..k-1 (equal-probability bands).

    A quantile split standing in for an analytically optimized threshold set.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    return [max(1, int(round(float(inverse_sample(cdf, j / k))))) for j in range(1, k)]


def _coerce(path: str, default, val):
    """Match a numeric ``val`` to the type of its field's default.

    Numeric strings are accepted because YAML reads ``1.0e9`` (no exponent
    sign) as a string.
    """
    if val is None or default is dataclasses.MISSING or isinstance(default, (bool, str, list, tuple)):
        return val
    if isinstance(val, str):
        try:
            val = int(val)
        except ValueError:
            try:
                val = float(val)
            except ValueError:
                raise ConfigError(f"{path}: expected a number, got {val!r}") from None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {val!r}")
    if isinstance(default, int):
        if val != int(val):
            raise ConfigError(f"{path}: expected an integer, got {val!r}")
        return int(val)
    return float(val) if isinstance(default, float) else val


def _numbers(path: str, values, kind) -> list:
    if not isinstance(values, (list, tuple)):
        raise ConfigError(f"{path}: expected a list, got {values!r}")
    return [_coerce(f"{path}[{i}]", kind, v) for i, v in enumerate(values)]


@dataclass
class ScenarioConfig:
    kind: str = "custom"
    name: str = ""
    scheduler: str = "awafs"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    transport: TransportParams = field(default_factory=TransportParams)
    adapt: AdaptParams = field(default_factory=AdaptParams)
    static_thresholds: list[int] | None = None
    # workload (built-in name or CDF path) to derive static thresholds from
    static_from: str | None = None
    traffic: TrafficPlan = field(default_factory=lambda: TrafficPlan(load=0.5, flow_count=1000))
    seed: int = 1
    reps: int = 1
    out: str = "results"
    warmup: float = 0.0
    tail_pct: float = 0.99
    ci_method: str = "normal"
    window_sizes: list[float] = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.name or self.kind

    def static_vector(self) -> list[int]:
        k = self.topology.queues_per_port
        if self.static_thresholds:
            return [int(x) for x in self.static_thresholds]
        if self.static_from:
            return derive_static_thresholds(load_cdf(self.static_from), k)
        raise ConfigError("static.thresholds: scheduler=static requires a threshold vector "
                          "(static.thresholds or static.derive_from)")

    def validate(self) -> None:
        try:
            self._validate()
        except TypeError as exc:
            raise ConfigError(f"config: value of the wrong type ({exc})") from None

    def _validate(self) -> None:
        def check(ok, path, msg):
            if not ok:
                raise ConfigError(f"{path}: {msg}")

        check(self.kind in KINDS, "scenario.kind", f"must be one of {KINDS}")
        check(self.scheduler in SCHEDULERS, "scenario.scheduler", f"must be one of {SCHEDULERS}")
        check(self.reps >= 1, "scenario.reps", "must be >= 1")
        check(self.seed >= 0, "scenario.seed", "must be >= 0")
        check(self.warmup >= 0, "scenario.warmup", "must be >= 0")
        check(0 < self.tail_pct < 1, "scenario.tail_pct", "must lie in (0, 1)")
        check(self.ci_method in ("normal", "t"), "scenario.ci_method", "must be 'normal' or 't'")
        check(all(w > 0 for w in self.window_sizes), "scenario.window_sizes", "must be > 0")
        try:
            self.topology.validate()
        except ValueError as exc:
            raise ConfigError(f"topology: {exc}") from None
        try:
            self.transport.validate()
        except ValueError as exc:
            raise ConfigError(f"transport: {exc}") from None
        try:
            self.traffic.validate()
        except ValueError as exc:
            raise ConfigError(f"traffic: {exc}") from None
        for name in self.traffic.workload_names():
            check(name in BUILTIN_WORKLOADS or Path(name).exists(), "traffic.phases",
                  f"unknown workload {name!r}")
        k = self.topology.queues_per_port
        try:
            self.adapt.resolved(k)
        except ValueError as exc:
            raise ConfigError(f"adapt: {exc}") from None
        if self.scheduler == "static":
            thr = self.static_vector()
            check(len(thr) == k - 1, "static.thresholds", f"needs {k - 1} values, got {len(thr)}")
            check(all(v > 0 for v in thr) and all(b >= a for a, b in zip(thr, thr[1:])),
                  "static.thresholds", "must be positive and nondecreasing")

    # -- config file round trip

    def to_dict(self) -> dict:
        traffic = self.traffic
        return {
            "scenario": {"kind": self.kind, "name": self.name, "scheduler": self.scheduler,
                         "seed": self.seed, "reps": self.reps, "out": self.out,
                         "warmup": self.warmup, "tail_pct": self.tail_pct,
                         "ci_method": self.ci_method, "window_sizes": list(self.window_sizes)},
            "topology": dataclasses.asdict(self.topology),
            "transport": dataclasses.asdict(self.transport),
            "adapt": {"w_update": self.adapt.w_update, "t_schedule": self.adapt.t_schedule,
                      "ref_pcts": list(self.adapt.ref_pcts), "min_samples": self.adapt.min_samples,
                      "initial_thresholds": list(self.adapt.initial_thresholds)},
            "static": {"thresholds": list(self.static_thresholds) if self.static_thresholds else None,
                       "derive_from": self.static_from},
            "traffic": {"load": traffic.load, "flow_count": traffic.flow_count,
                        "duration": traffic.duration, "pairing": traffic.pairing,
                        "split": list(traffic.split),
                        "phases": [{"start": p.start, "workload": p.workload} for p in traffic.phases]},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a mapping of sections")
        known = {"scenario", "topology", "transport", "adapt", "static", "traffic"}
        for key in data:
            if key not in known:
                raise ConfigError(f"{key}: unknown section")

        def section(name):
            sec = data.get(name) or {}
            if not isinstance(sec, dict):
                raise ConfigError(f"{name}: must be a mapping")
            return sec

        def build(name, typ, values, rename=None):
            fields = {f.name: f for f in dataclasses.fields(typ)}
            kwargs = {}
            for key, val in values.items():
                attr = (rename or {}).get(key, key)
                if attr not in fields:
                    raise ConfigError(f"{name}.{key}: unknown field")
                kwargs[attr] = _coerce(f"{name}.{key}", fields[attr].default, val)
            try:
                return typ(**kwargs)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from None

        sc = dict(section("scenario"))
        cfg = cls()
        for key, val in sc.items():
            if key not in {"kind", "name", "scheduler", "seed", "reps", "out", "warmup",
                           "tail_pct", "ci_method", "window_sizes"}:
                raise ConfigError(f"scenario.{key}: unknown field")
            if key == "window_sizes" and val is not None:
                val = _numbers("scenario.window_sizes", val, 0.0)
            setattr(cfg, key, _coerce(f"scenario.{key}", getattr(cfg, key), val))
        cfg.topology = build("topology", TopologyConfig, section("topology"))
        cfg.transport = build("transport", TransportParams, section("transport"))
        ad = dict(section("adapt"))
        for key, kind in (("ref_pcts", 0.0), ("initial_thresholds", 0)):
            if ad.get(key) is not None:
                ad[key] = tuple(_numbers(f"adapt.{key}", ad[key], kind))
        cfg.adapt = build("adapt", AdaptParams, ad)
        st = section("static")
        for key in st:
            if key not in ("thresholds", "derive_from"):
                raise ConfigError(f"static.{key}: unknown field")
        if st.get("thresholds") is not None:
            cfg.static_thresholds = _numbers("static.thresholds", st["thresholds"], 0)
        cfg.static_from = st.get("derive_from")
        tr = dict(section("traffic"))
        phases = tr.pop("phases", None)
        if phases is not None:
            try:
                tr["phases"] = [Phase(float(p["start"]), str(p["workload"])) for p in phases]
            except (KeyError, TypeError):
                raise ConfigError("traffic.phases: entries need 'start' and 'workload'") from None
        if "split" in tr:
            tr["split"] = tuple(tr["split"])
        if "load" not in tr:
            tr["load"] = 0.5
        if "flow_count" not in tr and "duration" not in tr:
            tr["flow_count"] = 1000
        cfg.traffic = build("traffic", TrafficPlan, tr)
        return cfg

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ScenarioConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: not valid YAML ({exc})") from None
        return cls.from_dict(data or {})

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
        return cls.from_yaml(text)


def _desk(k: int = 8, fast: bool = False) -> TopologyConfig:
    """4 leaves x 2 spines x 8 hosts; ``fast`` keeps the 10/40 Gbps link rates."""
    if fast:
        return TopologyConfig(downlink_bps=10e9, uplink_bps=40e9, queues_per_port=k)
    return TopologyConfig(queues_per_port=k)


def scenario_presets(kind: str, variant: int = 1) -> ScenarioConfig:
    """Desk-scale versions of the experiment families.

    The overhead scenario runs on 1/4 Gbps links with the 65 s schedule shrunk
    tenfold. Convergence and the flow-count scenarios keep 10/40 Gbps links:
    packet counts of a flow do not depend on link speed, and the RTO floor and
    marking threshold stay in the regime they were tuned for.
    """
    if kind == "overhead":
        return ScenarioConfig(
            kind=kind, scheduler="awafs", topology=_desk(8),
            traffic=TrafficPlan(load=0.9, phases=[Phase(0.0, "data_mining"), Phase(3.5, "web_search")],
                                duration=6.5),
            warmup=0.5, window_sizes=[0.25, 0.5, 0.75, 1.0])
    if kind == "convergence":
        # 10/40 Gbps so each port's 1 s window holds hundreds of entries, as in
        # the full-scale runs; the schedule is shrunk to 0.5 s + 3 s
        return ScenarioConfig(
            kind=kind, scheduler="awafs", topology=_desk(4, fast=True),
            adapt=AdaptParams(w_update=1.0, t_schedule=0.25, ref_pcts=(0.1, 0.2, 0.3, 0.4),
                              initial_thresholds=(7000, 14000, 21000, 28000)),
            traffic=TrafficPlan(load=0.9, phases=[Phase(0.0, "data_mining"), Phase(0.5, "web_search")],
                                duration=3.5),
            warmup=0.5)
    if kind == "mismatch-comparison":
        if variant not in MISMATCH_VARIANTS:
            raise ConfigError(f"scenario.variant: must be one of {sorted(MISMATCH_VARIANTS)}")
        traffic, derived = MISMATCH_VARIANTS[variant]
        return ScenarioConfig(
            kind=kind, name=f"mismatch-{variant}", scheduler="awafs", topology=_desk(8, fast=True),
            static_from=derived,
            traffic=TrafficPlan(load=0.8, phases=[Phase(0.0, traffic)], flow_count=10_000),
            reps=5)
    if kind == "heterogeneous":
        return ScenarioConfig(
            kind=kind, scheduler="awafs", topology=_desk(8, fast=True), static_from="web_search",
            traffic=TrafficPlan(load=0.8, pairing="heterogeneous-ij", flow_count=10_000,
                                split=("web_search", "data_mining")),
            reps=5)
    if kind == "custom":
        return ScenarioConfig(kind=kind, scheduler="awafs", topology=_desk(8),
                              static_from="web_search",
                              traffic=TrafficPlan(load=0.5, flow_count=1000))
    raise ConfigError(f"scenario.kind: must be one of {KINDS}")


@dataclass
class RunRecord:
    seed: int
    result: RunResult
    ledger: MetricsLedger
    path: Path | None = None
    window: float | None = None


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    runs: list[RunRecord]
    summary_rows: list
    overhead: list = field(default_factory=list)  # (window, mean entries, max entries, bytes)


def n_hosts(config: ScenarioConfig) -> int:
    t = config.topology
    return t.leaf_count * t.hosts_per_leaf


def flows_for(config: ScenarioConfig, seed: int):
    rng = np.random.default_rng(seed)
    return generate(config.traffic, n_hosts(config), config.topology.downlink_bps, rng)


def run_once(config: ScenarioConfig, seed: int, w_update: float | None = None) -> RunResult:
    flows = flows_for(config, seed)
    adapt = config.adapt
    if w_update is not None:
        adapt = dataclasses.replace(adapt, w_update=w_update, t_schedule=min(adapt.t_schedule, w_update))
    thresholds = config.static_vector() if config.scheduler == "static" else None
    # generation stops at the plan's duration; the network then drains
    return simulate(config.topology, flows, config.scheduler, thresholds=thresholds, adapt=adapt,
                    transport=config.transport, seed=seed)


def _manifest(config: ScenarioConfig, seed: int, result: RunResult, extra=None) -> str:
    doc = config.to_dict()
    doc["run"] = {"seed": seed, "flows": len(result.flows), **result.stats}
    if config.scheduler == "static":
        doc["run"]["static_thresholds"] = config.static_vector()
    if extra:
        doc["run"].update(extra)
    return yaml.safe_dump(doc, sort_keys=False)


def window_entry_stats(result: RunResult, warmup: float = 0.0,
                       until: float | None = None) -> tuple[float, int]:
    """Mean and max post-prune window length over switch ports and ticks in [warmup, until]."""
    m = (result.traj_t >= warmup * 1e9) & (result.traj_t > 0)
    if until is not None:
        m &= result.traj_t <= until * 1e9
    counts = result.traj_count[m]
    if counts.size == 0:
        return 0.0, 0
    return float(counts.mean()), int(counts.max())


def run_scenario(config: ScenarioConfig, write: bool = True) -> ScenarioReport:
    config.validate()
    base = Path(config.out) / config.label / config.scheduler
    runs, overhead = [], []
    for i in range(config.reps):
        seed = config.seed + i
        run_dir = base / f"run-{seed}"
        if config.kind == "overhead":
            for w in config.window_sizes or [config.adapt.w_update]:
                res = run_once(config, seed, w_update=w)
                led = MetricsLedger.from_run(res, config.warmup, config.tail_pct)
                mean_n, max_n = window_entry_stats(res, config.warmup, config.traffic.duration)
                overhead.append((w, mean_n, max_n, window_footprint(max_n)))
                path = run_dir / f"w-{w:g}"
                if write:
                    emit(led, path, config.label, config.traffic.load, config.scheduler)
                    (path / "manifest.yaml").write_text(_manifest(
                        config, seed, res, {"w_update": w, "mean_entries": mean_n,
                                            "max_entries": max_n}))
                runs.append(RunRecord(seed, res, led, path, w))
            continue
        res = run_once(config, seed)
        led = MetricsLedger.from_run(res, config.warmup, config.tail_pct)
        if write:
            emit(led, run_dir, config.label, config.traffic.load, config.scheduler)
            (run_dir / "manifest.yaml").write_text(_manifest(config, seed, res))
        runs.append(RunRecord(seed, res, led, run_dir))
        log.info("%s %s seed %d: %d events", config.label, config.scheduler, seed,
                 res.stats["events"])
    rows = aggregate([r.ledger for r in runs], config.label, config.traffic.load,
                     config.scheduler, config.ci_method)
    if write:
        write_aggregate(rows, base / "summary.csv")
        if overhead:
            lines = ["window,mean_entries,max_entries,max_footprint_bytes,over_8kb"]
            lines += [f"{w:g},{m:.3f},{mx},{b},{int(exceeds_footprint_bound(mx))}"
                      for w, m, mx, b in _mean_overhead(overhead)]
            (base / "overhead.csv").write_text("\n".join(lines) + "\n")
    return ScenarioReport(config, runs, rows, _mean_overhead(overhead))


def _mean_overhead(rows):
    """Average the per-repetition overhead rows for each window size."""
    out = []
    for w in sorted({r[0] for r in rows}):
        sel = [r for r in rows if r[0] == w]
        max_n = max(r[2] for r in sel)
        out.append((w, float(np.mean([r[1] for r in sel])), max_n, window_footprint(max_n)))
    return out
