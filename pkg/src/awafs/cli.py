"""Command-line entry point: ``awafs-sim run ...``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .adapt import exceeds_footprint_bound
from .scenarios import KINDS, ConfigError, ScenarioConfig, run_scenario, scenario_presets

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="awafs-sim", description="Leaf-spine MLFQ simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--scenario", choices=KINDS, help="preset to start from")
    r.add_argument("--variant", type=int, default=1, help="mismatch-comparison pairing (1-4)")
    r.add_argument("--config", help="YAML scenario file; flags override its fields")
    r.add_argument("--load", type=float)
    r.add_argument("--flows", type=int, help="stop after this many flows")
    r.add_argument("--duration", type=float, help="stop generating flows after this many seconds")
    r.add_argument("--queues", type=int, help="queues per port (k)")
    r.add_argument("--scheduler", choices=("awafs", "static", "both"))
    r.add_argument("--seed", type=int)
    r.add_argument("--reps", type=int)
    r.add_argument("--out")
    r.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args) -> tuple[ScenarioConfig, list[str]]:
    """Config from preset/file plus flag overrides, and the schedulers to run."""
    if args.config:
        cfg = ScenarioConfig.load(args.config)
        if args.scenario and args.scenario != cfg.kind:
            cfg.kind = args.scenario
    else:
        cfg = scenario_presets(args.scenario or "custom", args.variant)
    tr = cfg.traffic
    if args.load is not None:
        tr.load = args.load
    if args.flows is not None:
        tr.flow_count, tr.duration = args.flows, None
    if args.duration is not None:
        tr.duration = args.duration
        if args.flows is None:
            tr.flow_count = None
    if args.queues is not None:
        k = args.queues
        cfg.topology = dataclasses.replace(cfg.topology, queues_per_port=k)
        # k-sized vectors from the preset no longer fit; fall back to defaults
        ad = cfg.adapt
        if ad.ref_pcts and len(ad.ref_pcts) < k - 1:
            ad.ref_pcts = ()
        if ad.initial_thresholds and len(ad.initial_thresholds) < k - 1:
            ad.initial_thresholds = ()
        if cfg.static_thresholds and len(cfg.static_thresholds) != k - 1:
            raise ConfigError(f"static.thresholds: has {len(cfg.static_thresholds)} values, "
                              f"--queues {k} needs {k - 1}")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.reps is not None:
        cfg.reps = args.reps
    if args.out is not None:
        cfg.out = args.out
    if args.scheduler:
        cfg.scheduler = "awafs" if args.scheduler == "both" else args.scheduler
    schedulers = ["static", "awafs"] if args.scheduler == "both" else [cfg.scheduler]
    for s in schedulers:
        dataclasses.replace(cfg, scheduler=s).validate()
    return cfg, schedulers


def _ms(v):
    return "-" if v == "" or v is None else f"{float(v) * 1e3:.3f}"


def summary_table(rows) -> str:
    """Per class: mean FCT +- CI, p99 FCT (ms) and timeouts."""
    by = {}
    for scen, load, sched, cls, metric, value, half, n in rows:
        by.setdefault((sched, cls), {})[metric] = (value, half)
    lines = [f"{'scheduler':<9} {'class':<7} {'mean_ms':>10} {'+-ci95':>8} {'p99_ms':>10} "
             f"{'timeouts':>9} {'unfinished':>10}"]
    for (sched, cls), m in by.items():
        mean, half = m.get("mean_fct", ("", ""))
        p99 = m.get("p99_fct", ("", ""))[0]
        to = m.get("timeouts", ("0", ""))[0]
        un = m.get("unfinished", ("0", ""))[0]
        lines.append(f"{sched:<9} {cls:<7} {_ms(mean):>10} {_ms(half):>8} {_ms(p99):>10} "
                     f"{float(to):>9.1f} {float(un):>10.1f}")
    return "\n".join(lines)


def paired_deltas(reports) -> str:
    """AWAFS vs static mean-FCT change per class (negative = AWAFS faster)."""
    means = {}
    for rep in reports:
        for row in rep.summary_rows:
            if row[4] == "mean_fct":
                means[(row[2], row[3])] = float(row[5])
    out = ["class    awafs_vs_static"]
    for cls in ("small", "medium", "large", "all"):
        a, s = means.get(("awafs", cls)), means.get(("static", cls))
        if a is not None and s:
            out.append(f"{cls:<8} {100 * (a - s) / s:+.2f}%")
    return "\n".join(out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, schedulers = resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        print(cfg.to_yaml(), end="")
        return EXIT_OK
    reports = []
    try:
        for s in schedulers:
            rep = run_scenario(dataclasses.replace(cfg, scheduler=s))
            reports.append(rep)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError, MemoryError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"scenario {cfg.label}: load {cfg.traffic.load}, k={cfg.topology.queues_per_port}, "
          f"{cfg.reps} run(s) from seed {cfg.seed}, output in {cfg.out}/{cfg.label}/")
    print(summary_table([r for rep in reports for r in rep.summary_rows]))
    if len(reports) == 2:
        print(paired_deltas(reports))
    for rep in reports:
        if rep.overhead:
            print("window_s  mean_entries  max_entries  max_bytes  over_8KB")
            for w, mean_n, max_n, nbytes in rep.overhead:
                flag = "yes" if exceeds_footprint_bound(max_n) else "no"
                print(f"{w:<9g} {mean_n:>12.1f} {max_n:>12d} {nbytes:>10d}  {flag:>8}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
