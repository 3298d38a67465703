"""Python front end of the compiled engine: one call runs one simulation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .adapt import AdaptParams
from .simcore import seconds_to_ns
from .topology import ACK_BYTES, HEADER_BYTES, Topology, TopologyConfig, calibrate_rtt
from .transport import (F_DONE_AT, F_MAX_QUEUE, F_PKTS_RCVD, F_PKTS_SENT, F_TIMEOUTS,
                        TransportParams)
from .workload import FlowSet

log = logging.getLogger(__name__)

SCHEDULERS = ("awafs", "static")


@dataclass
class RunResult:
    flows: FlowSet
    done_at: np.ndarray        # ns, -1 if unfinished
    timeouts: np.ndarray
    max_queue: np.ndarray      # deepest (1-based) queue any packet of the flow used
    pkts_sent: np.ndarray
    pkts_rcvd: np.ndarray
    traj_t: np.ndarray
    traj_port: np.ndarray
    traj_thr: np.ndarray
    traj_count: np.ndarray
    final_thresholds: np.ndarray
    stats: dict = field(default_factory=dict)
    trace: np.ndarray | None = None
    labels: list = field(default_factory=list)

    @property
    def completed(self) -> np.ndarray:
        return self.done_at >= 0

    @property
    def fct_ns(self) -> np.ndarray:
        return np.where(self.completed, self.done_at - self.flows.start_ns, -1)

    @property
    def digest(self) -> int:
        return self.stats["digest"]


def port_arrays(config: TopologyConfig, transport: TransportParams):
    """Per-port line rate (bps) and ECN threshold (bytes)."""
    H = config.leaf_count * config.hosts_per_leaf
    LS = config.leaf_count * config.spine_count
    n = 2 * H + 2 * LS
    rate = np.empty(n, dtype=np.int64)
    rate[: 2 * H] = int(config.downlink_bps)
    rate[2 * H:] = int(config.uplink_bps)
    ecn = np.array([transport.ecn_k_bytes(r) for r in rate], dtype=np.int64)
    return rate, ecn


def simulate(config: TopologyConfig, flows: FlowSet, scheduler: str = "static",
             thresholds=None, adapt: AdaptParams | None = None,
             transport: TransportParams | None = None, seed: int = 0,
             t_end: float | None = None, trace_cap: int = 0) -> RunResult:
    """Run ``flows`` through the network.

    ``thresholds`` are the static demotion thresholds (scheduler="static");
    for "awafs" the starting thresholds come from ``adapt.initial_thresholds``.
    Without ``t_end`` the run lasts until every flow completes.
    """
    config.validate()
    transport = transport or TransportParams()
    transport.validate()
    if scheduler not in SCHEDULERS:
        raise ValueError(f"unknown scheduler {scheduler!r}")
    k = config.queues_per_port
    if scheduler == "awafs":
        adapt = (adapt or AdaptParams()).resolved(k)
        start_thr = adapt.initial_thresholds
    else:
        if thresholds is None:
            raise ValueError("scheduler=static requires a threshold vector")
        start_thr = tuple(int(x) for x in thresholds)
        if len(start_thr) != k - 1 or any(b < a for a, b in zip(start_thr, start_thr[1:])) \
                or min(start_thr) <= 0:
            raise ValueError(f"static thresholds must be {k - 1} positive nondecreasing values")
        adapt = AdaptParams(initial_thresholds=start_thr).resolved(k)

    H = config.leaf_count * config.hosts_per_leaf
    src, dst = flows.src, flows.dst
    if len(flows) and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= H):
        raise ValueError(f"flow endpoints must lie in [0, {H})")
    if np.any(src == dst):
        raise ValueError("flows need src != dst")
    if np.any(np.diff(flows.start_ns) < 0):
        raise ValueError("flows must be sorted by start time")

    prop = (calibrate_rtt(config) if config.per_link_prop_delay is None
            else seconds_to_ns(config.per_link_prop_delay))
    cfg = np.zeros(E.N_CFG, dtype=np.int64)
    cfg[E.C_HOSTS] = H
    cfg[E.C_LEAVES] = config.leaf_count
    cfg[E.C_SPINES] = config.spine_count
    cfg[E.C_HPL] = config.hosts_per_leaf
    cfg[E.C_K] = k
    cfg[E.C_PROP] = prop
    cfg[E.C_BUFFER] = -1 if config.buffer_bytes is None else config.buffer_bytes
    cfg[E.C_MSS] = transport.mss
    cfg[E.C_HDR] = HEADER_BYTES
    cfg[E.C_ACK] = ACK_BYTES
    cfg[E.C_RTO_INIT] = transport.rto_init_ns(config.base_rtt)
    cfg[E.C_RTO_MAX] = transport.rto_max_ns
    cfg[E.C_AWAFS] = int(scheduler == "awafs")
    cfg[E.C_W_UPDATE] = adapt.w_update_ns
    cfg[E.C_T_SCHED] = adapt.t_schedule_ns
    cfg[E.C_MIN_SAMPLES] = adapt.min_samples
    cfg[E.C_T_END] = -1 if t_end is None else seconds_to_ns(t_end)
    cfg[E.C_SEED] = seed
    cfg[E.C_TRACE_CAP] = trace_cap

    rate, ecn = port_arrays(config, transport)
    thr = np.tile(np.asarray(start_thr, dtype=np.int64), (len(rate), 1))
    out = E.simulate(cfg, float(transport.g), float(transport.init_cwnd),
                     np.asarray(adapt.ref_pcts, dtype=np.float64), rate, ecn, thr,
                     src.astype(np.int64), dst.astype(np.int64), flows.size.astype(np.int64),
                     flows.start_ns.astype(np.int64))
    fi, ff, st, traj_t, traj_port, traj_thr, traj_count, trace, nflows = out
    stats = {
        "events": int(st[E.ST_EVENTS]),
        "digest": int(st[E.ST_DIGEST]) & 0xFFFFFFFFFFFFFFFF,
        "data_sent": int(st[E.ST_DATA_SENT]),
        "data_rcvd": int(st[E.ST_DATA_RCVD]),
        "acks_sent": int(st[E.ST_ACKS_SENT]),
        "acks_rcvd": int(st[E.ST_ACKS_RCVD]),
        "drops": int(st[E.ST_DROPS]),
        "adapt_updated": int(st[E.ST_ADAPT_UPDATED]),
        "adapt_insufficient": int(st[E.ST_ADAPT_INSUFFICIENT]),
        "adapt_rejected": int(st[E.ST_ADAPT_REJECTED]),
        "heap_max": int(st[E.ST_HEAP_MAX]),
        "max_backlog": int(st[E.ST_MAX_BACKLOG]),
        "end_time_ns": int(st[E.ST_NOW]),
        "active_at_end": int(st[E.ST_ACTIVE]),
        "prop_ns": int(prop),
        "stray_counters": int(nflows[H:].sum()),
    }
    if stats["adapt_rejected"]:
        log.warning("%d threshold updates rejected", stats["adapt_rejected"])
    topo = Topology(config, prop)
    labels = [topo.port_label(p) for p in range(len(rate))]
    return RunResult(flows, fi[:, F_DONE_AT].copy(), fi[:, F_TIMEOUTS].copy(),
                     fi[:, F_MAX_QUEUE].copy(), fi[:, F_PKTS_SENT].copy(),
                     fi[:, F_PKTS_RCVD].copy(), traj_t, traj_port, traj_thr, traj_count,
                     thr, stats, trace if trace_cap else None, labels)
