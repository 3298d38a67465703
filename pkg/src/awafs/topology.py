"""Leaf-spine topology, packets and per-packet spraying.

Port (= directed link) numbering, with H hosts, L leaves and S spines::

    [0, H)                host h NIC            -> leaf(h)
    [H, 2H)               leaf(h) downlink      -> host h
    [2H, 2H+LS)           leaf l uplink s       -> spine s      (2H + l*S + s)
    [2H+LS, 2H+2LS)       spine s downlink l    -> leaf l       (2H + LS + s*L + l)

Host NICs are single FIFOs; every other port is a switch port with an MLFQ.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .simcore import NS_PER_S

MSS = 1460
HEADER_BYTES = 40
DATA_WIRE_BYTES = MSS + HEADER_BYTES
ACK_BYTES = 40
REFERENCE_BASE_RTT_S = 85.2e-6

PORT_HOST_NIC = 0
PORT_LEAF_DOWN = 1
PORT_LEAF_UP = 2
PORT_SPINE_DOWN = 3


class TopologyError(ValueError):
    pass


@dataclass
class TopologyConfig:
    leaf_count: int = 4
    spine_count: int = 2
    hosts_per_leaf: int = 8
    downlink_bps: float = 1e9
    uplink_bps: float = 4e9
    # None -> calibrated against base_rtt
    per_link_prop_delay: float | None = None
    queues_per_port: int = 8
    base_rtt: float = REFERENCE_BASE_RTT_S
    # None = unbounded queues
    buffer_bytes: int | None = None

    def validate(self) -> None:
        checks = [
            ("leaf_count", self.leaf_count >= 1),
            ("spine_count", self.spine_count >= 1),
            ("hosts_per_leaf", self.hosts_per_leaf >= 2),
            ("downlink_bps", self.downlink_bps > 0),
            ("uplink_bps", self.uplink_bps > 0),
            ("queues_per_port", self.queues_per_port >= 2),
            ("per_link_prop_delay", self.per_link_prop_delay is None or self.per_link_prop_delay >= 0),
            ("buffer_bytes", self.buffer_bytes is None or self.buffer_bytes >= DATA_WIRE_BYTES),
        ]
        for name, ok in checks:
            if not ok:
                raise TopologyError(f"invalid topology field {name}={getattr(self, name)!r}")

    @classmethod
    def full_scale(cls) -> "TopologyConfig":
        return cls(leaf_count=9, spine_count=4, hosts_per_leaf=16,
                   downlink_bps=10e9, uplink_bps=40e9, queues_per_port=8)


@dataclass
class Packet:
    flow_id: int
    src_host: int
    dst_host: int
    size: int
    payload: int = 0
    seq_no: int = 0
    priority_tag: int = 1
    ecn_ce: bool = False
    flow_end_mark: bool = False
    final_size: int = 0
    is_ack: bool = False


def serialization_ns(nbytes: int, rate_bps: float) -> int:
    """Wire time rounded up to whole nanoseconds."""
    return -(-int(nbytes) * 8 * NS_PER_S // int(rate_bps))


def unloaded_rtt_ns(downlink_bps, uplink_bps, prop_ns, hops=4) -> int:
    """One full data packet out and one ACK back over ``hops`` links each way."""
    rates = [downlink_bps, uplink_bps, uplink_bps, downlink_bps] if hops == 4 else [downlink_bps] * hops
    ser = sum(serialization_ns(DATA_WIRE_BYTES, r) + serialization_ns(ACK_BYTES, r) for r in rates)
    return ser + 2 * hops * prop_ns


def calibrate_rtt(config: TopologyConfig) -> int:
    """Per-link propagation delay (ns) giving the configured unloaded 4-hop RTT.

    The whole gap between the target RTT and pure serialization is assigned to
    propagation, split evenly over the eight link traversals.
    """
    target = int(round(config.base_rtt * NS_PER_S))
    ser = unloaded_rtt_ns(config.downlink_bps, config.uplink_bps, 0)
    if ser > target:
        raise TopologyError(
            f"serialization alone ({ser} ns) exceeds the target RTT ({target} ns)")
    return (target - ser) // 8


@njit(cache=True, inline="always")
def next_port(port, dst, n_hosts, n_leaves, n_spines, hosts_per_leaf, spine_choice):
    """Port a packet takes after crossing ``port``; -1 when it reached its host.

    ``spine_choice`` is only read when the packet sits at its source leaf and
    must cross the spine.
    """
    if port < n_hosts:
        leaf = port // hosts_per_leaf
        if dst // hosts_per_leaf == leaf:
            return n_hosts + dst
        return 2 * n_hosts + leaf * n_spines + spine_choice
    if port < 2 * n_hosts:
        return -1
    up_end = 2 * n_hosts + n_leaves * n_spines
    if port < up_end:
        s = (port - 2 * n_hosts) % n_spines
        return up_end + s * n_leaves + dst // hosts_per_leaf
    return n_hosts + dst


@dataclass
class Link:
    port_id: int
    kind: int
    src_node: tuple[str, int]
    dst_node: tuple[str, int]
    capacity_bps: float
    prop_delay_ns: int
    egress_port: object = None


@dataclass
class Topology:
    config: TopologyConfig
    prop_delay_ns: int
    links: list[Link] = field(default_factory=list)

    @property
    def n_hosts(self) -> int:
        return self.config.leaf_count * self.config.hosts_per_leaf

    @property
    def n_ports(self) -> int:
        return len(self.links)

    def leaf_of(self, host: int) -> int:
        return host // self.config.hosts_per_leaf

    def uplinks(self, leaf: int) -> list[Link]:
        return [l for l in self.links if l.kind == PORT_LEAF_UP and l.src_node == ("leaf", leaf)]

    def downlinks(self, leaf: int) -> list[Link]:
        return [l for l in self.links if l.kind == PORT_LEAF_DOWN and l.src_node == ("leaf", leaf)]

    def switch_port_ids(self) -> np.ndarray:
        return np.arange(self.n_hosts, self.n_ports)

    def port_label(self, port_id: int) -> tuple[str, int]:
        """(switch name, local port number) for trajectory output."""
        H, S, L = self.n_hosts, self.config.spine_count, self.config.leaf_count
        hpl = self.config.hosts_per_leaf
        if port_id < H:
            return f"host{port_id}", 0
        if port_id < 2 * H:
            h = port_id - H
            return f"leaf{h // hpl}", h % hpl
        if port_id < 2 * H + L * S:
            l, s = divmod(port_id - 2 * H, S)
            return f"leaf{l}", hpl + s
        s, l = divmod(port_id - 2 * H - L * S, L)
        return f"spine{s}", l

    def route_next_hop(self, pkt: Packet, at_node: tuple[str, int], rng) -> Link:
        """Egress link for ``pkt`` at ``at_node`` (``("host"|"leaf"|"spine", index)``)."""
        kind, idx = at_node
        H, S, L = self.n_hosts, self.config.spine_count, self.config.leaf_count
        dst = pkt.dst_host
        if not 0 <= dst < H:
            raise TopologyError(f"unreachable destination host {dst}")
        if kind == "host":
            return self.links[idx]
        if kind == "leaf":
            if self.leaf_of(dst) == idx:
                return self.links[H + dst]
            return self.links[2 * H + idx * S + int(rng.integers(S))]
        if kind == "spine":
            return self.links[2 * H + L * S + idx * L + self.leaf_of(dst)]
        raise TopologyError(f"unknown node kind {kind!r}")

    def path(self, pkt: Packet, rng) -> list[Link]:
        """Links crossed from ``pkt.src_host`` to ``pkt.dst_host``."""
        hops, node = [], ("host", pkt.src_host)
        while node != ("host", pkt.dst_host):
            link = self.route_next_hop(pkt, node, rng)
            hops.append(link)
            node = link.dst_node
        return hops


def build(config: TopologyConfig, thresholds=None, ecn_k_bytes=(None, None)) -> Topology:
    """Construct links and one scheduler per switch port.

    ``thresholds`` seeds every switch port's demotion thresholds (default: one
    MSS apart); ``ecn_k_bytes`` is ``(access, fabric)`` marking thresholds.
    """
    from .mlfq import PortScheduler

    config.validate()
    k = config.queues_per_port
    if thresholds is None:
        thresholds = [MSS * (i + 1) for i in range(k - 1)]
    prop = (calibrate_rtt(config) if config.per_link_prop_delay is None
            else int(round(config.per_link_prop_delay * NS_PER_S)))
    L, S, hpl = config.leaf_count, config.spine_count, config.hosts_per_leaf
    H = L * hpl
    topo = Topology(config, prop)

    def add(kind, src, dst, rate, switch, k_bytes):
        sched = PortScheduler(k, thresholds, ecn_k_bytes=k_bytes) if switch else None
        topo.links.append(Link(len(topo.links), kind, src, dst, rate, prop, sched))

    for h in range(H):
        add(PORT_HOST_NIC, ("host", h), ("leaf", h // hpl), config.downlink_bps, False, ecn_k_bytes[0])
    for h in range(H):
        add(PORT_LEAF_DOWN, ("leaf", h // hpl), ("host", h), config.downlink_bps, True, ecn_k_bytes[0])
    for l in range(L):
        for s in range(S):
            add(PORT_LEAF_UP, ("leaf", l), ("spine", s), config.uplink_bps, True, ecn_k_bytes[1])
    for s in range(S):
        for l in range(L):
            add(PORT_SPINE_DOWN, ("spine", s), ("leaf", l), config.uplink_bps, True, ecn_k_bytes[1])
    return topo

