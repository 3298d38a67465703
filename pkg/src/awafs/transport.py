"""Simplified DCTCP sender/receiver state.

Per-flow state is a row of two tables: ``fi`` (int64 columns ``F_*``) and
``ff`` (float64 columns ``FF_*``). Loss recovery is timeout-only go-back-N;
duplicate and stale ACKs are ignored. The packet that carries a flow's final
byte is flagged on its first transmission so switches can learn the flow size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .simcore import seconds_to_ns
from .topology import ACK_BYTES, DATA_WIRE_BYTES, HEADER_BYTES, MSS, Packet

F_SIZE = 0
F_START = 1
F_SND_UNA = 2
F_SND_NXT = 3
F_WIN_END = 4
F_WIN_ACKED = 5
F_WIN_MARKED = 6
F_RTO = 7
F_TIMER_DEADLINE = 8
F_TIMER_PENDING = 9
F_TIMEOUTS = 10
F_DONE_AT = 11
F_END_SENT = 12
F_RCV_NXT = 13
F_SEG_BASE = 14
F_MAX_QUEUE = 15
F_PKTS_SENT = 16
F_PKTS_RCVD = 17
N_INT_FIELDS = 18

FF_CWND = 0
FF_ALPHA = 1
N_FLOAT_FIELDS = 2


@dataclass(frozen=True)
class FlowSpec:
    flow_id: int
    src_host: int
    dst_host: int
    size: int
    start_time: int  # ns

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"flow {self.flow_id}: size must be >= 1 byte")
        if self.src_host == self.dst_host:
            raise ValueError(f"flow {self.flow_id}: src and dst must differ")
        if self.start_time < 0:
            raise ValueError(f"flow {self.flow_id}: negative start time")


@dataclass
class TransportParams:
    mss: int = MSS
    g: float = 1.0 / 16
    # marking threshold K at ecn_k_ref_bps; other port rates scale linearly
    ecn_k_packets: int = 65
    ecn_k_ref_bps: float = 10e9
    init_cwnd: float = 10.0
    rto_min: float = 5e-3
    rto_max: float = 0.2
    rto_rtt_factor: float = 3.0

    def rto_init_ns(self, base_rtt: float) -> int:
        return seconds_to_ns(max(self.rto_min, self.rto_rtt_factor * base_rtt))

    @property
    def rto_max_ns(self) -> int:
        return seconds_to_ns(self.rto_max)

    def ecn_k_bytes(self, rate_bps: float) -> int:
        return int(round(self.ecn_k_packets * DATA_WIRE_BYTES * rate_bps / self.ecn_k_ref_bps))

    def validate(self) -> None:
        if not 0 < self.g <= 1:
            raise ValueError(f"g must lie in (0, 1], got {self.g}")
        if self.init_cwnd < 1:
            raise ValueError("init_cwnd must be >= 1")
        if self.rto_min <= 0 or self.rto_max < self.rto_min:
            raise ValueError("need 0 < rto_min <= rto_max")
        if self.ecn_k_packets < 0 or self.ecn_k_ref_bps <= 0:
            raise ValueError("invalid ECN marking threshold")


def new_flow_tables(n: int):
    fi = np.zeros((n, N_INT_FIELDS), dtype=np.int64)
    fi[:, F_TIMER_DEADLINE] = -1
    fi[:, F_DONE_AT] = -1
    ff = np.zeros((n, N_FLOAT_FIELDS), dtype=np.float64)
    return fi, ff


@njit(cache=True, inline="always")
def flow_init(fi, ff, f, size, start, init_cwnd, rto_init):
    fi[f, F_SIZE] = size
    fi[f, F_START] = start
    fi[f, F_SND_UNA] = 0
    fi[f, F_SND_NXT] = 0
    fi[f, F_WIN_END] = 0
    fi[f, F_WIN_ACKED] = 0
    fi[f, F_WIN_MARKED] = 0
    fi[f, F_RTO] = rto_init
    fi[f, F_TIMER_DEADLINE] = -1
    fi[f, F_TIMEOUTS] = 0
    fi[f, F_DONE_AT] = -1
    fi[f, F_END_SENT] = 0
    ff[f, FF_CWND] = init_cwnd
    ff[f, FF_ALPHA] = 0.0


@njit(cache=True, inline="always")
def take_segment(fi, ff, f, mss):
    """Claim the next segment the window allows.

    Returns ``(seq, length, end_mark)``; ``length == 0`` means nothing to send.
    """
    size = fi[f, F_SIZE]
    una = fi[f, F_SND_UNA]
    nxt = fi[f, F_SND_NXT]
    if fi[f, F_DONE_AT] >= 0 or nxt >= size:
        return nxt, 0, False
    if nxt - una >= int(ff[f, FF_CWND]) * mss:
        return nxt, 0, False
    length = min(mss, size - nxt)
    fi[f, F_SND_NXT] = nxt + length
    end = False
    if nxt + length == size and fi[f, F_END_SENT] == 0:
        fi[f, F_END_SENT] = 1
        end = True
    return nxt, length, end


@njit(cache=True, inline="always")
def dctcp_on_ack(fi, ff, f, ack, ece, g, mss, rto_init):
    """Process a cumulative ACK; returns newly acknowledged bytes (0 if stale).

    Once per window (when ``snd_una`` passes the window end) the ECN fraction
    F updates ``alpha <- (1-g) alpha + g F`` and a window with F > 0 cuts
    ``cwnd <- max(1, cwnd (1 - alpha/2))``. Unmarked ACKs grow cwnd by about
    one packet per window.
    """
    una = fi[f, F_SND_UNA]
    if ack <= una or fi[f, F_DONE_AT] >= 0:
        return 0
    newly = ack - una
    fi[f, F_SND_UNA] = ack
    if fi[f, F_SND_NXT] < ack:
        fi[f, F_SND_NXT] = ack
    pkts = (newly + mss - 1) // mss
    fi[f, F_WIN_ACKED] += pkts
    cwnd = ff[f, FF_CWND]
    if ece:
        fi[f, F_WIN_MARKED] += pkts
    else:
        cwnd += pkts / cwnd
    if ack >= fi[f, F_WIN_END]:
        acked = fi[f, F_WIN_ACKED]
        marked = fi[f, F_WIN_MARKED]
        frac = marked / acked if acked > 0 else 0.0
        alpha = (1.0 - g) * ff[f, FF_ALPHA] + g * frac
        if alpha > 1.0:
            alpha = 1.0
        ff[f, FF_ALPHA] = alpha
        if marked > 0:
            cwnd = cwnd * (1.0 - alpha / 2.0)
        fi[f, F_WIN_ACKED] = 0
        fi[f, F_WIN_MARKED] = 0
        fi[f, F_WIN_END] = fi[f, F_SND_NXT]
    if cwnd < 1.0:
        cwnd = 1.0
    ff[f, FF_CWND] = cwnd
    fi[f, F_RTO] = rto_init
    return newly


@njit(cache=True, inline="always")
def dctcp_on_timeout(fi, ff, f, rto_max):
    """RTO expiry: count it, collapse the window and rewind to ``snd_una``.

    Returns False (and changes nothing) when nothing is outstanding.
    """
    if fi[f, F_DONE_AT] >= 0 or fi[f, F_SND_NXT] <= fi[f, F_SND_UNA]:
        return False
    fi[f, F_TIMEOUTS] += 1
    ff[f, FF_CWND] = 1.0
    fi[f, F_SND_NXT] = fi[f, F_SND_UNA]
    fi[f, F_WIN_ACKED] = 0
    fi[f, F_WIN_MARKED] = 0
    fi[f, F_WIN_END] = fi[f, F_SND_UNA]
    rto = 2 * fi[f, F_RTO]
    fi[f, F_RTO] = rto if rto < rto_max else rto_max
    return True


class DctcpFlow:
    """One flow's transport state, for driving the kernels directly."""

    def __init__(self, size, src=0, dst=1, flow_id=0, start=0, params: TransportParams | None = None,
                 base_rtt=85.2e-6):
        if size < 1:
            raise ValueError("flow size must be >= 1 byte")
        if src == dst:
            raise ValueError("src and dst must differ")
        self.params = params or TransportParams()
        self.flow_id, self.src, self.dst = flow_id, src, dst
        self.fi, self.ff = new_flow_tables(1)
        self._rto_init = self.params.rto_init_ns(base_rtt)
        flow_init(self.fi, self.ff, 0, size, start, self.params.init_cwnd, self._rto_init)

    size = property(lambda self: int(self.fi[0, F_SIZE]))
    bytes_acked = property(lambda self: int(self.fi[0, F_SND_UNA]))
    snd_nxt = property(lambda self: int(self.fi[0, F_SND_NXT]))
    cwnd = property(lambda self: float(self.ff[0, FF_CWND]))
    alpha = property(lambda self: float(self.ff[0, FF_ALPHA]))
    rto = property(lambda self: int(self.fi[0, F_RTO]))
    timeout_count = property(lambda self: int(self.fi[0, F_TIMEOUTS]))

    @property
    def completed(self) -> bool:
        return self.bytes_acked >= self.size

    def set_cwnd(self, cwnd: float) -> None:
        self.ff[0, FF_CWND] = cwnd

    def on_send_opportunity(self, now: int = 0) -> list[Packet]:
        out = []
        while True:
            seq, length, end = take_segment(self.fi, self.ff, 0, self.params.mss)
            if length == 0:
                return out
            out.append(Packet(self.flow_id, self.src, self.dst, length + HEADER_BYTES, payload=length,
                              seq_no=int(seq), flow_end_mark=bool(end),
                              final_size=self.size if end else 0))

    def ack_for(self, data: Packet, cum_ack: int) -> Packet:
        return Packet(self.flow_id, data.dst_host, data.src_host, ACK_BYTES, seq_no=cum_ack,
                      ecn_ce=data.ecn_ce, is_ack=True)

    def on_ack(self, ack: int, ece: bool = False) -> int:
        return int(dctcp_on_ack(self.fi, self.ff, 0, ack, ece, self.params.g, self.params.mss,
                                self._rto_init))

    def on_timeout(self, now: int = 0) -> bool:
        return bool(dctcp_on_timeout(self.fi, self.ff, 0, self.params.rto_max_ns))
