"""Compiled packet-level engine.

Everything on the per-packet path lives in one ``@njit`` event loop over flat
arrays, compiled without reference counting. Helper kernels mutate a small
int64 status vector ``st`` (heap length, sequence counter, free-list head,
counters) instead of returning tuples.

Packet pool fields are parallel arrays indexed by packet id; free packets are
chained through ``p_next``, which doubles as the queue link while a packet is
enqueued. Flow byte counters are kept per (flow, reachable switch port):
column ``s`` is the source-leaf uplink to spine ``s``, ``S + s`` is spine
``s``'s downlink to the destination leaf and ``2S`` is the destination's leaf
downlink.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .adapt import ADAPT_INSUFFICIENT, ADAPT_REJECTED, ADAPT_UPDATED, adapt_window, win_append
from .mlfq import ecn_should_mark, queue_pop_strict, queue_push
from .simcore import (EV_ADAPT_TICK, EV_FLOW_ARRIVAL, EV_PACKET_ARRIVAL, EV_PACKET_DEPARTURE,
                      EV_TIMEOUT, heap_pop, heap_push)
from .topology import next_port
from .transport import (F_DONE_AT, F_MAX_QUEUE, F_PKTS_RCVD, F_PKTS_SENT, F_RCV_NXT, F_RTO,
                        F_SEG_BASE, F_SIZE, F_SND_NXT, F_SND_UNA, F_TIMER_DEADLINE,
                        F_TIMER_PENDING, F_WIN_END, FF_CWND, N_FLOAT_FIELDS, N_INT_FIELDS,
                        dctcp_on_ack, dctcp_on_timeout, flow_init, take_segment)

ST_HEAP_N = 0
ST_SEQ = 1
ST_FREE = 2
ST_NFREE = 3
ST_DATA_SENT = 4
ST_DATA_RCVD = 5
ST_DROPS = 6
ST_EVENTS = 7
ST_DIGEST = 8
ST_ADAPT_UPDATED = 9
ST_ADAPT_INSUFFICIENT = 10
ST_ADAPT_REJECTED = 11
ST_HEAP_MAX = 12
ST_ACTIVE = 13
ST_DONE = 14
ST_ACKS_SENT = 15
ST_ACKS_RCVD = 16
ST_NOW = 17
ST_MAX_CWND = 18
ST_TRACE_N = 19
ST_TRAJ_N = 20
ST_MAX_BACKLOG = 21
ST_STARTED = 22
N_ST = 23

RUN_DONE = 0
RUN_GROW_POOL = 1
RUN_GROW_TRAJ = 2
RUN_GROW_EQ = 3
RUN_ADAPT = 4

PK_ACK = 1
PK_CE = 2
PK_END = 4
PK_ECE = 8

# column layout of the integer-config vector passed to simulate()
C_HOSTS = 0
C_LEAVES = 1
C_SPINES = 2
C_HPL = 3
C_K = 4
C_PROP = 5
C_BUFFER = 6
C_MSS = 7
C_HDR = 8
C_ACK = 9
C_RTO_INIT = 10
C_RTO_MAX = 11
C_AWAFS = 12
C_W_UPDATE = 13
C_T_SCHED = 14
C_MIN_SAMPLES = 15
C_T_END = 16
C_SEED = 17
C_TRACE_CAP = 18
N_CFG = 19


@njit(cache=True, inline="always")
def _push(h, st, t, kind, a, b):
    st[ST_HEAP_N] = heap_push(h, st[ST_HEAP_N], t, st[ST_SEQ], kind, a, b)
    st[ST_SEQ] += 1
    if st[ST_HEAP_N] > st[ST_HEAP_MAX]:
        st[ST_HEAP_MAX] = st[ST_HEAP_N]


@njit(cache=True, inline="always")
def _serialization(wire, rate):
    return (wire * 8000000000 + rate - 1) // rate


@njit(cache=True, inline="always")
def _start_tx(port, now, cfg, port_rate, busy_until, pending, backlog, qhead, qtail,
              p_next, p_wire, p_port, h, st):
    k = cfg[C_K]
    kq = k if port >= cfg[C_HOSTS] else 1
    pkt, q = queue_pop_strict(qhead, qtail, p_next, port * k, kq)
    if pkt < 0:
        return
    wire = p_wire[pkt]
    backlog[port] -= wire
    done = now + _serialization(wire, port_rate[port])
    busy_until[port] = done
    p_port[pkt] = port
    _push(h, st, done + cfg[C_PROP], EV_PACKET_ARRIVAL, pkt, 0)
    if backlog[port] > 0:
        _push(h, st, done, EV_PACKET_DEPARTURE, port, 0)
        pending[port] = 1


@njit(cache=True, inline="always")
def _free_packet(pkt, p_next, st):
    p_next[pkt] = st[ST_FREE]
    st[ST_FREE] = pkt
    st[ST_NFREE] += 1


@njit(cache=True, inline="always")
def _flow_port_column(port, cfg):
    H = cfg[C_HOSTS]
    S = cfg[C_SPINES]
    up_end = 2 * H + cfg[C_LEAVES] * S
    if port < 2 * H:
        return 2 * S
    if port < up_end:
        return (port - 2 * H) % S
    return S + (port - up_end) // cfg[C_LEAVES]


@njit(cache=True, inline="always")
def _column_port(col, f_src, f_dst, cfg):
    H = cfg[C_HOSTS]
    S = cfg[C_SPINES]
    L = cfg[C_LEAVES]
    hpl = cfg[C_HPL]
    if col < S:
        return 2 * H + (f_src // hpl) * S + col
    if col < 2 * S:
        return 2 * H + L * S + (col - S) * L + f_dst // hpl
    return H + f_dst


@njit(cache=True, inline="always")
def _arm_timer(f, now, fi, h, st):
    deadline = now + fi[f, F_RTO]
    fi[f, F_TIMER_DEADLINE] = deadline
    if fi[f, F_TIMER_PENDING] == 0:
        fi[f, F_TIMER_PENDING] = 1
        _push(h, st, deadline, EV_TIMEOUT, f, 0)


@njit(cache=True)
def _adapt_all(now, cfg, ref_pcts, thr, st, w_ts, w_size, w_next, wfree, whead, wtail, wcount,
               scratch, traj_t, traj_port, traj_thr, traj_count):
    """One adapt tick over every switch port, logging the trajectory."""
    for port in range(cfg[C_HOSTS], len(whead)):
        status = adapt_window(w_ts, w_size, w_next, whead, wtail, wcount, wfree, port, now,
                              cfg[C_W_UPDATE], ref_pcts, cfg[C_MIN_SAMPLES], thr[port], scratch)
        if status == ADAPT_UPDATED:
            st[ST_ADAPT_UPDATED] += 1
        elif status == ADAPT_INSUFFICIENT:
            st[ST_ADAPT_INSUFFICIENT] += 1
        elif status == ADAPT_REJECTED:
            st[ST_ADAPT_REJECTED] += 1
        i = st[ST_TRAJ_N]
        traj_t[i] = now
        traj_port[i] = port
        traj_thr[i, :] = thr[port]
        traj_count[i] = wcount[port]
        st[ST_TRAJ_N] = i + 1


@njit(cache=True, _nrt=False)
def _run(cfg, gain, init_cwnd, ref_pcts, port_rate, port_ecn_k, thr, f_src, f_dst, f_size,
         f_start, st, h, p_flow, p_seq, p_len, p_wire, p_flags, p_next, p_port,
         p_dst, busy_until, pending, backlog, nflows, qhead, qtail, fi, ff, fb, rcv, w_ts, w_size,
         w_next, wfree, whead, wtail, wcount, scratch, traj_t, traj_port, traj_thr, traj_count,
         trace, eq_port, eq_pkt):
    """Event loop over fixed-size arrays; returns a ``RUN_*`` code.

    No array is reassigned in here: numba refcounts loop-carried array
    variables on every iteration, which used to dominate the run time.
    """
    H = cfg[C_HOSTS]
    S = cfg[C_SPINES]
    k = cfg[C_K]
    mss = cfg[C_MSS]
    n_ports = len(port_rate)
    nf = len(f_size)
    n_sw = n_ports - H
    awafs = cfg[C_AWAFS] != 0
    t_end = cfg[C_T_END]
    rto_init = cfg[C_RTO_INIT]
    rto_max = cfg[C_RTO_MAX]
    trace_cap = cfg[C_TRACE_CAP]
    now = st[ST_NOW]

    while st[ST_HEAP_N] > 0:
        if t_end >= 0 and h[0, 0] > t_end:
            break
        # growth happens in the caller, which then resumes this loop
        margin = 2 * st[ST_MAX_CWND] + 2 * int(init_cwnd) + 64
        if st[ST_NFREE] < margin:
            return RUN_GROW_POOL
        if len(eq_port) < margin:
            return RUN_GROW_EQ
        if awafs and st[ST_TRAJ_N] + n_sw > len(traj_t):
            return RUN_GROW_TRAJ

        n, t, s, kind, a, b = heap_pop(h, st[ST_HEAP_N])
        st[ST_HEAP_N] = n
        now = t
        st[ST_NOW] = now
        st[ST_EVENTS] += 1
        st[ST_DIGEST] = (st[ST_DIGEST] ^ (t * 8 + kind) ^ (a << 40)) * 1099511628211
        if st[ST_TRACE_N] < trace_cap:
            i = st[ST_TRACE_N]
            trace[i, 0] = t
            trace[i, 1] = s
            trace[i, 2] = kind
            trace[i, 3] = a
            st[ST_TRACE_N] = i + 1

        send_f = -1
        nq = 0

        if kind == EV_PACKET_ARRIVAL:
            pkt = a
            port = p_port[pkt]
            dst = p_dst[pkt]
            spine = 0
            if port < H and dst // cfg[C_HPL] != port // cfg[C_HPL]:
                spine = np.random.randint(0, S)
            nxt = next_port(port, dst, H, cfg[C_LEAVES], S, cfg[C_HPL], spine)
            if nxt >= 0:
                eq_port[0] = nxt
                eq_pkt[0] = pkt
                nq = 1
            else:
                f = p_flow[pkt]
                flags = p_flags[pkt]
                if flags & PK_ACK:
                    st[ST_ACKS_RCVD] += 1
                    _free_packet(pkt, p_next, st)
                    if fi[f, F_DONE_AT] < 0:
                        newly = dctcp_on_ack(fi, ff, f, p_seq[pkt], (flags & PK_ECE) != 0,
                                             gain, mss, rto_init)
                        if newly > 0:
                            cw = int(ff[f, FF_CWND])
                            if cw > st[ST_MAX_CWND]:
                                st[ST_MAX_CWND] = cw
                            if fi[f, F_SND_UNA] >= f_size[f]:
                                fi[f, F_DONE_AT] = now
                                fi[f, F_TIMER_DEADLINE] = -1
                                st[ST_ACTIVE] -= 1
                                st[ST_DONE] += 1
                                # counters left on ports the end mark never crossed
                                for col in range(2 * S + 1):
                                    if fb[f, col] > 0:
                                        fb[f, col] = 0
                                        nflows[_column_port(col, f_src[f], f_dst[f], cfg)] -= 1
                            else:
                                _arm_timer(f, now, fi, h, st)
                                send_f = f
                else:
                    st[ST_DATA_RCVD] += 1
                    fi[f, F_PKTS_RCVD] += 1
                    base = fi[f, F_SEG_BASE]
                    nseg = (f_size[f] + mss - 1) // mss
                    idx = p_seq[pkt] // mss
                    if rcv[base + idx] == 0:
                        rcv[base + idx] = 1
                        r = fi[f, F_RCV_NXT]
                        while r < nseg and rcv[base + r] != 0:
                            r += 1
                        fi[f, F_RCV_NXT] = r
                    cum = fi[f, F_RCV_NXT] * mss
                    if cum > f_size[f]:
                        cum = f_size[f]
                    # the data packet turns into its ACK
                    p_flags[pkt] = PK_ACK | (PK_ECE if flags & PK_CE else 0)
                    p_seq[pkt] = cum
                    p_len[pkt] = 0
                    p_wire[pkt] = cfg[C_ACK]
                    p_dst[pkt] = f_src[f]
                    st[ST_ACKS_SENT] += 1
                    eq_port[0] = dst
                    eq_pkt[0] = pkt
                    nq = 1

        elif kind == EV_PACKET_DEPARTURE:
            pending[a] = 0
            _start_tx(a, now, cfg, port_rate, busy_until, pending, backlog, qhead, qtail,
                      p_next, p_wire, p_port, h, st)

        elif kind == EV_TIMEOUT:
            f = a
            fi[f, F_TIMER_PENDING] = 0
            deadline = fi[f, F_TIMER_DEADLINE]
            if fi[f, F_DONE_AT] < 0 and deadline >= 0:
                if now < deadline:
                    # the deadline moved since this event was scheduled
                    fi[f, F_TIMER_PENDING] = 1
                    _push(h, st, deadline, EV_TIMEOUT, f, 0)
                else:
                    fi[f, F_TIMER_DEADLINE] = -1
                    if dctcp_on_timeout(fi, ff, f, rto_max):
                        send_f = f

        elif kind == EV_FLOW_ARRIVAL:
            f = a
            flow_init(fi, ff, f, f_size[f], now, init_cwnd, rto_init)
            st[ST_ACTIVE] += 1
            st[ST_STARTED] += 1
            if f + 1 < nf:
                _push(h, st, f_start[f + 1], EV_FLOW_ARRIVAL, f + 1, 0)
            send_f = f

        elif kind == EV_ADAPT_TICK:
            # percentile work allocates, so the caller runs it
            return RUN_ADAPT

        # -- sends: everything the window allows, handed to the source NIC
        if send_f >= 0:
            f = send_f
            sent = 0
            while True:
                seq, length, end = take_segment(fi, ff, f, mss)
                if length == 0:
                    break
                pkt = st[ST_FREE]
                st[ST_FREE] = p_next[pkt]
                st[ST_NFREE] -= 1
                p_flow[pkt] = f
                p_seq[pkt] = seq
                p_len[pkt] = length
                p_wire[pkt] = length + cfg[C_HDR]
                p_flags[pkt] = PK_END if end else 0
                p_dst[pkt] = f_dst[f]
                st[ST_DATA_SENT] += 1
                fi[f, F_PKTS_SENT] += 1
                sent += 1
                eq_port[nq] = f_src[f]
                eq_pkt[nq] = pkt
                nq += 1
            if sent > 0 and fi[f, F_TIMER_DEADLINE] < 0:
                _arm_timer(f, now, fi, h, st)
            if kind == EV_FLOW_ARRIVAL:
                # first DCTCP observation window = the initial burst
                fi[f, F_WIN_END] = fi[f, F_SND_NXT]

        # -- enqueues
        for j in range(nq):
            port = eq_port[j]
            pkt = eq_pkt[j]
            wire = p_wire[pkt]
            if cfg[C_BUFFER] >= 0 and backlog[port] + wire > cfg[C_BUFFER]:
                st[ST_DROPS] += 1
                _free_packet(pkt, p_next, st)
                continue
            flags = p_flags[pkt]
            q = 0
            if (flags & PK_ACK) == 0:
                if ecn_should_mark(backlog[port], port_ecn_k[port]):
                    p_flags[pkt] = flags | PK_CE
                if port >= H:
                    f = p_flow[pkt]
                    col = _flow_port_column(port, cfg)
                    sent_bytes = fb[f, col] + p_len[pkt]
                    # a late retransmission of a finished flow leaves no counter behind
                    if fi[f, F_DONE_AT] < 0:
                        if fb[f, col] == 0:
                            nflows[port] += 1
                        fb[f, col] = sent_bytes
                    # strict '>' against the port's thresholds, as in select_queue
                    q = 0
                    while q < k - 1 and sent_bytes > thr[port, q]:
                        q += 1
                    if q + 1 > fi[f, F_MAX_QUEUE]:
                        fi[f, F_MAX_QUEUE] = q + 1
                    if flags & PK_END:
                        if awafs:
                            win_append(w_ts, w_size, w_next, whead, wtail, wcount, wfree, port,
                                       now, fi[f, F_SIZE])
                        if fb[f, col] > 0:
                            fb[f, col] = 0
                            nflows[port] -= 1
            queue_push(qhead, qtail, p_next, port * k + q, pkt)
            backlog[port] += wire
            if backlog[port] > st[ST_MAX_BACKLOG]:
                st[ST_MAX_BACKLOG] = backlog[port]
            if pending[port] == 0:
                if busy_until[port] <= now:
                    _start_tx(port, now, cfg, port_rate, busy_until, pending, backlog, qhead,
                              qtail, p_next, p_wire, p_port, h, st)
                else:
                    _push(h, st, busy_until[port], EV_PACKET_DEPARTURE, port, 0)
                    pending[port] = 1

    return RUN_DONE


@njit(cache=True)
def simulate(cfg, gain, init_cwnd, ref_pcts, port_rate, port_ecn_k, thr,
             f_src, f_dst, f_size, f_start):
    """Run one simulation; ``thr`` (ports x k-1) is updated in place.

    Returns ``(fi, ff, st, traj_t, traj_port, traj_thr, traj_count, trace, nflows)``.

    Handlers never call out with the big state arrays (numba would refcount
    every one of them per call); instead each event records at most one flow
    to send from and a list of (port, packet) enqueues, both executed by the
    shared blocks at the bottom of the loop.
    """
    H = cfg[C_HOSTS]
    S = cfg[C_SPINES]
    k = cfg[C_K]
    mss = cfg[C_MSS]
    n_ports = len(port_rate)
    nf = len(f_size)
    awafs = cfg[C_AWAFS] != 0
    t_end = cfg[C_T_END]
    rto_init = cfg[C_RTO_INIT]
    rto_max = cfg[C_RTO_MAX]
    np.random.seed(cfg[C_SEED])

    st = np.zeros(N_ST, dtype=np.int64)

    # heap bound: in-flight arrivals per port + one departure per port
    # + one timer per flow + flow arrival + adapt tick
    min_ser = _serialization(cfg[C_ACK], port_rate.max())
    per_port = cfg[C_PROP] // max(min_ser, 1) + 2
    heap_cap = n_ports * (per_port + 1) + nf + 8
    h = np.empty((heap_cap, 4), dtype=np.int64)

    cap = 1 << 14
    p_flow = np.zeros(cap, dtype=np.int64)
    p_seq = np.zeros(cap, dtype=np.int64)
    p_len = np.zeros(cap, dtype=np.int64)
    p_wire = np.zeros(cap, dtype=np.int64)
    p_flags = np.zeros(cap, dtype=np.int64)
    p_next = np.arange(1, cap + 1, dtype=np.int64)
    p_next[cap - 1] = -1
    p_port = np.zeros(cap, dtype=np.int64)
    p_dst = np.zeros(cap, dtype=np.int64)
    st[ST_FREE] = 0
    st[ST_NFREE] = cap

    busy_until = np.zeros(n_ports, dtype=np.int64)
    pending = np.zeros(n_ports, dtype=np.int64)
    backlog = np.zeros(n_ports, dtype=np.int64)
    nflows = np.zeros(n_ports, dtype=np.int64)
    qhead = np.full(n_ports * k, -1, dtype=np.int64)
    qtail = np.full(n_ports * k, -1, dtype=np.int64)

    fi = np.zeros((nf, N_INT_FIELDS), dtype=np.int64)
    ff = np.zeros((nf, N_FLOAT_FIELDS), dtype=np.float64)
    fi[:, F_TIMER_DEADLINE] = -1
    fi[:, F_DONE_AT] = -1
    fb = np.zeros((nf, 2 * S + 1), dtype=np.int64)
    nseg_total = 0
    for f in range(nf):
        fi[f, F_SEG_BASE] = nseg_total
        nseg_total += (f_size[f] + mss - 1) // mss
    rcv = np.zeros(max(nseg_total, 1), dtype=np.uint8)

    # each flow's end mark is recorded at most once per switch port on its path (<= 3)
    wcap = 3 * nf + 16 if awafs else 1
    w_ts = np.zeros(wcap, dtype=np.int64)
    w_size = np.zeros(wcap, dtype=np.int64)
    w_next = np.arange(1, wcap + 1, dtype=np.int64)
    w_next[wcap - 1] = -1
    wfree = np.zeros(1, dtype=np.int64)
    whead = np.full(n_ports, -1, dtype=np.int64)
    wtail = np.full(n_ports, -1, dtype=np.int64)
    wcount = np.zeros(n_ports, dtype=np.int64)
    scratch = np.zeros(wcap, dtype=np.int64)

    n_sw = n_ports - H
    traj_cap = 64 * n_sw if awafs else 1
    traj_t = np.zeros(traj_cap, dtype=np.int64)
    traj_port = np.zeros(traj_cap, dtype=np.int64)
    traj_thr = np.zeros((traj_cap, k - 1), dtype=np.int64)
    traj_count = np.zeros(traj_cap, dtype=np.int64)

    trace_cap = cfg[C_TRACE_CAP]
    trace = np.zeros((max(trace_cap, 1), 4), dtype=np.int64)

    eq_port = np.zeros(256, dtype=np.int64)
    eq_pkt = np.zeros(256, dtype=np.int64)

    if nf > 0:
        _push(h, st, f_start[0], EV_FLOW_ARRIVAL, 0, 0)
    if awafs:
        for port in range(H, n_ports):
            i = st[ST_TRAJ_N]
            traj_t[i] = 0
            traj_port[i] = port
            traj_thr[i, :] = thr[port]
            traj_count[i] = 0
            st[ST_TRAJ_N] = i + 1
        _push(h, st, cfg[C_T_SCHED], EV_ADAPT_TICK, 0, 0)

    while True:
        code = _run(cfg, gain, init_cwnd, ref_pcts, port_rate, port_ecn_k, thr, f_src, f_dst,
                    f_size, f_start, st, h, p_flow, p_seq, p_len, p_wire,
                    p_flags, p_next, p_port, p_dst, busy_until, pending, backlog, nflows, qhead,
                    qtail, fi, ff, fb, rcv, w_ts, w_size, w_next, wfree, whead, wtail, wcount,
                    scratch, traj_t, traj_port, traj_thr, traj_count, trace, eq_port, eq_pkt)
        if code == RUN_DONE:
            break
        if code == RUN_ADAPT:
            now = st[ST_NOW]
            _adapt_all(now, cfg, ref_pcts, thr, st, w_ts, w_size, w_next, wfree, whead, wtail,
                       wcount, scratch, traj_t, traj_port, traj_thr, traj_count)
            if st[ST_ACTIVE] > 0 or st[ST_STARTED] < nf:
                _push(h, st, now + cfg[C_T_SCHED], EV_ADAPT_TICK, 0, 0)
        elif code == RUN_GROW_POOL:
            old = len(p_flow)
            cap = 2 * old
            p_flow = np.concatenate((p_flow, np.zeros(old, dtype=np.int64)))
            p_seq = np.concatenate((p_seq, np.zeros(old, dtype=np.int64)))
            p_len = np.concatenate((p_len, np.zeros(old, dtype=np.int64)))
            p_wire = np.concatenate((p_wire, np.zeros(old, dtype=np.int64)))
            p_flags = np.concatenate((p_flags, np.zeros(old, dtype=np.int64)))
            p_port = np.concatenate((p_port, np.zeros(old, dtype=np.int64)))
            p_dst = np.concatenate((p_dst, np.zeros(old, dtype=np.int64)))
            extra = np.arange(old + 1, cap + 1, dtype=np.int64)
            extra[old - 1] = st[ST_FREE]
            p_next = np.concatenate((p_next, extra))
            st[ST_FREE] = old
            st[ST_NFREE] += old
        elif code == RUN_GROW_EQ:
            eq_port = np.zeros(2 * len(eq_port), dtype=np.int64)
            eq_pkt = np.zeros(2 * len(eq_pkt), dtype=np.int64)
        else:
            cap_t = 2 * len(traj_t) + n_sw
            traj_t = np.concatenate((traj_t, np.zeros(cap_t - len(traj_t), dtype=np.int64)))
            traj_port = np.concatenate((traj_port, np.zeros(cap_t - len(traj_port), dtype=np.int64)))
            traj_count = np.concatenate((traj_count, np.zeros(cap_t - len(traj_count), dtype=np.int64)))
            grown = np.zeros((cap_t, k - 1), dtype=np.int64)
            grown[: traj_thr.shape[0]] = traj_thr
            traj_thr = grown

    now = st[ST_NOW]
    if t_end >= 0 and now < t_end:
        now = t_end
    st[ST_NOW] = now
    m = st[ST_TRAJ_N]
    return (fi, ff, st, traj_t[:m].copy(), traj_port[:m].copy(), traj_thr[:m].copy(),
            traj_count[:m].copy(), trace[: st[ST_TRACE_N]].copy(), nflows)
