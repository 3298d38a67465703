"""Per-port multi-level feedback queue.

Queue indices are 1-based at the public surface (``Q1`` is the highest
priority). Packet queues are intrusive singly-linked lists over integer packet
ids: ``head[slot]``, ``tail[slot]`` and ``nxt[pkt]`` with ``slot = port*k + q``
(0-based ``q``). The same kernels back both :class:`PortScheduler` and the
compiled engine.
"""

from __future__ import annotations

import logging

import numpy as np
from numba import njit

from .adapt import CompletedFlowWindow

log = logging.getLogger(__name__)


@njit(cache=True, inline="always")
def select_queue(bytes_sent, thresholds):
    """1-based queue for a flow that has forwarded ``bytes_sent`` bytes.

    A flow moves past ``Thr_i`` only when it has sent strictly more than it.
    """
    q = 1
    for thr in thresholds:
        if bytes_sent > thr:
            q += 1
        else:
            break
    return q


@njit(cache=True)
def thresholds_valid(thresholds, expected_len):
    if len(thresholds) != expected_len:
        return False
    prev = 0
    for thr in thresholds:
        if thr <= 0 or thr < prev:
            return False
        prev = thr
    return True


@njit(cache=True, inline="always")
def ecn_should_mark(backlog_bytes, k_bytes):
    # strictly above K marks; exactly K does not
    return backlog_bytes > k_bytes


@njit(cache=True, inline="always")
def queue_push(head, tail, nxt, slot, pkt):
    nxt[pkt] = -1
    if tail[slot] < 0:
        head[slot] = pkt
    else:
        nxt[tail[slot]] = pkt
    tail[slot] = pkt


@njit(cache=True, inline="always")
def queue_pop_strict(head, tail, nxt, base, k):
    """Pop the head of the lowest-index nonempty queue among ``base..base+k-1``.

    Returns ``(pkt, q)`` with 0-based ``q``, or ``(-1, -1)`` if all are empty.
    """
    for q in range(k):
        slot = base + q
        pkt = head[slot]
        if pkt >= 0:
            head[slot] = nxt[pkt]
            if head[slot] < 0:
                tail[slot] = -1
            return pkt, q
    return -1, -1


class ThresholdError(ValueError):
    pass


class PortScheduler:
    """k strict-priority FIFO queues fed by byte-count demotion.

    ``flow_bytes`` counts payload bytes forwarded per flow at this port. When
    ``sense_completions`` is set, flow-end marks are recorded in ``window`` and
    the flow's counter is evicted.
    """

    def __init__(self, k, thresholds, ecn_k_bytes=None, sense_completions=False,
                 capacity=256):
        if k < 2:
            raise ThresholdError(f"k must be >= 2, got {k}")
        self.k = k
        self.thresholds = np.zeros(k - 1, dtype=np.int64)
        self.rejected_updates = 0
        self.set_thresholds(thresholds)
        if self.rejected_updates:
            raise ThresholdError(f"invalid initial thresholds {list(thresholds)}")
        self.ecn_k_bytes = ecn_k_bytes
        self.sense_completions = sense_completions
        self.flow_bytes: dict[int, int] = {}
        self.window = CompletedFlowWindow()
        self.backlog_bytes = 0
        self._head = np.full(k, -1, dtype=np.int64)
        self._tail = np.full(k, -1, dtype=np.int64)
        self._nxt = np.full(capacity, -1, dtype=np.int64)
        self._packets: dict[int, object] = {}
        self._free: list[int] = list(range(capacity - 1, -1, -1))

    def __len__(self):
        return len(self._packets)

    def set_thresholds(self, new_thresholds) -> bool:
        arr = np.asarray(new_thresholds, dtype=np.int64)
        if arr.ndim != 1 or not thresholds_valid(arr, self.k - 1):
            self.rejected_updates += 1
            log.warning("rejected threshold update %s", list(np.atleast_1d(arr)))
            return False
        self.thresholds = arr.copy()
        return True

    def select_queue(self, bytes_sent: int) -> int:
        return int(select_queue(bytes_sent, self.thresholds))

    def enqueue(self, pkt, now: int = 0) -> int:
        if pkt.is_ack:
            q = 1
        else:
            sent = self.flow_bytes.get(pkt.flow_id, 0) + pkt.payload
            self.flow_bytes[pkt.flow_id] = sent
            q = self.select_queue(sent)
            if self.ecn_k_bytes is not None and ecn_should_mark(self.backlog_bytes, self.ecn_k_bytes):
                pkt.ecn_ce = True
            if pkt.flow_end_mark and self.sense_completions:
                self.window.record(now, pkt.final_size)
                self.evict_flow(pkt.flow_id)
        pkt.priority_tag = q
        if not self._free:
            self._grow()
        pid = self._free.pop()
        self._packets[pid] = pkt
        queue_push(self._head, self._tail, self._nxt, q - 1, pid)
        self.backlog_bytes += pkt.size
        return q

    def dequeue(self):
        pid, _ = queue_pop_strict(self._head, self._tail, self._nxt, 0, self.k)
        if pid < 0:
            return None
        pkt = self._packets.pop(pid)
        self._free.append(pid)
        self.backlog_bytes -= pkt.size
        return pkt

    def queue_lengths(self) -> list[int]:
        lengths = []
        for q in range(self.k):
            n, pid = 0, self._head[q]
            while pid >= 0:
                n += 1
                pid = self._nxt[pid]
            lengths.append(n)
        return lengths

    def evict_flow(self, flow_id) -> None:
        self.flow_bytes.pop(flow_id, None)

    def _grow(self):
        old = len(self._nxt)
        self._nxt = np.concatenate([self._nxt, np.full(old, -1, dtype=np.int64)])
        self._free.extend(range(2 * old - 1, old - 1, -1))
