"""Discrete-event core: integer-nanosecond clock and a stable 4-ary heap.

The heap kernels operate on one ``(capacity, 4)`` int64 array whose rows are
``(time, seq, kind | b << 8, a)``, so the compiled packet engine and the
Python :class:`EventQueue` share one implementation. Ordering is lexicographic on ``(time, seq)``; ``seq`` is a
per-run insertion counter, which makes equal-time delivery FIFO.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit

NS_PER_S = 1_000_000_000


class EventKind(IntEnum):
    FLOW_ARRIVAL = 0
    PACKET_ARRIVAL = 1
    PACKET_DEPARTURE = 2
    TRANSPORT_TIMEOUT = 3
    ADAPT_TICK = 4
    STATS_TICK = 5


# numba sees plain ints
EV_FLOW_ARRIVAL = 0
EV_PACKET_ARRIVAL = 1
EV_PACKET_DEPARTURE = 2
EV_TIMEOUT = 3
EV_ADAPT_TICK = 4
EV_STATS_TICK = 5


class SchedulingError(ValueError):
    """An event was scheduled before the current simulation time."""


def seconds_to_ns(t: float) -> int:
    return int(round(t * NS_PER_S))


def ns_to_seconds(t: int) -> float:
    return t / NS_PER_S


@njit(cache=True, inline="always")
def _before(t1, s1, t2, s2):
    return t1 < t2 or (t1 == t2 and s1 < s2)


@njit(cache=True, inline="always")
def heap_push(h, n, t, s, k, a, b):
    """Sift a new event up from slot ``n``; returns the new heap length.

    Capacity is the caller's concern (``n < len(h)``).
    """
    i = n
    while i > 0:
        p = (i - 1) >> 2
        if _before(h[p, 0], h[p, 1], t, s):
            break
        h[i, 0] = h[p, 0]
        h[i, 1] = h[p, 1]
        h[i, 2] = h[p, 2]
        h[i, 3] = h[p, 3]
        i = p
    h[i, 0] = t
    h[i, 1] = s
    h[i, 2] = k | (b << 8)
    h[i, 3] = a
    return n + 1


@njit(cache=True, inline="always")
def heap_pop(h, n):
    """Remove the minimum; returns ``(n, t, seq, kind, a, b)``. Requires n > 0."""
    t0 = h[0, 0]
    s0 = h[0, 1]
    kb0 = h[0, 2]
    a0 = h[0, 3]
    n -= 1
    t = h[n, 0]
    s = h[n, 1]
    kb = h[n, 2]
    a = h[n, 3]
    i = 0
    while True:
        c = 4 * i + 1
        if c >= n:
            break
        # smallest of up to four children
        m = c
        last = min(c + 4, n)
        for j in range(c + 1, last):
            if _before(h[j, 0], h[j, 1], h[m, 0], h[m, 1]):
                m = j
        if _before(t, s, h[m, 0], h[m, 1]):
            break
        h[i, 0] = h[m, 0]
        h[i, 1] = h[m, 1]
        h[i, 2] = h[m, 2]
        h[i, 3] = h[m, 3]
        i = m
    h[i, 0] = t
    h[i, 1] = s
    h[i, 2] = kb
    h[i, 3] = a
    return n, t0, s0, kb0 & 255, a0, kb0 >> 8


def new_heap(capacity: int):
    return np.empty((capacity, 4), dtype=np.int64)


def grow_heap(heap, n: int):
    bigger = new_heap(max(16, 2 * len(heap)))
    bigger[:n] = heap[:n]
    return bigger


@dataclass(frozen=True)
class Event:
    fire_at: int
    seq: int
    kind: EventKind
    a: int = 0
    b: int = 0


@dataclass
class EventHandle:
    seq: int
    fire_at: int
    cancelled: bool = False


class EventQueue:
    """Time-ordered event queue with tombstone cancellation.

    Times are integer nanoseconds. ``run_until`` dispatches every event with
    ``fire_at <= t_end`` to ``handler(event)`` and leaves the clock at
    ``t_end``; handlers may schedule further events.
    """

    def __init__(self, capacity: int = 64):
        self._heap = new_heap(capacity)
        self._n = 0
        self._seq = 0
        self._tombstones: set[int] = set()
        self.now = 0
        self.trace: list[tuple[int, int, int, int, int]] | None = None

    def __len__(self):
        return self._n - len(self._tombstones)

    def schedule(self, fire_at: int, kind: EventKind | int, a: int = 0, b: int = 0) -> EventHandle:
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SchedulingError(f"event at t={fire_at}ns is before now={self.now}ns")
        if self._n == len(self._heap):
            self._heap = grow_heap(self._heap, self._n)
        seq = self._seq
        self._seq += 1
        self._n = heap_push(self._heap, self._n, fire_at, seq, int(kind), int(a), int(b))
        return EventHandle(seq, fire_at)

    def cancel(self, handle: EventHandle) -> None:
        if not handle.cancelled:
            handle.cancelled = True
            self._tombstones.add(handle.seq)

    def peek_time(self) -> int | None:
        while self._n and int(self._heap[0, 1]) in self._tombstones:
            self._pop_raw()
        return int(self._heap[0, 0]) if self._n else None

    def _pop_raw(self) -> Event:
        self._n, t, s, k, a, b = heap_pop(self._heap, self._n)
        self._tombstones.discard(s)
        return Event(int(t), int(s), EventKind(k), int(a), int(b))

    def step(self) -> Event | None:
        """Pop the next live event and advance the clock to it."""
        if self.peek_time() is None:
            return None
        ev = self._pop_raw()
        self.now = ev.fire_at
        if self.trace is not None:
            self.trace.append((ev.fire_at, ev.seq, int(ev.kind), ev.a, ev.b))
        return ev

    def run_until(self, t_end: int, handler=None) -> int:
        """Process events up to and including ``t_end``; returns the count."""
        processed = 0
        while True:
            nxt = self.peek_time()
            if nxt is None or nxt > t_end:
                break
            ev = self.step()
            processed += 1
            if handler is not None:
                handler(ev)
        self.now = max(self.now, int(t_end))
        return processed
