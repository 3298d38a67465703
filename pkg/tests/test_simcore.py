import numpy as np
import pytest

from awafs.simcore import (EventKind, EventQueue, SchedulingError, grow_heap, heap_pop, heap_push,
                           new_heap, ns_to_seconds, seconds_to_ns)


def drain(q):
    out = []
    while True:
        ev = q.step()
        if ev is None:
            return out
        out.append(ev)


def test_earlier_event_first():
    q = EventQueue()
    q.schedule(seconds_to_ns(5.0), EventKind.FLOW_ARRIVAL, a=5)
    q.schedule(seconds_to_ns(3.0), EventKind.FLOW_ARRIVAL, a=3)
    assert [e.a for e in drain(q)] == [3, 5]


def test_equal_times_fifo():
    q = EventQueue()
    q.schedule(seconds_to_ns(1.0), EventKind.PACKET_ARRIVAL, a=1)
    q.schedule(seconds_to_ns(1.0), EventKind.PACKET_ARRIVAL, a=2)
    assert [e.a for e in drain(q)] == [1, 2]


def test_random_times_match_sort_oracle():
    rng = np.random.default_rng(7)
    q = EventQueue(capacity=4)
    times = rng.integers(0, 1000, size=10_000)  # plenty of ties
    for i, t in enumerate(times):
        q.schedule(int(t), EventKind.PACKET_ARRIVAL, a=i)
    got = [(e.fire_at, e.seq) for e in drain(q)]
    assert got == sorted((int(t), i) for i, t in enumerate(times))


def test_interleaved_push_pop_matches_oracle():
    rng = np.random.default_rng(3)
    h = new_heap(64)
    n = 0
    live, seq, now = [], 0, 0
    for _ in range(5000):
        if n and rng.random() < 0.45:
            n, t, s, k, a, b = heap_pop(h, n)
            live.sort()
            assert (t, s) == live.pop(0)[:2]
            assert (k, a, b) == (2, s * 3, s % 7)
            now = t
        else:
            t = now + int(rng.integers(0, 50))
            if n == len(h):
                h = grow_heap(h, n)
            n = heap_push(h, n, t, seq, 2, seq * 3, seq % 7)
            live.append((t, seq))
            seq += 1


def test_past_event_rejected():
    q = EventQueue()
    q.schedule(10, EventKind.ADAPT_TICK)
    q.step()
    with pytest.raises(SchedulingError):
        q.schedule(5, EventKind.ADAPT_TICK)


def test_cancel_skips_event():
    q = EventQueue()
    h = q.schedule(10, EventKind.TRANSPORT_TIMEOUT, a=1)
    q.schedule(20, EventKind.TRANSPORT_TIMEOUT, a=2)
    q.cancel(h)
    assert [e.a for e in drain(q)] == [2]
    assert len(q) == 0


def test_run_until_empty_advances_clock():
    q = EventQueue()
    assert q.run_until(seconds_to_ns(65)) == 0
    assert q.now == seconds_to_ns(65)


def test_run_until_boundary():
    q = EventQueue()
    q.schedule(seconds_to_ns(65.0), EventKind.STATS_TICK, a=1)
    q.schedule(seconds_to_ns(65.000001), EventKind.STATS_TICK, a=2)
    seen = []
    q.run_until(seconds_to_ns(65), seen.append)
    assert [e.a for e in seen] == [1]
    assert len(q) == 1


def test_handler_can_schedule():
    q = EventQueue()
    q.schedule(0, EventKind.ADAPT_TICK)

    def tick(ev):
        q.schedule(ev.fire_at + 250, EventKind.ADAPT_TICK)

    assert q.run_until(1000, tick) == 5  # 0, 250, 500, 750, 1000


def test_trace_is_reproducible():
    def run():
        q = EventQueue()
        q.trace = []
        rng = np.random.default_rng(11)
        for i in range(200):
            q.schedule(int(rng.integers(0, 10_000)), EventKind.PACKET_DEPARTURE, a=i)
        q.run_until(10_000)
        return q.trace

    assert run() == run()


def test_time_conversions():
    assert seconds_to_ns(85.2e-6) == 85_200
    assert ns_to_seconds(1_500_000_000) == 1.5
