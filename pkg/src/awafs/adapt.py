"""Completed-flow windows and periodic threshold adaptation.

Each switch port keeps a time-ordered list of ``(ts, size)`` records for the
flows whose end mark it forwarded. Records live in a shared node pool
(``ts``, ``size``, ``nxt`` arrays plus a free list) with per-window ``head``,
``tail`` and ``count``; appends go to the tail and pruning drops from the head,
both O(1) per record.

Every tick the window is pruned to ``[now - W_update, now]``; if enough
records survive, a sorted snapshot of their sizes is reduced to nearest-rank
percentiles which become the port's new demotion thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .simcore import seconds_to_ns

# 4-byte size + 8-byte timestamp per record
BYTES_PER_ENTRY = 12
# per-port memory budget suggested for the list
FOOTPRINT_BOUND_BYTES = 8 * 1024

ADAPT_UPDATED = 0
ADAPT_INSUFFICIENT = 1
ADAPT_REJECTED = 2


@njit(cache=True, inline="always")
def win_append(w_ts, w_size, w_next, whead, wtail, wcount, wfree, win, ts, size):
    """Append a record at the tail of window ``win``. False if the pool is full."""
    node = wfree[0]
    if node < 0:
        return False
    wfree[0] = w_next[node]
    w_ts[node] = ts
    w_size[node] = size
    w_next[node] = -1
    if wtail[win] < 0:
        whead[win] = node
    else:
        w_next[wtail[win]] = node
    wtail[win] = node
    wcount[win] += 1
    return True


@njit(cache=True)
def win_prune(w_ts, w_next, whead, wtail, wcount, wfree, win, cutoff):
    """Drop head records with ``ts < cutoff``; a record at exactly cutoff stays."""
    dropped = 0
    node = whead[win]
    while node >= 0 and w_ts[node] < cutoff:
        nxt = w_next[node]
        w_next[node] = wfree[0]
        wfree[0] = node
        node = nxt
        dropped += 1
    whead[win] = node
    if node < 0:
        wtail[win] = -1
    wcount[win] -= dropped
    return dropped


@njit(cache=True)
def win_sizes(w_size, w_next, whead, win, out):
    n = 0
    node = whead[win]
    while node >= 0:
        out[n] = w_size[node]
        n += 1
        node = w_next[node]
    return n


@njit(cache=True)
def nearest_rank(p, n):
    """1-based nearest rank ``ceil(p*n)`` clamped to ``[1, n]``."""
    x = p * n
    r = int(x)
    if x - r > 1e-9:
        r += 1
    if r < 1:
        r = 1
    if r > n:
        r = n
    return r


@njit(cache=True)
def percentiles_of_sorted(sorted_sizes, n, ref_pcts, out):
    for i in range(len(ref_pcts)):
        out[i] = sorted_sizes[nearest_rank(ref_pcts[i], n) - 1]


@njit(cache=True)
def adapt_window(w_ts, w_size, w_next, whead, wtail, wcount, wfree, win, now, w_update,
                 ref_pcts, min_samples, thresholds, scratch):
    """One actuator pass for one window: prune, then maybe recompute thresholds.

    ``thresholds`` is updated in place. Returns an ``ADAPT_*`` status code.
    """
    win_prune(w_ts, w_next, whead, wtail, wcount, wfree, win, now - w_update)
    n = wcount[win]
    if n < min_samples or n == 0:
        return ADAPT_INSUFFICIENT
    win_sizes(w_size, w_next, whead, win, scratch)
    snap = np.sort(scratch[:n])
    new = np.empty(len(ref_pcts), dtype=np.int64)
    percentiles_of_sorted(snap, n, ref_pcts, new)
    prev = 0
    for v in new:
        if v <= 0 or v < prev:
            return ADAPT_REJECTED
        prev = v
    thresholds[:] = new
    return ADAPT_UPDATED


class InsufficientData(ValueError):
    """No samples to compute percentiles from."""


def percentile_thresholds(sizes, ref_pcts) -> list[int]:
    """Nearest-rank percentiles of ``sizes`` at each fraction in ``ref_pcts``."""
    arr = np.sort(np.asarray(sizes, dtype=np.int64))
    if arr.size == 0:
        raise InsufficientData("no completed flows in window")
    pcts = np.asarray(ref_pcts, dtype=np.float64)
    out = np.empty(len(pcts), dtype=np.int64)
    percentiles_of_sorted(arr, arr.size, pcts, out)
    return [int(v) for v in out]


class CompletedFlowWindow:
    """Time-ordered ``(ts_ns, size)`` records for one port."""

    def __init__(self, capacity: int = 64):
        self._ts = np.zeros(capacity, dtype=np.int64)
        self._size = np.zeros(capacity, dtype=np.int64)
        self._next = np.append(np.arange(1, capacity, dtype=np.int64), -1)
        self._free = np.zeros(1, dtype=np.int64)
        self._head = np.full(1, -1, dtype=np.int64)
        self._tail = np.full(1, -1, dtype=np.int64)
        self._count = np.zeros(1, dtype=np.int64)

    def __len__(self):
        return int(self._count[0])

    def _grow(self):
        old = len(self._ts)
        self._ts = np.concatenate([self._ts, np.zeros(old, dtype=np.int64)])
        self._size = np.concatenate([self._size, np.zeros(old, dtype=np.int64)])
        tail = np.append(np.arange(old + 1, 2 * old, dtype=np.int64), self._free[0])
        self._next = np.concatenate([self._next, tail])
        self._free[0] = old

    def record(self, ts: int, size: int) -> None:
        if self._tail[0] >= 0 and ts < self._ts[self._tail[0]]:
            raise ValueError(f"record at {ts} precedes last record {self._ts[self._tail[0]]}")
        if not win_append(self._ts, self._size, self._next, self._head, self._tail, self._count,
                          self._free, 0, ts, size):
            self._grow()
            win_append(self._ts, self._size, self._next, self._head, self._tail, self._count,
                       self._free, 0, ts, size)

    def prune(self, now: int, w_update: int) -> int:
        return int(win_prune(self._ts, self._next, self._head, self._tail, self._count,
                             self._free, 0, now - w_update))

    def entries(self) -> list[tuple[int, int]]:
        out, node = [], self._head[0]
        while node >= 0:
            out.append((int(self._ts[node]), int(self._size[node])))
            node = self._next[node]
        return out

    def sizes(self) -> np.ndarray:
        out = np.empty(len(self), dtype=np.int64)
        win_sizes(self._size, self._next, self._head, 0, out)
        return out

    def adapt(self, now: int, w_update: int, ref_pcts, min_samples: int, thresholds: np.ndarray) -> int:
        scratch = np.empty(max(len(self), 1), dtype=np.int64)
        return int(adapt_window(self._ts, self._size, self._next, self._head, self._tail,
                                self._count, self._free, 0, now, w_update,
                                np.asarray(ref_pcts, dtype=np.float64), min_samples,
                                thresholds, scratch))


def window_footprint(window_or_count) -> int:
    """Memory taken by a window's records, in bytes."""
    n = window_or_count if isinstance(window_or_count, (int, np.integer)) else len(window_or_count)
    return int(n) * BYTES_PER_ENTRY


def exceeds_footprint_bound(window_or_count, bound: int = FOOTPRINT_BOUND_BYTES) -> bool:
    return window_footprint(window_or_count) > bound


def default_ref_pcts(k: int) -> tuple[float, ...]:
    return tuple(round(0.1 * (i + 1), 10) for i in range(k - 1))


def stepped_thresholds(k: int, first: int = 7000, step: int = 7000) -> tuple[int, ...]:
    return tuple(first + step * i for i in range(k - 1))


@dataclass
class AdaptParams:
    w_update: float = 1.0
    t_schedule: float = 0.25
    ref_pcts: tuple[float, ...] = field(default_factory=tuple)
    min_samples: int | None = None
    initial_thresholds: tuple[int, ...] = field(default_factory=tuple)

    def resolved(self, k: int) -> "AdaptParams":
        """Fill k-dependent defaults and validate."""
        pcts = tuple(self.ref_pcts) or default_ref_pcts(k)
        # extra leading entries (e.g. a k-entry list for k-1 thresholds) are trimmed
        pcts = pcts[: k - 1]
        thr = tuple(int(x) for x in (self.initial_thresholds or stepped_thresholds(k)))[: k - 1]
        out = AdaptParams(self.w_update, self.t_schedule, pcts,
                          4 * (k - 1) if self.min_samples is None else self.min_samples, thr)
        out.validate(k)
        return out

    def validate(self, k: int) -> None:
        if len(self.ref_pcts) != k - 1:
            raise ValueError(f"ref_pcts needs {k - 1} values, got {len(self.ref_pcts)}")
        if any(not 0 < p < 1 for p in self.ref_pcts):
            raise ValueError("ref_pcts must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.ref_pcts, self.ref_pcts[1:])):
            raise ValueError("ref_pcts must be strictly increasing")
        if self.w_update < self.t_schedule:
            raise ValueError("w_update must be >= t_schedule")
        if self.min_samples is not None and self.min_samples < k - 1:
            raise ValueError(f"min_samples must be >= k-1 = {k - 1}")
        if len(self.initial_thresholds) != k - 1:
            raise ValueError(f"initial_thresholds needs {k - 1} values")

    @property
    def w_update_ns(self) -> int:
        return seconds_to_ns(self.w_update)

    @property
    def t_schedule_ns(self) -> int:
        return seconds_to_ns(self.t_schedule)
