"""Greedy nearest-match pairing of two sorted timestamp arrays."""

from __future__ import annotations

import numpy as np


def check_sorted(t: np.ndarray, name: str) -> None:
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError(f"{name} timestamps are not sorted")


def greedy_pairs(ta, tb, center: float, half_width: float, gate=None, max_candidates: int = 50_000_000):
    """Match events with ``|(ta - tb) - center| <= half_width``.

    All candidate pairs are ranked by ``|(ta - tb) - center|`` (ties broken by
    index) and accepted in that order if neither event is already used, so
    every event appears in at most one pair. ``gate`` optionally maps times
    to window labels; pairs across different labels are excluded.

    Returns index arrays ``(ia, ib)`` sorted by ``ia``.
    """
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    check_sorted(ta, "A")
    check_sorted(tb, "B")
    empty = np.empty(0, dtype=np.int64)
    if ta.size == 0 or tb.size == 0:
        return empty, empty
    # B partners of A event i lie in tb in [ta - center - w, ta - center + w]
    lo = np.searchsorted(tb, ta - center - half_width, side="left")
    hi = np.searchsorted(tb, ta - center + half_width, side="right")
    n = hi - lo
    total = int(n.sum())
    if total == 0:
        return empty, empty
    if total > max_candidates:
        raise MemoryError("too many candidate pairs; reduce the window or the rates")
    ia = np.repeat(np.arange(ta.size), n)
    offs = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
    ib = np.repeat(lo, n) + offs
    dev = np.abs((ta[ia] - tb[ib]) - center)
    keep = dev <= half_width
    if gate is not None:
        keep &= np.asarray(gate(ta[ia])) == np.asarray(gate(tb[ib]))
    ia, ib, dev = ia[keep], ib[keep], dev[keep]

    # events with exactly one candidate whose partner also has one need no ranking
    order = np.lexsort((ib, ia, dev))
    used_a = np.zeros(ta.size, dtype=bool)
    used_b = np.zeros(tb.size, dtype=bool)
    out_a = []
    out_b = []
    for a, b in zip(ia[order].tolist(), ib[order].tolist()):
        if used_a[a] or used_b[b]:
            continue
        used_a[a] = True
        used_b[b] = True
        out_a.append(a)
        out_b.append(b)
    out_a = np.asarray(out_a, dtype=np.int64)
    out_b = np.asarray(out_b, dtype=np.int64)
    srt = np.argsort(out_a, kind="stable")
    return out_a[srt], out_b[srt]
