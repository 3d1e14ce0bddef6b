"""Exact LRU stack distances over concrete access streams.

Two engines with identical output: ``rd_naive`` keeps an explicit LRU stack
(O(n*m)), ``rd_tree`` counts live last-access marks in a Fenwick tree indexed
by access time (Olken's order-statistic formulation, O(n log n)). The tree is
periodically compacted so its size tracks the number of distinct locations,
not the stream length.
"""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np
from numba import njit

COLD = -1


@dataclass
class ReuseHistogram:
    """Reuse distance -> frequency. Key ``-1`` holds cold misses."""

    bins: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.bins = {int(d): int(f) for d, f in sorted(self.bins.items()) if f}

    @property
    def total(self) -> int:
        return sum(self.bins.values())

    @property
    def cold(self) -> int:
        return self.bins.get(COLD, 0)

    def reuse_only(self) -> ReuseHistogram:
        return ReuseHistogram({d: f for d, f in self.bins.items() if d != COLD})

    def add(self, distance: int, freq: int = 1) -> None:
        distance, freq = int(distance), int(freq)
        if not freq:
            return
        new = self.bins.get(distance, 0) + freq
        if new:
            self.bins[distance] = new
        else:
            del self.bins[distance]

    def merged(self, other: ReuseHistogram) -> ReuseHistogram:
        out = ReuseHistogram(dict(self.bins))
        for d, f in other.bins.items():
            out.add(d, f)
        return out

    def sorted_items(self):
        return sorted(self.bins.items())

    @classmethod
    def from_distances(cls, distances: Iterable[int]) -> ReuseHistogram:
        arr = np.asarray(list(distances) if not isinstance(distances, np.ndarray) else distances,
                         dtype=np.int64)
        if not len(arr):
            return cls()
        vals, counts = np.unique(arr, return_counts=True)
        return cls(dict(zip(vals.tolist(), counts.tolist())))

    def to_json(self) -> dict:
        return {"bins": {str(d): f for d, f in self.sorted_items()}, "total": self.total}

    @classmethod
    def from_json(cls, obj: dict) -> ReuseHistogram:
        hist = cls({int(d): int(f) for d, f in obj["bins"].items()})
        if "total" in obj and int(obj["total"]) != hist.total:
            raise ValueError(f"histogram total {obj['total']} != sum of bins {hist.total}")
        return hist

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["distance", "frequency"])
        w.writerows(self.sorted_items())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> ReuseHistogram:
        rows = list(csv.reader(io.StringIO(text)))
        return cls({int(d): int(f) for d, f in rows[1:] if d})

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _location(ev) -> Hashable:
    return getattr(ev, "location", ev)


def rd_naive(stream: Sequence) -> tuple[ReuseHistogram, list[int]]:
    """Reference engine: the distance is the reused location's depth in an LRU stack."""
    stack: list = []  # most recent last
    dists: list[int] = []
    for ev in stream:
        loc = _location(ev)
        try:
            pos = stack.index(loc)
        except ValueError:
            dists.append(COLD)
        else:
            dists.append(len(stack) - 1 - pos)
            del stack[pos]
        stack.append(loc)
    return ReuseHistogram.from_distances(dists), dists


# ----------------------------------------------------------------------------- tree engine

@njit(cache=True)
def _fen_add(tree, i, delta):
    n = tree.shape[0]
    while i < n:
        tree[i] += delta
        i += i & (-i)


@njit(cache=True)
def _fen_prefix(tree, i):
    s = 0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@njit(cache=True)
def _compact(last, owner, tree):
    cap = tree.shape[0] - 1
    m = 0
    for slot in range(1, cap + 1):
        loc = owner[slot]
        if loc >= 0:
            m += 1
            owner[slot] = -1
            owner[m] = loc
            last[loc] = m
    # owner[1..m] now compacted; slots above m are cleared.
    for slot in range(m + 1, cap + 1):
        owner[slot] = -1
    tree[:] = 0
    for i in range(1, cap + 1):
        if i <= m:
            tree[i] += 1
        j = i + (i & (-i))
        if j <= cap:
            tree[j] += tree[i]
    return m


@njit(cache=True)
def _rd_feed(ids, last, owner, tree, state, hist, dists, want):
    cap = tree.shape[0] - 1
    t = state[0]
    live = state[1]
    for n in range(ids.shape[0]):
        loc = ids[n]
        if t == cap:
            t = _compact(last, owner, tree)
        t += 1
        p = last[loc]
        if p > 0:
            d = live - _fen_prefix(tree, p)
            _fen_add(tree, p, -1)
            owner[p] = -1
            live -= 1
        else:
            d = -1
        _fen_add(tree, t, 1)
        owner[t] = loc
        last[loc] = t
        live += 1
        hist[d + 1] += 1
        if want:
            dists[n] = d
    state[0] = t
    state[1] = live


class TreeEngine:
    """Streaming stack-distance engine over dense integer location ids ``0..n-1``."""

    def __init__(self, n_locations: int):
        n = max(int(n_locations), 1)
        cap = 2 * n + 16
        self.n_locations = n
        self._last = np.zeros(n, dtype=np.int64)
        self._owner = np.full(cap + 1, -1, dtype=np.int64)
        self._tree = np.zeros(cap + 1, dtype=np.int64)
        self._state = np.zeros(2, dtype=np.int64)
        self._hist = np.zeros(n + 1, dtype=np.int64)

    def feed(self, ids, want_distances: bool = False):
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        if len(ids) and (ids.min() < 0 or ids.max() >= self.n_locations):
            raise ValueError("location id out of range")
        dists = np.empty(len(ids) if want_distances else 0, dtype=np.int64)
        _rd_feed(ids, self._last, self._owner, self._tree, self._state, self._hist, dists,
                 want_distances)
        return dists if want_distances else None

    def histogram(self) -> ReuseHistogram:
        nz = np.nonzero(self._hist)[0]
        return ReuseHistogram({int(k) - 1: int(self._hist[k]) for k in nz})


def dense_ids(stream: Sequence) -> tuple[np.ndarray, int]:
    table: dict = {}
    ids = np.fromiter((table.setdefault(_location(ev), len(table)) for ev in stream),
                      dtype=np.int64, count=len(stream))
    return ids, len(table)


def rd_tree(stream: Sequence) -> tuple[ReuseHistogram, list[int]]:
    ids, n = dense_ids(stream)
    eng = TreeEngine(n)
    dists = eng.feed(ids, want_distances=True)
    return eng.histogram(), dists.tolist()


def rd_id_chunks(chunks: Iterable[np.ndarray], n_locations: int) -> ReuseHistogram:
    eng = TreeEngine(n_locations)
    for chunk in chunks:
        eng.feed(chunk)
    return eng.histogram()


# ----------------------------------------------------------------------------- classes

def rd_by_class(stream: Sequence, class_key_fn: Callable, engine: Callable = rd_tree):
    """Group non-cold reuse events by ``class_key_fn(consumer, producer)``.

    Returns ``{key: [(distance, count), ...]}`` with distances ascending.
    Events whose key is ``None`` are left out.
    """
    _, dists = engine(stream)
    prev: dict = {}
    groups: dict = defaultdict(lambda: defaultdict(int))
    for n, ev in enumerate(stream):
        loc = _location(ev)
        d = dists[n]
        if d != COLD:
            key = class_key_fn(ev, stream[prev[loc]])
            if key is not None:
                groups[key][d] += 1
        prev[loc] = n
    return {k: sorted(v.items()) for k, v in groups.items()}
