"""Stack-distance cache model: hit probability of a set-associative LRU cache.

A reuse at distance D (in distinct lines) hits when fewer than A of the D
intervening lines fall into the reused line's set, each landing there with
probability 1/S independently::

    P(h | D) = sum_{a < A} C(D, a) (1/S)^a (1 - 1/S)^(D - a)
    P(h)     = sum_i P(D_i) P(h | D_i)
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import EmptyHistogram, InputError
from .oracle import COLD, ReuseHistogram

_SIZE_RE = re.compile(r"^\s*(\d+)\s*([kKmMgG]?)[bB]?\s*$")
_UNITS = {"": 1, "k": 1 << 10, "m": 1 << 20, "g": 1 << 30}


def parse_size(text) -> int:
    if isinstance(text, int):
        return text
    m = _SIZE_RE.match(str(text))
    if not m:
        raise InputError(f"bad size {text!r}; use e.g. 32K, 256K, 1M")
    return int(m.group(1)) * _UNITS[m.group(2).lower()]


@dataclass(frozen=True)
class CacheConfig:
    capacity_bytes: int
    line_bytes: int = 64
    associativity: int = 8
    element_bytes: int = 8

    def __post_init__(self):
        for name in ("capacity_bytes", "line_bytes", "associativity", "element_bytes"):
            if getattr(self, name) < 1:
                raise InputError(f"cache {name} must be >= 1")
        if self.capacity_bytes % (self.line_bytes * self.associativity):
            raise InputError("capacity must be a multiple of line size x associativity")

    @property
    def sets(self) -> int:
        return self.capacity_bytes // (self.line_bytes * self.associativity)

    @property
    def label(self) -> str:
        cap = self.capacity_bytes
        for unit, mult in (("M", 1 << 20), ("K", 1 << 10)):
            if cap % mult == 0:
                return f"{cap // mult}{unit}"
        return f"{cap}B"

    @classmethod
    def parse(cls, capacity, line=64, assoc=8, elem=8) -> CacheConfig:
        return cls(parse_size(capacity), int(line), int(assoc), int(elem))


PAPER_CACHES = tuple(CacheConfig.parse(c) for c in ("32K", "256K", "1M"))


def to_lines(d_elements, cfg: CacheConfig):
    """Element distance -> line distance, ``ceil(d * elem / line)``; cold stays -1."""
    d = np.asarray(d_elements, dtype=np.int64)
    lines = -(-(d * cfg.element_bytes) // cfg.line_bytes)
    return np.where(d < 0, COLD, lines)


def p_hit_lines(d, cfg: CacheConfig) -> np.ndarray:
    """Vectorized P(h | d) for line distances ``d``."""
    d = np.atleast_1d(np.asarray(d, dtype=np.int64))
    out = np.zeros(d.shape, dtype=np.float64)
    A, S = cfg.associativity, cfg.sets
    sure = (d >= 0) & (d < A)
    out[sure] = 1.0
    rest = d >= A
    if not rest.any() or S == 1:
        return out
    p = 1.0 / S
    dd = d[rest].astype(np.float64)
    # log of binomial pmf terms a = 0..A-1, built incrementally to stay in log space
    log_term = dd * np.log1p(-p)
    acc = np.exp(log_term)
    ratio = np.log(p) - np.log1p(-p)
    for a in range(1, A):
        log_term = log_term + np.log(dd - (a - 1)) - np.log(a) + ratio
        acc = acc + np.exp(log_term)
    # Near 1 the lower tail sits within a few ulps of 1 and loses the ordering
    # between neighbouring d, so there report 1 - upper tail instead.
    high = acc >= 0.5
    if high.any():
        out_rest = np.minimum(acc, 1.0)
        out_rest[high] = 1.0 - _upper_tail(dd[high], A, p)
        out[rest] = out_rest
    else:
        out[rest] = acc
    return out


def _upper_tail(dd: np.ndarray, A: int, p: float, max_terms: int = 400) -> np.ndarray:
    """Sum of binomial pmf terms a >= A; only used where that tail is below one half."""
    log_q = np.log1p(-p)
    ratio = np.log(p) - log_q
    log_term = dd * log_q
    for a in range(1, A + 1):
        log_term = log_term + np.log(dd - (a - 1)) - np.log(a) + ratio
    tail = np.exp(log_term)
    for a in range(A + 1, A + max_terms):
        live = dd >= a
        if not live.any():
            break
        log_term = np.where(live, log_term + np.log(np.maximum(dd - (a - 1), 1.0)) - np.log(a) + ratio, -np.inf)
        term = np.exp(log_term)
        tail = tail + term
        if np.all(term <= tail * 1e-20):
            break
    return np.minimum(tail, 1.0)


def p_hit_given_d(d: int, cfg: CacheConfig) -> float:
    """P(h | d) for a distance already expressed in lines; ``-1`` (cold) never hits."""
    if d < 0:
        return 0.0
    return float(p_hit_lines([d], cfg)[0])


def hit_rate(hist: ReuseHistogram, cfg: CacheConfig) -> float:
    total = hist.total
    if total <= 0:
        raise EmptyHistogram("hit rate of an empty histogram is undefined")
    items = [(d, f) for d, f in hist.bins.items() if d != COLD]
    if not items:
        return 0.0
    dist = np.array([d for d, _ in items], dtype=np.int64)
    freq = np.array([f for _, f in items], dtype=np.float64)
    return float(np.dot(freq, p_hit_lines(to_lines(dist, cfg), cfg)) / total)
