from collections import OrderedDict
from fractions import Fraction
from math import comb

import numpy as np
import pytest

from staticrd.cache import PAPER_CACHES, CacheConfig, p_hit_given_d, parse_size, to_lines
from staticrd.cache import hit_rate, p_hit_lines
from staticrd.errors import EmptyHistogram, InputError
from staticrd.oracle import ReuseHistogram, rd_naive


def test_parse_sizes():
    assert parse_size("32K") == 32768
    assert parse_size("1M") == 1 << 20
    assert parse_size("256kb") == 256 << 10
    assert parse_size(4096) == 4096
    with pytest.raises(InputError):
        parse_size("lots")
    with pytest.raises(InputError):
        CacheConfig(1000, 64, 8)
    assert [c.label for c in PAPER_CACHES] == ["32K", "256K", "1M"]
    assert CacheConfig.parse("1M").sets == 2048


def test_conditional_probability_examples():
    cfg = CacheConfig.parse("1M")
    assert p_hit_given_d(0, cfg) == 1.0
    assert p_hit_given_d(-1, cfg) == 0.0
    assert p_hit_given_d(1, CacheConfig(128, 64, 1)) == pytest.approx(0.5)


def test_fully_associative_is_a_step():
    cfg = CacheConfig(64 * 4, 64, 4)
    assert cfg.sets == 1
    assert [p_hit_given_d(d, cfg) for d in range(7)] == [1, 1, 1, 1, 0, 0, 0]


def test_tail_vanishes():
    cfg = CacheConfig.parse("32K")
    assert p_hit_given_d(10 ** 6, cfg) < 1e-12


def test_line_conversion():
    cfg = CacheConfig.parse("32K")
    assert to_lines([-1, 0, 1, 8, 9], cfg).tolist() == [-1, 0, 1, 1, 2]


def test_hit_rate_examples():
    cfg = CacheConfig.parse("1M")
    assert hit_rate(ReuseHistogram({-1: 9}), cfg) == 0.0
    assert hit_rate(ReuseHistogram({0: 9}), cfg) == 1.0
    with pytest.raises(EmptyHistogram):
        hit_rate(ReuseHistogram(), cfg)


def _lru_sim(stream, cfg):
    """Set-associative LRU cache with one element per line mapped by position mod S."""
    sets = [OrderedDict() for _ in range(cfg.sets)]
    hits = 0
    for x in stream:
        s = sets[x % cfg.sets]
        if x in s:
            hits += 1
            s.move_to_end(x)
        else:
            s[x] = None
            if len(s) > cfg.associativity:
                s.popitem(last=False)
    return hits / len(stream)


def test_seven_access_stream():
    cfg = CacheConfig.parse("1M")
    stream = [0, 1, 1, 0, 2, 1, 0]  # a b b a c b a
    hist, _ = rd_naive(stream)
    # distances 1 and 2 elements are one line each; with 8 ways both always hit
    expected = (1 + p_hit_given_d(1, cfg) + 2 * p_hit_given_d(1, cfg)) / 7
    assert hit_rate(hist, cfg) == pytest.approx(expected) == pytest.approx(4 / 7)
    assert _lru_sim(stream, cfg) == pytest.approx(4 / 7)


def test_scaling_invariance():
    cfg = CacheConfig.parse("32K")
    h = ReuseHistogram({-1: 3, 0: 5, 700: 2, 5000: 7})
    h3 = ReuseHistogram({d: 3 * f for d, f in h.bins.items()})
    assert hit_rate(h, cfg) == pytest.approx(hit_rate(h3, cfg))


def test_hit_probability_matches_exact_binomial():
    for cfg in PAPER_CACHES:
        p = Fraction(1, cfg.sets)
        ds = list(range(cfg.associativity, cfg.associativity + 40)) + [500, 5_000, 20_000]
        got = p_hit_lines(ds, cfg)
        for d, g in zip(ds, got):
            exact = sum(comb(d, a) * p**a * (1 - p) ** (d - a) for a in range(cfg.associativity))
            assert g == pytest.approx(float(exact), rel=1e-9, abs=1e-300)


def test_hit_probability_strictly_ordered_near_one():
    d = np.arange(0, 300_000)
    for cfg in PAPER_CACHES:
        assert np.all(np.diff(p_hit_lines(d, cfg)) <= 0)
