import random
from pathlib import Path

import pytest

from nestgen import perfect_nest
from staticrd.errors import DepthUnsupported, InputError
from staticrd.loopnest import ArrayAccess, Loop, ScalarAccess, Stmt, count_accesses, load_spec, resolve, unroll
from staticrd.loopnest import with_bounds
from staticrd.oracle import ReuseHistogram, rd_by_class, rd_tree
from staticrd.pipeline import oracle_spec, predict_spec, predict_trace
from staticrd.predictor import (class_key_fn, classify_events, predict_block, predict_nodes, round_half_up,
                                tie_groups)
from staticrd.report import ComparisonReport
from staticrd.trace import BlockKind, parse_trace, separate_blocks

DATA = Path(__file__).resolve().parents[1] / "src" / "staticrd" / "data"


def loop(it, n, *body):
    return Loop(it, n, tuple(body))


def stmt(*accs):
    return Stmt(tuple(accs))


def test_streaming_array_has_no_reuse():
    for n in (2, 5, 1000):
        prof = predict_nodes((loop("i", n, stmt(ArrayAccess("A", ("i",)))),))
        assert prof.histogram.bins == {}
        assert prof.cold_regions["A"].extents == ((0, n),)
        assert prof.classes == [] or all(c.predicted_freq == 0 for c in prof.classes)


def test_scalar_in_loop():
    for n in (2, 3, 10, 12345):
        prof = predict_nodes((loop("i", n, stmt(ScalarAccess("s"))),))
        assert prof.histogram.bins == {0: n - 1}
        assert prof.cold_scalars == ("s",)


def test_block_from_trace():
    tr = parse_trace("['i', '[50', 'i', 'A_array-i', 's', ']']")
    block = separate_blocks(tr)[1]
    prof = predict_block(block, iterators={"i"})
    assert prof.histogram.bins == {1: 49}
    assert prof.total == 100 == prof.histogram.total + prof.cold_total
    with pytest.raises(InputError):
        predict_block(separate_blocks(parse_trace("['a']"))[0])


def test_first_nest_conservation_and_agreement():
    spec = resolve(load_spec(DATA / "fig3.nest.json"))
    first = (spec.body[1],)
    prof = predict_nodes(first)
    assert prof.histogram.total + prof.cold_total == count_accesses(first) == 100 * 200 * 1501
    small = with_bounds(first, [10, 20, 30])
    got = predict_nodes(small).histogram
    want, _ = rd_tree(unroll(small))
    assert got == want.reuse_only()


def test_base_bounds_reproduce_base_sample():
    rng = random.Random(8)
    for _ in range(40):
        nodes, bounds = perfect_nest(rng, rng.choice([2, 3]))
        base = with_bounds(nodes, [2] * len(bounds))
        want, _ = rd_tree(unroll(base))
        assert predict_nodes(base).histogram == want.reuse_only()


def test_classifier_matches_reference():
    rng = random.Random(5)
    for case in range(120):
        nodes, b = perfect_nest(rng, rng.choice([2, 3]))
        sig = case % 2 == 0
        kf = class_key_fn(b, sig)

        def key(c, p):
            fine = tuple(v for lid, v in c.context if 0 < v < b[lid] - 1) if sig else ()
            return kf(c, p), fine

        assert rd_by_class(unroll(nodes), key) == classify_events(nodes, signature=sig), case


def test_classifier_site_filters():
    nodes = (loop("i", 4, stmt(ArrayAccess("A", ("i",)), ScalarAccess("s"), ScalarAccess("s"))),)
    allc = classify_events(nodes)
    only = classify_events(nodes, consumers=range(2, 3), producers=range(1, 2))
    assert only and set(only) < set(allc)
    assert all(k.consumer_site == 2 and k.producer_site == 1 for k, _ in only)


def test_tie_groups():
    spec = resolve(load_spec(DATA / "mvt.nest.json"), dataset="small")
    nodes = tuple(n for n in spec.body if isinstance(n, Loop))
    bounds = [lp.bound for lp in (nodes[0], nodes[0].body[0], nodes[1], nodes[1].body[0])]
    assert tie_groups(nodes, bounds) == [[0, 3], [1, 2]]
    # nested loops never tie, and unequal bounds keep siblings apart
    nest = (loop("i", 5, loop("j", 5, stmt(ArrayAccess("A", ("i",)), ArrayAccess("A", ("j",))))),)
    assert tie_groups(nest, [5, 5]) == [[0], [1]]
    sib = (loop("i", 5, loop("j", 5, stmt(ArrayAccess("A", ("j",)))), loop("k", 6, stmt(ArrayAccess("A", ("k",))))),)
    assert tie_groups(sib, [5, 5, 6]) == [[0], [1], [2]]
    assert tie_groups(sib, [5, 6, 6]) == [[0], [1, 2]]


def test_depth_limit():
    its = "abcde"
    body = stmt(*(ArrayAccess(f"X{n}", (it,)) for n, it in enumerate(its)), ScalarAccess("s"))
    for it in reversed(its):
        body = loop(it, 3, body)
    with pytest.raises(DepthUnsupported):
        predict_nodes((body,))
    assert predict_nodes((body,), max_depth=5, signature=False).histogram.total > 0


def test_spread_distances_match_oracle():
    # reuses of the matrix between the two nests sit at distances that grow with both iterators
    spec = resolve(load_spec(DATA / "mvt.nest.json"), dataset="small")
    rep = ComparisonReport.build(predict_spec(spec).histogram, oracle_spec(spec).histogram)
    assert rep.matched_mass == pytest.approx(1.0)


def test_plain_blocks_are_exact():
    tr = parse_trace("['a', 'b', 'a', 'i', '[3', 'i', 'A_array-i', ']', 'b']")
    prof = predict_trace(tr)
    kinds = [b.kind for b in prof.per_block]
    assert kinds == [BlockKind.PLAIN.value, BlockKind.LOOP.value, BlockKind.PLAIN.value]
    assert prof.per_block[0].histogram.bins == {1: 1}
    assert prof.histogram.total == 7


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.49, -0.5)] == [1, 2, 2, 0]


def test_profile_json_roundtrip():
    prof = predict_nodes((loop("i", 7, stmt(ArrayAccess("A", ("i",)), ScalarAccess("s"))),))
    from staticrd.predictor import BlockProfile
    again = BlockProfile.from_json(prof.to_json())
    assert again.histogram == prof.histogram and again.cold_total == prof.cold_total
    assert isinstance(again.histogram, ReuseHistogram)


def test_class_spread_evaluation():
    from staticrd.multilinear import MultilinearModel
    from staticrd.predictor import ClassFit, ReuseClassKey

    const = lambda v: MultilinearModel(0, (v,))
    key = ReuseClassKey(1, 0, 0)
    fit = ClassFit(key, const(6), const(10), 6, 10, slopes=((1, const(2)),))
    assert fit.evaluate([3], []) == [(10, 2), (12, 2), (14, 2)]
    # uneven split falls back to a single bin at the mean distance
    fit = ClassFit(key, const(7), const(10), 7, 10, slopes=((1, const(2)),))
    assert fit.evaluate([3], []) == [(12, 7)]
    flat = ClassFit(key, const(4), const(3), 4, 3)
    assert flat.evaluate([7], []) == [(3, 4)] and flat.bins() == [(3, 4)]
