import random
from pathlib import Path

import pytest

from nestgen import perfect_nest
from staticrd.errors import CapExceeded, InputError, NonRectangularFootprint, UnknownIterator, UnresolvedParam
from staticrd.loopnest import (ArrayAccess, LocationMap, Loop, LoopNestSpec, ScalarAccess, Stmt, count_accesses,
                               event_table, footprint, iter_sites, load_spec, parse_stmt, resolve, spec_from_json,
                               spec_from_trace, synth_annotated, unroll, with_bounds)
from staticrd.trace import LoopBegin, ScalarRef, parse_trace, serialize_trace

DATA = Path(__file__).resolve().parents[1] / "src" / "staticrd" / "data"
FIXTURE = Path(__file__).parent / "fixtures" / "two_nests.lat"


def A(name, *idx):
    return ArrayAccess(name, idx)


def nest(name, *body):
    return LoopNestSpec(name, tuple(body))


def test_synth_minimal_and_empty():
    s = nest("t", Loop("i", 2, (Stmt((A("A", "i"),)),)))
    assert serialize_trace(synth_annotated(s)) == "['i', '[2', 'i', 'A_array-i', ']']"
    assert serialize_trace(synth_annotated(nest("t", Loop("i", 2)))) == "['i', '[2', ']']"


def _without_iterators(trace):
    its = {t.iterator for t in trace if isinstance(t, LoopBegin)}
    return [t for t in trace if not (isinstance(t, ScalarRef) and t.name in its)]


def test_synth_matches_fixture_modulo_bookkeeping():
    spec = resolve(load_spec(DATA / "fig3.nest.json"))
    ours = synth_annotated(spec)
    theirs = parse_trace(FIXTURE.read_text())
    assert _without_iterators(ours) == _without_iterators(theirs)


def test_synth_errors():
    with pytest.raises(UnresolvedParam):
        synth_annotated(nest("t", Loop("i", "N")))
    with pytest.raises(UnknownIterator):
        synth_annotated(nest("t", Loop("i", 2, (Stmt((A("A", "j"),)),))))


def test_unroll_order():
    one = unroll(nest("t", Loop("i", 2, (Stmt((A("A", "i"),)),))))
    assert [e.location for e in one] == [("A", (0,)), ("A", (1,))]
    two = unroll(nest("t", Loop("i", 2, (Loop("j", 2, (Stmt((A("B", "i", "j"),)),)),))))
    assert [e.location[1] for e in two] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert [e.seq for e in two] == [0, 1, 2, 3]


def test_statement_expansion():
    st = parse_stmt("tmp[i][j] += alpha * A[i][k] * B[k][j]", ("i", "j", "k"))
    assert st.accesses == (ScalarAccess("alpha"), A("A", "i", "k"), A("B", "k", "j"), A("tmp", "i", "j"),
                           A("tmp", "i", "j"))
    assert parse_stmt("tmp[i][j] = 0", ("i", "j")).accesses == (A("tmp", "i", "j"),)
    assert parse_stmt("x1[i] = y_1[i] * 2.5e3", ("i",)).accesses == (A("y_1", "i"), A("x1", "i"))
    with pytest.raises(InputError):
        parse_stmt("A[i+1] = 0", ("i",))


def test_first_nest_at_base_bounds():
    spec = resolve(load_spec(DATA / "fig3.nest.json"))
    first = with_bounds((spec.body[1],), [2, 2, 2])
    events = unroll(first)
    assert len(events) == 44 == count_accesses(first)


def test_unroll_cap(monkeypatch):
    s = nest("t", Loop("i", 10, (Stmt((A("A", "i"),)),)))
    with pytest.raises(CapExceeded):
        unroll(s, cap=9)
    monkeypatch.setenv("RS_UNROLL_CAP", "5")
    with pytest.raises(CapExceeded):
        unroll(s)


def test_footprints():
    s = nest("t", Loop("i", 100, (Loop("k", 300, (Stmt((A("tmp", "i", "k"),)),)),)))
    fp = footprint(s, "tmp")
    assert fp.extents == ((0, 100), (0, 300)) and fp.size == 30_000
    assert footprint(nest("t", Loop("i", 1, (Stmt((A("A", "i"),)),))), "A").size == 1
    d = nest("t", Loop("i", 150, (Loop("j", 250, (Stmt((A("D", "i", "j"),)),)),)))
    assert footprint(d, "D").extents == ((0, 150), (0, 250))


def test_mixed_arity_rejected():
    with pytest.raises(NonRectangularFootprint):
        spec_from_json({"body": [{"loop": "i", "bound": 2, "body": [{"stmt": "A[i] = A[i][i]"}]}]})


def test_count_and_footprint_properties():
    rng = random.Random(3)
    for _ in range(150):
        nodes, _ = perfect_nest(rng, rng.choice([1, 2, 3]), lo=1, hi=5)
        events = unroll(nodes)
        assert len(events) == count_accesses(nodes)
        for name in {e.location[0] for e in events if e.location[1]}:
            seen = {e.location for e in events if e.location[0] == name}
            assert footprint(nodes, name).size == len(seen)


def test_event_table_matches_unroll():
    rng = random.Random(4)
    for _ in range(50):
        nodes, _ = perfect_nest(rng, rng.choice([2, 3]), lo=1, hi=4)
        lmap = LocationMap(nodes)
        ids, sites, _ = event_table(nodes, lmap)
        events = unroll(nodes)
        assert ids.tolist() == [lmap.id_of(e.location) for e in events]
        assert sites.tolist() == [e.site for e in events]


def _sites(spec):
    # statement boundaries are not encoded in a trace; the access sites and their loops are
    return [(acc, tuple((lp.iterator, lp.bound) for lp in enc)) for _, acc, enc in iter_sites(spec.body)]


def test_synth_parse_roundtrip_structure():
    for path in sorted(DATA.glob("*.nest.json")):
        spec = resolve(load_spec(path))
        again = spec_from_trace(parse_trace(serialize_trace(synth_annotated(spec))))
        assert _sites(again) == _sites(spec), path.name
        assert count_accesses(again) == count_accesses(spec)


def test_datasets_resolve():
    spec = load_spec(DATA / "2mm.nest.json")
    assert set(spec.datasets) == {"mini", "small", "medium", "large"}
    mini = resolve(spec, dataset="mini")
    assert [lp.bound for lp in (mini.body[0], mini.body[0].body[0])] == [16, 18]
    assert resolve(spec, {"NI": 3}, "mini").body[0].bound == 3
    with pytest.raises(InputError):
        resolve(spec, dataset="huge")
