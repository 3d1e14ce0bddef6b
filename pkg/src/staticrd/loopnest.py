"""Declarative loop nests: JSON loading, annotated-trace synthesis and unrolling.

A nest file looks like::

    {"name": "gemm-ish",
     "params": {"NI": 4, "NK": 3},
     "datasets": {"mini": {"NI": 16, "NK": 22}},
     "body": [
       {"access": ["alpha"]},
       {"loop": "i", "bound": "NI", "body": [
         {"loop": "k", "bound": "NK", "body": [
           {"stmt": "C[i] += alpha * A[i][k]"}]}]}]}

Statements expand to accesses as: right-hand-side references left to right,
then the target read (compound assignment only), then the target write.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from math import prod
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from .errors import CapExceeded, InputError, NonRectangularFootprint, UnknownIterator, UnresolvedParam
from .regions import IndexRegion
from .trace import AnnotatedTrace, ArrayRef, LoopBegin, LoopEnd, ScalarRef, Token, make_trace, trace_iterators

DEFAULT_UNROLL_CAP = 10**8
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class ScalarAccess:
    name: str


@dataclass(frozen=True)
class ArrayAccess:
    array: str
    indices: tuple[str, ...]


Access = Union[ScalarAccess, ArrayAccess]


@dataclass(frozen=True)
class Stmt:
    accesses: tuple[Access, ...]
    text: str | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Loop:
    iterator: str
    bound: int | str
    body: tuple[Union["Loop", Stmt], ...] = ()


Node = Union[Loop, Stmt]


@dataclass(frozen=True)
class LoopNestSpec:
    name: str
    body: tuple[Node, ...]
    params: dict = field(default_factory=dict, compare=False)
    datasets: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class AccessEvent:
    """One dynamic access. ``location`` is ``(name, index_tuple)``; scalars use ``()``.

    ``context`` holds ``(loop_id, iteration)`` pairs of the enclosing loops.
    """

    location: tuple
    seq: int
    site: int
    context: tuple = field(default=(), compare=False)


def unroll_cap() -> int:
    raw = os.environ.get("RS_UNROLL_CAP")
    return int(raw) if raw else DEFAULT_UNROLL_CAP


# ----------------------------------------------------------------------------- statements

_REF_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*((?:\[[^\]]*\]\s*)*)(\()?")
_NUM_RE = re.compile(r"(?<![A-Za-z0-9_.])\d+(?:\.\d*)?(?:[eE][-+]?\d+)?[fFlL]?")
_ASSIGN_RE = re.compile(r"^(.*?)(\+=|-=|\*=|/=|(?<![=!<>])=(?!=))(.*)$")


def _parse_refs(text: str, iterators) -> list[Access]:
    text = _NUM_RE.sub(" ", text)
    out: list[Access] = []
    for m in _REF_RE.finditer(text):
        name, subs, call = m.group(1), m.group(2), m.group(3)
        if call:
            continue
        if subs:
            idx = tuple(s.strip() for s in re.findall(r"\[([^\]]*)\]", subs))
            for ix in idx:
                if not _IDENT.match(ix):
                    raise InputError(f"index expression {ix!r} in {text.strip()!r} is not a bare iterator")
            out.append(ArrayAccess(name, idx))
        elif name not in iterators:
            out.append(ScalarAccess(name))
    return out


def parse_access(text: str) -> Access:
    refs = _parse_refs(text, ())
    if len(refs) != 1:
        raise InputError(f"not a single access: {text!r}")
    return refs[0]


def parse_stmt(text: str, iterators=()) -> Stmt:
    m = _ASSIGN_RE.match(text.strip().rstrip(";"))
    if not m:
        return Stmt(tuple(_parse_refs(text, iterators)), text)
    lhs, op, rhs = m.groups()
    targets = _parse_refs(lhs, ())
    if len(targets) != 1:
        raise InputError(f"assignment target of {text!r} must be a single reference")
    reads = _parse_refs(rhs, iterators)
    accesses = reads + (targets * 2 if op != "=" else targets)
    return Stmt(tuple(accesses), text)


# ----------------------------------------------------------------------------- JSON

def _node_from_json(obj, iterators: tuple[str, ...]) -> Node:
    if "loop" in obj:
        it = obj["loop"]
        if not _IDENT.match(it):
            raise InputError(f"bad iterator name {it!r}")
        if it in iterators:
            raise InputError(f"iterator {it!r} shadows an enclosing loop")
        bound = obj.get("bound")
        if isinstance(bound, bool) or not isinstance(bound, (int, str)):
            raise InputError(f"loop {it!r} needs an integer or parameter bound")
        inner = iterators + (it,)
        return Loop(it, bound, tuple(_node_from_json(b, inner) for b in obj.get("body", [])))
    if "stmt" in obj:
        return parse_stmt(obj["stmt"], iterators)
    if "access" in obj:
        return Stmt(tuple(parse_access(a) for a in obj["access"]))
    raise InputError(f"unrecognized nest node: {obj!r}")


def spec_from_json(obj: dict) -> LoopNestSpec:
    try:
        body = tuple(_node_from_json(n, ()) for n in obj.get("body", []))
        spec = LoopNestSpec(
            obj.get("name", "nest"), body, dict(obj.get("params", {})), dict(obj.get("datasets", {}))
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise InputError(f"malformed nest description: {exc}") from exc
    validate(spec)
    return spec


def load_spec(path) -> LoopNestSpec:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    return spec_from_json(obj)


def _node_to_json(node: Node) -> dict:
    if isinstance(node, Loop):
        return {"loop": node.iterator, "bound": node.bound, "body": [_node_to_json(b) for b in node.body]}
    if node.text is not None:
        return {"stmt": node.text}
    return {"access": [access_text(a) for a in node.accesses]}


def spec_to_json(spec: LoopNestSpec) -> dict:
    out = {"name": spec.name}
    if spec.params:
        out["params"] = spec.params
    if spec.datasets:
        out["datasets"] = spec.datasets
    out["body"] = [_node_to_json(n) for n in spec.body]
    return out


def access_text(acc: Access) -> str:
    if isinstance(acc, ScalarAccess):
        return acc.name
    return acc.array + "".join(f"[{i}]" for i in acc.indices)


# ----------------------------------------------------------------------------- structure

def walk(nodes, enclosing: tuple[Loop, ...] = ()) -> Iterator[tuple[Node, tuple[Loop, ...]]]:
    """Preorder over nodes with their enclosing loop chain."""
    for node in nodes:
        yield node, enclosing
        if isinstance(node, Loop):
            yield from walk(node.body, enclosing + (node,))


def iter_sites(nodes) -> Iterator[tuple[int, Access, tuple[Loop, ...]]]:
    """Static references in program order: ``(site, access, enclosing loops)``."""
    site = 0
    for node, enclosing in walk(nodes):
        if isinstance(node, Stmt):
            for acc in node.accesses:
                yield site, acc, enclosing
                site += 1


def loops_of(nodes) -> list[Loop]:
    return [n for n, _ in walk(nodes) if isinstance(n, Loop)]


def validate(spec: LoopNestSpec) -> None:
    arity: dict[str, int] = {}
    for _, acc, enclosing in iter_sites(spec.body):
        if isinstance(acc, ArrayAccess):
            bound = {lp.iterator for lp in enclosing}
            for ix in acc.indices:
                if ix not in bound:
                    raise UnknownIterator(f"{access_text(acc)}: {ix!r} is not an enclosing iterator")
            if arity.setdefault(acc.array, len(acc.indices)) != len(acc.indices):
                raise NonRectangularFootprint(f"array {acc.array!r} indexed with different arities")


def _resolve_bound(bound, params) -> int:
    if isinstance(bound, int):
        value = bound
    elif bound.lstrip("-").isdigit():
        value = int(bound)
    elif bound in params:
        value = int(params[bound])
    else:
        raise UnresolvedParam(f"loop bound {bound!r} has no value")
    if value < 1:
        raise InputError(f"loop bound {bound!r} resolves to {value}; must be >= 1")
    return value


def resolve(spec: LoopNestSpec, params: dict | None = None, dataset: str | None = None) -> LoopNestSpec:
    """Substitute integer bounds. Precedence: explicit params > dataset > spec defaults."""
    merged = dict(spec.params)
    if dataset is not None:
        if dataset not in spec.datasets:
            raise InputError(f"{spec.name}: unknown dataset {dataset!r} (have {sorted(spec.datasets)})")
        merged.update(spec.datasets[dataset])
    merged.update(params or {})

    def sub(node):
        if isinstance(node, Loop):
            return Loop(node.iterator, _resolve_bound(node.bound, merged), tuple(sub(b) for b in node.body))
        return node

    return LoopNestSpec(spec.name, tuple(sub(n) for n in spec.body), merged, spec.datasets)


def _require_resolved(nodes):
    for lp in loops_of(nodes):
        if not isinstance(lp.bound, int):
            raise UnresolvedParam(f"loop {lp.iterator!r} bound {lp.bound!r} is unresolved")


def _body(spec_or_nodes):
    return spec_or_nodes.body if isinstance(spec_or_nodes, LoopNestSpec) else tuple(spec_or_nodes)


def with_bounds(nodes, bounds) -> tuple[Node, ...]:
    """Copy of ``nodes`` with loops (in preorder) given the bounds in ``bounds``."""
    bounds = list(bounds)
    pos = 0

    def sub(node):
        nonlocal pos
        if isinstance(node, Loop):
            b = bounds[pos]
            pos += 1
            return Loop(node.iterator, int(b), tuple(sub(x) for x in node.body))
        return node

    out = tuple(sub(n) for n in nodes)
    if pos != len(bounds):
        raise ValueError(f"{len(bounds)} bounds given for {pos} loops")
    return out


def count_accesses(spec_or_nodes) -> int:
    """Closed-form event count: per statement, its accesses times the enclosing trip counts."""
    nodes = _body(spec_or_nodes)
    _require_resolved(nodes)
    return sum(
        len(node.accesses) * prod(lp.bound for lp in enclosing)
        for node, enclosing in walk(nodes)
        if isinstance(node, Stmt)
    )


# ----------------------------------------------------------------------------- synthesis

def _emit(node: Node, out: list[Token]):
    if isinstance(node, Loop):
        out.append(ScalarRef(node.iterator))
        out.append(LoopBegin(node.bound, node.iterator))
        for b in node.body:
            _emit(b, out)
        out.append(LoopEnd())
        return
    for acc in node.accesses:
        if isinstance(acc, ScalarAccess):
            out.append(ScalarRef(acc.name))
        else:
            out.extend(ScalarRef(ix) for ix in acc.indices)
            out.append(ArrayRef(acc.array, acc.indices))


def synth_annotated(spec: LoopNestSpec) -> AnnotatedTrace:
    """Emit the loop-annotated trace: ``it, [N, body.., ]`` per loop, index loads before arrays."""
    _require_resolved(spec.body)
    validate(spec)
    out: list[Token] = []
    for node in spec.body:
        _emit(node, out)
    return make_trace(out)


def nodes_from_tokens(tokens, iterators=frozenset(), iterator_refs: bool = False) -> tuple[Node, ...]:
    """Rebuild a node tree from trace tokens.

    Scalar tokens naming a loop iterator are loop bookkeeping and are dropped
    unless ``iterator_refs`` is set.
    """
    iterators = set(iterators) | {t.iterator for t in tokens if isinstance(t, LoopBegin) and t.iterator}
    root: list[Node] = []
    stack: list[tuple[list, LoopBegin | None, tuple[str, ...]]] = [(root, None, ())]
    pending: list[Access] = []
    n_anon = 0

    def flush():
        if pending:
            stack[-1][0].append(Stmt(tuple(pending)))
            pending.clear()

    for tok in tokens:
        items, _, scope = stack[-1]
        if isinstance(tok, ScalarRef):
            if tok.name in iterators and not iterator_refs:
                continue
            pending.append(ScalarAccess(tok.name))
        elif isinstance(tok, ArrayRef):
            for ix in tok.indices:
                if ix not in scope:
                    raise UnknownIterator(f"{tok.array}_array-{'-'.join(tok.indices)}: {ix!r} not bound")
            pending.append(ArrayAccess(tok.array, tok.indices))
        elif isinstance(tok, LoopBegin):
            flush()
            it = tok.iterator
            if it is None:
                it = f"_loop{n_anon}"
                n_anon += 1
            if it in scope:
                raise InputError(f"loop iterator {it!r} shadows an enclosing loop")
            stack.append(([], tok, scope + (it,)))
        elif isinstance(tok, LoopEnd):
            flush()
            body, begin, scope = stack.pop()
            stack[-1][0].append(Loop(scope[-1], begin.trip_count, tuple(body)))
    flush()
    if len(stack) != 1:
        raise InputError("unbalanced tokens")
    return tuple(root)


def spec_from_trace(trace: AnnotatedTrace, name: str = "trace", iterator_refs: bool = False) -> LoopNestSpec:
    body = nodes_from_tokens(trace.tokens, trace_iterators(trace), iterator_refs)
    spec = LoopNestSpec(name, body)
    validate(spec)
    return spec


# ----------------------------------------------------------------------------- unrolling

def iter_accesses(nodes):
    """Yield ``(site, location, context)`` in execution order.

    ``context`` is a tuple of ``(loop_id, value)`` for the enclosing loops,
    outermost first; loop ids number loops in preorder.
    """
    nodes = tuple(nodes)
    _require_resolved(nodes)
    site_of: dict[int, int] = {}
    loop_id: dict[int, int] = {}
    counter = 0
    for node, _ in walk(nodes):
        if isinstance(node, Stmt):
            site_of[id(node)] = counter
            counter += len(node.accesses)
        else:
            loop_id[id(node)] = len(loop_id)

    def run(items, env, ctx):
        for node in items:
            if isinstance(node, Loop):
                lid = loop_id[id(node)]
                for v in range(node.bound):
                    env[node.iterator] = v
                    yield from run(node.body, env, ctx + ((lid, v),))
                del env[node.iterator]
            else:
                base = site_of[id(node)]
                for off, acc in enumerate(node.accesses):
                    if isinstance(acc, ScalarAccess):
                        loc = (acc.name, ())
                    else:
                        loc = (acc.array, tuple(env[ix] for ix in acc.indices))
                    yield base + off, loc, ctx

    yield from run(nodes, {}, ())


def _check_cap(n: int, cap: int | None):
    cap = unroll_cap() if cap is None else cap
    if n > cap:
        raise CapExceeded(f"unrolling would produce {n} events (cap {cap}; set RS_UNROLL_CAP to raise)")


def unroll(spec_or_nodes, cap: int | None = None) -> list[AccessEvent]:
    nodes = _body(spec_or_nodes)
    _check_cap(count_accesses(nodes), cap)
    return [AccessEvent(loc, seq, site, ctx) for seq, (site, loc, ctx) in enumerate(iter_accesses(nodes))]


# ----------------------------------------------------------------------------- footprints

def array_shapes(spec_or_nodes) -> dict[str, tuple[int, ...]]:
    """Covering extent per array: per dimension, the largest bound of any iterator used there."""
    nodes = _body(spec_or_nodes)
    _require_resolved(nodes)
    shapes: dict[str, list[int]] = {}
    for _, acc, enclosing in iter_sites(nodes):
        if not isinstance(acc, ArrayAccess):
            continue
        bound = {lp.iterator: lp.bound for lp in enclosing}
        try:
            dims = [bound[ix] for ix in acc.indices]
        except KeyError as exc:
            raise UnknownIterator(f"{access_text(acc)}: {exc.args[0]!r} is not an enclosing iterator") from None
        cur = shapes.setdefault(acc.array, dims)
        if len(cur) != len(dims):
            raise NonRectangularFootprint(f"array {acc.array!r} indexed with different arities")
        shapes[acc.array] = [max(a, b) for a, b in zip(cur, dims)]
    return {k: tuple(v) for k, v in shapes.items()}


def scalar_names(spec_or_nodes) -> list[str]:
    seen: dict[str, None] = {}
    for _, acc, _ in iter_sites(_body(spec_or_nodes)):
        if isinstance(acc, ScalarAccess):
            seen.setdefault(acc.name)
    return list(seen)


def footprint(spec_or_nodes, array: str) -> IndexRegion:
    shapes = array_shapes(spec_or_nodes)
    if array not in shapes:
        raise InputError(f"array {array!r} is not accessed")
    return IndexRegion.from_shape(array, shapes[array])


def footprints(spec_or_nodes) -> dict[str, IndexRegion]:
    return {a: IndexRegion.from_shape(a, s) for a, s in array_shapes(spec_or_nodes).items()}


# ----------------------------------------------------------------------------- dense id streams

class LocationMap:
    """Dense integer ids: scalars first, then each array row-major over its covering extent."""

    def __init__(self, spec_or_nodes):
        nodes = _body(spec_or_nodes)
        self.scalars = {name: i for i, name in enumerate(scalar_names(nodes))}
        self.shapes = array_shapes(nodes)
        self.offsets: dict[str, int] = {}
        nxt = len(self.scalars)
        for name, shape in self.shapes.items():
            self.offsets[name] = nxt
            nxt += prod(shape)
        self.size = nxt

    def strides(self, array: str) -> tuple[int, ...]:
        shape = self.shapes[array]
        out = []
        acc = 1
        for n in reversed(shape):
            out.append(acc)
            acc *= n
        return tuple(reversed(out))

    def id_of(self, location) -> int:
        name, idx = location
        if not idx:
            return self.scalars[name]
        return self.offsets[name] + sum(i * s for i, s in zip(idx, self.strides(name)))


def _template(items, lmap: LocationMap):
    """Vectorized event table for one execution of ``items``.

    Returns ``(base_ids, coeffs)``; coeffs maps iterator -> per-event stride so that
    id = base + sum(coeff[it] * value(it)). Iterators bound inside ``items`` are
    already folded into ``base``.
    """
    bases: list[np.ndarray] = []
    coeff_parts: list[dict] = []
    for node in items:
        if isinstance(node, Stmt):
            b, c = [], {}
            for k, acc in enumerate(node.accesses):
                if isinstance(acc, ScalarAccess):
                    b.append(lmap.scalars[acc.name])
                else:
                    b.append(lmap.offsets[acc.array])
                    for ix, st in zip(acc.indices, lmap.strides(acc.array)):
                        c.setdefault(ix, [0] * len(node.accesses))[k] += st
            bases.append(np.asarray(b, dtype=np.int64))
            coeff_parts.append({ix: np.asarray(v, dtype=np.int64) for ix, v in c.items()})
        else:
            ib, ic = _template(node.body, lmap)
            m = len(ib)
            vals = np.repeat(np.arange(node.bound, dtype=np.int64), m)
            base = np.tile(ib, node.bound)
            own = ic.pop(node.iterator, None)
            if own is not None:
                base += np.tile(own, node.bound) * vals
            bases.append(base)
            coeff_parts.append({ix: np.tile(v, node.bound) for ix, v in ic.items()})
    if not bases:
        return np.zeros(0, dtype=np.int64), {}
    base = np.concatenate(bases)
    names = set().union(*coeff_parts)
    coeffs = {}
    for ix in names:
        coeffs[ix] = np.concatenate(
            [part.get(ix, np.zeros(len(b), dtype=np.int64)) for part, b in zip(coeff_parts, bases)]
        )
    return base, coeffs


def iter_id_chunks(spec_or_nodes, lmap: LocationMap | None = None, chunk: int = 1 << 22,
                   cap: int | None = None):
    """Yield the unrolled stream as int64 location-id arrays (bounded memory)."""
    nodes = _body(spec_or_nodes)
    _check_cap(count_accesses(nodes), cap)
    lmap = lmap or LocationMap(nodes)
    for node in nodes:
        if isinstance(node, Stmt):
            base, _ = _template([node], lmap)
            if len(base):
                yield base
            continue
        base, coeffs = _template(node.body, lmap)
        m = len(base)
        if m == 0:
            continue
        own = coeffs.pop(node.iterator, np.zeros(m, dtype=np.int64))
        if coeffs:
            raise UnknownIterator(f"unbound iterators {sorted(coeffs)} in top-level loop")
        group = max(1, chunk // m)
        for start in range(0, node.bound, group):
            vals = np.arange(start, min(node.bound, start + group), dtype=np.int64)
            yield (base[None, :] + own[None, :] * vals[:, None]).ravel()


def event_table(spec_or_nodes, lmap: LocationMap | None = None):
    """Unrolled stream as arrays ``(ids, sites, ctx)``.

    ``ctx[e, lid]`` is the value of loop ``lid`` (preorder) at event ``e``, or
    -1 when that loop does not enclose the event. Meant for small bounds.
    """
    nodes = _body(spec_or_nodes)
    _require_resolved(nodes)
    lmap = lmap or LocationMap(nodes)
    loop_id: dict[int, int] = {}
    site_of: dict[int, int] = {}
    counter = 0
    for node, _ in walk(nodes):
        if isinstance(node, Stmt):
            site_of[id(node)] = counter
            counter += len(node.accesses)
        else:
            loop_id[id(node)] = len(loop_id)
    width = len(loop_id)

    def build(items):
        parts = []
        for node in items:
            if isinstance(node, Stmt):
                k = len(node.accesses)
                base, coeffs = _template([node], lmap)
                sites = site_of[id(node)] + np.arange(k, dtype=np.int64)
                parts.append((base, coeffs, sites, np.full((k, width), -1, dtype=np.int64)))
                continue
            base, coeffs, sites, ctx = build(node.body)
            m, reps = len(base), node.bound
            vals = np.repeat(np.arange(reps, dtype=np.int64), m)
            base = np.tile(base, reps)
            own = coeffs.pop(node.iterator, None)
            if own is not None:
                base = base + np.tile(own, reps) * vals
            ctx = np.tile(ctx, (reps, 1))
            ctx[:, loop_id[id(node)]] = vals
            parts.append((base, {ix: np.tile(v, reps) for ix, v in coeffs.items()}, np.tile(sites, reps), ctx))
        if not parts:
            empty = np.zeros(0, dtype=np.int64)
            return empty, {}, empty, np.zeros((0, width), dtype=np.int64)
        names = set().union(*(p[1] for p in parts))
        coeffs = {ix: np.concatenate([p[1].get(ix, np.zeros(len(p[0]), dtype=np.int64)) for p in parts])
                  for ix in names}
        return (np.concatenate([p[0] for p in parts]), coeffs,
                np.concatenate([p[2] for p in parts]), np.concatenate([p[3] for p in parts]))

    ids, coeffs, sites, ctx = build(nodes)
    if coeffs:
        raise UnknownIterator(f"unbound iterators {sorted(coeffs)}")
    return ids, sites, ctx
