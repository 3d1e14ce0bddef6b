"""Reuse profile of one loop block from tiny bound configurations.

Every loop of the block is run at tiny bounds; reuse events are grouped
into structural classes and, per class, both the event count and the reuse
distance are fitted with a dilation polynomial and evaluated at the real
bounds. Cold misses are not extrapolated: they are the block's array
footprints (kept as boxes for the merge step) plus its distinct scalars.

Classes are keyed by consumer site, producer site, the loop carrying the
reuse and a boundary signature of the consumer's iteration (first / interior
/ last position in each enclosing loop). Class counts are then products of
per-loop factors and fit exactly. Interior classes only exist once a loop
runs 3 times, so they are fitted from bounds 3 and 4 in that loop, and the
two interior iterations at bound 4 show how the distance moves along it.

Loops over the same array dimension move together when their bounds match.
When they differ, they are sampled on separate, ordered level ranges so the
shorter one stays shorter, and the key also notes where the producer sat in
loops that do not enclose the consumer.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product
from math import floor, prod

import numpy as np

from .errors import ClassMismatch, InputError
from .loopnest import (ArrayAccess, LocationMap, Loop, count_accesses, event_table, footprints, iter_sites, loops_of,
                       nodes_from_tokens, scalar_names, unroll, walk, with_bounds)
from .multilinear import BASE_BOUND, MAX_DEPTH, MultilinearModel, mobius, sample_configs
from .oracle import ReuseHistogram, TreeEngine, rd_naive
from .regions import IndexRegion
from .trace import Block, BlockKind

SAME_ITERATION = -1
RAMP_LIMIT = 1 << 20
FIRST, INTERIOR, LAST = "F", "I", "L"


@dataclass(frozen=True, order=True)
class ReuseClassKey:
    consumer_site: int
    producer_site: int
    carry_level: int  # preorder id of the loop carrying the reuse, or SAME_ITERATION
    position: tuple = ()  # ((loop_id, F|I|L), ...) over the consumer's enclosing loops
    producer_position: tuple = ()  # same, over producer loops not sampled with any consumer loop
    rank: int = 0  # ordinal among distinct distances sharing the other fields

    def label(self) -> str:
        pos = "".join(c for _, c in self.position)
        if self.producer_position:
            pos += "^" + "".join(c for _, c in self.producer_position)
        carry = "same" if self.carry_level == SAME_ITERATION else f"L{self.carry_level}"
        return f"{self.consumer_site}<-{self.producer_site}/{carry}/{pos or '-'}/{self.rank}"


@dataclass
class ClassFit:
    key: ReuseClassKey
    freq: MultilinearModel
    dist: MultilinearModel
    predicted_freq: int
    predicted_dist: int  # mean over the class
    base: tuple[int, ...] = ()  # corner base per sampling variable; increments are N - base
    slopes: tuple = ()  # ((subset of interior loops as bitmask, model), ...) over iteration offsets
    spread: tuple = ()  # ((distance, freq), ...) when the distance moves with the iteration
    variables: tuple[str, ...] = ()  # name per sampling variable, e.g. "i0+i3" for tied loops

    def bins(self) -> list[tuple[int, int]]:
        if self.spread:
            return list(self.spread)
        return [(self.predicted_dist, self.predicted_freq)] if self.predicted_freq else []

    def evaluate(self, sizes, incr) -> list[tuple[int, int]]:
        """Distance bins at the target, one per combination of interior iterations.

        ``sizes`` is how many consecutive interior iterations of each interior
        loop the class covers, counted from its anchor.
        """
        f = self.predicted_freq
        if f <= 0:
            return []
        d0 = self.dist(incr)
        sizes = [max(int(n), 1) for n in sizes]
        terms = [(t, c) for t, c in ((t, m(incr)) for t, m in self.slopes) if c]
        count = prod(sizes)
        if not terms:
            return [(round_half_up(d0), f)]
        if count > RAMP_LIMIT or f % count:
            mean = d0 + sum(c * prod((sizes[i] - 1) / 2 for i in range(len(sizes)) if t >> i & 1)
                            for t, c in terms)
            return [(round_half_up(mean), f)]
        dist = np.full(sizes, float(d0))
        for t, c in terms:
            term = np.ones([1] * len(sizes))
            for i, n in enumerate(sizes):
                if t >> i & 1:
                    shape = [1] * len(sizes)
                    shape[i] = n
                    term = term * np.arange(n).reshape(shape)
            dist = dist + c * term
        vals, reps = np.unique(np.floor(dist.ravel() + 0.5).astype(np.int64), return_counts=True)
        return list(zip(vals.tolist(), (reps * (f // count)).tolist()))


@dataclass
class BlockProfile:
    histogram: ReuseHistogram  # reuse bins only
    cold_regions: dict[str, IndexRegion]
    cold_scalars: tuple[str, ...]
    block_ordinal: int
    kind: str = BlockKind.LOOP.value
    total: int = 0
    warnings: list[str] = field(default_factory=list)
    classes: list[ClassFit] = field(default_factory=list, repr=False)
    loop_names: tuple[str, ...] = ()
    nodes: tuple = field(default=(), repr=False, compare=False)  # at real bounds, for cross-block sampling

    @property
    def cold_scalar_count(self) -> int:
        return len(self.cold_scalars)

    @property
    def cold_total(self) -> int:
        return sum(r.size for r in self.cold_regions.values()) + self.cold_scalar_count

    def to_json(self) -> dict:
        return {
            "ordinal": self.block_ordinal,
            "kind": self.kind,
            "total": self.total,
            "bins": self.histogram.to_json()["bins"],
            "cold_regions": [self.cold_regions[a].to_json() for a in sorted(self.cold_regions)],
            "cold_scalars": list(self.cold_scalars),
            "cold_scalar_count": self.cold_scalar_count,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, obj: dict) -> BlockProfile:
        regions = [IndexRegion.from_json(r) for r in obj.get("cold_regions", [])]
        return cls(
            histogram=ReuseHistogram({int(d): int(f) for d, f in obj.get("bins", {}).items()}),
            cold_regions={r.array: r for r in regions},
            cold_scalars=tuple(obj.get("cold_scalars", [])),
            block_ordinal=int(obj.get("ordinal", 0)),
            kind=obj.get("kind", BlockKind.LOOP.value),
            total=int(obj.get("total", 0)),
            warnings=list(obj.get("warnings", [])),
        )


def carry_of(consumer_ctx: tuple, producer_ctx: tuple) -> int:
    for (lc, vc), (lp, vp) in zip(consumer_ctx, producer_ctx):
        if lc != lp:
            return SAME_ITERATION
        if vc != vp:
            return lc
    return SAME_ITERATION


def _position(ctx: tuple, bounds) -> tuple:
    out = []
    for lid, v in ctx:
        n = bounds[lid]
        out.append((lid, FIRST if v == 0 else LAST if v == n - 1 else INTERIOR))
    return tuple(out)


def class_key_fn(bounds, signature: bool = True):
    """Key function for ``rd_by_class``; ``bounds`` is indexed by preorder loop id."""

    def key(consumer, producer):
        return ReuseClassKey(
            consumer.site,
            producer.site,
            carry_of(consumer.context, producer.context),
            _position(consumer.context, bounds) if signature else (),
        )

    return key


def _hamming_fill(vals: list):
    present = [m for m, v in enumerate(vals) if v is not None]
    if not present:
        raise ClassMismatch("class never observed")
    for m, v in enumerate(vals):
        if v is None:
            best = min(present, key=lambda p: (bin(p ^ m).count("1"), p))
            vals[m] = vals[best]
    return vals


def round_half_up(x) -> int:
    return int(floor(x + 0.5))


def _dimension_users(nodes):
    """Preorder loop ids per ``(array, dimension)`` they index, and each loop's enclosing ids."""
    loops = loops_of(nodes)
    lid = {id(lp): k for k, lp in enumerate(loops)}
    anc = {lid[id(n)]: {lid[id(e)] for e in enc} for n, enc in walk(nodes) if isinstance(n, Loop)}
    by_dim: dict[tuple, list[int]] = {}
    for _, acc, enc in iter_sites(nodes):
        if not isinstance(acc, ArrayAccess):
            continue
        names = {lp.iterator: lid[id(lp)] for lp in enc}
        for d, ix in enumerate(acc.indices):
            if ix in names:
                by_dim.setdefault((acc.array, d), []).append(names[ix])
    return by_dim, anc


def tie_groups(nodes, target) -> list[list[int]]:
    """Loops sampled as one variable, as lists of preorder loop ids.

    Loops that index the same array dimension and have the same target bound
    move together, unless one encloses the other. Sampling them independently
    would make footprints depend on ``min`` of their bounds, which no
    multilinear model represents. Loops with target bound 1 are left out.
    """
    nodes = tuple(nodes)
    by_dim, anc = _dimension_users(nodes)
    group = {k: [k] for k, b in enumerate(target) if b >= BASE_BOUND}

    def compatible(a, b):
        return all(target[x] == target[y] and x not in anc[y] and y not in anc[x] for x in a for y in b)

    for ks in by_dim.values():
        ks = [k for k in ks if k in group]
        for k in ks[1:]:
            a, b = group[ks[0]], group[k]
            if a is not b and compatible(a, b):
                a.extend(b)
                for x in b:
                    group[x] = a
    seen, out = set(), []
    for k in sorted(group):
        g = group[k]
        if id(g) not in seen:
            seen.add(id(g))
            out.append(sorted(g))
    return out


def group_floors(nodes, target, groups, span: int = 3) -> list[int]:
    """Per sampling variable, how far above the usual levels it is sampled.

    Untied loops over the same array dimension with different target bounds
    are sampled on disjoint level ranges ordered like their targets, so that
    which of them is shorter never changes between samples and the target.
    """
    by_dim, _ = _dimension_users(tuple(nodes))
    group_of = {lid: g for g, members in enumerate(groups) for lid in members}
    below: dict[int, set[int]] = {g: set() for g in range(len(groups))}
    for ks in by_dim.values():
        gs = {group_of[k] for k in ks if k in group_of}
        for a in gs:
            for b in gs:
                if target[groups[a][0]] < target[groups[b][0]]:
                    below[b].add(a)
    floors: list[int] = [0] * len(groups)
    for g in sorted(range(len(groups)), key=lambda g: target[groups[g][0]]):
        floors[g] = max((floors[a] + span for a in below[g]), default=0)
    return floors


_CODE = {1: FIRST, 2: INTERIOR, 3: LAST}


def site_chains(nodes) -> list[tuple[int, ...]]:
    """Per static site, the preorder ids of its enclosing loops, outermost first."""
    lid = {id(lp): k for k, lp in enumerate(loops_of(nodes))}
    return [tuple(lid[id(lp)] for lp in enc) for _, _, enc in iter_sites(nodes)]


def classify_events(nodes, *, signature: bool = True, consumers: range | None = None,
                    producers: range | None = None, groups=None) -> dict:
    """Reuse classes of the unrolled ``nodes`` (bounds as written).

    Returns ``{(key, fine): [(distance, count), ...]}`` with distances
    ascending; ``fine`` holds the consumer's iteration in each loop where it
    is interior. Only consumers and producers at the given sites are kept.
    Vectorized equivalent of ``rd_by_class`` with ``class_key_fn``.

    With ``groups`` (the sampling variables, as from ``tie_groups``) the key
    also records the producer's position in its loops whose variable does
    not enclose the consumer; there the consumer's position says nothing
    about where the producer ran.
    """
    nodes = tuple(nodes)
    lmap = LocationMap(nodes)
    ids, sites, ctx = event_table(nodes, lmap)
    dists = TreeEngine(lmap.size).feed(ids, want_distances=True)
    order = np.argsort(ids, kind="stable")
    prev = np.full(len(ids), -1, dtype=np.int64)
    same = ids[order[1:]] == ids[order[:-1]]
    prev[order[1:][same]] = order[:-1][same]
    keep = prev >= 0
    if consumers is not None:
        keep &= (sites >= consumers.start) & (sites < consumers.stop)
    if producers is not None:
        psites = sites[np.maximum(prev, 0)]
        keep &= (psites >= producers.start) & (psites < producers.stop)
    ev = np.nonzero(keep)[0]
    if not len(ev):
        return {}
    c, p, d = sites[ev], sites[prev[ev]], dists[ev]
    cctx, pctx = ctx[ev], ctx[prev[ev]]
    chains = site_chains(nodes)
    width = ctx.shape[1]
    coding = signature and width
    if coding:
        last = np.array([lp.bound - 1 for lp in loops_of(nodes)], dtype=np.int64)

        def code_of(x):
            return np.where(x < 0, 0, np.where(x == 0, 1, np.where(x == last, 3, 2)))

    pairs = np.unique(np.stack([c, p], axis=1), axis=0).tolist()
    extras = {}
    if coding and groups is not None:
        group_of = {lid: g for g, members in enumerate(groups) for lid in members}
        for a, b in pairs:
            mine = {group_of.get(x) for x in chains[a]}
            extra = [y for y in chains[b] if y in group_of and group_of[y] not in mine]
            if extra:
                extras[a, b] = extra
    pcodes = np.zeros((len(ev), width if extras else 0), dtype=np.int64)
    for (a, b), extra in extras.items():
        sel = np.nonzero((c == a) & (p == b))[0]
        pcodes[np.ix_(sel, extra)] = code_of(pctx[sel])[:, extra]
    carry = np.full(len(ev), SAME_ITERATION, dtype=np.int64)
    for a, b in pairs:
        common = []
        for x, y in zip(chains[a], chains[b]):
            if x != y:
                break
            common.append(x)
        if not common:
            continue
        sel = np.nonzero((c == a) & (p == b))[0]
        diff = cctx[sel][:, common] != pctx[sel][:, common]
        hit = diff.any(axis=1)
        carry[sel[hit]] = np.asarray(common)[diff[hit].argmax(axis=1)]
    if coding:
        codes = code_of(cctx)
        fine = np.where(codes == 2, cctx, -1)
    else:
        codes = fine = np.zeros((len(ev), 0), dtype=np.int64)
    rows, counts = np.unique(np.column_stack([c, p, carry, codes, fine, pcodes, d]), axis=0,
                             return_counts=True)
    out: dict = {}
    keys: dict = {}
    k, kp = codes.shape[1], pcodes.shape[1]
    for row, n in zip(rows.tolist(), counts.tolist()):
        cs, ps, cl = row[0], row[1], row[2]
        code, pc = tuple(row[3:3 + k]), tuple(row[3 + 2 * k:3 + 2 * k + kp])
        key = keys.get((cs, ps, cl, code, pc))
        if key is None:
            pos = tuple((lid, _CODE[code[lid]]) for lid in chains[cs]) if signature else ()
            ppos = tuple((lid, _CODE[pc[lid]]) for lid in chains[ps] if pc[lid]) if kp else ()
            key = keys[cs, ps, cl, code, pc] = ReuseClassKey(cs, ps, cl, pos, ppos)
        fn = tuple(row[3 + k + lid] for lid in chains[cs] if code[lid] == 2) if signature else ()
        out.setdefault((key, fn), []).append((row[-1], n))
    return out


def _corner_models(vals: list, depth: int) -> MultilinearModel:
    return MultilinearModel(depth, tuple(mobius(_hamming_fill(list(vals)))))


def sample_classes(nodes, target, *, signature: bool = True, max_depth: int = MAX_DEPTH,
                   consumers: range | None = None,
                   producers: range | None = None) -> tuple[list[ClassFit], list[str]]:
    """Fit every reuse class of ``nodes`` and evaluate it at ``target``.

    Each sampling variable runs at 2 and 3, plus 4 when it encloses a
    consumer and signatures are on. A class sits on the {2,3} corners in
    loops where it is at the first or last iteration and on {3,4} where it is
    interior; there the first interior iteration anchors the distance and the
    interior iterations seen at bound 4 give its per-iteration terms.
    """
    nodes = tuple(nodes)
    groups = tie_groups(nodes, target)
    depth = len(groups)
    if depth:
        sample_configs(depth, max_depth)  # depth check
    group_of = {lid: g for g, members in enumerate(groups) for lid in members}
    chains = site_chains(nodes)
    inner = {lid for s in (consumers if consumers is not None else range(len(chains))) for lid in chains[s]}
    if producers is not None:
        inner |= {lid for s in producers for lid in chains[s]}
    floors = group_floors(nodes, target, groups)
    levels = [tuple(BASE_BOUND + floors[g] + x for x in ((0, 1, 2) if signature and inner & set(members) else (0, 1)))
              for g, members in enumerate(groups)]

    observed: dict[ReuseClassKey, dict] = {}
    ranked: dict = {}
    for cfg in product(*levels):
        b = list(target)
        for g, members in enumerate(groups):
            for lid in members:
                b[lid] = cfg[g]
        found = classify_events(with_bounds(nodes, b), signature=signature, consumers=consumers,
                                producers=producers, groups=groups)
        for (key, fine), items in found.items():
            for rank, dc in enumerate(items):
                k = ranked.get((key, rank))
                if k is None:
                    k = ranked[key, rank] = replace(key, rank=rank) if rank else key
                observed.setdefault(k, {}).setdefault(cfg, {})[fine] = dc

    bound_of = [target[members[0]] for members in groups]
    loops = loops_of(nodes)
    names = tuple("+".join(f"{loops[lid].iterator}{lid}" for lid in members) for members in groups)
    warnings: list[str] = []
    fits: list[ClassFit] = []
    for key in sorted(observed):
        seen = observed[key]
        interior = [group_of[lid] for lid, where in key.position if where == INTERIOR and lid in group_of]
        raised = set(interior) | {group_of[lid] for lid, where in key.producer_position if where == INTERIOR}
        base = [BASE_BOUND + floors[g] + (g in raised) for g in range(depth)]
        corners = [tuple(base[g] + (m >> g & 1) for g in range(depth)) for m in range(1 << depth)]
        counts = [sum(c for _, c in seen.get(cfg, {}).values()) for cfg in corners]
        if not any(counts):
            continue  # only seen off the class's own corners
        freq_model = MultilinearModel(depth, tuple(mobius(counts)))
        anchors = [_anchor(seen.get(cfg, {})) for cfg in corners]
        dist_model = _corner_models(anchors, depth)
        slopes = []
        for t in range(1, 1 << len(interior)):
            vals = [_offset_term(seen.get(corners[_raise(m, t, interior)], {}), t, len(interior))
                    for m in range(1 << depth)]
            if any(v is not None for v in vals):
                slopes.append((t, _corner_models(vals, depth)))
        incr = [bound_of[g] - base[g] for g in range(depth)]
        f = freq_model(incr)
        if f < 0:
            warnings.append(f"NegativePrediction: class {key.label()} frequency {f} clamped to 0")
            f = 0
        fit = ClassFit(key, freq_model, dist_model, int(f), 0, tuple(base), tuple(slopes), variables=names)
        bins = fit.evaluate(_extents(seen, corners, len(interior), depth, incr), incr)
        if any(d < 0 for d, _ in bins):
            warnings.append(f"NegativePrediction: class {key.label()} distance below 0 clamped to 0")
            bins = _merge_bins((max(d, 0), c) for d, c in bins)
        mean = sum(d * c for d, c in bins) / f if f else 0
        fits.append(replace(fit, predicted_dist=round_half_up(mean), spread=tuple(bins) if len(bins) > 1 else ()))
    return fits, warnings


def _extents(seen: dict, corners: list, k: int, depth: int, incr) -> list[int]:
    """Per interior loop, the fitted number of distinct interior iterations the class occupies.

    Usually ``N - 2``; less when a sibling loop with a smaller bound limits
    which iterations reuse at all.
    """
    out = []
    for idx in range(k):
        vals = [len({fine[idx] for fine in seen[cfg]}) if seen.get(cfg) else None for cfg in corners]
        out.append(round_half_up(_corner_models(vals, depth)(incr)))
    return out


def _first_fine(at: dict) -> tuple:
    return tuple(min(col) for col in zip(*at)) if at else ()


def _anchor(at: dict):
    """Distance at the class's first interior iteration in every interior loop."""
    if not at:
        return None
    first = _first_fine(at)
    return at[first][0] if first in at else at[min(at)][0]


def _raise(mask: int, t: int, interior: list[int]) -> int:
    for idx, g in enumerate(interior):
        if t >> idx & 1:
            mask |= 1 << g
    return mask


def _offset_term(at: dict, t: int, k: int):
    """Moebius difference over the first two interior iterations of the loops in ``t``; None if unusable."""
    first = _first_fine(at)
    if not first:
        return None
    total, count = 0, None
    sub = t
    while True:
        fine = tuple(first[idx] + (sub >> idx & 1) for idx in range(k))
        got = at.get(fine)
        if got is None or (count is not None and got[1] != count):
            return None
        count = got[1]
        total += (-1) ** (bin(t).count("1") - bin(sub).count("1")) * got[0]
        if not sub:
            return total
        sub = (sub - 1) & t


def _merge_bins(pairs) -> list[tuple[int, int]]:
    out: dict[int, int] = {}
    for d, c in pairs:
        if c:
            out[d] = out.get(d, 0) + c
    return sorted(out.items())


def predict_nodes(nodes, bounds=None, *, ordinal: int = 0, signature: bool = True,
                  max_depth: int = MAX_DEPTH) -> BlockProfile:
    """Predict the reuse profile of ``nodes`` (typically one top-level loop) at ``bounds``.

    ``bounds`` gives the trip count of every loop in preorder and defaults to
    the bounds written in the nodes.
    """
    nodes = tuple(nodes)
    loops = loops_of(nodes)
    target = [int(b) for b in (bounds if bounds is not None else [lp.bound for lp in loops])]
    if len(target) != len(loops):
        raise InputError(f"{len(target)} bounds for {len(loops)} loops")
    if any(b < 1 for b in target):
        raise InputError(f"bounds must be positive: {target}")

    fits, warnings = sample_classes(nodes, target, signature=signature, max_depth=max_depth)
    hist = ReuseHistogram()
    for fit in fits:
        for d, c in fit.bins():
            hist.add(d, c)
    real = with_bounds(nodes, target)
    prof = BlockProfile(hist, footprints(real), tuple(scalar_names(real)), ordinal, BlockKind.LOOP.value,
                        count_accesses(real), warnings, fits, tuple(lp.iterator for lp in loops), real)
    _reconcile(prof)
    return prof


def _reconcile(prof: BlockProfile) -> None:
    """Force bins + cold to equal the exact access count of the block."""
    residual = prof.total - prof.cold_total - prof.histogram.total
    if not residual:
        return
    prof.warnings.append(f"reuse count off by {residual} from the closed-form total; adjusted")
    hist = prof.histogram
    if residual > 0:
        if hist.bins:
            target = max(hist.bins.items(), key=lambda kv: (kv[1], -kv[0]))[0]
        else:
            target = 0
        hist.add(target, residual)
        return
    need = -residual
    for dist, freq in sorted(hist.bins.items(), key=lambda kv: (-kv[1], kv[0])):
        take = min(freq, need)
        hist.add(dist, -take)
        need -= take
        if not need:
            break


def predict_block(block: Block, bounds=None, *, iterators=frozenset(), iterator_refs: bool = False,
                  signature: bool = True, max_depth: int = MAX_DEPTH) -> BlockProfile:
    if block.kind is not BlockKind.LOOP:
        raise InputError(f"block {block.ordinal} is not a loop block")
    nodes = nodes_from_tokens(block.tokens, iterators, iterator_refs)
    if not any(isinstance(n, Loop) for n in nodes):
        raise InputError(f"block {block.ordinal} holds no loop")
    return predict_nodes(nodes, bounds, ordinal=block.ordinal, signature=signature, max_depth=max_depth)


def plain_profile(block: Block, *, iterators=frozenset(), iterator_refs: bool = False) -> BlockProfile:
    """Exact profile of a loop-free block."""
    nodes = nodes_from_tokens(block.tokens, iterators, iterator_refs)
    events = unroll(nodes)
    hist, _ = rd_naive(events)
    return BlockProfile(hist.reuse_only(), footprints(nodes), tuple(scalar_names(nodes)), block.ordinal,
                        BlockKind.PLAIN.value, len(events), nodes=tuple(nodes))
