"""Combine per-block profiles into one program-wide reuse histogram.

Each block reports its own first touches as cold. Walking blocks in order,
every location a block shares with earlier blocks is taken out of its cold
count and turned into a reuse against the most recent earlier block that
touched it, at the distance

    (|footprint(P)| - |footprint(P) & footprint(C)|) + sum of |footprint(B)| for P < B < C

for producer block P and consumer block C. That figure ignores where in P
and C the shared locations are touched, so by default the distances come
instead from sampling the sub-program running from P through C with the
same tiny-bound fits used inside blocks; only reuses that leave P and land
in C are kept, and their counts are scaled to the exact number of shared
locations. The formula remains the fallback when the sub-program has too
many loop variables to sample.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import DepthUnsupported, UnionTooComplex
from .loopnest import iter_sites, loops_of
from .oracle import COLD, ReuseHistogram
from .predictor import BlockProfile, sample_classes
from .regions import IndexRegion, region_intersect_size, subtract_all, total_size

DEFAULT_UNION_LIMIT = 8
PAIR_MAX_DEPTH = 6
CROSS_MODES = ("sampled", "formula")

__all__ = [
    "ProgramProfile", "region_intersect_size", "dedup_cold", "cross_block_reuse", "cross_block_sampled", "merge",
]


@dataclass
class ProgramProfile:
    histogram: ReuseHistogram
    per_block: list[BlockProfile] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    source: str = "static"

    def to_json(self) -> dict:
        out = self.histogram.to_json()
        out["source"] = self.source
        out["per_block"] = [b.to_json() for b in self.per_block]
        out["warnings"] = list(self.warnings)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> ProgramProfile:
        return cls(
            ReuseHistogram.from_json(obj),
            [BlockProfile.from_json(b) for b in obj.get("per_block", [])],
            list(obj.get("warnings", [])),
            obj.get("source", "static"),
        )


def _regions(block: BlockProfile) -> list[IndexRegion]:
    regs = [block.cold_regions[a] for a in sorted(block.cold_regions)]
    regs += [IndexRegion(s, ()) for s in block.cold_scalars]
    return regs


def footprint_size(block: BlockProfile) -> int:
    return block.cold_total


def footprint_overlap(a: BlockProfile, b: BlockProfile) -> int:
    theirs = {r.array: r for r in _regions(b)}
    n = 0
    for r in _regions(a):
        other = theirs.get(r.array)
        if other is not None and other.ndim == r.ndim:
            n += region_intersect_size(r, other)
    return n


def _attribute(blocks: list[BlockProfile], union_limit: int):
    """Per block: (deducted cold count, {producer index: shared locations})."""
    out = []
    for c, block in enumerate(blocks):
        deducted = 0
        shared: dict[int, int] = {}
        for reg in _regions(block):
            earlier = [
                (p, r) for p in range(c - 1, -1, -1)
                for r in _regions(blocks[p])
                if r.array == reg.array and r.ndim == reg.ndim and region_intersect_size(r, reg)
            ]
            if len(earlier) > union_limit:
                raise UnionTooComplex(
                    f"{reg.array}: {len(earlier)} overlapping earlier regions (limit {union_limit})")
            remaining = [reg]
            for p, r in earlier:  # nearest producer first
                before = total_size(remaining)
                remaining = subtract_all(remaining, r)
                got = before - total_size(remaining)
                if got:
                    shared[p] = shared.get(p, 0) + got
            deducted += reg.size - total_size(remaining)
        out.append((deducted, shared))
    return out


def dedup_cold(blocks: list[BlockProfile], union_limit: int = DEFAULT_UNION_LIMIT):
    """Returns ``(deducted per block, program-wide cold total)``."""
    att = _attribute(blocks, union_limit)
    deducted = [d for d, _ in att]
    cold = sum(b.cold_total for b in blocks) - sum(deducted)
    return deducted, cold


def cross_distance(blocks: list[BlockProfile], p: int, c: int) -> int:
    between = sum(footprint_size(blocks[k]) for k in range(p + 1, c))
    return footprint_size(blocks[p]) - footprint_overlap(blocks[p], blocks[c]) + between


def cross_block_reuse(blocks: list[BlockProfile], union_limit: int = DEFAULT_UNION_LIMIT) -> ReuseHistogram:
    """Cross-block reuses at the footprint-formula distance."""
    hist = ReuseHistogram()
    for c, (_, shared) in enumerate(_attribute(blocks, union_limit)):
        for p, count in sorted(shared.items()):
            hist.add(cross_distance(blocks, p, c), count)
    return hist


def _site_count(nodes) -> int:
    return sum(1 for _ in iter_sites(nodes))


def apportion(weights: list[int], total: int) -> list[int]:
    """Integer split of ``total`` proportional to ``weights`` (largest remainder)."""
    wsum = sum(weights)
    if wsum <= 0:
        raise ValueError("weights must have a positive sum")
    exact = [w * total / wsum for w in weights]
    out = [int(x) for x in exact]
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - out[i]), i))
    for i in order[: total - sum(out)]:
        out[i] += 1
    return out


def sampled_cross(blocks: list[BlockProfile], p: int, c: int, count: int,
                  max_depth: int = PAIR_MAX_DEPTH) -> list[tuple[int, int]] | None:
    """``[(distance, freq)]`` for reuses from block ``p`` into block ``c``, or None if unsampleable."""
    if not blocks[p].nodes or not blocks[c].nodes:
        return None
    parts = [blocks[k].nodes for k in range(p, c + 1) if blocks[k].nodes]
    sub = tuple(n for part in parts for n in part)
    p_end = _site_count(parts[0])
    c_start = _site_count(sub) - _site_count(parts[-1])

    try:
        fits, _ = sample_classes(sub, [lp.bound for lp in loops_of(sub)], max_depth=max_depth,
                                 consumers=range(c_start, _site_count(sub)), producers=range(0, p_end))
    except DepthUnsupported:
        return None
    bins = [b for f in fits for b in f.bins() if b[1] > 0]
    if not bins:
        return None
    freqs = apportion([c for _, c in bins], count)
    return [(d, n) for (d, _), n in zip(bins, freqs) if n]


def cross_block_sampled(blocks: list[BlockProfile], union_limit: int = DEFAULT_UNION_LIMIT,
                        max_depth: int = PAIR_MAX_DEPTH) -> tuple[ReuseHistogram, list[str]]:
    hist = ReuseHistogram()
    warnings: list[str] = []
    for c, (_, shared) in enumerate(_attribute(blocks, union_limit)):
        for p, count in sorted(shared.items()):
            got = sampled_cross(blocks, p, c, count, max_depth)
            if got is None:
                warnings.append(f"blocks {blocks[p].block_ordinal}->{blocks[c].block_ordinal}: "
                                f"cross-block distance from footprints")
                hist.add(cross_distance(blocks, p, c), count)
                continue
            for d, n in got:
                hist.add(d, n)
    return hist, warnings


def merge(blocks: list[BlockProfile], union_limit: int = DEFAULT_UNION_LIMIT,
          cross: str = "sampled") -> ProgramProfile:
    if cross not in CROSS_MODES:
        raise ValueError(f"cross mode must be one of {CROSS_MODES}")
    blocks = list(blocks)
    hist = ReuseHistogram()
    warnings: list[str] = []
    for b in blocks:
        hist = hist.merged(b.histogram.reuse_only())
        warnings.extend(f"block {b.block_ordinal}: {w}" for w in b.warnings)
    if cross == "sampled":
        extra, notes = cross_block_sampled(blocks, union_limit)
        warnings.extend(notes)
    else:
        extra = cross_block_reuse(blocks, union_limit)
    hist = hist.merged(extra)
    _, cold = dedup_cold(blocks, union_limit)
    hist.add(COLD, cold)
    return ProgramProfile(hist, blocks, warnings)
