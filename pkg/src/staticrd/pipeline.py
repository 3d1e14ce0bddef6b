"""End-to-end static prediction and the exact oracle, from traces or nest specs."""
from __future__ import annotations

from .loopnest import LocationMap, LoopNestSpec, count_accesses, iter_id_chunks, synth_annotated
from .merge import ProgramProfile, merge
from .multilinear import MAX_DEPTH
from .oracle import rd_id_chunks
from .predictor import plain_profile, predict_block
from .trace import AnnotatedTrace, BlockKind, separate_blocks, trace_iterators


def predict_trace(trace: AnnotatedTrace, *, iterator_refs: bool = False, signature: bool = True,
                  max_depth: int = MAX_DEPTH, cross: str = "sampled") -> ProgramProfile:
    iterators = trace_iterators(trace)
    profiles = []
    for block in separate_blocks(trace):
        if block.kind is BlockKind.LOOP:
            profiles.append(predict_block(block, iterators=iterators, iterator_refs=iterator_refs,
                                          signature=signature, max_depth=max_depth))
        else:
            profiles.append(plain_profile(block, iterators=iterators, iterator_refs=iterator_refs))
    return merge(profiles, cross=cross)


def predict_spec(spec: LoopNestSpec, **kw) -> ProgramProfile:
    return predict_trace(synth_annotated(spec), **kw)


def oracle_spec(spec: LoopNestSpec, cap: int | None = None) -> ProgramProfile:
    lmap = LocationMap(spec)
    hist = rd_id_chunks(iter_id_chunks(spec, lmap, cap=cap), lmap.size)
    if hist.total != count_accesses(spec):
        raise AssertionError("oracle event count disagrees with the closed form")
    return ProgramProfile(hist, source="oracle")
