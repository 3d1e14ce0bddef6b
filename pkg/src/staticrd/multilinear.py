"""Dilation polynomials: multilinear fits over the {2,3}^d bound cube.

With increments ``x_m = N_m - 2`` a sampled quantity is modelled as

    f(x) = sum over subsets T of c_T * prod(x_m for m in T)

and the coefficients are the Moebius transform of the corner values. For
d = 3 this is the eight-term equation (base, three single-loop terms, three
pairwise terms, one triple term).
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import prod
from typing import Mapping, Sequence

from .errors import DepthUnsupported, IncompleteSamples

BASE_BOUND = 2
MAX_DEPTH = 4


def sample_configs(depth: int, max_depth: int = MAX_DEPTH) -> list[tuple[int, ...]]:
    """All bound vectors in {2,3}^depth, base first, then by number of raised loops."""
    if depth < 1 or depth > max_depth:
        raise DepthUnsupported(f"loop depth {depth} outside supported range 1..{max_depth}")
    cube = product((BASE_BOUND, BASE_BOUND + 1), repeat=depth)
    return sorted(cube, key=lambda v: (sum(b - BASE_BOUND for b in v), v))


def _mask(vec: Sequence[int]) -> int:
    m = 0
    for dim, b in enumerate(vec):
        if b == BASE_BOUND + 1:
            m |= 1 << dim
        elif b != BASE_BOUND:
            raise IncompleteSamples(f"sample bound vector {tuple(vec)} is not in {{2,3}}^d")
    return m


def mobius(values: Sequence[int]) -> list[int]:
    """Corner values indexed by bitmask -> coefficients indexed by bitmask."""
    out = list(values)
    n = len(out)
    bit = 1
    while bit < n:
        for mask in range(n):
            if mask & bit:
                out[mask] -= out[mask ^ bit]
        bit <<= 1
    return out


@dataclass(frozen=True)
class MultilinearModel:
    depth: int
    coeffs: tuple[int, ...]  # indexed by subset bitmask; bit m <-> loop m

    def __post_init__(self):
        if len(self.coeffs) != 1 << self.depth:
            raise ValueError(f"{self.depth}-variable model needs {1 << self.depth} coefficients")

    def coefficient(self, dims) -> int:
        return self.coeffs[sum(1 << d for d in dims)]

    def as_dict(self) -> dict[frozenset, int]:
        return {
            frozenset(d for d in range(self.depth) if mask >> d & 1): c
            for mask, c in enumerate(self.coeffs)
        }

    def __call__(self, increments: Sequence[int]):
        if len(increments) != self.depth:
            raise ValueError(f"expected {self.depth} increments, got {len(increments)}")
        total = 0
        for mask, c in enumerate(self.coeffs):
            if c:
                total += c * prod(increments[d] for d in range(self.depth) if mask >> d & 1)
        return total

    def at_bounds(self, bounds: Sequence[int]):
        return self([b - BASE_BOUND for b in bounds])


def fit_multilinear(samples: Mapping[Sequence[int], int]) -> MultilinearModel:
    """Exact interpolant through the 2^d corner samples ``{bound_vector: value}``."""
    if not samples:
        raise IncompleteSamples("no samples")
    depth = len(next(iter(samples)))
    values: list = [None] * (1 << depth)
    for vec, val in samples.items():
        if len(vec) != depth:
            raise IncompleteSamples("bound vectors of mixed length")
        values[_mask(vec)] = val
    missing = [m for m, v in enumerate(values) if v is None]
    if missing:
        raise IncompleteSamples(f"{len(missing)} of {1 << depth} corners missing")
    return MultilinearModel(depth, tuple(mobius(values)))


def term_name(dims, names: Sequence[str]) -> str:
    dims = sorted(dims)
    if not dims:
        return "base"
    return "*".join(names[d] for d in dims)
