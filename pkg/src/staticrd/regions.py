"""Hyper-rectangular index regions and the small set algebra merge needs."""
from __future__ import annotations

from dataclasses import dataclass
from math import prod

from .errors import ArityMismatch


@dataclass(frozen=True)
class IndexRegion:
    """Half-open box ``[lo, hi)`` per dimension. Zero dimensions means a scalar."""

    array: str
    extents: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for lo, hi in self.extents:
            if lo > hi:
                raise ValueError(f"empty interval [{lo}, {hi}) in region of {self.array}")

    @classmethod
    def from_shape(cls, array: str, shape) -> IndexRegion:
        return cls(array, tuple((0, int(n)) for n in shape))

    @property
    def ndim(self) -> int:
        return len(self.extents)

    @property
    def size(self) -> int:
        return prod(hi - lo for lo, hi in self.extents)

    def _check(self, other: IndexRegion):
        if other.array != self.array or other.ndim != self.ndim:
            raise ArityMismatch(
                f"cannot combine {self.array}/{self.ndim}d with {other.array}/{other.ndim}d"
            )

    def intersect(self, other: IndexRegion) -> IndexRegion | None:
        self._check(other)
        ext = []
        for (a, b), (c, d) in zip(self.extents, other.extents):
            lo, hi = max(a, c), min(b, d)
            if lo >= hi:
                return None
            ext.append((lo, hi))
        return IndexRegion(self.array, tuple(ext))

    def subtract(self, other: IndexRegion) -> list[IndexRegion]:
        """Disjoint boxes covering ``self`` minus ``other``."""
        common = self.intersect(other)
        if common is None:
            return [self]
        pieces = []
        rest = list(self.extents)
        for dim, ((lo, hi), (clo, chi)) in enumerate(zip(self.extents, common.extents)):
            if lo < clo:
                pieces.append(IndexRegion(self.array, tuple(rest[:dim] + [(lo, clo)] + rest[dim + 1:])))
            if chi < hi:
                pieces.append(IndexRegion(self.array, tuple(rest[:dim] + [(chi, hi)] + rest[dim + 1:])))
            rest[dim] = (clo, chi)
        return pieces

    def hull(self, other: IndexRegion) -> IndexRegion:
        self._check(other)
        return IndexRegion(
            self.array,
            tuple((min(a, c), max(b, d)) for (a, b), (c, d) in zip(self.extents, other.extents)),
        )

    def to_json(self) -> dict:
        return {"array": self.array, "extents": [[lo, hi] for lo, hi in self.extents]}

    @classmethod
    def from_json(cls, obj: dict) -> IndexRegion:
        return cls(obj["array"], tuple((int(lo), int(hi)) for lo, hi in obj["extents"]))


def region_intersect_size(a: IndexRegion, b: IndexRegion) -> int:
    common = a.intersect(b)
    return 0 if common is None else common.size


def subtract_all(pieces: list[IndexRegion], other: IndexRegion) -> list[IndexRegion]:
    out = []
    for p in pieces:
        out.extend(p.subtract(other))
    return out


def total_size(pieces) -> int:
    return sum(p.size for p in pieces)
