"""Axis-aligned lattice boxes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Sites ``lo <= v < hi`` (componentwise) of Z^d."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(int(a) for a in self.lo)
        hi = tuple(int(b) for b in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lo and hi must have the same non-zero length")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_shape(cls, shape, lo=None) -> Box:
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        lo = (0,) * len(shape) if lo is None else tuple(int(a) for a in np.atleast_1d(lo))
        return cls(lo, tuple(a + s for a, s in zip(lo, shape)))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(max(b - a, 0) for a, b in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def is_empty(self) -> bool:
        return self.size == 0

    def expand(self, radius) -> Box:
        r = np.broadcast_to(np.asarray(radius, dtype=np.int64), (self.d,))
        return Box(tuple(a - int(x) for a, x in zip(self.lo, r)),
                   tuple(b + int(x) for b, x in zip(self.hi, r)))

    def shift(self, offset) -> Box:
        off = np.broadcast_to(np.asarray(offset, dtype=np.int64), (self.d,))
        return Box(tuple(a + int(o) for a, o in zip(self.lo, off)),
                   tuple(b + int(o) for b, o in zip(self.hi, off)))

    def contains_box(self, other: Box) -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def contains(self, sites) -> np.ndarray:
        sites = np.atleast_2d(sites)
        return np.all((sites >= np.array(self.lo)) & (sites < np.array(self.hi)), axis=1)

    def sites(self) -> np.ndarray:
        """All sites, lexicographically ordered, shape ``(size, d)``."""
        axes = [np.arange(a, b, dtype=np.int64) for a, b in zip(self.lo, self.hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)

    def local_index(self, sites) -> tuple[np.ndarray, ...]:
        """Array index tuple of ``sites`` into a box-shaped array."""
        sites = np.atleast_2d(sites)
        return tuple(sites[:, i] - self.lo[i] for i in range(self.d))

    def slices(self, inner: Box) -> tuple[slice, ...]:
        """Slices selecting ``inner`` out of an array laid out over ``self``."""
        if not self.contains_box(inner):
            raise ValueError(f"{inner} is not inside {self}")
        return tuple(slice(c - a, d - a) for a, c, d in zip(self.lo, inner.lo, inner.hi))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}
