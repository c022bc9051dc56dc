"""Scaled index sets, J-box tilings and ordered neighborhoods.

``D_n = c_n C ∩ Z^d`` is enumerated by exact membership tests.  The tiling
``J_z = (x_n + t_n (z + [0,1)^d)) ∩ Z^d`` gives the inner set ``D_n^-``
(union of boxes inside ``D_n``) and the outer set ``D_n^+`` (union of boxes
meeting ``D_n``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .box import Box

SHAPE_KINDS = ("box", "disc")


def _frac(x) -> Fraction:
    return Fraction(x) if isinstance(x, (int, Fraction)) else Fraction(float(x))


def _ceil(f: Fraction) -> int:
    return -((-f.numerator) // f.denominator)


def _floor(f: Fraction) -> int:
    return f.numerator // f.denominator


@dataclass(frozen=True)
class ShapeC:
    """Bounded shape in R^d: a union of half-open boxes or a closed disc (d = 2)."""

    kind: str
    boxes: tuple = ()
    center: tuple = ()
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.kind == "box":
            boxes = tuple((tuple(float(a) for a in lo), tuple(float(b) for b in hi)) for lo, hi in self.boxes)
            if not boxes:
                raise ValueError("box shape needs at least one box")
            d = len(boxes[0][0])
            for lo, hi in boxes:
                if len(lo) != d or len(hi) != d or any(b <= a for a, b in zip(lo, hi)):
                    raise ValueError(f"degenerate or inconsistent box {lo}, {hi}")
            object.__setattr__(self, "boxes", boxes)
        else:
            if len(self.center) != 2 or not self.radius > 0:
                raise ValueError("disc needs a 2-d center and positive radius")
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def unit_box(cls, d: int) -> ShapeC:
        return cls("box", boxes=(((0.0,) * d, (1.0,) * d),))

    @classmethod
    def box(cls, lo, hi) -> ShapeC:
        return cls("box", boxes=((tuple(lo), tuple(hi)),))

    @classmethod
    def box_union(cls, boxes) -> ShapeC:
        return cls("box", boxes=tuple((tuple(lo), tuple(hi)) for lo, hi in boxes))

    @classmethod
    def disc(cls, center, radius: float) -> ShapeC:
        return cls("disc", center=tuple(center), radius=float(radius))

    @property
    def d(self) -> int:
        return len(self.boxes[0][0]) if self.kind == "box" else 2

    @property
    def volume(self) -> float:
        """Exact Lebesgue measure (overlapping boxes are counted once)."""
        if self.kind == "disc":
            return math.pi * self.radius ** 2
        cuts = [sorted({b[0][i] for b in self.boxes} | {b[1][i] for b in self.boxes}) for i in range(self.d)]
        total = 0.0
        for cell in np.ndindex(*[len(c) - 1 for c in cuts]):
            mid = [0.5 * (cuts[i][j] + cuts[i][j + 1]) for i, j in enumerate(cell)]
            if any(all(lo[i] <= mid[i] < hi[i] for i in range(self.d)) for lo, hi in self.boxes):
                total += math.prod(cuts[i][j + 1] - cuts[i][j] for i, j in enumerate(cell))
        return total

    def bounds(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        if self.kind == "disc":
            return (tuple(c - self.radius for c in self.center), tuple(c + self.radius for c in self.center))
        lo = tuple(min(b[0][i] for b in self.boxes) for i in range(self.d))
        hi = tuple(max(b[1][i] for b in self.boxes) for i in range(self.d))
        return lo, hi

    def lattice_bbox(self, c) -> Box:
        """Lattice box containing ``c C ∩ Z^d``."""
        lo, hi = self.bounds()
        cf = [_frac(x) for x in c]
        return Box(tuple(_floor(ci * _frac(a)) for ci, a in zip(cf, lo)),
                   tuple(_ceil(ci * _frac(b)) + 1 for ci, b in zip(cf, hi)))

    def contains_scaled(self, sites, c) -> np.ndarray:
        """Exact test of ``v / c ∈ C`` (componentwise division) for integer sites."""
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        cf = [_frac(x) for x in c]
        if len(cf) != self.d or sites.shape[1] != self.d:
            raise ValueError("dimension mismatch")
        if self.kind == "box":
            hit = np.zeros(len(sites), dtype=bool)
            for lo, hi in self.boxes:
                inside = np.ones(len(sites), dtype=bool)
                for i in range(self.d):
                    # c*lo <= v < c*hi
                    first = _ceil(cf[i] * _frac(lo[i]))
                    last = _ceil(cf[i] * _frac(hi[i])) - 1
                    inside &= (sites[:, i] >= first) & (sites[:, i] <= last)
                hit |= inside
            return hit
        return self._disc_contains(sites, cf)

    def _disc_contains(self, sites, cf) -> np.ndarray:
        # (c2 (v1 - c1 x))^2 + (c1 (v2 - c2 y))^2 <= (r c1 c2)^2, all in integers
        c1, c2 = cf
        a, b = c1 * _frac(self.center[0]), c2 * _frac(self.center[1])
        rr = _frac(self.radius) * c1 * c2
        den = math.lcm(*(f.denominator for f in (c1, c2, a, b, rr)))
        C1, C2 = int(c1 * den), int(c2 * den)
        A, B, R = int(a * den), int(b * den), int(rr * den)
        big = max(abs(C1), abs(C2)) * (den * (int(np.abs(sites).max(initial=0)) + 1) + max(abs(A), abs(B)))
        if big < 2 ** 30 and R * den < 2 ** 30:
            s = sites.astype(np.int64)
            lhs = (C2 * (den * s[:, 0] - A)) ** 2 + (C1 * (den * s[:, 1] - B)) ** 2
            return lhs <= (R * den) ** 2
        s = sites.astype(object)
        lhs = (C2 * (den * s[:, 0] - A)) ** 2 + (C1 * (den * s[:, 1] - B)) ** 2
        return np.asarray(lhs <= (R * den) ** 2, dtype=bool)

    def to_dict(self) -> dict:
        if self.kind == "disc":
            return {"kind": "disc", "center": list(self.center), "radius": self.radius}
        return {"kind": "box", "boxes": [[list(lo), list(hi)] for lo, hi in self.boxes]}

    @classmethod
    def from_dict(cls, data: dict) -> ShapeC:
        kind = data["kind"]
        if kind == "unit-box":
            return cls.unit_box(int(data["d"]))
        if kind == "disc":
            return cls.disc(data["center"], data["radius"])
        return cls.box_union(data["boxes"])


@dataclass(frozen=True)
class IndexSetGeometry:
    shape: ShapeC
    c_n: tuple
    t_n: tuple
    x_n: tuple
    bbox: Box
    mask: np.ndarray = field(repr=False)
    box_keys: np.ndarray = field(repr=False)
    box_counts: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.shape.d

    @property
    def size(self) -> int:
        """``|D_n|``."""
        return int(self.mask.sum())

    @property
    def box_volume(self) -> int:
        """``t_n^*``, the number of sites in one J-box."""
        return math.prod(self.t_n)

    @property
    def outer_boxes(self) -> np.ndarray:
        """``Q_n``: indices of J-boxes meeting ``D_n``."""
        return self.box_keys

    @property
    def inner_boxes(self) -> np.ndarray:
        """``P_n``: indices of J-boxes contained in ``D_n``."""
        return self.box_keys[self.box_counts == self.box_volume]

    @property
    def inner_size(self) -> int:
        return len(self.inner_boxes) * self.box_volume

    @property
    def outer_size(self) -> int:
        return len(self.outer_boxes) * self.box_volume

    def sites(self) -> np.ndarray:
        local = np.argwhere(self.mask)
        return local + np.array(self.bbox.lo, dtype=np.int64)

    def contains(self, sites) -> np.ndarray:
        sites = np.atleast_2d(sites)
        out = np.zeros(len(sites), dtype=bool)
        inside = self.bbox.contains(sites)
        out[inside] = self.mask[self.bbox.local_index(sites[inside])]
        return out

    def box_index(self, sites) -> np.ndarray:
        """``z`` with ``v ∈ J_z``, i.e. ``floor((v - x_n) / t_n)``."""
        sites = np.atleast_2d(sites)
        x = np.asarray(self.x_n, dtype=float)
        t = np.asarray(self.t_n, dtype=np.int64)
        if not np.any(x):
            return np.floor_divide(sites, t)
        return np.floor((sites - x) / t).astype(np.int64)

    def box_of(self, z) -> Box:
        """Lattice sites of ``J_z`` as a box."""
        z = np.asarray(z, dtype=np.int64).reshape(-1)
        lo = tuple(math.ceil(x + t * zi) for x, t, zi in zip(self.x_n, self.t_n, z))
        return Box(lo, tuple(a + t for a, t in zip(lo, self.t_n)))

    def _union_sites(self, keys) -> np.ndarray:
        if len(keys) == 0:
            return np.zeros((0, self.d), dtype=np.int64)
        parts = [self.box_of(z).sites() for z in keys]
        out = np.concatenate(parts)
        return out[np.lexsort(out.T[::-1])]

    def inner_sites(self) -> np.ndarray:
        """``D_n^-``."""
        return self._union_sites(self.inner_boxes)

    def outer_sites(self) -> np.ndarray:
        """``D_n^+``."""
        return self._union_sites(self.outer_boxes)

    def outer_bbox(self) -> Box:
        """Lattice box covering ``D_n^+``."""
        zs = self.outer_boxes
        lo = self.box_of(zs.min(axis=0)).lo
        hi = self.box_of(zs.max(axis=0)).hi
        return Box(lo, hi)

    def diagnostics_row(self, n=None) -> dict:
        return {"n": n, "size": self.size, "inner": self.inner_size, "outer": self.outer_size,
                "ratio": approximation_ratio(self)}


def build_index_set(shape: ShapeC, c_n, t_n, x_n=None) -> IndexSetGeometry:
    """Enumerate ``D_n = c_n C ∩ Z^d`` and its J-box approximations."""
    d = shape.d
    c_n = tuple(float(c) for c in np.broadcast_to(np.asarray(c_n, dtype=float), (d,)))
    t_raw = np.broadcast_to(np.asarray(t_n), (d,))
    if np.any(np.asarray(c_n) <= 0):
        raise ValueError("c_n must be positive")
    if np.any(t_raw < 1) or np.any(np.asarray(t_raw, dtype=float) != np.round(np.asarray(t_raw, dtype=float))):
        raise ValueError("t_n must be positive integers")
    t_n = tuple(int(t) for t in t_raw)
    x_n = (0.0,) * d if x_n is None else tuple(float(x) for x in np.broadcast_to(np.asarray(x_n, dtype=float), (d,)))
    bbox = shape.lattice_bbox(c_n)
    sites = bbox.sites()
    inside = shape.contains_scaled(sites, c_n)
    if not inside.any():
        raise ValueError("D_n is empty")
    mask = inside.reshape(bbox.shape)
    sites = sites[inside]
    # tighten bbox to D_n
    tight = Box(tuple(sites.min(axis=0)), tuple(sites.max(axis=0) + 1))
    mask = mask[bbox.slices(tight)]
    geom = IndexSetGeometry(shape, c_n, t_n, x_n, tight, mask, np.zeros((0, d), np.int64), np.zeros(0, np.int64))
    keys, counts = np.unique(geom.box_index(sites), axis=0, return_counts=True)
    object.__setattr__(geom, "box_keys", keys)
    object.__setattr__(geom, "box_counts", counts)
    return geom


def approximation_ratio(geom: IndexSetGeometry) -> float:
    """``(|D_n^+| - |D_n^-|) / |D_n|``."""
    return (geom.outer_size - geom.inner_size) / geom.size


def lex_greater(a, b) -> np.ndarray:
    """Lexicographic ``a ≻ b`` row by row."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    diff = a - b
    nz = diff != 0
    first = np.argmax(nz, axis=1)
    lead = diff[np.arange(len(diff)), first]
    return nz.any(axis=1) & (lead > 0)


@lru_cache(maxsize=64)
def _successor_offsets(radius: tuple) -> np.ndarray:
    box = Box(tuple(-r for r in radius), tuple(r + 1 for r in radius))
    off = box.sites()
    off = off[lex_greater(off, np.zeros_like(off))]
    off.setflags(write=False)
    return off


def successor_offsets(radius, d: int | None = None) -> np.ndarray:
    """Offsets ``u`` in ``[-radius, radius]`` (per axis) with ``u ≻ 0``."""
    r = np.atleast_1d(np.asarray(radius, dtype=np.int64))
    if d is not None:
        r = np.broadcast_to(r, (d,))
    if np.any(r < 1):
        raise ValueError("radius must be at least 1")
    return _successor_offsets(tuple(int(x) for x in r))


def ordered_neighborhood(v, radius) -> np.ndarray:
    """Sites of ``v + ([-radius, radius]^d ∩ Z^d)`` strictly after ``v`` lexicographically."""
    v = np.asarray(v, dtype=np.int64).reshape(-1)
    return v + successor_offsets(radius, len(v))


@dataclass(frozen=True)
class SubregionCounts:
    k: int
    side: tuple
    inner: int
    outer: int
    region_size: int
    fraction: float


def _tile_side(c, k: int, d: int) -> tuple:
    root = round(k ** (1 / d))
    scale = float(root) if root ** d == k else k ** (1 / d)
    return tuple(ci / scale for ci in c)


def subregion_boxes(geom: IndexSetGeometry, k: int, region: ShapeC | None = None) -> SubregionCounts:
    """Count tiles of side ``c_n / k^(1/d)`` inside and meeting ``B_n = c_n A ∩ D_n``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    sites = geom.sites()
    if region is not None:
        sites = sites[region.contains_scaled(sites, geom.c_n)]
    side = _tile_side(geom.c_n, k, geom.d)
    if len(sites) == 0:
        return SubregionCounts(k, side, 0, 0, 0, 0.0)
    tiles = np.floor(sites / np.asarray(side)).astype(np.int64)
    keys, counts = np.unique(tiles, axis=0, return_counts=True)
    lo = np.ceil(keys * np.asarray(side)).astype(np.int64)
    hi = np.ceil((keys + 1) * np.asarray(side)).astype(np.int64)
    card = np.prod(hi - lo, axis=1)
    inner = int(np.sum(counts == card))
    return SubregionCounts(k, side, inner, len(keys), len(sites), len(sites) / geom.size)
