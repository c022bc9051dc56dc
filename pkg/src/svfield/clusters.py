"""Exceedance sets, the box and proximity cluster rules, region counts and
Poisson goodness of fit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .geometry import IndexSetGeometry, ShapeC
from .lattice_sim import FieldSample

RULES = ("box", "proximity")


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def labels(self) -> np.ndarray:
        return np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)


def _lexsort(sites: np.ndarray) -> np.ndarray:
    return sites[np.lexsort(sites.T[::-1])] if len(sites) else sites


@dataclass
class ClusterPartition:
    phi: np.ndarray
    rule: str
    clusters: list

    @property
    def gamma(self) -> int:
        return len(self.clusters)

    def validate(self, t_n=None) -> None:
        """Raise ``AssertionError`` unless the partition invariants hold."""
        total = sum(len(c) for c in self.clusters)
        assert total == len(self.phi), "clusters do not cover phi"
        members = {tuple(s) for c in self.clusters for s in c.tolist()}
        assert members == {tuple(s) for s in self.phi.tolist()}, "clusters do not cover phi"
        assert len(members) == total, "clusters overlap"
        assert (self.gamma == 0) == (len(self.phi) == 0)
        if self.rule == "proximity" and t_n is not None:
            t = np.asarray(t_n)
            label = {tuple(s): i for i, c in enumerate(self.clusters) for s in c.tolist()}
            for a in self.phi:
                close = np.all(np.abs(self.phi - a) < t, axis=1)
                for b in self.phi[close]:
                    assert label[tuple(a)] == label[tuple(b)], "separation violated"


def exceedance_set(field: FieldSample, geom: IndexSetGeometry, threshold: float) -> np.ndarray:
    """Sites ``v ∈ D_n`` with ``x_v > threshold``, lexicographically sorted."""
    if not field.window.contains_box(geom.bbox):
        raise ValueError("field window does not cover D_n")
    vals = field.values[field.window.slices(geom.bbox)]
    hit = (vals > threshold) & geom.mask
    return np.argwhere(hit) + np.array(geom.bbox.lo, dtype=np.int64)


def box_clusters(phi, geom: IndexSetGeometry) -> ClusterPartition:
    """One cluster per J-box holding at least one exceedance."""
    phi = _lexsort(np.atleast_2d(np.asarray(phi, dtype=np.int64)).reshape(-1, geom.d))
    if len(phi) == 0:
        return ClusterPartition(phi, "box", [])
    keys = geom.box_index(phi)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    return ClusterPartition(phi, "box", _group(phi, inverse.reshape(-1)))


def _group(phi: np.ndarray, labels: np.ndarray) -> list:
    # label order by smallest lexicographic member; phi is already sorted
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    return [phi[labels == lab] for lab in order]


def proximity_clusters(phi, t_n) -> ClusterPartition:
    """Connected components under ``|u_l - w_l| < t_l`` for every axis ``l``."""
    phi = np.atleast_2d(np.asarray(phi, dtype=np.int64))
    if phi.size == 0:
        return ClusterPartition(phi.reshape(0, len(np.atleast_1d(t_n))), "proximity", [])
    t = np.broadcast_to(np.asarray(t_n, dtype=np.int64), (phi.shape[1],))
    phi = _lexsort(phi)
    uf = UnionFind(len(phi))
    first = phi[:, 0]
    # sweep in first-coordinate order; candidates lie within t_0 - 1 ahead
    for i in range(len(phi)):
        j = i + 1
        while j < len(phi) and first[j] - first[i] < t[0]:
            if np.all(np.abs(phi[j] - phi[i]) < t):
                uf.union(i, j)
            j += 1
    return ClusterPartition(phi, "proximity", _group(phi, uf.labels()))


def cluster(phi, geom: IndexSetGeometry, rule: str) -> ClusterPartition:
    if rule == "box":
        return box_clusters(phi, geom)
    if rule == "proximity":
        return proximity_clusters(phi, geom.t_n)
    raise ValueError(f"unknown cluster rule {rule!r}")


@dataclass
class ClusterCounts:
    rule: str
    scale: str
    counts: list

    def to_dict(self) -> dict:
        return {"rule": self.rule, "scale": self.scale, "counts": list(self.counts)}


def count_regions(partition: ClusterPartition, regions, geom: IndexSetGeometry,
                  scale: str = "scaled") -> ClusterCounts:
    """Number of clusters meeting each region.

    ``scale='scaled'`` takes regions ``A ⊆ C`` (as :class:`ShapeC`) and counts
    clusters meeting ``c_n A``; ``scale='lattice'`` takes site sets ``B ⊆ D_n``
    as boolean masks over ``geom.bbox`` or ``(k, d)`` site arrays.  A cluster
    meeting several regions is counted in each of them.  Masks returned by
    :func:`region_masks` can be reused with ``scale='mask'``.
    """
    masks = list(regions) if scale == "mask" else region_masks(regions, geom, scale)
    counts = []
    for mask in masks:
        n = 0
        for c in partition.clusters:
            inside = geom.bbox.contains(c)
            if inside.any() and mask[geom.bbox.local_index(c[inside])].any():
                n += 1
        counts.append(n)
    return ClusterCounts(partition.rule, scale, counts)


def region_masks(regions, geom: IndexSetGeometry, scale: str = "scaled") -> list[np.ndarray]:
    """Boolean masks over ``geom.bbox`` for each region, checked to lie in ``D_n``."""
    return [_region_mask(r, geom, scale) for r in regions]


def _region_mask(region, geom: IndexSetGeometry, scale: str) -> np.ndarray:
    if scale == "scaled":
        if not isinstance(region, ShapeC):
            raise TypeError("scaled regions must be ShapeC instances")
        own = region.lattice_bbox(geom.c_n)
        if not geom.bbox.contains_box(own):
            own_sites = own.sites()
            inside = region.contains_scaled(own_sites, geom.c_n)
            if not np.all(geom.contains(own_sites[inside])):
                raise ValueError("region is not contained in C")
        sites = geom.bbox.sites()
        mask = region.contains_scaled(sites, geom.c_n).reshape(geom.bbox.shape)
    elif scale == "lattice":
        region = np.asarray(region)
        if region.dtype == bool:
            if region.shape != geom.bbox.shape:
                raise ValueError("lattice mask must match the D_n bounding box")
            mask = region
        else:
            sites = np.atleast_2d(region)
            if not np.all(geom.bbox.contains(sites)):
                raise ValueError("region leaves D_n")
            mask = np.zeros(geom.bbox.shape, dtype=bool)
            mask[geom.bbox.local_index(sites)] = True
    else:
        raise ValueError(f"unknown scale {scale!r}")
    if np.any(mask & ~geom.mask):
        raise ValueError("region is not contained in D_n")
    return mask


@dataclass
class GofReport:
    n: int
    lam: float
    mean: float
    dispersion: float
    chi2: float
    dof: int
    p_value: float
    bins: list

    def passes(self, p_min: float = 0.01, band=(0.85, 1.15)) -> bool:
        return self.p_value > p_min and band[0] <= self.dispersion <= band[1]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("n", "lam", "mean", "dispersion", "chi2", "dof", "p_value", "bins")}


def _pool_bins(expected: np.ndarray, minimum: float) -> list[tuple[int, int]]:
    # greedy left-to-right pooling; a short remainder joins the last bin
    bins, start, acc = [], 0, 0.0
    for k, e in enumerate(expected):
        acc += e
        if acc >= minimum:
            bins.append((start, k))
            start, acc = k + 1, 0.0
    if start < len(expected):
        if bins:
            bins[-1] = (bins[-1][0], len(expected) - 1)
        else:
            bins.append((start, len(expected) - 1))
    return bins


def poisson_gof(counts, lam: float, min_expected: float = 5.0) -> GofReport:
    """Dispersion index and chi-square test of ``counts`` against Poisson(``lam``).

    Bins are pooled until each expected count is at least ``min_expected``;
    the last bin absorbs the upper tail.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    counts = np.asarray(counts, dtype=np.int64)
    n = len(counts)
    if n < 2:
        raise ValueError("need at least two counts")
    mean = float(counts.mean())
    disp = float(counts.var(ddof=1) / mean) if mean > 0 else 0.0
    top = int(max(counts.max(), stats.poisson.ppf(1 - 1e-12, lam))) + 1
    probs = stats.poisson.pmf(np.arange(top), lam)
    probs[-1] += stats.poisson.sf(top - 1, lam)
    observed = np.bincount(np.minimum(counts, top - 1), minlength=top)
    bins = _pool_bins(n * probs, min_expected)
    obs = np.array([observed[a:b + 1].sum() for a, b in bins], dtype=float)
    exp = np.array([n * probs[a:b + 1].sum() for a, b in bins])
    dof = len(bins) - 1
    if dof < 1:
        return GofReport(n, lam, mean, disp, 0.0, 0, 1.0, bins)
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    return GofReport(n, lam, mean, disp, chi2, dof, float(stats.chi2.sf(chi2, dof)), bins)
