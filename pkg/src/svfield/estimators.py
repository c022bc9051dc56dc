"""Replication-based estimators of the extremal limits.

A :class:`ReplicationPlan` fixes the model, the index set and the seed.  Each
replication is simulated on the bounding box of ``D_n`` padded by ``t_n``, so
that every J-box meeting ``D_n`` and every run neighborhood ``A_v^n`` of a
site in ``D_n`` is fully observed.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .box import Box
from .geometry import IndexSetGeometry, successor_offsets
from .lattice_sim import (FieldSample, GarchParams, KernelPsi, product_field, simulate_garch,
                          simulate_ma, simulate_y)
from .tailmodels import TailModel, VolModelY
from .theory import NormingSequence, SpectralAtoms, ma_spectral_atoms, ma_tail_constant


@dataclass
class ReplicationPlan:
    geometry: IndexSetGeometry
    replications: int
    ymodel: VolModelY = field(default_factory=VolModelY.constant)
    tail: TailModel | None = None
    kernel: KernelPsi | None = None
    garch: GarchParams | None = None
    thresholds: tuple = (1.0,)
    seed: int = 0
    threads: int = 1
    burn_in: int = 10_000
    norming: NormingSequence | None = None
    garch_index: float | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("need at least one replication")
        th = tuple(float(x) for x in np.atleast_1d(self.thresholds))
        if any(x <= 0 for x in th) or list(th) != sorted(th):
            raise ValueError("thresholds must be positive and sorted")
        self.thresholds = th
        if (self.kernel is None) == (self.garch is None):
            raise ValueError("give exactly one of kernel (moving average) or garch")
        if self.kernel is not None and self.tail is None:
            raise ValueError("a moving-average plan needs a tail model")
        if self.garch is not None and self.geometry.d != 1:
            raise ValueError("GARCH plans are one-dimensional")

    @property
    def window(self) -> Box:
        return self.geometry.bbox.expand(self.geometry.t_n)

    def simulate(self, replication: int) -> FieldSample:
        """The product field ``X = Y Z`` of one replication on :attr:`window`."""
        w = self.window
        if self.kernel is not None:
            z = simulate_ma(self.kernel, self.tail, w, self.seed, replication)
        else:
            z = simulate_garch(self.garch, w.size, self.burn_in, self.seed, replication, start=w.lo[0])
        y = simulate_y(self.ymodel, w, self.seed, replication)
        return product_field(y, z)


def map_replications(fn: Callable[[int], object], replications: int, threads: int = 1) -> list:
    """``[fn(0), ..., fn(R-1)]`` in replication order for any thread count."""
    if threads <= 1:
        return [fn(r) for r in range(replications)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(replications)))


@dataclass
class ReplicationSummary:
    replication: int
    regime: float | None
    maximum: float
    blocks_inner: np.ndarray
    blocks_outer: np.ndarray
    runs: np.ndarray
    exceedances: np.ndarray


def _box_maxima(x: FieldSample, geom: IndexSetGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Maxima over the J-boxes of ``Q_n`` (grid array) and the grid origin ``z_min``."""
    zs = geom.outer_boxes
    zmin, zmax = zs.min(axis=0), zs.max(axis=0)
    grid = Box(geom.box_of(zmin).lo, geom.box_of(zmax).hi)
    vals = x.values[x.window.slices(grid)]
    t = geom.t_n
    nz = tuple(int(b - a + 1) for a, b in zip(zmin, zmax))
    shaped = vals.reshape(tuple(v for pair in zip(nz, t) for v in pair))
    return shaped.max(axis=tuple(range(1, 2 * geom.d, 2))), zmin


def _runs_count(x: FieldSample, geom: IndexSetGeometry, level: float, offsets: np.ndarray) -> int:
    inner = x.values[x.window.slices(geom.bbox)]
    starts = np.argwhere((inner > level) & geom.mask) + np.array(geom.bbox.lo)
    if len(starts) == 0:
        return 0
    lo, hi = np.array(x.window.lo), np.array(x.window.hi)
    # skip sites whose neighborhood leaves the simulated window
    full = np.all(starts + offsets.min(axis=0) >= lo, axis=1) & np.all(starts + offsets.max(axis=0) < hi, axis=1)
    starts = starts[full]
    if len(starts) == 0:
        return 0
    shape = x.window.shape
    flat = np.flatnonzero(x.values > level)
    count = 0
    for chunk in np.array_split(starts, -(-len(starts) // 4096)):
        nbrs = chunk[:, None, :] + offsets[None, :, :] - lo
        keys = np.ravel_multi_index(tuple(np.moveaxis(nbrs, -1, 0)), shape)
        count += int((~np.isin(keys, flat).any(axis=1)).sum())
    return count


def summarize(plan: ReplicationPlan, x: FieldSample, a_n: float, replication: int = 0) -> ReplicationSummary:
    geom = plan.geometry
    levels = a_n * np.asarray(plan.thresholds)
    inner = x.values[x.window.slices(geom.bbox)]
    maximum = float(inner[geom.mask].max())
    maxima, zmin = _box_maxima(x, geom)
    inner_idx = tuple((geom.inner_boxes - zmin).T)
    outer_idx = tuple((geom.outer_boxes - zmin).T)
    inner_max, outer_max = maxima[inner_idx], maxima[outer_idx]
    offsets = successor_offsets(geom.t_n, geom.d)
    return ReplicationSummary(
        replication=replication,
        regime=x.meta.get("regime"),
        maximum=maximum,
        blocks_inner=np.array([(inner_max > lv).sum() for lv in levels]),
        blocks_outer=np.array([(outer_max > lv).sum() for lv in levels]),
        runs=np.array([_runs_count(x, geom, lv, offsets) for lv in levels]),
        exceedances=np.array([int(((inner > lv) & geom.mask).sum()) for lv in levels]),
    )


def _top_values(plan: ReplicationPlan, k: int) -> Callable[[int], np.ndarray]:
    def fn(r):
        x = plan.simulate(r)
        vals = x.values[x.window.slices(plan.geometry.bbox)][plan.geometry.mask]
        k_eff = min(k, len(vals))
        return np.partition(vals, len(vals) - k_eff)[len(vals) - k_eff:]
    return fn


def plan_norming(plan: ReplicationPlan) -> NormingSequence:
    """Norming used by ``plan``.

    Moving averages use the exact tail constant.  GARCH plans fit the tail
    scale so that ``a_n`` sits between the ``R``-th and ``(R+1)``-th largest
    pooled value of ``X`` over ``D_n``, i.e. ``R |D_n| P(X_0 > a_n) = R``.
    """
    if plan.norming is not None:
        return plan.norming
    if plan.kernel is not None:
        return NormingSequence(ma_tail_constant(plan.kernel, plan.tail.alpha, plan.tail.p_xi), plan.tail.alpha)
    index = plan.garch_index
    if index is None:
        from .theory import garch_tail_index
        index = garch_tail_index(plan.garch).rv_index
    R = plan.replications
    tops = np.concatenate(map_replications(_top_values(plan, R + 1), R, plan.threads))
    tops = np.sort(tops)[::-1]
    level = 0.5 * (tops[R - 1] + tops[R])
    return NormingSequence(level ** index / plan.geometry.size, index)


@dataclass
class PlanRun:
    plan: ReplicationPlan
    a_n: float
    norming: NormingSequence
    summaries: list


def run_plan(plan: ReplicationPlan) -> PlanRun:
    norming = plan_norming(plan)
    a_n = norming.a_n(plan.geometry.size)
    summaries = map_replications(lambda r: summarize(plan, plan.simulate(r), a_n, r), plan.replications,
                                 plan.threads)
    return PlanRun(plan, a_n, norming, summaries)


COLUMNS = ("estimator", "x", "estimate", "se", "reps", "n_sites", "regime")


@dataclass
class EstimateTable:
    rows: list = field(default_factory=list)

    def add(self, estimator, x, values, n_sites, regime="all"):
        values = np.asarray(values, dtype=float)
        reps = len(values)
        se = float(values.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
        self.rows.append({"estimator": estimator, "x": float(x), "estimate": float(values.mean()),
                          "se": se, "reps": reps, "n_sites": n_sites, "regime": regime})

    def get(self, estimator: str, x: float = 1.0, regime="all") -> dict:
        for row in self.rows:
            if row["estimator"] == estimator and math.isclose(row["x"], x) and row["regime"] == regime:
                return row
        raise KeyError((estimator, x, regime))

    def extend(self, other: EstimateTable) -> EstimateTable:
        self.rows.extend(other.rows)
        return self

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows)


def _strata(run: PlanRun):
    yield "all", run.summaries
    labels = sorted({s.regime for s in run.summaries if s.regime is not None})
    for lab in labels:
        yield lab, [s for s in run.summaries if s.regime == lab]


def _ensure_run(plan_or_run) -> PlanRun:
    return plan_or_run if isinstance(plan_or_run, PlanRun) else run_plan(plan_or_run)


def empirical_max_cdf(plan_or_run) -> EstimateTable:
    """Fraction of replications with ``max_{D_n} X <= a_n x``, overall and per regime."""
    run = _ensure_run(plan_or_run)
    table = EstimateTable()
    for label, subset in _strata(run):
        for x in run.plan.thresholds:
            hits = [s.maximum <= run.a_n * x for s in subset]
            table.add("max_cdf", x, hits, run.plan.geometry.size, label)
    return table


def blocks_estimator_eta(plan_or_run, outer: bool = False) -> EstimateTable:
    """Mean number of J-boxes (inside ``D_n``, or meeting it with ``outer``) whose maximum exceeds ``a_n x``."""
    run = _ensure_run(plan_or_run)
    name = "blocks_outer" if outer else "blocks"
    table = EstimateTable()
    for label, subset in _strata(run):
        for i, x in enumerate(run.plan.thresholds):
            vals = [(s.blocks_outer if outer else s.blocks_inner)[i] for s in subset]
            table.add(name, x, vals, run.plan.geometry.size, label)
    return table


def runs_estimator_eta(plan_or_run) -> EstimateTable:
    """Mean number of sites exceeding ``a_n x`` with no exceedance in ``A_v^n``."""
    run = _ensure_run(plan_or_run)
    table = EstimateTable()
    for label, subset in _strata(run):
        for i, x in enumerate(run.plan.thresholds):
            table.add("runs", x, [s.runs[i] for s in subset], run.plan.geometry.size, label)
    return table


def estimate_all(plan_or_run) -> EstimateTable:
    run = _ensure_run(plan_or_run)
    table = empirical_max_cdf(run)
    for part in (blocks_estimator_eta(run), blocks_estimator_eta(run, outer=True), runs_estimator_eta(run)):
        table.extend(part)
    return table


def ergodic_average(h: Callable, y: FieldSample, geom: IndexSetGeometry, radius: int = 0) -> float:
    """Spatial average over ``v ∈ D_n`` of ``h`` applied to the shifted field.

    ``h`` receives ``shifted(offset)``, which returns ``y_{v + offset}`` for all
    ``v ∈ D_n`` (in the order of ``geom.sites()``), and must return one value
    per site.  ``radius`` bounds the offsets ``h`` may request.
    """
    if not y.window.contains_box(geom.bbox.expand(radius)):
        raise ValueError("h window exceeds the sampled field")
    sites = geom.sites()

    def shifted(offset=None):
        off = np.zeros(geom.d, dtype=np.int64) if offset is None else np.asarray(offset, dtype=np.int64)
        if np.any(np.abs(off) > radius):
            raise ValueError("offset beyond the declared radius")
        return y.values[y.window.local_index(sites + off)]

    return float(np.mean(h(shifted)))


@dataclass
class SpectralFit:
    atoms: SpectralAtoms
    empirical: np.ndarray
    other: float
    tv: float
    n_extreme: int
    threshold: float

    def to_dict(self) -> dict:
        return {"theoretical": self.atoms.weights.tolist(), "empirical": self.empirical.tolist(),
                "other": self.other, "tv": self.tv, "n_extreme": self.n_extreme,
                "threshold": self.threshold}


def _window_stack(z: FieldSample, geom: IndexSetGeometry, sites_b: np.ndarray) -> np.ndarray:
    """``(|D_n|, |B|)`` array of ``Z_{v+w}`` for ``v ∈ D_n`` and ``w`` in ``sites_b``."""
    cols = []
    for w in sites_b:
        box = geom.bbox.shift(w)
        cols.append(z.values[z.window.slices(box)][geom.mask])
    return np.stack(cols, axis=1)


def empirical_spectral_measure(plan: ReplicationPlan, m: int, u: float = 0.999,
                               tol: float = 0.1) -> SpectralFit:
    """Directions of the windows ``(Z_{v+w})_{w ∈ B^(m)}`` whose max-norm exceeds its
    empirical ``u``-quantile, matched to the moving-average atoms."""
    if plan.kernel is None:
        raise ValueError("spectral atoms are discrete only for moving averages")
    if m < 0 or not 0.9 < u < 1:
        raise ValueError("need m >= 0 and u in (0.9, 1)")
    geom = plan.geometry
    atoms = ma_spectral_atoms(plan.kernel, m, plan.tail.alpha, plan.tail.p_xi)
    window = geom.bbox.expand(m)

    def stack(r):
        z = simulate_ma(plan.kernel, plan.tail, window, plan.seed, r)
        return _window_stack(z, geom, atoms.sites)

    norms = np.concatenate(map_replications(lambda r: np.abs(stack(r)).max(axis=1), plan.replications,
                                            plan.threads))
    level = float(np.quantile(norms, u))

    def directions(r):
        s = stack(r)
        nrm = np.abs(s).max(axis=1)
        keep = nrm > level
        return s[keep] / nrm[keep, None]

    dirs = np.concatenate(map_replications(directions, plan.replications, plan.threads))
    if len(dirs) == 0:
        raise ValueError("no windows above the quantile")
    dist = np.abs(dirs[:, None, :] - atoms.vectors[None, :, :]).max(axis=2)
    nearest = dist.argmin(axis=1)
    matched = dist[np.arange(len(dirs)), nearest] <= tol
    empirical = np.bincount(nearest[matched], minlength=len(atoms.weights)) / len(dirs)
    other = 1.0 - matched.mean()
    tv = 0.5 * (np.abs(empirical - atoms.weights).sum() + other)
    return SpectralFit(atoms, empirical, float(other), float(tv), len(dirs), level)


@dataclass
class WindowLimitCheck:
    left: float
    left_se: float
    right: float
    ratio: float

    def to_dict(self) -> dict:
        return {"left": self.left, "left_se": self.left_se, "right": self.right, "ratio": self.ratio}


def window_limit_check(plan: ReplicationPlan, y_window, m: int, x: float = 1.0) -> WindowLimitCheck:
    """Compare ``|D_n| P(max_{v ∈ A_0^(m)} y_v Z_v > a_n x)`` with its spectral limit.

    ``y_window`` holds constants on ``B^(m)`` in lexicographic order; only the
    entries on ``A_0^(m)`` matter.  The left side averages, over replications,
    the number of ``v ∈ D_n`` whose shifted window exceeds the level.
    """
    if plan.kernel is None:
        raise ValueError("the atom-enumeration limit needs a moving-average kernel")
    alpha = plan.tail.alpha
    atoms = ma_spectral_atoms(plan.kernel, m, alpha, plan.tail.p_xi)
    y = np.asarray(y_window, dtype=float).reshape(-1)
    if y.shape[0] != len(atoms.sites):
        raise ValueError(f"y_window needs {len(atoms.sites)} entries")
    succ = atoms.successors
    ys = np.where(succ, y, 0.0)
    num = float(np.sum(atoms.weights * np.maximum(np.max(np.where(succ, atoms.vectors * ys, -np.inf), axis=1), 0) ** alpha)) \
        if succ.any() else 0.0
    right = x ** -alpha * num / atoms.positive_origin_moment(alpha)
    geom = plan.geometry
    a_n = plan_norming(plan).a_n(geom.size)
    level = a_n * x
    active = succ & (y != 0)
    window = geom.bbox.expand(m)

    def count(r):
        if not active.any():
            return 0
        z = simulate_ma(plan.kernel, plan.tail, window, plan.seed, r)
        best = np.full(int(geom.mask.sum()), -np.inf)
        for w, yw in zip(atoms.sites[active], y[active]):
            box = geom.bbox.shift(w)
            best = np.maximum(best, yw * z.values[z.window.slices(box)][geom.mask])
        return int((best > level).sum())

    counts = np.asarray(map_replications(count, plan.replications, plan.threads), dtype=float)
    left = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(len(counts))) if len(counts) > 1 else float("nan")
    ratio = left / right if right > 0 else (1.0 if left == 0 else math.inf)
    return WindowLimitCheck(left, se, right, ratio)


def hill_estimator(values, k: int) -> float:
    """Hill estimate of the tail index from the ``k`` largest values."""
    v = np.sort(np.asarray(values, dtype=float).ravel())[::-1]
    if not 0 < k < len(v):
        raise ValueError("need 0 < k < number of values")
    return float(1.0 / np.mean(np.log(v[:k] / v[k])))


appendixB_check = window_limit_check
