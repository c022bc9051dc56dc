"""Replication tests of the Poisson limits of cluster counts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clusters import RULES, GofReport, cluster, count_regions, exceedance_set, poisson_gof, region_masks
from .estimators import ReplicationPlan, map_replications, plan_norming
from .geometry import ShapeC


@dataclass
class LimitTestSpec:
    """Model plan, regions and the limit intensity.

    ``regions`` are :class:`ShapeC` subsets of ``C`` (``scale='scaled'``) or
    lattice site sets inside ``D_n`` (``scale='lattice'``).  ``eta`` is a
    number, or a mapping from regime scale to number for a regime ``Y``.
    """

    plan: ReplicationPlan
    regions: list
    alpha: float
    eta: float | dict | None = None
    x: float = 1.0
    scale: str = "scaled"
    p_min: float = 0.01
    dispersion_band: tuple = (0.85, 1.15)
    max_corr: float = 0.1

    def __post_init__(self):
        if not self.regions:
            raise ValueError("need at least one region")
        if self.x <= 0 or self.alpha <= 0:
            raise ValueError("x and alpha must be positive")

    def fractions(self, masks) -> list[float]:
        """Limit mass of each region: ``|A|/|C|`` or ``|B_n|/|D_n|``."""
        if self.scale == "scaled":
            vol = self.plan.geometry.shape.volume
            return [r.volume / vol for r in self.regions]
        return [float(m.sum()) / self.plan.geometry.size for m in masks]

    def eta_for(self, regime) -> float:
        if self.eta is None:
            raise ValueError("eta is required: compute it with svfield.theory (closed form) "
                             "or svfield.estimators (blocks/runs) first")
        if isinstance(self.eta, dict):
            if regime is None:
                raise ValueError("regime eta map needs a regime Y")
            return float(self.eta[regime])
        return float(self.eta)


def whole_domain(spec: LimitTestSpec):
    """Region list holding only ``C`` (or ``D_n``) at ``spec.scale``."""
    geom = spec.plan.geometry
    return [geom.shape] if spec.scale == "scaled" else [geom.mask.copy()]


@dataclass
class CountSample:
    rules: tuple
    counts: dict  # rule -> (R, regions) int array
    regimes: list
    a_n: float


def collect_counts(plan: ReplicationPlan, regions, x: float = 1.0, rules=RULES,
                   scale: str = "scaled") -> CountSample:
    """Per-replication cluster counts of every region under each rule at level ``a_n x``."""
    geom = plan.geometry
    masks = region_masks(regions, geom, scale)
    a_n = plan_norming(plan).a_n(geom.size)
    level = a_n * x

    def one(r):
        field_ = plan.simulate(r)
        phi = exceedance_set(field_, geom, level)
        row = {rule: count_regions(cluster(phi, geom, rule), masks, geom, "mask").counts for rule in rules}
        return row, field_.regime

    out = map_replications(one, plan.replications, plan.threads)
    counts = {rule: np.array([row[rule] for row, _ in out], dtype=np.int64) for rule in rules}
    return CountSample(tuple(rules), counts, [reg for _, reg in out], a_n)


@dataclass
class RegionReport:
    region: int
    fraction: float
    lam: float
    mean: float
    se: float
    gof: GofReport | None
    mean_ok: bool

    def to_dict(self) -> dict:
        return {"region": self.region, "fraction": self.fraction, "lambda": self.lam, "mean": self.mean,
                "se": self.se, "mean_ok": self.mean_ok,
                "gof": None if self.gof is None else self.gof.to_dict()}


@dataclass
class PairReport:
    regions: tuple
    corr: float
    factorial_moment: float
    factorial_se: float
    lam_product: float
    corr_ok: bool

    def to_dict(self) -> dict:
        return {"regions": list(self.regions), "corr": self.corr, "factorial_moment": self.factorial_moment,
                "factorial_se": self.factorial_se, "lambda_product": self.lam_product, "corr_ok": self.corr_ok}


@dataclass
class LimitReport:
    rule: str
    stratum: object
    replications: int
    regions: list
    pairs: list
    degenerate: bool
    thresholds: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.degenerate:
            return False
        band = self.thresholds["dispersion_band"]
        ok = all(r.mean_ok and r.gof is not None and r.gof.passes(self.thresholds["p_min"], band)
                 for r in self.regions)
        return ok and all(p.corr_ok for p in self.pairs)

    def to_dict(self) -> dict:
        return {"rule": self.rule, "stratum": self.stratum, "replications": self.replications,
                "degenerate": self.degenerate, "passed": self.passed, "thresholds": self.thresholds,
                "regions": [r.to_dict() for r in self.regions], "pairs": [p.to_dict() for p in self.pairs]}


def _disjoint(a: np.ndarray, b: np.ndarray) -> bool:
    return not np.any(a & b)


def _report(spec: LimitTestSpec, rule: str, counts: np.ndarray, fractions, masks, stratum) -> LimitReport:
    eta = spec.eta_for(None if stratum == "all" else stratum)
    R = len(counts)
    thresholds = {"p_min": spec.p_min, "dispersion_band": list(spec.dispersion_band), "max_corr": spec.max_corr,
                  "note": "engineering thresholds; no convergence rate is available"}
    degenerate = R < 2 or not counts.any()
    regions = []
    for g, frac in enumerate(fractions):
        c = counts[:, g]
        lam = frac * spec.x ** -spec.alpha * eta
        mean = float(c.mean()) if R else math.nan
        se = float(c.std(ddof=1) / math.sqrt(R)) if R > 1 else math.nan
        gof = poisson_gof(c, lam) if (R > 1 and lam > 0 and c.any()) else None
        ok = bool(R > 1 and abs(mean - lam) <= 3 * max(se, math.sqrt(lam / R)))
        regions.append(RegionReport(g, frac, lam, mean, se, gof, ok))
    pairs = []
    for i in range(len(fractions)):
        for j in range(i + 1, len(fractions)):
            if not _disjoint(masks[i], masks[j]) or R < 2:
                continue
            a, b = counts[:, i].astype(float), counts[:, j].astype(float)
            corr = float(np.corrcoef(a, b)[0, 1]) if a.std() > 0 and b.std() > 0 else math.nan
            prod = a * b
            pairs.append(PairReport((i, j), corr, float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(R)),
                                    regions[i].lam * regions[j].lam,
                                    bool(not math.isnan(corr) and abs(corr) < spec.max_corr)))
    return LimitReport(rule, stratum, R, regions, pairs, bool(degenerate), thresholds)


def poisson_limit_test(spec: LimitTestSpec, rule: str = "box", sample: CountSample | None = None) -> list:
    """Reports for ``rule``: one for all replications when ``Y`` is ergodic,
    one per regime stratum otherwise."""
    if rule not in RULES:
        raise ValueError(f"unknown cluster rule {rule!r}")
    spec.eta_for(next(iter(spec.eta)) if isinstance(spec.eta, dict) else None)
    sample = sample or collect_counts(spec.plan, spec.regions, spec.x, (rule,), spec.scale)
    masks = region_masks(spec.regions, spec.plan.geometry, spec.scale)
    fractions = spec.fractions(masks)
    counts = sample.counts[rule]
    if isinstance(spec.eta, dict):
        labels = np.array([np.nan if r is None else r for r in sample.regimes], dtype=float)
        return [_report(spec, rule, counts[labels == s], fractions, masks, s) for s in sorted(spec.eta)]
    return [_report(spec, rule, counts, fractions, masks, "all")]


@dataclass
class AgreementReport:
    replications: int
    differing_fraction: float
    mean_abs_diff: float
    violations: list  # replications with proximity count above box count

    def to_dict(self) -> dict:
        return {"replications": self.replications, "differing_fraction": self.differing_fraction,
                "mean_abs_diff": self.mean_abs_diff, "violations": self.violations}


def rule_agreement(spec: LimitTestSpec, sample: CountSample | None = None) -> AgreementReport:
    """Compare ``N_n(C)`` (box rule) with ``Ñ_n(C)`` (proximity rule) per replication.

    A supplied ``sample`` must hold both rules with the whole domain as region 0.
    """
    if sample is None:
        sample = collect_counts(spec.plan, whole_domain(spec), spec.x, RULES, spec.scale)
    n = sample.counts["box"][:, 0]
    nt = sample.counts["proximity"][:, 0]
    diff = np.abs(n - nt)
    return AgreementReport(len(n), float((diff > 0).mean()), float(diff.mean()),
                           np.flatnonzero(nt > n).tolist())


def halves(d: int, axis: int = 0) -> list[ShapeC]:
    """Two disjoint half-open halves of the unit box ``[0,1)^d`` split along ``axis``."""
    lo, hi = [0.0] * d, [1.0] * d
    mid_hi, mid_lo = list(hi), list(lo)
    mid_hi[axis] = 0.5
    mid_lo[axis] = 0.5
    return [ShapeC.box(lo, mid_hi), ShapeC.box(mid_lo, hi)]
