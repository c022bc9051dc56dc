"""Two-sided Pareto noise and multiplier-field (Y) models.

The noise law has no body: ``|xi| >= 1`` almost surely, with
``P(xi > x) = p_xi * x**-alpha`` and ``P(xi < -x) = (1 - p_xi) * x**-alpha``
for every ``x >= 1``.  Regular variation and tail balance are then identities,
which keeps every norming constant in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import ndtri

from . import rng
from .box import Box

Y_KINDS = ("constant", "lognormal", "absgaussian", "regime")


@dataclass(frozen=True)
class TailModel:
    alpha: float
    p_xi: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.p_xi <= 1:
            raise ValueError(f"p_xi must lie in (0, 1], got {self.p_xi}")

    def tail_prob(self, x) -> tuple:
        """Exact ``(P(xi > x), P(xi < -x))`` for ``x >= 1``."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 1):
            raise ValueError("tail probabilities are only defined for x >= 1")
        base = x ** -self.alpha
        right, left = self.p_xi * base, (1 - self.p_xi) * base
        if right.ndim == 0:
            return float(right), float(left)
        return right, left

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q = 1 - self.p_xi
        ax = np.maximum(np.abs(x), 1.0)
        return np.where(x <= -1, q * ax ** -self.alpha,
                        np.where(x < 1, q, 1 - self.p_xi * ax ** -self.alpha))

    def quantile(self, u) -> np.ndarray:
        """Left-continuous inverse of :meth:`cdf` on ``(0, 1)``."""
        u = np.asarray(u, dtype=float)
        q = 1 - self.p_xi
        with np.errstate(divide="ignore", invalid="ignore"):
            neg = -((u / q) ** (-1 / self.alpha)) if q > 0 else np.full_like(u, -np.inf)
            pos = ((1 - u) / self.p_xi) ** (-1 / self.alpha)
        out = np.where(u <= q, neg, pos)
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "p_xi": self.p_xi}


def sample_xi(model: TailModel, count: int, seed: int, replication: int = 0) -> np.ndarray:
    """I.i.d. draws from ``model`` keyed by the counters ``0..count-1``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    return model.quantile(rng.uniform_stream(seed, rng.NOISE, replication, count))


def noise_box(model: TailModel, window: Box, seed: int, replication: int = 0) -> np.ndarray:
    """Noise on every site of ``window``; each value depends only on its site key."""
    key = rng.derive_key(seed, rng.NOISE, replication)
    return model.quantile(rng.uniform_box(key, window.lo, window.shape))


@dataclass(frozen=True)
class VolModelY:
    """Law of the stationary multiplier field ``Y``.

    ``constant``: Y = s everywhere.  ``lognormal``: i.i.d. exp(mu + sigma*N).
    ``absgaussian``: i.i.d. sigma*|N|.  ``regime``: one scale S drawn per
    realization from ``scales`` with probabilities ``probs``, multiplying an
    independent ``base`` field; the invariant sigma-algebra is sigma(S).
    """

    kind: str = "constant"
    s: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0
    scales: tuple = ()
    probs: tuple = ()
    base: VolModelY | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in Y_KINDS:
            raise ValueError(f"unknown Y kind {self.kind!r}; expected one of {Y_KINDS}")
        if self.kind in ("lognormal", "absgaussian") and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.kind == "regime":
            scales = tuple(float(s) for s in self.scales)
            probs = tuple(float(q) for q in self.probs)
            if not scales or len(scales) != len(probs):
                raise ValueError("regime needs matching non-empty scales and probs")
            if any(s <= 0 for s in scales):
                raise ValueError("regime scales must be positive")
            if any(q < 0 for q in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-12):
                raise ValueError("regime probabilities must be non-negative and sum to 1")
            object.__setattr__(self, "scales", scales)
            object.__setattr__(self, "probs", probs)
            if self.base is None:
                object.__setattr__(self, "base", VolModelY("constant", s=1.0))
            elif self.base.kind == "regime":
                raise ValueError("nested regimes are not supported")

    @classmethod
    def constant(cls, s: float = 1.0) -> VolModelY:
        return cls("constant", s=s)

    @classmethod
    def lognormal(cls, mu: float = 0.0, sigma: float = 1.0) -> VolModelY:
        return cls("lognormal", mu=mu, sigma=sigma)

    @classmethod
    def absgaussian(cls, sigma: float = 1.0) -> VolModelY:
        return cls("absgaussian", sigma=sigma)

    @classmethod
    def regime(cls, scales, probs, base: VolModelY | None = None) -> VolModelY:
        return cls("regime", scales=tuple(scales), probs=tuple(probs), base=base)

    @property
    def is_ergodic(self) -> bool:
        return self.kind != "regime" or len(self.scales) == 1

    @property
    def is_deterministic(self) -> bool:
        return self.kind == "constant"

    def gamma_for(self, alpha: float) -> float:
        return self.gamma if self.gamma is not None else alpha + 1.0

    def positive_moment(self, a: float) -> float:
        """Closed-form ``E (Y_0)_+^a``."""
        if self.kind == "constant":
            return max(self.s, 0.0) ** a
        if self.kind == "lognormal":
            return math.exp(a * self.mu + 0.5 * (a * self.sigma) ** 2)
        if self.kind == "absgaussian":
            return self.sigma ** a * 2 ** (a / 2) * gamma_fn((a + 1) / 2) / math.sqrt(math.pi)
        return sum(q * s ** a for s, q in zip(self.scales, self.probs)) * self.base.positive_moment(a)

    def negative_moment(self, a: float) -> float:
        """Closed-form ``E (Y_0)_-^a``."""
        if self.kind == "constant":
            return max(-self.s, 0.0) ** a
        if self.kind == "regime":
            return sum(q * s ** a for s, q in zip(self.scales, self.probs)) * self.base.negative_moment(a)
        return 0.0

    def abs_moment(self, a: float) -> float:
        return self.positive_moment(a) + self.negative_moment(a)

    def values_from_uniforms(self, u: np.ndarray) -> np.ndarray:
        """Map site uniforms to ``Y`` values (non-regime kinds)."""
        if self.kind == "constant":
            return np.full(u.shape, float(self.s))
        if self.kind == "lognormal":
            return np.exp(self.mu + self.sigma * ndtri(u))
        if self.kind == "absgaussian":
            return self.sigma * np.abs(ndtri(u))
        raise ValueError("regime values need a scale draw")

    def draw_scale(self, seed: int, replication: int) -> float:
        u = rng.uniform_stream(seed, rng.REGIME, replication, 1)[0]
        idx = int(np.searchsorted(np.cumsum(self.probs), u, side="right"))
        return self.scales[min(idx, len(self.scales) - 1)]

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "constant":
            out["s"] = self.s
        elif self.kind == "lognormal":
            out.update(mu=self.mu, sigma=self.sigma)
        elif self.kind == "absgaussian":
            out["sigma"] = self.sigma
        else:
            out.update(scales=list(self.scales), probs=list(self.probs), base=self.base.to_dict())
        if self.gamma is not None:
            out["gamma"] = self.gamma
        return out

    @classmethod
    def from_dict(cls, data: dict) -> VolModelY:
        data = dict(data)
        base = data.pop("base", None)
        if isinstance(base, str):
            base = {"kind": base}
        if base is not None:
            data["base"] = cls.from_dict(base)
        for key in ("scales", "probs"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def sample_y_field(model: VolModelY, window: Box, seed: int, replication: int = 0):
    """Return ``(values, regime)`` on ``window``; ``regime`` is ``None`` unless ``kind == 'regime'``."""
    if window.is_empty():
        raise ValueError("window must be non-empty")
    if model.kind == "constant":
        return np.full(window.shape, float(model.s)), None
    if model.kind == "regime":
        scale = model.draw_scale(seed, replication)
        base, _ = sample_y_field(model.base, window, seed, replication)
        return scale * base, scale
    key = rng.derive_key(seed, rng.VOLATILITY, replication)
    return model.values_from_uniforms(rng.uniform_box(key, window.lo, window.shape)), None


def sample_y_marginal(model: VolModelY, count: int, seed: int) -> np.ndarray:
    """I.i.d. draws of ``Y_0``; regime scales are redrawn for every draw."""
    u = rng.uniform_stream(seed, rng.VOLATILITY, 0, count)
    if model.kind == "constant":
        return np.full(count, float(model.s))
    if model.kind != "regime":
        return model.values_from_uniforms(u)
    us = rng.uniform_stream(seed, rng.REGIME, 0, count)
    idx = np.minimum(np.searchsorted(np.cumsum(model.probs), us, side="right"), len(model.scales) - 1)
    return np.asarray(model.scales)[idx] * sample_y_marginal(model.base, count, seed + 1)


@dataclass
class MomentDiagnostic:
    gamma: float
    estimate: float
    estimate_doubled: float
    ratio: float
    exact: float | None = field(default=None)

    @property
    def stable(self) -> bool:
        return np.isfinite(self.estimate) and 0.9 <= self.ratio <= 1.1


def moment_diagnostic(model: VolModelY, alpha: float, count: int = 10**6, seed: int = 0,
                      gamma: float | None = None) -> MomentDiagnostic:
    """Empirical ``E|Y_0|^gamma`` at ``count`` and ``2*count`` draws, with ``gamma > alpha``."""
    g = gamma if gamma is not None else model.gamma_for(alpha)
    if not g > alpha:
        raise ValueError(f"moment order {g} must exceed alpha={alpha}")
    y = np.abs(sample_y_marginal(model, 2 * count, seed)) ** g
    small, big = float(y[:count].mean()), float(y.mean())
    return MomentDiagnostic(g, small, big, big / small if small > 0 else float("nan"), model.abs_moment(g))
