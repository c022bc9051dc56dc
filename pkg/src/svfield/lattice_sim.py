"""Realizations of the volatility field Z and of the product X = Y * Z."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from scipy.special import ndtri

from . import rng
from .box import Box
from .tailmodels import TailModel, VolModelY, noise_box, sample_y_field


@dataclass(frozen=True)
class KernelPsi:
    """Finitely supported moving-average coefficients ``psi_u``.

    ``offsets`` is an ``(k, d)`` integer array and ``values`` the matching
    coefficients.  Zero coefficients are dropped on construction.
    """

    offsets: np.ndarray
    values: np.ndarray
    delta: float = 1.0

    def __post_init__(self):
        off = np.atleast_2d(np.asarray(self.offsets, dtype=np.int64))
        val = np.asarray(self.values, dtype=float).reshape(-1)
        if off.shape[0] != val.shape[0]:
            raise ValueError("offsets and values differ in length")
        keep = val != 0
        if not keep.any():
            raise ValueError("kernel needs at least one nonzero coefficient")
        off, val = off[keep], val[keep]
        order = np.lexsort(off.T[::-1])
        off, val = off[order], val[order]
        if len({tuple(o) for o in off}) != len(off):
            raise ValueError("duplicate kernel offsets")
        off.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_1d(cls, coefficients, start: int = 0) -> KernelPsi:
        """``psi_{start + i} = coefficients[i]`` on Z."""
        c = np.asarray(coefficients, dtype=float)
        return cls(np.arange(start, start + len(c)).reshape(-1, 1), c)

    @classmethod
    def from_mapping(cls, mapping: dict) -> KernelPsi:
        keys = [tuple(np.atleast_1d(k)) for k in mapping]
        return cls(np.array(keys, dtype=np.int64), np.array(list(mapping.values()), dtype=float))

    @classmethod
    def identity(cls, d: int = 1) -> KernelPsi:
        return cls(np.zeros((1, d), dtype=np.int64), np.ones(1))

    @property
    def d(self) -> int:
        return self.offsets.shape[1]

    @property
    def t(self) -> int:
        """Truncation radius: smallest ``t`` with support inside ``[-t, t]^d``."""
        return int(np.abs(self.offsets).max())

    def coefficient(self, u) -> float:
        u = np.asarray(u, dtype=np.int64).reshape(-1)
        hit = np.all(self.offsets == u, axis=1)
        return float(self.values[hit][0]) if hit.any() else 0.0

    def scaled(self, c: float) -> KernelPsi:
        return KernelPsi(self.offsets, c * self.values, self.delta)

    def to_dict(self) -> dict:
        return {"offsets": self.offsets.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> KernelPsi:
        if "coefficients" in data:
            return cls.from_1d(data["coefficients"], data.get("start", 0))
        return cls(np.array(data["offsets"], dtype=np.int64), np.array(data["values"], dtype=float))


@dataclass(frozen=True)
class GarchParams:
    alpha0: float
    alpha1: float
    beta1: float

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.alpha1 > 0 and self.beta1 > 0):
            raise ValueError("alpha0, alpha1 and beta1 must be positive")
        if not self.alpha1 + self.beta1 < 1:
            raise ValueError("need alpha1 + beta1 < 1")

    @property
    def stationary_mean(self) -> float:
        """``E Z^2 = alpha0 / (1 - alpha1 - beta1)``."""
        return self.alpha0 / (1 - self.alpha1 - self.beta1)

    def to_dict(self) -> dict:
        return {"alpha0": self.alpha0, "alpha1": self.alpha1, "beta1": self.beta1}


@dataclass
class FieldSample:
    window: Box
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.window.shape:
            raise ValueError(f"values shape {self.values.shape} != window shape {self.window.shape}")

    @property
    def regime(self):
        return self.meta.get("regime")

    def restrict(self, box: Box) -> FieldSample:
        return FieldSample(box, self.values[self.window.slices(box)].copy(), dict(self.meta))

    def at(self, sites) -> np.ndarray:
        sites = np.atleast_2d(sites)
        if not np.all(self.window.contains(sites)):
            raise ValueError("sites outside the sampled window")
        return self.values[self.window.local_index(sites)]


def simulate_ma(kernel: KernelPsi, tail: TailModel, window: Box, seed: int, replication: int = 0,
                noise: Callable[[Box], np.ndarray] | None = None) -> FieldSample:
    """Truncated moving average ``Z_v = sum_u psi_u xi_{v-u}`` on ``window``.

    Noise is drawn on the window padded by the kernel support, so every
    output site has its full kernel.  ``noise`` replaces the Pareto draws
    (it receives the padded box and must return an array of that shape).
    """
    if window.is_empty():
        raise ValueError("window must be non-empty")
    if kernel.d != window.d:
        raise ValueError("kernel and window dimensions differ")
    umin = kernel.offsets.min(axis=0)
    umax = kernel.offsets.max(axis=0)
    padded = Box(tuple(np.array(window.lo) - umax), tuple(np.array(window.hi) - umin))
    xi = noise(padded) if noise is not None else noise_box(tail, padded, seed, replication)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != padded.shape:
        raise ValueError("injected noise has the wrong shape")
    shape = window.shape
    z = np.zeros(shape)
    for u, psi in zip(kernel.offsets, kernel.values):
        start = umax - u
        z += psi * xi[tuple(slice(s, s + n) for s, n in zip(start, shape))]
    meta = {"model": "ma", "kernel": kernel.to_dict(), "tail": tail.to_dict(),
            "seed": seed, "replication": replication}
    return FieldSample(window, z, meta)


@njit(cache=True, nogil=True)
def _garch_squares(alpha0, alpha1, beta1, xi, z2_start):
    n = xi.shape[0]
    out = np.empty(n)
    z2 = z2_start
    for i in range(n):
        out[i] = z2
        z2 = alpha0 + z2 * (alpha1 * xi[i] * xi[i] + beta1)
    return out


def garch_innovations(window: Box, seed: int, replication: int = 0) -> np.ndarray:
    key = rng.derive_key(seed, rng.GARCH, replication)
    return ndtri(rng.uniform_box(key, window.lo, window.shape))


def simulate_garch(params: GarchParams, length: int, burn_in: int = 10_000, seed: int = 0,
                   replication: int = 0, start: int = 0, squared: bool = False) -> FieldSample:
    """Volatility ``Z_v = sqrt(Z_v^2)`` of a GARCH(1,1) on sites ``start..start+length-1``.

    The squared recursion starts at the stationary mean at site
    ``start - burn_in``; innovations are standard Gaussian and keyed by site.
    """
    if length < 1 or burn_in < 0:
        raise ValueError("need length >= 1 and burn_in >= 0")
    full = Box((start - burn_in,), (start + length,))
    xi = garch_innovations(full, seed, replication)
    z2 = _garch_squares(params.alpha0, params.alpha1, params.beta1, xi, params.stationary_mean)[burn_in:]
    meta = {"model": "garch", "garch": params.to_dict(), "burn_in": burn_in,
            "seed": seed, "replication": replication}
    return FieldSample(Box((start,), (start + length,)), z2 if squared else np.sqrt(z2), meta)


def simulate_y(model: VolModelY, window: Box, seed: int, replication: int = 0) -> FieldSample:
    values, regime = sample_y_field(model, window, seed, replication)
    meta = {"model": "y", "y": model.to_dict(), "seed": seed, "replication": replication,
            "regime": regime}
    return FieldSample(window, values, meta)


def product_field(y: FieldSample, z: FieldSample) -> FieldSample:
    """Pointwise ``X_v = Y_v Z_v``."""
    if y.window != z.window:
        raise ValueError(f"window mismatch: {y.window} vs {z.window}")
    meta = {"model": "product", "y": y.meta, "z": z.meta, "regime": y.meta.get("regime")}
    return FieldSample(z.window, y.values * z.values, meta)
