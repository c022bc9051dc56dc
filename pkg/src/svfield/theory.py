"""Closed-form and Monte Carlo evaluation of tail constants, spectral atoms,
the extremal functional eta and the extremal index theta."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp, ndtri

from . import rng
from .box import Box
from .geometry import lex_greater
from .lattice_sim import GarchParams, KernelPsi
from .tailmodels import VolModelY, sample_y_field, sample_y_marginal


class DegenerateSpectralError(ValueError):
    pass


class KappaConditionError(ValueError):
    """No positive root of ``E A^kappa = 1`` on the search bracket."""


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float = 0.0

    def __iter__(self):
        yield self.value
        yield self.se

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se}


def _pos(x):
    return np.maximum(x, 0.0)


def _neg(x):
    return np.maximum(-x, 0.0)


def psi_alpha_norm(kernel: KernelPsi, alpha: float) -> float:
    """``sum_u |psi_u|^alpha``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return float(np.sum(np.abs(kernel.values) ** alpha))


def ma_tail_constant(kernel: KernelPsi, alpha: float, p_xi: float, t: int | None = None) -> float:
    """Limit of ``P(Z_0^t > x) / P(|xi_0| > x)``.

    ``t`` restricts the sum to ``|u| <= t``; by default the whole support is used.
    """
    psi = kernel.values
    if t is not None:
        psi = psi[np.abs(kernel.offsets).max(axis=1) <= t]
    return float(np.sum(p_xi * _pos(psi) ** alpha + (1 - p_xi) * _neg(psi) ** alpha))


def ma_left_tail_constant(kernel: KernelPsi, alpha: float, p_xi: float) -> float:
    return ma_tail_constant(kernel, alpha, 1 - p_xi)


def ma_tail_balance_p(kernel: KernelPsi, alpha: float, p_xi: float) -> float:
    """Right-tail share ``p`` of the moving average."""
    return ma_tail_constant(kernel, alpha, p_xi) / psi_alpha_norm(kernel, alpha)


@dataclass(frozen=True)
class NormingSequence:
    """``a_n = (tail_constant * |D_n|)^(1/index)``, so that ``|D_n| P(Z_0 > a_n) -> 1``."""

    tail_constant: float
    index: float

    def a_n(self, domain_size: float) -> float:
        return norming_a_n(self.tail_constant, self.index, domain_size)

    def to_dict(self) -> dict:
        return {"tail_constant": self.tail_constant, "index": self.index}

    @classmethod
    def for_ma(cls, kernel: KernelPsi, alpha: float, p_xi: float) -> NormingSequence:
        return cls(ma_tail_constant(kernel, alpha, p_xi), alpha)

    @classmethod
    def fitted(cls, sample, domain_size: float, index: float) -> NormingSequence:
        """Fit the tail scale so that ``a_n`` is the empirical ``1 - 1/|D_n|`` quantile of ``sample``."""
        level = np.quantile(np.asarray(sample).ravel(), 1 - 1 / domain_size)
        return cls(float(level) ** index / domain_size, index)


def norming_a_n(tail_constant: float, index: float, domain_size: float) -> float:
    if not (tail_constant > 0 and index > 0 and domain_size > 0):
        raise ValueError("all arguments must be positive")
    return float((tail_constant * domain_size) ** (1 / index))


def breiman_constant(ymodel: VolModelY, alpha: float, p: float, samples: int | None = None,
                     seed: int = 0) -> Estimate:
    """``E (Y_0)_+^alpha + (1-p)/p E (Y_0)_-^alpha``.

    Closed form unless ``samples`` is given, in which case the value is a
    Monte Carlo average over ``samples`` marginal draws.
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    ratio = (1 - p) / p
    if samples is None:
        return Estimate(ymodel.positive_moment(alpha) + ratio * ymodel.negative_moment(alpha), 0.0)
    y = sample_y_marginal(ymodel, samples, seed)
    vals = _pos(y) ** alpha + ratio * _neg(y) ** alpha
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)))


def neighborhood_box(m: int, d: int) -> np.ndarray:
    """Sites of ``B^(m) = [-m, m]^d`` in lexicographic order."""
    return Box((-m,) * d, (m + 1,) * d).sites()


@dataclass(frozen=True)
class SpectralAtoms:
    """Discrete spectral law of the field restricted to ``B^(m)``.

    Row ``i`` of ``vectors`` is an atom over the sites ``sites`` (max-norm 1)
    with probability ``weights[i]``.
    """

    m: int
    sites: np.ndarray
    vectors: np.ndarray
    weights: np.ndarray
    signs: np.ndarray = field(default=None)

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def origin(self) -> int:
        return int(np.flatnonzero(~np.any(self.sites, axis=1))[0])

    @property
    def successors(self) -> np.ndarray:
        """Boolean mask of ``A_0^(m)`` among ``sites``."""
        return lex_greater(self.sites, np.zeros_like(self.sites))

    def positive_origin_moment(self, kappa: float) -> float:
        """``E (Theta_0)_+^kappa``."""
        return float(np.sum(self.weights * _pos(self.vectors[:, self.origin]) ** kappa))


def ma_spectral_atoms(kernel: KernelPsi, m: int, alpha: float, p_xi: float) -> SpectralAtoms:
    """Atoms ``±psi^u / ||psi^u||`` with ``psi^u = (psi_{v-u})_{v in B^(m)}``."""
    if m < 0:
        raise ValueError("m must be non-negative")
    sites = neighborhood_box(m, kernel.d)
    # every u with psi^u != 0 is v - w for some v in B^(m), w in the support
    shifts = (sites[:, None, :] - kernel.offsets[None, :, :]).reshape(-1, kernel.d)
    shifts = np.unique(shifts, axis=0)
    vecs = np.zeros((len(shifts), len(sites)))
    for j, v in enumerate(sites):
        rel = v - shifts
        for o, val in zip(kernel.offsets, kernel.values):
            vecs[np.all(rel == o, axis=1), j] = val
    norms = np.abs(vecs).max(axis=1)
    keep = norms > 0
    vecs, norms = vecs[keep], norms[keep]
    mass = norms ** alpha
    total = mass.sum()
    unit = vecs / norms[:, None]
    vectors = np.concatenate([unit, -unit])
    weights = np.concatenate([p_xi * mass, (1 - p_xi) * mass]) / total
    signs = np.concatenate([np.ones(len(unit)), -np.ones(len(unit))])
    return SpectralAtoms(m, sites, vectors, weights, signs)


@dataclass
class GarchSpectralSampler:
    """Draws ``R^m / ||R^m||`` with importance weight ``||R^m||^kappa``.

    ``R^m = (1, sqrt(A_{-m}), ..., sqrt(A_{-m} ... A_{m-1}))`` indexed by
    ``-m..m`` and ``A = alpha1 xi^2 + beta1``.
    """

    params: GarchParams
    m: int
    kappa: float

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.m, self.m + 1).reshape(-1, 1)

    def draw(self, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        a = _garch_a(self.params, (n, 2 * self.m), seed)
        logr = np.concatenate([np.zeros((n, 1)), np.cumsum(0.5 * np.log(a), axis=1)], axis=1)
        lognorm = logr.max(axis=1, keepdims=True)
        return np.exp(logr - lognorm), np.exp(self.kappa * lognorm[:, 0])


def _garch_a(params: GarchParams, shape, seed: int, stream: int = rng.THEORY) -> np.ndarray:
    key = rng.derive_key(seed, stream, 0)
    xi = ndtri(rng.uniform_box(key, (0,) * len(shape), shape))
    return params.alpha1 * xi ** 2 + params.beta1


def _y_windows(ymodel: VolModelY, n: int, width: int, seed: int) -> np.ndarray:
    """``n`` independent draws of ``Y`` on ``width`` sites (non-regime kinds are i.i.d. over sites)."""
    values, _ = sample_y_field(ymodel, Box((0, 0), (n, width)), seed, 0)
    return values


def _truncate(y, K):
    return np.where(np.abs(y) <= K, y, 0.0) if np.isfinite(K) else y


def _regime_split(ymodel: VolModelY):
    if ymodel.kind == "regime":
        return [(s, ymodel.base) for s in ymodel.scales]
    return [(None, ymodel)]


def _eta_atoms_given_y(atoms: SpectralAtoms, y: np.ndarray, kappa: float) -> np.ndarray:
    """Per-row ``sum_a w_a ((y_0 th_0)_+^k - (max_{A} y_v th_v)_+^k)_+`` for ``y`` of shape ``(n, |B|)``."""
    succ = atoms.successors
    o = atoms.origin
    out = np.zeros(len(y))
    for vec, w in zip(atoms.vectors, atoms.weights):
        if w == 0:
            continue
        head = _pos(y[:, o] * vec[o]) ** kappa
        if succ.any():
            tail = _pos(np.max(y[:, succ] * vec[succ], axis=1)) ** kappa
        else:
            tail = 0.0
        out += w * _pos(head - tail)
    return out


def eta_tkm(atoms, ymodel: VolModelY, m: int | None = None, K: float = math.inf,
            alpha_index: float | None = None, samples: int = 100_000, seed: int = 0):
    """Truncated extremal functional from a spectral law.

    ``atoms`` is either :class:`SpectralAtoms` (enumerated exactly) or a
    :class:`GarchSpectralSampler` (self-normalized importance sampling).
    Deterministic ``Y`` gives an exact value with zero standard error; for a
    regime ``Y`` a dict ``{scale: Estimate}`` conditional on the scale is
    returned.
    """
    if isinstance(atoms, GarchSpectralSampler):
        if alpha_index is not None and not math.isclose(alpha_index, atoms.kappa):
            raise ValueError("alpha_index differs from the sampler's exponent")
        return _eta_sampled(atoms, ymodel, K, atoms.kappa, samples, seed)
    if alpha_index is None:
        raise ValueError("alpha_index is required for discrete atoms")
    kappa = alpha_index
    if m is not None and m != atoms.m:
        raise ValueError("m does not match the atoms")
    denom = atoms.positive_origin_moment(kappa)
    if denom == 0:
        raise DegenerateSpectralError("E (Theta_0)_+^kappa = 0")
    width = len(atoms.sites)
    results = {}
    for scale, base in _regime_split(ymodel):
        factor = 1.0 if scale is None else scale
        if base.is_deterministic:
            y = _truncate(np.full((1, width), factor * base.s), K)
            results[scale] = Estimate(float(_eta_atoms_given_y(atoms, y, kappa)[0] / denom), 0.0)
            continue
        y = _truncate(factor * _y_windows(base, samples, width, seed), K)
        vals = _eta_atoms_given_y(atoms, y, kappa) / denom
        results[scale] = Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)))
    return results[None] if None in results else results


def _eta_sampled(sampler: GarchSpectralSampler, ymodel, K, kappa, samples, seed):
    theta, w = sampler.draw(samples, seed)
    origin = sampler.m
    succ = slice(origin + 1, None)
    width = theta.shape[1]
    denom_terms = w * _pos(theta[:, origin]) ** kappa
    results = {}
    for scale, base in _regime_split(ymodel):
        factor = 1.0 if scale is None else scale
        if base.is_deterministic:
            y = _truncate(np.full((samples, width), factor * base.s), K)
        else:
            y = _truncate(factor * _y_windows(base, samples, width, seed + 1), K)
        head = _pos(y[:, origin] * theta[:, origin]) ** kappa
        tail = _pos(np.max(y[:, succ] * theta[:, succ], axis=1, initial=-np.inf)) ** kappa
        num_terms = w * _pos(head - tail)
        results[scale] = _ratio_estimate(num_terms, denom_terms)
    return results[None] if None in results else results


def _ratio_estimate(num, den) -> Estimate:
    n = len(num)
    r = num.mean() / den.mean()
    resid = num - r * den
    se = math.sqrt(resid.var(ddof=1) / n) / den.mean()
    return Estimate(float(r), float(se))


@dataclass
class EtaReport:
    eta: object
    theta: float | None
    breiman_const: float
    K: float = math.inf
    m: int | None = None
    t: int | None = None
    eta_se: object = 0.0
    sweep: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def enc(v):
            return {str(k): x for k, x in v.items()} if isinstance(v, dict) else v
        return {"eta": enc(self.eta), "eta_se": enc(self.eta_se), "theta": self.theta,
                "breiman_const": self.breiman_const, "K": None if math.isinf(self.K) else self.K,
                "m": self.m, "t": self.t, "sweep": self.sweep}


def _ma_max_term(kernel: KernelPsi, y: np.ndarray, alpha: float, p_xi: float) -> np.ndarray:
    yp = y * kernel.values
    return np.max(p_xi * _pos(yp) ** alpha + (1 - p_xi) * _neg(yp) ** alpha, axis=-1)


def ma_extremal_index(kernel: KernelPsi, ymodel: VolModelY, alpha: float, p_xi: float,
                      samples: int = 100_000, seed: int = 0) -> EtaReport:
    """eta and theta of ``Y * Z`` for a moving-average ``Z`` (all limits taken).

    ``eta = E[max_v (p_xi (Y_v psi_v)_+^a + (1-p_xi)(Y_v psi_v)_-^a)] / sum_u (p_xi (psi_u)_+^a + (1-p_xi)(psi_u)_-^a)``
    and ``theta = eta / breiman``.  For a regime ``Y`` eta is reported per
    scale and theta is left undefined.
    """
    denom = ma_tail_constant(kernel, alpha, p_xi)
    p = ma_tail_balance_p(kernel, alpha, p_xi)
    width = len(kernel.values)
    etas, ses = {}, {}
    for scale, base in _regime_split(ymodel):
        factor = 1.0 if scale is None else scale
        if base.is_deterministic:
            y = np.full((1, width), factor * base.s)
            etas[scale], ses[scale] = float(_ma_max_term(kernel, y, alpha, p_xi)[0] / denom), 0.0
        else:
            vals = _ma_max_term(kernel, factor * _y_windows(base, samples, width, seed), alpha, p_xi) / denom
            etas[scale], ses[scale] = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))
    if None in etas:
        breiman = breiman_constant(ymodel, alpha, p).value
        theta = etas[None] / breiman
        return EtaReport(theta * breiman, theta, breiman, m=None, t=kernel.t, eta_se=ses[None])
    breiman = breiman_constant(ymodel, alpha, p).value
    return EtaReport(etas, None, breiman, t=kernel.t, eta_se=ses)


def ma_eta_report(kernel: KernelPsi, ymodel: VolModelY, alpha: float, p_xi: float,
                  ms=(1, 2, 5, 10, 20, 50), samples: int = 100_000, seed: int = 0) -> EtaReport:
    """:func:`ma_extremal_index` plus a convergence sweep of ``eta_tkm`` over ``ms``."""
    report = ma_extremal_index(kernel, ymodel, alpha, p_xi, samples, seed)

    def at(m):
        return eta_tkm(ma_spectral_atoms(kernel, m, alpha, p_xi), ymodel, m, alpha_index=alpha,
                       samples=samples, seed=seed)
    report.sweep = convergence_sweep(at, ms)
    return report


def convergence_sweep(evaluate: Callable[[int], object], ms) -> list[dict]:
    """Evaluate along ``ms``; flag a row stable when it moved by < 2 SE from the previous one."""
    rows, prev = [], None
    for m in ms:
        est = evaluate(m)
        items = est.items() if isinstance(est, dict) else [(None, est)]
        for scale, e in items:
            row = {"m": m, "regime": scale, "eta": e.value, "se": e.se}
            key = scale
            if prev is not None and key in prev:
                p = prev[key]
                band = 2 * math.hypot(p.se, e.se)
                row["stable"] = abs(e.value - p.value) <= band if band > 0 else abs(e.value - p.value) < 1e-12
            else:
                row["stable"] = False
            rows.append(row)
        prev = dict(items)
    return rows


# GARCH(1,1)

@dataclass
class GarchTailIndex:
    alpha_hat: float
    residual: float
    bracket: tuple
    bracket_values: tuple
    mc_alpha: float | None = None
    mc_se: float | None = None

    @property
    def rv_index(self) -> float:
        """Regular-variation index ``2 * alpha_hat`` of ``Z``."""
        return 2 * self.alpha_hat

    def to_dict(self) -> dict:
        return {"alpha_hat": self.alpha_hat, "rv_index": self.rv_index, "residual": self.residual,
                "bracket": list(self.bracket), "bracket_values": list(self.bracket_values),
                "mc_alpha": self.mc_alpha, "mc_se": self.mc_se}


def gauss_hermite_log_moment(params: GarchParams, nodes: int = 128) -> Callable[[float], float]:
    """``kappa -> log E A^kappa`` for Gaussian ``xi`` by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite.hermgauss(nodes)
    loga = np.log(params.alpha1 * 2 * x ** 2 + params.beta1)
    logw = np.log(w) - 0.5 * math.log(math.pi)
    return lambda k: float(logsumexp(k * loga + logw))


def _bisect(f, lo, hi, tol, max_iter=200):
    flo, fhi = f(lo), f(hi)
    for _ in range(max_iter):
        if hi - lo <= tol * max(1.0, lo):
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm < 0:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return lo, hi, flo, fhi


def _root_bracket(f, upper: float):
    # f(1) = log(alpha1 + beta1) < 0, and f is convex with f(0) = 0
    lo, hi = 1.0, 2.0
    while f(hi) < 0:
        lo, hi = hi, 2 * hi
        if hi > upper:
            raise KappaConditionError(f"no kappa_0 with E A^kappa_0 > 1 found below {upper}")
    return lo, hi


def garch_tail_index(params: GarchParams, samples: int | None = None, tol: float = 1e-12,
                     seed: int = 0, nodes: int = 128, upper: float = 1e4) -> GarchTailIndex:
    """Positive root of ``E (alpha1 xi^2 + beta1)^kappa = 1`` by bisection.

    Quadrature is the primary evaluator.  With ``samples`` the root is also
    found from a Monte Carlo sample of ``A`` and given a delta-method standard
    error.
    """
    logm = gauss_hermite_log_moment(params, nodes)
    lo, hi = _root_bracket(logm, upper)
    lo, hi, flo, fhi = _bisect(logm, lo, hi, tol)
    root = 0.5 * (lo + hi)
    out = GarchTailIndex(root, abs(math.expm1(logm(root))), (lo, hi), (math.expm1(flo), math.expm1(fhi)))
    if samples:
        out.mc_alpha, out.mc_se = _mc_tail_index(params, samples, seed, upper)
    return out


def _mc_tail_index(params: GarchParams, samples: int, seed: int, upper: float):
    loga = np.log(_garch_a(params, (samples,), seed, rng.AUX))
    logn = math.log(samples)

    def logm(k):
        return float(logsumexp(k * loga) - logn)
    lo, hi = _root_bracket(logm, upper)
    lo, hi, _, _ = _bisect(logm, lo, hi, 1e-9)
    root = 0.5 * (lo + hi)
    ak = np.exp(root * loga)
    slope = float(np.mean(ak * loga))
    se = float(ak.std(ddof=1) / math.sqrt(samples) / slope)
    return root, se


def garch_eta(params: GarchParams, ymodel: VolModelY, K: float = math.inf, m: int = 50,
              samples: int = 200_000, seed: int = 0, alpha_hat: float | None = None,
              literal_exponent: bool = False):
    """Monte Carlo of ``E[((Y_0)_+^k - (max_{1<=v<=m} Y_v prod_{i<=v} sqrt(A_i))_+^k)_+]``.

    ``k = 2 * alpha_hat`` (the regular-variation index of ``Z``) unless
    ``literal_exponent`` selects ``k = alpha_hat``.
    """
    if alpha_hat is None:
        alpha_hat = garch_tail_index(params).alpha_hat
    kappa = alpha_hat if literal_exponent else 2 * alpha_hat
    if m > 0:
        a = _garch_a(params, (samples, m), seed)
        prods = np.exp(np.cumsum(0.5 * np.log(a), axis=1))
    else:
        prods = np.zeros((samples, 0))
    results = {}
    for scale, base in _regime_split(ymodel):
        factor = 1.0 if scale is None else scale
        if base.is_deterministic:
            y = np.full((samples, m + 1), factor * base.s)
        else:
            y = factor * _y_windows(base, samples, m + 1, seed + 1)
        y = _truncate(y, K)
        head = _pos(y[:, 0]) ** kappa
        tail = _pos(np.max(y[:, 1:] * prods, axis=1, initial=-np.inf)) ** kappa if m > 0 else 0.0
        vals = _pos(head - tail)
        results[scale] = Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)))
    return results[None] if None in results else results
