"""
Intensity estimators sharing one evaluation interface.

``FittedK2IE``
    Least-squares RKHS estimator: a unit-weight sum of equivalent kernels,
    stored through its primal weights ``xi = B sum_n phi(x_n)``.
``FittedKIE``
    Gaussian smoothing with analytic edge correction ``nu(x)``.
``FittedFIE``
    Squared-link RKHS estimator ``(sum_n alpha_n h(x, x_n))^2`` with the dual
    coefficients found by Adam.

All models expose ``intensity(x, clip)``, ``integral(region, clip)`` and
``to_dict()``; the module-level functions dispatch on them.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from .domain import Domain, as_points
from .equivalent import (
    EquivalentKernel,
    NumericalError,
    build_equivalent_kernel,
    edge_matrix,
    feature_integral,
)
from .features import FeatureMap, KernelParams, build_feature_map, features, kernel_exact

LOG_FLOOR = 1e-10
KIE_MC_POINTS = 100_000
KIE_NU_MC_POINTS = 10_000
_CHUNK = 4096


def _events(events, dim: int) -> np.ndarray:
    events = np.asarray(events, dtype=float)
    if events.size == 0:
        return np.empty((0, dim))
    return as_points(events, dim)


def _mc_integral(func, region: Domain, n: int, seed: int) -> float:
    pts = region.sample_uniform(n, np.random.default_rng(seed))
    return region.measure * float(np.mean(func(pts)))


# --------------------------------------------------------------------------
# K2IE


@dataclass(frozen=True, eq=False)
class FittedK2IE:
    ek: EquivalentKernel
    xi: np.ndarray
    n_events: int
    events: np.ndarray = field(repr=False)

    tag = "k2ie"

    @property
    def domain(self) -> Domain:
        return self.ek.domain

    @property
    def dim(self) -> int:
        return self.ek.fmap.dim

    def intensity(self, x, clip: bool = True) -> np.ndarray:
        x = as_points(x, self.dim)
        out = np.empty(len(x))
        for s in range(0, len(x), _CHUNK):
            out[s : s + _CHUNK] = features(self.ek.fmap, x[s : s + _CHUNK]) @ self.xi
        return np.maximum(out, 0.0) if clip else out

    def kernel_sum(self, x) -> np.ndarray:
        """Raw intensity as the explicit sum ``sum_n h(x, x_n)``."""
        if self.n_events == 0:
            return np.zeros(len(as_points(x, self.dim)))
        return (self.ek.transform(x) @ self.ek.transform(self.events).T).sum(axis=1)

    def integral(self, region: Domain | None = None, clip: bool = True) -> float:
        region = self.domain if region is None else region
        val = float(feature_integral(self.ek.fmap, region) @ self.xi)
        return max(val, 0.0) if clip else val

    def integral_squared(self, region: Domain | None = None) -> float:
        """``int lambda^2`` of the raw estimate, as ``xi^T A xi``."""
        A = self.ek.A if region is None else edge_matrix(self.ek.fmap, region).A
        return float(self.xi @ A @ self.xi)

    def to_dict(self) -> dict:
        fm = self.ek.fmap
        return {
            "estimator": self.tag,
            "kernel": fm.params.to_dict(),
            "gamma": self.ek.gamma,
            **_fmap_dict(fm),
            "domain": self.domain.to_dict(),
            "xi": self.xi.tolist(),
            "n_events": self.n_events,
            "events": self.events.tolist(),
        }


def fit_k2ie(
    events,
    domain: Domain,
    params: KernelParams,
    gamma: float,
    M: int = 250,
    seed: int = 0,
    qmc: bool = True,
    ek: EquivalentKernel | None = None,
) -> FittedK2IE:
    """Closed-form K2IE fit; no iterative optimisation is involved."""
    if ek is None:
        fmap = build_feature_map(params, M, seed=seed, qmc=qmc)
        ek = build_equivalent_kernel(fmap, domain, gamma)
    X = _events(events, ek.fmap.dim)
    if len(X) == 0:
        xi = np.zeros(ek.fmap.n_features)
    else:
        xi = ek.solve(features(ek.fmap, X).sum(axis=0))
    return FittedK2IE(ek=ek, xi=xi, n_events=len(X), events=X)


def k2ie_objective(ek: EquivalentKernel, events, w) -> float:
    """Feature-space penalised least-squares loss of ``lambda = phi^T w``."""
    s = features(ek.fmap, _events(events, ek.fmap.dim)).sum(axis=0)
    w = np.asarray(w, dtype=float)
    return float(-2.0 * w @ s + w @ ek.A @ w + (w @ w) / ek.gamma)


# --------------------------------------------------------------------------
# KIE


def gaussian_box_mass(params: KernelParams, domain: Domain, x) -> np.ndarray:
    """``int_X exp(-|beta (x - s)|^2) ds`` summed over the domain's boxes."""
    x = as_points(x, params.dim)
    beta = np.asarray(params.beta)
    total = np.zeros(len(x))
    for rect in domain:
        prod = np.ones(len(x))
        for i in range(params.dim):
            b = beta[i]
            hi = special.erf(b * (rect.hi[i] - x[:, i]))
            lo = special.erf(b * (rect.lo[i] - x[:, i]))
            prod *= 0.5 * math.sqrt(math.pi) / b * (hi - lo)
        total += prod
    return total


@dataclass(frozen=True, eq=False)
class FittedKIE:
    events: np.ndarray
    params: KernelParams
    domain: Domain
    empty: bool = False
    mc_points: int = KIE_MC_POINTS
    mc_seed: int = 0

    tag = "kie"

    @property
    def dim(self) -> int:
        return self.params.dim

    def nu(self, x, method: str = "analytic", n_mc: int = KIE_NU_MC_POINTS, seed: int = 0) -> np.ndarray:
        if method == "analytic":
            return gaussian_box_mass(self.params, self.domain, x)
        if method == "mc":
            pts = self.domain.sample_uniform(n_mc, np.random.default_rng(seed))
            return self.domain.measure * kernel_exact(self.params, x, pts).mean(axis=1)
        raise ValueError(f"unknown method {method!r}")

    def smoothing_sum(self, x) -> np.ndarray:
        x = as_points(x, self.dim)
        out = np.zeros(len(x))
        if self.empty:
            return out
        for s in range(0, len(x), _CHUNK):
            out[s : s + _CHUNK] = kernel_exact(self.params, x[s : s + _CHUNK], self.events).sum(axis=1)
        return out

    def intensity(self, x, clip: bool = True) -> np.ndarray:
        x = as_points(x, self.dim)
        if self.empty:
            return np.zeros(len(x))
        num = self.smoothing_sum(x)
        nu = self.nu(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(nu > 0, num / np.where(nu > 0, nu, 1.0), 0.0)
        return out

    def integral(self, region: Domain | None = None, clip: bool = True, n_mc: int | None = None, seed: int | None = None) -> float:
        region = self.domain if region is None else region
        if self.empty:
            return 0.0
        n = self.mc_points if n_mc is None else n_mc
        return _mc_integral(self.intensity, region, n, self.mc_seed if seed is None else seed)

    def integral_squared(self, region: Domain | None = None) -> float:
        region = self.domain if region is None else region
        if self.empty:
            return 0.0
        return _mc_integral(lambda p: self.intensity(p) ** 2, region, self.mc_points, self.mc_seed)

    def to_dict(self) -> dict:
        return {
            "estimator": self.tag,
            "kernel": self.params.to_dict(),
            "domain": self.domain.to_dict(),
            "events": self.events.tolist(),
        }


def fit_kie(events, params: KernelParams, domain: Domain) -> FittedKIE:
    """Store the data; evaluation is lazy. An empty pattern gives ``lambda = 0``."""
    X = _events(events, params.dim)
    empty = len(X) == 0
    if empty:
        warnings.warn("KIE fitted to an empty pattern; the estimate is identically zero", RuntimeWarning, stacklevel=2)
    return FittedKIE(events=X, params=params, domain=domain, empty=empty)


def kie_nu(model: FittedKIE, x) -> np.ndarray:
    return model.nu(x)


# --------------------------------------------------------------------------
# FIE


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam settings for the dual problem.

    ``alpha0`` overrides the default start, the constant vector minimising
    the objective along the all-ones direction.
    """

    lr: float = 0.01
    max_iters: int = 2000
    tol: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha0: tuple[float, ...] | None = None
    record_trace: bool = False


@dataclass
class DualResult:
    alpha: np.ndarray
    objective: np.ndarray
    grad_norm: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    trace: list | None = None


def dual_objective(u: np.ndarray, alpha: np.ndarray, gamma) -> np.ndarray:
    """``-sum log(H alpha) + alpha^T H alpha / gamma`` given ``u = H alpha``.

    Works row-wise on stacked problems; log arguments are floored.
    """
    gamma = np.asarray(gamma, dtype=float)
    logs = np.log(np.maximum(u, LOG_FLOOR)).sum(axis=-1)
    return -logs + (alpha * u).sum(axis=-1) / gamma


def _dual_grad(matvec, u, alpha, gamma):
    # H symmetric: grad = -H (1/u) + 2 H alpha / gamma, floor region has zero log-gradient
    inv = np.where(u > LOG_FLOOR, 1.0 / np.maximum(u, LOG_FLOOR), 0.0)
    return -matvec(inv) + 2.0 * u / gamma[:, None]


def solve_dual(matvec, n: int, gamma, cfg: OptimizerConfig = OptimizerConfig(), batch: int | None = None) -> DualResult:
    """Minimise the dual objective for one or several stacked problems.

    Parameters
    ----------
    matvec : callable
        Maps an array of shape ``(C, n)`` to ``H_c v_c`` row by row.
    n : int
        Number of events.
    gamma : float or array of shape (C,)
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    C = len(gamma) if batch is None else batch
    gamma = np.broadcast_to(gamma, (C,)).copy()

    ones = np.ones((C, n))
    if cfg.alpha0 is not None:
        alpha = np.broadcast_to(np.asarray(cfg.alpha0, dtype=float), (C, n)).copy()
    else:
        s = matvec(ones)
        S = s.sum(axis=1)
        # line minimiser of -N log c - sum log s_n + c^2 S / gamma
        scale = np.sqrt(np.where(S > 0, n * gamma / (2.0 * np.maximum(S, 1e-300)), 1.0))
        alpha = scale[:, None] * ones

    m = np.zeros_like(alpha)
    v = np.zeros_like(alpha)
    active = np.ones(C, dtype=bool)
    iters = np.zeros(C, dtype=int)
    trace = [] if cfg.record_trace else None

    u = matvec(alpha)
    g = _dual_grad(matvec, u, alpha, gamma)
    gnorm = np.abs(g).max(axis=1)
    active &= gnorm > cfg.tol
    for t in range(1, cfg.max_iters + 1):
        if not active.any():
            break
        if trace is not None:
            trace.append(dual_objective(u, alpha, gamma))
        a = active[:, None]
        m = np.where(a, cfg.beta1 * m + (1 - cfg.beta1) * g, m)
        v = np.where(a, cfg.beta2 * v + (1 - cfg.beta2) * g * g, v)
        mhat = m / (1 - cfg.beta1 ** t)
        vhat = v / (1 - cfg.beta2 ** t)
        alpha = np.where(a, alpha - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps), alpha)
        iters += active
        u = matvec(alpha)
        g = _dual_grad(matvec, u, alpha, gamma)
        gnorm = np.abs(g).max(axis=1)
        active &= gnorm > cfg.tol

    obj = dual_objective(u, alpha, gamma)
    if trace is not None:
        trace.append(obj)
    if not np.all(np.isfinite(obj)):
        raise NumericalError("dual objective became non-finite")
    return DualResult(alpha=alpha, objective=obj, grad_norm=gnorm, iterations=iters, converged=gnorm <= cfg.tol, trace=trace)


@dataclass(frozen=True, eq=False)
class FittedFIE:
    ek: EquivalentKernel
    alpha: np.ndarray
    events: np.ndarray
    w: np.ndarray = field(repr=False)
    result: DualResult | None = field(default=None, repr=False)

    tag = "fie"

    @property
    def domain(self) -> Domain:
        return self.ek.domain

    @property
    def dim(self) -> int:
        return self.ek.fmap.dim

    def latent(self, x) -> np.ndarray:
        """``f(x) = sum_n alpha_n h(x, x_n)``."""
        x = as_points(x, self.dim)
        out = np.empty(len(x))
        for s in range(0, len(x), _CHUNK):
            out[s : s + _CHUNK] = features(self.ek.fmap, x[s : s + _CHUNK]) @ self.w
        return out

    def intensity(self, x, clip: bool = True) -> np.ndarray:
        return self.latent(x) ** 2

    def integral(self, region: Domain | None = None, clip: bool = True) -> float:
        A = self.ek.A if region is None else edge_matrix(self.ek.fmap, region).A
        return float(self.w @ A @ self.w)

    def integral_squared(self, region: Domain | None = None) -> float:
        region = self.domain if region is None else region
        return _mc_integral(lambda p: self.intensity(p) ** 2, region, KIE_MC_POINTS, 0)

    def to_dict(self) -> dict:
        fm = self.ek.fmap
        return {
            "estimator": self.tag,
            "kernel": fm.params.to_dict(),
            "gamma": self.ek.gamma,
            **_fmap_dict(fm),
            "domain": self.domain.to_dict(),
            "alpha": self.alpha.tolist(),
            "events": self.events.tolist(),
        }


def fie_from_alpha(ek: EquivalentKernel, events, alpha, result: DualResult | None = None) -> FittedFIE:
    X = _events(events, ek.fmap.dim)
    alpha = np.asarray(alpha, dtype=float)
    w = ek.solve(features(ek.fmap, X).T @ alpha) if len(X) else np.zeros(ek.fmap.n_features)
    return FittedFIE(ek=ek, alpha=alpha, events=X, w=w, result=result)


def fit_fie(
    events,
    domain: Domain,
    params: KernelParams,
    gamma: float,
    M: int = 250,
    seed: int = 0,
    qmc: bool = True,
    opt: OptimizerConfig = OptimizerConfig(),
    ek: EquivalentKernel | None = None,
) -> FittedFIE:
    """Fit the dual coefficients with Adam using the degenerate form of ``H``."""
    if ek is None:
        fmap = build_feature_map(params, M, seed=seed, qmc=qmc)
        ek = build_equivalent_kernel(fmap, domain, gamma)
    X = _events(events, ek.fmap.dim)
    if len(X) == 0:
        raise ValueError("FIE needs at least one event")
    psi = ek.transform(X)  # H = psi psi^T, applied in O(NM)

    def matvec(v):
        return (v @ psi) @ psi.T

    res = solve_dual(matvec, len(X), ek.gamma, opt)
    return fie_from_alpha(ek, X, res.alpha[0], result=res)


# --------------------------------------------------------------------------
# shared interface

FittedModel = FittedK2IE | FittedKIE | FittedFIE


def intensity(model, x, clip: bool = True) -> np.ndarray:
    return model.intensity(x, clip=clip)


def integral(model, region: Domain | None = None, clip: bool = True) -> float:
    return model.integral(region, clip=clip)


def integral_squared_k2ie(model: FittedK2IE) -> float:
    return model.integral_squared()


def count_probability(model, region: Domain | None, n) -> np.ndarray:
    """Poisson probability of ``n`` events in ``region`` under the clipped estimate."""
    lam = max(model.integral(region, clip=True), 0.0)
    return stats.poisson.pmf(n, lam) if lam > 0 else np.where(np.asarray(n) == 0, 1.0, 0.0)


def _fmap_dict(fm: FeatureMap) -> dict:
    out = {"M": fm.M, "seed": fm.seed, "qmc": fm.qmc}
    if fm.seed < 0:
        # explicit frequencies cannot be regenerated from a seed
        out["frequencies"] = fm.omega[: fm.M].tolist()
    return out


def _fmap_from_dict(params: KernelParams, data: dict) -> FeatureMap:
    if "frequencies" in data:
        return FeatureMap.from_frequencies(params, data["frequencies"])
    return build_feature_map(params, int(data["M"]), seed=int(data["seed"]), qmc=bool(data["qmc"]))


def model_to_dict(model) -> dict:
    return model.to_dict()


def model_from_dict(data: dict):
    tag = data.get("estimator")
    params = KernelParams.from_dict(data["kernel"])
    domain = Domain.from_dict(data["domain"])
    if tag == "kie":
        return fit_kie(np.asarray(data["events"], dtype=float).reshape(-1, params.dim), params, domain)
    if tag not in ("k2ie", "fie"):
        raise ValueError(f"unknown estimator tag {tag!r}")
    fmap = _fmap_from_dict(params, data)
    ek = build_equivalent_kernel(fmap, domain, float(data["gamma"]))
    events = np.asarray(data.get("events", []), dtype=float).reshape(-1, params.dim)
    if tag == "k2ie":
        xi = np.asarray(data["xi"], dtype=float)
        return FittedK2IE(ek=ek, xi=xi, n_events=int(data.get("n_events", len(events))), events=events)
    return fie_from_alpha(ek, events, data["alpha"])


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
