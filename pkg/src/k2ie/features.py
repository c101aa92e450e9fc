"""
Random Fourier feature maps for shift-invariant kernels.

The map has ``2M`` features: ``M`` cosines and ``M`` sines sharing the same
frequencies,

    phi_m(x) = M^{-1/2} cos(w_m . x + theta_m),

with ``theta = 0`` for the first block and ``-pi/2`` for the second, so that
``phi(x) . phi(y)`` is the Monte-Carlo (or quasi-Monte-Carlo) estimate of
``k(x - y)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .domain import as_points

KERNEL_FAMILIES = ("gaussian",)


@dataclass(frozen=True)
class KernelParams:
    """Multiplicative Gaussian kernel ``exp(-|beta * (x - y)|^2)``."""

    beta: tuple[float, ...]
    family: str = "gaussian"

    def __post_init__(self):
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        if not beta or any(not (b > 0 and np.isfinite(b)) for b in beta):
            raise ValueError(f"inverse length-scales must be positive, got {beta}")
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self) -> int:
        return len(self.beta)

    def to_dict(self) -> dict:
        return {"family": self.family, "beta": list(self.beta)}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelParams":
        return cls(beta=data["beta"], family=data.get("family", "gaussian"))


def kernel_exact(params: KernelParams, x, y) -> np.ndarray:
    """Closed-form kernel between every row of ``x`` and every row of ``y``."""
    x = as_points(x, params.dim)
    y = as_points(y, params.dim)
    beta = np.asarray(params.beta)
    r2 = np.zeros((len(x), len(y)))
    for i in range(params.dim):
        r2 += (beta[i] * (x[:, i, None] - y[None, :, i])) ** 2
    return np.exp(-r2)


def halton_normal(n: int, d: int, seed: int | None = 0, scramble: bool = True) -> np.ndarray:
    """``n`` Halton points (prime bases, axis order) mapped to N(0, I).

    The leading point is skipped: unscrambled it is the origin, whose normal
    quantile is infinite. Scrambling is seeded and therefore reproducible.
    """
    sampler = qmc.Halton(d=d, scramble=scramble, seed=seed if scramble else None)
    sampler.fast_forward(1)
    u = np.clip(sampler.random(n), 1e-300, np.nextafter(1.0, 0.0))
    return ndtri(u)


def _spectral_standard(family: str, n: int, d: int, seed: int, use_qmc: bool) -> np.ndarray:
    # standard-normal draws; scaled per family afterwards
    if family == "gaussian":
        if use_qmc:
            return halton_normal(n, d, seed=seed)
        return np.random.default_rng(seed).standard_normal((n, d))
    raise ValueError(f"no spectral sampler for family {family!r}")


def spectral_scale(params: KernelParams) -> np.ndarray:
    # exp(-beta^2 r^2) is the characteristic function of N(0, 2 beta^2)
    return np.sqrt(2.0) * np.asarray(params.beta)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Frozen random Fourier feature map.

    Attributes
    ----------
    params : KernelParams
    M : int
        Half the number of features.
    omega : ndarray, shape (2M, d)
    theta : ndarray, shape (2M,)
    seed, qmc :
        Construction arguments, kept so the map can be rebuilt bit-for-bit.
    """

    params: KernelParams
    M: int
    omega: np.ndarray
    theta: np.ndarray
    seed: int = 0
    qmc: bool = True

    def __post_init__(self):
        M = self.M
        if self.omega.shape != (2 * M, self.params.dim) or self.theta.shape != (2 * M,):
            raise ValueError("omega must be (2M, d) and theta (2M,)")
        if not np.array_equal(self.omega[:M], self.omega[M:]):
            raise ValueError("the sine block must reuse the cosine frequencies")
        if np.any(self.theta[:M] != 0.0) or np.any(self.theta[M:] != -0.5 * np.pi):
            raise ValueError("phases must be 0 (cosine block) and -pi/2 (sine block)")
        self.omega.setflags(write=False)
        self.theta.setflags(write=False)

    @classmethod
    def from_frequencies(cls, params: KernelParams, base_omega) -> "FeatureMap":
        """Map with explicitly given distinct frequencies, shape ``(M, d)``."""
        w = np.array(base_omega, dtype=float).reshape(-1, params.dim)
        M = len(w)
        theta = np.concatenate([np.zeros(M), np.full(M, -0.5 * np.pi)])
        return cls(params=params, M=M, omega=np.vstack([w, w]), theta=theta, seed=-1, qmc=False)

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def n_features(self) -> int:
        return 2 * self.M

    @property
    def base_omega(self) -> np.ndarray:
        """The ``M`` distinct frequencies (rows shared by both blocks)."""
        return self.omega[: self.M]

    def __call__(self, x) -> np.ndarray:
        return features(self, x)


def build_feature_map(params: KernelParams, M: int, seed: int = 0, qmc: bool = True) -> FeatureMap:
    """Draw ``M`` frequencies from the kernel's spectral density.

    With ``qmc=True`` the draws come from a Halton sequence scrambled with
    ``seed``; otherwise they are pseudo-random from ``default_rng(seed)``.
    Identical arguments give an identical map.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    z = _spectral_standard(params.family, M, params.dim, seed, qmc)
    w = z * spectral_scale(params)
    fmap = FeatureMap.from_frequencies(params, w)
    return FeatureMap(params, fmap.M, fmap.omega, fmap.theta, seed=int(seed), qmc=bool(qmc))


def features(fmap: FeatureMap, x) -> np.ndarray:
    """Feature matrix of shape ``(n, 2M)`` for points ``x``.

    Valid for any location, inside or outside an observation window.
    """
    x = as_points(x, fmap.dim)
    proj = x @ fmap.base_omega.T
    out = np.empty((len(x), 2 * fmap.M))
    # cos(u - pi/2) is sin(u); computing it directly avoids rounding in the phase
    np.cos(proj, out=out[:, : fmap.M])
    np.sin(proj, out=out[:, fmap.M :])
    out *= 1.0 / np.sqrt(fmap.M)
    return out


def kernel_approx(fmap: FeatureMap, x, y) -> np.ndarray:
    """``phi(x) phi(y)^T`` as an ``(n, m)`` matrix."""
    return features(fmap, x) @ features(fmap, y).T
