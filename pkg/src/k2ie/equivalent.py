"""
Equivalent RKHS kernel in degenerate (finite-rank) form.

With a feature map ``phi`` approximating ``k``, the Fredholm equation

    h(x, y) / gamma + int_X k(x, s) h(s, y) ds = k(x, y)

is solved exactly in feature space by

    h(x, y) = phi(x)^T (I / gamma + A)^{-1} phi(y),   A = int_X phi phi^T dx,

and ``A`` has a closed form over unions of boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .domain import Domain, HyperRect
from .features import FeatureMap, features


class NumericalError(RuntimeError):
    """Raised when a factorization or optimisation breaks down."""


def sinc(t) -> np.ndarray:
    """Unnormalised ``sin(t)/t`` with a series branch near zero."""
    t = np.asarray(t, dtype=float)
    small = np.abs(t) < 1e-8
    safe = np.where(small, 1.0, t)
    return np.where(small, 1.0 - t * t / 6.0, np.sin(safe) / safe)


def zeta(rect: HyperRect, omega, theta) -> np.ndarray:
    """``int_rect cos(omega . x + theta) dx`` in closed form.

    ``omega`` may carry leading batch axes, shape ``(..., d)``; ``theta``
    broadcasts against the batch shape.
    """
    omega = np.asarray(omega, dtype=float)
    sides = rect.sides
    phase = omega @ rect.center + theta
    return np.cos(phase) * np.prod(sides * sinc(0.5 * omega * sides), axis=-1)


def _pair_sinc(b: np.ndarray, sign: float) -> np.ndarray:
    """``sinc(b_m + sign * b_n)`` for all pairs.

    The numerator uses the addition formula so only O(M) sines are evaluated.
    Its absolute error is ~1e-16, so entries with ``|t| < 1e-3`` (where that
    error would exceed ~1e-13 relative) are recomputed directly.
    """
    sb, cb = np.sin(b), np.cos(b)
    t = np.add.outer(b, sign * b)
    num = np.multiply.outer(sb, cb)
    num += sign * np.multiply.outer(cb, sb)
    near = np.nonzero(np.abs(t) < 1e-3)
    tn = t[near]
    small = np.abs(tn) < 1e-8
    num[near] = np.where(small, 1.0, np.sin(tn) / np.where(small, 1.0, tn))
    t[near] = 1.0
    num /= t
    return num


def _accumulate_rect(A: np.ndarray, W: np.ndarray, rect: HyperRect) -> None:
    """Add ``int_rect phi phi^T`` into ``A`` in place.

    With ``P(w) = prod_i side_i sinc(w_i side_i / 2)`` and ``a = W c``, the
    cos/sin blocks are ``P(w_m +- w_n)`` times ``cos`` or ``sin`` of
    ``a_m +- a_n``, expanded with the addition formulas. Every block is exactly
    symmetric or antisymmetric, so ``A`` stays exactly symmetric.
    """
    M = len(W)
    c, s = rect.center, rect.sides
    ps = pd = None
    for i in range(W.shape[1]):
        b = 0.5 * W[:, i] * s[i]
        qs, qd = _pair_sinc(b, 1.0), _pair_sinc(b, -1.0)
        ps = qs if ps is None else ps * qs
        pd = qd if pd is None else pd * qd
    scale = 0.5 / M * np.prod(s)
    ps *= scale
    pd *= scale
    a = W @ c
    sa, ca = np.sin(a), np.cos(a)
    cc, ss = np.multiply.outer(ca, ca), np.multiply.outer(sa, sa)
    sc = np.multiply.outer(sa, ca)
    cos_sum = ps * (cc - ss)
    cos_dif = pd * (cc + ss)
    sin_sum = ps * (sc + sc.T)
    sin_dif = pd * (sc - sc.T)
    A[:M, :M] += cos_sum + cos_dif
    A[M:, M:] += cos_dif - cos_sum
    A[:M, M:] += sin_sum - sin_dif
    A[M:, :M] += sin_sum + sin_dif


def rect_edge_matrix(fmap: FeatureMap, rect: HyperRect) -> np.ndarray:
    """``int_rect phi(x) phi(x)^T dx`` for a single box."""
    A = np.zeros((fmap.n_features, fmap.n_features))
    _accumulate_rect(A, fmap.base_omega, rect)
    return A


@dataclass(frozen=True, eq=False)
class EdgeMatrix:
    """``A = sum_j A^j`` over the rectangles of a domain.

    ``parts`` holds the per-rectangle addends when requested at construction.
    """

    A: np.ndarray
    parts: tuple[np.ndarray, ...] | None = None

    def __array__(self, dtype=None, copy=None):
        return self.A if dtype is None else self.A.astype(dtype)


def edge_matrix(fmap: FeatureMap, domain: Domain, keep_parts: bool = False) -> EdgeMatrix:
    if keep_parts:
        parts = tuple(rect_edge_matrix(fmap, r) for r in domain)
        return EdgeMatrix(A=np.sum(parts, axis=0), parts=parts)
    A = np.zeros((fmap.n_features, fmap.n_features))
    for rect in domain:
        _accumulate_rect(A, fmap.base_omega, rect)
    return EdgeMatrix(A=A)


def feature_integral(fmap: FeatureMap, domain: Domain) -> np.ndarray:
    """``int_X phi_m(x) dx`` for every feature, shape ``(2M,)``."""
    W = fmap.base_omega
    out = np.zeros(2 * fmap.M)
    for rect in domain:
        p = np.prod(rect.sides * sinc(0.5 * W * rect.sides), axis=-1)
        u = W @ rect.center
        out[: fmap.M] += p * np.cos(u)
        out[fmap.M :] += p * np.sin(u)
    return out / np.sqrt(fmap.M)


@dataclass(frozen=True, eq=False)
class EquivalentKernel:
    """Factorised equivalent kernel.

    ``chol`` is the lower Cholesky factor ``R`` of ``I/gamma + A``; the
    public factor is ``L = R^{-1}`` so that ``L^T L = B = (I/gamma + A)^{-1}``.
    """

    fmap: FeatureMap
    gamma: float
    edge: EdgeMatrix
    domain: Domain
    chol: np.ndarray = field(repr=False)

    @property
    def A(self) -> np.ndarray:
        return self.edge.A

    @cached_property
    def B(self) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), np.eye(len(self.chol)))

    @cached_property
    def L(self) -> np.ndarray:
        return linalg.solve_triangular(self.chol, np.eye(len(self.chol)), lower=True)

    def solve(self, v) -> np.ndarray:
        """``B v`` via the stored factorisation."""
        return linalg.cho_solve((self.chol, True), v)

    def transform(self, x) -> np.ndarray:
        """Rows ``L phi(x_n)``, shape ``(n, 2M)``; ``h(x, y)`` is their inner product."""
        phi = features(self.fmap, x)
        return linalg.solve_triangular(self.chol, phi.T, lower=True).T

    def __call__(self, x, y) -> np.ndarray:
        return h_eval(self, x, y)


def build_equivalent_kernel(fmap: FeatureMap, domain: Domain, gamma: float, edge: EdgeMatrix | None = None) -> EquivalentKernel:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if edge is None:
        edge = edge_matrix(fmap, domain)
    C = edge.A + np.eye(fmap.n_features) / gamma
    try:
        R = linalg.cholesky(C, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"I/gamma + A is not positive definite (gamma={gamma})") from exc
    return EquivalentKernel(fmap=fmap, gamma=float(gamma), edge=edge, domain=domain, chol=R)


def h_eval(ek: EquivalentKernel, x, y) -> np.ndarray:
    """Equivalent kernel matrix ``h(x_i, y_j)``; points may lie outside the domain."""
    return ek.transform(x) @ ek.transform(y).T
