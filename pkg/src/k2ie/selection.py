"""
Hyperparameter selection by Monte-Carlo cross-validation with p-thinning.

Each fold splits the events independently: an event goes to the training
set with probability ``p``. A fit on the training set estimates ``p *
lambda``; it is rescaled by ``(1 - p) / p`` before being scored against the
validation set, whose intensity is ``(1 - p) * lambda``.

The same fold splits are reused for every grid cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .domain import Domain
from .equivalent import edge_matrix
from .estimators import (
    KIE_MC_POINTS,
    LOG_FLOOR,
    OptimizerConfig,
    _events,
    gaussian_box_mass,
    solve_dual,
)
from .features import KernelParams, build_feature_map, features, kernel_exact

ESTIMATORS = ("kie", "fie", "k2ie")


class SelectionError(RuntimeError):
    """Every grid cell was disqualified."""


def log_grid(lo: float, hi: float, n: int = 10) -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(np.log10(lo), np.log10(hi), n))


@dataclass(frozen=True)
class CVPlan:
    p: float = 0.6
    folds: int = 5
    beta_grid: tuple[float, ...] = log_grid(0.1, 100.0)
    gamma_grid: tuple[float, ...] = log_grid(0.1, 100.0)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie strictly between 0 and 1")
        if self.folds < 2:
            raise ValueError("need at least two folds")
        for name in ("beta_grid", "gamma_grid"):
            g = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if not g or any(v <= 0 for v in g) or any(b <= a for a, b in zip(g, g[1:])):
                raise ValueError(f"{name} must be positive and strictly increasing")
            object.__setattr__(self, name, g)

    @classmethod
    def real_data(cls, **kw) -> "CVPlan":
        """Preset with the smaller regularisation range used for real data."""
        return cls(gamma_grid=log_grid(1e-3, 1.0), **kw)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "folds": self.folds,
            "beta_grid": list(self.beta_grid),
            "gamma_grid": list(self.gamma_grid),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CVPlan":
        kw = {k: data[k] for k in ("p", "folds", "beta_grid", "gamma_grid", "seed") if k in data}
        return cls(**kw)


@dataclass
class CVResult:
    estimator: str
    beta_bar: np.ndarray
    beta_grid: np.ndarray
    gamma_grid: np.ndarray
    fold_losses: np.ndarray  # (n_beta, n_gamma, folds)
    floored: np.ndarray = field(default=None)  # validation points hitting the log floor

    @property
    def mean_losses(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.fold_losses.mean(axis=-1)

    @property
    def selected_index(self) -> tuple[int, int]:
        loss = np.where(np.isfinite(self.mean_losses), self.mean_losses, np.inf)
        if not np.isfinite(loss).any():
            raise SelectionError("all grid cells were disqualified")
        # argmin returns the first minimum: smallest beta, then smallest gamma
        flat = int(np.argmin(loss))
        return np.unravel_index(flat, loss.shape)

    @property
    def beta(self) -> np.ndarray:
        return self.beta_bar * self.beta_grid[self.selected_index[0]]

    @property
    def gamma(self) -> float | None:
        if self.estimator == "kie":
            return None
        return float(self.gamma_grid[self.selected_index[1]])

    @property
    def on_boundary(self) -> bool:
        i, j = self.selected_index
        nb, ng = self.mean_losses.shape
        edge_b = i in (0, nb - 1)
        edge_g = self.estimator != "kie" and j in (0, ng - 1)
        return edge_b or edge_g

    def to_dict(self) -> dict:
        i, j = self.selected_index
        return {
            "estimator": self.estimator,
            "beta_bar": self.beta_bar.tolist(),
            "beta_multipliers": self.beta_grid.tolist(),
            "gamma_grid": self.gamma_grid.tolist(),
            "mean_loss": _json_floats(self.mean_losses),
            "fold_losses": _json_floats(self.fold_losses),
            "selected": {
                "beta_index": int(i),
                "gamma_index": int(j),
                "beta": self.beta.tolist(),
                "gamma": self.gamma,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _json_floats(a):
    return [(_json_floats(v) if np.ndim(v) else (float(v) if np.isfinite(v) else None)) for v in a]


def beta_bar(domain: Domain) -> np.ndarray:
    """Inverse extent of the domain's bounding box along each axis."""
    lo, hi = domain.bounds
    return 1.0 / (hi - lo)


def thin(events, p: float, rng: np.random.Generator):
    """Split a pattern by independent retention with probability ``p``."""
    events = np.asarray(events, dtype=float)
    keep = rng.random(len(events)) < p
    return events[keep], events[~keep]


def fold_masks(n: int, plan: CVPlan) -> np.ndarray:
    """Training indicators, shape ``(folds, n)``, shared by all grid cells."""
    rng = np.random.default_rng(plan.seed)
    return np.stack([rng.random(n) < plan.p for _ in range(plan.folds)])


def _scale(p: float) -> float:
    return (1.0 - p) / p


def cv_loss_ls(model, validation, p: float) -> float:
    """Least-squares loss of the rescaled training fit on the validation set."""
    r = _scale(p)
    val = _events(validation, model.dim)
    data = model.intensity(val, clip=False).sum() if len(val) else 0.0
    return float(r * r * model.integral_squared() - 2.0 * r * data)


def cv_loss_nll(model, validation, p: float) -> float:
    """Poisson negative log-likelihood of the rescaled fit on the validation set.

    Log arguments are floored at ``1e-10``; a non-finite intensity disqualifies
    the fit with ``inf``.
    """
    r = _scale(p)
    val = _events(validation, model.dim)
    lam = r * model.intensity(val, clip=True) if len(val) else np.zeros(0)
    if not np.all(np.isfinite(lam)):
        return float("inf")
    return float(r * model.integral(clip=True) - np.log(np.maximum(lam, LOG_FLOOR)).sum())


# --------------------------------------------------------------------------
# grid search


def _spectral(params: KernelParams, domain: Domain, M: int, seed: int, qmc: bool):
    fmap = build_feature_map(params, M, seed=seed, qmc=qmc)
    A = edge_matrix(fmap, domain).A
    lam, U = linalg.eigh(A)
    return fmap, np.maximum(lam, 0.0), U


def _grid_k2ie(X, domain, bb, plan, masks, M, seed, qmc):
    r = _scale(plan.p)
    gam = np.asarray(plan.gamma_grid)
    out = np.empty((len(plan.beta_grid), len(gam), plan.folds))
    for i, mult in enumerate(plan.beta_grid):
        fmap, lam, U = _spectral(KernelParams(bb * mult), domain, M, seed, qmc)
        Pt = features(fmap, X) @ U  # eigenbasis features, (N, 2M)
        s_tr = masks @ Pt  # (folds, 2M)
        s_val = (~masks) @ Pt
        d = 1.0 / (1.0 / gam[:, None] + lam[None, :])  # (G, 2M)
        xi = d[:, None, :] * s_tr[None]  # (G, folds, 2M)
        sq = (xi * xi * lam).sum(axis=-1)
        data = (xi * s_val[None]).sum(axis=-1)
        out[i] = r * r * sq - 2.0 * r * data
    return out, np.zeros_like(out, dtype=int)


def _grid_kie(X, domain, bb, plan, masks, n_mc=KIE_MC_POINTS):
    r = _scale(plan.p)
    Z = domain.sample_uniform(n_mc, np.random.default_rng([plan.seed, 1]))
    T = masks.T.astype(float)  # (N, folds)
    out = np.empty((len(plan.beta_grid), 1, plan.folds))
    floored = np.zeros_like(out, dtype=int)
    for i, mult in enumerate(plan.beta_grid):
        params = KernelParams(bb * mult)
        nu_z = gaussian_box_mass(params, domain, Z)
        nu_x = gaussian_box_mass(params, domain, X)
        sums_z = np.empty((len(Z), plan.folds))
        for s in range(0, len(Z), 8192):
            sums_z[s : s + 8192] = kernel_exact(params, Z[s : s + 8192], X) @ T
        lam_z = sums_z / nu_z[:, None]
        integ = domain.measure * lam_z.mean(axis=0)  # (folds,)
        lam_x = (kernel_exact(params, X, X) @ T) / nu_x[:, None]  # (N, folds)
        for f in range(plan.folds):
            val = ~masks[f]
            lv = r * lam_x[val, f]
            floored[i, 0, f] = int(np.sum(lv < LOG_FLOOR))
            if not np.all(np.isfinite(lv)):
                out[i, 0, f] = np.inf
                continue
            out[i, 0, f] = r * integ[f] - np.log(np.maximum(lv, LOG_FLOOR)).sum()
    return out, floored


def _grid_fie(X, domain, bb, plan, masks, M, seed, qmc, opt):
    r = _scale(plan.p)
    gam = np.asarray(plan.gamma_grid)
    G = len(gam)
    out = np.empty((len(plan.beta_grid), G, plan.folds))
    floored = np.zeros_like(out, dtype=int)
    for i, mult in enumerate(plan.beta_grid):
        fmap, lam, U = _spectral(KernelParams(bb * mult), domain, M, seed, qmc)
        Pt = features(fmap, X) @ U
        d = 1.0 / (1.0 / gam[:, None] + lam[None, :])  # (G, 2M)
        for f in range(plan.folds):
            tr, val = masks[f], ~masks[f]
            Ptr, Pval = Pt[tr], Pt[val]
            n = len(Ptr)
            if n == 0:
                out[i, :, f] = np.inf
                continue
            if n <= Ptr.shape[1]:
                H = np.einsum("ik,gk,jk->gij", Ptr, d, Ptr, optimize=True)

                def matvec(v, H=H):
                    return np.einsum("gij,gj->gi", H, v)
            else:
                Psi = Ptr[None] * np.sqrt(d)[:, None, :]  # (G, n, 2M)

                def matvec(v, Psi=Psi):
                    return np.einsum("gik,gk->gi", Psi, np.einsum("gi,gik->gk", v, Psi))

            res = solve_dual(matvec, n, gam, opt)
            wt = d * (res.alpha @ Ptr)  # eigenbasis weights, (G, 2M)
            integ = (wt * wt * lam).sum(axis=-1)
            fv = wt @ Pval.T  # (G, n_val)
            lv = r * fv * fv
            floored[i, :, f] = (lv < LOG_FLOOR).sum(axis=1)
            loss = r * integ - np.log(np.maximum(lv, LOG_FLOOR)).sum(axis=1)
            loss[~np.isfinite(res.objective)] = np.inf
            out[i, :, f] = loss
    return out, floored


def grid_search(
    events,
    domain: Domain,
    estimator: str,
    plan: CVPlan = CVPlan(),
    M: int = 250,
    seed: int = 0,
    qmc: bool = True,
    opt: OptimizerConfig = OptimizerConfig(),
) -> CVResult:
    """Score every grid cell, averaging the loss over the plan's folds.

    K2IE is scored with the least-squares loss, KIE and FIE with the Poisson
    negative log-likelihood. KIE only searches over ``beta``.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    X = _events(events, domain.dim)
    bb = beta_bar(domain)
    masks = fold_masks(len(X), plan)
    if estimator == "k2ie":
        losses, floored = _grid_k2ie(X, domain, bb, plan, masks, M, seed, qmc)
        gammas = np.asarray(plan.gamma_grid)
    elif estimator == "kie":
        losses, floored = _grid_kie(X, domain, bb, plan, masks)
        gammas = np.array([np.nan])
    else:
        losses, floored = _grid_fie(X, domain, bb, plan, masks, M, seed, qmc, opt)
        gammas = np.asarray(plan.gamma_grid)
    res = CVResult(
        estimator=estimator,
        beta_bar=bb,
        beta_grid=np.asarray(plan.beta_grid),
        gamma_grid=gammas,
        fold_losses=losses,
        floored=floored,
    )
    res.selected_index  # raises SelectionError when nothing is finite
    return res
