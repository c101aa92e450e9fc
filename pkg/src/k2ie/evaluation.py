"""
Error metrics, held-out losses and fit timing.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .domain import Domain, as_points
from .estimators import LOG_FLOOR, OptimizerConfig, fit_fie, fit_k2ie, fit_kie
from .features import KernelParams
from .simulation import IntensitySpec

DEFAULT_GRID = {1: 10_000, 2: 500}


def default_grid(dim: int) -> int:
    return DEFAULT_GRID.get(dim, 50)


@dataclass(frozen=True, eq=False)
class EvalGrid:
    """Midpoint-rule grid over each rectangle of the domain.

    ``per_axis`` is the resolution across the bounding box; each rectangle
    gets a share proportional to its side lengths (at least one cell), so the
    weights sum to the domain measure exactly.
    """

    domain: Domain
    per_axis: int
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, domain: Domain, per_axis: int | None = None) -> "EvalGrid":
        n = default_grid(domain.dim) if per_axis is None else int(per_axis)
        if n < 1:
            raise ValueError("grid_per_axis must be positive")
        lo, hi = domain.bounds
        extent = hi - lo
        pts, wts = [], []
        for rect in domain:
            counts = np.maximum(1, np.rint(n * rect.sides / extent).astype(int))
            step = rect.sides / counts
            axes = [a + (np.arange(c) + 0.5) * s for a, c, s in zip(rect.lo, counts, step)]
            p = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
            pts.append(p)
            wts.append(np.full(len(p), rect.volume / len(p)))
        return cls(domain=domain, per_axis=n, points=np.concatenate(pts), weights=np.concatenate(wts))

    def mean(self, values) -> float:
        """``(1/|X|) int values`` by the midpoint rule."""
        return float(np.dot(self.weights, values) / self.domain.measure)


def _grid(spec_or_domain, grid) -> EvalGrid:
    if isinstance(grid, EvalGrid):
        return grid
    dom = spec_or_domain.domain if isinstance(spec_or_domain, IntensitySpec) else spec_or_domain
    return EvalGrid.build(dom, grid)


def _truth_and_estimate(spec: IntensitySpec, model, grid, truth):
    g = _grid(spec, grid)
    lam = spec.func(g.points) if truth is None else truth
    return g, lam, model.intensity(g.points, clip=True)


def l2_error(spec: IntensitySpec, model, grid_per_axis: int | EvalGrid | None = None, truth=None) -> float:
    """``(1/|X|) int (lambda* - lambda_hat)^2`` with the clipped estimate.

    ``truth`` may carry precomputed ``lambda*`` on the same grid.
    """
    g, lam, est = _truth_and_estimate(spec, model, grid_per_axis, truth)
    return g.mean((lam - est) ** 2)


def labs_error(spec: IntensitySpec, model, grid_per_axis: int | EvalGrid | None = None, truth=None) -> float:
    """``(1/|X|) int |lambda* - lambda_hat|`` with the clipped estimate."""
    g, lam, est = _truth_and_estimate(spec, model, grid_per_axis, truth)
    return g.mean(np.abs(lam - est))


def errors(spec: IntensitySpec, model, grid_per_axis: int | EvalGrid | None = None, truth=None) -> tuple[float, float]:
    """Both integrated errors from a single model evaluation."""
    g, lam, est = _truth_and_estimate(spec, model, grid_per_axis, truth)
    d = lam - est
    return g.mean(d * d), g.mean(np.abs(d))


def rho(l2_model, l2_kie) -> float:
    """Fraction of paired trials where the model's L2 is strictly below KIE's."""
    a, b = np.asarray(l2_model, dtype=float), np.asarray(l2_kie, dtype=float)
    if a.shape != b.shape:
        raise ValueError("rho needs paired records of equal length")
    if a.size == 0:
        raise ValueError("rho needs at least one trial")
    return float(np.mean(a < b))


def negativity_ratio(model, grid_per_axis: int | EvalGrid = 500) -> float:
    """Fraction of grid points where the raw estimate is negative.

    Points are weighted by their cell volume; on an evenly partitioned domain
    this is the plain fraction.
    """
    g = _grid(model.domain, grid_per_axis)
    neg = model.intensity(g.points, clip=False) < 0
    return float(np.sum(g.weights[neg]) / np.sum(g.weights))


def heldout_ls_loss(model, test) -> float:
    """``int lambda_hat^2 - 2 sum_test lambda_hat(x_n)`` on the raw estimate."""
    X = np.asarray(test, dtype=float)
    s = 0.0
    if X.size:
        s = float(np.sum(model.intensity(as_points(X, model.dim), clip=False)))
    return model.integral_squared() - 2.0 * s


def heldout_count_nll(model, test, cells: Domain) -> float:
    """Poisson count loss ``sum_j [L_j - N_j log L_j + log N_j!]`` over cells."""
    X = np.asarray(test, dtype=float)
    counts = np.zeros(len(cells), dtype=int)
    if X.size:
        idx = cells.locate(as_points(X, cells.dim))
        counts = np.bincount(idx[idx >= 0], minlength=len(cells))
    lam = np.array([max(model.integral(Domain([r]), clip=True), 0.0) for r in cells])
    return float(np.sum(lam - counts * np.log(np.maximum(lam, LOG_FLOOR)) + special.gammaln(counts + 1)))


def timed_fit(
    estimator: str,
    events,
    domain: Domain,
    params: KernelParams,
    gamma: float | None = None,
    M: int = 250,
    seed: int = 0,
    qmc: bool = True,
    opt: OptimizerConfig = OptimizerConfig(),
):
    """Fit from raw events and return ``(model, cpu_seconds)``.

    Process CPU time covers everything from the events to a usable model:
    feature map, edge matrix, factorisation and (for FIE) the optimiser.
    """
    t0 = time.process_time()
    if estimator == "k2ie":
        model = fit_k2ie(events, domain, params, gamma, M=M, seed=seed, qmc=qmc)
    elif estimator == "fie":
        model = fit_fie(events, domain, params, gamma, M=M, seed=seed, qmc=qmc, opt=opt)
    elif estimator == "kie":
        model = fit_kie(events, params, domain)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    cpu = time.process_time() - t0
    return model, max(cpu, 1e-9)


@dataclass
class MetricsRecord:
    estimator: str
    dataset: str
    trial: int
    L2: float
    Labs: float
    cpu_seconds: float
    negativity_ratio: float | None = None
    L_s: float | None = None
    L_c: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.L2 < 0 or self.Labs < 0:
            raise ValueError("integrated errors are non-negative")

    FIELDS = ("estimator", "dataset", "trial", "L2", "Labs", "cpu_seconds", "negativity_ratio", "L_s", "L_c")

    def row(self) -> list[str]:
        d = asdict(self)
        return ["" if d[k] is None else (repr(float(d[k])) if isinstance(d[k], float) else str(d[k])) for k in self.FIELDS]


def summarize(records: list[MetricsRecord]) -> dict:
    """Mean and standard deviation per (estimator, dataset), plus rho against KIE.

    ``sd`` is the sample standard deviation across trials (ddof=1).
    """
    out: dict = {}
    keys = sorted({(r.estimator, r.dataset) for r in records})
    for est, ds in keys:
        rs = sorted((r for r in records if r.estimator == est and r.dataset == ds), key=lambda r: r.trial)
        entry = {"trials": len(rs)}
        for name in ("L2", "Labs", "cpu_seconds", "negativity_ratio", "L_s", "L_c"):
            vals = np.array([getattr(r, name) for r in rs if getattr(r, name) is not None], dtype=float)
            if vals.size:
                entry[name] = {"mean": float(vals.mean()), "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0}
        if est != "kie":
            kie = {r.trial: r.L2 for r in records if r.estimator == "kie" and r.dataset == ds}
            paired = [(r.L2, kie[r.trial]) for r in rs if r.trial in kie]
            if paired:
                a, b = zip(*paired)
                entry["rho"] = rho(a, b)
        out.setdefault(ds, {})[est] = entry
    return out
