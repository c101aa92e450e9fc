"""
Synthetic intensities and an exact sampler for bounded Poisson processes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import special

from .domain import Domain, as_points
from .features import KernelParams, build_feature_map, features

PIECEWISE_KNOTS_3 = ((0.0, 2.0), (25.0, 3.0), (50.0, 1.0), (75.0, 2.5), (100.0, 3.0))

GP_COX_BETA = 1.0 / np.sqrt(2.0)  # exp(-|x - y|^2 / 2)
GP_COX_M = 500
GP_COX_HEIGHT = 50.0
GP_COX_STEEPNESS = 20.0
# draw whose expected event count (544.5) is closest to the published average of 543
DEFAULT_GP_SEED = 22


def _lambda_1(x):
    return 2.0 * np.exp(-x / 15.0) + np.exp(-(((x - 25.0) / 10.0) ** 2))


def _lambda_2(x):
    return 5.0 * np.sin(x**2) + 6.0


def _piecewise(knots):
    kx, ky = np.asarray(knots, dtype=float).T

    def f(x):
        return np.interp(x, kx, ky)

    return f


@dataclass(frozen=True, eq=False)
class IntensitySpec:
    """A known intensity on a domain with an upper bound for thinning.

    ``func`` maps an ``(n, d)`` array to ``n`` intensities. ``description`` is
    the JSON form (``kind``, ``params``, ``seed``) when one exists.
    """

    func: Callable[[np.ndarray], np.ndarray]
    domain: Domain
    lambda_max: float
    kind: str = "custom"
    description: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.lambda_max >= 0 and np.isfinite(self.lambda_max)):
            raise ValueError("lambda_max must be finite and non-negative")
        # spot check the bound on a grid
        lo, hi = self.domain.bounds
        n = 2001 if self.domain.dim == 1 else max(3, int(round(10000 ** (1 / self.domain.dim))))
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.domain.dim)
        grid = grid[self.domain.locate(grid) >= 0]
        vals = self.func(grid)
        if np.any(vals < -1e-12) or np.any(vals > self.lambda_max * (1 + 1e-9) + 1e-12):
            raise ValueError(f"{self.kind}: intensity leaves [0, lambda_max={self.lambda_max}]")

    @property
    def dim(self) -> int:
        return self.domain.dim

    def __call__(self, x) -> np.ndarray:
        return eval_intensity(self, x)

    def restrict(self, domain: Domain) -> "IntensitySpec":
        """Same function observed on a sub-domain."""
        desc = None if self.description is None else dict(self.description, domain=domain.to_dict())
        return IntensitySpec(self.func, domain, self.lambda_max, self.kind, desc)

    def to_dict(self) -> dict:
        if self.description is None:
            raise ValueError("a callable intensity has no JSON form")
        return dict(self.description, domain=self.domain.to_dict())


def eval_intensity(spec: IntensitySpec, x, check_domain: bool = True) -> np.ndarray:
    x = as_points(x, spec.dim)
    if check_domain and len(x) and np.any(spec.domain.locate(x) < 0):
        raise ValueError("intensity evaluated outside its domain")
    return np.asarray(spec.func(x), dtype=float)


def analytic_1d(which: int) -> IntensitySpec:
    """The three one-dimensional test intensities."""
    if which == 1:
        f, dom, top = _lambda_1, Domain.box([0.0], [50.0]), 3.0
    elif which == 2:
        f, dom, top = _lambda_2, Domain.box([0.0], [5.0]), 11.0
    elif which == 3:
        f, dom, top = _piecewise(PIECEWISE_KNOTS_3), Domain.box([0.0], [100.0]), 3.0
    else:
        raise ValueError("which must be 1, 2 or 3")
    return IntensitySpec(
        func=lambda x, f=f: f(x[:, 0]),
        domain=dom,
        lambda_max=top,
        kind=f"analytic_1d_{which}",
        description={"kind": f"analytic_1d_{which}", "params": {}},
    )


def scaled(base: IntensitySpec, factor: float) -> IntensitySpec:
    desc = None
    if base.description is not None:
        desc = {"kind": "scaled", "params": {"base": base.description, "factor": float(factor)}}
    return IntensitySpec(
        func=lambda x: factor * base.func(x),
        domain=base.domain,
        lambda_max=factor * base.lambda_max,
        kind=f"{factor:g}x{base.kind}",
        description=desc,
    )


def sigmoid_link(z) -> np.ndarray:
    """``50 / (1 + exp(-20 z))``."""
    return GP_COX_HEIGHT * special.expit(GP_COX_STEEPNESS * np.asarray(z))


def sample_gp_cox_2d(seed: int = DEFAULT_GP_SEED, domain: Domain | None = None) -> IntensitySpec:
    """Sigmoidal Gaussian-process intensity on ``[0, 5]^2``.

    The GP draw is ``f(x) = w . phi(x)`` with 1000 pseudo-random Fourier
    features of ``exp(-|x - y|^2 / 2)`` and i.i.d. standard normal ``w``.
    """
    domain = Domain.box([0.0, 0.0], [5.0, 5.0]) if domain is None else domain
    fmap = build_feature_map(KernelParams([GP_COX_BETA] * 2), GP_COX_M, seed=seed, qmc=False)
    w = np.random.default_rng([seed, 2]).standard_normal(fmap.n_features)

    def func(x):
        out = np.empty(len(x))
        for s in range(0, len(x), 8192):
            out[s : s + 8192] = sigmoid_link(features(fmap, x[s : s + 8192]) @ w)
        return out

    return IntensitySpec(
        func=func,
        domain=domain,
        lambda_max=GP_COX_HEIGHT,
        kind="gp_cox_2d",
        description={"kind": "gp_cox_2d", "params": {}, "seed": int(seed)},
    )


def constant(value: float, domain: Domain) -> IntensitySpec:
    return IntensitySpec(
        func=lambda x: np.full(len(x), float(value)),
        domain=domain,
        lambda_max=float(value),
        kind="constant",
        description={"kind": "constant", "params": {"value": float(value)}},
    )


def spec_from_dict(data: dict, domain: Domain | None = None) -> IntensitySpec:
    """Build a spec from its JSON form.

    ``params.lambda_max`` overrides the default bound of any kind.
    """
    kind = data.get("kind")
    params = data.get("params", {}) or {}
    if domain is None and "domain" in data:
        domain = Domain.from_dict(data["domain"])
    if kind in ("analytic_1d_1", "analytic_1d_2", "analytic_1d_3"):
        spec = analytic_1d(int(kind[-1]))
    elif kind == "scaled":
        spec = scaled(spec_from_dict(params["base"]), float(params["factor"]))
    elif kind == "gp_cox_2d":
        spec = sample_gp_cox_2d(int(data.get("seed", DEFAULT_GP_SEED)))
    elif kind == "constant":
        if domain is None:
            raise ValueError("a constant intensity needs a domain")
        spec = constant(float(params["value"]), domain)
    elif kind == "custom":
        if domain is None:
            raise ValueError("a custom intensity needs a domain")
        if "knots" in params:
            f = _piecewise(params["knots"])
            func = lambda x, f=f: f(x[:, 0])  # noqa: E731
        elif "value" in params:
            func = lambda x, v=float(params["value"]): np.full(len(x), v)  # noqa: E731
        else:
            raise ValueError("custom intensity needs 'knots' or 'value'")
        if "lambda_max" not in params:
            raise ValueError("custom intensity needs params.lambda_max")
        spec = IntensitySpec(func, domain, float(params["lambda_max"]), "custom", dict(data))
    else:
        raise ValueError(f"unknown intensity kind {kind!r}")
    if "lambda_max" in params and kind != "custom":
        spec = IntensitySpec(spec.func, spec.domain, float(params["lambda_max"]), spec.kind, spec.description)
    if domain is not None and domain != spec.domain:
        spec = spec.restrict(domain)
    return spec


def load_spec(path) -> IntensitySpec:
    return spec_from_dict(json.loads(Path(path).read_text()))


def simulate_thinning(spec: IntensitySpec, rng: np.random.Generator) -> np.ndarray:
    """Lewis-Shedler thinning: homogeneous candidates at ``lambda_max``, each
    kept with probability ``lambda(x) / lambda_max``."""
    dom = spec.domain
    if spec.lambda_max == 0:
        return np.empty((0, dom.dim))
    n = rng.poisson(spec.lambda_max * dom.measure)
    cand = dom.sample_uniform(n, rng)
    u = rng.random(n)
    if n == 0:
        return cand
    keep = u * spec.lambda_max < spec.func(cand)
    return cand[keep]


def drop_subdomains(domain: Domain, keep_prob: float, rng: np.random.Generator, max_tries: int = 1000) -> Domain:
    """Keep each rectangle independently with probability ``keep_prob``.

    An empty draw is resampled.
    """
    if not 0 < keep_prob <= 1:
        raise ValueError("keep_prob must lie in (0, 1]")
    for _ in range(max_tries):
        keep = rng.random(len(domain)) < keep_prob
        if keep.any():
            return domain.subset(keep)
    raise RuntimeError("no sub-domain retained")


def trial_rng(root_seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    """Independent counter-based (Philox) stream keyed by root seed and trial."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(root_seed), int(trial), int(stream)])))


DATASETS = (
    "1d_1", "1d_2", "1d_3",
    "1d_1_x10", "1d_2_x10", "1d_3_x10",
    "2d_p10", "2d_p09", "2d_p08",
)


def dataset_spec(name: str, gp_seed: int = DEFAULT_GP_SEED) -> tuple[IntensitySpec, float]:
    """Truth and sub-domain retention probability of a named dataset."""
    if name.startswith("1d_"):
        base = analytic_1d(int(name[3]))
        return (scaled(base, 10.0) if name.endswith("_x10") else base), 1.0
    if name.startswith("2d_p"):
        keep = {"2d_p10": 1.0, "2d_p09": 0.9, "2d_p08": 0.8}[name]
        grid = Domain.grid([0.0, 0.0], [5.0, 5.0], 5)
        return sample_gp_cox_2d(gp_seed, domain=grid), keep
    raise ValueError(f"unknown dataset {name!r}")


def simulate_dataset(name: str, root_seed: int, trial: int, gp_seed: int = DEFAULT_GP_SEED):
    """Events and observed domain for one trial of a named dataset."""
    spec, keep = dataset_spec(name, gp_seed)
    rng = trial_rng(root_seed, trial)
    events = simulate_thinning(spec, rng)
    domain = spec.domain
    if keep < 1.0:
        domain = drop_subdomains(domain, keep, rng)
        events = events[domain.locate(events) >= 0]
    return events, domain, spec.restrict(domain)
