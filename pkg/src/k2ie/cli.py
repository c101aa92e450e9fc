"""
Command-line interface: simulate, cv, fit, eval and benchmark.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
Errors are printed to stderr as one line ``error: <kind>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .domain import Domain, DomainError, load_domain, save_domain
from .equivalent import NumericalError
from .estimators import OptimizerConfig, load_model, save_model
from .evaluation import (
    EvalGrid,
    MetricsRecord,
    errors,
    heldout_count_nll,
    heldout_ls_loss,
    negativity_ratio,
    summarize,
    timed_fit,
)
from .features import KernelParams
from .fileio import load_events, save_events
from .selection import ESTIMATORS, CVPlan, SelectionError, grid_search
from .simulation import (
    DATASETS,
    DEFAULT_GP_SEED,
    IntensitySpec,
    dataset_spec,
    drop_subdomains,
    load_spec,
    simulate_thinning,
    spec_from_dict,
    trial_rng,
)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# --------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark or simulation run.

    ``intensity`` and ``keep_prob`` apply to the ``custom`` dataset only.
    ``sweep_M`` lists total feature counts ``2M``. With ``timing`` off the
    ``cpu_seconds`` column is left empty so reruns are byte-identical.
    """

    dataset: str = "1d_1"
    estimators: tuple[str, ...] = ("kie", "fie", "k2ie")
    trials: int = 20
    M: int = 250
    cv: CVPlan = field(default_factory=CVPlan)
    root_seed: int = 0
    gp_seed: int = DEFAULT_GP_SEED
    feature_seed: int = 0
    qmc: bool = True
    intensity: dict | None = None
    keep_prob: float = 1.0
    grid: int | None = None
    timing: bool = True
    sweep_M: tuple[int, ...] | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    out: str = "results"

    def __post_init__(self):
        if self.dataset not in DATASETS + ("custom",):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.dataset == "custom" and self.intensity is None:
            raise ConfigError("dataset 'custom' needs an 'intensity' spec")
        if not self.estimators or any(e not in ESTIMATORS for e in self.estimators):
            raise ConfigError(f"estimators must be a non-empty subset of {ESTIMATORS}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if not 0 < self.keep_prob <= 1:
            raise ConfigError("keep_prob must lie in (0, 1]")
        if self.sweep_M is not None and any(m < 2 or m % 2 for m in self.sweep_M):
            raise ConfigError("sweep_M entries are total feature counts 2M (even, >= 2)")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            if "cv" in data and not isinstance(data["cv"], CVPlan):
                data["cv"] = CVPlan.from_dict(data["cv"])
            if "optimizer" in data and not isinstance(data["optimizer"], OptimizerConfig):
                data["optimizer"] = OptimizerConfig(**data["optimizer"])
            if "estimators" in data:
                est = data["estimators"]
                data["estimators"] = tuple(est.split(",") if isinstance(est, str) else est)
            if data.get("sweep_M") is not None:
                sw = data["sweep_M"]
                data["sweep_M"] = tuple(int(v) for v in (sw.split(",") if isinstance(sw, str) else sw))
            for k in ("trials", "M", "root_seed", "gp_seed", "feature_seed"):
                if k in data:
                    data[k] = int(data[k])
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["cv"] = self.cv.to_dict()
        d["optimizer"] = {k: getattr(self.optimizer, k) for k in self.optimizer.__dataclass_fields__}
        d["estimators"] = list(self.estimators)
        d["sweep_M"] = None if self.sweep_M is None else list(self.sweep_M)
        return d


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(data)


def truth_for(cfg: ExperimentConfig) -> tuple[IntensitySpec, float]:
    if cfg.dataset == "custom":
        try:
            return spec_from_dict(cfg.intensity), cfg.keep_prob
        except (KeyError, ValueError, DomainError) as exc:
            raise ConfigError(f"intensity: {exc}") from exc
    return dataset_spec(cfg.dataset, cfg.gp_seed)


def simulate_trial(cfg: ExperimentConfig, trial: int):
    """Events, observed domain and restricted truth for one trial."""
    spec, keep = truth_for(cfg)
    rng = trial_rng(cfg.root_seed, trial)
    events = simulate_thinning(spec, rng)
    domain = spec.domain
    if keep < 1.0:
        domain = drop_subdomains(domain, keep, rng)
        events = events[domain.locate(events) >= 0]
    return events, domain, spec.restrict(domain)


def _cv_seed(cfg: ExperimentConfig, trial: int) -> int:
    return int(trial_rng(cfg.root_seed, trial, stream=1).integers(2**31))


def run_trial(cfg: ExperimentConfig, trial: int) -> list[MetricsRecord]:
    """Simulate, select hyperparameters, fit with timing and score one trial."""
    events, domain, spec = simulate_trial(cfg, trial)
    grid = EvalGrid.build(domain, cfg.grid)
    truth = spec.func(grid.points)
    plan = replace(cfg.cv, seed=_cv_seed(cfg, trial))
    sweep = cfg.sweep_M or (2 * cfg.M,)
    records = []
    for est in cfg.estimators:
        for two_m in sweep if est != "kie" else sweep[:1]:
            M = two_m // 2
            tag = cfg.dataset if cfg.sweep_M is None or est == "kie" else f"{cfg.dataset}/2M={two_m}"
            if len(events) == 0 and est == "fie":
                raise DataError(f"trial {trial}: FIE needs at least one event")
            cv = grid_search(events, domain, est, plan, M=M, seed=cfg.feature_seed, qmc=cfg.qmc, opt=cfg.optimizer)
            model, cpu = timed_fit(
                est, events, domain, KernelParams(cv.beta), cv.gamma,
                M=M, seed=cfg.feature_seed, qmc=cfg.qmc, opt=cfg.optimizer,
            )
            l2, labs = errors(spec, model, grid, truth)
            neg = negativity_ratio(model, grid) if est == "k2ie" else None
            records.append(
                MetricsRecord(
                    estimator=est, dataset=tag, trial=trial, L2=l2, Labs=labs,
                    cpu_seconds=cpu if cfg.timing else None, negativity_ratio=neg,
                    extras={"n_events": len(events), "beta": cv.beta.tolist(), "gamma": cv.gamma},
                )
            )
    return records


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get("K2IE_THREADS")
    try:
        cap = int(env) if env else (os.cpu_count() or 1)
    except ValueError as exc:
        raise ConfigError(f"K2IE_THREADS must be an integer, got {env!r}") from exc
    if cap < 1:
        raise ConfigError("K2IE_THREADS must be at least 1")
    return max(1, min(cap, n_tasks))


def _run_trial_from_dict(cfg_dict: dict, trial: int):
    return run_trial(ExperimentConfig.from_dict(cfg_dict), trial)


def run_benchmark(cfg: ExperimentConfig, progress=None) -> list[MetricsRecord]:
    """All trials, reduced in trial order whatever the worker schedule."""
    trials = range(cfg.trials)
    workers = _worker_count(cfg.trials)
    out: list[MetricsRecord] = []
    if workers == 1:
        for t in trials:
            recs = run_trial(cfg, t)
            out.extend(recs)
            if progress:
                progress(t, recs)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_trial_from_dict, cfg.to_dict(), t) for t in trials]
        for t, fut in enumerate(futures):
            recs = fut.result()
            out.extend(recs)
            if progress:
                progress(t, recs)
    return out


def write_results(records: list[MetricsRecord], path) -> None:
    lines = [",".join(MetricsRecord.FIELDS)] + [",".join(r.row()) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# subcommands


def _domain(path) -> Domain:
    try:
        return load_domain(path)
    except (OSError, json.JSONDecodeError, KeyError, DomainError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _events(path, domain: Domain) -> np.ndarray:
    try:
        X = load_events(path, domain.dim)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if len(X) and np.any(domain.locate(X) < 0):
        raise DataError(f"{path}: events outside the domain")
    return X


def _plan_from_args(args) -> CVPlan:
    data = {}
    if args.plan:
        try:
            data = json.loads(Path(args.plan).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.plan}: {exc}") from exc
    for k in ("p", "folds", "seed"):
        v = getattr(args, k)
        if v is not None:
            data[k] = v
    if args.beta_grid:
        data["beta_grid"] = _floats(args.beta_grid)
    if args.gamma_grid:
        data["gamma_grid"] = _floats(args.gamma_grid)
    try:
        return CVPlan.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _emit(obj, out) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, {"dataset": args.dataset, "trials": args.trials, "root_seed": args.root_seed, "out": args.out})
    if args.intensity:
        try:
            desc = load_spec(args.intensity).to_dict()
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"{args.intensity}: {exc}") from exc
        cfg = replace(cfg, dataset="custom", intensity=desc)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(cfg.trials):
        events, domain, _ = simulate_trial(cfg, t)
        save_events(out / f"events_{t:03d}.csv", events)
        save_domain(domain, out / f"domain_{t:03d}.json")
    return 0


def cmd_cv(args) -> int:
    domain = _domain(args.domain)
    events = _events(args.events, domain)
    plan = _plan_from_args(args)
    if args.estimator == "fie" and len(events) == 0:
        raise DataError("FIE needs at least one event")
    res = grid_search(events, domain, args.estimator, plan, M=args.M, seed=args.feature_seed, qmc=not args.no_qmc)
    out = res.to_dict()
    out["plan"] = plan.to_dict()
    _emit(out, args.out)
    return 0


def _hyperparams(args, dim: int):
    beta, gamma = None, args.gamma
    if args.cv_result:
        try:
            sel = json.loads(Path(args.cv_result).read_text())["selected"]
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"{args.cv_result}: {exc}") from exc
        beta = sel["beta"]
        gamma = sel["gamma"] if gamma is None else gamma
    if args.beta:
        beta = _floats(args.beta)
    if beta is None:
        raise ConfigError("give --beta or --cv-result")
    beta = list(beta) * dim if len(beta) == 1 else list(beta)
    if len(beta) != dim:
        raise ConfigError(f"beta has {len(beta)} entries for a {dim}-d domain")
    if args.estimator != "kie" and gamma is None:
        raise ConfigError("give --gamma or --cv-result")
    try:
        return KernelParams(beta), gamma
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_fit(args) -> int:
    domain = _domain(args.domain)
    events = _events(args.events, domain)
    params, gamma = _hyperparams(args, domain.dim)
    if args.estimator == "fie" and len(events) == 0:
        raise DataError("FIE needs at least one event")
    model, cpu = timed_fit(args.estimator, events, domain, params, gamma, M=args.M, seed=args.feature_seed, qmc=not args.no_qmc)
    save_model(model, args.out)
    sys.stdout.write(json.dumps({"estimator": args.estimator, "cpu_seconds": cpu, "model": str(args.out)}) + "\n")
    return 0


def cmd_eval(args) -> int:
    try:
        model = load_model(args.model)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{args.model}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{args.model}: {exc}") from exc
    domain = model.domain
    out: dict = {"estimator": model.tag}
    spec = None
    if args.truth:
        try:
            spec = load_spec(args.truth)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"{args.truth}: {exc}") from exc
        if spec.dim != domain.dim:
            raise DataError(f"truth is {spec.dim}-d but the model is {domain.dim}-d")
        spec = spec.restrict(domain)
    grid = EvalGrid.build(domain, args.grid)
    if spec is not None:
        truth = spec.func(grid.points)
        out["L2"], out["Labs"] = errors(spec, model, grid, truth)
    if model.tag == "k2ie":
        out["negativity_ratio"] = negativity_ratio(model, grid if args.grid else 500)
    if args.test:
        test = _events(args.test, domain)
        if args.cells:
            cells = _domain(args.cells)
        elif args.cells_per_axis:
            lo, hi = domain.bounds
            cells = Domain.grid(lo, hi, args.cells_per_axis)
        else:
            cells = domain
        if cells.dim != domain.dim:
            raise DataError("cells and model differ in dimension")
        out["L_s"] = heldout_ls_loss(model, test)
        out["L_c"] = heldout_count_nll(model, test, cells)
    if args.profile:
        est = model.intensity(grid.points, clip=True)
        cols = [grid.points[:, i] for i in range(domain.dim)]
        names = [f"x{i + 1}" for i in range(domain.dim)]
        if spec is not None:
            cols.append(spec.func(grid.points))
            names.append("truth")
        cols.append(est)
        names.append("estimate")
        body = np.column_stack(cols)
        lines = [",".join(names)] + [",".join(repr(float(v)) for v in row) for row in body]
        Path(args.profile).write_text("\n".join(lines) + "\n")
    _emit(out, args.out)
    return 0


def cmd_benchmark(args) -> int:
    overrides = {
        "dataset": args.dataset,
        "trials": args.trials,
        "root_seed": args.root_seed,
        "out": args.out,
        "estimators": args.estimators,
        "sweep_M": args.sweep_M,
        "M": args.M,
    }
    if args.no_timing:
        overrides["timing"] = False
    cfg = load_config(args.config, overrides)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(t, recs):
        if not args.quiet:
            msg = " ".join(f"{r.estimator}:{r.dataset} L2={r.L2:.4g}" for r in recs)
            sys.stderr.write(f"trial {t}: {msg}\n")

    records = run_benchmark(cfg, progress)
    write_results(records, out / "results.csv")
    summary = {
        "config": cfg.to_dict(),
        "note": "sd is the sample standard deviation across trials",
        "summary": summarize(records),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_fit_common(p):
    p.add_argument("--events", required=True, help="events CSV")
    p.add_argument("--domain", required=True, help="domain JSON")
    p.add_argument("--estimator", required=True, choices=ESTIMATORS)
    p.add_argument("--M", type=int, default=250, help="half the number of features (default 250)")
    p.add_argument("--feature-seed", type=int, default=0)
    p.add_argument("--no-qmc", action="store_true", help="pseudo-random instead of QMC frequencies")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="k2ie", description="Kernel intensity estimation for Poisson processes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one events CSV and domain JSON per trial")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--dataset", choices=DATASETS + ("custom",))
    p.add_argument("--intensity", help="intensity-spec JSON (implies dataset custom)")
    p.add_argument("--trials", type=int)
    p.add_argument("--root-seed", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cv", help="grid search by p-thinning cross-validation")
    _add_fit_common(p)
    p.add_argument("--plan", help="CV plan JSON")
    p.add_argument("--p", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta-grid", help="comma-separated multipliers of the inverse domain extent")
    p.add_argument("--gamma-grid", help="comma-separated values")
    p.add_argument("--out", help="result JSON (default stdout)")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("fit", help="fit one estimator with given hyperparameters")
    _add_fit_common(p)
    p.add_argument("--beta", help="comma-separated per-axis beta (one value broadcasts)")
    p.add_argument("--gamma", type=float)
    p.add_argument("--cv-result", help="take beta and gamma from a cv result JSON")
    p.add_argument("--out", required=True, help="model JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="metrics of a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", help="intensity-spec JSON")
    p.add_argument("--test", help="held-out events CSV")
    p.add_argument("--cells", help="domain JSON partitioning the window for the count loss")
    p.add_argument("--cells-per-axis", type=int, help="regular partition of the bounding box")
    p.add_argument("--grid", type=int, help="evaluation points per axis")
    p.add_argument("--profile", help="write x, truth, estimate on the evaluation grid to CSV")
    p.add_argument("--out", help="metrics JSON (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="simulate, select, fit and score over trials")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--dataset", choices=DATASETS + ("custom",))
    p.add_argument("--estimators", help="comma-separated subset of kie,fie,k2ie")
    p.add_argument("--trials", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--root-seed", type=int)
    p.add_argument("--sweep-M", help="comma-separated total feature counts 2M")
    p.add_argument("--no-timing", action="store_true", help="leave cpu_seconds empty for byte-identical reruns")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        kind, code = "config", EXIT_CONFIG
        msg = str(exc)
    except (DataError, DomainError) as exc:
        kind, code = "data", EXIT_DATA
        msg = str(exc)
    except (NumericalError, SelectionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        kind, code = "numeric", EXIT_NUMERIC
        msg = str(exc)
    except OSError as exc:
        kind, code = "config", EXIT_CONFIG
        msg = str(exc)
    sys.stderr.write(f"error: {kind}: {' '.join(msg.split())}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
