"""Seeded Monte Carlo harness: replicate the block-diagonal benchmark across
(T, c) cells, fit every equation by penalized least squares, and aggregate the
two report panels (estimation error and forecast-error ratio), plus a
theory-verification battery over a small desk-scale design."""

from __future__ import annotations

import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .bounds import (
    TheoryConstants,
    deviation_bound_check,
    l2_error_bound,
    pi1,
    pi2,
    population_gram,
    prediction_error_bound,
    prop2_side_condition,
    rsc_check,
    rsc_threshold,
)
from .dgp import (
    StochasticCovariance,
    block_design,
    build_table1_design,
    simulate,
    stationary_innovation_covariance,
)
from .lasso import (
    build_design,
    fit_all_equations,
    forecast,
    oracle_fit,
    theoretical_lambda,
    var_spec_supports,
)
from .varcore import is_stable, sparsity_profile

__all__ = [
    "ExperimentConfig",
    "CellStats",
    "ExperimentReport",
    "run_cell",
    "run_experiment",
    "TheoryConfig",
    "TheoryReport",
    "verify_theory",
    "desk_design",
]

#: Penalty-formula scale calibrated on the desk design (T=500, n=10, p=2)
#: so the rate-based penalty comfortably dominates the deviation-bound
#: statistic; see tests/test_acceptance.py.
DEFAULT_TAU_STAR = 0.06


def _rep_seed(base_seed: int, T: int, c: int, rep: int) -> int:
    seq = np.random.SeedSequence((base_seed, T, c, rep))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid, replication count, penalty strategy, oracle definition, seeds and
    parallelism for the benchmark study."""

    t_grid: tuple[int, ...] = (100,)
    c_grid: tuple[int, ...] = (1,)
    replications: int = 100
    strategy: str = "bic"
    lam: float | None = None
    epsilon: float | None = None
    tau_star: float | None = None
    alpha: float | None = None
    oracle: str = "ols_on_support"
    base_seed: int = 20240
    horizon: int = 1
    workers: int = 1
    n_lambdas: int = 100
    lambda_ratio: float = 1e-3
    backend: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "t_grid", tuple(int(t) for t in self.t_grid))
        object.__setattr__(self, "c_grid", tuple(int(c) for c in self.c_grid))

    def validate(self) -> None:
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.horizon != 1:
            raise ValueError("only one-step-ahead forecasting is supported")
        if self.oracle not in ("ols_on_support", "true_params"):
            raise ValueError(f"unknown oracle definition {self.oracle!r}")
        if self.strategy not in ("bic", "fixed", "theoretical"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "fixed" and (self.lam is None or self.lam <= 0):
            raise ValueError("strategy 'fixed' requires lam > 0")
        if self.strategy == "theoretical" and None in (self.epsilon, self.tau_star, self.alpha):
            raise ValueError("strategy 'theoretical' requires epsilon, tau_star and alpha")
        for t in self.t_grid:
            for c in self.c_grid:
                spec, _ = build_table1_design(t, c)
                report = is_stable(spec)
                if not report.stable:
                    raise ValueError(
                        f"cell (T={t}, c={c}) violates the stability condition (A1): "
                        f"spectral radius {report.spectral_radius:.6f}"
                    )

    def as_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("t_grid", "c_grid"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        if sys.version_info >= (3, 11):
            import tomllib as toml
        else:
            import tomli as toml
        with open(path, "rb") as fh:
            doc = toml.load(fh)
        return cls.from_dict(doc)


def _replicate(payload: tuple) -> dict:
    """One benchmark replication; top-level so it can cross process
    boundaries."""
    T, c, rep, cfg_doc = payload
    config = ExperimentConfig.from_dict(cfg_doc)
    seed = _rep_seed(config.base_seed, T, c, rep)
    spec, innov = build_table1_design(T, c)
    panel = simulate(spec, innov, T + config.horizon, seed=seed)
    train = panel.data[:T]
    held_out = panel.data[T]

    design = build_design(train, p=spec.p)
    fit = fit_all_equations(
        design,
        strategy=config.strategy,
        lam=config.lam,
        epsilon=config.epsilon,
        tau_star=config.tau_star,
        alpha=config.alpha,
        n_lambdas=config.n_lambdas,
        ratio=config.lambda_ratio,
        backend=config.backend,
    )
    beta_star = spec.stacked_coefficients()
    n = spec.n

    err = fit.beta - beta_star
    sq_err_per_eq = (err ** 2).sum(axis=0)

    y_hat_lasso = forecast(fit.beta, train)
    supports = var_spec_supports(spec)
    ols = oracle_fit(design, supports)
    y_hat_ols = forecast(ols.beta, train)
    y_hat_true = forecast(beta_star, train)

    return {
        "rep": rep,
        "seed": seed,
        "mse_per_eq": float(sq_err_per_eq.mean()),
        "mse_total": float(sq_err_per_eq.sum()),
        "mse_per_param": float(sq_err_per_eq.sum() / beta_star.size),
        "sqerr_lasso": float(((held_out - y_hat_lasso) ** 2).sum()),
        "sqerr_ols_oracle": float(((held_out - y_hat_ols) ** 2).sum()),
        "sqerr_true_params": float(((held_out - y_hat_true) ** 2).sum()),
        "mean_support": float(np.mean([len(s) for s in fit.active_sets()])),
        "n_nonconverged": int((~fit.converged).sum()),
        "n_equation_failures": len(fit.failures),
        "oracle_rank_deficient": int(ols.rank_deficient.sum()),
    }


@dataclass(frozen=True)
class CellStats:
    """Aggregated statistics of one (T, c) cell."""

    T: int
    c: int
    n: int
    requested: int
    completed: int
    failed: int
    mse: float
    mse_se: float
    mse_total: float
    mse_per_param: float
    msfe_ratio: float
    msfe_ratio_se: float
    msfe_ratio_mean_of_ratios: float
    msfe_lasso: float
    msfe_oracle: float
    msfe_true_params: float
    mean_support: float
    n_nonconverged: int
    failures: tuple[str, ...] = field(default_factory=tuple)

    def as_dict(self) -> dict:
        doc = asdict(self)
        doc["failures"] = list(self.failures)
        return doc


def _aggregate_cell(T: int, c: int, requested: int, oracle: str,
                    rows: list[dict], failures: list[str]) -> CellStats:
    rows = sorted(rows, key=lambda r: r["rep"])
    if not rows:
        raise RuntimeError(f"every replication of cell (T={T}, c={c}) failed: {failures[:3]}")
    mse = np.array([r["mse_per_eq"] for r in rows])
    lasso = np.array([r["sqerr_lasso"] for r in rows])
    ols = np.array([r["sqerr_ols_oracle"] for r in rows])
    true_p = np.array([r["sqerr_true_params"] for r in rows])
    oracle_arr = ols if oracle == "ols_on_support" else true_p
    per_rep_ratio = lasso / np.maximum(oracle_arr, 1e-300)
    r = len(rows)
    return CellStats(
        T=T,
        c=c,
        n=T * c,
        requested=requested,
        completed=r,
        failed=len(failures),
        mse=float(mse.mean()),
        mse_se=float(mse.std(ddof=1) / np.sqrt(r)) if r > 1 else 0.0,
        mse_total=float(np.mean([row["mse_total"] for row in rows])),
        mse_per_param=float(np.mean([row["mse_per_param"] for row in rows])),
        msfe_ratio=float(lasso.mean() / oracle_arr.mean()),
        msfe_ratio_se=float(per_rep_ratio.std(ddof=1) / np.sqrt(r)) if r > 1 else 0.0,
        msfe_ratio_mean_of_ratios=float(per_rep_ratio.mean()),
        msfe_lasso=float(lasso.mean()),
        msfe_oracle=float(oracle_arr.mean()),
        msfe_true_params=float(true_p.mean()),
        mean_support=float(np.mean([row["mean_support"] for row in rows])),
        n_nonconverged=int(sum(row["n_nonconverged"] for row in rows)),
        failures=tuple(failures),
    )


def _run_payloads(payloads: list[tuple], workers: int, fn) -> tuple[list[dict], list[str]]:
    rows: list[dict] = []
    failures: list[str] = []
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(fn, payloads)
            for payload, result in zip(payloads, results):
                if isinstance(result, dict) and "error" in result:
                    failures.append(result["error"])
                else:
                    rows.append(result)
    else:
        for payload in payloads:
            try:
                rows.append(fn(payload))
            except Exception as exc:
                failures.append(f"rep {payload[2]}: {type(exc).__name__}: {exc}")
    return rows, failures


def _replicate_guarded(payload: tuple) -> dict:
    try:
        return _replicate(payload)
    except Exception as exc:
        return {"error": f"rep {payload[2]} (seed derivable): {type(exc).__name__}: {exc}"}


def run_cell(T: int, c: int, replications: int, config: ExperimentConfig) -> CellStats:
    """Simulate, fit, and forecast ``replications`` independent panels for one
    (T, c) cell and aggregate the panel statistics. Replication failures are
    logged with their seed and excluded from the aggregates."""
    if (c * T) % 5 != 0:
        raise ValueError(f"n = c*T = {c * T} must be divisible by the block size 5")
    cfg_doc = config.as_dict()
    payloads = [(T, c, rep, cfg_doc) for rep in range(replications)]
    rows, failures = _run_payloads(payloads, config.workers, _replicate_guarded)
    return _aggregate_cell(T, c, replications, config.oracle, rows, failures)


@dataclass(frozen=True)
class ExperimentReport:
    """Two-panel report over the (T, c) grid with config echo."""

    cells: tuple[CellStats, ...]
    config: ExperimentConfig
    version: str
    config_hash: str

    def cell(self, T: int, c: int) -> CellStats:
        for cs in self.cells:
            if cs.T == T and cs.c == c:
                return cs
        raise KeyError(f"no cell (T={T}, c={c}) in the report")

    def panel_a(self) -> dict[tuple[int, int], float]:
        return {(cs.T, cs.c): cs.mse for cs in self.cells}

    def panel_b(self) -> dict[tuple[int, int], float]:
        return {(cs.T, cs.c): cs.msfe_ratio for cs in self.cells}

    def to_json(self) -> str:
        return json.dumps({
            "version": self.version,
            "config_hash": self.config_hash,
            "config": self.config.as_dict(),
            "cells": [cs.as_dict() for cs in self.cells],
        }, indent=2, sort_keys=True)

    def write_table_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("panel,T,c,value,stderr,n_reps\n")
            for cs in self.cells:
                fh.write(f"a,{cs.T},{cs.c},{cs.mse:.6g},{cs.mse_se:.6g},{cs.completed}\n")
            for cs in self.cells:
                fh.write(f"b,{cs.T},{cs.c},{cs.msfe_ratio:.6g},{cs.msfe_ratio_se:.6g},{cs.completed}\n")

    def write_diagnostics_csv(self, path) -> None:
        cols = ["T", "c", "n", "completed", "failed", "mse_total", "mse_per_param",
                "msfe_lasso", "msfe_oracle", "msfe_true_params",
                "msfe_ratio_mean_of_ratios", "mean_support", "n_nonconverged"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for cs in self.cells:
                fh.write(",".join(f"{getattr(cs, c):.6g}" if isinstance(getattr(cs, c), float)
                                  else str(getattr(cs, c)) for c in cols) + "\n")


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Execute every grid cell with deterministic per-replication seeds; the
    report is a pure function of the config."""
    config.validate()
    cells = []
    for T in config.t_grid:
        for c in config.c_grid:
            cells.append(run_cell(T, c, config.replications, config))
    return ExperimentReport(
        cells=tuple(cells),
        config=config,
        version=__version__,
        config_hash=config.config_hash(),
    )


# ---------------------------------------------------------------------------
# Theory-verification battery (desk scale)
# ---------------------------------------------------------------------------


def desk_design(n: int = 10, p: int = 2,
                c0_diag: float = 1e-5, psi_diag: float = 0.8):
    """Small block-diagonal design with signal at lags 1 and p, used by the
    bound-verification battery."""
    lag_entries = {1: 0.15} if p == 1 else {1: 0.15, p: -0.1}
    spec = block_design(n, lag_entries)
    innov = StochasticCovariance(c0=c0_diag * np.eye(n), psi=psi_diag * np.eye(n))
    return spec, innov


@dataclass(frozen=True)
class TheoryConfig:
    """Replication plan for the bound-verification battery."""

    T: int = 500
    n: int = 10
    p: int = 2
    replications: int = 1000
    epsilon: float = 3.0
    tau_star: float = DEFAULT_TAU_STAR
    alpha: float = 1.0
    q: float = 0.0
    rsc_samples: int = 120
    rsc_replications: int = 20
    base_seed: int = 770
    workers: int = 1

    def as_dict(self) -> dict:
        return asdict(self)


def _theory_replicate(payload: tuple) -> dict:
    cfg_doc, rep = payload
    cfg = TheoryConfig(**cfg_doc)
    spec, innov = desk_design(cfg.n, cfg.p)
    seed = _rep_seed(cfg.base_seed, cfg.T, cfg.n, rep)
    panel = simulate(spec, innov, cfg.T, seed=seed)
    design = build_design(panel, p=cfg.p)

    lam = theoretical_lambda(design.t_eff, cfg.n, cfg.p, cfg.epsilon, cfg.tau_star, cfg.alpha)
    db = deviation_bound_check(design, spec, lam)

    fit = fit_all_equations(design, strategy="fixed", lam=lam)
    beta_star = spec.stacked_coefficients()
    err = fit.beta - beta_star
    l2_sq = (err ** 2).sum(axis=0)
    pred_sq = ((design.x @ err) ** 2).sum(axis=0) / design.t_eff
    gram_t = 0.5 * design.gram2

    return {
        "rep": rep,
        "lam": lam,
        "db_joint": bool(db.joint),
        "db_max_stat": db.max_statistic,
        "l2_sq_max": float(l2_sq.max()),
        "pred_sq": pred_sq.tolist(),
        "l2_sq": l2_sq.tolist(),
        "gram_t": gram_t.tolist(),
    }


@dataclass(frozen=True)
class TheoryReport:
    """Outcome of the bound-verification battery; ``on_event`` quantities are
    restricted to replications where both the deviation-bound event and the
    curvature max-norm hypothesis verify."""

    config: TheoryConfig
    lam: float
    pi1_value: float
    db_failure_freq: float
    db_dominated: bool
    sigma_gamma_sq: float
    r_q: float
    eta: float
    rsc_hypothesis_threshold: float
    hypothesis_freq: float
    on_event_count: int
    db_only_count: int
    l2_bound: float
    l2_violations_on_event: int
    pred_violations_on_event: int
    pred_violations_db_only: int
    gram_deviation_median: float
    gram_exceedance_at_threshold: float
    pi2_at_threshold: float
    side_condition_ok: bool
    rsc_min_ratio: float
    rsc_conditional_violations: int
    constants: TheoryConstants
    n_reps: int

    def to_json(self) -> str:
        doc = {k: (v.as_dict() if hasattr(v, "as_dict") else v)
               for k, v in asdict(self).items()}
        doc["constants"] = self.constants.as_dict()
        doc["config"] = self.config.as_dict()
        return json.dumps(doc, indent=2, sort_keys=True)


def _theory_replicate_guarded(payload: tuple) -> dict:
    try:
        return _theory_replicate(payload)
    except Exception as exc:
        return {"error": f"rep {payload[1]}: {type(exc).__name__}: {exc}"}


def verify_theory(cfg: TheoryConfig) -> TheoryReport:
    """Run the deviation-bound, Gram-concentration, curvature and error-bound
    checks over seeded replications of the desk design.

    Diagnostics are pure functions of the panels; nothing here mutates fits.
    """
    spec, innov = desk_design(cfg.n, cfg.p)
    sigma = stationary_innovation_covariance(innov)
    gram_pop = population_gram(spec, sigma, p=cfg.p)
    sigma_gamma_sq = float(np.linalg.eigvalsh(gram_pop).min())
    beta_star = spec.stacked_coefficients()
    r_q = sparsity_profile(beta_star, cfg.q, 0.0).r_max
    constants = TheoryConstants.fitted(spec, innov, tau_star=cfg.tau_star, alpha=cfg.alpha)

    payloads = [(cfg.as_dict(), rep) for rep in range(cfg.replications)]
    rows, failures = _run_payloads(payloads, cfg.workers, _theory_replicate_guarded)
    if failures:
        raise RuntimeError(f"{len(failures)} theory replications failed: {failures[:3]}")
    rows = sorted(rows, key=lambda r: r["rep"])

    lam = float(rows[0]["lam"])
    eta = lam / sigma_gamma_sq
    threshold = rsc_threshold(sigma_gamma_sq, eta, cfg.q, r_q)
    l2_bound = l2_error_bound(lam, r_q, cfg.q, sigma_gamma_sq)
    beta_l1 = np.abs(beta_star).sum(axis=0)

    db_joint = np.array([r["db_joint"] for r in rows])
    deviations = np.array([np.abs(np.asarray(r["gram_t"]) - gram_pop).max() for r in rows])
    hypothesis = deviations <= threshold
    on_event = db_joint & hypothesis

    l2_viol = 0
    pred_viol_on = 0
    pred_viol_db = 0
    for r, on, db_ok in zip(rows, on_event, db_joint):
        l2_sq = np.asarray(r["l2_sq"])
        pred_sq = np.asarray(r["pred_sq"])
        pred_bounds = np.array([prediction_error_bound(lam, b1) for b1 in beta_l1])
        if on:
            l2_viol += int((l2_sq > l2_bound).any())
            pred_viol_on += int((pred_sq > pred_bounds).any())
        if db_ok:
            pred_viol_db += int((pred_sq > pred_bounds).any())

    rsc_min = np.inf
    rsc_cond_viol = 0
    for k, r in enumerate(rows[: cfg.rsc_replications]):
        gram_t = np.asarray(r["gram_t"])
        rep_report = rsc_check(
            gram_t, beta_star[:, 0], cfg.q, eta, sigma_gamma_sq, r_q,
            samples=cfg.rsc_samples, seed=_rep_seed(cfg.base_seed + 1, cfg.T, cfg.n, k),
            gram_pop=gram_pop,
        )
        rsc_min = min(rsc_min, rep_report.min_ratio)
        if rep_report.hypothesis_ok:
            rsc_cond_viol += rep_report.violations

    db_fail = float(1.0 - db_joint.mean())
    p1 = pi1(cfg.epsilon)
    side_ok, _ = prop2_side_condition(cfg.T - cfg.p, cfg.p, constants)
    return TheoryReport(
        config=cfg,
        lam=lam,
        pi1_value=p1,
        db_failure_freq=db_fail,
        db_dominated=db_fail < p1,
        sigma_gamma_sq=sigma_gamma_sq,
        r_q=float(r_q),
        eta=float(eta),
        rsc_hypothesis_threshold=float(threshold),
        hypothesis_freq=float(hypothesis.mean()),
        on_event_count=int(on_event.sum()),
        db_only_count=int(db_joint.sum()),
        l2_bound=float(l2_bound),
        l2_violations_on_event=l2_viol,
        pred_violations_on_event=pred_viol_on,
        pred_violations_db_only=pred_viol_db,
        gram_deviation_median=float(np.median(deviations)),
        gram_exceedance_at_threshold=float((deviations > threshold).mean()),
        pi2_at_threshold=pi2(threshold, cfg.T - cfg.p, cfg.n, cfg.p, constants),
        side_condition_ok=side_ok,
        rsc_min_ratio=float(rsc_min),
        rsc_conditional_violations=rsc_cond_viol,
        constants=constants,
        n_reps=len(rows),
    )
