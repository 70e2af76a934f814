"""Command-line front end: simulate / fit / diagnose / experiment / bounds.

Exit codes: 0 success, 2 validation error, 3 runtime or numerical failure.
Every run writes a machine-readable manifest next to its primary output.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bounds as bounds_mod
from .dgp import (
    GaussianIID,
    StochasticCovariance,
    build_table1_design,
    read_panel_binary,
    read_panel_csv,
    simulate,
    stationary_innovation_covariance,
    write_panel_binary,
    write_panel_csv,
)
from .experiment import ExperimentConfig, run_experiment
from .lasso import build_design, fit_all_equations, theoretical_lambda
from .varcore import VarSpec, is_stable, sparsity_profile

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class ValidationFailure(Exception):
    pass


def _manifest(path: Path, command: str, args: argparse.Namespace, outputs: list[str],
              started: float, extra: dict | None = None) -> None:
    doc = {
        "schema_version": 1,
        "command": command,
        "arguments": {k: (v if isinstance(v, (int, float, str, bool, type(None))) else str(v))
                      for k, v in vars(args).items() if k != "func"},
        "outputs": outputs,
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "versions": {
            "sparsevar": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "wall_time_s": round(time.time() - started, 3),
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))


def _load_panel(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise ValidationFailure(f"panel file not found: {path}")
    if p.suffix == ".bin":
        return read_panel_binary(p)
    return read_panel_csv(p)


def _load_spec(path: str) -> VarSpec:
    p = Path(path)
    if not p.exists():
        raise ValidationFailure(f"spec file not found: {path}")
    try:
        return VarSpec.from_json(p.read_text())
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ValidationFailure(f"malformed spec {path}: {exc}") from exc


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.time()
    if args.table1:
        if args.T is None or args.c is None:
            raise ValidationFailure("--table1 requires --T and --c")
        spec, innov = build_table1_design(args.T, args.c)
        total = args.T
    else:
        if args.spec is None or args.T is None:
            raise ValidationFailure("need --spec and --T (or --table1 with --T/--c)")
        spec = _load_spec(args.spec)
        if args.innovation == "stochastic-cov":
            innov = StochasticCovariance(
                c0=args.c0_diag * np.eye(spec.n), psi=args.psi_diag * np.eye(spec.n))
        else:
            innov = GaussianIID(np.eye(spec.n))
        total = args.T

    report = is_stable(spec)
    if not report.stable:
        raise ValidationFailure(
            f"stability condition (A1) violated: spectral radius "
            f"{report.spectral_radius:.6f} >= 1"
        )
    panel = simulate(spec, innov, total, burn_in=args.burn_in, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path, bin_path = out.with_suffix(".csv"), out.with_suffix(".bin")
    write_panel_csv(panel, csv_path)
    write_panel_binary(panel, bin_path)
    _manifest(out.with_suffix(".manifest.json"), "simulate", args,
              [str(csv_path), str(bin_path)], started,
              {"dgp_fingerprint": panel.dgp_fingerprint, "T": panel.T, "n": panel.n})
    print(f"wrote {csv_path} and {bin_path} ({panel.T} x {panel.n})")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    started = time.time()
    data = _load_panel(args.panel)
    if data.shape[0] <= args.p:
        raise ValidationFailure(f"panel length {data.shape[0]} must exceed p={args.p}")
    design = build_design(data, args.p)
    fit = fit_all_equations(
        design,
        strategy=args.select,
        lam=args.lam,
        epsilon=args.epsilon,
        tau_star=args.tau_star,
        alpha=args.alpha,
        n_lambdas=args.n_lambdas,
        backend=args.backend,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(fit.to_json())
    _manifest(out.with_suffix(".manifest.json"), "fit", args, [str(out)], started,
              {"t_eff": design.t_eff, "n": design.n, "n_features": design.n_features,
               "max_kkt_residual": float(np.nanmax(fit.kkt_residuals))})
    print(f"wrote {out} ({design.n} equations, max KKT residual "
          f"{np.nanmax(fit.kkt_residuals):.2e})")
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    started = time.time()
    data = _load_panel(args.panel)
    spec = _load_spec(args.spec)
    if data.shape[1] != spec.n:
        raise ValidationFailure(
            f"panel has {data.shape[1]} series but the spec declares n={spec.n}")
    design = build_design(data, spec.p)

    if args.sigma is not None:
        sigma = np.atleast_2d(np.loadtxt(args.sigma, delimiter=","))
    elif args.table1_innovation:
        innov = StochasticCovariance(c0=args.c0_diag * np.eye(spec.n),
                                     psi=args.psi_diag * np.eye(spec.n))
        sigma = stationary_innovation_covariance(innov)
    else:
        beta_star = spec.stacked_coefficients()
        resid = design.y - design.x @ beta_star
        sigma = (resid.T @ resid) / design.t_eff

    if args.lam is not None:
        lam = args.lam
    else:
        lam = args.safety * theoretical_lambda(
            design.t_eff, spec.n, spec.p, args.epsilon, args.tau_star, args.alpha)

    db = bounds_mod.deviation_bound_check(design, spec, lam)
    gram_pop = bounds_mod.population_gram(spec, sigma, p=spec.p)
    sigma_gamma_sq = float(np.linalg.eigvalsh(gram_pop).min())
    beta_star = spec.stacked_coefficients()
    prof = sparsity_profile(beta_star, args.q, 0.0)
    eta = lam / sigma_gamma_sq
    rsc = bounds_mod.rsc_check(design, beta_star[:, 0], args.q, eta, sigma_gamma_sq,
                               prof.r_max, samples=args.rsc_samples, seed=args.seed,
                               gram_pop=gram_pop)
    constants = bounds_mod.TheoryConstants.fitted(spec, tau_star=args.tau_star, alpha=args.alpha)
    deviation = float(np.abs(0.5 * design.gram2 - gram_pop).max())
    doc = {
        "lambda": lam,
        "deviation_bound": {
            "statistics": db.statistics.tolist(),
            "per_equation": db.per_equation.tolist(),
            "joint": db.joint,
        },
        "gram": {
            "max_norm_deviation": deviation,
            "population_min_eigenvalue": sigma_gamma_sq,
            "pi2_at_deviation": bounds_mod.pi2(deviation, design.t_eff, spec.n, spec.p, constants),
        },
        "rsc": {
            "threshold": rsc.threshold,
            "hypothesis_ok": rsc.hypothesis_ok,
            "min_ratio": rsc.min_ratio,
            "violations": rsc.violations,
        },
        "bounds": {
            "l2_error": bounds_mod.l2_error_bound(lam, prof.r_max, args.q, sigma_gamma_sq),
            "prediction": bounds_mod.prediction_error_bound(
                lam, float(np.abs(beta_star).sum(axis=0).max())),
        },
        "constants": constants.as_dict(),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True))
    _manifest(out.with_suffix(".manifest.json"), "diagnose", args, [str(out)], started)
    print(f"wrote {out} (DB joint: {db.joint}, Gram deviation {deviation:.4f})")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    started = time.time()
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise ValidationFailure(f"config file not found: {args.config}")
    try:
        config = ExperimentConfig.from_toml(cfg_path)
    except Exception as exc:
        raise ValidationFailure(f"malformed config {args.config}: {exc}") from exc
    if args.threads is not None:
        config = ExperimentConfig.from_dict({**config.as_dict(), "workers": args.threads})
    if args.seed is not None:
        config = ExperimentConfig.from_dict({**config.as_dict(), "base_seed": args.seed})
    config.validate()
    if args.dry_run:
        print(f"config ok: grid {config.t_grid} x {config.c_grid}, "
              f"{config.replications} replications, hash {config.config_hash()}")
        return EXIT_OK

    report = run_experiment(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    table_path = out_dir / "table1.csv"
    diag_path = out_dir / "diagnostics.csv"
    report_path.write_text(report.to_json())
    report.write_table_csv(table_path)
    report.write_diagnostics_csv(diag_path)
    _manifest(out_dir / "manifest.json", "experiment", args,
              [str(report_path), str(table_path), str(diag_path)], started,
              {"config_hash": report.config_hash})
    for cs in report.cells:
        print(f"cell T={cs.T} c={cs.c}: mse={cs.mse:.4f} (se {cs.mse_se:.4f}), "
              f"msfe ratio={cs.msfe_ratio:.4f}, reps={cs.completed}/{cs.requested}")
    return EXIT_OK


def cmd_bounds(args: argparse.Namespace) -> int:
    started = time.time()
    kind = args.bound_kind
    if kind == "l2":
        value = bounds_mod.l2_error_bound(args.lam, args.rq, args.q, args.sigma_gamma_sq)
        doc = {"kind": "l2_error", "value": value}
    elif kind == "prediction":
        value = bounds_mod.prediction_error_bound(args.lam, args.beta_l1)
        doc = {"kind": "prediction_error", "value": value}
    elif kind == "martingale":
        value = bounds_mod.martingale_tail_bound(args.n, args.T, args.x, args.M,
                                                 args.alpha, args.tau)
        doc = {"kind": "martingale_tail", "value": value}
    elif kind == "tails":
        values = bounds_mod.weibull_tail_lemmas(args.a, args.b, args.n, args.p_moment,
                                                args.c, args.M)
        doc = {"kind": "weibull_tails",
               "double_sum_bound": values.double_sum_bound,
               "single_sum_bound": values.single_sum_bound,
               "moment_lower": values.moment_lower,
               "moment_upper": values.moment_upper}
    elif kind == "lambda":
        value = theoretical_lambda(args.t_eff, args.n, args.p, args.epsilon,
                                   args.tau_star, args.alpha)
        doc = {"kind": "theoretical_lambda", "value": value}
    else:  # pragma: no cover - argparse restricts choices
        raise ValidationFailure(f"unknown bound kind {kind}")
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        _manifest(out.with_suffix(".manifest.json"), "bounds", args, [str(out)], started)
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsevar",
        description="High-dimensional VAR simulation, penalized estimation, "
                    "and finite-sample diagnostics.",
    )
    parser.add_argument("--version", action="version", version=f"sparsevar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a panel and write CSV + binary files")
    sim.add_argument("--spec", help="VAR spec JSON file")
    sim.add_argument("--table1", action="store_true",
                     help="use the block-diagonal benchmark design (needs --T/--c)")
    sim.add_argument("--T", type=int, help="number of rows to keep")
    sim.add_argument("--c", type=int, help="series-to-sample ratio n = c*T (benchmark design)")
    sim.add_argument("--innovation", choices=["gaussian", "stochastic-cov"], default="gaussian")
    sim.add_argument("--c0-diag", type=float, default=1e-5)
    sim.add_argument("--psi-diag", type=float, default=0.8)
    sim.add_argument("--burn-in", type=int, default=None)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--out", required=True, help="output path stem (.csv/.bin appended)")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit all equations of a panel")
    fit.add_argument("--panel", required=True, help="panel file (.csv or .bin)")
    fit.add_argument("--p", type=int, required=True, help="lag order")
    fit.add_argument("--select", choices=["bic", "fixed", "theoretical"], default="bic")
    fit.add_argument("--lambda", dest="lam", type=float, default=None)
    fit.add_argument("--epsilon", type=float, default=None)
    fit.add_argument("--tau-star", type=float, default=None)
    fit.add_argument("--alpha", type=float, default=None)
    fit.add_argument("--n-lambdas", type=int, default=100)
    fit.add_argument("--backend", choices=["auto", "native", "sklearn"], default="auto")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--threads", type=int, default=1)
    fit.add_argument("--out", default="fit.json")
    fit.set_defaults(func=cmd_fit)

    diag = sub.add_parser("diagnose", help="deviation-bound, Gram, curvature and "
                                           "error-bound diagnostics against a known spec")
    diag.add_argument("--panel", required=True)
    diag.add_argument("--spec", required=True, help="true VAR spec JSON")
    diag.add_argument("--sigma", default=None, help="innovation covariance CSV")
    diag.add_argument("--table1-innovation", action="store_true",
                      help="use the benchmark stochastic-covariance stationary Sigma")
    diag.add_argument("--c0-diag", type=float, default=1e-5)
    diag.add_argument("--psi-diag", type=float, default=0.8)
    diag.add_argument("--lambda", dest="lam", type=float, default=None)
    diag.add_argument("--epsilon", type=float, default=3.0)
    diag.add_argument("--tau-star", type=float, default=0.06)
    diag.add_argument("--alpha", type=float, default=1.0)
    diag.add_argument("--safety", type=float, default=1.0)
    diag.add_argument("--q", type=float, default=0.0)
    diag.add_argument("--rsc-samples", type=int, default=120)
    diag.add_argument("--seed", type=int, default=0)
    diag.add_argument("--threads", type=int, default=1)
    diag.add_argument("--out", default="diagnostics.json")
    diag.set_defaults(func=cmd_diagnose)

    exp = sub.add_parser("experiment", help="run the Monte Carlo study from a TOML config")
    exp.add_argument("--config", required=True)
    exp.add_argument("--out-dir", default="experiment_out")
    exp.add_argument("--dry-run", action="store_true", help="validate grids only")
    exp.add_argument("--seed", type=int, default=None, help="override the config base seed")
    exp.add_argument("--threads", type=int, default=None, help="override config workers")
    exp.set_defaults(func=cmd_experiment)

    bnd = sub.add_parser("bounds", help="evaluate closed-form bound formulas")
    bnd_sub = bnd.add_subparsers(dest="bound_kind", required=True)
    b_l2 = bnd_sub.add_parser("l2")
    b_l2.add_argument("--lambda", dest="lam", type=float, required=True)
    b_l2.add_argument("--rq", type=float, required=True)
    b_l2.add_argument("--q", type=float, default=0.0)
    b_l2.add_argument("--sigma-gamma-sq", type=float, required=True)
    b_pred = bnd_sub.add_parser("prediction")
    b_pred.add_argument("--lambda", dest="lam", type=float, required=True)
    b_pred.add_argument("--beta-l1", type=float, required=True)
    b_mart = bnd_sub.add_parser("martingale")
    b_mart.add_argument("--n", type=int, required=True)
    b_mart.add_argument("--T", type=int, required=True)
    b_mart.add_argument("--x", type=float, required=True)
    b_mart.add_argument("--M", type=float, required=True)
    b_mart.add_argument("--alpha", type=float, required=True)
    b_mart.add_argument("--tau", type=float, required=True)
    b_tails = bnd_sub.add_parser("tails")
    b_tails.add_argument("--a", type=float, required=True)
    b_tails.add_argument("--b", type=float, required=True)
    b_tails.add_argument("--n", type=int, required=True)
    b_tails.add_argument("--p-moment", type=float, default=1.0)
    b_tails.add_argument("--c", type=float, default=1.0)
    b_tails.add_argument("--M", type=float, default=1.0)
    b_lam = bnd_sub.add_parser("lambda")
    b_lam.add_argument("--t-eff", type=int, required=True)
    b_lam.add_argument("--n", type=int, required=True)
    b_lam.add_argument("--p", type=int, required=True)
    b_lam.add_argument("--epsilon", type=float, required=True)
    b_lam.add_argument("--tau-star", type=float, required=True)
    b_lam.add_argument("--alpha", type=float, required=True)
    for b in (b_l2, b_pred, b_mart, b_tails, b_lam):
        b.add_argument("--out", default=None)
        b.add_argument("--seed", type=int, default=0)
        b.add_argument("--threads", type=int, default=1)
    bnd.set_defaults(func=cmd_bounds)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationFailure, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
