"""Equation-wise l1-penalized least squares for VAR panels.

The objective for equation i is (1/T_eff)|Y_i - X b|_2^2 + lambda |b|_1 with
T_eff = T - p rows. The reference solver is cyclic coordinate descent with
covariance updates and active-set cycling; scikit-learn's compiled descent can
be used as a drop-in backend for whole regularization paths (same program via
alpha = lambda/2), with native polishing enforcing the KKT contract either way.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .dgp import TimeSeriesPanel
from .varcore import VarSpec

__all__ = [
    "DesignMatrices",
    "EquationFit",
    "LassoFit",
    "RegularizationPath",
    "OracleFit",
    "build_design",
    "fit_lasso",
    "lambda_max",
    "fit_path",
    "bic_select",
    "theoretical_lambda",
    "fit_all_equations",
    "oracle_fit",
    "forecast",
]

#: Convergence tolerance on the largest coefficient change in a sweep.
DEFAULT_CD_TOL = 1e-9

#: Sweep budget for coordinate descent.
DEFAULT_MAX_ITER = 100_000

#: KKT slack accepted by the optimality contract.
KKT_TOL = 1e-6

#: Default regularization grid: log-spaced points down to lambda_max * ratio.
DEFAULT_N_LAMBDAS = 100
DEFAULT_LAMBDA_RATIO = 1e-3


@dataclass(frozen=True)
class DesignMatrices:
    """Stacked regression pair: X rows are lagged regressors
    (y'_{t-1}, ..., y'_{t-p}) in lag-major column order, Y rows the responses."""

    x: np.ndarray
    y: np.ndarray
    p: int

    @property
    def t_eff(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @cached_property
    def gram2(self) -> np.ndarray:
        """(2/T_eff) X'X, the curvature matrix used by coordinate descent."""
        return (2.0 / self.t_eff) * (self.x.T @ self.x)

    @cached_property
    def xy2(self) -> np.ndarray:
        """(2/T_eff) X'Y, one column per equation."""
        return (2.0 / self.t_eff) * (self.x.T @ self.y)

    @cached_property
    def y_sq(self) -> np.ndarray:
        return (self.y ** 2).sum(axis=0)


def build_design(panel: TimeSeriesPanel | np.ndarray, p: int) -> DesignMatrices:
    """Build the lagged design from a panel; effective sample is rows p+1..T."""
    data = panel.data if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, dtype=float)
    if data.ndim != 2:
        raise ValueError(f"panel must be 2-D, got shape {data.shape}")
    if p < 1:
        raise ValueError("lag order p must be >= 1")
    t, n = data.shape
    if t <= p:
        raise ValueError(f"panel length T={t} must exceed the lag order p={p}")
    if not np.all(np.isfinite(data)):
        raise ValueError("panel contains non-finite entries")
    x = np.concatenate([data[p - k: t - k, :] for k in range(1, p + 1)], axis=1)
    y = data[p:, :]
    return DesignMatrices(x=np.ascontiguousarray(x), y=np.ascontiguousarray(y), p=p)


@dataclass(frozen=True)
class EquationFit:
    """Solution of one penalized equation.

    ``kkt_residual`` is the larger of (|g|_inf - lambda)/lambda clipped at
    zero and max_{active} |g_j - lambda * sign(b_j)|, where
    g = (2/T_eff) X'(Y_i - X b).
    """

    beta: np.ndarray
    lam: float
    iterations: int
    converged: bool
    kkt_residual: float
    rss: float

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.beta)

    def objective(self, t_eff: int) -> float:
        return self.rss / t_eff + self.lam * np.abs(self.beta).sum()


@dataclass(frozen=True)
class LassoFit:
    """Per-equation solutions stacked as columns, with solver telemetry."""

    beta: np.ndarray
    lambdas: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    kkt_residuals: np.ndarray
    rss: np.ndarray
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.beta.shape[1]

    def active_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.beta[:, i]) for i in range(self.n)]

    def to_json(self) -> str:
        eqs = []
        for i in range(self.n):
            nz = np.flatnonzero(self.beta[:, i])
            eqs.append({
                "lambda": float(self.lambdas[i]),
                "nonzeros": [(int(j), float(self.beta[j, i])) for j in nz],
                "kkt_residual": float(self.kkt_residuals[i]),
                "iterations": int(self.iterations[i]),
                "converged": bool(self.converged[i]),
            })
        return json.dumps({"n_features": self.beta.shape[0], "equations": eqs,
                           "failures": {str(k): v for k, v in self.failures.items()}})

    @classmethod
    def from_json(cls, text: str) -> "LassoFit":
        doc = json.loads(text)
        eqs = doc["equations"]
        m, n = doc["n_features"], len(eqs)
        beta = np.zeros((m, n))
        lambdas = np.zeros(n)
        iterations = np.zeros(n, dtype=int)
        converged = np.zeros(n, dtype=bool)
        kkt = np.zeros(n)
        for i, eq in enumerate(eqs):
            for j, v in eq["nonzeros"]:
                beta[j, i] = v
            lambdas[i] = eq["lambda"]
            iterations[i] = eq["iterations"]
            converged[i] = eq["converged"]
            kkt[i] = eq["kkt_residual"]
        return cls(beta=beta, lambdas=lambdas, iterations=iterations, converged=converged,
                   kkt_residuals=kkt, rss=np.full(n, np.nan),
                   failures={int(k): v for k, v in doc.get("failures", {}).items()})


@dataclass(frozen=True)
class RegularizationPath:
    """Descending lambda grid with one fit, RSS, support size, KKT residual,
    and BIC score per point."""

    equation: int
    lambdas: np.ndarray
    betas: np.ndarray  # (n_features, n_points)
    rss: np.ndarray
    support_sizes: np.ndarray
    kkt_residuals: np.ndarray
    bic: np.ndarray

    @property
    def n_points(self) -> int:
        return self.lambdas.size


@dataclass(frozen=True)
class OracleFit:
    """Per-equation OLS restricted to given supports; columns align with
    equations and ``rank_deficient`` flags minimum-norm fallbacks."""

    beta: np.ndarray
    rank_deficient: np.ndarray


def _soft(c: float, lam: float) -> float:
    t = abs(c) - lam
    return 0.0 if t <= 0.0 else math.copysign(t, c)


def _cd_sweep(gram2, q, lam, beta, s, idx) -> float:
    """One cyclic pass over ``idx``; updates beta/s in place, returns the
    largest coefficient change."""
    diag = gram2.diagonal()
    max_delta = 0.0
    for j in idx:
        gjj = diag[j]
        if gjj <= 0.0:
            continue
        bj = beta[j]
        cj = q[j] - s[j] + gjj * bj
        nb = _soft(cj, lam) / gjj
        d = nb - bj
        if d != 0.0:
            s += gram2[j] * d
            beta[j] = nb
            ad = abs(d)
            if ad > max_delta:
                max_delta = ad
    return max_delta


def _cd_solve(gram2, q, lam, beta0, tol, max_iter) -> tuple[np.ndarray, int, bool]:
    """Cyclic coordinate descent with covariance updates and active-set
    cycling after the first full sweep."""
    m = q.size
    beta = np.zeros(m) if beta0 is None else np.array(beta0, dtype=float)
    s = gram2 @ beta if beta.any() else np.zeros(m)
    all_idx = range(m)
    sweeps = 0
    converged = False
    while sweeps < max_iter:
        delta = _cd_sweep(gram2, q, lam, beta, s, all_idx)
        sweeps += 1
        if delta < tol:
            converged = True
            break
        active = np.flatnonzero(beta)
        while sweeps < max_iter:
            delta = _cd_sweep(gram2, q, lam, beta, s, active)
            sweeps += 1
            if delta < tol:
                break
    return beta, sweeps, converged


def _kkt_residual(gradient: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """Deviation from the stationarity conditions; see EquationFit."""
    bound = max(0.0, (np.abs(gradient).max() - lam) / lam) if gradient.size else 0.0
    active = beta != 0
    if active.any():
        eq = np.abs(gradient[active] - lam * np.sign(beta[active])).max()
    else:
        eq = 0.0
    return float(max(bound, eq))


def _rss(design: DesignMatrices, i: int, beta: np.ndarray, gb2: np.ndarray | None = None) -> float:
    # |y|^2 - 2 (X'y)'b + b'X'Xb, all in the (2/T) scaling cached on the design
    if gb2 is None:
        gb2 = design.gram2 @ beta
    t = design.t_eff
    val = design.y_sq[i] - t * float(design.xy2[:, i] @ beta) + 0.5 * t * float(beta @ gb2)
    return max(float(val), 0.0)


def fit_lasso(
    design: DesignMatrices,
    i: int,
    lam: float,
    tol: float = DEFAULT_CD_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    beta0: np.ndarray | None = None,
) -> EquationFit:
    """Solve equation ``i`` at penalty ``lam`` by coordinate descent.

    Non-convergence returns the best iterate flagged ``converged=False``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if not 0 <= i < design.n:
        raise ValueError(f"equation index {i} out of range [0, {design.n})")
    beta, sweeps, converged = _cd_solve(design.gram2, design.xy2[:, i], lam, beta0, tol, max_iter)
    gb2 = design.gram2 @ beta
    gradient = design.xy2[:, i] - gb2
    return EquationFit(
        beta=beta,
        lam=float(lam),
        iterations=sweeps,
        converged=converged,
        kkt_residual=_kkt_residual(gradient, beta, lam),
        rss=_rss(design, i, beta, gb2),
    )


def lambda_max(design: DesignMatrices, i: int) -> float:
    """Smallest penalty with an all-zero solution: |2 X'Y_i / T_eff|_inf."""
    return float(np.abs(design.xy2[:, i]).max())


def _lambda_grid(lam_max: float, n_lambdas: int, ratio: float) -> np.ndarray:
    if lam_max <= 0:
        return np.array([1.0])
    if n_lambdas == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * ratio, n_lambdas)


def _bic_scores(t_eff: int, rss: np.ndarray, support: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        ll = t_eff * np.log(rss / t_eff)
    return ll + support * np.log(t_eff)


def _path_native(design, i, lambdas, tol, max_iter):
    m = design.n_features
    betas = np.zeros((m, lambdas.size))
    beta0 = np.zeros(m)
    for k, lam in enumerate(lambdas):
        beta0, _, _ = _cd_solve(design.gram2, design.xy2[:, i], lam, beta0, tol, max_iter)
        betas[:, k] = beta0
    return betas


def _path_sklearn(design, i, lambdas, tol):
    from sklearn.linear_model import lasso_path

    gram = 0.5 * design.t_eff * design.gram2  # X'X
    xy = 0.5 * design.t_eff * design.xy2[:, i]
    _, coefs, _ = lasso_path(
        design.x,
        design.y[:, i],
        alphas=lambdas / 2.0,
        precompute=gram,
        Xy=xy,
        tol=tol,
        max_iter=10_000,
    )
    return coefs  # columns already ordered by descending alpha


def fit_path(
    design: DesignMatrices,
    i: int,
    lambdas: np.ndarray | None = None,
    n_lambdas: int = DEFAULT_N_LAMBDAS,
    ratio: float = DEFAULT_LAMBDA_RATIO,
    backend: str = "auto",
    tol: float = DEFAULT_CD_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> RegularizationPath:
    """Warm-started descending regularization path for equation ``i``.

    Every grid point satisfies the KKT contract: backend solutions whose
    residual exceeds the tolerance are polished by native descent.
    """
    if lambdas is None:
        lambdas = _lambda_grid(lambda_max(design, i), n_lambdas, ratio)
    else:
        lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]
        if lambdas.size == 0 or lambdas[-1] <= 0:
            raise ValueError("the lambda grid must be nonempty and positive")

    if backend == "auto":
        try:
            import sklearn  # noqa: F401

            backend = "sklearn"
        except ImportError:
            backend = "native"
    if backend == "sklearn":
        betas = _path_sklearn(design, i, lambdas, tol=1e-8)
    elif backend == "native":
        betas = _path_native(design, i, lambdas, tol, max_iter)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    q = design.xy2[:, i]
    gb2 = design.gram2 @ betas
    kkt = np.empty(lambdas.size)
    for k in range(lambdas.size):
        kkt[k] = _kkt_residual(q - gb2[:, k], betas[:, k], lambdas[k])
        if kkt[k] > KKT_TOL:
            beta, _, _ = _cd_solve(design.gram2, q, lambdas[k], betas[:, k], tol, max_iter)
            betas[:, k] = beta
            gb2[:, k] = design.gram2 @ beta
            kkt[k] = _kkt_residual(q - gb2[:, k], beta, lambdas[k])

    t = design.t_eff
    rss = np.maximum(
        design.y_sq[i] - t * (q @ betas) + 0.5 * t * np.einsum("jk,jk->k", betas, gb2), 0.0
    )
    support = (betas != 0).sum(axis=0)
    return RegularizationPath(
        equation=i,
        lambdas=lambdas,
        betas=betas,
        rss=rss,
        support_sizes=support,
        kkt_residuals=kkt,
        bic=_bic_scores(t, rss, support),
    )


def bic_select(path: RegularizationPath, design: DesignMatrices, i: int) -> tuple[float, EquationFit]:
    """Pick the grid point minimizing T_eff*log(RSS/T_eff) + |S|*log(T_eff);
    ties break toward the larger penalty (sparser model)."""
    if path.n_points == 0:
        raise ValueError("empty regularization path")
    if np.all(path.rss <= 0):
        raise RuntimeError(
            f"degenerate path for equation {i}: zero residual sum of squares at "
            f"every grid point"
        )
    # grid is descending in lambda, so the first argmin is the sparsest tie
    k = int(np.argmin(path.bic))
    lam = float(path.lambdas[k])
    beta = path.betas[:, k].copy()
    fit = EquationFit(
        beta=beta,
        lam=lam,
        iterations=0,
        converged=True,
        kkt_residual=float(path.kkt_residuals[k]),
        rss=float(path.rss[k]),
    )
    return lam, fit


def theoretical_lambda(
    t_eff: int,
    n: int,
    p: int,
    epsilon: float,
    tau_star: float,
    alpha: float,
) -> float:
    """Rate-based penalty tau* (eps + log(T n^2 p))^(2/alpha) sqrt((eps + log(n^2 p)) / T).

    The side condition T > eps + log(n^2 p) is asserted; callers multiply the
    returned value by a safety factor > 1.
    """
    if min(t_eff, n, p) < 1 or epsilon <= 0 or tau_star <= 0 or alpha <= 0:
        raise ValueError("all inputs must be positive")
    side = epsilon + math.log(n * n * p)
    if not t_eff > side:
        raise ValueError(
            f"side condition violated: T_eff = {t_eff} must exceed "
            f"epsilon + log(n^2 p) = {side:.4f}"
        )
    return float(
        tau_star
        * (epsilon + math.log(t_eff * n * n * p)) ** (2.0 / alpha)
        * math.sqrt((epsilon + math.log(n * n * p)) / t_eff)
    )


def fit_all_equations(
    design: DesignMatrices,
    strategy: str = "bic",
    lam: float | None = None,
    epsilon: float | None = None,
    tau_star: float | None = None,
    alpha: float | None = None,
    safety: float = 1.1,
    n_lambdas: int = DEFAULT_N_LAMBDAS,
    ratio: float = DEFAULT_LAMBDA_RATIO,
    backend: str = "auto",
    tol: float = DEFAULT_CD_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> LassoFit:
    """Solve all equations independently under the given penalty strategy:
    ``bic`` (grid search per equation), ``fixed`` (common ``lam``), or
    ``theoretical`` (rate-based formula times ``safety``).

    Per-equation failures are collected without aborting the remaining
    equations.
    """
    n = design.n
    m = design.n_features
    beta = np.zeros((m, n))
    lambdas = np.zeros(n)
    iterations = np.zeros(n, dtype=int)
    converged = np.zeros(n, dtype=bool)
    kkt = np.full(n, np.nan)
    rss = np.full(n, np.nan)
    failures: dict[int, str] = {}

    if strategy == "fixed":
        if lam is None or lam <= 0:
            raise ValueError("strategy 'fixed' requires lam > 0")
        common_lam = float(lam)
    elif strategy == "theoretical":
        if epsilon is None or tau_star is None or alpha is None:
            raise ValueError("strategy 'theoretical' requires epsilon, tau_star and alpha")
        common_lam = safety * theoretical_lambda(design.t_eff, n, design.p, epsilon, tau_star, alpha)
    elif strategy != "bic":
        raise ValueError(f"unknown strategy {strategy!r}")

    for i in range(n):
        try:
            if strategy == "bic":
                path = fit_path(design, i, n_lambdas=n_lambdas, ratio=ratio,
                                backend=backend, tol=tol, max_iter=max_iter)
                lam_i, fit = bic_select(path, design, i)
            else:
                fit = fit_lasso(design, i, common_lam, tol=tol, max_iter=max_iter)
                lam_i = common_lam
            beta[:, i] = fit.beta
            lambdas[i] = lam_i
            iterations[i] = fit.iterations
            converged[i] = fit.converged
            kkt[i] = fit.kkt_residual
            rss[i] = fit.rss
        except Exception as exc:  # per-equation isolation
            failures[i] = f"{type(exc).__name__}: {exc}"
    return LassoFit(beta=beta, lambdas=lambdas, iterations=iterations, converged=converged,
                    kkt_residuals=kkt, rss=rss, failures=failures)


def oracle_fit(design: DesignMatrices, true_supports) -> OracleFit:
    """Per-equation OLS restricted to the given support columns (zero
    elsewhere); rank-deficient restricted designs fall back to minimum-norm
    least squares and are flagged."""
    n = design.n
    m = design.n_features
    beta = np.zeros((m, n))
    flags = np.zeros(n, dtype=bool)
    for i in range(n):
        support = np.asarray(true_supports[i], dtype=int)
        if support.size == 0:
            continue
        xs = design.x[:, support]
        coef, _, rank, _ = np.linalg.lstsq(xs, design.y[:, i], rcond=None)
        flags[i] = rank < support.size
        beta[support, i] = coef
    return OracleFit(beta=beta, rank_deficient=flags)


def forecast(
    beta: np.ndarray,
    panel: TimeSeriesPanel | np.ndarray,
    horizon: int = 1,
    intercept: np.ndarray | None = None,
) -> np.ndarray:
    """One-step (or iterated multi-step) forecast from stacked coefficients.

    ``beta`` is (n*p) x n in the lag-major layout of the design matrix; the
    forecast is y_hat = intercept + sum_k A_k y_{T+1-k} using the trailing p
    panel rows.
    """
    data = panel.data if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = beta.shape[1]
    if data.ndim != 2 or data.shape[1] != n:
        raise ValueError(f"panel has {data.shape[1] if data.ndim == 2 else '?'} series, expected {n}")
    if beta.shape[0] % n != 0:
        raise ValueError(f"stacked coefficients of shape {beta.shape} are not a multiple of n={n}")
    p = beta.shape[0] // n
    if data.shape[0] < p:
        raise ValueError(f"panel has {data.shape[0]} rows, needs at least p={p} of history")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    c = np.zeros(n) if intercept is None else np.asarray(intercept, dtype=float)
    history = data[-p:, :].copy()
    out = np.empty((horizon, n))
    for h in range(horizon):
        x = history[::-1].reshape(-1)  # (y_T, y_{T-1}, ..., y_{T-p+1}) lag-major
        out[h] = c + x @ beta
        history = np.vstack([history[1:], out[h]]) if p > 1 else out[h][None, :]
    return out[0] if horizon == 1 else out


def var_spec_supports(spec: VarSpec, threshold: float = 0.0) -> list[np.ndarray]:
    """True support of each equation in the stacked lag-major layout."""
    stacked = spec.stacked_coefficients()
    return [np.flatnonzero(np.abs(stacked[:, i]) > threshold) for i in range(spec.n)]
