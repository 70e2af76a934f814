"""VAR(p) model representation, companion/moving-average structure, and
spectral diagnostics (stability, tail sums, Gram eigenvalue sandwich,
weak-sparsity profiles)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "VarSpec",
    "CompanionMatrix",
    "VmaCoefficients",
    "SparsityProfile",
    "StabilityReport",
    "TailDecayFit",
    "build_companion",
    "is_stable",
    "vma_coefficients",
    "default_vma_horizon",
    "tail_sum_profile",
    "fit_tail_decay",
    "gram_eigen_bounds",
    "sparsity_profile",
]

#: Stability margin used when none is given; rejects numerically-unit roots.
DEFAULT_STABILITY_MARGIN = 1e-6

#: Cap on the automatically chosen moving-average truncation horizon.
MAX_VMA_HORIZON = 500


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class VarSpec:
    """A VAR(p) model: y_t = intercept + A_1 y_{t-1} + ... + A_p y_{t-p} + u_t.

    ``coeffs`` holds A_1..A_p in lag-ascending order; all matrices are n x n.
    Instances are immutable (arrays are read-only) and safe to share.
    """

    coeffs: tuple[np.ndarray, ...]
    intercept: np.ndarray

    def __init__(self, coeffs: Sequence[np.ndarray], intercept: np.ndarray | None = None):
        mats = tuple(_readonly(a) for a in coeffs)
        if not mats:
            raise ValueError("at least one lag matrix is required (p >= 1)")
        n = mats[0].shape[0]
        for k, a in enumerate(mats, start=1):
            if a.ndim != 2 or a.shape != (n, n):
                raise ValueError(f"lag matrix {k} has shape {a.shape}, expected ({n}, {n})")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"lag matrix {k} contains non-finite entries")
        if intercept is None:
            c = np.zeros(n)
        else:
            c = np.asarray(intercept, dtype=float).reshape(-1)
            if c.shape != (n,):
                raise ValueError(f"intercept has length {c.size}, expected {n}")
            if not np.all(np.isfinite(c)):
                raise ValueError("intercept contains non-finite entries")
        object.__setattr__(self, "coeffs", mats)
        object.__setattr__(self, "intercept", _readonly(c))

    @property
    def n(self) -> int:
        return self.coeffs[0].shape[0]

    @property
    def p(self) -> int:
        return len(self.coeffs)

    def stacked_coefficients(self) -> np.ndarray:
        """Return the (n*p) x n matrix whose column i is the coefficient vector
        of equation i, laid out lag-major: entry (k-1)*n + j is (A_k)[i, j]."""
        return np.vstack([a.T for a in self.coeffs])

    @classmethod
    def from_stacked(cls, beta: np.ndarray, p: int, intercept: np.ndarray | None = None) -> "VarSpec":
        """Inverse of :meth:`stacked_coefficients`."""
        beta = np.asarray(beta, dtype=float)
        n = beta.shape[1]
        if beta.shape != (n * p, n):
            raise ValueError(f"stacked coefficients have shape {beta.shape}, expected ({n * p}, {n})")
        coeffs = [beta[k * n:(k + 1) * n, :].T for k in range(p)]
        return cls(coeffs, intercept)

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "p": self.p,
            "coeffs": [a.tolist() for a in self.coeffs],
            "intercept": self.intercept.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "VarSpec":
        doc = json.loads(text)
        coeffs = [np.asarray(a, dtype=float) for a in doc["coeffs"]]
        spec = cls(coeffs, np.asarray(doc.get("intercept", np.zeros(doc["n"])), dtype=float))
        if spec.n != doc["n"] or spec.p != doc["p"]:
            raise ValueError(
                f"declared dimensions (n={doc['n']}, p={doc['p']}) do not match "
                f"coefficient arrays (n={spec.n}, p={spec.p})"
            )
        return spec


@dataclass(frozen=True)
class CompanionMatrix:
    """First-order companion embedding of a VAR(p): top block row [A_1 ... A_p],
    identity blocks on the subdiagonal, zeros elsewhere."""

    data: np.ndarray

    @property
    def dim(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class VmaCoefficients:
    """Truncated moving-average coefficients Phi_0..Phi_K of a stable VAR.

    ``phis`` has shape (K+1, n, n); Phi_0 is the identity and
    Phi_k = sum_{j=1}^{min(p,k)} Phi_{k-j} A_j.
    """

    phis: np.ndarray

    @property
    def horizon(self) -> int:
        return self.phis.shape[0] - 1

    @property
    def n(self) -> int:
        return self.phis.shape[1]

    def row(self, k: int, i: int) -> np.ndarray:
        """Row i of Phi_k (the MA loadings of series i at lag k)."""
        return self.phis[k, i, :]


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    spectral_radius: float

    def __bool__(self) -> bool:
        return self.stable


@dataclass(frozen=True)
class SparsityProfile:
    """Weak-sparsity summary of per-equation coefficient vectors.

    ``rq[i]`` is sum_j |beta_{i,j}|^q with 0^0 := 0; ``active_sets[i]`` is
    {j : |beta_{i,j}| > eta}.
    """

    q: float
    eta: float
    rq: np.ndarray
    active_sets: tuple[np.ndarray, ...]

    @property
    def r_max(self) -> float:
        """Largest per-equation l_q mass; the single-constant version of the
        weak-sparsity radius."""
        return float(self.rq.max())


@dataclass(frozen=True)
class TailDecayFit:
    """Log-linear fit tail(m) ~ c_bar * exp(-c_rate * m) of the worst-row
    moving-average tail sums (decay exponent fixed at one)."""

    c_bar: float
    c_rate: float
    gamma1: float = 1.0

    def bound(self, m: np.ndarray | float) -> np.ndarray | float:
        return self.c_bar * np.exp(-self.c_rate * np.asarray(m, dtype=float) ** self.gamma1)


def build_companion(spec: VarSpec) -> CompanionMatrix:
    """Assemble the (n*p) x (n*p) companion matrix of ``spec``."""
    n, p = spec.n, spec.p
    data = np.zeros((n * p, n * p))
    for k, a in enumerate(spec.coeffs):
        data[:n, k * n:(k + 1) * n] = a
    if p > 1:
        data[n:, :n * (p - 1)] = np.eye(n * (p - 1))
    return CompanionMatrix(_readonly(data))


def is_stable(spec: VarSpec, margin: float = DEFAULT_STABILITY_MARGIN) -> StabilityReport:
    """Check stability via the companion spectral radius.

    Equivalent to all roots of det(I - sum_k A_k z^k) lying outside the unit
    disk; returns the radius alongside the verdict.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    comp = build_companion(spec)
    try:
        eigvals = np.linalg.eigvals(comp.data)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"companion eigensolver failed for n={spec.n}, p={spec.p}: {exc}") from exc
    radius = float(np.abs(eigvals).max())
    return StabilityReport(stable=radius < 1.0 - margin, spectral_radius=radius)


def default_vma_horizon(spec: VarSpec, tol: float = 1e-12) -> int:
    """Smallest K with spectral_radius**K < tol, capped at MAX_VMA_HORIZON."""
    report = is_stable(spec)
    if not report.stable:
        raise ValueError(
            f"stability condition (A1) violated: spectral radius "
            f"{report.spectral_radius:.6f} >= {1.0 - DEFAULT_STABILITY_MARGIN}"
        )
    rho = report.spectral_radius
    if rho <= 0.0:
        return spec.p
    k = int(np.ceil(np.log(tol) / np.log(rho))) if rho < 1.0 else MAX_VMA_HORIZON
    return int(min(max(k, spec.p), MAX_VMA_HORIZON))


def vma_coefficients(spec: VarSpec, K: int) -> VmaCoefficients:
    """Moving-average coefficients Phi_0..Phi_K by the lag recursion."""
    if K < 0:
        raise ValueError("horizon K must be >= 0")
    n, p = spec.n, spec.p
    phis = np.zeros((K + 1, n, n))
    phis[0] = np.eye(n)
    for k in range(1, K + 1):
        acc = np.zeros((n, n))
        for j in range(1, min(p, k) + 1):
            acc += phis[k - j] @ spec.coeffs[j - 1]
        phis[k] = acc
    return VmaCoefficients(_readonly(phis))


def tail_sum_profile(vma: VmaCoefficients, m: int) -> np.ndarray:
    """Per-series tail sums sum_{k=m}^{K} |row_i(Phi_k)|_1.

    Nonincreasing in m and nonnegative; the worst row is the quantity the
    exponential-decay condition controls.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    if m > vma.horizon:
        raise ValueError(f"m={m} exceeds the truncation horizon K={vma.horizon}")
    row_l1 = np.abs(vma.phis[m:]).sum(axis=2)  # (K+1-m, n)
    return row_l1.sum(axis=0)


def fit_tail_decay(vma: VmaCoefficients, m_max: int | None = None) -> TailDecayFit:
    """Fit tail(m) <= c_bar * exp(-c_rate * m) by least squares on log tail sums.

    The fitted constants describe this particular spec's decay; the slope is
    then inflated so the fitted curve dominates every observed tail sum.
    """
    if m_max is None:
        m_max = max(vma.horizon // 2, 1)
    m_max = min(m_max, vma.horizon)
    ms = np.arange(m_max + 1)
    tails = np.array([tail_sum_profile(vma, int(m)).max() for m in ms])
    pos = tails > 0
    if pos.sum() < 2:
        return TailDecayFit(c_bar=float(tails[0]) if tails.size else 0.0, c_rate=np.inf)
    x = ms[pos].astype(float)
    y = np.log(tails[pos])
    slope, inter = np.polyfit(x, y, 1)
    c_rate = max(-float(slope), 0.0)
    # shift the intercept up so the fit is a true envelope of the observations
    c_bar = float(np.exp((y + c_rate * x).max()))
    return TailDecayFit(c_bar=c_bar, c_rate=c_rate)


def gram_eigen_bounds(
    spec: VarSpec,
    sigma: np.ndarray,
    grid_points: int = 512,
) -> tuple[float, float]:
    """Eigenvalue sandwich for the population Gram matrix of a stable VAR.

    Evaluates A(z) = I - sum_k A_k z^k on a uniform grid of the unit circle and
    returns (lambda_min(Sigma) / max_z lambda_max(A*A),
    lambda_max(Sigma) / min_z lambda_min(A*A)).
    """
    if grid_points < 1:
        raise ValueError("grid_points must be >= 1")
    sigma = np.asarray(sigma, dtype=float)
    n = spec.n
    if sigma.shape != (n, n):
        raise ValueError(f"sigma has shape {sigma.shape}, expected ({n}, {n})")
    if not np.allclose(sigma, sigma.T, atol=1e-10):
        raise ValueError("sigma must be symmetric")
    sig_eigs = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    if sig_eigs.min() <= 0:
        raise ValueError(f"sigma must be positive definite (min eigenvalue {sig_eigs.min():.3e})")
    if not is_stable(spec).stable:
        raise ValueError("stability condition (A1) violated: spec is not stable")

    eye = np.eye(n)
    max_of_max = -np.inf
    min_of_min = np.inf
    thetas = 2.0 * np.pi * np.arange(grid_points) / grid_points
    for theta in thetas:
        z = np.exp(1j * theta)
        a_z = eye.astype(complex).copy()
        zk = 1.0 + 0.0j
        for a in spec.coeffs:
            zk *= z
            a_z -= a * zk
        m = a_z.conj().T @ a_z
        ev = np.linalg.eigvalsh(m)
        max_of_max = max(max_of_max, float(ev[-1]))
        min_of_min = min(min_of_min, float(ev[0]))
    lower = float(sig_eigs.min() / max_of_max)
    upper = float(sig_eigs.max() / min_of_min)
    return lower, upper


def sparsity_profile(beta: np.ndarray, q: float, eta: float) -> SparsityProfile:
    """Weak-sparsity profile of stacked coefficients (column i = equation i).

    A 1-D input is treated as a single equation. q must lie in [0, 1);
    exact zeros never contribute to the l_q mass (0^0 := 0).
    """
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q must be in [0, 1), got {q}")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    beta = np.asarray(beta, dtype=float)
    if beta.ndim == 1:
        beta = beta[:, None]
    absb = np.abs(beta)
    if q == 0.0:
        rq = (absb > 0).sum(axis=0).astype(float)
    else:
        with np.errstate(divide="ignore"):
            rq = np.where(absb > 0, absb ** q, 0.0).sum(axis=0)
    active = tuple(np.flatnonzero(absb[:, i] > eta) for i in range(beta.shape[1]))
    return SparsityProfile(q=float(q), eta=float(eta), rq=_readonly(rq), active_sets=active)
