"""Panel simulators: Gaussian i.i.d. innovations, a stochastic-covariance
(matrix-autoregressive volatility) innovation process, and the block-diagonal
benchmark design used by the Monte Carlo harness."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .varcore import VarSpec, is_stable

__all__ = [
    "GaussianIID",
    "StochasticCovariance",
    "InnovationSpec",
    "TimeSeriesPanel",
    "SimulationDesign",
    "simulate",
    "step_stochastic_covariance",
    "stationary_innovation_covariance",
    "block_design",
    "build_table1_design",
    "write_panel_csv",
    "read_panel_csv",
    "write_panel_binary",
    "read_panel_binary",
]

#: Absolute value beyond which a simulated path is declared to have exploded.
OVERFLOW_LIMIT = 1e12

#: A noise law maps (generator, dimension) to one centered draw with identity
#: second moment.
NoiseLaw = Callable[[np.random.Generator, int], np.ndarray]


def gaussian_law(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n)


gaussian_law.law_name = "gaussian"  # type: ignore[attr-defined]


def _law_name(law: NoiseLaw) -> str:
    return getattr(law, "law_name", getattr(law, "__name__", "custom"))


def _check_spd(m: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-10):
        raise ValueError(f"{what} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (m + m.T)).min() <= 0:
        raise ValueError(f"{what} must be positive definite")
    return m


@dataclass(frozen=True)
class GaussianIID:
    """Serially independent N(0, sigma) innovations."""

    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma", _check_spd(self.sigma, "sigma"))

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    def describe(self) -> dict:
        return {"kind": "gaussian_iid", "sigma": self.sigma.tolist()}


@dataclass(frozen=True)
class StochasticCovariance:
    """Innovations u_t = chol(H_t) v_t with a matrix-autoregressive covariance
    H_{t+1} = C0 + Psi H_t Psi' + eps_t eps_t'.

    ``c0`` must be symmetric positive definite and the stationarity condition
    |Psi|_1 * |Psi|_inf < 1 must hold. ``v_law``/``eps_law`` draw centered
    vectors with identity second moment (standard Gaussian by default).
    """

    c0: np.ndarray
    psi: np.ndarray
    eps_law: NoiseLaw = gaussian_law
    v_law: NoiseLaw = gaussian_law

    def __post_init__(self):
        c0 = _check_spd(self.c0, "c0")
        psi = np.asarray(self.psi, dtype=float)
        if psi.shape != c0.shape:
            raise ValueError(f"psi has shape {psi.shape}, expected {c0.shape}")
        l1 = np.abs(psi).sum(axis=0).max()
        linf = np.abs(psi).sum(axis=1).max()
        if l1 * linf >= 1.0:
            raise ValueError(
                f"covariance recursion is non-stationary: |Psi|_1 * |Psi|_inf = "
                f"{l1 * linf:.6f} >= 1"
            )
        object.__setattr__(self, "c0", c0)
        object.__setattr__(self, "psi", psi)

    @property
    def n(self) -> int:
        return self.c0.shape[0]

    def describe(self) -> dict:
        return {
            "kind": "stochastic_covariance",
            "c0": self.c0.tolist(),
            "psi": self.psi.tolist(),
            "eps_law": _law_name(self.eps_law),
            "v_law": _law_name(self.v_law),
        }


InnovationSpec = Union[GaussianIID, StochasticCovariance]


def dgp_fingerprint(spec: VarSpec, innov: InnovationSpec) -> str:
    payload = spec.to_json() + json.dumps(innov.describe(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TimeSeriesPanel:
    """A simulated T x n panel with provenance metadata; row t is y_t."""

    data: np.ndarray
    seed: int
    burn_in: int
    dgp_fingerprint: str

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"panel data must be a nonempty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("panel contains non-finite entries")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]


def default_burn_in(p: int) -> int:
    return 200 + 10 * p


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """One counter-based stream per replication, split between v and eps."""
    v_seq, eps_seq = np.random.SeedSequence(seed).spawn(2)
    return (
        np.random.Generator(np.random.Philox(v_seq)),
        np.random.Generator(np.random.Philox(eps_seq)),
    )


def step_stochastic_covariance(
    innov: StochasticCovariance,
    h: np.ndarray,
    v_rng: np.random.Generator,
    eps_rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One transition of the covariance recursion.

    Returns (u_t, H_{t+1}) where u_t = L v_t with L the lower-triangular
    Cholesky factor of the current H. The update keeps H symmetric positive
    definite by construction.
    """
    if eps_rng is None:
        eps_rng = v_rng
    try:
        chol = np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(
            f"Cholesky factorization of the conditional covariance failed "
            f"(min eigenvalue {np.linalg.eigvalsh(h).min():.3e})"
        ) from exc
    n = innov.n
    u = chol @ np.asarray(innov.v_law(v_rng, n), dtype=float)
    eps = np.asarray(innov.eps_law(eps_rng, n), dtype=float)
    h_next = innov.c0 + innov.psi @ h @ innov.psi.T + np.outer(eps, eps)
    h_next = 0.5 * (h_next + h_next.T)
    return u, h_next


def stationary_innovation_covariance(innov: InnovationSpec, tol: float = 1e-12) -> np.ndarray:
    """Long-run innovation covariance Sigma = E[u_t u_t'].

    For the covariance recursion this is the matrix series
    sum_j Psi^j (C0 + I) Psi'^j, truncated once the increment Frobenius norm
    drops below ``tol``.
    """
    if isinstance(innov, GaussianIID):
        return innov.sigma.copy()
    term = innov.c0 + np.eye(innov.n)
    total = term.copy()
    for _ in range(100_000):
        term = innov.psi @ term @ innov.psi.T
        total += term
        if np.linalg.norm(term, "fro") < tol:
            return 0.5 * (total + total.T)
    raise RuntimeError(
        "stationary covariance series did not converge; the recursion is "
        "too close to the stationarity boundary"
    )


def simulate(
    spec: VarSpec,
    innov: InnovationSpec,
    T: int,
    burn_in: int | None = None,
    seed: int = 0,
    check_stability: bool = True,
) -> TimeSeriesPanel:
    """Iterate the VAR recursion from zero initial conditions and return the
    last T rows after discarding ``burn_in`` of them.

    Bit-reproducible for a fixed seed. Raises if the path overflows, naming
    the offending step.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if burn_in is None:
        burn_in = default_burn_in(spec.p)
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    if innov.n != spec.n:
        raise ValueError(f"innovation dimension {innov.n} does not match spec dimension {spec.n}")
    if check_stability:
        report = is_stable(spec)
        if not report.stable:
            raise ValueError(
                f"stability condition (A1) violated: spectral radius "
                f"{report.spectral_radius:.6f} >= 1"
            )

    n, p = spec.n, spec.p
    steps = burn_in + T
    v_rng, eps_rng = _streams(seed)
    y = np.zeros((p + steps, n))

    if isinstance(innov, GaussianIID):
        chol = np.linalg.cholesky(innov.sigma)
        shocks = v_rng.standard_normal((steps, n)) @ chol.T

        def next_u(t: int) -> np.ndarray:
            return shocks[t]

    else:
        h = stationary_innovation_covariance(innov)

        def next_u(t: int) -> np.ndarray:
            nonlocal h
            u, h = step_stochastic_covariance(innov, h, v_rng, eps_rng)
            return u

    for t in range(steps):
        row = p + t
        acc = spec.intercept + next_u(t)
        for k in range(1, p + 1):
            acc = acc + spec.coeffs[k - 1] @ y[row - k]
        if np.abs(acc).max() > OVERFLOW_LIMIT:
            raise RuntimeError(
                f"simulated path overflowed at step {t} (|y|_inf > {OVERFLOW_LIMIT:g}); "
                f"the coefficient matrices are explosive"
            )
        y[row] = acc

    data = y[p + burn_in:]
    return TimeSeriesPanel(
        data=data,
        seed=int(seed),
        burn_in=int(burn_in),
        dgp_fingerprint=dgp_fingerprint(spec, innov),
    )


@dataclass(frozen=True)
class SimulationDesign:
    """The block-diagonal benchmark: n = c*T series in 5x5 blocks with entries
    0.15 at lag 1 and -0.1 at lag 4, covariance recursion with C0 = 1e-5*I and
    Psi = 0.8*I, and one-step-ahead forecasting."""

    T: int
    c: int
    replications: int = 100
    block_size: int = 5
    a1_entry: float = 0.15
    a4_entry: float = -0.1
    c0_diag: float = 1e-5
    psi_diag: float = 0.8
    horizon: int = 1

    @property
    def n(self) -> int:
        return self.c * self.T

    def build(self) -> tuple[VarSpec, InnovationSpec]:
        return build_table1_design(
            self.T,
            self.c,
            block_size=self.block_size,
            a1_entry=self.a1_entry,
            a4_entry=self.a4_entry,
            c0_diag=self.c0_diag,
            psi_diag=self.psi_diag,
        )


def block_design(
    n: int,
    lag_entries: dict[int, float],
    block_size: int = 5,
    intercept: np.ndarray | None = None,
) -> VarSpec:
    """VAR spec whose lag-k matrix is block-diagonal with ``block_size`` square
    all-ones blocks scaled by ``lag_entries[k]`` (zero for absent lags)."""
    if n % block_size != 0:
        raise ValueError(f"n={n} is not divisible by the block size {block_size}")
    if not lag_entries:
        raise ValueError("at least one lag entry is required")
    p = max(lag_entries)
    if min(lag_entries) < 1:
        raise ValueError("lags must be >= 1")
    coeffs = []
    for k in range(1, p + 1):
        a = np.zeros((n, n))
        value = lag_entries.get(k, 0.0)
        if value != 0.0:
            block = np.full((block_size, block_size), value)
            for b in range(n // block_size):
                lo = b * block_size
                a[lo:lo + block_size, lo:lo + block_size] = block
        coeffs.append(a)
    return VarSpec(coeffs, intercept)


def build_table1_design(
    T: int,
    c: int,
    block_size: int = 5,
    a1_entry: float = 0.15,
    a4_entry: float = -0.1,
    c0_diag: float = 1e-5,
    psi_diag: float = 0.8,
) -> tuple[VarSpec, InnovationSpec]:
    """The benchmark design with n = c*T series (zero intercept)."""
    n = c * T
    if n % block_size != 0:
        raise ValueError(f"n = c*T = {n} must be divisible by the block size {block_size}")
    spec = block_design(n, {1: a1_entry, 4: a4_entry}, block_size=block_size)
    innov = StochasticCovariance(c0=c0_diag * np.eye(n), psi=psi_diag * np.eye(n))
    return spec, innov


def _panel_data(panel: TimeSeriesPanel | np.ndarray) -> np.ndarray:
    return panel.data if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, dtype=float)


def write_panel_csv(panel: TimeSeriesPanel | np.ndarray, path) -> None:
    """CSV with header y1..yn; 17 significant digits so values round-trip."""
    data = _panel_data(panel)
    header = ",".join(f"y{j + 1}" for j in range(data.shape[1]))
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def read_panel_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))


def write_panel_binary(panel: TimeSeriesPanel | np.ndarray, path) -> None:
    """16-byte header (little-endian int64 T, n) followed by row-major
    little-endian float64 data."""
    data = _panel_data(panel)
    with open(path, "wb") as fh:
        fh.write(np.array(data.shape, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_panel_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = np.frombuffer(fh.read(16), dtype="<i8")
        if header.size != 2 or header.min() < 1:
            raise ValueError(f"malformed panel header {header!r}")
        t, n = int(header[0]), int(header[1])
        body = np.frombuffer(fh.read(t * n * 8), dtype="<f8")
        if body.size != t * n:
            raise ValueError(f"panel body has {body.size} values, expected {t * n}")
    return body.reshape(t, n).copy()
