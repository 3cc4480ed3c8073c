"""
Long-range-dependent covariance models.

A model is given on the spectral side,

    g(u) = |u|^(alpha-nu) b(u/|u|) h(u),   u in [-pi, pi)^nu,

and its covariance table r(p) = ∫ e^{i(p,u)} g(u) du is produced by the
singular-weight quadrature of `lab.services.quadrature`.  The asymptotic
condition r(p) ~ a(p/|p|) |p|^(-alpha) L(|p|) is verified numerically, with
the angular factor a fitted along rays.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

from lab.exceptions import (
    InstabilityError,
    ModelValidationError,
    OriginEvaluationError,
    ResolutionError,
    TableRangeError,
)
from lab.services.quadrature import CellGrid, fourier_coefficients, lag_box, power_law_weights

logger = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-12
RANK_CUTOFF = 1e-10

# quadrature cells per axis per unit of the largest tabulated lag
LAG_RESOLUTION = 32
DEFAULT_RESOLUTION = {1: 1 << 18, 2: 1 << 10}
MAX_GRID_CELLS = 1 << 22


# ===================================
# Parameters
# ===================================
@dataclass(frozen=True)
class LatticeDims:
    nu: int
    d: int

    def __post_init__(self):
        if self.nu < 1 or self.d < 1:
            raise ModelValidationError(f"lattice dimension and vector dimension must be >= 1, got {self}")


@dataclass(frozen=True)
class LongRangeParams:
    alpha: float
    k: int

    def check(self, nu: int) -> "LongRangeParams":
        if self.k < 1:
            raise ModelValidationError(f"Hermite order k must be >= 1, got {self.k}")
        if not 0.0 < self.alpha < nu / self.k:
            raise ModelValidationError(f"need 0 < alpha < nu/k = {nu / self.k:.6g}, got alpha={self.alpha}")
        return self


@dataclass(frozen=True)
class SlowVarying:
    """L(t): `constant` (L = 1) or `log` (L = max(1, log t))."""

    kind: str = "constant"

    def __post_init__(self):
        if self.kind not in ("constant", "log"):
            raise ModelValidationError(f"unknown slowly varying kind {self.kind!r}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.ones_like(t)
        return np.maximum(1.0, np.log(np.maximum(t, 1.0)))

    def ratio(self, lam: float, t) -> np.ndarray:
        """L(lam*t)/L(t); tends to 1 as t grows."""
        return self(lam * np.asarray(t, dtype=float)) / self(t)


# ===================================
# Direction-dependent matrices (b and a)
# ===================================
def _as_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return theta[None, :] if theta.ndim == 1 else theta


@dataclass(frozen=True, eq=False)
class IsotropicFactor:
    """Direction-independent matrix."""

    matrix: np.ndarray
    kind = "isotropic"

    def __call__(self, theta) -> np.ndarray:
        theta = _as_theta(theta)
        matrix = np.asarray(self.matrix, dtype=complex)
        return np.broadcast_to(matrix, (theta.shape[0],) + matrix.shape).copy()


@dataclass(frozen=True, eq=False)
class AxisFactor:
    """nu = 1 factor with separate values on the positive and negative half-line."""

    plus: np.ndarray
    minus: np.ndarray
    kind = "axis"

    def __call__(self, theta) -> np.ndarray:
        theta = _as_theta(theta)
        plus = np.asarray(self.plus, dtype=complex)
        minus = np.asarray(self.minus, dtype=complex)
        return np.where((theta[:, 0] > 0)[:, None, None], plus, minus)


@dataclass(frozen=True, eq=False)
class HarmonicFactor:
    """nu = 2 factor base + amplitude * cos(harmonic * phi); an even harmonic keeps b(-x) = b(x)."""

    base: np.ndarray
    amplitude: np.ndarray
    harmonic: int = 2
    kind = "harmonic"

    def __call__(self, theta) -> np.ndarray:
        theta = _as_theta(theta)
        phi = np.arctan2(theta[:, 1], theta[:, 0])
        base = np.asarray(self.base, dtype=complex)
        amp = np.asarray(self.amplitude, dtype=complex)
        return base[None] + np.cos(self.harmonic * phi)[:, None, None] * amp[None]


@dataclass(frozen=True, eq=False)
class ScaledFactor:
    """S b(theta) S for a real diagonal scaling S (unit-variance standardization)."""

    base: object
    scale: np.ndarray
    kind = "scaled"

    def __call__(self, theta) -> np.ndarray:
        s = np.asarray(self.scale, dtype=float)
        return s[None, :, None] * np.asarray(self.base(theta)) * s[None, None, :]


def sample_directions(nu: int, count: int = 64) -> np.ndarray:
    if nu == 1:
        return np.array([[1.0], [-1.0]])
    phi = np.linspace(-np.pi, np.pi, count, endpoint=False)
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


def check_psd(matrices: np.ndarray, what: str, tolerance: float = PSD_TOLERANCE) -> None:
    matrices = np.asarray(matrices, dtype=complex)
    if not np.allclose(matrices, np.conj(np.swapaxes(matrices, -1, -2)), atol=1e-12):
        raise ModelValidationError(f"{what} is not Hermitian")
    low = np.linalg.eigvalsh(matrices).min()
    scale = max(1.0, float(np.abs(matrices).max()))
    if low < -tolerance * scale:
        raise ModelValidationError(f"{what} is not positive semidefinite (min eigenvalue {low:.3e})")


@dataclass(frozen=True, eq=False)
class AngularKernel:
    """
    The a_{j,j'} of the covariance asymptotics, tabulated at directions and
    looked up by nearest direction.
    """

    directions: np.ndarray
    values: np.ndarray

    @classmethod
    def constant(cls, matrix, nu: int) -> "AngularKernel":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim == 0:
            matrix = matrix.reshape(1, 1)
        dirs = sample_directions(nu, 16)
        return cls(directions=dirs, values=np.broadcast_to(matrix, (dirs.shape[0],) + matrix.shape).copy())

    def __call__(self, theta) -> np.ndarray:
        theta = _as_theta(theta)
        nearest = np.argmax(theta @ self.directions.T, axis=1)
        return self.values[nearest]

    def symmetry_residual(self) -> float:
        """max |a(-x) - a(x)^T| over tabulated directions whose negation is tabulated."""
        worst = 0.0
        for idx, direction in enumerate(self.directions):
            match = np.flatnonzero(np.all(np.isclose(self.directions, -direction), axis=1))
            if match.size:
                worst = max(worst, float(np.abs(self.values[match[0]] - self.values[idx].T).max()))
        return worst


# ===================================
# Radial-smooth factor h
# ===================================
@dataclass(frozen=True)
class SmoothFactor:
    """
    h(u) on the torus: `constant` (value), `bump` (prod_l ((1+cos u_l)/2)^power)
    or `fgn` (the fractional-Gaussian-noise correction, nu = 1, h(0) = 1).
    """

    kind: str = "bump"
    value: float = 1.0
    power: float = 2.0
    alpha: float = 0.0
    terms: int = 200

    def __call__(self, u) -> np.ndarray:
        u = _as_theta(u)
        if self.kind == "constant":
            return np.full(u.shape[0], float(self.value))
        if self.kind == "bump":
            return np.prod(((1.0 + np.cos(u)) / 2.0) ** self.power, axis=-1)
        if self.kind == "fgn":
            return _fgn_correction(u[:, 0], self.alpha, self.terms)
        raise ModelValidationError(f"unknown smooth factor kind {self.kind!r}")


def _fgn_correction(u: np.ndarray, alpha: float, terms: int) -> np.ndarray:
    central = np.sinc(u / (2.0 * np.pi)) ** 2
    series = np.full(u.shape, 2.0 * (2.0 * np.pi) ** (alpha - 3.0) * (terms + 0.5) ** (alpha - 2.0) / (2.0 - alpha))
    for j in range(1, terms + 1):
        series += np.abs(u + 2.0 * np.pi * j) ** (alpha - 3.0) + np.abs(u - 2.0 * np.pi * j) ** (alpha - 3.0)
    return central + 2.0 * (1.0 - np.cos(u)) * np.abs(u) ** (1.0 - alpha) * series


# ===================================
# Spectral density model
# ===================================
@dataclass(frozen=True, eq=False)
class SpectralDensityModel:
    dims: LatticeDims
    params: LongRangeParams
    b: object
    h: SmoothFactor

    def __post_init__(self):
        self.params.check(self.dims.nu)
        origin = np.zeros((1, self.dims.nu))
        if not float(self.h(origin)[0]) > 0.0:
            raise ModelValidationError("h(0) must be positive")
        dirs = sample_directions(self.dims.nu)
        sample = 0.7 * dirs
        if not np.allclose(self.h(sample), self.h(-sample)):
            raise ModelValidationError("h must be even")
        b_plus, b_minus = np.asarray(self.b(dirs)), np.asarray(self.b(-dirs))
        if b_plus.shape[-1] != self.dims.d:
            raise ModelValidationError(f"b has dimension {b_plus.shape[-1]}, expected d={self.dims.d}")
        if not np.allclose(b_plus, np.conj(np.swapaxes(b_plus, -1, -2))):
            raise ModelValidationError("b(theta) must be Hermitian")
        if not np.allclose(b_minus, np.conj(b_plus)):
            raise ModelValidationError("b(-theta) must equal conj(b(theta))")

    @property
    def h0(self) -> float:
        return float(self.h(np.zeros((1, self.dims.nu)))[0])

    def validate_directions(self, theta) -> None:
        check_psd(self.b(theta), "b(theta)")


def eval_spectral_density(model: SpectralDensityModel, u) -> np.ndarray:
    """g(u) = |u|^(alpha-nu) b(u/|u|) h(u) as a d x d Hermitian matrix."""
    u = np.asarray(u, dtype=float).reshape(model.dims.nu)
    radius = float(np.linalg.norm(u))
    if radius == 0.0:
        raise OriginEvaluationError("the spectral density is singular at u = 0")
    theta = (u / radius)[None, :]
    model.validate_directions(theta)
    b = np.asarray(model.b(theta))[0]
    return radius ** (model.params.alpha - model.dims.nu) * b * float(model.h(u[None, :])[0])


# ===================================
# Covariance tables
# ===================================
@dataclass(frozen=True, eq=False)
class CovarianceTable:
    """
    r_{j,j'}(p) = E X_j(0) X_j'(p) on the lag box [-max_lag, max_lag]^nu.

    `r` has shape (d, d) + (2*max_lag+1,)*nu, lag p stored at index p + max_lag.
    """

    dims: LatticeDims
    max_lag: int
    r: np.ndarray

    def __post_init__(self):
        expected = (self.dims.d, self.dims.d) + (2 * self.max_lag + 1,) * self.dims.nu
        if self.r.shape != expected:
            raise ModelValidationError(f"covariance array has shape {self.r.shape}, expected {expected}")

    def _index(self, lags) -> tuple:
        lags = np.asarray(lags, dtype=int)
        if lags.ndim == 1 and self.dims.nu == 1:
            lags = lags[:, None]
        if lags.size and np.abs(lags).max() > self.max_lag:
            raise TableRangeError(f"lag {int(np.abs(lags).max())} exceeds table range {self.max_lag}")
        return tuple((lags + self.max_lag).T)

    def at(self, lags) -> np.ndarray:
        """Matrices r(p) for lags of shape (m, nu), result (m, d, d)."""
        idx = self._index(lags)
        return np.moveaxis(self.r[(slice(None), slice(None)) + idx], -1, 0)

    def entry(self, j: int, jp: int, lags) -> np.ndarray:
        return self.r[(j, jp) + self._index(lags)]

    def lags(self) -> np.ndarray:
        return lag_box(self.max_lag, self.dims.nu)

    def lag0(self) -> np.ndarray:
        return self.at(np.zeros((1, self.dims.nu), dtype=int))[0]

    def is_diagonal(self, tolerance: float = 1e-12) -> bool:
        off = self.r.copy()
        for j in range(self.dims.d):
            off[j, j] = 0.0
        return bool(np.abs(off).max(initial=0.0) <= tolerance)

    def symmetry_residual(self) -> float:
        flipped = np.swapaxes(self.r, 0, 1)[(slice(None), slice(None)) + (slice(None, None, -1),) * self.dims.nu]
        return float(np.abs(self.r - flipped).max())

    def restricted(self, max_lag: int) -> "CovarianceTable":
        if max_lag > self.max_lag:
            raise TableRangeError(f"cannot restrict table of range {self.max_lag} to {max_lag}")
        cut = slice(self.max_lag - max_lag, self.max_lag + max_lag + 1)
        return CovarianceTable(self.dims, max_lag, self.r[(slice(None), slice(None)) + (cut,) * self.dims.nu].copy())

    def standardized(self) -> "CovarianceTable":
        """r_{jj'}(p) / sqrt(r_jj(0) r_j'j'(0)), so that E X(0) X(0)^T has a unit diagonal."""
        scale = np.sqrt(np.real(np.diag(self.lag0())))
        if np.any(scale <= 0):
            raise ModelValidationError("a coordinate has zero variance")
        shape = (self.dims.d, self.dims.d) + (1,) * self.dims.nu
        return CovarianceTable(self.dims, self.max_lag, self.r / np.outer(scale, scale).reshape(shape))

    def rows(self):
        """(lag..., j, j', value) rows for CSV export."""
        for lag, matrix in zip(self.lags(), self.at(self.lags())):
            for j in range(self.dims.d):
                for jp in range(self.dims.d):
                    yield (*lag.tolist(), j, jp, float(matrix[j, jp]))


def symmetrize(r: np.ndarray, nu: int) -> np.ndarray:
    """Enforce r_{j',j}(-p) = r_{j,j'}(p) by averaging the two."""
    flipped = np.swapaxes(r, 0, 1)[(slice(None), slice(None)) + (slice(None, None, -1),) * nu]
    return 0.5 * (r + flipped)


def density_masses(model: SpectralDensityModel, grid: CellGrid, scale: float = 1.0) -> np.ndarray:
    """Cell masses ∫_cell |x|^(alpha-nu) b h(x/scale) dx with h frozen at the cell center."""
    weights = power_law_weights(grid, model.params.alpha, model.b)
    return weights * model.h(grid.centers / scale)[:, None, None]


def covariance_table(model: SpectralDensityModel, max_lag: int, grid_resolution: int,
                     tolerance: float = 1e-3) -> CovarianceTable:
    """
    Fourier transform of the spectral density on a torus grid.

    The origin singularity is carried by exact per-cell weights; the rest of
    the density is frozen at cell centers.  r(0) is recomputed on the doubled
    grid and a relative change above `tolerance` raises ResolutionError.
    """
    if max_lag < 1:
        raise TableRangeError("max_lag must be >= 1")
    nu = model.dims.nu
    model.validate_directions(sample_directions(nu))
    grid = CellGrid.torus(grid_resolution, nu)
    masses = density_masses(model, grid)

    r0 = masses.sum(axis=0)
    r0_fine = density_masses(model, CellGrid.torus(2 * grid_resolution, nu)).sum(axis=0)
    drift = float(np.abs(r0_fine - r0).max() / max(np.abs(r0).max(), 1e-300))
    if drift > tolerance:
        raise ResolutionError(f"r(0) moved by {drift:.2e} (> {tolerance:.1e}) when the grid was doubled")

    coeffs = fourier_coefficients(grid, masses, max_lag)
    residue = float(np.abs(coeffs.imag).max())
    if residue > 1e-8:
        logger.warning(f"⚠️ covariance quadrature left an imaginary residue of {residue:.2e}")
    else:
        logger.debug(f"covariance imaginary residue {residue:.2e} dropped")
    table = CovarianceTable(model.dims, max_lag, symmetrize(coeffs.real, nu))
    logger.info(f"✅ covariance table: nu={nu}, d={model.dims.d}, max_lag={max_lag}, cells={grid.size}, drift={drift:.1e}")
    return table


def power_law_fourier(q: int, alpha: float) -> float:
    """∫_{-pi}^{pi} cos(q u) |u|^(alpha-1) du for an integer q (Fourier-weighted tail on [q pi, inf))."""
    q = abs(int(q))
    if q == 0:
        return 2.0 * math.pi ** alpha / alpha
    tail, _ = quad(lambda v: v ** (alpha - 1.0), q * math.pi, np.inf, weight="cos", wvar=1.0,
                   epsabs=1e-14, limlst=200)
    return 2.0 * q ** (-alpha) * (float(gamma_fn(alpha)) * math.cos(math.pi * alpha / 2.0) - tail)


def bump_coefficients(power: int) -> dict[int, float]:
    """((1 + cos u)/2)^n = Σ_m C(2n, n+m) 4^-n e^{imu}."""
    return {m: math.comb(2 * power, power + m) / 4.0 ** power for m in range(-power, power + 1)}


def trigonometric_covariance_table(model: SpectralDensityModel, max_lag: int) -> CovarianceTable:
    """
    Exact table for nu = 1, a constant b and a trigonometric-polynomial h
    (`constant`, or `bump` with an integer power): r(p) = b Σ_m h_m K(p + m)
    with K the power-law Fourier integral.
    """
    h = model.h
    if model.dims.nu != 1 or not isinstance(model.b, IsotropicFactor):
        raise ModelValidationError("the exact covariance needs nu = 1 and an isotropic b")
    if h.kind == "constant":
        coefficients = {0: float(h.value)}
    elif h.kind == "bump" and float(h.power).is_integer():
        coefficients = bump_coefficients(int(h.power))
    else:
        raise ModelValidationError(f"h of kind {h.kind!r} (power {h.power}) is not a trigonometric polynomial")
    alpha = model.params.alpha
    reach = max_lag + max(abs(m) for m in coefficients)
    K = np.array([power_law_fourier(q, alpha) for q in range(reach + 1)])
    lags = np.arange(-max_lag, max_lag + 1)
    radial = sum(c * K[np.abs(lags + m)] for m, c in coefficients.items())
    b = np.real(np.asarray(model.b.matrix, dtype=complex))
    r = b[:, :, None] * radial[None, None, :]
    logger.info(f"✅ exact covariance table: d={model.dims.d}, max_lag={max_lag}, harmonics={len(coefficients)}")
    return CovarianceTable(model.dims, max_lag, r)


# ===================================
# Condition on the covariance asymptotics
# ===================================
def _nonzero_lags(table: CovarianceTable) -> tuple[np.ndarray, np.ndarray]:
    lags = table.lags()
    norms = np.linalg.norm(lags, axis=1)
    keep = norms > 0
    return lags[keep], norms[keep]


def verify_lrd_condition(table: CovarianceTable, params: LongRangeParams, L: SlowVarying,
                         a: AngularKernel, thresholds: Iterable[float]) -> dict:
    """sup_{|p| >= T} max_{j,j'} |r(p) - a(p/|p|)|p|^-alpha L(|p|)| / (|p|^-alpha L(|p|)) for each T."""
    thresholds = [float(t) for t in thresholds]
    lags, norms = _nonzero_lags(table)
    if max(thresholds) > norms.max():
        raise TableRangeError(f"threshold {max(thresholds)} exceeds the table's largest lag {norms.max():.0f}")
    scale = norms ** (-params.alpha) * L(norms)
    target = a(lags / norms[:, None]) * scale[:, None, None]
    errors = np.abs(table.at(lags) - target).max(axis=(1, 2)) / scale
    report = {}
    for T in thresholds:
        mask = norms >= T
        report[T] = float(errors[mask].max()) if mask.any() else 0.0
    return report


def estimate_angular(table: CovarianceTable, params: LongRangeParams, L: SlowVarying,
                     ray_lags: Sequence, tolerance: float = 0.05, atol: float = 1e-10) -> AngularKernel:
    """
    Fit a(theta) as the mean of r(p)|p|^alpha/L(|p|) over the listed lags of
    each ray, then enforce a(-x) = a(x)^T by averaging the two estimates.
    """
    nu = table.dims.nu
    lags = np.asarray(ray_lags, dtype=int).reshape(-1, nu)
    lags = np.concatenate([lags, -lags])
    norms = np.linalg.norm(lags, axis=1)
    if np.any(norms == 0):
        raise InstabilityError("ray lags must be nonzero")
    directions = lags / norms[:, None]
    keys = [tuple(np.round(v, 9)) for v in directions]
    estimates = table.at(lags) * (norms ** params.alpha / L(norms))[:, None, None]

    groups: dict = {}
    for key, value in zip(keys, estimates):
        groups.setdefault(key, []).append(value)
    means = {}
    for key, values in groups.items():
        values = np.asarray(values)
        mean = values.mean(axis=0)
        spread = float(np.abs(values - mean).max())
        if spread > tolerance * max(float(np.abs(mean).max()), 0.0) + atol:
            raise InstabilityError(f"estimates along direction {key} vary by {spread:.3e} around {np.abs(mean).max():.3e}")
        means[key] = mean

    dirs, values = [], []
    for key, mean in means.items():
        opposite = tuple(np.round(-np.asarray(key), 9))
        dirs.append(key)
        values.append(0.5 * (mean + means[opposite].T))
    return AngularKernel(directions=np.asarray(dirs, dtype=float), values=np.asarray(values))


# ===================================
# Orthonormal reduction
# ===================================
@dataclass(frozen=True, eq=False)
class Reduction:
    rank: int
    forward: np.ndarray
    reconstruction: np.ndarray


def _pivoted_cholesky(C: np.ndarray, cutoff: float) -> tuple[np.ndarray, np.ndarray, int]:
    """P C P^T = L L^T with greedy largest-diagonal pivots (first index on ties)."""
    d = C.shape[0]
    A = C.astype(float).copy()
    perm = np.arange(d)
    Lmat = np.zeros((d, d))
    rank = 0
    for step in range(d):
        remaining = np.array([A[i, i] - Lmat[i, :step] @ Lmat[i, :step] for i in range(step, d)])
        pivot = step + int(np.argmax(remaining))
        if remaining[pivot - step] <= cutoff:
            break
        if pivot != step:
            A[[step, pivot]] = A[[pivot, step]]
            A[:, [step, pivot]] = A[:, [pivot, step]]
            Lmat[[step, pivot]] = Lmat[[pivot, step]]
            perm[[step, pivot]] = perm[[pivot, step]]
        Lmat[step, step] = math.sqrt(remaining[pivot - step])
        for i in range(step + 1, d):
            Lmat[i, step] = (A[i, step] - Lmat[i, :step] @ Lmat[step, :step]) / Lmat[step, step]
        rank += 1
    return Lmat[:, :rank], perm, rank


def orthonormal_reduction(C0) -> Reduction:
    """
    X' = c X with E X'X'^T = I_{d'} and X = D X'.

    Pivoted lower-triangular factorization; pivots below 1e-10 * trace(C0) end
    the factorization, which fixes d' = rank(C0) deterministically.
    """
    C0 = np.asarray(C0, dtype=float)
    d = C0.shape[0]
    factor, perm, rank = _pivoted_cholesky(C0, RANK_CUTOFF * max(float(np.trace(C0)), 1e-300))
    P = np.eye(d)[perm]
    lead_inv = np.linalg.inv(factor[:rank, :rank])
    forward = np.hstack([lead_inv, np.zeros((rank, d - rank))]) @ P
    reconstruction = P.T @ factor
    return Reduction(rank=rank, forward=forward, reconstruction=reconstruction)


# ===================================
# Fractional Gaussian noise reference model
# ===================================
def fgn_constants(alpha: float) -> tuple[float, float, float]:
    """(H, c_H, a) with H = 1 - alpha/2, spectral constant c_H and covariance constant a = H(2H-1)."""
    hurst = 1.0 - alpha / 2.0
    c_h = gamma_fn(2.0 * hurst + 1.0) * math.sin(math.pi * hurst) / (2.0 * math.pi)
    return hurst, c_h, hurst * (2.0 * hurst - 1.0)


def fgn_covariance_table(alpha: float, d: int, max_lag: int) -> CovarianceTable:
    """Exact fGn autocovariance in every coordinate, independent coordinates (nu = 1)."""
    hurst, _, _ = fgn_constants(alpha)
    p = np.abs(np.arange(-max_lag, max_lag + 1, dtype=float))
    rho = 0.5 * ((p + 1.0) ** (2 * hurst) - 2.0 * p ** (2 * hurst) + np.abs(p - 1.0) ** (2 * hurst))
    r = np.zeros((d, d, p.size))
    for j in range(d):
        r[j, j] = rho
    return CovarianceTable(LatticeDims(1, d), max_lag, r)


def white_noise_table(dims: LatticeDims, max_lag: int) -> CovarianceTable:
    """r(0) = I and r(p) = 0 otherwise."""
    r = np.zeros((dims.d, dims.d) + (2 * max_lag + 1,) * dims.nu)
    for j in range(dims.d):
        r[(j, j) + (max_lag,) * dims.nu] = 1.0
    return CovarianceTable(dims, max_lag, r)


def fgn_spectral_model(alpha: float, d: int, k: int = 1) -> SpectralDensityModel:
    _, c_h, _ = fgn_constants(alpha)
    return SpectralDensityModel(
        dims=LatticeDims(1, d),
        params=LongRangeParams(alpha, k),
        b=IsotropicFactor(c_h * np.eye(d)),
        h=SmoothFactor(kind="fgn", alpha=alpha),
    )


# ===================================
# Loading from configuration blocks
# ===================================
def _matrix(value, d: int) -> np.ndarray:
    if value is None:
        return np.eye(d)
    array = np.asarray(value, dtype=complex)
    return array * np.eye(d) if array.ndim == 0 else array


def build_angular_factor(block: dict, nu: int, d: int):
    kind = block.get("kind", "isotropic")
    if kind == "isotropic":
        return IsotropicFactor(_matrix(block.get("matrix"), d) * block.get("scale", 1.0))
    if kind == "axis":
        plus = _matrix(block.get("plus"), d)
        return AxisFactor(plus=plus, minus=np.conj(plus) if block.get("minus") is None else _matrix(block["minus"], d))
    if kind == "harmonic":
        return HarmonicFactor(base=_matrix(block.get("base"), d),
                              amplitude=_matrix(block.get("amplitude", 0.0), d),
                              harmonic=int(block.get("harmonic", 2)))
    raise ModelValidationError(f"unknown b.kind {kind!r}")


def build_model(block: dict) -> tuple[SpectralDensityModel, SlowVarying]:
    """Model and slowly varying factor from the `model` block of an experiment config."""
    nu, d = int(block["nu"]), int(block["d"])
    alpha, k = float(block["alpha"]), int(block["k"])
    L = SlowVarying(block.get("L", {}).get("kind", "constant"))
    if block.get("kind", "density") == "fgn":
        return fgn_spectral_model(alpha, d, k), L
    h_block = dict(block.get("h", {"kind": "bump"}))
    h = SmoothFactor(kind=h_block.get("kind", "bump"), value=float(h_block.get("value", 1.0)),
                     power=float(h_block.get("power", 2.0)), alpha=alpha)
    model = SpectralDensityModel(LatticeDims(nu, d), LongRangeParams(alpha, k),
                                 build_angular_factor(block.get("b", {}), nu, d), h)
    return model, L


def build_covariance(block: dict, model: SpectralDensityModel, max_lag: int) -> CovarianceTable:
    """
    Lattice covariance for the `model` block: exact for `fgn`, `white` and
    `covariance.method: exact`, quadrature of the spectral density otherwise.
    A `white` table keeps the block's density model for the limit side only.
    """
    source = block.get("covariance", {})
    kind = block.get("kind", "density")
    if kind == "fgn":
        return fgn_covariance_table(model.params.alpha, model.dims.d, max_lag)
    if kind == "white":
        return white_noise_table(model.dims, max_lag)
    if source.get("method") == "exact":
        return trigonometric_covariance_table(model, max_lag)
    nu = model.dims.nu
    resolution = int(source.get("grid_resolution", DEFAULT_RESOLUTION[nu]))
    while resolution < LAG_RESOLUTION * max_lag and (2 * resolution) ** nu <= MAX_GRID_CELLS:
        resolution *= 2
    if resolution < LAG_RESOLUTION * max_lag:
        logger.warning(f"⚠️ {resolution} cells per axis for lags up to {max_lag}; far lags will be under-resolved")
    return covariance_table(model, max_lag, resolution, float(source.get("tolerance", 1e-3)))
