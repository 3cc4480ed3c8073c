"""
Matrix-valued spectral measures on symmetric cell grids.

Covers the rescaled measures G^(N)(A) = N^alpha/L(N) G(A/N), the homogeneous
limit G^(0) with density h(0)|x|^(alpha-nu) b(x/|x|), the quadratic-form
measures used to show the limit is positive semidefinite, and the diagnostic
measures mu^(N) together with their lattice Fourier transform phi^(N).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from lab.exceptions import DimensionalityError, GridIncompatibilityError, PSDViolationError
from lab.services.lrd_model import (
    CovarianceTable,
    LatticeDims,
    LongRangeParams,
    SlowVarying,
    SpectralDensityModel,
    density_masses,
    symmetrize,
)
from lab.services.quadrature import CellGrid, cell_power_law_integral, fourier_coefficients, power_law_weights
from lab.services.sums import overlap_counts

logger = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-12
MU_TENSOR_CAP = 1 << 26
HOMOGENEITY_SCALES = (0.5, 2.0, 3.0, 10.0)


# ===================================
# Measures on grids
# ===================================
@dataclass(frozen=True, eq=False)
class MatrixSpectralMeasureOnGrid:
    grid: CellGrid
    mass: np.ndarray

    @property
    def d(self) -> int:
        return self.mass.shape[-1]

    @classmethod
    def from_density(cls, grid: CellGrid, density: Callable[[np.ndarray], np.ndarray]) -> "MatrixSpectralMeasureOnGrid":
        """Midpoint masses of a bounded matrix density evaluated at cell centers."""
        values = np.asarray(density(grid.centers), dtype=complex)
        return cls(grid, values * grid.volumes[:, None, None])

    def validate(self, tolerance: float = PSD_TOLERANCE, even_tolerance: float = 1e-9) -> "MatrixSpectralMeasureOnGrid":
        mass = self.mass
        scale = max(float(np.abs(mass).max(initial=0.0)), 1e-300)
        if not np.allclose(mass, np.conj(np.swapaxes(mass, -1, -2)), atol=1e-12 * scale):
            raise PSDViolationError("cell masses are not Hermitian")
        low = float(np.linalg.eigvalsh(mass).min())
        if low < -tolerance * scale:
            raise PSDViolationError(f"cell mass with eigenvalue {low:.3e}")
        mirrored = mass[self.grid.mirror_index()]
        if not np.allclose(mirrored, np.conj(mass), atol=even_tolerance * scale, rtol=even_tolerance):
            raise PSDViolationError("measure is not even: G(-cell) != conj G(cell)")
        diag = np.real(np.einsum("cjj->cj", mass))
        cross = np.abs(mass) ** 2
        bound = diag[:, :, None] * diag[:, None, :]
        if np.any(cross > bound + tolerance * scale ** 2):
            raise PSDViolationError("Cauchy–Schwarz bound violated by a cross entry")
        return self

    def total(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    def mass_of(self, lo, hi) -> np.ndarray:
        """Mass of a rectangle; cells cut by its boundary contribute in proportion to the overlap."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        overlap = np.clip(np.minimum(self.grid.upper, hi) - np.maximum(self.grid.lower, lo), 0.0, None)
        fraction = np.prod(overlap, axis=-1) / self.grid.volumes
        return np.einsum("c,cij->ij", fraction, self.mass)


@dataclass(frozen=True, eq=False)
class LimitSpectralModel:
    """G^(0) with density h0 * |x|^(alpha-nu) * b(x/|x|) on R^nu."""

    dims: LatticeDims
    params: LongRangeParams
    b: object
    h0: float

    @classmethod
    def from_density_model(cls, model: SpectralDensityModel) -> "LimitSpectralModel":
        return cls(model.dims, model.params, model.b, model.h0)

    def density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        radius = np.linalg.norm(x, axis=-1)
        b = np.asarray(self.b(x / radius[:, None]))
        return self.h0 * radius[:, None, None] ** (self.params.alpha - self.dims.nu) * b


# ===================================
# Rescaling and limits
# ===================================
def rescale_measure(G: MatrixSpectralMeasureOnGrid, N: int, L: SlowVarying, alpha: float,
                    target: CellGrid | None = None) -> MatrixSpectralMeasureOnGrid:
    """G^(N)(cell) = N^alpha / L(N) * G(cell / N), on N * grid or an aggregating target grid."""
    factor = N ** alpha / float(L(N))
    scaled = G.grid.scaled(N)
    mass = G.mass * factor
    if target is None:
        return MatrixSpectralMeasureOnGrid(scaled, mass).validate()

    if target.nu != scaled.nu:
        raise GridIncompatibilityError("target grid has a different lattice dimension")
    axis_maps = []
    for src, dst in zip(scaled.edges, target.edges):
        pos = np.searchsorted(src, dst)
        pos = np.clip(pos, 0, src.size - 1)
        near = np.where(np.abs(src[pos] - dst) <= 1e-9 * max(1.0, abs(src[-1])), pos, -1)
        alt = np.clip(pos - 1, 0, src.size - 1)
        near = np.where((near < 0) & (np.abs(src[alt] - dst) <= 1e-9 * max(1.0, abs(src[-1]))), alt, near)
        if np.any(near < 0):
            raise GridIncompatibilityError("target cell edges do not align with rescaled source edges")
        axis_maps.append(np.searchsorted(near, np.arange(src.size - 1), side="right") - 1)

    src_shape = scaled.shape
    block = mass.reshape(src_shape + mass.shape[-2:])
    for axis, owner in enumerate(axis_maps):
        cells_out = target.shape[axis]
        inside = (owner >= 0) & (owner < cells_out)
        moved = np.moveaxis(block, axis, 0)
        summed = np.zeros((cells_out,) + moved.shape[1:], dtype=complex)
        np.add.at(summed, owner[inside], moved[inside])
        block = np.moveaxis(summed, 0, axis)
    return MatrixSpectralMeasureOnGrid(target, block.reshape((target.size,) + mass.shape[-2:])).validate()


def density_measure(model: SpectralDensityModel, grid: CellGrid, scale: float = 1.0,
                    L: SlowVarying | None = None) -> MatrixSpectralMeasureOnGrid:
    """
    G^(N) built directly on a grid of [-N*pi, N*pi)^nu:
    G^(N)(cell) = L(N)^-1 ∫_cell |x|^(alpha-nu) b h(x/N) dx, with N = scale.
    """
    L = L or SlowVarying()
    mass = density_masses(model, grid, scale) / float(L(scale))
    return MatrixSpectralMeasureOnGrid(grid, mass).validate()


def limit_grid_measure(model: LimitSpectralModel, grid: CellGrid) -> MatrixSpectralMeasureOnGrid:
    return MatrixSpectralMeasureOnGrid(grid, model.h0 * power_law_weights(grid, model.params.alpha, model.b)).validate()


def limit_cell_mass(model: LimitSpectralModel, lo, hi) -> np.ndarray:
    """G^(0)(cell) with the exact radial rule; adaptive in the angle (nu = 2)."""
    return model.h0 * cell_power_law_integral(model.params.alpha, model.dims.nu, model.b, lo, hi)


def homogeneity_residual(model: LimitSpectralModel, lo, hi, t: float) -> float:
    """max_{j,j'} |G^(0)(A) - t^-alpha G^(0)(tA)|."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    base = limit_cell_mass(model, lo, hi)
    stretched = limit_cell_mass(model, t * lo, t * hi)
    return float(np.abs(base - t ** (-model.params.alpha) * stretched).max())


def quadratic_form_measures(G: MatrixSpectralMeasureOnGrid, j: int, jp: int,
                            tolerance: float = PSD_TOLERANCE) -> tuple[np.ndarray, np.ndarray]:
    """
    R = (1,1) G_{[j,j']} (1,1)^*  and  S = (1,i) G_{[j,j']} (1,i)^* on every cell.
    """
    if j == jp:
        raise ValueError("quadratic-form measures need two distinct coordinates")
    m = G.mass
    gjj, gpp, gjp, gpj = m[:, j, j], m[:, jp, jp], m[:, j, jp], m[:, jp, j]
    R = gjj + gpp + gjp + gpj
    S = gjj + gpp - 1j * (gjp - gpj)
    scale = max(float(np.abs(m).max(initial=0.0)), 1.0)
    for name, values in (("R", R), ("S", S)):
        if np.abs(values.imag).max(initial=0.0) > 1e-9 * scale or values.real.min(initial=0.0) < -tolerance * scale:
            raise PSDViolationError(f"quadratic-form measure {name} is negative or complex on some cell")
    return np.clip(R.real, 0.0, None), np.clip(S.real, 0.0, None)


def covariance_from_measure(G: MatrixSpectralMeasureOnGrid, max_lag: int) -> CovarianceTable:
    """r(p) = Σ_cells exp(i(p, x_cell)) G(cell), real part after symmetrization."""
    coeffs = fourier_coefficients(G.grid, G.mass, max_lag)
    residue = float(np.abs(coeffs.imag).max())
    if residue > 1e-8:
        logger.warning(f"⚠️ imaginary residue {residue:.2e} in covariance of grid measure")
    dims = LatticeDims(G.grid.nu, G.d)
    return CovarianceTable(dims, max_lag, symmetrize(coeffs.real, G.grid.nu))


# ===================================
# Vague convergence: test functions
# ===================================
@dataclass(frozen=True, eq=False)
class Bump:
    """Tensor-product C-infinity bump with peak 1 and support center ± width."""

    center: np.ndarray
    width: float

    def __call__(self, x) -> np.ndarray:
        s = (np.atleast_2d(x) - np.asarray(self.center, dtype=float)) / self.width
        inside = np.abs(s) < 1.0
        safe = np.where(inside, s, 0.0)
        values = np.where(inside, np.exp(1.0 - 1.0 / (1.0 - safe ** 2)), 0.0)
        return np.prod(values, axis=-1)


def bump_battery(nu: int) -> list[Bump]:
    centers = [0.5, -1.0, 2.0, 0.0]
    widths = [0.5, 0.75, 1.0, 1.5]
    return [Bump(center=np.full(nu, c), width=w) for c, w in zip(centers, widths)]


def test_function_integral(G: MatrixSpectralMeasureOnGrid, f: Callable) -> np.ndarray:
    """∫ f dG as a d x d matrix (midpoint in f)."""
    return np.einsum("c,cij->ij", f(G.grid.centers), G.mass)


# ===================================
# mu^(N) and phi^(N)
# ===================================
def _product_setup(G_N: MatrixSpectralMeasureOnGrid, indices: Sequence[int], h_kernel: Callable):
    k = len(indices)
    nu = G_N.grid.nu
    if k * nu > 3:
        raise DimensionalityError(f"product quadrature needs k*nu <= 3, got k={k}, nu={nu}")
    n = G_N.grid.size
    if n ** k > MU_TENSOR_CAP:
        raise DimensionalityError(f"{n}^{k} quadrature nodes exceed the cap {MU_TENSOR_CAP}")
    centers = G_N.grid.centers
    args = [centers.reshape((1,) * s + (n,) + (1,) * (k - s - 1) + (nu,)) for s in range(k)]
    weights = [np.real(G_N.mass[:, j, j]) for j in indices]
    kernel = np.abs(h_kernel(*args)) ** 2
    return kernel, weights, centers


def _contract(tensor: np.ndarray, vectors: Sequence[np.ndarray]) -> complex:
    for v in vectors:
        tensor = np.tensordot(v, tensor, axes=([0], [0]))
    return complex(tensor)


def mu_N_total(h_kernel: Callable, G_N: MatrixSpectralMeasureOnGrid, indices: Sequence[int]) -> float:
    kernel, weights, _ = _product_setup(G_N, indices, h_kernel)
    return _contract(kernel, weights).real


def mu_N_tail_mass(h_kernel: Callable, G_N: MatrixSpectralMeasureOnGrid, indices: Sequence[int], T: float) -> float:
    """mu^(N)(R^{k nu} minus [-T, T]^{k nu}) by midpoint quadrature on the product grid."""
    kernel, weights, centers = _product_setup(G_N, indices, h_kernel)
    inside = np.all(np.abs(centers) <= T, axis=-1)
    total = _contract(kernel, weights).real
    inner = _contract(kernel, [w * inside for w in weights]).real
    return max(total - inner, 0.0)


def mu_N_fourier(h_kernel: Callable, G_N: MatrixSpectralMeasureOnGrid, indices: Sequence[int], t_points) -> np.ndarray:
    """∫ exp(i Σ_l (t_l, x_l)) mu^(N)(dx) at each point t = (t_1..t_k), t_points shape (P, k, nu)."""
    kernel, weights, centers = _product_setup(G_N, indices, h_kernel)
    t_points = np.asarray(t_points, dtype=float)
    out = np.empty(t_points.shape[0], dtype=complex)
    for idx, point in enumerate(t_points):
        factors = [w * np.exp(1j * centers @ point[s]) for s, w in enumerate(weights)]
        out[idx] = _contract(kernel, factors)
    return out


def phi_N_lattice(cov: CovarianceTable, indices: Sequence[int], lattice_args, N: int, alpha: float,
                  L: SlowVarying | None = None) -> complex:
    """
    N^-(2nu - k alpha) L(N)^-k Σ_{u,v in B_N} Π_l r_{j_l,j_l}(u - v + p_l),
    grouped on y = u - v with Π_l (N - |y_l|) pairs per lag.
    """
    L = L or SlowVarying()
    nu = cov.dims.nu
    k = len(indices)
    p = np.asarray(lattice_args, dtype=int).reshape(k, nu)
    counts, lags = overlap_counts([N] * nu, [N] * nu)
    product = counts.astype(float)
    for j, shift in zip(indices, p):
        product = product * cov.entry(j, j, lags + shift)
    norm = float(N) ** (-(2 * nu - k * alpha)) * float(L(N)) ** (-k)
    return complex(norm * product.sum())
