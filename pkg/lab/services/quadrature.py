"""
Cell grids and the singular power-law quadrature shared by the covariance
and spectral-measure modules.

Every integral of the form  ∫_cell |x|^(alpha-nu) b(x/|x|) dx  goes through
this module.  For nu = 1 the radial part is integrated in closed form on each
side of the origin; for nu = 2 cells whose closure touches the origin use the
polar form (radial part exact, angular part adaptive), every other cell uses
tensor Gauss–Legendre nodes or nested adaptive quadrature.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad_vec

from lab.exceptions import DimensionalityError, QuadratureError

logger = logging.getLogger(__name__)

# b(theta): (m, nu) unit vectors -> (m, d, d) complex matrices
AngularFn = Callable[[np.ndarray], np.ndarray]

SUPPORTED_QUADRATURE_DIMS = (1, 2)
_CELL_CHUNK = 16384


# ===================================
# Cell grid
# ===================================
@dataclass(frozen=True, eq=False)
class CellGrid:
    """
    Product of half-open cells given by per-axis edges.

    Edges must be symmetric (edges == -edges[::-1]) so that the cell set is
    closed under x -> -x.  Cells are enumerated row-major; with symmetric edges
    the negation of flat cell i is flat cell size-1-i.
    """

    edges: tuple = field()

    def __post_init__(self):
        edges = tuple(np.asarray(e, dtype=float) for e in self.edges)
        for e in edges:
            if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("cell edges must be strictly increasing with at least two entries")
            if not np.allclose(e, -e[::-1], rtol=0.0, atol=1e-12 * max(1.0, abs(e[-1]))):
                raise ValueError("cell edges must be symmetric under negation")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def uniform(cls, half_width: float, cells: int, nu: int = 1) -> "CellGrid":
        if cells < 2 or cells % 2:
            raise ValueError("a symmetric uniform grid needs an even number of cells")
        axis = np.linspace(-half_width, half_width, cells + 1)
        return cls(edges=tuple(axis for _ in range(nu)))

    @classmethod
    def torus(cls, cells: int, nu: int = 1) -> "CellGrid":
        return cls.uniform(np.pi, cells, nu)

    # ---------- shape ----------
    @property
    def nu(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple:
        return tuple(e.size - 1 for e in self.edges)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def half_widths(self) -> np.ndarray:
        return np.array([e[-1] for e in self.edges])

    @property
    def is_uniform(self) -> bool:
        return all(np.allclose(np.diff(e), e[1] - e[0]) for e in self.edges)

    @property
    def is_torus(self) -> bool:
        return self.is_uniform and np.allclose(self.half_widths, np.pi)

    # ---------- per-cell geometry ----------
    def _axis_product(self, per_axis: Sequence[np.ndarray]) -> np.ndarray:
        mesh = np.meshgrid(*per_axis, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def lower(self) -> np.ndarray:
        return self._axis_product([e[:-1] for e in self.edges])

    @property
    def upper(self) -> np.ndarray:
        return self._axis_product([e[1:] for e in self.edges])

    @property
    def centers(self) -> np.ndarray:
        return self._axis_product([0.5 * (e[:-1] + e[1:]) for e in self.edges])

    @property
    def volumes(self) -> np.ndarray:
        widths = np.meshgrid(*[np.diff(e) for e in self.edges], indexing="ij")
        return np.prod(np.stack([w.ravel() for w in widths], axis=-1), axis=-1)

    def mirror_index(self) -> np.ndarray:
        return self.size - 1 - np.arange(self.size)

    def touches_origin(self) -> np.ndarray:
        """Cells whose closure contains the origin."""
        return np.all((self.lower <= 0.0) & (self.upper >= 0.0), axis=-1)

    def origin_cell(self) -> int | None:
        """Index of the (unique) half-open cell containing the origin."""
        inside = np.all((self.lower <= 0.0) & (self.upper > 0.0), axis=-1)
        hits = np.flatnonzero(inside)
        return int(hits[0]) if hits.size else None

    def scaled(self, factor: float) -> "CellGrid":
        return CellGrid(edges=tuple(factor * e for e in self.edges))


# ===================================
# Power-law cell weights
# ===================================
def _check_dims(nu: int):
    if nu not in SUPPORTED_QUADRATURE_DIMS:
        raise DimensionalityError(f"quadrature supports nu in {SUPPORTED_QUADRATURE_DIMS}, got nu={nu}")


def _axis_values(angular: AngularFn) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(angular(np.array([[1.0], [-1.0]])), dtype=complex)
    return values[0], values[1]


def _radial_1d(lo: np.ndarray, hi: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ∫|x|^(alpha-1) over the positive and negative parts of [lo, hi)."""
    pos = (np.maximum(hi, 0.0) ** alpha - np.maximum(lo, 0.0) ** alpha) / alpha
    neg = (np.maximum(-lo, 0.0) ** alpha - np.maximum(-hi, 0.0) ** alpha) / alpha
    return pos, neg


def _stacked(matrix: np.ndarray) -> np.ndarray:
    return np.concatenate([matrix.real.ravel(), matrix.imag.ravel()])


def _unstack(vector: np.ndarray, d: int) -> np.ndarray:
    half = d * d
    return (vector[:half] + 1j * vector[half:]).reshape(d, d)


def _adaptive(fn, a: float, b: float, epsabs: float, epsrel: float) -> np.ndarray:
    value, _err, info = quad_vec(fn, a, b, epsabs=epsabs, epsrel=epsrel, full_output=True)
    if not info.success:
        raise QuadratureError(f"adaptive quadrature failed on [{a}, {b}]: {info.message}")
    return value


def _polar_corner(angular: AngularFn, alpha: float, sx: float, sy: float, X: float, Y: float,
                  d: int, epsabs: float, epsrel: float) -> np.ndarray:
    """∫ over [0,X]x[0,Y] reflected by (sx, sy) of |x|^(alpha-2) b(x/|x|) dx, polar form."""
    if X <= 0.0 or Y <= 0.0:
        return np.zeros((d, d), dtype=complex)

    def integrand(psi):
        theta = np.array([[sx * np.cos(psi), sy * np.sin(psi)]])
        radius = min(X / max(np.cos(psi), 1e-300), Y / max(np.sin(psi), 1e-300))
        return _stacked(np.asarray(angular(theta))[0] * radius ** alpha / alpha)

    kink = float(np.arctan2(Y, X))
    total = _adaptive(integrand, 0.0, kink, epsabs, epsrel) + _adaptive(integrand, kink, np.pi / 2, epsabs, epsrel)
    return _unstack(total, d)


def _origin_rectangle_2d(angular: AngularFn, alpha: float, lo, hi, d: int, epsabs: float, epsrel: float) -> np.ndarray:
    total = np.zeros((d, d), dtype=complex)
    for sx, X in ((1.0, hi[0]), (-1.0, -lo[0])):
        for sy, Y in ((1.0, hi[1]), (-1.0, -lo[1])):
            total += _polar_corner(angular, alpha, sx, sy, X, Y, d, epsabs, epsrel)
    return total


def _plain_rectangle_2d(angular: AngularFn, alpha: float, lo, hi, d: int, epsabs: float, epsrel: float) -> np.ndarray:
    def density(x1, x2):
        radius = np.hypot(x1, x2)
        theta = np.array([[x1 / radius, x2 / radius]])
        return _stacked(np.asarray(angular(theta))[0] * radius ** (alpha - 2.0))

    def inner(x1):
        return _adaptive(lambda x2: density(x1, x2), lo[1], hi[1], epsabs, epsrel)

    return _unstack(_adaptive(inner, lo[0], hi[0], epsabs, epsrel), d)


def cell_power_law_integral(alpha: float, nu: int, angular: AngularFn, lo, hi,
                            epsabs: float = 1e-14, epsrel: float = 1e-11) -> np.ndarray:
    """
    ∫_[lo,hi) |x|^(alpha-nu) b(x/|x|) dx for one bounded rectangle.

    Exact for nu = 1.  For nu = 2 the rectangle is split at the coordinate axes
    when it touches the origin and each corner piece is integrated in polar
    form; other rectangles use nested adaptive quadrature.
    """
    _check_dims(nu)
    lo = np.asarray(lo, dtype=float).reshape(nu)
    hi = np.asarray(hi, dtype=float).reshape(nu)
    if nu == 1:
        plus, minus = _axis_values(angular)
        pos, neg = _radial_1d(lo, hi, alpha)
        return pos[0] * plus + neg[0] * minus
    d = np.asarray(angular(np.array([[1.0, 0.0]]))).shape[-1]
    if np.all((lo <= 0.0) & (hi >= 0.0)):
        return _origin_rectangle_2d(angular, alpha, lo, hi, d, epsabs, epsrel)
    return _plain_rectangle_2d(angular, alpha, lo, hi, d, epsabs, epsrel)


def power_law_weights(grid: CellGrid, alpha: float, angular: AngularFn, order: int = 4) -> np.ndarray:
    """Per-cell ∫ |x|^(alpha-nu) b(x/|x|) dx for every cell of the grid, shape (size, d, d)."""
    _check_dims(grid.nu)
    lo, hi = grid.lower, grid.upper
    if grid.nu == 1:
        plus, minus = _axis_values(angular)
        pos, neg = _radial_1d(lo[:, 0], hi[:, 0], alpha)
        return pos[:, None, None] * plus + neg[:, None, None] * minus

    d = np.asarray(angular(np.array([[1.0, 0.0]]))).shape[-1]
    weights = np.zeros((grid.size, d, d), dtype=complex)
    near = grid.touches_origin()
    for idx in np.flatnonzero(near):
        weights[idx] = _origin_rectangle_2d(angular, alpha, lo[idx], hi[idx], d, 1e-14, 1e-10)

    nodes, node_w = leggauss(order)
    u1, u2 = np.meshgrid(nodes, nodes, indexing="ij")
    w12 = np.outer(node_w, node_w).ravel() / 4.0
    offsets = np.stack([u1.ravel(), u2.ravel()], axis=-1)
    far = np.flatnonzero(~near)
    for start in range(0, far.size, _CELL_CHUNK):
        cells = far[start:start + _CELL_CHUNK]
        mid = 0.5 * (lo[cells] + hi[cells])
        half = 0.5 * (hi[cells] - lo[cells])
        points = mid[:, None, :] + half[:, None, :] * offsets[None, :, :]
        radius = np.linalg.norm(points, axis=-1)
        theta = (points / radius[..., None]).reshape(-1, 2)
        b = np.asarray(angular(theta)).reshape(cells.size, offsets.shape[0], d, d)
        vol = np.prod(hi[cells] - lo[cells], axis=-1)
        radial = radius ** (alpha - 2.0) * w12[None, :]
        weights[cells] = np.einsum("cq,cqij->cij", radial, b) * vol[:, None, None]
    return weights


# ===================================
# Fourier coefficients of a grid measure
# ===================================
def lag_box(max_lag: int, nu: int) -> np.ndarray:
    """All lags of the box [-max_lag, max_lag]^nu, row-major, shape (count, nu)."""
    axis = np.arange(-max_lag, max_lag + 1)
    mesh = np.meshgrid(*([axis] * nu), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def fourier_coefficients(grid: CellGrid, masses: np.ndarray, max_lag: int) -> np.ndarray:
    """
    Σ_cells exp(i(p, x_cell)) masses[cell] for every lag p of the box.

    Returns a complex array of shape (d, d) + (2*max_lag+1,)*nu.  Torus grids
    use an inverse FFT (exactly periodic in p); other grids are summed directly.
    """
    nu = grid.nu
    d = masses.shape[-1]
    span = 2 * max_lag + 1
    if grid.is_torus:
        cells = grid.shape
        spectral = np.moveaxis(masses.reshape(cells + (d, d)), (-2, -1), (0, 1))
        coeffs = np.fft.ifftn(spectral, axes=tuple(range(2, 2 + nu))) * grid.size
        lags = np.arange(-max_lag, max_lag + 1)
        for axis, m in enumerate(cells):
            coeffs = np.take(coeffs, lags % m, axis=2 + axis)
            width = 2.0 * np.pi / m
            phase = np.exp(1j * lags * (-np.pi + 0.5 * width))
            shape = [1] * (2 + nu)
            shape[2 + axis] = span
            coeffs = coeffs * phase.reshape(shape)
        return coeffs

    lags = lag_box(max_lag, nu).astype(float)
    out = np.zeros((lags.shape[0], d, d), dtype=complex)
    centers = grid.centers
    for start in range(0, grid.size, _CELL_CHUNK):
        sl = slice(start, start + _CELL_CHUNK)
        phases = np.exp(1j * lags @ centers[sl].T)
        out += np.einsum("pc,cij->pij", phases, masses[sl])
    return np.moveaxis(out, 0, -1).reshape((d, d) + (span,) * nu)
