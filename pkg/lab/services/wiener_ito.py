"""
Discretized multiple Wiener–Itô integrals against the limit spectral measure.

The box [-T, T)^nu is cut into M^nu equal cells.  Cells come in ±pairs; one
member of every pair is a representative, its increment is Q(cell) ζ with
Q the Hermitian square root of G(cell), and the mirror cell receives the
complex conjugate.  The 2^nu cells touching the origin carry no increment.
A k-fold integral sums kernel(centers) Π Z_{j_s}(cell_s) over k-tuples of
cells belonging to pairwise different ±pairs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from lab.exceptions import (
    DimensionalityError,
    DimensionMismatchError,
    ImaginaryResidueError,
    KernelDomainError,
    PSDViolationError,
)
from lab.services.hermite import HermiteExpansion, index_maps
from lab.services.quadrature import CellGrid
from lab.services.spectral_measure import LimitSpectralModel, MatrixSpectralMeasureOnGrid, limit_grid_measure
from lab.utils import rng_stream

logger = logging.getLogger(__name__)

KERNEL_KINDS = ("f0", "f0_t", "fN", "fN_t", "hN", "custom")
TENSOR_CAP = 1 << 24
_REPLICATE_BATCH = 64


# ===================================
# Kernels
# ===================================
@dataclass(frozen=True, eq=False)
class KernelSpec:
    """
    f0    c Π_l (e^{i S_l} - 1) / (i S_l)
    f0_t  c Π_l (e^{i t_l S_l} - 1) / (i S_l)
    fN    c Π_l (e^{i S_l} - 1) / (N (e^{i S_l/N} - 1))        on [-N pi, N pi)^nu
    fN_t  c Π_l (e^{i m_l S_l/N} - 1) / (N (e^{i S_l/N} - 1))  m_l = #{0 <= p < N t_l}
    hN    fN with c = 1
    with S_l = x_1^(l) + ... + x_k^(l).
    """

    kind: str
    k: int
    nu: int = 1
    c: float = 1.0
    t: tuple | None = None
    N: int | None = None
    fn: Callable | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind in ("fN", "fN_t", "hN") and not self.N:
            raise ValueError(f"kernel {self.kind} needs N")
        if self.kind in ("f0_t", "fN_t"):
            if self.t is None or len(self.t) != self.nu:
                raise DimensionMismatchError(f"kernel {self.kind} needs a t-vector with {self.nu} components")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("a custom kernel needs fn")

    def __call__(self, *xs) -> np.ndarray:
        return kernel_eval(self, *xs)


def _continuum_factor(s: np.ndarray, t: float) -> np.ndarray:
    """(e^{its} - 1)/(is) = t e^{its/2} sinc(ts/2pi), equal to t at s = 0."""
    ts = t * s
    return t * np.exp(0.5j * ts) * np.sinc(ts / (2.0 * np.pi))


def _lattice_factor(s: np.ndarray, N: int, m: int) -> np.ndarray:
    """(1/N) Σ_{u<m} e^{ius/N} = (e^{ims/N} - 1)/(N(e^{is/N} - 1))."""
    if m == 0:
        return np.zeros_like(s, dtype=complex)
    denominator = np.sinc(s / (2.0 * np.pi * N))
    safe = np.abs(denominator) > 1e-8
    value = np.empty(s.shape, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (m / N) * np.sinc(m * s / (2.0 * np.pi * N)) / np.where(safe, denominator, 1.0)
    value[...] = np.exp(0.5j * s * (m - 1) / N) * ratio
    if not np.all(safe):
        u = np.arange(m)
        hits = s[~safe]
        value[~safe] = np.exp(1j * np.multiply.outer(hits, u) / N).sum(axis=-1) / N
    return value


def kernel_eval(spec: KernelSpec, *xs) -> np.ndarray:
    """Kernel at broadcastable points x_1..x_k, each of shape (..., nu)."""
    if len(xs) != spec.k:
        raise DimensionMismatchError(f"kernel of arity {spec.k} called with {len(xs)} arguments")
    xs = [np.asarray(x, dtype=float) for x in xs]
    if any(x.shape[-1] != spec.nu for x in xs):
        raise DimensionMismatchError(f"kernel arguments must have {spec.nu} components")
    if spec.kind == "custom":
        return np.asarray(spec.fn(*xs), dtype=complex)
    if spec.kind in ("fN", "fN_t", "hN"):
        bound = spec.N * np.pi
        for x in xs:
            if np.any(x < -bound) or np.any(x >= bound):
                raise KernelDomainError(f"{spec.kind} is defined on [-{spec.N}pi, {spec.N}pi)^nu only")

    total = xs[0]
    for x in xs[1:]:
        total = total + x
    out = np.ones(total.shape[:-1], dtype=complex)
    for l in range(spec.nu):
        s = total[..., l]
        if spec.kind == "f0":
            out = out * _continuum_factor(s, 1.0)
        elif spec.kind == "f0_t":
            out = out * _continuum_factor(s, float(spec.t[l]))
        elif spec.kind in ("fN", "hN"):
            out = out * _lattice_factor(s, spec.N, spec.N)
        else:
            m = int(math.ceil(spec.N * float(spec.t[l]) - 1e-9 * max(1.0, spec.N * float(spec.t[l]))))
            out = out * _lattice_factor(s, spec.N, max(m, 0))
    coefficient = 1.0 if spec.kind == "hN" else spec.c
    return coefficient * out


def kernel_convergence_sup(N: int, T: float, grid: int, k: int = 2, nu: int = 1, c: float = 1.0) -> float:
    """max over a uniform grid of [-T, T]^{k nu} of |f^N - f^0|."""
    if T >= N * np.pi:
        raise KernelDomainError(f"T={T} leaves the torus [-{N}pi, {N}pi)")
    axis = np.linspace(-T, T, grid)
    mesh = np.meshgrid(*([axis] * (k * nu)), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1).reshape(-1, k, nu)
    xs = [points[:, s, :] for s in range(k)]
    fN = kernel_eval(KernelSpec("fN", k, nu, c=c, N=N), *xs)
    f0 = kernel_eval(KernelSpec("f0", k, nu, c=c), *xs)
    return float(np.abs(fN - f0).max())


def kernel_identity_residual(k: int, nu: int, u: float, t, points: np.ndarray) -> float:
    """max |f_{ut}(x) - u^nu f_t(ux)| over points of shape (P, k, nu)."""
    t = tuple(float(v) for v in np.atleast_1d(t))
    ut = tuple(u * v for v in t)
    xs = [points[:, s, :] for s in range(k)]
    lhs = kernel_eval(KernelSpec("f0_t", k, nu, t=ut), *xs)
    rhs = u ** nu * kernel_eval(KernelSpec("f0_t", k, nu, t=t), *[u * x for x in xs])
    return float(np.abs(lhs - rhs).max())


# ===================================
# Partition and increments
# ===================================
@dataclass(frozen=True, eq=False)
class SymmetricPartition:
    T: float
    M: int
    nu: int = 1
    grid: CellGrid = field(init=False)

    def __post_init__(self):
        if self.M < 2 or self.M % 2:
            raise ValueError("cells per axis must be even and >= 2")
        object.__setattr__(self, "grid", CellGrid.uniform(self.T, self.M, self.nu))

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def width(self) -> float:
        return 2.0 * self.T / self.M

    def mirror(self) -> np.ndarray:
        return self.grid.mirror_index()

    def excluded(self) -> np.ndarray:
        return self.grid.touches_origin()

    def representatives(self) -> np.ndarray:
        idx = np.arange(self.size)
        return idx[(idx > self.mirror()) & ~self.excluded()]

    def active(self) -> np.ndarray:
        """Cells carrying an increment, representatives first then their mirrors."""
        reps = self.representatives()
        return np.concatenate([reps, self.mirror()[reps]])

    def pair_ids(self) -> np.ndarray:
        return np.minimum(np.arange(self.size), self.mirror())

    def refined(self) -> "SymmetricPartition":
        """Doubled truncation and doubled cell count (same cell width)."""
        return SymmetricPartition(2.0 * self.T, 2 * self.M, self.nu)


@dataclass(frozen=True, eq=False)
class SpectralIncrementSample:
    """Z[j, cell] for every cell of the partition; excluded cells hold 0."""

    partition: SymmetricPartition
    Z: np.ndarray
    seed: int = 0
    replicate: int = 0

    def mirror_residual(self) -> float:
        return float(np.abs(self.Z[:, self.partition.mirror()] - np.conj(self.Z)).max())


def cell_roots(measure: MatrixSpectralMeasureOnGrid, cells: np.ndarray, tolerance: float = 1e-12) -> np.ndarray:
    """Hermitian PSD square roots of G(cell) for the listed cells, shape (m, d, d)."""
    mass = measure.mass[cells]
    mass = 0.5 * (mass + np.conj(np.swapaxes(mass, -1, -2)))
    values, vectors = np.linalg.eigh(mass)
    scale = max(float(np.abs(values).max(initial=0.0)), 1e-300)
    if values.min(initial=0.0) < -tolerance * scale:
        raise PSDViolationError(f"cell mass with eigenvalue {values.min():.3e}")
    root = np.sqrt(np.clip(values, 0.0, None))
    return (vectors * root[..., None, :]) @ np.conj(np.swapaxes(vectors, -1, -2))


def _draw_increments(roots: np.ndarray, partition: SymmetricPartition, seed: int, replicates: Sequence[int]) -> np.ndarray:
    """(R, d, size) increments; each replicate from its own (seed, replicate, 'increments') stream."""
    reps = partition.representatives()
    mirror = partition.mirror()
    d = roots.shape[-1]
    out = np.zeros((len(replicates), d, partition.size), dtype=complex)
    for idx, rep in enumerate(replicates):
        rng = rng_stream(seed, rep, "increments")
        zeta = (rng.standard_normal((reps.size, d)) + 1j * rng.standard_normal((reps.size, d))) / math.sqrt(2.0)
        values = np.einsum("cij,cj->ic", roots, zeta)
        out[idx][:, reps] = values
        out[idx][:, mirror[reps]] = np.conj(values)
    return out


def sample_increments(measure: MatrixSpectralMeasureOnGrid, partition: SymmetricPartition,
                      seed: int, replicate: int) -> SpectralIncrementSample:
    roots = cell_roots(measure, partition.representatives())
    Z = _draw_increments(roots, partition, seed, [replicate])[0]
    return SpectralIncrementSample(partition, Z, seed, replicate)


# ===================================
# Off-diagonal multiple sums
# ===================================
def kernel_tensor(kernel: KernelSpec, partition: SymmetricPartition, cells: np.ndarray | None = None) -> np.ndarray:
    """kernel(centers) on k-tuples of cells, zeroed where two cells share a ±pair."""
    cells = partition.active() if cells is None else cells
    k = kernel.k
    n = cells.size
    if n ** k > TENSOR_CAP:
        raise DimensionalityError(f"{n}^{k} kernel entries exceed the cap {TENSOR_CAP}")
    centers = partition.grid.centers[cells]
    args = [centers.reshape((1,) * s + (n,) + (1,) * (k - s - 1) + (partition.nu,)) for s in range(k)]
    tensor = np.asarray(kernel_eval(kernel, *args), dtype=complex) * np.ones((n,) * k)
    pairs = partition.pair_ids()[cells]
    for a in range(k):
        for b in range(a + 1, k):
            shape_a = [1] * k
            shape_b = [1] * k
            shape_a[a] = n
            shape_b[b] = n
            clash = pairs.reshape(shape_a) == pairs.reshape(shape_b)
            tensor = np.where(clash, 0.0, tensor)
    return tensor


def contract(tensor: np.ndarray, Z: np.ndarray, j_sequence: Sequence[int]) -> np.ndarray:
    """Σ tensor[m_1..m_k] Π_s Z[r, j_s, m_s] for every replicate r; Z has shape (R, d, n)."""
    k = tensor.ndim
    acc = np.tensordot(Z[:, j_sequence[-1], :], tensor, axes=([1], [k - 1]))
    for s in range(k - 2, -1, -1):
        acc = np.einsum("r...m,rm->r...", acc, Z[:, j_sequence[s], :])
    return acc


def check_real(values: np.ndarray, what: str = "multiple integral") -> np.ndarray:
    values = np.asarray(values)
    residue = np.abs(values.imag)
    limit = 1e-6 * np.abs(values.real) + 1e-10
    if np.any(residue > limit):
        worst = float(residue.max())
        raise ImaginaryResidueError(f"{what} kept an imaginary part of {worst:.3e}")
    return values.real


def multiple_integral(kernel: KernelSpec, increments: SpectralIncrementSample, j_sequence: Sequence[int],
                      require_real: bool = True):
    """Off-diagonal k-fold sum of kernel(centers) Π Z_{j_s}(cell_s) for one increment sample."""
    j_sequence = list(j_sequence)
    if len(j_sequence) != kernel.k:
        raise DimensionMismatchError(f"j-sequence of length {len(j_sequence)} for a kernel of arity {kernel.k}")
    partition = increments.partition
    cells = partition.active()
    tensor = kernel_tensor(kernel, partition, cells)
    value = contract(tensor, increments.Z[None][:, :, cells], j_sequence)[0]
    if require_real:
        return float(check_real(np.asarray([value]))[0])
    return complex(value)


# ===================================
# Limit law sampler
# ===================================
class LimitLawSampler:
    """
    Draws S_0(t) = Σ_{multi-indices} c ∫ f_t Π Z_{j(s)} for batches of
    replicates.  Partition masses, square roots and kernel tensors are
    computed once; every replicate uses one increment sample shared by all
    multi-indices and all t.
    """

    def __init__(self, H: HermiteExpansion, limit_model: LimitSpectralModel, partition: SymmetricPartition, seed: int):
        if H.d != limit_model.dims.d:
            raise DimensionMismatchError(f"expansion has d={H.d}, limit model has d={limit_model.dims.d}")
        if partition.nu != limit_model.dims.nu:
            raise DimensionMismatchError("partition and model have different lattice dimensions")
        self.H = H
        self.model = limit_model
        self.partition = partition
        self.seed = int(seed)
        self.measure = limit_grid_measure(limit_model, partition.grid)
        self.cells = partition.active()
        self.roots = cell_roots(self.measure, partition.representatives())
        maps = index_maps(H.k, H.d)
        self.terms = [(c, maps.sequence(index)) for index, c in H.items() if c != 0.0]
        self._tensors: dict = {}
        logger.info(
            f"limit sampler: T={partition.T}, M={partition.M}, active cells={self.cells.size}, terms={len(self.terms)}"
        )

    def _tensor(self, t) -> np.ndarray:
        key = tuple(float(v) for v in t)
        if key not in self._tensors:
            width = self.partition.width
            if max(abs(v) for v in key) * width > np.pi / 2:
                logger.warning(f"⚠️ t={key} oscillates faster than the partition resolves (cell width {width:.3g})")
            kernel = KernelSpec("f0_t", self.H.k, self.partition.nu, t=key)
            self._tensors[key] = kernel_tensor(kernel, self.partition, self.cells)
        return self._tensors[key]

    def increments(self, replicates: Sequence[int]) -> np.ndarray:
        return _draw_increments(self.roots, self.partition, self.seed, list(replicates))

    def sample(self, replicates: Sequence[int], t_list: Sequence | None = None) -> np.ndarray:
        """(R, K) array of S_0(t_1..t_K); default t = (1, ..., 1)."""
        replicates = list(replicates)
        t_list = list(t_list) if t_list else [np.ones(self.partition.nu)]
        out = np.zeros((len(replicates), len(t_list)))
        for start in range(0, len(replicates), _REPLICATE_BATCH):
            chunk = replicates[start:start + _REPLICATE_BATCH]
            Z = self.increments(chunk)[:, :, self.cells]
            for col, t in enumerate(t_list):
                tensor = self._tensor(t)
                total = np.zeros(len(chunk), dtype=complex)
                for c, sequence in self.terms:
                    total += c * contract(tensor, Z, sequence)
                out[start:start + len(chunk), col] = check_real(total, "S_0")
        return out

    def combination(self, replicates: Sequence[int], t_list: Sequence, C_list: Sequence[float]) -> np.ndarray:
        """Σ_p C_p S_0(t_p) per replicate."""
        if len(t_list) != len(C_list):
            raise DimensionMismatchError("t-list and coefficient list differ in length")
        return self.sample(replicates, t_list) @ np.asarray(C_list, dtype=float)


def sample_S0(H: HermiteExpansion, limit_model: LimitSpectralModel, partition: SymmetricPartition,
              seed: int, replicate: int) -> float:
    return float(LimitLawSampler(H, limit_model, partition, seed).sample([replicate])[0, 0])


def sample_S0_joint(H: HermiteExpansion, limit_model: LimitSpectralModel, partition: SymmetricPartition,
                    t_list: Sequence, seed: int, replicate: int) -> np.ndarray:
    return LimitLawSampler(H, limit_model, partition, seed).sample([replicate], t_list)[0]


def sample_S0_combination(H: HermiteExpansion, limit_model: LimitSpectralModel, partition: SymmetricPartition,
                          t_list: Sequence, C_list: Sequence[float], seed: int, replicate: int) -> float:
    return float(LimitLawSampler(H, limit_model, partition, seed).combination([replicate], t_list, C_list)[0])


# ===================================
# Self-similarity
# ===================================
@dataclass(frozen=True)
class SelfSimilarityReport:
    u: float
    exponent: float
    z_scores: dict
    variance_ratio: float
    variance_target: float
    variance_z: float
    kernel_residual: float


def _paired_z(a: np.ndarray, b: np.ndarray) -> float:
    diff = a - b
    mean = float(diff.mean())
    se = float(diff.std(ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0
    if se == 0.0:
        return 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    return mean / se


def self_similarity_check(sampler: LimitLawSampler, u: float, t, replicates: Sequence[int],
                          max_moment: int = 4, kernel_points: int = 1000) -> SelfSimilarityReport:
    """
    Moments of S_0(ut) against u^(nu - k alpha/2)-scaled moments of S_0(t),
    drawn from shared increments; z-scores use paired differences.
    """
    nu = sampler.partition.nu
    k = sampler.H.k
    alpha = sampler.model.params.alpha
    exponent = nu - k * alpha / 2.0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    values = sampler.sample(replicates, [t, u * t])
    base, stretched = values[:, 0], values[:, 1]
    scale = u ** exponent

    z_scores = {q: _paired_z(stretched ** q, (scale * base) ** q) for q in range(1, max_moment + 1)}

    var_b, var_s = float(base.var(ddof=1)), float(stretched.var(ddof=1))
    target = u ** (2.0 * exponent)
    ratio = var_s / var_b if var_b > 0 else math.nan
    # delta method on (E S^2(ut), E S^2(t)) for mean-zero variables
    R = base.size
    a2, b2 = stretched ** 2, base ** 2
    cov = np.cov(np.stack([a2, b2]))
    grad = np.array([1.0 / var_b, -var_s / var_b ** 2]) if var_b > 0 else np.zeros(2)
    se = math.sqrt(max(float(grad @ cov @ grad) / R, 0.0))
    variance_z = 0.0 if se == 0.0 else (ratio - target) / se

    rng = rng_stream(sampler.seed, 0, "kernel-identity")
    points = rng.uniform(-10.0, 10.0, size=(kernel_points, k, nu))
    residual = kernel_identity_residual(k, nu, u, t, points)
    return SelfSimilarityReport(u=u, exponent=exponent, z_scores=z_scores, variance_ratio=ratio,
                                variance_target=target, variance_z=variance_z, kernel_residual=residual)
