"""
Synthesis of stationary d-dimensional Gaussian samples X(p), p in B_N = [0, N)^nu,
with a prescribed covariance table.

Methods
-------
direct-factorization : eigen-factor the full block covariance of the window.
circulant-embedding  : multivariate circulant of side embedding_factor * N per
                       axis, one d x d spectral matrix per frequency.
spectral-grid        : circulant of the Bartlett-tapered covariance
                       r(y) (1 - |y|/W), W = embedding_factor * N.  Always
                       PSD; lags below N are damped by at most 1/embedding_factor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from lab.exceptions import EmbeddingError, InsufficientReplicatesError, NonPSDWindowError, TableRangeError
from lab.services.lrd_model import CovarianceTable, LatticeDims
from lab.services.quadrature import lag_box
from lab.utils import rng_stream

logger = logging.getLogger(__name__)

METHODS = ("direct-factorization", "circulant-embedding", "spectral-grid")
DIRECT_SIZE_CAP = 6000
_BATCH = 32


@dataclass(frozen=True)
class SamplerConfig:
    method: str = "circulant-embedding"
    seed: int = 0
    embedding_factor: int = 2
    clip_tolerance: float = 1e-6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown sampling method {self.method!r}; expected one of {METHODS}")
        if self.embedding_factor < 2:
            raise ValueError("embedding_factor must be >= 2")
        if self.clip_tolerance < 0:
            raise ValueError("clip_tolerance must be >= 0")


@dataclass(frozen=True, eq=False)
class FieldSample:
    """values[j, p_1, ..., p_nu] = X_j(p)."""

    dims: LatticeDims
    N: int
    values: np.ndarray
    seed: int = 0
    replicate: int = 0
    method: str = ""

    def __post_init__(self):
        expected = (self.dims.d,) + (self.N,) * self.dims.nu
        if self.values.shape != expected:
            raise ValueError(f"sample has shape {self.values.shape}, expected {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sample has non-finite entries")

    @property
    def d(self) -> int:
        return self.dims.d

    def flat(self) -> np.ndarray:
        """d x |B_N| view, lattice points row-major."""
        return self.values.reshape(self.dims.d, -1)

    def to_binary(self, path) -> Path:
        """Header (nu, d, N, seed, replicate) as little-endian int64, then row-major little-endian doubles."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = np.array([self.dims.nu, self.dims.d, self.N, self.seed, self.replicate], dtype="<i8")
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        return path

    @classmethod
    def from_binary(cls, path) -> "FieldSample":
        raw = Path(path).read_bytes()
        nu, d, N, seed, replicate = (int(v) for v in np.frombuffer(raw[:40], dtype="<i8"))
        values = np.frombuffer(raw[40:], dtype="<f8").reshape((d,) + (N,) * nu).copy()
        return cls(LatticeDims(nu, d), N, values, seed, replicate)

    def csv_rows(self):
        """(replicate, p..., j, value) rows."""
        grid = np.indices((self.N,) * self.dims.nu).reshape(self.dims.nu, -1).T
        flat = self.flat()
        for idx, p in enumerate(grid):
            for j in range(self.dims.d):
                yield (self.replicate, *p.tolist(), j, float(flat[j, idx]))


# ===================================
# Circulant machinery
# ===================================
def _wrapped_lags(n: int, nu: int) -> np.ndarray:
    """Lag representative in (-n/2, n/2] for every circulant index, shape (n^nu, nu)."""
    axis = np.arange(n)
    axis = np.where(axis > n // 2, axis - n, axis)
    mesh = np.meshgrid(*([axis] * nu), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _circulant_base(cov: CovarianceTable, n: int, taper: float | None) -> np.ndarray:
    """
    C(y) for y in [0, n)^nu with C(-y mod n) = C(y)^T; at index n/2 the two
    candidate lags are averaged.  Shape (n,)*nu + (d, d).
    """
    nu, d = cov.dims.nu, cov.dims.d
    lags = _wrapped_lags(n, nu)
    if taper is not None:
        keep = np.all(np.abs(lags) < taper, axis=1)
        base = np.zeros((lags.shape[0], d, d))
        base[keep] = cov.at(-lags[keep])
        weight = np.prod(np.clip(1.0 - np.abs(lags) / taper, 0.0, None), axis=1)
        base *= weight[:, None, None]
    else:
        base = cov.at(-lags)
    base = base.reshape((n,) * nu + (d, d))
    flipped = base
    for axis in range(nu):
        flipped = np.take(flipped, np.r_[0, np.arange(n - 1, 0, -1)], axis=axis)
    return 0.5 * (base + np.swapaxes(flipped, -1, -2))


def _spectral_factors(base: np.ndarray, nu: int, clip_tolerance: float, label: str) -> tuple[np.ndarray, float]:
    """Per-frequency Q(w) with Q Q^H = Lambda(w) (clipped); returns (Q, clipped fraction of trace)."""
    spectra = np.fft.fftn(base, axes=tuple(range(nu)))
    spectra = 0.5 * (spectra + np.conj(np.swapaxes(spectra, -1, -2)))
    values, vectors = np.linalg.eigh(spectra)
    top = float(values.max())
    low = float(values.min())
    clipped = 0.0
    if low < 0.0:
        if low < -clip_tolerance * top:
            raise EmbeddingError(
                f"{label}: eigenvalue {low:.3e} below -{clip_tolerance:.1e} * {top:.3e}; increase embedding_factor"
            )
        clipped = float(-values[values < 0].sum() / max(values[values > 0].sum(), 1e-300))
        logger.warning(f"⚠️ {label}: clipped negative eigenvalues (min {low:.3e}, relative trace {clipped:.2e})")
        values = np.clip(values, 0.0, None)
    return vectors * np.sqrt(values)[..., None, :], clipped


# ===================================
# Sampler
# ===================================
class FieldSampler:
    """
    Factors once for (cov, N, cfg) and draws any replicate on demand.

    Replicate r always comes from the stream (seed, r, method), so samples are
    a pure function of (cov, N, cfg, replicate) whatever the drawing order.
    """

    def __init__(self, cov: CovarianceTable, N: int, cfg: SamplerConfig):
        if N < 1:
            raise ValueError("N must be >= 1")
        self.cov = cov
        self.N = int(N)
        self.cfg = cfg
        self.dims = cov.dims
        self.clipped = 0.0
        if cfg.method == "direct-factorization":
            self._prepare_direct()
        else:
            self._prepare_circulant(tapered=cfg.method == "spectral-grid")
        logger.debug(f"sampler ready: method={cfg.method}, N={N}, d={self.dims.d}, nu={self.dims.nu}")

    # ---------- direct ----------
    def block_covariance(self) -> np.ndarray:
        """Cov(X_j(p), X_j'(q)) = r_{jj'}(q - p), index (j, p) with p row-major."""
        nu, d, N = self.dims.nu, self.dims.d, self.N
        if N - 1 > self.cov.max_lag:
            raise TableRangeError(f"direct sampling at N={N} needs lags up to {N - 1}, table has {self.cov.max_lag}")
        points = np.indices((N,) * nu).reshape(nu, -1).T
        diff = points[None, :, :] - points[:, None, :]
        m = points.shape[0]
        r = self.cov.at(diff.reshape(-1, nu)).reshape(m, m, d, d)
        return np.transpose(r, (2, 0, 3, 1)).reshape(d * m, d * m)

    def _prepare_direct(self):
        size = self.dims.d * self.N ** self.dims.nu
        if size > DIRECT_SIZE_CAP:
            raise ValueError(f"direct factorization of a {size}x{size} window exceeds the cap {DIRECT_SIZE_CAP}")
        C = self.block_covariance()
        C = 0.5 * (C + C.T)
        values, vectors = np.linalg.eigh(C)
        top = float(values.max())
        if values.min() < -1e-10 * max(top, 1.0):
            raise NonPSDWindowError(f"window covariance has eigenvalue {values.min():.3e}")
        self.window = C
        self.map = vectors * np.sqrt(np.clip(values, 0.0, None))

    def factor_residual(self) -> float:
        """max |map map^T - C| for direct factorization."""
        return float(np.abs(self.map @ self.map.T - self.window).max())

    # ---------- circulant ----------
    def _prepare_circulant(self, tapered: bool):
        factor = self.cfg.embedding_factor
        if tapered:
            width = factor * self.N
            self.size = 2 * width
            need = width - 1
        else:
            self.size = factor * self.N
            need = self.size // 2
        if need > self.cov.max_lag:
            raise TableRangeError(f"{self.cfg.method} at N={self.N} needs lags up to {need}, table has {self.cov.max_lag}")
        base = _circulant_base(self.cov, self.size, float(factor * self.N) if tapered else None)
        self.factors, self.clipped = _spectral_factors(base, self.dims.nu, self.cfg.clip_tolerance, self.cfg.method)

    def induced_covariance(self, max_lag: int) -> CovarianceTable:
        """Covariance actually realized by the (clipped) circulant, on lags up to max_lag."""
        nu, d = self.dims.nu, self.dims.d
        spectra = self.factors @ np.conj(np.swapaxes(self.factors, -1, -2))
        base = np.real(np.fft.ifftn(spectra, axes=tuple(range(nu))))
        lags = lag_box(max_lag, nu)
        values = base[tuple((-lags % self.size).T)]
        r = np.moveaxis(values, 0, -1).reshape((d, d) + (2 * max_lag + 1,) * nu)
        return CovarianceTable(self.dims, max_lag, r)

    # ---------- drawing ----------
    def _stream(self, replicate: int) -> np.random.Generator:
        return rng_stream(self.cfg.seed, replicate, self.cfg.method)

    def _draw_circulant(self, replicates: Sequence[int]) -> np.ndarray:
        nu, d, n = self.dims.nu, self.dims.d, self.size
        shape = (n,) * nu + (d,)
        xi = np.empty((len(replicates),) + shape, dtype=complex)
        for idx, rep in enumerate(replicates):
            rng = self._stream(rep)
            xi[idx] = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        driven = np.einsum("...ij,r...j->r...i", self.factors, xi)
        field = np.fft.ifftn(driven, axes=tuple(range(1, 1 + nu))) * np.sqrt(n ** nu)
        window = (slice(None),) + (slice(0, self.N),) * nu
        return np.moveaxis(field.real[window], -1, 1)

    def _draw_direct(self, replicates: Sequence[int]) -> np.ndarray:
        nu, d, N = self.dims.nu, self.dims.d, self.N
        z = np.stack([self._stream(rep).standard_normal(self.map.shape[1]) for rep in replicates])
        return (z @ self.map.T).reshape((len(replicates), d) + (N,) * nu)

    def draw(self, replicates: Iterable[int]) -> np.ndarray:
        """Array (R, d, N, ..., N) for the listed replicates."""
        replicates = [int(r) for r in replicates]
        draw = self._draw_direct if self.cfg.method == "direct-factorization" else self._draw_circulant
        chunks = [draw(replicates[i:i + _BATCH]) for i in range(0, len(replicates), _BATCH)]
        if not chunks:
            return np.empty((0, self.dims.d) + (self.N,) * self.dims.nu)
        return np.concatenate(chunks)

    def sample(self, replicate: int) -> FieldSample:
        values = self.draw([replicate])[0]
        return FieldSample(self.dims, self.N, values, self.cfg.seed, int(replicate), self.cfg.method)

    def sample_many(self, replicates: Iterable[int]) -> list[FieldSample]:
        replicates = list(replicates)
        block = self.draw(replicates)
        return [FieldSample(self.dims, self.N, v, self.cfg.seed, r, self.cfg.method) for r, v in zip(replicates, block)]


def sample_field(cov: CovarianceTable, N: int, cfg: SamplerConfig, replicate: int) -> FieldSample:
    return FieldSampler(cov, N, cfg).sample(replicate)


# ===================================
# Estimation
# ===================================
@dataclass(frozen=True, eq=False)
class EmpiricalCovariance:
    table: CovarianceTable
    stderr: np.ndarray
    replicates: int = field(default=0)

    def z_scores(self, target: CovarianceTable) -> np.ndarray:
        reference = target.restricted(self.table.max_lag).r
        safe = np.where(self.stderr > 0, self.stderr, np.inf)
        return (self.table.r - reference) / safe

    def coverage(self, target: CovarianceTable, sigmas: float = 3.0) -> float:
        """Fraction of entries within `sigmas` standard errors of the target."""
        return float(np.mean(np.abs(self.z_scores(target)) <= sigmas))


def _per_replicate_covariances(block: np.ndarray, max_lag: int) -> np.ndarray:
    """(R, d, d) + (2L+1,)^nu position averages of X_j(q) X_j'(q+p)."""
    R, d = block.shape[:2]
    nu = block.ndim - 2
    N = block.shape[2]
    size = 2 * N
    axes = tuple(range(2, 2 + nu))
    F = np.fft.fftn(block, s=(size,) * nu, axes=axes)
    cross = np.fft.ifftn(np.conj(F)[:, :, None] * F[:, None, :], axes=tuple(a + 1 for a in axes)).real
    lags = lag_box(max_lag, nu)
    counts = np.prod(N - np.abs(lags), axis=1).astype(float)
    index = (slice(None),) * 3 + tuple((lags % size).T)
    values = cross[index] / counts
    return values.reshape((R, d, d) + (2 * max_lag + 1,) * nu)


def _accumulate(blocks: Iterable[np.ndarray], dims: LatticeDims, max_lag: int) -> EmpiricalCovariance:
    total = total_sq = None
    R = 0
    for block in blocks:
        if max_lag >= block.shape[2]:
            raise TableRangeError(f"max_lag {max_lag} must be below N={block.shape[2]}")
        for start in range(0, block.shape[0], _BATCH):
            part = _per_replicate_covariances(block[start:start + _BATCH], max_lag)
            total = part.sum(axis=0) if total is None else total + part.sum(axis=0)
            total_sq = (part ** 2).sum(axis=0) if total_sq is None else total_sq + (part ** 2).sum(axis=0)
        R += block.shape[0]
    if R < 2:
        raise InsufficientReplicatesError(f"need at least 2 samples, got {R}")
    mean = total / R
    variance = np.clip((total_sq - R * mean ** 2) / (R - 1), 0.0, None)
    stderr = np.sqrt(variance / R)
    return EmpiricalCovariance(CovarianceTable(dims, max_lag, mean), stderr, R)


def empirical_covariance(samples, max_lag: int) -> EmpiricalCovariance:
    """
    Cross-replicate estimate of r_{jj'}(p) (known zero mean) with standard
    errors from the spread of per-replicate position averages.
    """
    if isinstance(samples, np.ndarray):
        block = samples
        dims = LatticeDims(block.ndim - 2, block.shape[1])
    else:
        samples = list(samples)
        if not samples:
            raise InsufficientReplicatesError("need at least 2 samples, got 0")
        block = np.stack([s.values for s in samples])
        dims = samples[0].dims
    return _accumulate([block], dims, max_lag)


def sampler_covariance(sampler: FieldSampler, replicates: int, max_lag: int, chunk: int = 1024) -> EmpiricalCovariance:
    """empirical_covariance over replicates 0..replicates-1, drawn chunk by chunk."""
    blocks = (sampler.draw(range(start, min(replicates, start + chunk))) for start in range(0, replicates, chunk))
    return _accumulate(blocks, sampler.dims, max_lag)


def sample_field_from_config(cov: CovarianceTable, N: int, block: dict, seed: int) -> FieldSampler:
    cfg = SamplerConfig(
        method=block.get("method", "circulant-embedding"),
        seed=int(seed),
        embedding_factor=int(block.get("embedding_factor", 2)),
        clip_tolerance=float(block.get("clip_tolerance", 1e-6)),
    )
    return FieldSampler(cov, N, cfg)
