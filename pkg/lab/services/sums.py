"""
Normalized lattice sums of a Hermite functional Y(p) = H(X(p)).

    S_N(t) = A_N^{-1} Σ_{p in B_N(t)} Y(p),   A_N = N^(nu - k alpha/2) L(N)^(k/2),

with B_N(t) = {p : 0 <= p_l < N t_l}.  Exact second moments are available for
diagonal models, where E[Π H_{k_j}(X_j(u)) Π H_{k'_j}(X_j(v))] factorizes into
δ_{k,k'} Π k_j! r_jj(u - v)^{k_j}; every double sum over the lattice is grouped
on the lag y = u - v.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from lab.exceptions import DimensionMismatchError, ModelValidationError
from lab.services.hermite import (
    HermiteExpansion,
    HermiteSeries,
    TailExpansion,
    combined,
    require_diagonal,
)
from lab.services.lrd_model import CovarianceTable, LongRangeParams, SlowVarying

logger = logging.getLogger(__name__)

UNIT_VARIANCE_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class NormalizedSumSpec:
    nu: int
    params: LongRangeParams
    H: HermiteExpansion
    L: SlowVarying = SlowVarying()
    H1: TailExpansion | None = None

    def __post_init__(self):
        self.params.check(self.nu)
        if self.H.k != self.params.k:
            raise ModelValidationError(f"expansion has order {self.H.k}, parameters say k={self.params.k}")
        if self.H1 is not None and (self.H1.k != self.params.k or self.H1.d != self.H.d):
            raise ModelValidationError("tail expansion does not match the order-k part")

    @property
    def k(self) -> int:
        return self.params.k

    def functional(self) -> HermiteSeries:
        """H = H^(0) + H^(1)."""
        return combined(self.H, self.H1)

    def normalization(self, N: int) -> float:
        return float(N) ** (self.nu - self.k * self.params.alpha / 2.0) * float(self.L(N)) ** (self.k / 2.0)


# ===================================
# Lattice counting
# ===================================
def overlap_counts(n1: Sequence[int], n2: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """
    For boxes [0, n1) and [0, n2) (per axis), the lags y = u - v with their
    pair counts Π_l max(0, min(n1_l, n2_l + y_l) - max(0, y_l)).
    Returns (counts, lags) with lags of shape (m, nu); zero counts dropped.
    """
    axes_counts, axes_lags = [], []
    for a, b in zip(n1, n2):
        y = np.arange(-(int(b) - 1), int(a))
        axes_lags.append(y)
        axes_counts.append(np.maximum(0, np.minimum(a, b + y) - np.maximum(0, y)))
    mesh_lags = np.meshgrid(*axes_lags, indexing="ij")
    mesh_counts = np.meshgrid(*axes_counts, indexing="ij")
    counts = np.prod(np.stack([c.ravel() for c in mesh_counts], axis=-1), axis=-1)
    lags = np.stack([m.ravel() for m in mesh_lags], axis=-1)
    keep = counts > 0
    return counts[keep].astype(float), lags[keep]


def box_extent(N: int, t) -> tuple:
    """Points per axis of B_N(t): #{p : 0 <= p < N t} = ceil(N t), capped to [0, N] for t <= 1."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError(f"rectangle parameters must be >= 0, got {t}")
    scaled = N * t
    return tuple(int(math.ceil(v - 1e-9 * max(1.0, v))) for v in scaled)


# ===================================
# Sums of a sample
# ===================================
def functional_field(H: HermiteSeries, sample) -> np.ndarray:
    """Y(p) = H(X_1(p), ..., X_d(p)) over B_N."""
    values = sample.values if hasattr(sample, "values") else np.asarray(sample)
    if values.shape[0] != H.d:
        raise DimensionMismatchError(f"sample has d={values.shape[0]}, expansion has d={H.d}")
    return H.evaluate(np.moveaxis(values, 0, -1))


def normalized_sum(Y: np.ndarray, N: int, spec: NormalizedSumSpec) -> float:
    return float(np.sum(Y) / spec.normalization(N))


def normalized_sum_rect(Y: np.ndarray, N: int, t, spec: NormalizedSumSpec) -> float:
    extent = box_extent(N, t)
    if len(extent) != spec.nu:
        raise DimensionMismatchError(f"t has {len(extent)} components, lattice dimension is {spec.nu}")
    window = tuple(slice(0, min(e, N)) for e in extent)
    return float(np.sum(Y[window]) / spec.normalization(N))


def sum_batch(H: HermiteSeries, block: np.ndarray, N: int, spec: NormalizedSumSpec,
              t_list: Sequence | None = None) -> np.ndarray:
    """
    S_N for every replicate of a (R, d, N, ..., N) block, followed by S_N(t)
    for each t in t_list.  Result shape (R, 1 + len(t_list)).
    """
    t_list = list(t_list or [])
    Y = H.evaluate(np.moveaxis(block, 1, -1))
    norm = spec.normalization(N)
    columns = [Y.reshape(Y.shape[0], -1).sum(axis=1) / norm]
    for t in t_list:
        window = (slice(None),) + tuple(slice(0, min(e, N)) for e in box_extent(N, t))
        columns.append(Y[window].reshape(Y.shape[0], -1).sum(axis=1) / norm)
    return np.stack(columns, axis=1)


# ===================================
# Exact second moments (diagonal models)
# ===================================
def _check_unit_variance(cov: CovarianceTable) -> None:
    diag = np.real(np.diag(cov.lag0()))
    if np.any(np.abs(diag - 1.0) > UNIT_VARIANCE_TOLERANCE):
        raise ModelValidationError(f"exact moments need E X_j(0)^2 = 1, got {diag}; standardize the table first")


def lag_moment(H: HermiteSeries, cov: CovarianceTable, lags: np.ndarray) -> np.ndarray:
    """E[H(X(0)) H(X(y))] at each lag for a diagonal model."""
    require_diagonal(cov.is_diagonal(), "the lag moment")
    _check_unit_variance(cov)
    rdiag = np.stack([cov.entry(j, j, lags) for j in range(H.d)])
    out = np.zeros(lags.shape[0])
    for index, c in H.coefficients.items():
        term = np.full(lags.shape[0], c * c * float(np.prod([math.factorial(v) for v in index])))
        for j, kj in enumerate(index):
            if kj:
                term = term * rdiag[j] ** kj
        out += term
    return out


def exact_covariance_rect(spec: NormalizedSumSpec, cov: CovarianceTable, N: int, t1, t2,
                          H: HermiteSeries | None = None) -> float:
    """E[S_N(t1) S_N(t2)] for a diagonal model, via Σ_y count(y) E[H(X(0)) H(X(y))]."""
    H = H if H is not None else spec.functional()
    n1 = [min(e, N) for e in box_extent(N, t1)]
    n2 = [min(e, N) for e in box_extent(N, t2)]
    if min(n1 + n2) == 0:
        return 0.0
    counts, lags = overlap_counts(n1, n2)
    total = float(np.dot(counts, lag_moment(H, cov, lags)))
    return total / spec.normalization(N) ** 2


def exact_variance_SN(spec: NormalizedSumSpec, cov: CovarianceTable, N: int) -> float:
    ones = np.ones(spec.nu)
    return exact_covariance_rect(spec, cov, N, ones, ones)


def exact_covariance_matrix(spec: NormalizedSumSpec, cov: CovarianceTable, N: int, t_list: Sequence) -> np.ndarray:
    K = len(t_list)
    out = np.empty((K, K))
    for a in range(K):
        for b in range(a, K):
            out[a, b] = out[b, a] = exact_covariance_rect(spec, cov, N, t_list[a], t_list[b])
    return out


def tail_second_moment(spec: NormalizedSumSpec, cov: CovarianceTable, N: int) -> float:
    """E[(A_N^{-1} Σ_{B_N} H^(1)(X(p)))²] with the order-k normalization; 0 when there is no tail."""
    if spec.H1 is None or not spec.H1.coefficients:
        return 0.0
    ones = np.ones(spec.nu)
    return exact_covariance_rect(spec, cov, N, ones, ones, H=spec.H1)
