"""
Hermite polynomials and product-Hermite expansions.

Expansions are coefficient maps {(k_1, ..., k_d): c}; the order-k part is a
`HermiteExpansion`, the higher-order remainder a `TailExpansion`.  Coordinates
are 0-based throughout, so the j-sequence of (k_1, k_2) = (2, 1) is (0, 0, 1).
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from django.conf import settings
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.hermite_e import herme2poly, poly2herme
from scipy.signal import convolve

from lab.exceptions import (
    AssumptionError,
    DegreeCapError,
    DimensionMismatchError,
    MalformedSequenceError,
    ModelValidationError,
    NonDiagonalModelError,
)
from lab.utils import rng_stream

logger = logging.getLogger(__name__)

ZERO_COEFFICIENT = 1e-12
BOUND_TOLERANCE = 1e-10


# ===================================
# Polynomials
# ===================================
def hermite_table(n: int, x) -> np.ndarray:
    """H_0(x) .. H_n(x) stacked on a new leading axis (probabilists' convention)."""
    if n < 0:
        raise ValueError("Hermite degree must be >= 0")
    x = np.asarray(x, dtype=float)
    table = np.empty((n + 1,) + x.shape)
    table[0] = 1.0
    if n >= 1:
        table[1] = x
    for m in range(1, n):
        table[m + 1] = x * table[m] - m * table[m - 1]
    return table


def hermite_poly(n: int, x):
    """H_n(x) via H_{n+1} = x H_n - n H_{n-1}."""
    values = hermite_table(n, x)[n]
    return float(values) if values.ndim == 0 else values


# ===================================
# Expansions
# ===================================
def _normalize_terms(d: int, coefficients: Mapping) -> dict:
    terms = {}
    for index, c in dict(coefficients).items():
        index = tuple(int(v) for v in index)
        if len(index) != d:
            raise DimensionMismatchError(f"multi-index {index} does not have d={d} entries")
        if any(v < 0 for v in index):
            raise ModelValidationError(f"multi-index {index} has a negative entry")
        terms[index] = terms.get(index, 0.0) + float(c)
    return terms


@dataclass(frozen=True, eq=False)
class HermiteSeries:
    """Finite sum Σ c_{k_1..k_d} Π_j H_{k_j}(x_j) of any mix of orders."""

    d: int
    coefficients: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise DimensionMismatchError("an expansion needs d >= 1 variables")
        object.__setattr__(self, "coefficients", _normalize_terms(self.d, self.coefficients))

    @property
    def degree(self) -> int:
        return max((sum(i) for i in self.coefficients), default=0)

    @property
    def orders(self) -> set:
        return {sum(i) for i, c in self.coefficients.items() if c != 0.0}

    def items(self):
        return sorted(self.coefficients.items())

    def evaluate(self, x) -> np.ndarray:
        return eval_expansion(self, x)

    def to_json(self) -> dict:
        payload = {"d": self.d, "terms": [{"index": list(i), "c": c} for i, c in self.items()]}
        if hasattr(self, "k"):
            payload["k"] = self.k
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "HermiteSeries":
        coefficients = {tuple(t["index"]): float(t["c"]) for t in payload.get("terms", [])}
        if "k" in payload and cls is not HermiteSeries:
            return cls(d=int(payload["d"]), k=int(payload["k"]), coefficients=coefficients)
        return cls(d=int(payload["d"]), coefficients=coefficients)


@dataclass(frozen=True, eq=False)
class HermiteExpansion(HermiteSeries):
    """The order-k part: every stored multi-index sums to k."""

    k: int = 1

    def __post_init__(self):
        super().__post_init__()
        if self.k < 1:
            raise ModelValidationError("Hermite order k must be >= 1")
        if not self.coefficients:
            raise ModelValidationError("an order-k expansion needs at least one term")
        bad = [i for i in self.coefficients if sum(i) != self.k]
        if bad:
            raise ModelValidationError(f"multi-indices {bad} do not sum to k={self.k}")


@dataclass(frozen=True, eq=False)
class TailExpansion(HermiteSeries):
    """Terms of order >= k+1 (finitely supported)."""

    k: int = 1

    def __post_init__(self):
        super().__post_init__()
        bad = [i for i in self.coefficients if sum(i) < self.k + 1]
        if bad:
            raise ModelValidationError(f"tail multi-indices {bad} have order below k+1={self.k + 1}")


def eval_expansion(H: HermiteSeries, x) -> np.ndarray:
    """Σ c Π_j H_{k_j}(x_j); x has shape (..., d)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != H.d:
        raise DimensionMismatchError(f"points have {x.shape[-1]} coordinates, expansion has d={H.d}")
    tables = [hermite_table(H.degree, x[..., j]) for j in range(H.d)]
    out = np.zeros(x.shape[:-1])
    for index, c in H.items():
        term = np.full(x.shape[:-1], c)
        for j, kj in enumerate(index):
            if kj:
                term = term * tables[j][kj]
        out = out + term
    return float(out) if out.ndim == 0 else out


def _factorial_product(index: Sequence[int]) -> float:
    return float(np.prod([math.factorial(v) for v in index]))


def tail_condition_value(H1: HermiteSeries) -> float:
    """Σ c² / (k_1! ... k_d!)."""
    return float(sum(c * c / _factorial_product(i) for i, c in H1.coefficients.items()))


def second_moment(H: HermiteSeries) -> float:
    """E[H(X)²] = Σ c² k_1! ... k_d! for X with identity covariance."""
    return float(sum(c * c * _factorial_product(i) for i, c in H.coefficients.items()))


def hermite_rank(H: HermiteSeries) -> int:
    orders = H.orders
    if not orders:
        raise ModelValidationError("the zero expansion has no Hermite rank")
    return min(orders)


# ===================================
# Exact moments for diagonal models
# ===================================
def cross_moment_diagonal(H: HermiteSeries, r_diag) -> float:
    """E[H(X) H(Y)] = Σ c² Π_j k_j! r_j^{k_j}, with r_j = corr(X_j, Y_j) and no cross-correlation."""
    r_diag = np.asarray(r_diag, dtype=float).reshape(-1)
    if r_diag.size != H.d:
        raise DimensionMismatchError(f"{r_diag.size} correlations for an expansion with d={H.d}")
    if np.any(np.abs(r_diag) > 1.0 + 1e-12):
        raise ValueError(f"correlations must lie in [-1, 1], got {r_diag}")
    total = 0.0
    for index, c in H.coefficients.items():
        total += c * c * _factorial_product(index) * float(np.prod(r_diag ** np.asarray(index)))
    return total


def psi(r) -> float:
    """max(sup_j Σ_j' |r_jj'|, sup_j' Σ_j |r_jj'|)."""
    r = np.abs(np.atleast_2d(np.asarray(r, dtype=float)))
    return float(max(r.sum(axis=1).max(), r.sum(axis=0).max()))


@dataclass(frozen=True)
class CrossMomentBound:
    lhs: float
    bound: float
    holds: bool
    exact: bool
    stderr: float = 0.0


def _joint_moment_mc(H: HermiteSeries, r: np.ndarray, samples: int, rng: np.random.Generator) -> tuple[float, float]:
    d = H.d
    joint = np.block([[np.eye(d), r], [r.T, np.eye(d)]])
    values, vectors = np.linalg.eigh(joint)
    if values.min() < -1e-10:
        raise AssumptionError("the cross-correlation matrix does not define a joint Gaussian law")
    root = vectors * np.sqrt(np.clip(values, 0.0, None))
    z = rng.standard_normal((samples, 2 * d)) @ root.T
    prod = eval_expansion(H, z[:, :d]) * eval_expansion(H, z[:, d:])
    return float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(samples))


def cross_moment_bound(H1: TailExpansion, r, samples: int = 200_000, seed: int | None = None) -> CrossMomentBound:
    """
    |E H1(X) H1(Y)| against psi^{k+1} E[H1(X)²], where r_{jj'} = E X_j Y_j'.

    Exact when r is diagonal.  Otherwise Monte Carlo on the "cross_moment"
    stream of `seed` (LAB_SEED when omitted), and the verdict allows three
    standard errors.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    if r.shape != (H1.d, H1.d):
        raise DimensionMismatchError(f"r has shape {r.shape}, expected {(H1.d, H1.d)}")
    value = psi(r)
    if value > 1.0 + 1e-12:
        raise AssumptionError(f"psi = {value:.6g} > 1")
    bound = value ** (H1.k + 1) * second_moment(H1)

    off = r - np.diag(np.diag(r))
    if not np.any(off):
        lhs = abs(cross_moment_diagonal(H1, np.diag(r)))
        return CrossMomentBound(lhs=lhs, bound=bound, holds=lhs <= bound + BOUND_TOLERANCE, exact=True)

    rng = rng_stream(int(settings.LAB_SEED) if seed is None else seed, 0, "cross_moment")
    mean, stderr = _joint_moment_mc(H1, r, samples, rng)
    lhs = abs(mean)
    return CrossMomentBound(lhs=lhs, bound=bound, holds=lhs <= bound + 3.0 * stderr, exact=False, stderr=stderr)


# ===================================
# Gauss–Hermite quadrature
# ===================================
@lru_cache(maxsize=16)
def gauss_hermite_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for expectations under the standard normal law."""
    nodes, weights = hermgauss(order)
    return nodes * math.sqrt(2.0), weights / math.sqrt(math.pi)


def bivariate_hermite_moment(m: int, n: int, r: float, order: int = 40) -> float:
    """E[H_m(X) H_n(Y)] for standard X, Y with correlation r, by tensor Gauss–Hermite quadrature."""
    x, w = gauss_hermite_rule(order)
    X, W = np.meshgrid(x, x, indexing="ij")
    weights = np.outer(w, w)
    Y = r * X + math.sqrt(max(1.0 - r * r, 0.0)) * W
    return float(np.sum(weights * hermite_poly(m, X) * hermite_poly(n, Y)))


# ===================================
# Index maps
# ===================================
def multi_indices(k: int, d: int) -> list[tuple]:
    """All (k_1..k_d) with k_j >= 0 and Σ k_j = k, in reverse lexicographic order."""
    out = []
    for bars in itertools.combinations_with_replacement(range(d), k):
        out.append(tuple(bars.count(j) for j in range(d)))
    return out


@dataclass(frozen=True)
class IndexMaps:
    k: int
    d: int

    def sequence(self, multi_index: Sequence[int]) -> tuple:
        """j(s | k_1..k_d) for s = 1..k: coordinate j repeated k_j times."""
        multi_index = tuple(int(v) for v in multi_index)
        if len(multi_index) != self.d or sum(multi_index) != self.k or min(multi_index) < 0:
            raise MalformedSequenceError(f"{multi_index} is not a multi-index of order {self.k} in {self.d} variables")
        return tuple(j for j, kj in enumerate(multi_index) for _ in range(kj))

    def multi_index(self, sequence: Sequence[int]) -> tuple:
        """k_s(j_1..j_k): number of occurrences of each coordinate."""
        sequence = tuple(int(v) for v in sequence)
        if len(sequence) != self.k:
            raise MalformedSequenceError(f"sequence {sequence} does not have length k={self.k}")
        if any(b < a for a, b in zip(sequence, sequence[1:])):
            raise MalformedSequenceError(f"sequence {sequence} is not non-decreasing")
        if any(j < 0 or j >= self.d for j in sequence):
            raise MalformedSequenceError(f"sequence {sequence} has coordinates outside 0..{self.d - 1}")
        return tuple(sequence.count(j) for j in range(self.d))

    def all(self) -> list[tuple]:
        return multi_indices(self.k, self.d)


def index_maps(k: int, d: int) -> IndexMaps:
    if k < 1 or d < 1:
        raise MalformedSequenceError(f"index maps need k, d >= 1, got k={k}, d={d}")
    return IndexMaps(k=k, d=d)


# ===================================
# Basis conversion
# ===================================
def _degree_cap(cap: int | None) -> int:
    return int(cap if cap is not None else getattr(settings, "LAB_DEGREE_CAP", 10))


@lru_cache(maxsize=32)
def _change_of_basis(degree: int, to_monomial: bool) -> np.ndarray:
    """Column n holds the coefficients of basis element n in the other basis."""
    convert = herme2poly if to_monomial else poly2herme
    size = degree + 1
    matrix = np.zeros((size, size))
    for n in range(size):
        unit = np.zeros(size)
        unit[n] = 1.0
        column = convert(unit)
        matrix[: column.size, n] = column
    return matrix


def _apply_per_axis(tensor: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    for axis in range(tensor.ndim):
        tensor = np.moveaxis(np.tensordot(matrix, tensor, axes=([1], [axis])), 0, axis)
    return tensor


def to_monomial(H: HermiteSeries, cap: int | None = None) -> np.ndarray:
    """Dense monomial tensor P[m_1..m_d] with H(x) = Σ P[m] Π x_j^{m_j}."""
    degree = H.degree
    if degree > _degree_cap(cap):
        raise DegreeCapError(f"degree {degree} exceeds the cap {_degree_cap(cap)}")
    dense = np.zeros((degree + 1,) * H.d)
    for index, c in H.coefficients.items():
        dense[index] += c
    return _apply_per_axis(dense, _change_of_basis(degree, True))


def from_monomial(poly: np.ndarray, cap: int | None = None, tolerance: float = ZERO_COEFFICIENT) -> HermiteSeries:
    """Inverse of `to_monomial`; coefficients below tolerance * max are dropped."""
    poly = np.asarray(poly, dtype=float)
    nonzero = np.argwhere(np.abs(poly) > 0)
    degree = int(nonzero.sum(axis=1).max()) if nonzero.size else 0
    if degree > _degree_cap(cap):
        raise DegreeCapError(f"degree {degree} exceeds the cap {_degree_cap(cap)}")
    size = degree + 1
    trimmed = poly[(slice(0, size),) * poly.ndim]
    pad = [(0, size - s) for s in trimmed.shape]
    dense = _apply_per_axis(np.pad(trimmed, pad), _change_of_basis(degree, False))
    scale = max(float(np.abs(dense).max(initial=0.0)), 1.0)
    terms = {tuple(int(v) for v in i): float(dense[tuple(i)]) for i in np.argwhere(np.abs(dense) > tolerance * scale)}
    return HermiteSeries(d=poly.ndim, coefficients=terms)


def basis_convert(value, cap: int | None = None):
    """Hermite series -> dense monomial tensor, or dense monomial tensor -> Hermite series."""
    if isinstance(value, HermiteSeries):
        return to_monomial(value, cap)
    return from_monomial(np.asarray(value, dtype=float), cap)


# ===================================
# Change of variables x = D x'
# ===================================
def _truncate(tensor: np.ndarray, size: int) -> np.ndarray:
    return tensor[(slice(0, size),) * tensor.ndim]


def _linear_form_powers(row: np.ndarray, degree: int) -> list[np.ndarray]:
    """Dense tensors of (Σ_i row_i x'_i)^m for m = 0..degree."""
    dprime = row.size
    size = degree + 1
    linear = np.zeros((size,) * dprime)
    for i, coefficient in enumerate(row):
        unit = [0] * dprime
        unit[i] = 1
        linear[tuple(unit)] = coefficient
    powers = [np.zeros((size,) * dprime)]
    powers[0][(0,) * dprime] = 1.0
    for _ in range(degree):
        powers.append(_truncate(convolve(powers[-1], linear, method="direct"), size))
    return powers


def transform_functional(H: HermiteSeries, D, cap: int | None = None, tolerance: float = ZERO_COEFFICIENT) -> HermiteSeries:
    """
    H'(x') = H(D x') re-expanded in the product-Hermite basis of the d'
    reduced variables.  Returns a HermiteExpansion when the result is still
    homogeneous of the original order, otherwise a general HermiteSeries.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.shape[0] != H.d:
        raise DimensionMismatchError(f"D has {D.shape[0]} rows, expansion has d={H.d}")
    dprime = D.shape[1]
    degree = H.degree
    poly = to_monomial(H, cap)
    size = degree + 1
    powers = [_linear_form_powers(D[j], degree) for j in range(H.d)]

    composed = np.zeros((size,) * dprime)
    for m in np.argwhere(np.abs(poly) > 0):
        if int(m.sum()) > degree:
            continue
        term = powers[0][m[0]]
        for j in range(1, H.d):
            term = _truncate(convolve(term, powers[j][m[j]], method="direct"), size)
        composed += poly[tuple(m)] * term

    result = from_monomial(composed, cap, tolerance)
    order = getattr(H, "k", None)
    if order is not None and result.coefficients and result.orders == {order}:
        kept = {i: c for i, c in result.coefficients.items() if sum(i) == order}
        return HermiteExpansion(d=dprime, k=order, coefficients=kept)
    logger.debug(f"transformed functional has orders {sorted(result.orders)}")
    return result


def build_expansion(block: dict, d: int, k: int) -> tuple[HermiteExpansion, TailExpansion | None]:
    """Order-k part and optional tail from the `sum` block of an experiment config."""

    def parse(terms: Iterable) -> dict:
        return {tuple(t["index"]): float(t["c"]) for t in terms}

    H0 = HermiteExpansion(d=d, k=k, coefficients=parse(block.get("terms", [])))
    tail_terms = block.get("tail_terms") or []
    H1 = TailExpansion(d=d, k=k, coefficients=parse(tail_terms)) if tail_terms else None
    return H0, H1


def combined(H0: HermiteSeries, H1: HermiteSeries | None) -> HermiteSeries:
    if H1 is None:
        return H0
    if H1.d != H0.d:
        raise DimensionMismatchError("order-k part and tail have different d")
    terms = dict(H0.coefficients)
    for index, c in H1.coefficients.items():
        terms[index] = terms.get(index, 0.0) + c
    return HermiteSeries(d=H0.d, coefficients=terms)


def require_diagonal(is_diagonal: bool, what: str) -> None:
    if not is_diagonal:
        raise NonDiagonalModelError(f"{what} is exact only for models without cross-correlations")
