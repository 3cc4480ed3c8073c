"""Two-sample comparison statistics used by the experiment harness."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from lab.exceptions import EmptySampleError


def _sample(values, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise EmptySampleError(f"{name} is empty")
    return values


def ks_distance(sample_a, sample_b) -> float:
    """sup_x |F_a(x) - F_b(x)| over the pooled sample."""
    a = _sample(sample_a, "sample_a")
    b = _sample(sample_b, "sample_b")
    return float(stats.ks_2samp(a, b).statistic)


def ks_pvalue(sample_a, sample_b) -> float:
    a = _sample(sample_a, "sample_a")
    b = _sample(sample_b, "sample_b")
    return float(stats.ks_2samp(a, b).pvalue)


def ks_critical_value(n: int, m: int, level: float = 0.01) -> float:
    """c(level) sqrt((n+m)/(nm)) with c(level) = sqrt(-ln(level/2)/2)."""
    return math.sqrt(-math.log(level / 2.0) / 2.0) * math.sqrt((n + m) / (n * m))


@dataclass(frozen=True)
class MomentTable:
    n: int
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    skewness: float
    skewness_se: float
    kurtosis: float
    kurtosis_se: float

    def as_dict(self) -> dict:
        return asdict(self)


def moment_table(values) -> MomentTable:
    """Mean, variance, skewness and excess kurtosis with large-sample standard errors."""
    x = _sample(values, "sample")
    n = x.size
    mean = float(x.mean())
    variance = float(x.var(ddof=1)) if n > 1 else 0.0
    centered = x - mean
    m4 = float(np.mean(centered ** 4))
    return MomentTable(
        n=n,
        mean=mean,
        mean_se=math.sqrt(variance / n),
        variance=variance,
        variance_se=math.sqrt(max(m4 - variance ** 2, 0.0) / n),
        skewness=float(stats.skew(x)) if variance > 0 else 0.0,
        skewness_se=math.sqrt(6.0 / n),
        kurtosis=float(stats.kurtosis(x)) if variance > 0 else 0.0,
        kurtosis_se=math.sqrt(24.0 / n),
    )


def moment_z_scores(a: MomentTable, b: MomentTable) -> dict:
    out = {}
    for name in ("mean", "variance", "skewness", "kurtosis"):
        se = math.hypot(getattr(a, f"{name}_se"), getattr(b, f"{name}_se"))
        diff = getattr(a, name) - getattr(b, name)
        out[name] = 0.0 if se == 0.0 else diff / se
    return out


def cf_distance(sample_a, sample_b, u_max: float = 3.0, points: int = 61) -> float:
    """max over a symmetric grid of |phi_a(u) - phi_b(u)| for the empirical characteristic functions."""
    a = _sample(sample_a, "sample_a")
    b = _sample(sample_b, "sample_b")
    u = np.linspace(-u_max, u_max, points)
    phi_a = np.exp(1j * np.multiply.outer(u, a)).mean(axis=1)
    phi_b = np.exp(1j * np.multiply.outer(u, b)).mean(axis=1)
    return float(np.abs(phi_a - phi_b).max())


def relative_change(sequence) -> list[float]:
    values = np.asarray(sequence, dtype=float)
    return [float(abs(b - a) / abs(a)) if a != 0 else math.inf for a, b in zip(values, values[1:])]


def is_decreasing(values, strict: bool = True) -> bool:
    values = list(values)
    if strict:
        return all(b < a for a, b in zip(values, values[1:]))
    return all(b <= a for a, b in zip(values, values[1:]))
