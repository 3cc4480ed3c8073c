"""
Experiment context: every object a run needs, built once from a validated
config and shared by tasks, the harness and the management commands.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings

from .exceptions import ModelValidationError
from .services.field_sampler import FieldSampler, sample_field_from_config
from .services.hermite import build_expansion
from .services.lrd_model import (
    CovarianceTable,
    LatticeDims,
    ScaledFactor,
    SlowVarying,
    SpectralDensityModel,
    build_covariance,
    build_model,
)
from .services.spectral_measure import LimitSpectralModel
from .services.sums import NormalizedSumSpec
from .services.wiener_ito import LimitLawSampler, SymmetricPartition
from .utils import config_hash

logger = logging.getLogger(__name__)

IDENTITY_TOLERANCE = 1e-6


@dataclass(eq=False)
class Experiment:
    config: dict
    model: SpectralDensityModel
    L: SlowVarying
    cov: CovarianceTable
    limit_model: LimitSpectralModel
    spec: NormalizedSumSpec
    partition: SymmetricPartition
    _field_samplers: dict = field(default_factory=dict, repr=False)
    _limit_samplers: dict = field(default_factory=dict, repr=False)

    @property
    def dims(self) -> LatticeDims:
        return self.model.dims

    @property
    def hash(self) -> str:
        return config_hash(self.config)

    @property
    def N_list(self) -> list[int]:
        return list(self.config["run"]["N_list"])

    @property
    def replicates(self) -> int:
        return int(self.config["run"]["replicates"])

    @property
    def t_list(self) -> list[np.ndarray]:
        return [np.asarray(t, dtype=float) for t in self.config["sum"].get("t_list", [])]

    def seeds(self, seed: int | None = None) -> list[int]:
        """The explicit seed wins, then run.seeds, then run.seed."""
        run = self.config["run"]
        if seed is not None:
            return [int(seed)]
        if run.get("seeds"):
            return [int(s) for s in run["seeds"]]
        return [int(run["seed"])] if run.get("seed") is not None else []

    def field_sampler(self, N: int, seed: int) -> FieldSampler:
        key = (int(N), int(seed))
        if key not in self._field_samplers:
            self._field_samplers[key] = sample_field_from_config(self.cov, N, self.config["sampler"], seed)
        return self._field_samplers[key]

    def limit_sampler(self, seed: int) -> LimitLawSampler:
        key = int(seed)
        if key not in self._limit_samplers:
            self._limit_samplers[key] = LimitLawSampler(self.spec.H, self.limit_model, self.partition, seed)
        return self._limit_samplers[key]


def required_max_lag(config: dict) -> int:
    """Largest covariance lag any sampler or exact lag sum of the run touches."""
    N = max(config["run"]["N_list"])
    sampler = config["sampler"]
    factor = int(sampler.get("embedding_factor", 2))
    method = sampler.get("method", "circulant-embedding")
    if method == "spectral-grid":
        return max(factor * N - 1, N - 1, 1)
    if method == "circulant-embedding":
        return max(factor * N // 2, N - 1, 1)
    return max(N - 1, 1)


def standardized_limit(model: SpectralDensityModel, cov: CovarianceTable) -> LimitSpectralModel:
    """G^(0) of the field X_j / sqrt(r_jj(0)): b is conjugated by the same diagonal scaling."""
    scale = 1.0 / np.sqrt(np.real(np.diag(cov.lag0())))
    b = model.b if np.allclose(scale, 1.0) else ScaledFactor(model.b, scale)
    return LimitSpectralModel(model.dims, model.params, b, model.h0)


def build_experiment(config: dict) -> Experiment:
    model_block = config["model"]
    model, L = build_model(model_block)
    if model_block.get("kind") != "fgn" and L.kind != "constant":
        logger.warning("⚠️ density models here have L = 1 asymptotics; normalizing with a log factor anyway")
    raw = build_covariance(model_block, model, required_max_lag(config))
    limit_model = standardized_limit(model, raw)
    cov = raw.standardized() if model_block.get("standardize", True) else raw

    off = cov.lag0() - np.eye(cov.dims.d)
    if np.abs(off).max() > IDENTITY_TOLERANCE:
        raise ModelValidationError(
            f"E X(0) X(0)^T must be the identity (largest deviation {np.abs(off).max():.2e}); "
            "reduce the coordinates or set model.standardize"
        )

    H0, H1 = build_expansion(config["sum"], model.dims.d, model.params.k)
    spec = NormalizedSumSpec(model.dims.nu, model.params, H0, L, H1)
    limit = config["limit"]
    partition = SymmetricPartition(float(limit["T"]), int(limit["M"]), model.dims.nu)
    logger.info(
        f"experiment ready: nu={model.dims.nu}, d={model.dims.d}, k={model.params.k}, "
        f"alpha={model.params.alpha}, max_lag={cov.max_lag}"
    )
    return Experiment(config, model, L, cov, limit_model, spec, partition)


_CACHE: OrderedDict[str, Experiment] = OrderedDict()


def get_experiment(config: dict) -> Experiment:
    """
    Experiment for a validated config, reused across tasks of the same process.

    At most LAB_EXPERIMENT_CACHE experiments are kept; the least recently
    used one is dropped first.
    """
    key = config_hash(config)
    if key in _CACHE:
        _CACHE.move_to_end(key)
        return _CACHE[key]
    experiment = _CACHE[key] = build_experiment(config)
    while len(_CACHE) > max(int(getattr(settings, "LAB_EXPERIMENT_CACHE", 4)), 1):
        dropped, _ = _CACHE.popitem(last=False)
        logger.debug(f"experiment {dropped[:8]} evicted from cache")
    return experiment
