"""
Experiment orchestration behind the management commands.

Every runner takes a validated config (see `lab.serializers.validated_config`),
fans replicates out through the Celery tasks in `lab.tasks`, and writes CSV
files plus a JSON manifest into the output directory.  Rows carry the
(config hash, seed, replicates) provenance columns.
"""
import logging
import math
from pathlib import Path

import numpy as np
from django.conf import settings

from .exceptions import DimensionalityError, InstabilityError, LabError, PSDViolationError
from .experiment import Experiment, get_experiment
from .serializers import CheckRowSerializer, ConvergenceRowSerializer, validated_config
from .services.field_sampler import FieldSampler, SamplerConfig, sampler_covariance
from .services.hermite import (
    HermiteExpansion,
    TailExpansion,
    bivariate_hermite_moment,
    cross_moment_bound,
    index_maps,
    multi_indices,
)
from .services.lrd_model import (
    IsotropicFactor,
    LatticeDims,
    LongRangeParams,
    SlowVarying,
    SmoothFactor,
    SpectralDensityModel,
    covariance_table,
    estimate_angular,
    fgn_covariance_table,
    trigonometric_covariance_table,
    verify_lrd_condition,
)
from .services.quadrature import CellGrid
from .services.spectral_measure import (
    HOMOGENEITY_SCALES,
    LimitSpectralModel,
    bump_battery,
    covariance_from_measure,
    density_measure,
    homogeneity_residual,
    limit_grid_measure,
    mu_N_fourier,
    mu_N_tail_mass,
    mu_N_total,
    phi_N_lattice,
    quadratic_form_measures,
    rescale_measure,
    test_function_integral,
)
from .services.statistics import (
    cf_distance,
    is_decreasing,
    ks_critical_value,
    ks_distance,
    moment_table,
    moment_z_scores,
    relative_change,
)
from .services.sums import exact_covariance_rect, tail_second_moment
from .services.wiener_ito import KernelSpec, LimitLawSampler, kernel_convergence_sup, self_similarity_check
from .tasks import lattice_sums, limit_draws
from .utils import Budget, load_yaml, output_dir, provenance, rng_stream, write_csv, write_json, write_manifest

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCES = {
    "ks_final": 0.05,
    "tail_ks_change": 0.02,
    "tail_ratio": 0.25,
    "joint_covariance": 0.05,
    "variance_final_change": 0.02,
    "limit_variance": 0.05,
    "partition_refinement": 0.05,
}

DEFAULT_DIAGNOSTICS = {
    "N_list": [16, 32, 64, 128, 256, 512, 1024],
    "cells": 2048,
    "extent": 4.0,
    "mu_N_list": [32, 64, 128],
    "mu_cells": 1024,
    "T_list": [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
    "tail_fraction": 0.1,
    "phi_N": 64,
    "phi_points": 20,
    "phi_max_shift": 8,
    "variance_N_list": None,
    "self_similarity_replicates": 10_000,
    "sampler_N": 256,
    "sampler_replicates": 100_000,
    "ks_trials": 100,
    "ks_sample": 10_000,
}


def load_config(path) -> dict:
    return validated_config(load_yaml(path))


def _tolerance(config: dict, name: str) -> float:
    return float(config["comparison"].get("tolerances", {}).get(name, DEFAULT_TOLERANCES[name]))


def _diagnostic(config: dict, name: str):
    value = config["comparison"].get("diagnostics", {}).get(name)
    return DEFAULT_DIAGNOSTICS[name] if value is None else value


def _out(config: dict, out=None) -> Path:
    return output_dir(out or config["output"].get("dir") or None)


def _name(config: dict, name: str) -> str:
    prefix = config["output"].get("prefix", "")
    return f"{prefix}{name}"


def _seeds(experiment: Experiment, seed: int | None) -> list[int]:
    return experiment.seeds(seed) or [int(settings.LAB_SEED)]


def _check(name: str, value, threshold, passed: bool, detail: str = "") -> dict:
    row = {
        "check": name,
        "value": None if value is None or not math.isfinite(value) else float(value),
        "threshold": None if threshold is None else float(threshold),
        "passed": bool(passed),
        "detail": detail,
    }
    serializer = CheckRowSerializer(data=row)
    serializer.is_valid(raise_exception=True)
    icon = "✅" if passed else "⚠️"
    logger.info(f"{icon} {name}: value={row['value']} threshold={row['threshold']} {detail}")
    return row


def _write_checks(path: Path, checks: list[dict], stamp: dict) -> Path:
    header = ["check", "value", "threshold", "passed", "detail"]
    return write_csv(path, header, ([c[h] for h in header] for c in checks), stamp)


def _t_label(t) -> str:
    return "S_N(t=" + ",".join(f"{v:g}" for v in t) + ")"


# ==============================
# simulate / sums / limit
# ==============================
def run_simulate(config: dict, seed: int | None = None, out=None, budget: Budget | None = None) -> list[Path]:
    """Field samples on B_N for every N of the run, plus the target covariance table."""
    experiment = get_experiment(config)
    seed = _seeds(experiment, seed)[0]
    budget = budget or Budget()
    out = _out(config, out)
    stamp = provenance(config, seed, experiment.replicates)
    nu = experiment.dims.nu
    paths = []

    table = experiment.cov.restricted(min(experiment.cov.max_lag, max(1, max(experiment.N_list) - 1)))
    lag_cols = [f"p{l + 1}" for l in range(nu)]
    paths.append(write_csv(out / f"{_name(config, 'covariance')}.csv", lag_cols + ["j", "jp", "r"], table.rows(), stamp))

    for done, N in enumerate(experiment.N_list, start=1):
        sampler = experiment.field_sampler(N, seed)
        rows = (row for rep in range(experiment.replicates) for row in sampler.sample(rep).csv_rows())
        header = ["replicate"] + lag_cols + ["j", "value"]
        paths.append(write_csv(out / f"{_name(config, 'fields')}_N{N}.csv", header, rows, stamp))
        if sampler.clipped:
            logger.warning(f"⚠️ N={N}: circulant spectrum clipped by {sampler.clipped:.2e}")
        budget.project(done, len(experiment.N_list), "simulate")
    write_manifest(out, _name(config, "simulate"), config, seed, experiment.replicates)
    return paths


def run_sums(config: dict, seed: int | None = None, out=None, budget: Budget | None = None) -> Path:
    """S_N and S_N(t) batches; exact variances in the manifest when the model is diagonal."""
    experiment = get_experiment(config)
    seed = _seeds(experiment, seed)[0]
    budget = budget or Budget()
    out = _out(config, out)
    stamp = provenance(config, seed, experiment.replicates)
    exact = {}
    rows = []
    for done, N in enumerate(experiment.N_list, start=1):
        values = lattice_sums(config, N, seed, experiment.replicates, ("full",))["full"]
        rows.extend([N, rep, *row] for rep, row in enumerate(values.tolist()))
        if experiment.cov.is_diagonal():
            ones = np.ones(experiment.dims.nu)
            exact[N] = exact_covariance_rect(experiment.spec, experiment.cov, N, ones, ones)
        budget.project(done, len(experiment.N_list), "sums")
    header = ["N", "replicate", "S_N"] + [_t_label(t) for t in experiment.t_list]
    path = write_csv(out / f"{_name(config, 'sums')}.csv", header, rows, stamp)
    write_manifest(out, _name(config, "sums"), config, seed, experiment.replicates, {"exact_variance": exact})
    return path


def run_limit(config: dict, seed: int | None = None, out=None, budget: Budget | None = None) -> Path:
    """S_0 and S_0(t) batches from the discretized multiple integral."""
    experiment = get_experiment(config)
    seed = _seeds(experiment, seed)[0]
    budget = budget or Budget()
    out = _out(config, out)
    t_all = [np.ones(experiment.dims.nu)] + experiment.t_list
    values = limit_draws(config, seed, experiment.replicates, t_all)
    budget.check("limit")
    header = ["replicate", "S_0"] + [_t_label(t).replace("S_N", "S_0") for t in experiment.t_list]
    rows = ([rep, *row] for rep, row in enumerate(values.tolist()))
    path = write_csv(out / f"{_name(config, 'limit')}.csv", header, rows, provenance(config, seed, experiment.replicates))
    write_manifest(out, _name(config, "limit"), config, seed, experiment.replicates,
                   {"partition": {"T": experiment.partition.T, "M": experiment.partition.M}})
    return path


# ==============================
# Convergence experiment
# ==============================
def _comparison_row(stamp: dict, N: int, statistic: str, lattice: np.ndarray, limit: np.ndarray,
                    exact: float | None, level: float, cf_u_max: float | None) -> dict:
    a, b = moment_table(lattice), moment_table(limit)
    z = moment_z_scores(a, b)
    row = {
        **stamp,
        "N": N,
        "statistic": statistic,
        "ks": ks_distance(lattice, limit),
        "ks_critical": ks_critical_value(lattice.size, limit.size, level),
        "cf_distance": cf_distance(lattice, limit, cf_u_max) if cf_u_max is not None else None,
        "lattice_mean": a.mean,
        "lattice_variance": a.variance,
        "limit_mean": b.mean,
        "limit_variance": b.variance,
        "exact_variance": exact,
        "variance_delta": None if not exact else (a.variance - exact) / exact,
        "z_mean": z["mean"],
        "z_variance": z["variance"],
        "z_skewness": z["skewness"],
        "z_kurtosis": z["kurtosis"],
    }
    serializer = ConvergenceRowSerializer(data=row)
    serializer.is_valid(raise_exception=True)
    return row


def _joint_covariance_error(experiment: Experiment, N: int, limit_t: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Largest entrywise relative gap between the exact lattice covariance of (S_N(t_p)) and the limit sample."""
    t_list = experiment.t_list
    exact = np.empty((len(t_list), len(t_list)))
    H = experiment.spec.H
    for a, ta in enumerate(t_list):
        for b, tb in enumerate(t_list[a:], start=a):
            exact[a, b] = exact[b, a] = exact_covariance_rect(experiment.spec, experiment.cov, N, ta, tb, H=H)
    sampled = np.atleast_2d(np.cov(limit_t, rowvar=False))
    # absolute gap on entries whose exact value is 0
    scale = np.where(np.abs(exact) > 0, np.abs(exact), 1.0)
    return float((np.abs(sampled - exact) / scale).max()), exact, sampled


def run_convergence_experiment(config: dict, seed: int | None = None, out=None, budget: Budget | None = None) -> dict:
    """
    For each seed and N: S_N (and S_N(t)) replicates against as many S_0 (S_0(t))
    replicates, with KS distances, moment z-scores, characteristic-function
    distances and exact-variance deltas.  Returns the comparison report.
    """
    experiment = get_experiment(config)
    budget = budget or Budget()
    out = _out(config, out)
    seeds = _seeds(experiment, seed)
    R = experiment.replicates
    comparison = config["comparison"]
    level = float(comparison["ks_level"])
    cf_u_max = float(comparison["cf_u_max"]) if "cf" in comparison["tests"] else None
    has_tail = experiment.spec.H1 is not None
    diagonal = experiment.cov.is_diagonal()
    functionals = ("order_k", "full") if has_tail else ("order_k",)
    ones = np.ones(experiment.dims.nu)
    t_all = [ones] + experiment.t_list
    combination = [float(c) for c in comparison.get("combination", [])]

    rows, joint = [], []
    units = len(seeds) * len(experiment.N_list)
    done = 0
    for s in seeds:
        stamp = provenance(config, s, R)
        limit = limit_draws(config, s, R, t_all)
        for N in experiment.N_list:
            sums = lattice_sums(config, N, s, R, functionals)
            exact = {}
            if diagonal and "variance" in comparison["tests"]:
                for col, t in enumerate(t_all):
                    exact[col] = exact_covariance_rect(experiment.spec, experiment.cov, N, t, t, H=experiment.spec.H)
            for col, t in enumerate(t_all):
                label = "S_N" if col == 0 else _t_label(t)
                rows.append(_comparison_row(stamp, N, label, sums["order_k"][:, col], limit[:, col],
                                            exact.get(col), level, cf_u_max))
            if has_tail:
                rows.append(_comparison_row(stamp, N, "S_N+tail", sums["full"][:, 0], limit[:, 0], None, level, cf_u_max))
            if combination and len(combination) == len(experiment.t_list):
                C = np.asarray(combination)
                rows.append(_comparison_row(stamp, N, "combination", sums["order_k"][:, 1:] @ C, limit[:, 1:] @ C,
                                            None, level, cf_u_max))
            if diagonal and experiment.t_list:
                error, exact_matrix, sampled = _joint_covariance_error(experiment, N, limit[:, 1:])
                joint.append({"seed": s, "N": N, "relative_error": error,
                              "exact": exact_matrix.tolist(), "limit": sampled.tolist()})
            done += 1
            budget.project(done, units, "convergence experiment")

    summary, checks = _summarize_convergence(config, experiment, rows, joint, seeds)
    header = list(ConvergenceRowSerializer().fields)
    stamp_keys = ["config_hash", "seed", "replicates"]
    data_keys = [h for h in header if h not in stamp_keys]
    write_csv(out / f"{_name(config, 'convergence')}.csv", stamp_keys + data_keys,
              ([row[h] for h in stamp_keys + data_keys] for row in rows))
    _write_checks(out / f"{_name(config, 'convergence_checks')}.csv", checks, provenance(config, seeds[0], R))
    report = {"rows": rows, "summary": summary, "joint_covariance": joint, "checks": checks}
    write_json(out / f"{_name(config, 'convergence')}.json", report)
    write_manifest(out, _name(config, "converge"), config, seeds[0], R, {"seeds": seeds})
    return report


def _summarize_convergence(config: dict, experiment: Experiment, rows: list[dict], joint: list[dict],
                           seeds: list[int]) -> tuple[dict, list[dict]]:
    summary = {}
    for statistic in sorted({row["statistic"] for row in rows}):
        per_N = []
        for N in experiment.N_list:
            values = [row["ks"] for row in rows if row["statistic"] == statistic and row["N"] == N]
            per_N.append(float(np.mean(values)))
        summary[statistic] = {"N": experiment.N_list, "mean_ks": per_N}

    checks = []
    main = summary["S_N"]["mean_ks"]
    checks.append(_check("ks_decreasing", main[-1], None, is_decreasing(main),
                         f"mean KS over {len(seeds)} seed(s): {[round(v, 4) for v in main]}"))
    threshold = _tolerance(config, "ks_final")
    checks.append(_check("ks_final", main[-1], threshold, main[-1] < threshold, f"N={experiment.N_list[-1]}"))
    if "S_N+tail" in summary:
        change = abs(summary["S_N+tail"]["mean_ks"][-1] - main[-1])
        threshold = _tolerance(config, "tail_ks_change")
        checks.append(_check("tail_ks_change", change, threshold, change < threshold, "adding the tail expansion"))
    if joint:
        last = [j["relative_error"] for j in joint if j["N"] == experiment.N_list[-1]]
        worst = max(last)
        threshold = _tolerance(config, "joint_covariance")
        checks.append(_check("joint_covariance", worst, threshold, worst <= threshold,
                             "exact lattice vs limit-sample covariance of S(t_1..t_K)"))
    return summary, checks


# ==============================
# Exact variance sequence
# ==============================
def run_variance_convergence(config: dict, seed: int | None = None, out=None, budget: Budget | None = None) -> dict:
    """Exact E S_N^2 along N, successive relative changes, Monte-Carlo Var S_0 and tail second moments."""
    experiment = get_experiment(config)
    budget = budget or Budget()
    out = _out(config, out)
    seed = _seeds(experiment, seed)[0]
    N_list = list(_diagnostic(config, "variance_N_list") or experiment.N_list)
    if max(N_list) - 1 > experiment.cov.max_lag:
        raise LabError(f"variance sequence needs lags up to {max(N_list) - 1}; the covariance table stops at {experiment.cov.max_lag}")
    ones = np.ones(experiment.dims.nu)
    spec, cov = experiment.spec, experiment.cov

    exact = [exact_covariance_rect(spec, cov, N, ones, ones, H=spec.H) for N in N_list]
    changes = relative_change(exact)
    budget.check("variance sequence")
    limit = limit_draws(config, seed, experiment.replicates)[:, 0]
    limit_variance = float(limit.var(ddof=1))
    limit_gap = abs(limit_variance - exact[-1]) / exact[-1]

    checks = [
        _check("variance_changes_decreasing", changes[-1] if changes else None, None, is_decreasing(changes),
               f"relative changes {[round(c, 5) for c in changes]}"),
        _check("variance_final_change", changes[-1] if changes else None, _tolerance(config, "variance_final_change"),
               bool(changes) and changes[-1] < _tolerance(config, "variance_final_change"), f"N={N_list[-1]}"),
        _check("limit_variance", limit_gap, _tolerance(config, "limit_variance"),
               limit_gap <= _tolerance(config, "limit_variance"),
               f"Var S_0={limit_variance:.5g} vs E S_N^2={exact[-1]:.5g}"),
    ]

    tail = None
    if spec.H1 is not None:
        tail = [tail_second_moment(spec, cov, N) for N in N_list]
        ratio = tail[-1] / tail[0] if tail[0] > 0 else 0.0
        checks.append(_check("tail_monotone", tail[-1], None, is_decreasing(tail, strict=False),
                             f"tail second moments {[f'{v:.4g}' for v in tail]}"))
        checks.append(_check("tail_ratio", ratio, _tolerance(config, "tail_ratio"),
                             ratio <= _tolerance(config, "tail_ratio"), f"N={N_list[-1]} against N={N_list[0]}"))

    stamp = provenance(config, seed, experiment.replicates)
    rows = ([N, v, changes[i - 1] if i else None, tail[i] if tail else None] for i, (N, v) in enumerate(zip(N_list, exact)))
    write_csv(out / f"{_name(config, 'variance')}.csv", ["N", "exact_variance", "relative_change", "tail_second_moment"],
              rows, stamp)
    _write_checks(out / f"{_name(config, 'variance_checks')}.csv", checks, stamp)
    report = {"N": N_list, "exact_variance": exact, "relative_change": changes, "limit_variance": limit_variance,
              "tail_second_moment": tail, "checks": checks}
    write_json(out / f"{_name(config, 'variance')}.json", report)
    return report


# ==============================
# Spectral diagnostics
# ==============================
def _rectangles(nu: int) -> list[tuple[np.ndarray, np.ndarray]]:
    if nu == 1:
        bounds = [(0.5, 1.5), (-2.0, -0.25), (0.1, 3.0), (-1.0, 0.5)]
        return [(np.array([lo]), np.array([hi])) for lo, hi in bounds]
    return [(np.array([0.5, 0.25]), np.array([1.5, 1.0])), (np.array([-2.0, 0.1]), np.array([-0.5, 1.2]))]


def _kernel_indices(H: HermiteExpansion) -> list[tuple]:
    maps = index_maps(H.k, H.d)
    return [maps.sequence(index) for index, c in H.items() if c != 0.0]


def run_diagnostics(config: dict, out=None, budget: Budget | None = None) -> dict:
    """
    Vague-convergence and tightness diagnostics of the rescaled spectral
    measures: test-function integrals along N, homogeneity residuals of the
    limit, quadratic-form measures, tail masses of mu^(N) and the lattice
    Fourier transform phi^(N) against its quadrature.
    """
    experiment = get_experiment(config)
    if experiment.dims.nu != 1:
        raise DimensionalityError("spectral diagnostics use product quadrature on the line (nu = 1)")
    budget = budget or Budget()
    out = _out(config, out)
    model, L = experiment.model, experiment.L
    alpha = model.params.alpha
    limit_model = LimitSpectralModel.from_density_model(model)
    checks = []

    # ∫ f dG^(N) against ∫ f dG^(0)
    N_list = [int(N) for N in _diagnostic(config, "N_list")]
    extent, cells = float(_diagnostic(config, "extent")), int(_diagnostic(config, "cells"))
    battery = bump_battery(1)
    vague_rows, errors = [], np.zeros((len(battery), len(N_list)))
    for col, N in enumerate(N_list):
        grid = CellGrid.uniform(min(N * np.pi, extent), cells)
        G_N = density_measure(model, grid, scale=N, L=L)
        G_0 = limit_grid_measure(limit_model, grid)
        for row, bump in enumerate(battery):
            gap = float(np.abs(test_function_integral(G_N, bump) - test_function_integral(G_0, bump)).max())
            errors[row, col] = gap
            vague_rows.append([N, row, float(bump.center[0]), bump.width, gap])
    monotone = all(is_decreasing(errors[row]) for row in range(len(battery)))
    checks.append(_check("vague_convergence", float(errors[:, -1].max()), None, monotone,
                         f"bump errors decrease over N={N_list}"))
    budget.check("vague convergence")

    homogeneity = max(homogeneity_residual(limit_model, lo, hi, t)
                      for lo, hi in _rectangles(1) for t in HOMOGENEITY_SCALES)
    checks.append(_check("homogeneity", homogeneity, 1e-8, homogeneity <= 1e-8, "G^(0)(tA) = t^alpha G^(0)(A)"))

    if model.dims.d > 1:
        G_0 = limit_grid_measure(limit_model, CellGrid.uniform(extent, cells))
        try:
            for j in range(model.dims.d):
                for jp in range(j + 1, model.dims.d):
                    quadratic_form_measures(G_0, j, jp)
            checks.append(_check("quadratic_forms", 0.0, 0.0, True, "R and S non-negative on every cell"))
        except PSDViolationError as e:
            checks.append(_check("quadratic_forms", None, 0.0, False, str(e)))

    # mu^(N): tail masses and the Fourier transform against the lattice sums
    torus = density_measure(model, CellGrid.torus(int(_diagnostic(config, "mu_cells"))))
    T_list = [float(T) for T in _diagnostic(config, "T_list")]
    tail_rows = []
    fraction = float(_diagnostic(config, "tail_fraction"))
    T0 = None
    sequences = _kernel_indices(experiment.spec.H)
    worst_by_T = np.zeros(len(T_list))
    for N in [int(N) for N in _diagnostic(config, "mu_N_list")]:
        G_N = rescale_measure(torus, N, L, alpha)
        h_kernel = KernelSpec("hN", model.params.k, 1, N=N)
        for indices in sequences:
            total = mu_N_total(h_kernel, G_N, indices)
            masses = [mu_N_tail_mass(h_kernel, G_N, indices, T) for T in T_list]
            if not is_decreasing(masses, strict=False):
                logger.warning(f"⚠️ tail masses not monotone for N={N}, indices={indices}")
            worst_by_T = np.maximum(worst_by_T, np.asarray(masses) / total)
            tail_rows.extend([N, "-".join(map(str, indices)), T, m, total] for T, m in zip(T_list, masses))
        budget.check("tail masses")
    below = [T for T, w in zip(T_list, worst_by_T) if w < fraction]
    T0 = below[0] if below else None
    checks.append(_check("tightness", None if T0 is None else float(worst_by_T[T_list.index(T0)]), fraction,
                         T0 is not None, f"T0={T0}"))

    phi_N = int(_diagnostic(config, "phi_N"))
    shift = int(_diagnostic(config, "phi_max_shift"))
    k = model.params.k
    cov_G = covariance_from_measure(torus, phi_N + k * shift)
    G_N = rescale_measure(torus, phi_N, L, alpha)
    h_kernel = KernelSpec("hN", k, 1, N=phi_N)
    rng = rng_stream(int(settings.LAB_SEED), 0, "lattice-points")
    points = rng.integers(-shift, shift + 1, size=(int(_diagnostic(config, "phi_points")), k, 1))
    phi_rows, phi_error = [], 0.0
    for indices in sequences:
        quadrature = mu_N_fourier(h_kernel, G_N, indices, points / phi_N)
        for p, q in zip(points, quadrature):
            lattice = phi_N_lattice(cov_G, indices, p, phi_N, alpha, L)
            gap = abs(lattice - q) / max(abs(lattice), 1e-300)
            phi_error = max(phi_error, gap)
            phi_rows.append(["-".join(map(str, indices)), *p.ravel().tolist(), lattice.real, q.real, gap])
    checks.append(_check("phi_lattice_vs_quadrature", phi_error, 1e-4, phi_error <= 1e-4, f"N={phi_N}"))

    # phi^(N)(0) is the lag sum behind the exact variance of a single term
    zero_gap = 0.0
    if experiment.cov.is_diagonal() and phi_N - 1 <= experiment.cov.max_lag:
        ones = np.ones(1)
        for index, c in experiment.spec.H.items():
            single = HermiteExpansion(d=model.dims.d, k=k, coefficients={index: 1.0})
            lattice = phi_N_lattice(experiment.cov, index_maps(k, model.dims.d).sequence(index),
                                    np.zeros((k, 1), dtype=int), phi_N, alpha, L).real
            factorials = float(np.prod([math.factorial(v) for v in index]))
            exact = exact_covariance_rect(experiment.spec, experiment.cov, phi_N, ones, ones, H=single)
            zero_gap = max(zero_gap, abs(factorials * lattice - exact) / exact)
        checks.append(_check("phi_zero_lag_sum", zero_gap, 1e-10, zero_gap <= 1e-10, "phi^(N)(0) vs exact variance"))

    stamp = provenance(config, int(settings.LAB_SEED), 0)
    write_csv(out / f"{_name(config, 'vague')}.csv", ["N", "bump", "center", "width", "abs_error"], vague_rows, stamp)
    write_csv(out / f"{_name(config, 'mu_tail')}.csv", ["N", "indices", "T", "tail_mass", "total_mass"], tail_rows, stamp)
    write_csv(out / f"{_name(config, 'phi')}.csv",
              ["indices"] + [f"p{s + 1}" for s in range(k)] + ["lattice", "quadrature", "relative_gap"], phi_rows, stamp)
    _write_checks(out / f"{_name(config, 'spectral_checks')}.csv", checks, stamp)
    report = {"homogeneity": homogeneity, "T0": T0, "phi_error": phi_error, "checks": checks}
    write_manifest(out, _name(config, "spectral"), config, int(settings.LAB_SEED), 0, {"T0": T0})
    return report


# ==============================
# Property battery
# ==============================
def check_hermite_identities(max_order: int = 5, correlations=(-0.9, -0.3, 0.0, 0.3, 0.9)) -> dict:
    worst = 0.0
    for r in correlations:
        for m in range(max_order + 1):
            for n in range(max_order + 1):
                target = math.factorial(n) * r ** n if m == n else 0.0
                worst = max(worst, abs(bivariate_hermite_moment(m, n, r) - target))
    return _check("hermite_identities", worst, 1e-6, worst <= 1e-6, f"orders <= {max_order}")


def check_cross_moment_bound(max_order: int = 4) -> dict:
    """Every single-term tail and the all-ones tail, d <= 2, on a 0.1-step grid of diagonal correlations."""
    grid = np.round(np.arange(-1.0, 1.0 + 1e-9, 0.1), 10)
    worst_slack = math.inf
    cases = 0
    for d in (1, 2):
        for k in range(1, max_order):
            tails = [index for order in range(k + 1, max_order + 1) for index in multi_indices(order, d)]
            families = [{index: 1.0} for index in tails] + [{index: 1.0 for index in tails}]
            for coefficients in families:
                H1 = TailExpansion(d=d, k=k, coefficients=coefficients)
                for r in np.stack(np.meshgrid(*([grid] * d), indexing="ij"), axis=-1).reshape(-1, d):
                    report = cross_moment_bound(H1, np.diag(r))
                    worst_slack = min(worst_slack, report.bound - report.lhs)
                    cases += 1
    return _check("cross_moment_bound", worst_slack, -1e-10, worst_slack >= -1e-10, f"{cases} exact cases")


def check_lrd_condition(alpha: float = 0.4, max_lag: int = 10_000, thresholds=(100.0, 1000.0, 10000.0),
                        quadrature_lag: int = 8, resolution: int = 1 << 16) -> list[dict]:
    """
    b = 1 and h = ((1 + cos u)/2)^2.  The quadrature table covers the near
    lags and must agree with the trigonometric table there; far lags come
    from the trigonometric table, whose grid-free values stay accurate at
    |p| = max_lag.  a is fitted along the far rays, the closed form
    2 Γ(alpha) cos(pi alpha / 2) h(0) is only compared against the fit.
    """
    model = SpectralDensityModel(LatticeDims(1, 1), LongRangeParams(alpha, 1), IsotropicFactor(np.eye(1)),
                                 SmoothFactor(kind="bump"))
    table = trigonometric_covariance_table(model, max_lag)
    near = covariance_table(model, quadrature_lag, resolution)
    gap = float(np.abs(near.r - table.restricted(quadrature_lag).r).max() / table.lag0()[0, 0])
    checks = [_check("lrd_quadrature_agreement", gap, 1e-3, gap < 1e-3,
                     f"quadrature vs trigonometric table up to lag {quadrature_lag}, {resolution} cells")]

    rays = [[max_lag // 2], [3 * max_lag // 4], [max_lag]]
    try:
        a = estimate_angular(table, model.params, SlowVarying(), rays)
    except InstabilityError as e:
        checks.append(_check("lrd_condition", None, 0.05, False, str(e)))
        return checks
    fitted = float(a(np.array([[1.0]]))[0, 0, 0].real)
    closed = 2.0 * math.gamma(alpha) * math.cos(math.pi * alpha / 2.0) * model.h0
    errors = verify_lrd_condition(table, model.params, SlowVarying(), a, thresholds)
    values = [errors[T] for T in thresholds]
    drift = abs(fitted - closed) / closed
    checks.append(_check("lrd_condition", values[-1], 0.05,
                         is_decreasing(values) and values[-1] < 0.05 and drift < 1e-2,
                         f"sup relative errors {[f'{v:.3g}' for v in values]}; "
                         f"fitted a={fitted:.6g}, closed form {closed:.6g}"))
    return checks


def check_kernel_convergence(N_list=(128, 256, 512), T: float = 5.0, grid: int = 101) -> dict:
    sups = [kernel_convergence_sup(N, T, grid, k=2, nu=1) for N in N_list]
    ratios = [a / b for a, b in zip(sups, sups[1:])]
    passed = all(1.6 <= r <= 2.4 for r in ratios)
    return _check("kernel_convergence", min(ratios), 1.6, passed, f"ratios {[round(r, 3) for r in ratios]}")


def check_self_similarity(experiment: Experiment, seed: int, replicates: int) -> list[dict]:
    sampler = experiment.limit_sampler(seed)
    checks = []
    for u in (0.5, 2.0):
        report = self_similarity_check(sampler, u, np.ones(experiment.dims.nu), range(replicates))
        checks.append(_check(f"self_similarity_u{u:g}", report.variance_z, 3.0, abs(report.variance_z) <= 3.0,
                             f"ratio {report.variance_ratio:.4g} vs {report.variance_target:.4g}"))
        checks.append(_check(f"kernel_identity_u{u:g}", report.kernel_residual, 1e-12,
                             report.kernel_residual <= 1e-12))
    return checks


def check_partition_refinement(experiment: Experiment, seed: int, replicates: int, tolerance: float) -> dict:
    """Var S_0 at (T, M) against (2T, 2M), both drawn with the same seed."""
    coarse = experiment.limit_sampler(seed)
    try:
        fine = LimitLawSampler(experiment.spec.H, experiment.limit_model, experiment.partition.refined(), seed)
        v_fine = float(fine.sample(range(replicates))[:, 0].var(ddof=1))
    except DimensionalityError as e:
        return _check("partition_refinement", None, tolerance, False, str(e))
    v_coarse = float(coarse.sample(range(replicates))[:, 0].var(ddof=1))
    change = abs(v_fine - v_coarse) / v_coarse
    return _check("partition_refinement", change, tolerance, change < tolerance,
                  f"T={experiment.partition.T:g}, M={experiment.partition.M}: {v_coarse:.5g} -> {v_fine:.5g}")


def check_sampler(seed: int, N: int, replicates: int, alpha: float = 0.4, d: int = 2, max_lag: int = 8) -> list[dict]:
    cov = fgn_covariance_table(alpha, d, 2 * N)
    checks = []
    for method in ("direct-factorization", "circulant-embedding"):
        sampler = FieldSampler(cov, N, SamplerConfig(method=method, seed=seed))
        estimate = sampler_covariance(sampler, replicates, max_lag)
        coverage = estimate.coverage(cov)
        checks.append(_check(f"sampler_{method}", coverage, 0.95, coverage >= 0.95, f"N={N}, {replicates} replicates"))
        again = FieldSampler(cov, N, SamplerConfig(method=method, seed=seed)).sample(7).values
        same = sampler.sample(7).values.tobytes() == again.tobytes()
        checks.append(_check(f"reproducible_{method}", None, None, same, "replicate 7 drawn twice"))
    return checks


def check_ks_calibration(seed: int, trials: int, size: int, level: float = 0.01) -> dict:
    """Fraction of same-law KS distances below the critical value."""
    critical = ks_critical_value(size, size, level)
    hits = 0
    for trial in range(trials):
        a = rng_stream(seed, trial, "ks-a").standard_normal(size)
        b = rng_stream(seed, trial, "ks-b").standard_normal(size)
        hits += ks_distance(a, b) < critical
    fraction = hits / trials
    return _check("ks_calibration", fraction, 0.95, fraction >= 0.95, f"critical {critical:.4f}")


def run_property_checks(config: dict, seed: int | None = None, out=None, budget: Budget | None = None) -> list[dict]:
    """The acceptance battery; model-dependent checks use the config's model."""
    experiment = get_experiment(config)
    seed = _seeds(experiment, seed)[0]
    budget = budget or Budget()
    out = _out(config, out)
    checks = [check_hermite_identities(), check_cross_moment_bound()]
    budget.check("property checks")
    checks.extend(check_lrd_condition())
    checks.append(check_kernel_convergence())
    budget.check("property checks")
    if experiment.dims.nu == 1:
        checks.extend(run_diagnostics(config, out, budget)["checks"])
    checks.extend(check_self_similarity(experiment, seed, int(_diagnostic(config, "self_similarity_replicates"))))
    checks.append(check_partition_refinement(experiment, seed, int(_diagnostic(config, "self_similarity_replicates")),
                                             _tolerance(config, "partition_refinement")))
    budget.check("property checks")
    checks.extend(check_sampler(seed, int(_diagnostic(config, "sampler_N")), int(_diagnostic(config, "sampler_replicates"))))
    checks.append(check_ks_calibration(seed, int(_diagnostic(config, "ks_trials")), int(_diagnostic(config, "ks_sample"))))
    budget.check("property checks")

    stamp = provenance(config, seed, experiment.replicates)
    _write_checks(out / f"{_name(config, 'checks')}.csv", checks, stamp)
    write_manifest(out, _name(config, "check"), config, seed, experiment.replicates,
                   {"passed": sum(c["passed"] for c in checks), "total": len(checks)})
    return checks
