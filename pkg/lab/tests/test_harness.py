import csv
import json
import tempfile
from pathlib import Path

import yaml
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase, override_settings

from lab.harness import (
    check_cross_moment_bound,
    check_hermite_identities,
    check_kernel_convergence,
    check_lrd_condition,
    check_ks_calibration,
    check_sampler,
    load_config,
)


FGN = {
    "model": {"kind": "fgn", "nu": 1, "d": 1, "alpha": 0.4, "k": 1},
    "sum": {"terms": [{"index": [1], "c": 1.0}], "t_list": [[0.5], [1.0]]},
    "limit": {"T": 8.0, "M": 32},
    "run": {"N_list": [16, 32], "replicates": 120, "seed": 2},
    "comparison": {"tests": ["ks", "moments", "variance", "cf"], "combination": [1.0, -1.0]},
}

DENSITY = {
    "model": {"kind": "density", "nu": 1, "d": 1, "alpha": 0.3, "k": 2,
              "h": {"kind": "bump", "power": 2}, "covariance": {"method": "exact"}},
    "sum": {"terms": [{"index": [2], "c": 1.0}], "tail_terms": [{"index": [3], "c": 0.5}]},
    "limit": {"T": 4.0, "M": 16},
    "run": {"N_list": [16], "replicates": 20, "seed": 1},
    "comparison": {
        "tests": ["moments"],
        "diagnostics": {"N_list": [16, 32], "cells": 256, "mu_N_list": [16], "mu_cells": 256,
                        "T_list": [1.0, 4.0, 16.0], "phi_N": 16, "phi_points": 4, "phi_max_shift": 2},
    },
}


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class PropertyCheckTests(SimpleTestCase):
    def test_hermite_identities(self):
        check = check_hermite_identities(max_order=4)
        self.assertTrue(check["passed"])
        self.assertLessEqual(check["value"], 1e-6)

    def test_cross_moment_bound(self):
        self.assertTrue(check_cross_moment_bound(max_order=3)["passed"])

    def test_kernel_convergence_rate(self):
        check = check_kernel_convergence(grid=41)
        self.assertTrue(check["passed"], check["detail"])

    def test_lrd_condition_uses_fitted_kernel(self):
        checks = {c["check"]: c for c in check_lrd_condition(max_lag=2000, thresholds=(10.0, 100.0, 1000.0))}
        self.assertTrue(checks["lrd_quadrature_agreement"]["passed"], checks["lrd_quadrature_agreement"]["detail"])
        self.assertTrue(checks["lrd_condition"]["passed"], checks["lrd_condition"]["detail"])
        self.assertIn("fitted a=", checks["lrd_condition"]["detail"])

    def test_ks_calibration(self):
        check = check_ks_calibration(seed=4, trials=40, size=500)
        self.assertEqual(check["check"], "ks_calibration")
        self.assertGreaterEqual(check["value"], 0.9)

    def test_sampler_checks(self):
        checks = {c["check"]: c for c in check_sampler(seed=1, N=16, replicates=1000, max_lag=3)}
        self.assertTrue(checks["reproducible_direct-factorization"]["passed"])
        self.assertTrue(checks["reproducible_circulant-embedding"]["passed"])
        self.assertGreaterEqual(checks["sampler_circulant-embedding"]["value"], 0.85)


class CommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.override = override_settings(LAB_OUTPUT_DIR=str(self.root / "default"), LAB_CHUNK_SIZE=64,
                                          CELERY_TASK_ALWAYS_EAGER=True)
        self.override.enable()

    def tearDown(self):
        self.override.disable()
        self.tmp.cleanup()

    def write_config(self, raw: dict, name: str = "cfg.yaml") -> Path:
        path = self.root / name
        path.write_text(yaml.safe_dump(raw), encoding="utf-8")
        return path

    def test_load_config(self):
        cfg = load_config(self.write_config(FGN))
        self.assertEqual(cfg["sampler"]["method"], "circulant-embedding")

    def test_simulate(self):
        raw = dict(FGN, run={"N_list": [4], "replicates": 3, "seed": 2}, comparison={"tests": ["moments"]})
        out = self.root / "sim"
        call_command("simulate", config=str(self.write_config(raw)), out=str(out))
        rows = read_rows(out / "fields_N4.csv")
        self.assertEqual(len(rows), 3 * 4)
        self.assertEqual(set(rows[0]), {"replicate", "p1", "j", "value", "config_hash", "seed", "replicates"})
        self.assertTrue((out / "covariance.csv").exists())
        self.assertTrue((out / "simulate_manifest.json").exists())

    def test_sums_and_seed_override(self):
        out = self.root / "sums"
        call_command("sums", config=str(self.write_config(FGN)), out=str(out), seed=11)
        rows = read_rows(out / "sums.csv")
        self.assertEqual(len(rows), 2 * 120)
        self.assertEqual({r["seed"] for r in rows}, {"11"})
        self.assertIn("S_N(t=0.5)", rows[0])
        manifest = json.loads((out / "sums_manifest.json").read_text(encoding="utf-8"))
        self.assertAlmostEqual(manifest["exact_variance"]["32"], 1.0, places=8)

    def test_limit(self):
        out = self.root / "limit"
        call_command("limit", config=str(self.write_config(FGN)), out=str(out))
        rows = read_rows(out / "limit.csv")
        self.assertEqual(len(rows), 120)
        self.assertIn("S_0(t=0.5)", rows[0])

    def test_converge(self):
        out = self.root / "converge"
        call_command("converge", config=str(self.write_config(FGN)), out=str(out))
        report = json.loads((out / "convergence.json").read_text(encoding="utf-8"))
        statistics = {row["statistic"] for row in report["rows"]}
        self.assertEqual(statistics, {"S_N", "S_N(t=0.5)", "S_N(t=1)", "combination"})
        self.assertEqual(len(report["joint_covariance"]), 2)
        names = {c["check"] for c in report["checks"]}
        self.assertTrue({"ks_decreasing", "ks_final", "joint_covariance"} <= names)
        variance = read_rows(out / "variance.csv")
        for row in variance:
            self.assertAlmostEqual(float(row["exact_variance"]), 1.0, places=8)
        self.assertTrue((out / "converge_manifest.json").exists())

    def test_spectral(self):
        out = self.root / "spectral"
        call_command("spectral", config=str(self.write_config(DENSITY)), out=str(out))
        checks = {r["check"]: r for r in read_rows(out / "spectral_checks.csv")}
        self.assertEqual(checks["homogeneity"]["passed"], "True")
        for name in ("vague.csv", "mu_tail.csv", "phi.csv", "spectral_manifest.json"):
            self.assertTrue((out / name).exists(), name)

    def test_output_prefix_and_default_dir(self):
        raw = dict(FGN, output={"prefix": "run1_"})
        call_command("limit", config=str(self.write_config(raw)))
        self.assertTrue((self.root / "default" / "run1_limit.csv").exists())

    def test_invalid_config(self):
        raw = dict(FGN, run={"N_list": [16], "replicates": 0, "seed": 2})
        with self.assertRaises(CommandError):
            call_command("sums", config=str(self.write_config(raw)))

    def test_missing_config_file(self):
        with self.assertRaises(CommandError):
            call_command("sums", config=str(self.root / "absent.yaml"))

    def test_budget(self):
        with self.assertRaises(CommandError):
            call_command("sums", config=str(self.write_config(FGN)), out=str(self.root / "b"), budget_seconds=-1.0)

    def test_system_check_without_config(self):
        call_command("check")
