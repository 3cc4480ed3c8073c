import copy

from django.test import SimpleTestCase
from rest_framework.exceptions import ValidationError

from lab.serializers import CheckRowSerializer, validated_config


BASE = {
    "model": {"kind": "fgn", "nu": 1, "d": 1, "alpha": 0.4, "k": 1},
    "sum": {"terms": [{"index": [1], "c": 1.0}]},
    "run": {"N_list": [16, 32], "replicates": 200, "seed": 3},
}


def config(**changes):
    raw = copy.deepcopy(BASE)
    for path, value in changes.items():
        block, key = path.split("__")
        raw[block][key] = value
    return raw


class ExperimentConfigTests(SimpleTestCase):
    def test_defaults_filled(self):
        cfg = validated_config(config())
        self.assertEqual(cfg["sampler"]["method"], "circulant-embedding")
        self.assertEqual((cfg["limit"]["T"], cfg["limit"]["M"]), (64.0, 512))
        self.assertEqual(cfg["comparison"]["tests"], ["ks", "moments", "variance"])
        self.assertEqual(cfg["comparison"]["ks_level"], 0.01)
        self.assertEqual(cfg["sum"]["tail_terms"], [])
        self.assertIsInstance(cfg["run"]["N_list"], list)

    def test_zero_replicates(self):
        with self.assertRaises(ValidationError):
            validated_config(config(run__replicates=0))

    def test_alpha_range(self):
        for alpha in (0.0, 1.0, 1.5):
            with self.assertRaises(ValidationError):
                validated_config(config(model__alpha=alpha))
        with self.assertRaises(ValidationError):
            validated_config(config(model__k=3, model__alpha=0.4, sum__terms=[{"index": [3], "c": 1.0}]))

    def test_term_order(self):
        with self.assertRaises(ValidationError):
            validated_config(config(sum__terms=[{"index": [2], "c": 1.0}]))
        with self.assertRaises(ValidationError):
            validated_config(config(sum__tail_terms=[{"index": [1], "c": 1.0}]))
        with self.assertRaises(ValidationError):
            validated_config(config(sum__terms=[{"index": [1, 0], "c": 1.0}]))

    def test_t_vectors(self):
        cfg = validated_config(config(sum__t_list=[[0.5], [1.0]]))
        self.assertEqual(cfg["sum"]["t_list"], [[0.5], [1.0]])
        with self.assertRaises(ValidationError):
            validated_config(config(sum__t_list=[[0.5, 0.5]]))
        with self.assertRaises(ValidationError):
            validated_config(config(sum__t_list=[[-0.5]]))

    def test_combination_length(self):
        raw = config(sum__t_list=[[0.5], [1.0]])
        raw["comparison"] = {"combination": [1.0]}
        with self.assertRaises(ValidationError):
            validated_config(raw)
        raw["comparison"] = {"combination": [1.0, -1.0]}
        self.assertEqual(validated_config(raw)["comparison"]["combination"], [1.0, -1.0])

    def test_ks_needs_replicates(self):
        with self.assertRaises(ValidationError):
            validated_config(config(run__replicates=50))
        raw = config(run__replicates=50)
        raw["comparison"] = {"tests": ["moments"]}
        self.assertEqual(validated_config(raw)["run"]["replicates"], 50)

    def test_odd_cells(self):
        raw = config()
        raw["limit"] = {"T": 8.0, "M": 33}
        with self.assertRaises(ValidationError):
            validated_config(raw)

    def test_n_list_increasing(self):
        with self.assertRaises(ValidationError):
            validated_config(config(run__N_list=[32, 16]))

    def test_fgn_on_the_plane(self):
        with self.assertRaises(ValidationError):
            validated_config(config(model__nu=2))


class CheckRowTests(SimpleTestCase):
    def test_row(self):
        row = CheckRowSerializer(data={"check": "hermite", "value": 0.0, "threshold": 1e-10, "passed": True})
        self.assertTrue(row.is_valid(), row.errors)
        self.assertEqual(row.validated_data["detail"], "")
