from rest_framework import serializers


# ==============================
# Experiment config blocks
# ==============================
class TermSerializer(serializers.Serializer):
    index = serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=False)
    c = serializers.FloatField()


class ModelBlockSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=["fgn", "density", "white"], default="density")
    nu = serializers.IntegerField(min_value=1, max_value=2, default=1)
    d = serializers.IntegerField(min_value=1)
    alpha = serializers.FloatField()
    k = serializers.IntegerField(min_value=1)
    L = serializers.DictField(required=False, default=dict)
    b = serializers.DictField(required=False, default=dict)
    h = serializers.DictField(required=False, default=dict)
    covariance = serializers.DictField(required=False, default=dict)
    standardize = serializers.BooleanField(default=True)

    def validate(self, data):
        nu, k, alpha = data["nu"], data["k"], data["alpha"]
        if not 0.0 < alpha < nu / k:
            raise serializers.ValidationError({"alpha": f"must lie in (0, nu/k) = (0, {nu / k:.6g})"})
        if data["kind"] == "fgn" and nu != 1:
            raise serializers.ValidationError({"kind": "the fgn model is defined for nu = 1 only"})
        if data["L"].get("kind", "constant") not in ("constant", "log"):
            raise serializers.ValidationError({"L": "kind must be 'constant' or 'log'"})
        return data


class SamplerBlockSerializer(serializers.Serializer):
    method = serializers.ChoiceField(
        choices=["direct-factorization", "circulant-embedding", "spectral-grid"], default="circulant-embedding"
    )
    embedding_factor = serializers.IntegerField(min_value=2, default=2)
    clip_tolerance = serializers.FloatField(min_value=0.0, default=1e-6)


class SumBlockSerializer(serializers.Serializer):
    terms = TermSerializer(many=True)
    tail_terms = TermSerializer(many=True, required=False, default=list)
    t_list = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(min_value=0.0)), required=False, default=list
    )


class LimitBlockSerializer(serializers.Serializer):
    T = serializers.FloatField(min_value=0.0, default=64.0)
    M = serializers.IntegerField(min_value=2, default=512)

    def validate_M(self, value):
        if value % 2:
            raise serializers.ValidationError("cells per axis must be even")
        return value


class RunBlockSerializer(serializers.Serializer):
    N_list = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_empty=False)
    replicates = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0, required=False)
    seeds = serializers.ListField(child=serializers.IntegerField(min_value=0), required=False, default=list)

    def validate_N_list(self, value):
        if any(b <= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError("N list must be strictly increasing")
        return value


class ComparisonBlockSerializer(serializers.Serializer):
    tests = serializers.ListField(child=serializers.ChoiceField(choices=["ks", "moments", "cf", "variance"]),
                                  default=lambda: ["ks", "moments", "variance"])
    ks_level = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.01)
    cf_u_max = serializers.FloatField(min_value=0.0, default=3.0)
    combination = serializers.ListField(child=serializers.FloatField(), required=False, default=list)
    tolerances = serializers.DictField(child=serializers.FloatField(), required=False, default=dict)
    diagnostics = serializers.DictField(required=False, default=dict)


class OutputBlockSerializer(serializers.Serializer):
    dir = serializers.CharField(required=False, allow_blank=True, default="")
    prefix = serializers.CharField(required=False, allow_blank=True, default="")


class ExperimentConfigSerializer(serializers.Serializer):
    model = ModelBlockSerializer()
    sampler = SamplerBlockSerializer(required=False, default=dict)
    sum = SumBlockSerializer()
    limit = LimitBlockSerializer(required=False, default=dict)
    run = RunBlockSerializer()
    comparison = ComparisonBlockSerializer(required=False, default=dict)
    output = OutputBlockSerializer(required=False, default=dict)

    def validate(self, data):
        model, block = data["model"], data["sum"]
        for term in list(block["terms"]) + list(block.get("tail_terms", [])):
            if len(term["index"]) != model["d"]:
                raise serializers.ValidationError({"sum": f"multi-index {term['index']} does not have d={model['d']} entries"})
        for term in block["terms"]:
            if sum(term["index"]) != model["k"]:
                raise serializers.ValidationError({"sum": f"term {term['index']} is not of order k={model['k']}"})
        for term in block.get("tail_terms", []):
            if sum(term["index"]) < model["k"] + 1:
                raise serializers.ValidationError({"sum": f"tail term {term['index']} has order below k+1"})
        for t in block.get("t_list", []):
            if len(t) != model["nu"]:
                raise serializers.ValidationError({"sum": f"t-vector {t} does not have nu={model['nu']} components"})
        combination = data.get("comparison", {}).get("combination", [])
        if combination and len(combination) != len(block.get("t_list", [])):
            raise serializers.ValidationError({"comparison": "combination needs one coefficient per t-vector"})
        tests = data.get("comparison", {}).get("tests", [])
        if "ks" in tests and data["run"]["replicates"] < 100:
            raise serializers.ValidationError({"run": "distributional tests need at least 100 replicates"})
        return data


# ==============================
# Report rows
# ==============================
class ProvenanceSerializer(serializers.Serializer):
    config_hash = serializers.CharField()
    seed = serializers.IntegerField()
    replicates = serializers.IntegerField()


class ConvergenceRowSerializer(ProvenanceSerializer):
    N = serializers.IntegerField()
    statistic = serializers.CharField()
    ks = serializers.FloatField(min_value=0.0, max_value=1.0)
    ks_critical = serializers.FloatField()
    cf_distance = serializers.FloatField(allow_null=True)
    lattice_mean = serializers.FloatField()
    lattice_variance = serializers.FloatField()
    limit_mean = serializers.FloatField()
    limit_variance = serializers.FloatField()
    exact_variance = serializers.FloatField(allow_null=True)
    variance_delta = serializers.FloatField(allow_null=True)
    z_mean = serializers.FloatField()
    z_variance = serializers.FloatField()
    z_skewness = serializers.FloatField()
    z_kurtosis = serializers.FloatField()


class CheckRowSerializer(serializers.Serializer):
    check = serializers.CharField()
    value = serializers.FloatField(allow_null=True)
    threshold = serializers.FloatField(allow_null=True)
    passed = serializers.BooleanField()
    detail = serializers.CharField(allow_blank=True, default="")


def validated_config(raw: dict) -> dict:
    """Validated, defaults-filled experiment config; raises DRF ValidationError."""
    raw = dict(raw or {})
    for block in ("sampler", "limit", "comparison", "output"):
        if raw.get(block) is None:
            raw[block] = {}
    serializer = ExperimentConfigSerializer(data=raw)
    serializer.is_valid(raise_exception=True)
    return _plain(serializer.validated_data)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value
