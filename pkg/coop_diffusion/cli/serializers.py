"""
Validation of the JSON experiment config.

Field checks live on the serializers; cross-field checks (references between
sections, timesteps against `schedule.T`) run in `validate()`.
"""
import os

from rest_framework import serializers
from rest_framework.settings import api_settings

from ..exceptions import ImproperlyConfiguredExperiment, ParameterError, ShapeError
from ..models.base import Condition
from ..models.mixture import GaussianMixture
from ..numerics import DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_T
from ..sampling.pipelines import DEFAULT_T_STRUCT
from ..sampling.samplers import DEFAULT_NUM_STEPS


class ScheduleSerializer(serializers.Serializer):
    T = serializers.IntegerField(min_value=1, default=DEFAULT_T)
    beta_min = serializers.FloatField(default=DEFAULT_BETA_MIN)
    beta_max = serializers.FloatField(default=DEFAULT_BETA_MAX)
    kind = serializers.ChoiceField(choices=["linear"], default="linear")

    def validate(self, attrs):
        if not 0.0 < attrs["beta_min"] <= attrs["beta_max"] < 1.0:
            raise serializers.ValidationError(
                {"beta_max": "Need 0 < beta_min <= beta_max < 1."}
            )
        return attrs


class MixtureSerializer(serializers.Serializer):
    weights = serializers.ListField(child=serializers.FloatField(), allow_empty=False)
    means = serializers.JSONField()
    variances = serializers.ListField(child=serializers.FloatField(), allow_empty=False)

    def validate(self, attrs):
        try:
            GaussianMixture.from_dict(attrs)
        except (ParameterError, ShapeError, ValueError) as e:
            raise serializers.ValidationError(str(e)) from e
        return attrs


class ModelSpecSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=["mixture", "file"])
    mixture = MixtureSerializer(required=False)
    conditional_weights = serializers.DictField(
        child=serializers.ListField(child=serializers.FloatField()), required=False
    )
    path = serializers.CharField(required=False)

    def validate_conditional_weights(self, value):
        for key in value:
            try:
                Condition.parse(key)
            except ParameterError as e:
                raise serializers.ValidationError(str(e)) from e
        return value

    def validate(self, attrs):
        if attrs["kind"] == "mixture" and "mixture" not in attrs:
            raise serializers.ValidationError({"mixture": "Required for `mixture` models."})
        if attrs["kind"] == "file":
            path = attrs.get("path")
            if not path:
                raise serializers.ValidationError({"path": "Required for `file` models."})
            if not os.path.isfile(path):
                raise serializers.ValidationError({"path": f"Model file `{path}` does not exist."})
        return attrs


class CodecSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=["identity", "scale", "orthogonal", "file"])
    pixel_shape = serializers.ListField(
        child=serializers.IntegerField(min_value=1), required=False, allow_empty=False
    )
    scale = serializers.FloatField(default=1.0)
    seed = serializers.IntegerField(min_value=0, default=0)
    bias_scale = serializers.FloatField(min_value=0.0, default=0.0)
    path = serializers.CharField(required=False)

    def validate(self, attrs):
        if attrs["kind"] == "file":
            path = attrs.get("path")
            if not path or not os.path.isfile(path):
                raise serializers.ValidationError({"path": f"Codec file `{path}` does not exist."})
        elif "pixel_shape" not in attrs:
            raise serializers.ValidationError({"pixel_shape": "This field is required."})
        if attrs["kind"] == "scale" and attrs["scale"] == 0.0:
            raise serializers.ValidationError({"scale": "Must be nonzero."})
        return attrs


class SamplerSerializer(serializers.Serializer):
    method = serializers.ChoiceField(choices=["ddim", "ancestral"], default="ddim")
    eta = serializers.FloatField(min_value=0.0, default=0.0)
    num_steps = serializers.IntegerField(min_value=1, default=DEFAULT_NUM_STEPS)
    boundaries = serializers.ListField(
        child=serializers.IntegerField(min_value=0), default=list
    )


class GuidanceSerializer(serializers.Serializer):
    s = serializers.FloatField(default=1.0)
    s_style = serializers.FloatField(default=0.0)
    style = serializers.CharField(required=False, allow_null=True, default=None)

    def validate(self, attrs):
        if attrs["s_style"] != 0.0 and not attrs.get("style"):
            raise serializers.ValidationError({"style": "Required when `s_style` is nonzero."})
        return attrs


def validate_condition(value):
    try:
        Condition.parse(value)
    except ParameterError as e:
        raise serializers.ValidationError(str(e)) from e
    return value


class MemberSerializer(serializers.Serializer):
    model = serializers.CharField()
    codec = serializers.CharField()
    condition = serializers.CharField(default="unconditional", validators=[validate_condition])
    guidance = GuidanceSerializer(required=False)


class FusionSerializer(serializers.Serializer):
    mode = serializers.ChoiceField(choices=["latent_fusion", "resolution_fusion"])
    a = MemberSerializer()
    b = MemberSerializer()
    d = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    T_low = serializers.IntegerField(min_value=1, required=False)
    upsample_mode = serializers.ChoiceField(choices=["coop", "naive", "both"], default="both")
    noise_init = serializers.ChoiceField(choices=["shared", "aligned"], default="aligned")
    write_trajectory = serializers.BooleanField(default=False)

    def validate(self, attrs):
        if attrs["mode"] == "resolution_fusion" and "T_low" not in attrs:
            raise serializers.ValidationError({"T_low": "Required for `resolution_fusion`."})
        return attrs


class SampleSerializer(serializers.Serializer):
    model = serializers.CharField(required=False)
    struct_model = serializers.CharField(required=False)
    texture_model = serializers.CharField(required=False)
    T_struct = serializers.IntegerField(min_value=0, default=DEFAULT_T_STRUCT)
    codec = serializers.CharField(required=False)
    shape = serializers.ListField(
        child=serializers.IntegerField(min_value=1), required=False, allow_empty=False
    )
    write_trajectory = serializers.BooleanField(default=False)

    def validate(self, attrs):
        decoupled = "struct_model" in attrs or "texture_model" in attrs
        if decoupled and not ("struct_model" in attrs and "texture_model" in attrs):
            raise serializers.ValidationError(
                "Decoupled sampling needs both `struct_model` and `texture_model`."
            )
        if decoupled == ("model" in attrs):
            raise serializers.ValidationError(
                "Give either `model` or the `struct_model`/`texture_model` pair."
            )
        return attrs


class BudgetSerializer(serializers.Serializer):
    width = serializers.IntegerField(min_value=1, default=32)
    depth = serializers.IntegerField(min_value=1, default=2)
    steps = serializers.IntegerField(min_value=2, default=2000)
    batch_size = serializers.IntegerField(min_value=1, default=64)
    learning_rate = serializers.FloatField(min_value=0.0, default=0.05)
    n_samples = serializers.IntegerField(min_value=2, default=2000)
    pool_size = serializers.IntegerField(min_value=1, default=256)


class TrainSerializer(BudgetSerializer):
    role = serializers.ChoiceField(choices=["monolithic", "structure", "texture"])
    task = serializers.ChoiceField(choices=["mixture2d", "image"], default="mixture2d")
    T_struct = serializers.IntegerField(min_value=1, default=DEFAULT_T_STRUCT)
    structure_data = serializers.ChoiceField(
        choices=["mixture", "all", "high_res_only"], required=False
    )
    texture_resolution = serializers.ChoiceField(choices=["high", "low"], required=False)

    def validate(self, attrs):
        image = attrs["task"] == "image"
        attrs.setdefault("structure_data", "all" if image else "mixture")
        attrs.setdefault("texture_resolution", "low" if image else "high")
        if not image and (
            attrs["structure_data"] != "mixture" or attrs["texture_resolution"] != "high"
        ):
            raise serializers.ValidationError(
                "Low-resolution data regimes need the `image` task."
            )
        return attrs


class AblationSerializer(serializers.Serializer):
    task = serializers.ChoiceField(choices=["mixture2d", "image"], default="mixture2d")
    values = serializers.ListField(
        child=serializers.IntegerField(min_value=1), default=lambda: [200, 500, 800],
        allow_empty=False,
    )
    seeds = serializers.ListField(
        child=serializers.IntegerField(min_value=0), default=lambda: [0], allow_empty=False
    )
    T_struct = serializers.IntegerField(min_value=1, default=DEFAULT_T_STRUCT)
    budget = BudgetSerializer(required=False)


class EvalSerializer(serializers.Serializer):
    samples = serializers.CharField()
    oracle = serializers.CharField(required=False)
    reference = serializers.CharField(required=False)

    def validate(self, attrs):
        if ("oracle" in attrs) == ("reference" in attrs):
            raise serializers.ValidationError("Give exactly one of `oracle` or `reference`.")
        for key in ("samples", "reference"):
            if key in attrs and not os.path.isfile(attrs[key]):
                raise serializers.ValidationError({key: f"File `{attrs[key]}` does not exist."})
        return attrs


class ExperimentConfigSerializer(serializers.Serializer):
    seed = serializers.IntegerField(min_value=0, max_value=2**64 - 1, default=0)
    schedule = ScheduleSerializer(required=False)
    models = serializers.DictField(child=ModelSpecSerializer(), default=dict)
    codecs = serializers.DictField(child=CodecSerializer(), default=dict)
    sampler = SamplerSerializer(required=False)
    guidance = GuidanceSerializer(required=False)
    condition = serializers.CharField(default="unconditional", validators=[validate_condition])
    n_chains = serializers.IntegerField(min_value=1, default=1000)
    sample = SampleSerializer(required=False)
    fusion = FusionSerializer(required=False)
    train = TrainSerializer(required=False)
    ablation = AblationSerializer(required=False)
    eval = EvalSerializer(required=False)

    def validate(self, attrs):
        errors = {}
        T = attrs["schedule"]["T"]
        models, codecs = attrs["models"], attrs["codecs"]

        def check_ref(path, name, registry, what):
            if name not in registry:
                choices = ", ".join(registry) or "(none)"
                errors[path] = [f"Unknown {what} `{name}`. Choices are {choices}."]

        sample = attrs.get("sample")
        if sample:
            for key in ("model", "struct_model", "texture_model"):
                if key in sample:
                    check_ref(f"sample.{key}", sample[key], models, "model")
            if "codec" in sample:
                check_ref("sample.codec", sample["codec"], codecs, "codec")
            if "struct_model" in sample and not sample["T_struct"] < T:
                errors["sample.T_struct"] = [f"Must be below T={T}."]
        fusion = attrs.get("fusion")
        if fusion:
            for member in ("a", "b"):
                check_ref(f"fusion.{member}.model", fusion[member]["model"], models, "model")
                check_ref(f"fusion.{member}.codec", fusion[member]["codec"], codecs, "codec")
            if fusion.get("T_low") is not None and fusion["T_low"] > T:
                errors["fusion.T_low"] = [f"Must be at most T={T}."]
        train = attrs.get("train")
        if train and not train["T_struct"] < T:
            errors["train.T_struct"] = [f"Must be below T={T}."]
        ablation = attrs.get("ablation")
        if ablation:
            bad = [v for v in ablation["values"] if not 0 < v < T]
            if bad:
                errors["ablation.values"] = [f"Values must be in (0, {T}), got {bad}."]
            if not ablation["T_struct"] < T:
                errors["ablation.T_struct"] = [f"Must be below T={T}."]
        evaluation = attrs.get("eval")
        if evaluation and "oracle" in evaluation:
            check_ref("eval.oracle", evaluation["oracle"], models, "model")
        for key in ("boundaries",):
            bad = [b for b in attrs["sampler"][key] if b > T]
            if bad:
                errors[f"sampler.{key}"] = [f"Values must be at most T={T}, got {bad}."]
        if errors:
            raise serializers.ValidationError(errors)
        return attrs


def flatten_errors(detail, prefix=""):
    """
    Turns DRF's nested error structure into `path.to.field: message` lines.
    """
    lines = []
    if isinstance(detail, dict):
        for key, value in detail.items():
            if key in ("non_field_errors", api_settings.NON_FIELD_ERRORS_KEY):
                lines.extend(flatten_errors(value, prefix))
            else:
                lines.extend(flatten_errors(value, f"{prefix}.{key}" if prefix else str(key)))
    elif isinstance(detail, list):
        for item in detail:
            lines.extend(flatten_errors(item, prefix))
    else:
        lines.append(f"{prefix or 'config'}: {detail}")
    return lines


def with_section_defaults(data):
    # nested serializers only fill their field defaults when they receive an object
    data = dict(data)
    for key in ("schedule", "sampler", "guidance"):
        if data.get(key) is None:
            data[key] = {}
    if isinstance(data.get("ablation"), dict) and data["ablation"].get("budget") is None:
        data["ablation"] = dict(data["ablation"], budget={})
    return data


def validate_config(data, command=None):
    """
    Validates `data` and returns the validated config; raises
    `ImproperlyConfiguredExperiment` listing every problem.
    """
    if not isinstance(data, dict):
        raise ImproperlyConfiguredExperiment(["config: Must be a JSON object."])
    data = with_section_defaults(data)
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ImproperlyConfiguredExperiment(flatten_errors(serializer.errors))
    config = serializer.validated_data
    section = SECTION_FOR_COMMAND.get(command)
    if section and section not in config:
        raise ImproperlyConfiguredExperiment([f"{section}: Required by the `{command}` command."])
    return config


SECTION_FOR_COMMAND = {
    "sample": "sample",
    "fuse": "fusion",
    "train": "train",
    "ablate-tstruct": "ablation",
    "compare-strategies": "ablation",
    "eval": "eval",
}
