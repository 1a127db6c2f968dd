"""
Run configuration: a TOML document mapped onto attrs classes, validated in
full before any run directory exists.
"""
import hashlib
import json
import logging
import os

import attr
import toml

from backbones.schedule import SamplerSchedule
from clients.vlm_client import ENDPOINT_ENV
from enums.tas_mode import TasMode
from errors import ConfigError, ScheduleRangeError
from training import AdapterConfig, LossWeights

LOG = logging.getLogger(__name__)

in_ = attr.validators.in_


def _positive(instance, attribute, value):
    if value <= 0:
        raise ValueError("{} must be positive, got {}".format(attribute.name, value))


def _nonnegative(instance, attribute, value):
    if value < 0:
        raise ValueError("{} must be nonnegative, got {}".format(attribute.name, value))


def _unit_interval(instance, attribute, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError("{} must lie in [0, 1], got {}".format(attribute.name, value))


def _open_unit_interval(instance, attribute, value):
    if not 0.0 < value <= 1.0:
        raise ValueError("{} must lie in (0, 1], got {}".format(attribute.name, value))


def _interval(instance, attribute, value):
    low, high = value
    if not 0.0 <= low <= high:
        raise ValueError("{} must be an ordered pair >= 0, got {}".format(attribute.name, value))


@attr.s(frozen=True)
class ScheduleConfig:
    steps = attr.ib(default=50, converter=int, validator=_positive)
    lambda_split = attr.ib(default=0.7, converter=float, validator=_unit_interval)
    alpha_min = attr.ib(default=0.1, converter=float, validator=_open_unit_interval)


@attr.s(frozen=True)
class DifConfig:
    enlarge_ratio = attr.ib(default=0.2, converter=float, validator=_nonnegative)
    gch_full_frame = attr.ib(default=False, converter=bool)
    guidance_scale = attr.ib(default=5.0, converter=float, validator=_nonnegative)
    sampler = attr.ib(default="ddim", validator=in_(("ddim", "ancestral")))


@attr.s(frozen=True)
class LossConfig:
    tau1 = attr.ib(default=1.5, converter=float, validator=_nonnegative)
    tau2 = attr.ib(default=0.7, converter=float, validator=_nonnegative)
    beta = attr.ib(default=0.4, converter=float, validator=_nonnegative)


@attr.s(frozen=True)
class AdapterSettings:
    rank = attr.ib(default=4, converter=int, validator=_positive)
    target_projections = attr.ib(default=("key", "value"), converter=tuple)
    alpha = attr.ib(default=None)

    @target_projections.validator
    def _check_targets(self, attribute, value):
        unknown = set(value) - {"key", "value", "query", "output"}
        if not value or unknown:
            raise ValueError("Unknown adapter targets: {}".format(sorted(unknown)))


@attr.s(frozen=True)
class TrainingConfig:
    steps = attr.ib(default=800, converter=int, validator=_nonnegative)
    learning_rate = attr.ib(default=1e-4, converter=float, validator=_positive)
    batch_size = attr.ib(default=1, converter=int, validator=_positive)
    identity_token = attr.ib(default="sks")
    mask_inflation = attr.ib(default=(0.05, 0.25), converter=tuple, validator=_interval)


@attr.s(frozen=True)
class AdmConfig:
    num_prompts = attr.ib(default=30, converter=int, validator=_positive)
    subject_class = attr.ib(default="object")
    vlm = attr.ib(default="mock", validator=in_(("mock", "recorded", "http")))
    vlm_endpoint = attr.ib(default="")
    vlm_fixture = attr.ib(default="")
    mask_policy = attr.ib(default="centered-box", validator=in_(("centered-box", "full")))
    mask_min_area = attr.ib(default=0.4, converter=float, validator=_unit_interval)
    mask_max_area = attr.ib(default=0.7, converter=float, validator=_unit_interval)

    def __attrs_post_init__(self):
        if self.mask_min_area > self.mask_max_area:
            raise ValueError("mask_min_area exceeds mask_max_area")


@attr.s(frozen=True)
class TasConfig:
    mode = attr.ib(default=TasMode.POOLED_PER_TOKEN.value, validator=in_([m.value for m in TasMode]))
    template = attr.ib(default="a {attributes} [class]")

    @template.validator
    def _check_template(self, attribute, value):
        if "{attributes}" not in value:
            raise ValueError("TAS template needs an {attributes} placeholder")


@attr.s(frozen=True)
class EvalConfig:
    crop_ratio = attr.ib(default=0.2, converter=float, validator=_nonnegative)
    resolution = attr.ib(default=224, converter=int, validator=_positive)
    clip_embedder = attr.ib(default="mock-clip")
    dino_embedder = attr.ib(default="mock-dino")


@attr.s(frozen=True)
class BenchConfig:
    min_resolution = attr.ib(default=256, converter=int, validator=_positive)
    min_box_side = attr.ib(default=64, converter=int, validator=_positive)
    per_subject = attr.ib(default=140, converter=int, validator=_positive)


@attr.s(frozen=True)
class AblationConfig:
    dif = attr.ib(default=True, converter=bool)
    tas = attr.ib(default=True, converter=bool)
    adm = attr.ib(default=True, converter=bool)


SECTIONS = {
    "schedule": ScheduleConfig,
    "dif": DifConfig,
    "loss": LossConfig,
    "adapter": AdapterSettings,
    "training": TrainingConfig,
    "adm": AdmConfig,
    "tas": TasConfig,
    "eval": EvalConfig,
    "bench": BenchConfig,
    "ablation": AblationConfig,
}


@attr.s(frozen=True)
class RunConfig:
    backbone = attr.ib(default="toy")
    seed = attr.ib(default=0, converter=int)
    run_root = attr.ib(default="runs")
    resolution = attr.ib(default=64, converter=int, validator=_positive)
    schedule = attr.ib(factory=ScheduleConfig)
    dif = attr.ib(factory=DifConfig)
    loss = attr.ib(factory=LossConfig)
    adapter = attr.ib(factory=AdapterSettings)
    training = attr.ib(factory=TrainingConfig)
    adm = attr.ib(factory=AdmConfig)
    tas = attr.ib(factory=TasConfig)
    eval = attr.ib(factory=EvalConfig)
    bench = attr.ib(factory=BenchConfig)
    ablation = attr.ib(factory=AblationConfig)

    def sampler_schedule(self):
        return SamplerSchedule.linear(
            T=self.schedule.steps,
            lambda_split=self.schedule.lambda_split,
            alpha_min=self.schedule.alpha_min,
        )

    def loss_weights(self):
        return LossWeights(**attr.asdict(self.loss))

    def adapter_config(self):
        return AdapterConfig(**attr.asdict(self.adapter))

    def to_dict(self):
        return attr.asdict(self, retain_collection_types=False)


def config_hash(config):
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError("[{}] must be a table".format(where))
    known = attr.fields_dict(cls)
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError("Unknown key(s) in [{}]: {}".format(where, ", ".join(unknown)))
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError("Invalid [{}]: {}".format(where, e))


def from_dict(data):
    data = dict(data)
    sections = {
        name: _build(cls, data.pop(name, {}), name) for name, cls in SECTIONS.items()
    }
    config = _build(RunConfig, dict(data, **sections), "root")
    try:
        config.sampler_schedule()
    except ScheduleRangeError as e:
        raise ConfigError("Invalid [schedule]: {}".format(e))
    return config


def parse_scalar(text):
    try:
        return toml.loads("value = {}".format(text))["value"]
    except toml.TomlDecodeError:
        return text


def apply_overrides(data, overrides):
    """
    `overrides` are "section.key=value" (or "key=value" for top-level keys)
    with the value parsed as a TOML scalar.
    """
    data = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for override in overrides:
        if "=" not in override:
            raise ConfigError("Override '{}' is not key=value".format(override))
        key, value = override.split("=", 1)
        path = key.strip().split(".")
        if len(path) > 2:
            raise ConfigError("Override key '{}' nests too deep".format(key))
        if len(path) == 2:
            section = data.setdefault(path[0], {})
            if not isinstance(section, dict):
                raise ConfigError("'{}' is not a section".format(path[0]))
            section[path[1]] = parse_scalar(value.strip())
        else:
            data[path[0]] = parse_scalar(value.strip())
        LOG.debug("Override {} = {}".format(key, value))
    return data


def load_config(path=None, overrides=(), environ=None):
    environ = os.environ if environ is None else environ
    data = {}
    if path is not None:
        try:
            data = toml.load(path)
        except (OSError, toml.TomlDecodeError) as e:
            raise ConfigError("Cannot read config {}: {}".format(path, e))
    if environ.get(ENDPOINT_ENV):
        data.setdefault("adm", {})
        data["adm"]["vlm_endpoint"] = environ[ENDPOINT_ENV]
    data = apply_overrides(data, overrides)
    return from_dict(data)
