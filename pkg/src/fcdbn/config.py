"""Run configuration: one validated record drives training, eval, and CLI."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .kvrl import DEFAULT_REGIONS, RegionFractions
from .rbm import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration value or file."""


@dataclass
class RunConfig:
    seed: int = 0

    # contrastive-divergence training of stack layers
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    cd_steps: int = 1
    momentum: float = 0.5

    # architecture
    stage1_dims: tuple = (1024, 512, 512)
    stage2_dims: tuple = (1536, 1024, 512)
    classifier_hidden: tuple = (512, 128)
    n_filters: int = 6
    filter_size: int = 3
    alpha: float = 0.1
    beta: float = 1e-4
    first_layer_gaussian: bool = True

    # classifier
    classifier_epochs: int = 300
    classifier_learning_rate: float = 0.5
    classifier_batch_size: int = 64
    dropout_input: float = 0.2
    dropout_hidden: float = 0.5

    # regions
    regions: tuple = DEFAULT_REGIONS
    region_size: int = 32
    eye_rows: tuple = (0.25, 0.45)
    nose_rows: tuple = (0.25, 0.75)
    nose_cols: tuple = (0.35, 0.65)
    chin_rows: tuple = (0.65, 1.0)

    # fusion
    fusion_method: str = "plr"
    gmm_components: int = 2
    n_genuine: int = 400
    n_impostor: int = 400
    face_shift: float = 1.5
    kin_shift: float = 1.5
    n_kin: int = 1

    # synthetic data
    families: int = 10
    members_per_family: int = 4
    corpus_families: int = 8
    separability: float = 0.8

    # paths
    output_dir: str = "out"
    manifest: str = ""
    images_dir: str = ""
    corpus_dir: str = ""
    model_in: str = ""
    model_out: str = ""
    counts_csv: str = ""
    image: str = ""

    _KNOWN_REGIONS = ("face", "t_region", "not_t", "binocular", "chin")

    def validate(self):
        if self.learning_rate <= 0 or self.classifier_learning_rate <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.epochs < 1 or self.batch_size < 1 or self.cd_steps < 1:
            raise ConfigError("epochs, batch_size, cd_steps must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        for r in (self.dropout_input, self.dropout_hidden):
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"dropout rates must be in [0, 1), got {r}")
        if self.classifier_epochs < 0:
            raise ConfigError("classifier_epochs must be >= 0")
        if len(self.stage1_dims) < 2 or len(self.stage2_dims) < 2:
            raise ConfigError("stacks need at least two node counts")
        if any(d < 1 for d in tuple(self.stage1_dims) + tuple(self.stage2_dims)):
            raise ConfigError("layer widths must be positive")
        if self.stage1_dims[0] != self.region_size ** 2:
            raise ConfigError(
                f"stage1_dims[0]={self.stage1_dims[0]} must equal "
                f"region_size^2={self.region_size ** 2}"
            )
        if self.n_filters < 0 or self.filter_size < 1 or self.filter_size % 2 == 0:
            raise ConfigError("n_filters must be >= 0 and filter_size odd")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if not self.regions:
            raise ConfigError("at least one region required")
        for name in self.regions:
            if name not in self._KNOWN_REGIONS:
                raise ConfigError(f"unknown region {name!r}")
        for frac in (self.eye_rows, self.nose_rows, self.nose_cols, self.chin_rows):
            lo, hi = frac
            if not (0.0 <= lo < hi <= 1.0):
                raise ConfigError(f"bad fractional range {frac}")
        if self.fusion_method not in ("plr", "svm", "both"):
            raise ConfigError(f"unknown fusion method {self.fusion_method!r}")
        if self.gmm_components < 1:
            raise ConfigError("gmm_components must be >= 1")
        if not 0.0 <= self.separability <= 1.0:
            raise ConfigError("separability must be in [0, 1]")
        if self.families < 1 or self.members_per_family < 1 or self.corpus_families < 1:
            raise ConfigError("synthetic counts must be >= 1")
        if self.n_kin < 0:
            raise ConfigError("n_kin must be >= 0")

    def region_fractions(self):
        return RegionFractions(eye_rows=tuple(self.eye_rows),
                               nose_rows=tuple(self.nose_rows),
                               nose_cols=tuple(self.nose_cols),
                               chin_rows=tuple(self.chin_rows))

    def extra_regions(self):
        return tuple(n for n in self.regions if n in ("binocular", "chin"))

    def rbm_config(self, seed_offset=0):
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, cd_steps=self.cd_steps,
                           momentum=self.momentum, seed=self.seed + 7919 * (seed_offset + 1))

    def mlp_config(self):
        return TrainConfig(learning_rate=self.classifier_learning_rate,
                           epochs=self.classifier_epochs,
                           batch_size=self.classifier_batch_size,
                           momentum=self.momentum, seed=self.seed + 104729)


_TUPLE_FIELDS = {"stage1_dims", "stage2_dims", "classifier_hidden", "regions",
                 "eye_rows", "nose_rows", "nose_cols", "chin_rows"}


def config_from_dict(data):
    known = {f.name for f in fields(RunConfig) if not f.name.startswith("_")}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{key} must be a list")
            value = tuple(value)
        kwargs[key] = value
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(data)


def config_to_dict(cfg):
    out = asdict(cfg)
    for key in _TUPLE_FIELDS:
        out[key] = list(out[key])
    return out
