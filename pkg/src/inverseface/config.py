"""JSON experiment configuration.

One file describes the whole pipeline: model and camera specs, the base and
target sampling priors, network architecture and training hyperparameters,
and the breeding schedule.  Dimensional consistency is validated up front so
a bad config fails before any work starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .breeding import BreedingConfig
from .corpus import PriorSpec
from .facemodel import ModelSpec
from .regressor import DEFAULT_CONV_LAYERS, LossWeights, NetworkSpec
from .renderer import CameraSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingParams:
    iterations: int = 5000
    batch_size: int = 32
    learning_rate: float = 0.01
    weight_decay: float = 0.001
    rho: float = 0.95
    eps: float = 1e-6
    shuffle_seed: int = 0
    init_seed: int = 0


@dataclass
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    camera: CameraSpec = field(default_factory=lambda: CameraSpec(64, 64))
    priors: dict = field(default_factory=dict)   # name -> PriorSpec
    network: NetworkSpec | None = None           # n_outputs bound to model.m
    training: TrainingParams = field(default_factory=TrainingParams)
    breeding: BreedingConfig = field(default_factory=BreedingConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    output_dir: str = "out"
    global_seed: int = 0

    def validate(self) -> None:
        self.model.validate()
        self.camera.validate()
        for prior in self.priors.values():
            prior.validate()
        if self.network is None:
            raise ConfigError("network section missing")
        if self.network.n_outputs != self.model.m:
            raise ConfigError(
                f"network outputs {self.network.n_outputs} != model m "
                f"{self.model.m}")
        self.network.validate()
        self.breeding.validate()

    def prior(self, name: str) -> PriorSpec:
        if name not in self.priors:
            raise ConfigError(
                f"prior '{name}' not in config (have: {sorted(self.priors)})")
        return self.priors[name]


def _build(cls, data: dict, section: str, **extra):
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    merged = {**data, **extra}
    # JSON lists stand in for tuples.
    for key, value in merged.items():
        if isinstance(value, list):
            merged[key] = tuple(tuple(v) if isinstance(v, list) else v
                                for v in value)
    try:
        obj = cls(**merged)
        if hasattr(obj, "validate"):
            obj.validate()
        return obj
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad '{section}' section: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    known = {"model", "camera", "priors", "network", "training", "breeding",
             "loss_weights", "output_dir", "global_seed"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    model = _build(ModelSpec, data.get("model", {}), "model")
    camera = _build(CameraSpec, data.get("camera", {"image_width": 64,
                                                    "image_height": 64}),
                    "camera")
    priors = {name: _build(PriorSpec, p, f"priors.{name}")
              for name, p in data.get("priors", {"base": {}}).items()}
    network = _build(NetworkSpec, data.get("network", {}), "network",
                     n_outputs=model.m)
    training = _build(TrainingParams, data.get("training", {}), "training")
    breeding = _build(BreedingConfig, data.get("breeding", {}), "breeding")
    weights = _build(LossWeights, data.get("loss_weights", {}), "loss_weights")
    cfg = ExperimentConfig(
        model=model, camera=camera, priors=priors, network=network,
        training=training, breeding=breeding, loss_weights=weights,
        output_dir=data.get("output_dir", "out"),
        global_seed=data.get("global_seed", 0))
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def desk_config_dict() -> dict:
    """The shipped desk-scale experiment: m=70 model, 64x64 renders, a base
    prior plus an expression/illumination-shifted target prior."""
    return {
        "global_seed": 7,
        "output_dir": "out",
        "model": {"n_shape": 16, "n_expr": 8, "n_refl": 16,
                  "mesh_rows": 48, "mesh_cols": 48, "rng_seed": 7},
        "camera": {"image_width": 64, "image_height": 64,
                   "vertical_fov_deg": 30.0, "face_distance_mm": 600.0},
        "priors": {
            "base": {"rng_seed": 101},
            "target": {"expr_range": [4.0, 12.0], "expr_bias_first": 0.0,
                       "monochrome": False, "rng_seed": 202},
        },
        "network": {"input_resolution": 64,
                    "conv_layers": [list(l) for l in DEFAULT_CONV_LAYERS],
                    "fc_hidden": 256},
        "training": {"iterations": 5000, "batch_size": 32,
                     "learning_rate": 0.01, "weight_decay": 0.001,
                     "rho": 0.95, "eps": 1e-6,
                     "shuffle_seed": 17, "init_seed": 11},
        "breeding": {"warmup_iterations": 1000, "n_breed": 4,
                     "finetune_iterations": 500,
                     "perturbations_per_seed": 2,
                     "rotation_noise_deg": 5.0, "shape_noise": 0.05,
                     "refl_noise": 0.2, "expr_noise": 0.1,
                     "illum_noise": 0.02, "rng_seed": 23},
    }
