"""Experiment configuration: one dataclass tree, JSON round-trippable.

The snapshot embedded in results.json excludes the output directory, so two
runs of the same configuration into different directories produce identical
bytes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .baselines import BaselineConfig
from .boosting import BoostingConfig
from .compression import CompressionConfig, MixupConfig

METHODS = (
    "foster",
    "finetune",
    "replay",
    "foster_wa_ablation",
    "foster_no_fe",
    "foster_plain_kd",
)


@dataclass
class ProtocolConfig:
    base_classes: int = 0
    classes_per_step: int = 2
    memory_policy: str = "fixed_total"
    memory_budget: int = 50


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"name": "blobs"})
    arch: dict = field(default_factory=lambda: {"arch": "mlp", "feature_dim": 32})
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    method: str = "foster"
    selection: str = "herding"
    class_order_seed: int | None = None
    boosting: BoostingConfig = field(default_factory=BoostingConfig)
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.selection not in ("herding", "random"):
            raise ValueError(f"unknown selection {self.selection!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        return d

    def snapshot(self) -> dict:
        """What goes into results.json; JSON round-trip safe."""
        return json.loads(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "protocol" in d and isinstance(d["protocol"], dict):
            d["protocol"] = ProtocolConfig(**d["protocol"])
        if "boosting" in d and isinstance(d["boosting"], dict):
            d["boosting"] = BoostingConfig(**d["boosting"])
        if "compression" in d and isinstance(d["compression"], dict):
            comp = dict(d["compression"])
            if isinstance(comp.get("mixup"), dict):
                comp["mixup"] = MixupConfig(**comp["mixup"])
            d["compression"] = CompressionConfig(**comp)
        if "baseline" in d and isinstance(d["baseline"], dict):
            d["baseline"] = BaselineConfig(**d["baseline"])
        return cls(**d)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(cfg: ExperimentConfig, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")


def desk_preset(name: str = "blobs_quick", **overrides) -> ExperimentConfig:
    """Small, fast configurations for tests and demos."""
    if name == "blobs_quick":
        base = dict(
            dataset={
                "name": "blobs",
                "num_classes": 10,
                "dim": 16,
                "train_per_class": 100,
                "test_per_class": 40,
                "center_scale": 1.2,
                "cluster_std": 1.0,
                "seed": 7,
            },
            arch={"arch": "mlp", "hidden_dims": [32], "feature_dim": 24},
            protocol=ProtocolConfig(
                base_classes=0, classes_per_step=2, memory_policy="fixed_total", memory_budget=120
            ),
            boosting=BoostingConfig(epochs=15, batch_size=64),
            compression=CompressionConfig(epochs=15, batch_size=64),
            baseline=BaselineConfig(epochs=15, batch_size=64),
        )
    elif name == "digits_quick":
        base = dict(
            dataset={"name": "digits", "test_per_class": 30, "seed": 3},
            arch={"arch": "cnn", "channels": [8, 16], "feature_dim": 32},
            protocol=ProtocolConfig(
                base_classes=4, classes_per_step=2, memory_policy="fixed_total", memory_budget=100
            ),
            boosting=BoostingConfig(epochs=8, batch_size=64),
            compression=CompressionConfig(epochs=8, batch_size=64),
            baseline=BaselineConfig(epochs=8, batch_size=64),
        )
    else:
        raise ValueError(f"unknown preset {name!r}")
    base.update(overrides)
    return ExperimentConfig(**base)
