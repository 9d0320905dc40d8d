"""Experiment and generator configuration.

Configs are plain JSON documents with a fixed schema (version field,
unknown keys rejected). Every config serializes to a canonical form
(sorted keys) whose SHA-256 hash is recorded in the artifacts it
produces; machine-specific fields (paths) are excluded from the hash.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

CONFIG_VERSION = 1

MODES = ("source-only", "real-only", "ccssl", "ccssl-r", "naive-self-training")

# Texture ids are globally disjoint between the two domains; that
# disjointness is the domain gap.
DEFAULT_PROFILES = {
    "source": {
        "name": "source",
        "body_textures": [0, 1, 2],
        "background_textures": [6, 8],
        "body_palette": [[0.5, 0.78], [0.3, 0.55], [0.12, 0.3]],
        "background_palette": [[0.55, 0.85], [0.6, 0.9], [0.5, 0.8]],
        "clutter_count": [0, 0],
        "sequence_mode": False,
    },
    "target": {
        "name": "target",
        "body_textures": [3, 4, 5],
        "background_textures": [7, 9],
        "body_palette": [[0.15, 0.4], [0.2, 0.45], [0.3, 0.62]],
        "background_palette": [[0.25, 0.55], [0.15, 0.4], [0.1, 0.35]],
        "clutter_count": [2, 5],
        "sequence_mode": True,
    },
}

DEFAULT_TRAINING_AUGMENTATION = {
    "probability": 0.5,
    "rotate_range": [-30.0, 30.0],
    "scale_range": [0.8, 1.25],
    "flip_probability": 0.5,
    "color": {"gain_range": [0.85, 1.18], "offset_range": [-0.06, 0.06]},
    "noise_amplitude": [0.0, 0.05],
    "blur_probability": 0.25,
    "blur_sigma": [0.4, 1.0],
}

# Identity plus two appearance draws and two geometry draws: five
# predictions are ensembled per frame during pseudo-labeling.
DEFAULT_CONSISTENCY = {
    "invariance": [
        {"kind": "gaussian_noise", "amplitude": 0.04},
        {"kind": "color_perturb", "gain_range": [0.85, 1.18], "offset_range": [-0.06, 0.06]},
    ],
    "equivariance": [
        {"kind": "rotate", "degrees": 15.0},
        {"kind": "scale", "choices": [0.85, 1.15]},
    ],
}


@dataclass
class GeneratorConfig:
    """Parameters of the procedural benchmark generator."""

    master_seed: int = 20260810
    source_frames: int = 2000
    source_train_fraction: float = 0.8  # 4:1 train/val split
    target_train_sequences: int = 40
    target_val_sequences: int = 10
    sequence_length: int = 30
    keypoint_margin: float = 2.0
    walk_center_step: float = 2.0
    walk_angle_step_degrees: float = 5.0
    profiles: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_PROFILES))

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "master_seed": self.master_seed,
            "source_frames": self.source_frames,
            "source_train_fraction": self.source_train_fraction,
            "target_train_sequences": self.target_train_sequences,
            "target_val_sequences": self.target_val_sequences,
            "sequence_length": self.sequence_length,
            "keypoint_margin": self.keypoint_margin,
            "walk_center_step": self.walk_center_step,
            "walk_angle_step_degrees": self.walk_angle_step_degrees,
            "profiles": copy.deepcopy(self.profiles),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d.pop("version", None)
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad generator config: {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.source_frames < 5:
            raise ConfigError("source_frames must be at least 5")
        if not 0.0 < self.source_train_fraction < 1.0:
            raise ConfigError("source_train_fraction must be in (0, 1)")
        if self.sequence_length < 2:
            raise ConfigError("sequence_length must be at least 2")
        for name in ("source", "target"):
            if name not in self.profiles:
                raise ConfigError(f"missing domain profile {name!r}")
        src, tgt = self.profiles["source"], self.profiles["target"]
        src_ids = set(src["body_textures"]) | set(src["background_textures"])
        tgt_ids = set(tgt["body_textures"]) | set(tgt["background_textures"])
        if src_ids & tgt_ids:
            raise ConfigError(f"domain texture pools overlap: {sorted(src_ids & tgt_ids)}")


@dataclass
class ExperimentConfig:
    """Everything a run needs: data location, mode, and module settings."""

    benchmark_path: str
    mode: str
    output_dir: str
    master_seed: int = 20260810
    training_augmentation: dict = field(
        default_factory=lambda: copy.deepcopy(DEFAULT_TRAINING_AUGMENTATION)
    )
    consistency: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONSISTENCY))
    predictor: dict = field(
        default_factory=lambda: {
            "batch_size": 16,
            "learning_rate": 2.5e-4,
            "rho": 0.99,
            "epsilon": 1e-8,
            "f0_epochs": 100,
            "real_epochs": 100,
            "finetune_epochs": 15,
            "augmentation_probability": 0.5,
        }
    )
    policy: dict = field(
        default_factory=lambda: {"p0": 0.2, "dp": 0.1, "p_max": 0.5, "iterations": 4}
    )
    ccssl: dict = field(
        default_factory=lambda: {
            "lambda_decay": 0.9,
            "gamma": 10.0,
            "epochs_per_iteration": 10,
            "total_epoch_budget": 60,
            "temporal_mode": "per_keypoint",
        }
    )
    eval: dict = field(default_factory=lambda: {"alpha": 0.05})

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "benchmark_path": self.benchmark_path,
            "mode": self.mode,
            "output_dir": self.output_dir,
            "master_seed": self.master_seed,
            "training_augmentation": copy.deepcopy(self.training_augmentation),
            "consistency": copy.deepcopy(self.consistency),
            "predictor": copy.deepcopy(self.predictor),
            "policy": copy.deepcopy(self.policy),
            "ccssl": copy.deepcopy(self.ccssl),
            "eval": copy.deepcopy(self.eval),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d.pop("version", None)
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        pol = self.policy
        if not (0.0 < pol["p0"] <= pol["p_max"] <= 1.0):
            raise ConfigError(f"curriculum policy must satisfy 0 < p0 <= p_max <= 1, got {pol}")
        if pol["iterations"] < 0:
            raise ConfigError("policy iterations must be >= 0")
        cc = self.ccssl
        if not (0.0 <= cc["lambda_decay"] < 1.0):
            raise ConfigError(f"lambda_decay must be in [0, 1), got {cc['lambda_decay']}")
        if cc["gamma"] < 0.0:
            raise ConfigError(f"gamma must be >= 0, got {cc['gamma']}")
        if cc["temporal_mode"] not in ("per_keypoint", "frame_mean"):
            raise ConfigError(f"unknown temporal_mode {cc['temporal_mode']!r}")
        budget = cc["epochs_per_iteration"] * pol["iterations"]
        if budget > cc["total_epoch_budget"]:
            raise ConfigError(
                f"{pol['iterations']} iterations x {cc['epochs_per_iteration']} epochs "
                f"exceeds the total epoch budget {cc['total_epoch_budget']}"
            )
        if self.predictor["batch_size"] < 2:
            raise ConfigError("batch_size must be at least 2")
        if not 0 < self.eval["alpha"]:
            raise ConfigError("eval alpha must be positive")

    def config_hash(self) -> str:
        """Hash of the canonical form, excluding machine-specific paths."""
        d = self.to_dict()
        d.pop("benchmark_path")
        d.pop("output_dir")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def naive_variant(cfg: ExperimentConfig) -> ExperimentConfig:
    """The naive self-training ablation of a config.

    Identity-only consistency set, keep-everything curriculum, and no
    temporal check; everything else unchanged.
    """
    d = cfg.to_dict()
    d["mode"] = "naive-self-training"
    d["consistency"] = {"invariance": [], "equivariance": []}
    d["policy"] = {"p0": 1.0, "dp": 0.0, "p_max": 1.0, "iterations": cfg.policy["iterations"]}
    d["ccssl"] = dict(cfg.ccssl, lambda_decay=0.0)
    return ExperimentConfig.from_dict(d)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1) + "\n")


def load_generator_config(path: str | Path) -> GeneratorConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return GeneratorConfig.from_dict(data)
