"""Run configuration: one declarative document with model, data, train,
eval, and provider sections.

Files parse as YAML (plain JSON therefore also works). Unknown sections or
keys are rejected. The resolved document (after flag overrides) is hashed,
and that hash is embedded in every JSON artifact a run writes. The
``SFANET_CONFIG`` environment variable may supply the file path.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .core import DecisionPolicy, EmotionGroup, Label
from .errors import ConfigurationError, IngestionError
from .heads.bundle import ModelConfig
from .trainsched import TrainConfig

CONFIG_ENV_VAR = "SFANET_CONFIG"

_KNOWN_KEYS: dict[str, set[str]] = {
    "model": {
        "name",
        "resolution",
        "channels",
        "extractor",
        "extractor_args",
        "patch_size",
        "fft_patch_size",
        "spatial_dim",
        "freq_dim",
        "encoder_channels",
        "log_magnitude",
        "head_hidden",
        "dropout",
        "agg_dim",
        "agg_hidden",
        "attention_heads",
        "attention_scale",
        "seed",
    },
    "data": {"train_manifest", "val_manifest", "k", "seed", "emotion_groups"},
    "train": {
        "learning_rate",
        "betas",
        "weight_decay",
        "batch_size",
        "seed",
        "epochs_per_phase",
        "finetune_epochs",
        "carry_optimizer_state",
    },
    "eval": {"threshold", "c_miss", "c_fa", "p_target", "positive_label"},
    "provider": {"face_parts", "attributes", "embedder"},
}

_DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {},
    "data": {"k": 5, "seed": 0},
    "train": {},
    "eval": {"threshold": 0.3, "c_miss": 1.0, "c_fa": 1.0, "p_target": 0.5},
    "provider": {
        "face_parts": "stub_template",
        "attributes": "stub_hash",
        "embedder": "stub_pixels",
    },
}


def _validate_sections(document: dict) -> None:
    if not isinstance(document, dict):
        raise ConfigurationError("config document must be a mapping of sections")
    unknown_sections = set(document) - set(_KNOWN_KEYS)
    if unknown_sections:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown_sections)}")
    for section, values in document.items():
        if not isinstance(values, dict):
            raise ConfigurationError(f"config section {section!r} must be a mapping")
        unknown = set(values) - _KNOWN_KEYS[section]
        if unknown:
            raise ConfigurationError(
                f"unknown keys in config section {section!r}: {sorted(unknown)}"
            )


@dataclass
class RunConfig:
    """Validated config sections plus the hash of the resolved document."""

    sections: dict[str, dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: "str | Path | None" = None) -> "RunConfig":
        if path is None:
            env_path = os.environ.get(CONFIG_ENV_VAR)
            path = Path(env_path) if env_path else None
        document: dict = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise IngestionError(f"config file not found: {path}")
            loaded = yaml.safe_load(path.read_text())
            document = loaded or {}
        _validate_sections(document)
        sections = {name: dict(values) for name, values in _DEFAULTS.items()}
        for name, values in document.items():
            sections[name].update(values)
        return cls(sections=sections)

    def override(self, section: str, key: str, value: Any) -> None:
        """Apply a flag override; flags beat file values."""
        if section not in _KNOWN_KEYS or key not in _KNOWN_KEYS[section]:
            raise ConfigurationError(f"unknown config key {section}.{key}")
        if value is not None:
            self.sections[section][key] = value

    def get(self, section: str, key: str, default: Any = None) -> Any:
        return self.sections.get(section, {}).get(key, default)

    def config_hash(self) -> str:
        blob = json.dumps(self.sections, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def model_config(self, **overrides) -> ModelConfig:
        values = dict(self.sections["model"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        if "name" not in values:
            raise ConfigurationError("model.name is required (flag --model or config)")
        if "resolution" in values:
            values["resolution"] = tuple(values["resolution"])
        if "encoder_channels" in values:
            values["encoder_channels"] = tuple(values["encoder_channels"])
        return ModelConfig(**values)

    def train_config(self, **overrides) -> TrainConfig:
        values = dict(self.sections["train"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        if "betas" in values:
            values["betas"] = tuple(values["betas"])
        cfg = TrainConfig(**values)
        cfg.validate()
        return cfg

    def policy(self, threshold: Optional[float] = None) -> DecisionPolicy:
        tau = threshold if threshold is not None else self.sections["eval"]["threshold"]
        return DecisionPolicy(threshold=float(tau))

    def positive_label(self) -> Label:
        text = self.sections["eval"].get("positive_label", "real")
        return Label.parse(str(text))

    def dcf_params(self) -> tuple[float, float, float]:
        ev = self.sections["eval"]
        return float(ev["c_miss"]), float(ev["c_fa"]), float(ev["p_target"])

    def emotion_groups(self) -> Optional[dict[str, EmotionGroup]]:
        """Raw-emotion grouping override, if the data section carries one."""
        raw = self.sections["data"].get("emotion_groups")
        if raw is None:
            return None
        if not isinstance(raw, dict):
            raise ConfigurationError("data.emotion_groups must map raw emotions to groups")
        try:
            return {str(k).lower(): EmotionGroup(str(v).lower()) for k, v in raw.items()}
        except ValueError as exc:
            raise ConfigurationError(f"bad emotion group in config: {exc}") from None
