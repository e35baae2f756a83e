# -*- coding: utf-8 -*-
"""Configuration of the scene model and the detection pipeline.

Values come from the package defaults, optionally overridden by a JSON file,
optionally overridden by command line flags.
"""
from dataclasses import dataclass, field, fields, replace, asdict
from importlib import resources
from pathlib import Path
from typing import Any, Optional
import json
import logging

DEFAULT_CONFIG_RESOURCE = "default_config.json"
DEFAULT_MODEL_RESOURCE = "default_model.txt"


@dataclass(frozen=True)
class ModelConfig:
    """Scene model and classifier parameters.

    Attributes
    ----------
    alpha_amf
        Approximated median filter step.
        Unit: coefficient units per frame
    c_s
        Minimum survival time of a mode.
        Unit: frames
    c_v
        Survival granted per hit.
        Unit: frames per hit
    max_modes
        Maximum number of modes per block.
    t_similar
        Creation frames differing by at most this much are temporally similar.
        Unit: frames
    bonus_value
        Score added to modes matched within the last `bonus_window` frames.
        Unit: score
    bonus_window
        Recency window of the active mode bonus.
        Unit: frames
    n_bg
        Background-age horizon; modes older than this are background.
        Unit: frames
    iterations
        Number of spatial iterations.
    min_blob_blocks
        Smallest foreground blob reported.
        Unit: blocks
    """
    alpha_amf: int = 3
    c_s: float = 50.0
    c_v: float = 1.0
    max_modes: int = 5
    t_similar: int = 3
    bonus_value: float = 0.5
    bonus_window: int = 2
    n_bg: int = 50
    iterations: int = 3
    min_blob_blocks: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.alpha_amf > 0:
            raise ValueError(f"alpha_amf must be > 0, got {self.alpha_amf}")
        if not self.c_s > 0:
            raise ValueError(f"c_s must be > 0, got {self.c_s}")
        if self.c_v < 0:
            raise ValueError(f"c_v must be >= 0, got {self.c_v}")
        if not 1 <= self.max_modes <= 255:
            raise ValueError(f"max_modes must be in 1..255, got {self.max_modes}")
        for name in ("t_similar", "bonus_window", "n_bg", "iterations"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.min_blob_blocks < 1:
            raise ValueError(f"min_blob_blocks must be >= 1, got {self.min_blob_blocks}")

    def with_overrides(self, **overrides: Any) -> "ModelConfig":
        """Returns a copy with the non-None `overrides` applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class PipelineConfig:
    """Everything a detection run needs besides the input frames."""
    model_config: ModelConfig = field(default_factory=ModelConfig)
    model_path: Optional[Path] = None
    input: Optional[str] = None
    output_dir: Optional[Path] = None
    emit_age_images: bool = False
    emit_scores: bool = False
    snapshot_path: Optional[Path] = None
    initial_snapshot: Optional[Path] = None


def config_from_dict(values: dict[str, Any], base: Optional[ModelConfig] = None) -> ModelConfig:
    """Builds a ModelConfig from a mapping of field names to values.

    Raises
    ------
    ValueError
        For unknown keys or invalid values.
    """
    known = {f.name: f.type for f in fields(ModelConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValueError(f"Unknown configuration keys: {', '.join(unknown)}")
    base = base or ModelConfig()
    converted = {}
    for key, value in values.items():
        caster = int if known[key] in (int, "int") else float
        try:
            converted[key] = caster(value)
        except (TypeError, ValueError):
            raise ValueError(f"Configuration key {key} has invalid value {value!r}") from None
    return replace(base, **converted)


def default_config() -> ModelConfig:
    """Returns the configuration shipped with the package."""
    text = resources.files("dctscene").joinpath("data", DEFAULT_CONFIG_RESOURCE).read_text(encoding="utf-8")
    return config_from_dict(json.loads(text))


def load_config(path: Optional[str | Path] = None) -> ModelConfig:
    """Loads a JSON configuration file on top of the shipped defaults."""
    config = default_config()
    if path is None:
        return config
    path = Path(path)
    logging.info(f"Loading configuration from {path}")
    with open(path, encoding="utf-8") as config_file:
        values = json.load(config_file)
    if not isinstance(values, dict):
        raise ValueError(f"Configuration file {path} must hold a JSON object")
    return config_from_dict(values, config)


def save_config(config: ModelConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as config_file:
        json.dump(config.to_dict(), config_file, indent=2)
        config_file.write("\n")


def default_model_text() -> str:
    """Returns the text of the model file shipped with the package."""
    return resources.files("dctscene").joinpath("data", DEFAULT_MODEL_RESOURCE).read_text(encoding="utf-8")
