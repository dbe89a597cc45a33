"""Run configuration: one merged, file-loadable view of every component config."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .contrast import ContrastConfig
from .evaluate import EvalConfig
from .memory import MemoryConfig
from .network import ModelConfig
from .proposals import InferenceConfig
from .pseudo import PseudoConfig
from .train import TrainConfig


class ConfigFileError(Exception):
    pass


@dataclass
class DataConfig:
    dataset_dir: str | None = None
    train_split: str = "train"
    eval_split: str = "test"
    num_segments: int = 75

    def __post_init__(self):
        if self.num_segments < 1:
            raise ValueError("num_segments must be >= 1")


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "memory": MemoryConfig,
    "contrast": ContrastConfig,
    "pseudo": PseudoConfig,
    "inference": InferenceConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    contrast: ContrastConfig = field(default_factory=ContrastConfig)
    pseudo: PseudoConfig = field(default_factory=PseudoConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigFileError(f"config root must be a mapping, got {type(data).__name__}")
        sections = {}
        for key, value in data.items():
            if key not in _SECTIONS:
                raise ConfigFileError(
                    f"unknown config section '{key}' (known: {', '.join(sorted(_SECTIONS))})"
                )
            section_cls = _SECTIONS[key]
            known = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(value) - known
            if bad:
                raise ConfigFileError(
                    f"unknown key(s) in section '{key}': {', '.join(sorted(bad))}"
                )
            try:
                sections[key] = section_cls(**value)
            except (TypeError, ValueError) as exc:
                raise ConfigFileError(f"invalid section '{key}': {exc}") from exc
        return cls(**sections)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigFileError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigFileError(f"{path}: not valid YAML ({exc})") from exc
        return cls.from_dict(data or {})

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """New config with dotted-path overrides applied and revalidated.

        Keys look like 'train.seed' or 'contrast.temperature'; values replace
        the stored ones before every section's validation reruns.
        """
        data = self.to_dict()
        for dotted, value in overrides.items():
            section, _, name = dotted.partition(".")
            if section not in data or not name:
                raise ConfigFileError(f"unknown override target '{dotted}'")
            if name not in data[section]:
                raise ConfigFileError(f"unknown override target '{dotted}'")
            data[section][name] = value
        return RunConfig.from_dict(data)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value
