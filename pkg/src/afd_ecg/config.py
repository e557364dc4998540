"""Pipeline configuration: one JSON file, command-line flags override it."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from afd_ecg.afd import DEFAULT_RINGS, R_MAX
from afd_ecg.features import AFD_LEVEL, CLASSES
from afd_ecg.svm import MODEL2_PARAMS, SVMParams

DATA_DIR_ENV = "AFD_ECG_DATA_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class AFDSettings:
    level: int = AFD_LEVEL
    rings: int = DEFAULT_RINGS
    r_max: float = R_MAX

    def validate(self):
        if not 1 <= self.level <= 256:
            raise ConfigError("afd.level must be in 1..256")
        if self.rings < 2:
            raise ConfigError("afd.rings must be >= 2")
        if not 0 < self.r_max < 1:
            raise ConfigError("afd.r_max must be in (0, 1)")


@dataclass
class SVMSettings:
    C: float = MODEL2_PARAMS.C
    sigma: float = MODEL2_PARAMS.sigma
    class_weights: dict = field(default_factory=lambda: dict(MODEL2_PARAMS.class_weights))
    tol: float = 1e-3
    cache_mb: float = 256.0

    def validate(self):
        if set(self.class_weights) != set(CLASSES):
            raise ConfigError(f"svm.class_weights needs exactly the keys {CLASSES}")
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(f"svm: {exc}") from None
        if not self.tol > 0:
            raise ConfigError("svm.tol must be positive")

    def params(self) -> SVMParams:
        return SVMParams(self.C, self.sigma, self.class_weights)


@dataclass
class GridSettings:
    C: list = field(default_factory=lambda: [2.0, 2.5, 2.8, 3.0, 3.5])
    sigma: list = field(default_factory=lambda: [0.0004, 0.0005, 0.0006, 0.0007])
    folds: int = 10

    def validate(self):
        if not self.C or not self.sigma:
            raise ConfigError("grid_search needs non-empty C and sigma lists")
        if self.folds < 2:
            raise ConfigError("grid_search.folds must be >= 2")


@dataclass
class PipelineConfig:
    data_dir: str | None = None
    mitdb_subdir: str = "mitdb"
    svdb_subdir: str = "svdb"
    split_file: str | None = None
    model_file: str = "model.json"
    lead: int = 0
    svdb_lead: int = 0
    two_lead: bool = False
    augment_svdb: bool = False
    seed: int = 0
    jobs: int = 1
    afd: AFDSettings = field(default_factory=AFDSettings)
    svm: SVMSettings = field(default_factory=SVMSettings)
    grid_search: GridSettings = field(default_factory=GridSettings)

    _SECTIONS = {"afd": AFDSettings, "svm": SVMSettings, "grid_search": GridSettings}

    def validate(self) -> "PipelineConfig":
        if self.lead < 0 or self.svdb_lead < 0:
            raise ConfigError("lead indices must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.afd.validate()
        self.svm.validate()
        self.grid_search.validate()
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            section = cls._SECTIONS.get(key)
            if section is not None:
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be an object")
                sub_known = {f.name for f in fields(section)}
                bad = set(value) - sub_known
                if bad:
                    raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
                value = section(**value)
            kwargs[key] = value
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "PipelineConfig":
        if path is None:
            cfg = cls().validate()
        else:
            try:
                d = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            cfg = cls.from_dict(d)
        env = os.environ.get(DATA_DIR_ENV)
        if env:
            cfg.data_dir = env
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def data_path(self, sub: str) -> Path:
        if not self.data_dir:
            raise ConfigError(f"no data directory (set data_dir or ${DATA_DIR_ENV})")
        return Path(self.data_dir) / sub
