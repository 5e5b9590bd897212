"""Run configuration shared by the command-line tool.

A :class:`RunConfig` holds every parameter a command uses.  Commands write
the resolved config as ``config.json`` next to their outputs; passing that
file back with ``--config`` repeats the run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .evaluation import DEFAULT_TOLERANCE
from .exceptions import ConfigurationError, DataError
from .loss import LossConfig
from .model import ModelVariant, variant_by_name
from .training import TrainConfig

CONFIG_NAME = "config.json"


@dataclass
class RunConfig:
    command: str = ""
    # paths
    dataset: str | None = None
    test_dataset: str | None = None
    out: str | None = None
    checkpoint: str | None = None
    predictions: str | None = None
    reports: list = field(default_factory=list)
    force: bool = False
    # data generation
    n: int = 8
    height: int = 96
    width: int = 96
    seed: int = 0
    scene: dict = field(default_factory=dict)
    # model and optimisation
    variant: str = "default"
    variant_overrides: dict = field(default_factory=dict)
    loss: dict = field(default_factory=lambda: asdict(LossConfig()))
    train: dict = field(default_factory=lambda: TrainConfig().to_dict())
    # evaluation
    tol: float = DEFAULT_TOLERANCE
    thresholds: int = 99
    # ablation
    variants: list = field(default_factory=lambda: ["default", "no_mcl", "plain_head"])
    seeds: list = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        if self.n < 0:
            raise ConfigurationError(f"n must be >= 0, got {self.n}")
        if self.height < 1 or self.width < 1:
            raise ConfigurationError(f"image size must be positive, got {self.height}x{self.width}")
        if self.thresholds < 1:
            raise ConfigurationError("need at least one threshold")
        if not self.tol > 0:
            raise ConfigurationError(f"tolerance must be positive, got {self.tol}")
        # fail early on bad nested settings
        self.loss_config()
        self.train_config()

    # -- typed views -------------------------------------------------------------------

    def model_variant(self) -> ModelVariant:
        return variant_by_name(self.variant, **_variant_overrides(self.variant_overrides))

    def loss_config(self) -> LossConfig:
        return _build(LossConfig, self.loss, "loss")

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, self.train, "train")

    # -- text form ---------------------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = asdict(self.loss_config())
        d["train"] = self.train_config().to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise DataError(f"{path}: config file not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigurationError(f"{path}: expected a JSON object")
        return cls.from_dict(d)

    def save(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        path = out / CONFIG_NAME
        path.write_text(self.to_json())
        return path


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown {section} settings: {unknown}")
    return cls(**values)


def _variant_overrides(d: dict) -> dict:
    """Turn JSON overrides (nested dicts allowed) into ModelVariant kwargs."""
    if not d:
        return {}
    base = ModelVariant.from_dict({k: v for k, v in d.items()})
    return {k: getattr(base, k) for k in d}
