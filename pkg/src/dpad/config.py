"""Run configuration: one JSON document covering data, bank, routing,
losses, and training, validated with named errors. A single top-level
seed feeds every per-purpose random stream."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .bank import BankConfig
from .data import DataError, SplitSpec, SynthConfig, load_csv, synth_generate
from .gp_priors import ConfigurationError, KernelMixtureConfig, RareInitConfig
from .losses import DGLossConfig
from .model import VARIANTS, ForecastModel
from .routing import RoutingConfig
from .trainer import TrainConfig

__all__ = ["ConfigError", "DataConfig", "RunConfig"]


class ConfigError(ValueError):
    pass


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")


@dataclass
class DataConfig:
    source: str = "synth"                 # synth | csv
    synth: SynthConfig = field(default_factory=SynthConfig)
    csv_path: str | None = None
    target_columns: list | None = None
    split: dict = field(default_factory=lambda: {"kind": "fractional",
                                                 "train_frac": 0.7, "val_frac": 0.1})
    stride: int = 1

    def validate(self) -> "DataConfig":
        if self.source not in ("synth", "csv"):
            raise ConfigError(f"data.source must be 'synth' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("data.csv_path required when data.source is 'csv'")
        if self.stride < 1:
            raise ConfigError("data.stride must be >= 1")
        kind = self.split.get("kind", "fractional")
        if kind not in ("fractional", "ett_hourly", "single"):
            raise ConfigError(f"unknown split kind {kind!r}")
        return self

    def to_dict(self) -> dict:
        return {"source": self.source, "synth": self.synth.to_dict(),
                "csv_path": self.csv_path, "target_columns": self.target_columns,
                "split": self.split, "stride": self.stride}

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        _check_keys("data", d, ("source", "synth", "csv_path", "target_columns",
                                "split", "stride"))
        d = dict(d)
        if "synth" in d:
            _check_keys("data.synth", d["synth"], SynthConfig().to_dict().keys())
            d["synth"] = SynthConfig.from_dict(d["synth"])
        return cls(**d)

    def split_spec(self, total_rows: int) -> SplitSpec:
        kind = self.split.get("kind", "fractional")
        if kind == "ett_hourly":
            return SplitSpec.ett_hourly(total_rows)
        if kind == "single":
            return SplitSpec.single(total_rows)
        return SplitSpec.fractional(total_rows,
                                    self.split.get("train_frac", 0.7),
                                    self.split.get("val_frac", 0.1))


@dataclass
class RunConfig:
    seed: int = 0
    look_back: int = 96
    horizon: int = 24
    variant: str = "full"
    decompose: bool = False
    ma_window: int = 25
    data: DataConfig = field(default_factory=DataConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    loss: DGLossConfig = field(default_factory=DGLossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/dpad"

    def validate(self) -> "RunConfig":
        if self.look_back < 2:
            raise ConfigError("look_back must be >= 2")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        self.data.validate()
        try:
            self.bank.validate()
            self.routing.validate(self.bank.num_common if self.variant != "no_ddp" else None)
            self.loss.validate()
            self.train.validate()
        except (ConfigurationError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "look_back": self.look_back,
            "horizon": self.horizon,
            "variant": self.variant,
            "decompose": self.decompose,
            "ma_window": self.ma_window,
            "data": self.data.to_dict(),
            "bank": self.bank.to_dict(),
            "routing": self.routing.to_dict(),
            "loss": self.loss.to_dict(),
            "train": self.train.to_dict(),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys("config", d, ("seed", "look_back", "horizon", "variant",
                                  "decompose", "ma_window", "data", "bank",
                                  "routing", "loss", "train", "output_dir"))
        d = dict(d)
        if "data" in d:
            d["data"] = DataConfig.from_dict(d["data"])
        if "bank" in d:
            _check_keys("bank", d["bank"], BankConfig().to_dict().keys())
            bank = dict(d["bank"])
            if "kernel" in bank:
                _check_keys("bank.kernel", bank["kernel"],
                            KernelMixtureConfig().__dict__.keys())
            if "rare" in bank:
                _check_keys("bank.rare", bank["rare"], RareInitConfig().__dict__.keys())
            d["bank"] = BankConfig.from_dict(bank)
        if "routing" in d:
            _check_keys("routing", d["routing"], RoutingConfig().to_dict().keys())
            d["routing"] = RoutingConfig(**d["routing"])
        if "loss" in d:
            _check_keys("loss", d["loss"], DGLossConfig().to_dict().keys())
            d["loss"] = DGLossConfig(**d["loss"])
        if "train" in d:
            _check_keys("train", d["train"], TrainConfig().to_dict().keys())
            d["train"] = TrainConfig(**d["train"])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cfg._propagate_seed().validate()

    def _propagate_seed(self) -> "RunConfig":
        """One top-level seed drives every stream."""
        self.data.synth.seed = self.seed
        self.bank.seed = self.seed
        self.train.seed = self.seed
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def with_seed(self, seed: int) -> "RunConfig":
        clone = RunConfig.from_dict(self.to_dict())
        clone.seed = seed
        return clone._propagate_seed()

    def with_variant(self, variant: str, fusion: str | None = None) -> "RunConfig":
        clone = RunConfig.from_dict(self.to_dict())
        clone.variant = variant
        if fusion is not None:
            clone.routing.fusion = fusion
        return clone.validate()

    def build_model(self) -> ForecastModel:
        self.bank.base_len = self.look_back
        return ForecastModel(self.look_back, self.horizon, self.bank, self.routing,
                             variant=self.variant, decompose=self.decompose,
                             ma_window=self.ma_window, seed=self.seed)

    def load_frame(self):
        """Returns (frame, events)."""
        if self.data.source == "synth":
            frame, events = synth_generate(self.data.synth)
            return frame, events
        try:
            frame = load_csv(self.data.csv_path, self.data.target_columns)
        except (OSError, DataError) as exc:
            raise ConfigError(str(exc)) from None
        return frame, []
