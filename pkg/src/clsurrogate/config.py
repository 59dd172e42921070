"""Benchmark configuration, loaded from YAML. Unknown keys are rejected."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .datasets import Dataset, SyntheticSpec, generate_synthetic, load_csv
from .errors import CLError, ConfigError
from .nn import NetworkSpec
from .scenarios import ExperienceStream, build_bin_incremental, build_input_incremental, normalize_stream
from .strategies import STRATEGIES, TrainConfig, make_params


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticSource(_Strict):
    n_samples: int = 2000
    feature_dim: int = 8
    n_categories: int = 3
    noise_std: float = 0.01
    seed: int = 0
    cluster_std: float = 1.0

    def spec(self) -> SyntheticSpec:
        return SyntheticSpec(**self.model_dump())


class CsvSource(_Strict):
    path: Path
    feature_columns: list[str] = Field(min_length=1)
    target_column: str
    category_column: str | None = None


class DatasetSource(_Strict):
    synthetic: SyntheticSource | None = None
    csv: CsvSource | None = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.synthetic is None) == (self.csv is None):
            raise ValueError("dataset needs exactly one of 'synthetic' or 'csv'")
        return self

    def load(self) -> Dataset:
        if self.synthetic is not None:
            return generate_synthetic(self.synthetic.spec())
        src = self.csv
        return load_csv(src.path, src.feature_columns, src.target_column, src.category_column)


class ScenarioConfig(_Strict):
    kind: Literal["bin_incremental", "input_incremental"] = "bin_incremental"
    n_bins: int = 4
    mode: Literal["quantile", "equal_width"] = "quantile"
    test_fraction: float = 0.2
    category_order: list[str] | None = None
    normalize: bool = True

    @field_validator("test_fraction")
    @classmethod
    def _fraction(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        return v

    @model_validator(mode="after")
    def _order_needed(self):
        if self.kind == "input_incremental" and not self.category_order:
            raise ValueError("input_incremental needs category_order")
        return self

    def build(self, dataset: Dataset, seed: int) -> ExperienceStream:
        if self.kind == "bin_incremental":
            stream = build_bin_incremental(dataset, self.n_bins, self.mode, self.test_fraction, seed)
        else:
            stream = build_input_incremental(dataset, self.category_order, self.test_fraction, seed)
        if self.normalize:
            stream, _ = normalize_stream(stream)
        return stream


class NetworkConfig(_Strict):
    hidden_layers: list[int] = Field(default_factory=lambda: [64, 64, 64])
    activation: Literal["relu", "tanh"] = "relu"
    residual: bool = False

    def spec(self, input_dim: int) -> NetworkSpec:
        return NetworkSpec(input_dim, tuple(self.hidden_layers), self.activation, self.residual)


class TrainSettings(_Strict):
    epochs_per_experience: int = Field(30, ge=1)
    batch_size: int = Field(32, ge=1)
    optimizer: Literal["sgd", "adam"] = "adam"
    learning_rate: float = Field(1e-3, gt=0)

    def for_seed(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.model_dump())


def _default_strategies() -> dict[str, dict[str, Any]]:
    return {name: {} for name in STRATEGIES}


class BenchmarkConfig(_Strict):
    name: str = "benchmark"
    dataset: DatasetSource = Field(default_factory=lambda: DatasetSource(synthetic=SyntheticSource()))
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    train: TrainSettings = Field(default_factory=TrainSettings)
    strategies: dict[str, dict[str, Any]] = Field(default_factory=_default_strategies)
    n_trials: int = Field(5, ge=1)
    base_seed: int = 0
    output: Path = Path("results")
    parallelism: int = Field(1, ge=1)
    sequential_timing: bool = True

    @field_validator("strategies")
    @classmethod
    def _strategies(cls, v):
        if not v:
            raise ValueError("at least one strategy is required")
        for name, params in v.items():
            try:
                make_params(name, params or {})
            except ConfigError as exc:
                raise ValueError(str(exc)) from None
        return {name: dict(params or {}) for name, params in v.items()}

    @property
    def workers(self) -> int:
        return 1 if self.sequential_timing else self.parallelism


def parse_config(data: dict[str, Any] | None) -> BenchmarkConfig:
    try:
        return BenchmarkConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None
    except CLError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> BenchmarkConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = parse_config(data)
    src = cfg.dataset.csv
    if src is not None and not src.path.is_absolute():
        src.path = path.parent / src.path
    return cfg


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "invalid config: " + "; ".join(parts)
