"""JSON run configuration: schema, defaults, flag overrides, and conversion to
the dataclass configs used by the library."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .benchmark import BenchConfig
from .diffusion import ScenarioRanges
from .errors import ConfigError, PgirError
from .field import GridSpec
from .pipeline import TrainConfig
from .synth import ColormapSpec, NoiseSpec, SynthConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSection(_Section):
    height: int = Field(64, ge=8)
    width: int = Field(64, ge=8)


class RangesSection(_Section):
    D_range: tuple[float, float] = (0.05, 0.2)
    edge_range: tuple[float, float] = (0.0, 0.3)
    x0_range: tuple[float, float] = (0.6, 1.0)
    t_range: tuple[float, float] = (0.01, 0.5)
    K: int = Field(32, ge=1)


class NoiseSection(_Section):
    sigma_field: float = Field(0.02, ge=0)
    sigma_label: float = Field(0.01, ge=0)
    circle_count: tuple[int, int] = (3, 7)
    circle_radius: tuple[int, int] = (2, 8)


class ColormapSection(_Section):
    low_rgb: tuple[int, int, int] = (255, 255, 0)
    high_rgb: tuple[int, int, int] = (0, 100, 0)


class TrainSection(_Section):
    epochs: int = Field(55, ge=1)
    window: tuple[int, int] = (25, 55)
    lr_inverse: float = Field(1e-3, gt=0)
    lr_regressor: float = Field(1e-4, gt=0)
    batch_size: int = Field(16, ge=1)
    fidelity_weight: float = Field(0.0, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _window_inside(self):
        lo, hi = self.window
        if not 1 <= lo <= hi <= self.epochs:
            raise ValueError(f"window {self.window} outside [1, {self.epochs}]")
        return self


class BenchSection(_Section):
    train_sizes: list[int] = [15, 25, 50, 75, 100]
    test_size: int = Field(150, ge=1)
    reps: int = Field(1, ge=1)
    variant: Literal["resnet18", "resnet-small"] = "resnet-small"
    base_seed: int = 0
    jobs: int = Field(1, ge=1)
    null_labels: bool = False


class RunConfig(_Section):
    grid: GridSection = GridSection()
    scenario_ranges: RangesSection = RangesSection()
    noise: NoiseSection = NoiseSection()
    colormap: ColormapSection = ColormapSection()
    train: TrainSection = TrainSection()
    bench: BenchSection = BenchSection()

    def synth(self) -> SynthConfig:
        try:
            return SynthConfig(
                grid=GridSpec(self.grid.height, self.grid.width),
                ranges=ScenarioRanges(**self.scenario_ranges.model_dump()),
                colormap=ColormapSpec(**self.colormap.model_dump()),
                noise=NoiseSpec(**self.noise.model_dump()),
            )
        except PgirError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train.model_dump())

    def bench_config(self) -> BenchConfig:
        b = self.bench
        return BenchConfig(
            train_sizes=tuple(b.train_sizes),
            test_size=b.test_size,
            reps=b.reps,
            variant=b.variant,
            base_seed=b.base_seed,
            synth=self.synth(),
            train=self.train_config(),
            null_labels=b.null_labels,
        )


def _merge(base: dict, updates: dict) -> dict:
    out = dict(base)
    for k, v in updates.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """defaults < config file < ``overrides`` (nested dict of flag values)."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    data = _merge(data, overrides or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def write_effective_config(cfg: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / "effective_config.json"
    path.write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
