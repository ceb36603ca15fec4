import hashlib
import json
import tomllib
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cvforge.bias import WellTemperedParams
from cvforge.errors import ConfigError
from cvforge.features import FeatureSpec, Raw, SinCos, torsion_feature_spec
from cvforge.langevin import LangevinParams
from cvforge.potentials import (
    RAMA_CENTERS,
    RAMA_DEPTHS,
    RAMA_RIDGE,
    RAMA_VALLEY,
    RAMA_WIDTH,
    DoubleWell1D,
    Harmonic,
    RamaTorus2D,
    ToyPotential,
)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(_Section):
    kind: Literal["rama_torus_2d", "double_well_1d", "harmonic"] = "rama_torus_2d"
    a: float = Field(6.0, gt=0)
    k: float = Field(1.0, gt=0)
    dim: int = Field(1, ge=1)
    centers: list[tuple[float, float]] = Field(default_factory=lambda: [tuple(c) for c in RAMA_CENTERS])
    depths: list[float] = Field(default_factory=lambda: list(RAMA_DEPTHS))
    widths: list[float] = Field(default_factory=lambda: [RAMA_WIDTH] * 3)
    ridge: float = Field(RAMA_RIDGE, ge=0)
    valley: float = RAMA_VALLEY

    @model_validator(mode="after")
    def _wells_agree(self):
        if self.kind == "rama_torus_2d" and not len(self.centers) == len(self.depths) == len(self.widths):
            raise ValueError("centers, depths and widths must have equal length")
        return self

    def build(self) -> ToyPotential:
        match self.kind:
            case "double_well_1d":
                return DoubleWell1D(self.a)
            case "harmonic":
                return Harmonic(self.k, self.dim)
            case _:
                return RamaTorus2D(
                    tuple(tuple(c) for c in self.centers),
                    tuple(self.depths),
                    tuple(self.widths),
                    self.ridge,
                    self.valley,
                )


class FeaturesConfig(_Section):
    kind: Literal["sincos", "raw"] = "sincos"
    indices: list[int] | None = None
    scale: bool = True

    def build(self, n_coords: int) -> FeatureSpec:
        if self.kind == "sincos" and self.indices is None:
            return torsion_feature_spec(n_coords)
        indices = self.indices if self.indices is not None else list(range(n_coords))
        transform = SinCos if self.kind == "sincos" else Raw
        return FeatureSpec(tuple(transform(k) for k in indices), n_coords)


class DataConfig(_Section):
    basins: list[int] | None = None
    frames_per_basin: int = Field(1000, ge=2)
    save_stride: int = Field(10, ge=1)


class ClassifierConfig(_Section):
    trainer: Literal["svm", "logreg", "multiclass", "mlp"] = "svm"
    penalty: Literal["l1", "l2"] = "l1"
    C_grid: list[float] = Field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0, 100.0])
    k_folds: int = Field(3, ge=3, le=10)
    tol: float = Field(1e-4, gt=0)
    max_iter: int = Field(1000, ge=1)
    layer_widths: list[int] | None = None
    learning_rates: list[float] = Field(default_factory=lambda: [0.1])
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(1, ge=1)
    sweep_drop_fraction: float = Field(0.2, ge=0, lt=1)

    @model_validator(mode="after")
    def _grid_not_empty(self):
        if not self.C_grid or any(c <= 0 for c in self.C_grid):
            raise ValueError("C_grid must be a non-empty list of positive values")
        if not self.learning_rates or any(lr <= 0 for lr in self.learning_rates):
            raise ValueError("learning_rates must be a non-empty list of positive values")
        return self

    def grid(self) -> list[dict[str, Any]]:
        if self.trainer == "mlp":
            return [
                {
                    "learning_rate": lr,
                    "batch_size": self.batch_size,
                    "epochs": self.epochs,
                    "layer_widths": self.layer_widths,
                }
                for lr in self.learning_rates
            ]
        return [
            {"C": C, "penalty": self.penalty, "tol": self.tol, "max_iter": self.max_iter}
            for C in self.C_grid
        ]


class CVConfig(_Section):
    kind: Literal["model", "raw"] = "model"
    index: int = Field(0, ge=0)
    lr_form: Literal["probability", "odds"] = "probability"
    normalized: bool = True
    node: int = Field(1, ge=0)


class LangevinConfig(_Section):
    dt: float = Field(0.005, gt=0)
    friction: float = Field(1.0, gt=0)
    temperature: float = Field(1.0, gt=0)
    mass: float = Field(1.0, gt=0)

    def build(self, seed: int) -> LangevinParams:
        return LangevinParams(self.dt, self.friction, self.temperature, self.mass, seed)


class MetadConfig(_Section):
    w0: float = Field(1.0, gt=0)
    sigma: list[float] | None = None
    gamma: float = Field(8.0, gt=1)
    deposit_stride: int = Field(400, ge=1)
    steps: int = Field(2_000_000, ge=0)
    save_stride: int = Field(100, ge=1)
    start_basin: int = Field(0, ge=0)
    n_walkers: int = Field(1, ge=1)
    read_stride: int = Field(1000, ge=1)
    mode: Literal["sequential", "parallel"] = "sequential"
    hills_files: bool = False
    grid_cache: bool = False
    core_radius: float = Field(0.6, gt=0)

    @model_validator(mode="after")
    def _positive_sigma(self):
        if self.sigma is not None and (not self.sigma or any(s <= 0 for s in self.sigma)):
            raise ValueError("sigma must be a non-empty list of positive values")
        return self

    def build(self, sigma: Sequence[float], periods: Sequence[float | None]) -> WellTemperedParams:
        return WellTemperedParams(
            self.w0, tuple(sigma), self.gamma, self.deposit_stride, tuple(periods)
        )


class ReweightConfig(_Section):
    estimator: Literal["tiwary", "lastbias"] = "tiwary"
    bins: int = Field(50, ge=2)
    burn_in: float = Field(0.0, ge=0, lt=1)
    cutoff: float = Field(5.0, gt=0)
    grid_points: int | None = Field(None, ge=2)


class ExportConfig(_Section):
    model: Path | None = None
    labels: list[str] | None = None


class WorkflowConfig(_Section):
    seed: int
    out_dir: Path = Path("runs")
    system: SystemConfig = Field(default_factory=SystemConfig)
    features: FeaturesConfig = Field(default_factory=FeaturesConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    cv: CVConfig = Field(default_factory=CVConfig)
    langevin: LangevinConfig = Field(default_factory=LangevinConfig)
    metad: MetadConfig = Field(default_factory=MetadConfig)
    reweight: ReweightConfig = Field(default_factory=ReweightConfig)
    export: ExportConfig = Field(default_factory=ExportConfig)

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def child_seed(self, *keys: int) -> int:
        return int(np.random.SeedSequence([self.seed, *keys]).generate_state(1)[0])


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, assignment: str):
    key, sep, value = assignment.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError([(assignment, "override must look like dotted.key=value")])
    *parents, leaf = key.split(".")
    node = data
    for part in parents:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError([(key, f"`{part}` is not a table")])
        node = child
    node[leaf] = _parse_value(value.strip())


def load_config(
    path: Path | None = None,
    overrides: Sequence[str] = (),
    seed: int | None = None,
    out_dir: Path | None = None,
) -> WorkflowConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError([("config", f"file not found: {path}")]) from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError([("config", f"{path}: {e}")]) from e
    for assignment in overrides:
        apply_override(data, assignment)
    if seed is not None:
        data["seed"] = seed
    if out_dir is not None:
        data["out_dir"] = str(out_dir)
    try:
        return WorkflowConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(
            [(".".join(str(p) for p in err["loc"]) or "config", err["msg"]) for err in e.errors()]
        ) from e
