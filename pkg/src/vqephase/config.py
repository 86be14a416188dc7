"""Declarative run configuration (YAML or JSON), validated with pydantic."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import models
from .vqe import VqeConfig


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSegment(_Strict):
    start: float
    stop: float
    step: float = Field(gt=0)


class ModelSection(_Strict):
    family: Literal["tfim", "cluster_ising", "cluster_yy"] = "tfim"
    n_qubits: int = Field(8, ge=3)
    boundary: Literal["periodic", "open"] = "periodic"
    scan: str | None = None
    start: float = 0.0
    stop: float = 2.0
    step: float = Field(0.01, gt=0)
    values: list[float] | None = None
    segments: list[GridSegment] | None = None
    fixed: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_names(self):
        if self.values is not None and self.segments is not None:
            raise ValueError("give either values or segments, not both")
        names = models.FAMILIES[self.family]
        if self.scan is None:
            self.scan = names[-1]
        if self.scan not in names:
            raise ValueError(f"{self.family} has no parameter {self.scan!r}")
        wanted = set(names) - {self.scan}
        if set(self.fixed) != wanted:
            raise ValueError(f"fixed must set exactly {sorted(wanted)}, got {sorted(self.fixed)}")
        return self


class AnsatzSection(_Strict):
    kind: Literal["tfim", "cluster"] = "tfim"
    blocks: int = Field(4, ge=1)


class VqeSection(_Strict):
    optimizer: Literal["adam", "gd"] = "adam"
    learning_rate: float = Field(0.01, gt=0)
    max_iters: int = Field(2000, ge=1)
    grad_tol: float = Field(1e-6, ge=0)
    init: Literal["uniform_pi", "constant"] = "uniform_pi"
    init_value: float = 1.0
    with_exact: bool = False
    penalty: float = models.DEFAULT_PENALTY

    def to_vqe(self, seed: int) -> VqeConfig:
        return VqeConfig(optimizer=self.optimizer, learning_rate=self.learning_rate,
                         max_iters=self.max_iters, grad_tol=self.grad_tol, seed=seed,
                         init=self.init, init_value=self.init_value)


class LabelRange(_Strict):
    min: float
    max: float
    label: int = Field(ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.min > self.max:
            raise ValueError("label range min exceeds max")
        return self


class VaeSection(_Strict):
    d_latent: int = Field(16, ge=1)
    beta: float = Field(1e-3, ge=0)
    epochs: int = Field(200, ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    heads: int = Field(4, ge=1)
    kernel_size: int = Field(3, ge=1)
    hidden: int = Field(128, ge=1)
    attention: bool = True
    activation: Literal["gelu", "relu", "tanh", "silu"] = "gelu"
    n_train: int | None = Field(None, ge=1)

    @field_validator("kernel_size")
    @classmethod
    def _odd(cls, v):
        if v % 2 != 1:
            raise ValueError("kernel_size must be odd")
        return v

    def estimator_params(self) -> dict:
        return self.model_dump(exclude={"n_train"})


class DiffusionSection(_Strict):
    T: int = Field(1000, ge=1)
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(0.02, gt=0, lt=1)
    hidden: int = Field(256, ge=1)
    n_hidden: int = Field(2, ge=1)
    time_dim: int = Field(32, ge=2)
    epochs: int = Field(10000, ge=1)
    batch_size: int = Field(128, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    activation: Literal["gelu", "relu", "tanh", "silu"] = "silu"


class AnalysisSection(_Strict):
    n_clusters: int = Field(2, ge=1)
    pca_depth: int = Field(2, ge=1)
    window: int | None = Field(None, ge=1)
    stride: int = Field(1, ge=1)
    rel_height: float = Field(0.5, ge=0, le=1)
    label_map: dict[int, str] = Field(default_factory=dict)


class GenerateSection(_Strict):
    method: Literal["cvae", "diffusion"] = "cvae"
    label: int = 0
    n: int = Field(1000, ge=0)


class EvalSection(_Strict):
    observables: list[Literal["magnetization", "z_profile", "string_order", "fidelity",
                              "energy_discrepancy"]] = Field(
        default_factory=lambda: ["magnetization", "string_order", "energy_discrepancy"])


class PathsSection(_Strict):
    dataset: str | None = None
    vae_checkpoint: str | None = None
    checkpoint: str | None = None


class RunConfig(_Strict):
    seed: int = 0
    output_dir: str = "out"
    model: ModelSection = Field(default_factory=ModelSection)
    ansatz: AnsatzSection = Field(default_factory=AnsatzSection)
    vqe: VqeSection = Field(default_factory=VqeSection)
    vae: VaeSection = Field(default_factory=VaeSection)
    variant: Literal["vae", "cvae", "diffusion"] = "vae"
    labels: list[LabelRange] = Field(default_factory=list)
    diffusion: DiffusionSection = Field(default_factory=DiffusionSection)
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)
    generate: GenerateSection = Field(default_factory=GenerateSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    paths: PathsSection = Field(default_factory=PathsSection)

    def config_hash(self) -> str:
        """Hash of every setting that affects results; file locations are excluded."""
        data = self.model_dump(mode="json", exclude={"paths", "output_dir"})
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    return parse_config(data or {})


def parse_config(data: dict) -> RunConfig:
    from pydantic import ValidationError

    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def label_for(x: float, ranges: list[LabelRange]) -> int | None:
    """Label of the first range containing ``x`` (closed intervals), else ``None``."""
    for r in ranges:
        if r.min - 1e-12 <= x <= r.max + 1e-12:
            return r.label
    return None
