"""
Experiment configuration schema.

Every section rejects unknown keys. Validation errors surface as ConfigError
with the dotted path of the offending key.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.services.config_file import format_flat, nest, read_flat
from app.services.errors import ConfigError, DomainError
from app.services.losses import EmpiricalTriple, LossKind, LossSpec, parse_loss_label
from app.services.network import Activation, Head, InitKind, InitScheme, ModelConfig
from app.services.normpower import NormKind, NormPower
from app.services.optim import OmegaSpec

DEFAULT_SWEEP_LOSSES = ["mse", "softmax_ce", "l1", "smooth_l1"] + [f"pnorm_pow{k}" for k in range(1, 7)]


def _split_list(value):
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class ModelSection(_Section):
    input_dim: int | None = Field(default=None, ge=1)  # taken from the data when unset
    output_dim: int | None = Field(default=None, ge=1)
    block_count: int = Field(default=1, ge=0)
    hidden_width: int = Field(default=32, ge=1)
    activation: Activation = Activation.RELU
    skip_connections: bool = False
    dropout_rate: float = Field(default=0.0, ge=0.0, lt=1.0)
    head: Head = Head.LINEAR


class InitSection(_Section):
    kind: InitKind = InitKind.HE
    seed: int | None = None  # falls back to the run seed


class LossSection(_Section):
    kind: LossKind = LossKind.SOFTMAX_CE
    beta: float = Field(default=1.0, gt=0)
    k: int = Field(default=2, ge=1, le=6)
    convex_scale: float = Field(default=1.0, gt=0)
    convex_order: float | None = Field(default=None, gt=1)
    convex_relaxation: float = Field(default=0.0, ge=0)
    smooth_scale: float = Field(default=1.0, gt=0)
    smooth_order: float | None = Field(default=None, gt=1)
    smooth_relaxation: float = Field(default=0.0, ge=0)


class OptimizerSection(_Section):
    lr: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    batch_size: int = Field(default=64, ge=1)
    steps: int = Field(default=1000, ge=0)
    epochs: int | None = Field(default=None, ge=0)
    adaptive_step: bool = False
    omega_scale: float = Field(default=0.5, gt=0)
    omega_order: float = Field(default=2.0, gt=1)
    omega_norm: NormKind = NormKind.L2
    omega_p: float | None = Field(default=None, gt=1)
    omega_relaxation: float = Field(default=0.0, ge=0)
    m_stride: int = Field(default=10, ge=0)
    epsilon: float = Field(default=0.1, gt=0)
    checkpoint_stride: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _lp_needs_p(self):
        if self.omega_norm is NormKind.LP and self.omega_p is None:
            raise ValueError("omega_norm = lp requires omega_p")
        return self


class DiagnosticsSection(_Section):
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    eig_floor: float | None = Field(default=None, gt=0)
    log_base: float = Field(default=math.e, gt=1)
    stride: int = Field(default=10, ge=1)
    batch_size: int = Field(default=16, ge=1)
    pearson_window: int = Field(default=50, ge=2)
    pearson_after_step: int = Field(default=500, ge=0)

    @field_validator("weights", mode="before")
    @classmethod
    def _weights_list(cls, value):
        return _split_list(value)

    @field_validator("log_base", mode="before")
    @classmethod
    def _natural(cls, value):
        if isinstance(value, str) and value.strip().lower() == "e":
            return math.e
        return value


class DataSection(_Section):
    source: Literal["synthetic", "idx"] = "synthetic"
    images_path: str | None = None
    labels_path: str | None = None
    classes: int = Field(default=10, ge=1)
    per_class: int = Field(default=100, ge=1)
    dim: int = Field(default=16, ge=1)
    separation: float = Field(default=4.0, ge=0)
    subset_n: int | None = Field(default=None, ge=1)
    seed: int | None = None  # falls back to the run seed

    @model_validator(mode="after")
    def _idx_paths(self):
        if self.source == "idx" and not (self.images_path and self.labels_path):
            raise ValueError("data.source = idx requires images_path and labels_path")
        return self


class SweepSection(_Section):
    k_list: list[int] = Field(default_factory=lambda: [0, 2, 4, 8, 12])
    seeds: int = Field(default=20, ge=1)
    losses: list[str] = Field(default_factory=lambda: list(DEFAULT_SWEEP_LOSSES))

    @field_validator("k_list", "losses", mode="before")
    @classmethod
    def _comma_list(cls, value):
        return _split_list(value)

    @field_validator("k_list")
    @classmethod
    def _non_negative(cls, value):
        if not value or any(k < 0 for k in value):
            raise ValueError("k_list needs at least one block count >= 0")
        return value

    @field_validator("losses")
    @classmethod
    def _known_losses(cls, value):
        for label in value:
            try:
                parse_loss_label(label)
            except (ValueError, DomainError) as exc:
                raise ValueError(f"unknown loss {label!r}: {exc}") from None
        return value


class GicSection(_Section):
    epsilon: float | None = Field(default=None, gt=0)
    pass_constant: float = Field(default=5.0, ge=0)
    min_pass_fraction: float = Field(default=0.5, ge=0, le=1)
    monte_carlo: bool = False
    mc_theta_count: int = Field(default=10_000, ge=3)
    mc_output_dim: int = Field(default=50, ge=2)
    mc_trials: int = Field(default=200, ge=1)
    checkpoint: str | None = None


class ExperimentConfig(_Section):
    model: ModelSection = Field(default_factory=ModelSection)
    init: InitSection = Field(default_factory=InitSection)
    loss: LossSection = Field(default_factory=LossSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    diagnostics: DiagnosticsSection = Field(default_factory=DiagnosticsSection)
    data: DataSection = Field(default_factory=DataSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    gic: GicSection = Field(default_factory=GicSection)
    output_dir: str | None = None
    seed: int = 0

    @property
    def init_seed(self) -> int:
        return self.seed if self.init.seed is None else self.init.seed

    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def loss_spec(self, label: str | None = None) -> LossSpec:
        """LossSpec for the configured loss, or for a sweep label sharing the empirical triples."""
        section = self.loss
        base = parse_loss_label(label) if label else LossSpec(section.kind, beta=section.beta, k=section.k)
        return LossSpec(
            base.kind,
            beta=section.beta,
            k=base.k,
            convex=EmpiricalTriple(section.convex_scale, section.convex_order, section.convex_relaxation),
            smooth=EmpiricalTriple(section.smooth_scale, section.smooth_order, section.smooth_relaxation),
        )

    def model_config_for(self, input_dim: int, output_dim: int) -> ModelConfig:
        m = self.model
        if m.input_dim is not None and m.input_dim != input_dim:
            raise ConfigError(f"model.input_dim={m.input_dim} but the data has {input_dim} features", "model.input_dim")
        if m.output_dim is not None and m.output_dim != output_dim:
            raise ConfigError(f"model.output_dim={m.output_dim} but the data has {output_dim} classes", "model.output_dim")
        return ModelConfig(
            input_dim=input_dim,
            output_dim=output_dim,
            block_count=m.block_count,
            hidden_width=m.hidden_width,
            activation=m.activation,
            skip_connections=m.skip_connections,
            dropout_rate=m.dropout_rate,
            head=m.head,
        )

    def init_scheme(self) -> InitScheme:
        return InitScheme(self.init.kind, self.init_seed)

    def omega_spec(self) -> OmegaSpec:
        o = self.optimizer
        p = o.omega_p if o.omega_norm is NormKind.LP else None
        return OmegaSpec(NormPower(o.omega_norm, o.omega_order, o.omega_scale, p=p), o.omega_relaxation)

    def to_flat(self) -> str:
        return format_flat(self.model_dump(mode="json"))


def _key_path(loc: tuple) -> str:
    return ".".join(str(part) for part in loc if not isinstance(part, int))


def validate_config(tree: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], key_path=_key_path(first["loc"]) or None) from None


def load_experiment_config(path: str | Path | None = None, overrides: dict[str, object] | None = None) -> ExperimentConfig:
    """Read a flat config file (optional), apply dotted-key overrides, validate."""
    flat: dict[str, object] = dict(read_flat(path)) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            flat[key] = value
    return validate_config(nest(flat))
