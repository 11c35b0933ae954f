"""
Block-structured MLPs with a flat parameter vector θ.

Layout: stem (input -> width, activation), k blocks (width -> width,
activation, optionally wrapped in an identity skip), and a linear head.
θ stores every affine layer as row-major W followed by b, in layer order.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Union

import numpy as np

from app.services.autodiff import Tape, forward, sigmoid
from app.services.errors import ConfigError, DataFormatError, DomainError

logger = logging.getLogger("gensmooth.network")


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


class Head(str, Enum):
    LINEAR = "linear"
    NONE = "none"


class InitKind(str, Enum):
    HE = "he"
    XAVIER = "xavier"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    output_dim: int
    block_count: int = 1
    hidden_width: int = 32
    activation: Activation = Activation.RELU
    skip_connections: bool = False
    dropout_rate: float = 0.0
    head: Head = Head.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "head", Head(self.head))
        if self.input_dim < 1 or self.output_dim < 1 or self.hidden_width < 1:
            raise ConfigError("model dimensions must be positive", key_path="model")
        if self.block_count < 0:
            raise ConfigError("block_count must be >= 0", key_path="model.block_count")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)", key_path="model.dropout_rate")


@dataclass(frozen=True)
class InitScheme:
    kind: InitKind = InitKind.HE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", InitKind(self.kind))


@dataclass(frozen=True)
class AffineLayer:
    in_dim: int
    out_dim: int
    offset: int = 0

    @property
    def weight_count(self) -> int:
        return self.in_dim * self.out_dim

    @property
    def parameter_count(self) -> int:
        return self.weight_count + self.out_dim

    @property
    def weights(self) -> slice:
        return slice(self.offset, self.offset + self.weight_count)

    @property
    def bias(self) -> slice:
        return slice(self.offset + self.weight_count, self.offset + self.parameter_count)


@dataclass(frozen=True)
class ShiftLayer:
    """Bias-only layer: h + b."""

    dim: int
    offset: int = 0

    @property
    def parameter_count(self) -> int:
        return self.dim


@dataclass(frozen=True)
class ActivationLayer:
    kind: Activation
    droppable: bool = True


@dataclass(frozen=True)
class Stage:
    """One addressable unit of the model (stem, block i, head)."""

    name: str
    body: tuple
    skip: bool = False

    @property
    def parameter_count(self) -> int:
        return sum(getattr(layer, "parameter_count", 0) for layer in self.body)


Layer = Union[AffineLayer, ShiftLayer, ActivationLayer]
MaskFn = Callable[[int, int], np.ndarray]


def _io_dims(body: tuple, in_dim: int) -> int:
    dim = in_dim
    for layer in body:
        if isinstance(layer, AffineLayer):
            if layer.in_dim != dim:
                raise ConfigError(f"affine layer expects width {layer.in_dim}, receives {dim}", key_path="model")
            dim = layer.out_dim
        elif isinstance(layer, ShiftLayer) and layer.dim != dim:
            raise ConfigError(f"shift layer expects width {layer.dim}, receives {dim}", key_path="model")
    return dim


@dataclass(frozen=True)
class ParamModel:
    input_dim: int
    output_dim: int
    stages: tuple[Stage, ...]
    config: ModelConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("model has no layers", key_path="model")
        dim = self.input_dim
        expected_offset = 0
        for stage in self.stages:
            for layer in stage.body:
                if hasattr(layer, "offset"):
                    if layer.offset != expected_offset:
                        raise ConfigError(f"stage {stage.name} parameters are not contiguous", key_path="model")
                    expected_offset += layer.parameter_count
            out = _io_dims(stage.body, dim)
            if stage.skip and out != dim:
                raise ConfigError(
                    f"skip connection on {stage.name} needs equal widths, got {dim} -> {out}",
                    key_path="model.skip_connections",
                )
            dim = out
        if dim != self.output_dim:
            raise ConfigError(f"model output width {dim} differs from output_dim {self.output_dim}", key_path="model")

    @property
    def parameter_count(self) -> int:
        return sum(stage.parameter_count for stage in self.stages)

    def stage_slices(self) -> dict[str, slice]:
        slices = {}
        start = 0
        for stage in self.stages:
            slices[stage.name] = slice(start, start + stage.parameter_count)
            start += stage.parameter_count
        return slices

    def affine_layers(self) -> list[AffineLayer]:
        return [layer for stage in self.stages for layer in stage.body if isinstance(layer, AffineLayer)]

    def record(self, tape: Tape, x_node: int, mask_fn: MaskFn | None = None) -> int:
        node = x_node
        for index, stage in enumerate(self.stages):
            entry = node
            for layer in stage.body:
                if isinstance(layer, AffineLayer):
                    node = tape.affine(node, layer.offset, layer.out_dim, layer.in_dim, layer=index)
                elif isinstance(layer, ShiftLayer):
                    node = tape.shift(node, layer.offset, layer=index)
                elif isinstance(layer, ActivationLayer):
                    node = tape.activation(node, layer.kind.value, layer=index)
                    if mask_fn is not None and layer.droppable:
                        node = tape.mask(node, mask_fn(index, tape.nodes[node].value.shape[0]), layer=index)
            if stage.skip:
                node = tape.add(entry, node, layer=index)
        return node

    def describe(self) -> str:
        names = ",".join(f"{s.name}{'+skip' if s.skip else ''}" for s in self.stages)
        return f"{self.input_dim}->{self.output_dim} |θ|={self.parameter_count} [{names}]"


def build(config: ModelConfig) -> ParamModel:
    stages: list[Stage] = []
    offset = 0
    width = config.hidden_width
    act = ActivationLayer(config.activation)

    def affine(in_dim: int, out_dim: int) -> AffineLayer:
        nonlocal offset
        layer = AffineLayer(in_dim, out_dim, offset)
        offset += layer.parameter_count
        return layer

    if config.block_count > 0:
        stages.append(Stage("stem", (affine(config.input_dim, width), act)))
        for i in range(1, config.block_count + 1):
            stages.append(Stage(f"block{i}", (affine(width, width), act), skip=config.skip_connections))
        last = width
    else:
        last = config.input_dim

    if config.head is Head.LINEAR:
        stages.append(Stage("head", (affine(last, config.output_dim),)))
    elif not stages:
        raise ConfigError("head=none needs at least one block", key_path="model.head")

    model = ParamModel(config.input_dim, config.output_dim, tuple(stages), config)
    logger.debug("network: built %s", model.describe())
    return model


def variant_config(name: str, base: ModelConfig, wide_factor: int = 2) -> ModelConfig:
    """Model families a–d: a plain, b = a + skips, c wider plain, d = c + skips."""
    name = name.lower()
    if name not in {"a", "b", "c", "d"}:
        raise ConfigError(f"unknown model variant {name!r}", key_path="model")
    width = base.hidden_width * (wide_factor if name in {"c", "d"} else 1)
    return replace(base, hidden_width=width, skip_connections=name in {"b", "d"})


def init(model: ParamModel, scheme: InitScheme) -> np.ndarray:
    """He: N(0, 2/fan_in); Xavier: U(±√(6/(fan_in+fan_out))); biases 0."""
    rng = np.random.default_rng(scheme.seed)
    theta = np.zeros(model.parameter_count)
    for layer in model.affine_layers():
        if scheme.kind is InitKind.HE:
            weights = rng.normal(0.0, np.sqrt(2.0 / layer.in_dim), size=layer.weight_count)
        else:
            limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            weights = rng.uniform(-limit, limit, size=layer.weight_count)
        theta[layer.weights] = weights
    return theta


class DropoutEvaluator:
    """Forward evaluation with inverted dropout after every hidden activation.

    A fresh mask is drawn on each call from a generator seeded once, so a
    sequence of calls is reproducible.
    """

    def __init__(self, model: ParamModel, theta: np.ndarray, rate: float, seed: int):
        if not 0.0 <= rate < 1.0:
            raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
        self.model = model
        self.theta = np.asarray(theta, dtype=np.float64)
        self.rate = rate
        self._rng = np.random.default_rng(seed)

    def _mask(self, layer_index: int, size: int) -> np.ndarray:
        keep = self._rng.random(size) >= self.rate
        return keep / (1.0 - self.rate)

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        if self.rate == 0.0:
            return forward(self.model, self.theta, x)
        return forward(_MaskedModel(self.model, self._mask), self.theta, x)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]


@dataclass(frozen=True)
class _MaskedModel:
    model: ParamModel
    mask_fn: MaskFn

    @property
    def parameter_count(self) -> int:
        return self.model.parameter_count

    @property
    def input_dim(self) -> int:
        return self.model.input_dim

    @property
    def output_dim(self) -> int:
        return self.model.output_dim

    def record(self, tape: Tape, x_node: int) -> int:
        return self.model.record(tape, x_node, self.mask_fn)


def apply_dropout(model: ParamModel, theta: np.ndarray, rate: float, seed: int) -> DropoutEvaluator:
    return DropoutEvaluator(model, theta, rate, seed)


def predict(model: ParamModel, theta, inputs) -> np.ndarray:
    """Batched evaluation-mode forward pass (no tape); rows are samples."""
    theta = np.asarray(theta, dtype=np.float64)
    h = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if theta.shape != (model.parameter_count,):
        raise DomainError(f"θ has shape {theta.shape}, model expects ({model.parameter_count},)")
    if h.shape[1] != model.input_dim:
        raise DomainError(f"inputs have width {h.shape[1]}, model expects {model.input_dim}")
    for stage in model.stages:
        entry = h
        for layer in stage.body:
            if isinstance(layer, AffineLayer):
                w = theta[layer.weights].reshape(layer.out_dim, layer.in_dim)
                h = h @ w.T + theta[layer.bias]
            elif isinstance(layer, ShiftLayer):
                h = h + theta[layer.offset : layer.offset + layer.dim]
            elif isinstance(layer, ActivationLayer):
                if layer.kind is Activation.RELU:
                    h = np.maximum(h, 0.0)
                elif layer.kind is Activation.TANH:
                    h = np.tanh(h)
                else:
                    h = sigmoid(h)
        if stage.skip:
            h = entry + h
    return h


_HEADER = struct.Struct("<Q")


def save_theta(path: str | Path, theta: np.ndarray) -> None:
    """Little-endian float64 dump with an 8-byte element-count header."""
    theta = np.asarray(theta, dtype="<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_HEADER.pack(theta.size) + theta.tobytes())


def load_theta(path: str | Path, expected_count: int | None = None) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DataFormatError("checkpoint not found", path=str(path)) from None
    if len(raw) < _HEADER.size:
        raise DataFormatError("checkpoint shorter than its header", byte_offset=len(raw), path=str(path))
    (count,) = _HEADER.unpack_from(raw)
    needed = _HEADER.size + 8 * count
    if len(raw) != needed:
        raise DataFormatError(
            f"checkpoint declares {count} values but holds {(len(raw) - _HEADER.size) // 8}",
            byte_offset=min(len(raw), needed),
            path=str(path),
        )
    if expected_count is not None and count != expected_count:
        raise DomainError(f"checkpoint has {count} parameters, model expects {expected_count}")
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
