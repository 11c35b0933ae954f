"""
Reverse-mode differentiation over dense float64 vectors.

A Tape records one forward evaluation of a model for one input as a flat,
topologically ordered list of primitive operations. Backward passes are
read-only over the tape, so one tape serves every column of a Jacobian.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np

from app.config import get_settings
from app.services.errors import DomainError, NumericError

logger = logging.getLogger("gensmooth.autodiff")


class Op(str, Enum):
    INPUT = "input"
    AFFINE = "affine"
    SHIFT = "shift"
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    ADD = "add"
    CONCAT = "concat"
    MASK = "mask"


ACTIVATION_OPS = {"relu": Op.RELU, "tanh": Op.TANH, "sigmoid": Op.SIGMOID}


@dataclass(frozen=True)
class Node:
    op: Op
    inputs: tuple[int, ...]
    value: np.ndarray
    layer: int = -1
    offset: int = 0  # first θ index owned by the node
    shape: tuple[int, ...] = ()  # (out, in) for affine, (dim,) for shift
    constant: np.ndarray | None = None  # dropout mask


class Differentiable(Protocol):
    """What forward() needs from a model description."""

    @property
    def parameter_count(self) -> int: ...

    @property
    def input_dim(self) -> int: ...

    @property
    def output_dim(self) -> int: ...

    def record(self, tape: "Tape", x_node: int) -> int: ...


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return shifted / np.sum(shifted, axis=-1, keepdims=True)


class Tape:
    def __init__(self, theta: np.ndarray):
        theta = np.array(theta, dtype=np.float64)
        theta.setflags(write=False)
        self.theta = theta
        self.nodes: list[Node] = []
        self.output_index: int | None = None

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def output(self) -> np.ndarray:
        return self.nodes[self._output_node()].value

    @property
    def output_dim(self) -> int:
        return int(self.output.shape[0])

    def _output_node(self) -> int:
        if not self.nodes:
            raise DomainError("tape is empty")
        return self.output_index if self.output_index is not None else len(self.nodes) - 1

    # Recording

    def _push(self, node: Node) -> int:
        if not np.all(np.isfinite(node.value)):
            raise NumericError(f"non-finite value produced by {node.op.value}", layer_index=node.layer)
        self.nodes.append(node)
        return len(self.nodes) - 1

    def _record(self, op: Op, inputs: tuple[int, ...], layer: int, **kwargs) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise DomainError(f"{op.value} refers to unknown node {i}")
        draft = Node(op, inputs, np.empty(0), layer, **kwargs)
        value = self._compute(draft, [self.nodes[i].value for i in inputs])
        return self._push(Node(op, inputs, value, layer, **kwargs))

    def input(self, x) -> int:
        value = np.array(x, dtype=np.float64)
        if value.ndim != 1:
            raise DomainError(f"tape inputs are vectors, got shape {value.shape}")
        return self._push(Node(Op.INPUT, (), value, layer=-1))

    def affine(self, i: int, offset: int, out_dim: int, in_dim: int, layer: int = -1) -> int:
        if offset + out_dim * in_dim + out_dim > self.theta.size:
            raise DomainError("affine parameters run past the end of θ")
        if self.nodes[i].value.shape != (in_dim,):
            raise DomainError(f"affine expects input of size {in_dim}, got {self.nodes[i].value.shape}")
        return self._record(Op.AFFINE, (i,), layer, offset=offset, shape=(out_dim, in_dim))

    def shift(self, i: int, offset: int, layer: int = -1) -> int:
        dim = self.nodes[i].value.shape[0]
        if offset + dim > self.theta.size:
            raise DomainError("shift parameters run past the end of θ")
        return self._record(Op.SHIFT, (i,), layer, offset=offset, shape=(dim,))

    def activation(self, i: int, kind: str, layer: int = -1) -> int:
        try:
            op = ACTIVATION_OPS[kind]
        except KeyError:
            raise DomainError(f"unknown activation {kind!r}") from None
        return self._record(op, (i,), layer)

    def softmax(self, i: int, layer: int = -1) -> int:
        return self._record(Op.SOFTMAX, (i,), layer)

    def add(self, i: int, j: int, layer: int = -1) -> int:
        if self.nodes[i].value.shape != self.nodes[j].value.shape:
            raise DomainError("add operands differ in shape")
        return self._record(Op.ADD, (i, j), layer)

    def concat(self, i: int, j: int, layer: int = -1) -> int:
        return self._record(Op.CONCAT, (i, j), layer)

    def mask(self, i: int, mask: np.ndarray, layer: int = -1) -> int:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != self.nodes[i].value.shape:
            raise DomainError("mask shape differs from its operand")
        return self._record(Op.MASK, (i,), layer, constant=mask)

    # Evaluation

    def _compute(self, node: Node, args: list[np.ndarray]) -> np.ndarray:
        op = node.op
        if op is Op.AFFINE:
            out_dim, in_dim = node.shape
            w = self.theta[node.offset : node.offset + out_dim * in_dim].reshape(out_dim, in_dim)
            b = self.theta[node.offset + out_dim * in_dim : node.offset + out_dim * in_dim + out_dim]
            return w @ args[0] + b
        if op is Op.SHIFT:
            return args[0] + self.theta[node.offset : node.offset + node.shape[0]]
        if op is Op.RELU:
            return np.maximum(args[0], 0.0)
        if op is Op.TANH:
            return np.tanh(args[0])
        if op is Op.SIGMOID:
            return sigmoid(args[0])
        if op is Op.SOFTMAX:
            return softmax(args[0])
        if op is Op.ADD:
            return args[0] + args[1]
        if op is Op.CONCAT:
            return np.concatenate(args)
        if op is Op.MASK:
            return args[0] * node.constant
        raise DomainError(f"cannot evaluate {op.value}")

    def replay(self) -> np.ndarray:
        """Recompute every node from the recorded ops; returns the output."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op is Op.INPUT:
                values.append(node.value)
            else:
                values.append(self._compute(node, [values[i] for i in node.inputs]))
        return values[self._output_node()]

    def vjp(self, cotangent) -> np.ndarray:
        """∇_θ ⟨cotangent, output⟩ at the tape's θ."""
        g_out = np.asarray(cotangent, dtype=np.float64)
        out_index = self._output_node()
        if g_out.shape != self.nodes[out_index].value.shape:
            raise DomainError(
                f"cotangent shape {g_out.shape} does not match output shape {self.nodes[out_index].value.shape}"
            )
        theta_grad = np.zeros_like(self.theta)
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[out_index] = g_out

        for index in range(out_index, -1, -1):
            g = grads[index]
            if g is None:
                continue
            node = self.nodes[index]
            for target, contribution in self._backward(node, g, theta_grad):
                prev = grads[target]
                grads[target] = contribution if prev is None else prev + contribution
        return theta_grad

    def _backward(self, node: Node, g: np.ndarray, theta_grad: np.ndarray):
        op = node.op
        if op is Op.INPUT:
            return ()
        x = self.nodes[node.inputs[0]].value
        if op is Op.AFFINE:
            out_dim, in_dim = node.shape
            w_end = node.offset + out_dim * in_dim
            w = self.theta[node.offset : w_end].reshape(out_dim, in_dim)
            theta_grad[node.offset : w_end] += np.outer(g, x).ravel()
            theta_grad[w_end : w_end + out_dim] += g
            return ((node.inputs[0], w.T @ g),)
        if op is Op.SHIFT:
            theta_grad[node.offset : node.offset + node.shape[0]] += g
            return ((node.inputs[0], g),)
        if op is Op.RELU:
            # subgradient 0 at the kink
            return ((node.inputs[0], g * (x > 0.0)),)
        if op is Op.TANH:
            return ((node.inputs[0], g * (1.0 - node.value**2)),)
        if op is Op.SIGMOID:
            return ((node.inputs[0], g * node.value * (1.0 - node.value)),)
        if op is Op.SOFTMAX:
            y = node.value
            return ((node.inputs[0], y * (g - np.dot(g, y))),)
        if op is Op.ADD:
            return ((node.inputs[0], g), (node.inputs[1], g))
        if op is Op.CONCAT:
            split = x.shape[0]
            return ((node.inputs[0], g[:split]), (node.inputs[1], g[split:]))
        if op is Op.MASK:
            return ((node.inputs[0], g * node.constant),)
        raise DomainError(f"cannot differentiate {op.value}")


def _check_inputs(model: Differentiable, theta, x) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if theta.shape != (model.parameter_count,):
        raise DomainError(f"θ has shape {theta.shape}, model expects ({model.parameter_count},)")
    if x.shape != (model.input_dim,):
        raise DomainError(f"input has shape {x.shape}, model expects ({model.input_dim},)")
    if not np.all(np.isfinite(x)):
        raise DomainError("input has non-finite components")
    return theta, x


def forward(model: Differentiable, theta, x) -> tuple[np.ndarray, Tape]:
    theta, x = _check_inputs(model, theta, x)
    tape = Tape(theta)
    tape.output_index = model.record(tape, tape.input(x))
    output = tape.output
    if output.shape != (model.output_dim,):
        raise DomainError(f"model produced shape {output.shape}, declared ({model.output_dim},)")
    return output, tape


def vjp_params(tape: Tape, cotangent) -> np.ndarray:
    return tape.vjp(cotangent)


def check_jacobian_budget(parameter_count: int, output_dim: int) -> None:
    budget = get_settings().jacobian_memory_budget_bytes
    needed = 8 * parameter_count * output_dim
    if needed > budget:
        raise DomainError(
            f"dense Jacobian needs {needed} bytes ({parameter_count} x {output_dim}), budget is {budget}"
        )


def jacobian_from_tape(tape: Tape) -> np.ndarray:
    m_f = tape.output_dim
    check_jacobian_budget(tape.theta.size, m_f)
    jac = np.empty((tape.theta.size, m_f))
    basis = np.eye(m_f)
    for i in range(m_f):
        jac[:, i] = tape.vjp(basis[i])
    return jac


def jacobian_params(model: Differentiable, theta, x) -> np.ndarray:
    """∇_θ f_θ(x) as a |θ| × m_f matrix, one backward pass per output."""
    check_jacobian_budget(model.parameter_count, model.output_dim)
    _, tape = forward(model, theta, x)
    return jacobian_from_tape(tape)
