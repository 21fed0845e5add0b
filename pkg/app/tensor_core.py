"""
Dense tensors and reverse-mode differentiation.

Every forward pass records onto its own ComputeGraph, so a trained DiffModel can be read
from many threads at once: the model holds frozen numpy arrays, the graph holds activations.
Nodes are appended in creation order, which is already a topological order; backward walks
the list once in reverse.

Conventions:
- values are float32, inputs are batched along axis 0
- spatial tensors are channel-last (N, H, W, C)
- ReLU subgradient at 0 is 0; max-pool ties route to the first maximal element (row-major)
- scalarization: a 1-unit head is the scalar itself, wider heads use the l2 norm of the logits
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.exceptions import RejectedInputError

logger = logging.getLogger(__name__)

DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id = -1

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    op: str
    inputs: Tuple[int, ...]
    output: Tensor
    backward: Optional[BackwardFn] = None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class ComputeGraph:
    """Tape of operations for one forward pass."""

    def __init__(self):
        self.nodes: List[Node] = []

    def _record(self, op: str, inputs: Sequence[Tensor], data: np.ndarray,
                backward: Optional[BackwardFn]) -> Tensor:
        needs_grad = any(t.requires_grad for t in inputs)
        out = Tensor(data, requires_grad=needs_grad)
        out.node_id = len(self.nodes)
        self.nodes.append(Node(op, tuple(t.node_id for t in inputs), out,
                               backward if needs_grad else None))
        return out

    def leaf(self, data, requires_grad: bool = False) -> Tensor:
        tensor = data if isinstance(data, Tensor) else Tensor(data, requires_grad)
        tensor.grad = None
        tensor.node_id = len(self.nodes)
        self.nodes.append(Node("leaf", (), tensor))
        return tensor

    # ---- elementwise ----

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        return self._record("add", (a, b), a.data + b.data,
                            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        return self._record("sub", (a, b), a.data - b.data,
                            lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        return self._record("mul", (a, b), a.data * b.data,
                            lambda g: (_unbroadcast(g * b.data, a.shape),
                                       _unbroadcast(g * a.data, b.shape)))

    def scale(self, a: Tensor, factor: float) -> Tensor:
        factor = DTYPE(factor)
        return self._record("scale", (a,), a.data * factor, lambda g: (g * factor,))

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0
        return self._record("relu", (a,), np.where(mask, a.data, DTYPE(0)),
                            lambda g: (np.where(mask, g, DTYPE(0)),))

    def tanh(self, a: Tensor) -> Tensor:
        out = np.tanh(a.data)
        return self._record("tanh", (a,), out, lambda g: (g * (1 - out * out),))

    # ---- shape ----

    def reshape(self, a: Tensor, shape: Tuple[int, ...]) -> Tensor:
        return self._record("reshape", (a,), a.data.reshape(shape),
                            lambda g: (g.reshape(a.shape),))

    def flatten(self, a: Tensor) -> Tensor:
        return self.reshape(a, (a.shape[0], -1))

    # ---- reductions ----

    def sum(self, a: Tensor) -> Tensor:
        return self._record("sum", (a,), np.asarray(a.data.sum(dtype=np.float64), dtype=DTYPE),
                            lambda g: (np.broadcast_to(g, a.shape).astype(DTYPE),))

    def mean(self, a: Tensor) -> Tensor:
        count = a.data.size
        return self._record("mean", (a,), np.asarray(a.data.mean(dtype=np.float64), dtype=DTYPE),
                            lambda g: (np.broadcast_to(g / DTYPE(count), a.shape).astype(DTYPE),))

    def l2_norm_rows(self, a: Tensor) -> Tensor:
        norm = np.sqrt(np.sum(a.data * a.data, axis=1, dtype=np.float64)).astype(DTYPE)
        safe = np.where(norm > 0, norm, DTYPE(1))

        def backward(g):
            unit = np.where((norm > 0)[:, None], a.data / safe[:, None], DTYPE(0))
            return (g[:, None] * unit,)

        return self._record("l2norm", (a,), norm, backward)

    # ---- layers ----

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        return self._record("matmul", (a, b), a.data @ b.data,
                            lambda g: (g @ b.data.T, a.data.T @ g))

    def dense(self, x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != weight.shape[0]:
            raise RejectedInputError(
                f"dense layer expects (N, {weight.shape[0]}) input, got {x.shape}")
        return self._record("dense", (x, weight, bias), x.data @ weight.data + bias.data,
                            lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)))

    def conv2d(self, x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
        """Stride 1, zero 'same' padding, kernel (kh, kw, C_in, C_out) with odd extents."""
        kh, kw, c_in, _ = kernel.shape
        if x.data.ndim != 4 or x.shape[3] != c_in:
            raise RejectedInputError(f"conv2d expects (N, H, W, {c_in}) input, got {x.shape}")
        ph, pw = kh // 2, kw // 2
        n, h, w, _ = x.shape
        padded = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
        out = np.einsum("nhwcij,ijco->nhwo", windows, kernel.data, optimize=True) + bias.data

        def backward(g):
            grad_kernel = np.einsum("nhwcij,nhwo->ijco", windows, g, optimize=True)
            grad_padded = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    grad_padded[:, i:i + h, j:j + w, :] += g @ kernel.data[i, j].T
            return (grad_padded[:, ph:ph + h, pw:pw + w, :], grad_kernel, g.sum(axis=(0, 1, 2)))

        return self._record("conv2d", (x, kernel, bias), out.astype(DTYPE), backward)

    def maxpool2(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
            raise RejectedInputError(f"maxpool2 expects even spatial extents, got {x.shape}")
        n, h, w, c = x.shape
        windows = (x.data.reshape(n, h // 2, 2, w // 2, 2, c)
                   .transpose(0, 1, 3, 5, 2, 4)
                   .reshape(n, h // 2, w // 2, c, 4))
        winner = np.argmax(windows, axis=-1)[..., None]
        out = np.take_along_axis(windows, winner, axis=-1)[..., 0]

        def backward(g):
            routed = np.zeros_like(windows)
            np.put_along_axis(routed, winner, g[..., None], axis=-1)
            return (routed.reshape(n, h // 2, w // 2, c, 2, 2)
                    .transpose(0, 1, 4, 2, 5, 3)
                    .reshape(n, h, w, c),)

        return self._record("maxpool2", (x,), out, backward)

    # ---- losses (training only) ----

    def softmax_cross_entropy(self, logits: Tensor, targets: np.ndarray) -> Tensor:
        """Mean cross-entropy against per-row target distributions (one-hot or soft)."""
        z = logits.data.astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        t = np.asarray(targets, dtype=np.float64)
        n = z.shape[0]
        loss = -(t * log_probs).sum() / n

        def backward(g):
            probs = np.exp(log_probs)
            grad = (probs * t.sum(axis=1, keepdims=True) - t) / n
            return ((grad * float(g)).astype(DTYPE),)

        return self._record("softmax_xent", (logits,), np.asarray(loss, dtype=DTYPE), backward)

    def mse(self, prediction: Tensor, targets: np.ndarray) -> Tensor:
        target = self.leaf(np.asarray(targets, dtype=DTYPE).reshape(prediction.shape))
        residual = self.sub(prediction, target)
        return self.mean(self.mul(residual, residual))

    # ---- differentiation ----

    def backward(self, output: Tensor, seed: Optional[np.ndarray] = None) -> None:
        if not 0 <= output.node_id < len(self.nodes) or self.nodes[output.node_id].output is not output:
            raise RejectedInputError("output tensor was not recorded on this graph")
        grads = {output.node_id: np.ones(output.shape, dtype=DTYPE) if seed is None
                 else np.asarray(seed, dtype=DTYPE).reshape(output.shape)}
        for node_id in range(output.node_id, -1, -1):
            grad = grads.pop(node_id, None)
            if grad is None:
                continue
            node = self.nodes[node_id]
            if node.op == "leaf":
                if node.output.requires_grad:
                    node.output.grad = grad.astype(DTYPE, copy=False)
                continue
            if node.backward is None:
                continue
            for input_id, input_grad in zip(node.inputs, node.backward(grad)):
                if input_grad is None or not self.nodes[input_id].output.requires_grad:
                    continue
                if input_id in grads:
                    grads[input_id] = grads[input_id] + input_grad
                else:
                    grads[input_id] = input_grad


class LayerKind(IntEnum):
    DENSE = 1
    CONV2D = 2
    RELU = 3
    TANH = 4
    MAXPOOL2 = 5
    FLATTEN = 6


PARAMETRIC = (LayerKind.DENSE, LayerKind.CONV2D)


@dataclass(frozen=True, eq=False)
class Layer:
    kind: LayerKind
    params: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        frozen = []
        for param in self.params:
            array = np.array(param, dtype=DTYPE, copy=True)
            array.flags.writeable = False
            frozen.append(array)
        object.__setattr__(self, "params", tuple(frozen))
        expected = 2 if self.kind in PARAMETRIC else 0
        if len(self.params) != expected:
            raise RejectedInputError(f"{self.kind.name} takes {expected} tensors, got {len(self.params)}")


@dataclass(frozen=True, eq=False)
class DiffModel:
    """Trained differentiable model. Immutable: updates return a new instance."""

    input_shape: Tuple[int, ...]
    layers: Tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(e) for e in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.input_shape or any(e <= 0 for e in self.input_shape):
            raise RejectedInputError(f"invalid input shape {self.input_shape}")

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def parameters(self) -> List[np.ndarray]:
        return [param for layer in self.layers for param in layer.params]

    def parameter_layer_index(self) -> List[int]:
        return [index for index, layer in enumerate(self.layers) for _ in layer.params]

    def with_parameters(self, params: Sequence[np.ndarray]) -> "DiffModel":
        params = list(params)
        if len(params) != len(self.parameters()):
            raise RejectedInputError(
                f"expected {len(self.parameters())} parameter tensors, got {len(params)}")
        layers, cursor = [], 0
        for layer in self.layers:
            count = len(layer.params)
            for old, new in zip(layer.params, params[cursor:cursor + count]):
                if np.shape(new) != old.shape:
                    raise RejectedInputError(f"parameter shape {np.shape(new)} != {old.shape}")
            layers.append(Layer(layer.kind, tuple(params[cursor:cursor + count])))
            cursor += count
        return DiffModel(self.input_shape, tuple(layers))

    def final_dense_index(self) -> int:
        for index in range(len(self.layers) - 1, -1, -1):
            if self.layers[index].kind == LayerKind.DENSE:
                return index
        raise RejectedInputError("model has no affine layer")

    def trunk(self) -> "DiffModel":
        """Everything before the final affine layer."""
        cut = self.final_dense_index()
        if cut == 0:
            raise RejectedInputError("model has no trunk before its final affine layer")
        return DiffModel(self.input_shape, self.layers[:cut])

    def forward(self, graph: ComputeGraph, x: Tensor,
                params: Optional[Sequence[Tensor]] = None) -> Tensor:
        if params is None:
            params = [graph.leaf(p) for p in self.parameters()]
        cursor = 0
        for layer in self.layers:
            if layer.kind == LayerKind.DENSE:
                x = graph.dense(x, params[cursor], params[cursor + 1])
                cursor += 2
            elif layer.kind == LayerKind.CONV2D:
                x = graph.conv2d(x, params[cursor], params[cursor + 1])
                cursor += 2
            elif layer.kind == LayerKind.RELU:
                x = graph.relu(x)
            elif layer.kind == LayerKind.TANH:
                x = graph.tanh(x)
            elif layer.kind == LayerKind.MAXPOOL2:
                x = graph.maxpool2(x)
            elif layer.kind == LayerKind.FLATTEN:
                x = graph.flatten(x)
        return x


def as_batch(model: DiffModel, x) -> Tuple[np.ndarray, bool]:
    """Returns (batch, was_single). Accepts one input or a batch of inputs."""
    array = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=DTYPE)
    if array.shape == model.input_shape:
        return array[None, ...], True
    if array.shape[1:] == model.input_shape and array.shape[0] > 0:
        return array, False
    raise RejectedInputError(
        f"input shape {array.shape} does not match model input {model.input_shape}")


def scalarize(graph: ComputeGraph, logits: Tensor) -> Tensor:
    if logits.data.ndim > 2:
        logits = graph.flatten(logits)
    if logits.shape[1] == 1:
        return graph.reshape(logits, (logits.shape[0],))
    return graph.l2_norm_rows(logits)


def forward_logits(model: DiffModel, x) -> np.ndarray:
    batch, single = as_batch(model, x)
    graph = ComputeGraph()
    logits = model.forward(graph, graph.leaf(batch)).data
    return logits[0] if single else logits


def evaluate_batch(model: DiffModel, x) -> np.ndarray:
    batch, _ = as_batch(model, x)
    graph = ComputeGraph()
    return scalarize(graph, model.forward(graph, graph.leaf(batch))).data.copy()


def evaluate_scalar(model: DiffModel, x) -> float:
    batch, single = as_batch(model, x)
    if not single:
        raise RejectedInputError("evaluate_scalar takes a single input; use evaluate_batch")
    return float(evaluate_batch(model, batch)[0])


def input_gradient(model: DiffModel, x) -> np.ndarray:
    """Gradient of the scalarized output with respect to the input(s).

    Samples never interact (no batch statistics), so one backward pass through the sum of
    per-sample outputs yields every per-sample gradient.
    """
    batch, single = as_batch(model, x)
    graph = ComputeGraph()
    inputs = graph.leaf(batch, requires_grad=True)
    total = graph.sum(scalarize(graph, model.forward(graph, inputs)))
    graph.backward(total)
    grad = inputs.grad if inputs.grad is not None else np.zeros_like(batch)
    return grad[0].copy() if single else grad.copy()


Objective = Callable[[ComputeGraph, Tensor], Tensor]


def parameter_gradient(model: DiffModel, objective: Objective, inputs) -> Tuple[List[np.ndarray], float]:
    """Gradients of objective(graph, logits) for every parameter, plus the objective value."""
    batch, _ = as_batch(model, inputs)
    graph = ComputeGraph()
    params = [graph.leaf(p, requires_grad=True) for p in model.parameters()]
    loss = objective(graph, model.forward(graph, graph.leaf(batch), params))
    if loss.data.size != 1:
        raise RejectedInputError(f"objective must be scalar, got shape {loss.shape}")
    graph.backward(loss)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    return grads, loss.item()


def sgd_step(model: DiffModel, gradients: Sequence[np.ndarray], lr: float,
             trainable: Optional[Sequence[bool]] = None) -> DiffModel:
    """theta' = theta - lr * g. Parameters flagged untrainable are carried over untouched."""
    if lr < 0:
        raise RejectedInputError(f"learning rate must be non-negative, got {lr}")
    params = model.parameters()
    if len(gradients) != len(params):
        raise RejectedInputError(f"expected {len(params)} gradients, got {len(gradients)}")
    trainable = trainable if trainable is not None else [True] * len(params)
    step = DTYPE(lr)
    updated = [
        (theta - step * np.asarray(grad, dtype=DTYPE)).astype(DTYPE) if keep else theta
        for theta, grad, keep in zip(params, gradients, trainable)
    ]
    return model.with_parameters(updated)


def affine_head(model: DiffModel, scale: float, shift: float = 0.0) -> DiffModel:
    """Model computing scale * logits + shift, by rewriting the final affine layer."""
    index = model.final_dense_index()
    if index != len(model.layers) - 1:
        raise RejectedInputError("affine_head needs the affine layer to be the last layer")
    weight, bias = model.layers[index].params
    layers = list(model.layers)
    layers[index] = Layer(LayerKind.DENSE, (weight * DTYPE(scale), bias * DTYPE(scale) + DTYPE(shift)))
    return DiffModel(model.input_shape, tuple(layers))
