"""Graph layers: graph convolution, a gated recurrent graph cell, linear heads,
and the two model shapes built from them (recurrent classifier, Q network)."""

from __future__ import annotations

import numpy as np

from ..roadnet import DualGraph
from .tensor import Tensor, param, spmm, tensor

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")

PROB_FLOOR = 1e-7


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "identity":
        return x
    if activation == "relu":
        return x.relu()
    if activation == "sigmoid":
        return x.sigmoid()
    if activation == "tanh":
        return x.tanh()
    raise ValueError(f"unknown activation {activation!r}")


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class GraphConvLayer:
    """out_v = activation(theta @ sum_{u: (u,v)} w_uv x_u + bias).

    Aggregation is over neighbors only (no self-loop), matching the dual
    graph's normalized weights; isolated vertices map to activation(bias).
    """

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.theta = param(glorot(rng, out_dim, in_dim))
        self.bias = param(np.zeros(out_dim))

    def forward(self, x: Tensor, g: DualGraph) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected {self.in_dim} input features, got {x.shape[-1]}")
        if x.shape[-2] != g.n:
            raise ValueError(f"expected {g.n} vertices, got {x.shape[-2]}")
        agg = spmm(g.matrix, x)
        return _activate(agg @ self.theta.T + self.bias, self.activation)

    def parameters(self) -> list[Tensor]:
        return [self.theta, self.bias]


class Linear:
    """Per-vertex affine head."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.weight = param(glorot(rng, out_dim, in_dim))
        self.bias = param(np.zeros(out_dim))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight.T + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class GatedRecurrentGraphCell:
    """GRU-style gated cell whose input and hidden transforms are graph convolutions.

    z = sigmoid(conv_zx(x) + conv_zh(h))
    r = sigmoid(conv_rx(x) + conv_rh(h))
    c = tanh(conv_cx(x) + conv_ch(r * h))
    h' = z * h + (1 - z) * c
    """

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.hidden_dim = hidden_dim
        self.conv_zx = GraphConvLayer(in_dim, hidden_dim, "identity", rng)
        self.conv_zh = GraphConvLayer(hidden_dim, hidden_dim, "identity", rng)
        self.conv_rx = GraphConvLayer(in_dim, hidden_dim, "identity", rng)
        self.conv_rh = GraphConvLayer(hidden_dim, hidden_dim, "identity", rng)
        self.conv_cx = GraphConvLayer(in_dim, hidden_dim, "identity", rng)
        self.conv_ch = GraphConvLayer(hidden_dim, hidden_dim, "identity", rng)

    def step(self, x: Tensor, h: Tensor, g: DualGraph) -> Tensor:
        z = (self.conv_zx.forward(x, g) + self.conv_zh.forward(h, g)).sigmoid()
        r = (self.conv_rx.forward(x, g) + self.conv_rh.forward(h, g)).sigmoid()
        c = (self.conv_cx.forward(x, g) + self.conv_ch.forward(r * h, g)).tanh()
        return z * h + (1.0 - z) * c

    def initial_state(self, like: Tensor) -> Tensor:
        return tensor(np.zeros(like.shape[:-1] + (self.hidden_dim,)))

    def parameters(self) -> list[Tensor]:
        convs = (self.conv_zx, self.conv_zh, self.conv_rx,
                 self.conv_rh, self.conv_cx, self.conv_ch)
        return [p for conv in convs for p in conv.parameters()]


class RecurrentGraphModel:
    """Graph-conv encoder feeding a gated recurrent cell; per-vertex linear head.

    forward() consumes one feature matrix per day and returns per-vertex
    logits for the final day.
    """

    def __init__(self, in_features: int, hidden_dim: int = 32, conv_layers: int = 2,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        self.in_features = in_features
        self.hidden_dim = hidden_dim
        dims = [in_features] + [hidden_dim] * conv_layers
        self.encoder = [
            GraphConvLayer(dims[i], dims[i + 1], "relu", rng)
            for i in range(conv_layers)
        ]
        self.cell = GatedRecurrentGraphCell(dims[-1], hidden_dim, rng)
        self.head = Linear(hidden_dim, 1, rng)

    def forward(self, steps: list[Tensor], g: DualGraph) -> Tensor:
        h = None
        for x in steps:
            for layer in self.encoder:
                x = layer.forward(x, g)
            if h is None:
                h = self.cell.initial_state(x)
            h = self.cell.step(x, h, g)
        out = self.head.forward(h)
        return squeeze_last(out)

    def forward_probs(self, steps: list[Tensor], g: DualGraph) -> Tensor:
        return self.forward(steps, g).sigmoid()

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named: list[tuple[str, Tensor]] = []
        for i, layer in enumerate(self.encoder):
            named.append((f"encoder.{i}.theta", layer.theta))
            named.append((f"encoder.{i}.bias", layer.bias))
        for gate in ("zx", "zh", "rx", "rh", "cx", "ch"):
            conv = getattr(self.cell, f"conv_{gate}")
            named.append((f"cell.{gate}.theta", conv.theta))
            named.append((f"cell.{gate}.bias", conv.bias))
        named.append(("head.weight", self.head.weight))
        named.append(("head.bias", self.head.bias))
        return named

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


class GraphQNetwork:
    """Graph-conv stack plus per-vertex linear head: one Q-value per segment."""

    def __init__(self, in_features: int, hidden_dim: int = 32, conv_layers: int = 2,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        self.in_features = in_features
        self.hidden_dim = hidden_dim
        dims = [in_features] + [hidden_dim] * conv_layers
        self.convs = [
            GraphConvLayer(dims[i], dims[i + 1], "relu", rng)
            for i in range(conv_layers)
        ]
        self.head = Linear(hidden_dim, 1, rng)

    def forward(self, x: Tensor, g: DualGraph) -> Tensor:
        for layer in self.convs:
            x = layer.forward(x, g)
        return squeeze_last(self.head.forward(x))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named: list[tuple[str, Tensor]] = []
        for i, layer in enumerate(self.convs):
            named.append((f"convs.{i}.theta", layer.theta))
            named.append((f"convs.{i}.bias", layer.bias))
        named.append(("head.weight", self.head.weight))
        named.append(("head.bias", self.head.bias))
        return named

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def squeeze_last(x: Tensor) -> Tensor:
    if x.shape[-1] != 1:
        raise ValueError("squeeze_last expects a trailing dimension of 1")
    out = Tensor(x.data[..., 0], parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[..., None])

    out._backward = backward
    return out


def weighted_bce(probs: Tensor, labels: np.ndarray, pos_weight: float = 1.0) -> Tensor:
    """Mean of -[pos_weight * y * ln p + (1 - y) * ln(1 - p)] over all entries.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != probs.shape:
        raise ValueError(f"labels shape {y.shape} != probs shape {probs.shape}")
    p = probs.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    pos = p.log() * (pos_weight * y)
    neg = (1.0 - p).log() * (1.0 - y)
    return -(pos + neg).mean()
