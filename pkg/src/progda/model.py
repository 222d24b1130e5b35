"""Learnable architecture: MLP backbone, GNN layers, classifier, discriminator.

One graph is built per episode. Layer l computes a learned affinity
matrix from the current node features, normalizes it with self-loops
(D^-1/2 (A+I) D^-1/2), then transforms each node from the concatenation
of its feature and its edge-weighted neighborhood aggregate. The shared
classifier reads every GNN layer's node matrix; the domain discriminator
reads backbone features through a gradient-reversal layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .utils import stream

# Enabled by the test suite: every edge_update then asserts symmetry,
# nonnegativity and unit spectral radius of the normalized edge matrix.
STRICT_EDGE_CHECKS = False


@dataclass(frozen=True)
class ModelConfig:
    backbone_dims: tuple[int, ...] = (64,)
    gnn_depth: int = 1
    node_width: int = 32
    edge_hidden_width: int = 32
    disc_hidden_width: int = 32
    dropout: float = 0.2
    leaky_slope: float = 0.01
    input_dim: int | None = None
    num_classes: int | None = None

    def __post_init__(self):
        if self.gnn_depth < 1:
            raise ValueError("gnn_depth must be at least 1")
        widths = (*self.backbone_dims, self.node_width, self.edge_hidden_width,
                  self.disc_hidden_width)
        if any(w < 1 for w in widths):
            raise ValueError("all widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def resolved(self, input_dim: int, num_classes: int) -> "ModelConfig":
        return replace(self, input_dim=input_dim, num_classes=num_classes)


@dataclass
class GraphState:
    """Per-layer history of one forward pass over a graph."""

    nodes: list  # V^(0) .. V^(L)
    affinities: list  # A^(1) .. A^(L)
    edges: list  # E^(1) .. E^(L), normalized
    min_preactivation: float  # smallest |pre-activation| seen at any kink


class _Linear:
    def __init__(self, model: "GraphAdaptationModel", name: str, d_in: int, d_out: int,
                 rng: np.random.Generator):
        limit = math.sqrt(6.0 / (d_in + d_out))
        self.weight = ad.Tensor(rng.uniform(-limit, limit, (d_in, d_out)),
                                requires_grad=True, name=f"{name}/W")
        self.bias = ad.Tensor(np.zeros(d_out), requires_grad=True, name=f"{name}/b")
        model.params[self.weight.name] = self.weight
        model.params[self.bias.name] = self.bias

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.weight), self.bias)


def _assert_edge_invariants(e: np.ndarray):
    asym = np.abs(e - e.T).max()
    if asym >= 1e-9:
        raise AssertionError(f"normalized edge matrix asymmetry {asym:.3e}")
    if e.min() < 0:
        raise AssertionError("normalized edge matrix has negative entries")
    radius = np.abs(np.linalg.eigvalsh((e + e.T) / 2.0)).max()
    if abs(radius - 1.0) > 1e-6:
        raise AssertionError(f"spectral radius {radius} differs from 1")


class GraphAdaptationModel:
    """Parameter container plus the forward passes wired for autodiff."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.input_dim is None or config.num_classes is None:
            raise ValueError("ModelConfig must be resolved with input_dim and num_classes")
        self.config = config
        self.params: dict[str, ad.Tensor] = {}
        self.last_min_preact = math.inf
        self._dropout_rng = stream(seed, "dropout")
        rng = stream(seed, "init")

        widths = [config.input_dim, *config.backbone_dims, config.node_width]
        self.backbone = [
            _Linear(self, f"backbone/{i}", widths[i], widths[i + 1], rng)
            for i in range(len(widths) - 1)
        ]
        self.edge_nets = []
        self.node_nets = []
        w = config.node_width
        for layer in range(config.gnn_depth):
            self.edge_nets.append((
                _Linear(self, f"edge/{layer}/0", w, config.edge_hidden_width, rng),
                _Linear(self, f"edge/{layer}/1", config.edge_hidden_width, 1, rng),
            ))
            self.node_nets.append((
                _Linear(self, f"node/{layer}/0", 2 * w, w, rng),
                _Linear(self, f"node/{layer}/1", w, w, rng),
            ))
        self.classifier = _Linear(self, "classifier", w, config.num_classes, rng)
        self.disc = (
            _Linear(self, "disc/0", w, config.disc_hidden_width, rng),
            _Linear(self, "disc/1", config.disc_hidden_width, 1, rng),
        )

    # -- parameter bookkeeping -------------------------------------------------

    def parameters(self) -> dict[str, ad.Tensor]:
        return dict(self.params)

    def backbone_parameters(self) -> dict[str, ad.Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("backbone/")}

    def adaptation_parameters(self) -> dict[str, ad.Tensor]:
        """GNN, classifier and discriminator parameters."""
        return {k: v for k, v in self.params.items() if not k.startswith("backbone/")}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in self.params.items():
            src = np.asarray(arrays[k], dtype=np.float64)
            if src.shape != p.data.shape:
                raise ValueError(f"parameter {k}: shape {src.shape} != {p.data.shape}")
            p.data = src.copy()

    def dropout_rng_state(self) -> dict:
        return self._dropout_rng.bit_generator.state

    def set_dropout_rng_state(self, state: dict):
        self._dropout_rng.bit_generator.state = state

    # -- forward passes ----------------------------------------------------------

    def _track_kinks(self, values: np.ndarray):
        if values.size:
            m = float(np.abs(values).min())
            if m < self.last_min_preact:
                self.last_min_preact = m

    def _leaky(self, x: ad.Tensor) -> ad.Tensor:
        self._track_kinks(x.data)
        return ad.leaky_relu(x, self.config.leaky_slope)

    def backbone_forward(self, x, training: bool = False) -> ad.Tensor:
        x = x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ad.ShapeError(
                f"backbone_forward: expected (*, {self.config.input_dim}) input, "
                f"got {tuple(x.shape)}"
            )
        h = x
        for lin in self.backbone:
            h = self._leaky(lin(h))
            h = ad.dropout(h, self.config.dropout, self._dropout_rng, training)
        return h

    def edge_update(self, layer: int, v: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """Raw affinity matrix and its self-loop symmetric normalization."""
        if not np.isfinite(v.data).all():
            raise ValueError("edge_update: non-finite node values")
        n = v.shape[0]
        lin1, lin2 = self.edge_nets[layer]
        pair = ad.pairwise_abs_diff(v)
        if n > 1:
            off = ~np.eye(n, dtype=bool)
            self._track_kinks(pair.data.reshape(n, n, -1)[off])
        h = self._leaky(lin1(pair))
        raw = lin2(h)
        a = ad.reshape(ad.sigmoid(raw), (n, n))
        s = ad.add(a, ad.Tensor(np.eye(n)))
        degree = ad.reduce_sum(s, axis=1, keepdims=True)
        dinv = ad.powconst(degree, -0.5)
        e = ad.mul(ad.mul(s, dinv), ad.reshape(dinv, (1, n)))
        if STRICT_EDGE_CHECKS:
            _assert_edge_invariants(e.data)
        return a, e

    def node_update(self, layer: int, v: ad.Tensor, e: ad.Tensor,
                    training: bool = False) -> ad.Tensor:
        if e.shape != (v.shape[0], v.shape[0]):
            raise ad.ShapeError(
                f"node_update: edge matrix {tuple(e.shape)} does not match "
                f"{v.shape[0]} nodes"
            )
        lin1, lin2 = self.node_nets[layer]
        agg = ad.matmul(e, v)
        h = self._leaky(lin1(ad.concat([v, agg], axis=1)))
        h = ad.dropout(h, self.config.dropout, self._dropout_rng, training)
        return self._leaky(lin2(h))

    def forward(self, x, training: bool = False, depth: int | None = None) -> GraphState:
        """Run backbone plus `depth` GNN layers (default: configured depth).

        depth=0 yields backbone features only; the classifier is then
        applied directly to them (the GNN-free ablation).
        """
        self.last_min_preact = math.inf
        if depth is None:
            depth = self.config.gnn_depth
        v = self.backbone_forward(x, training=training)
        nodes, affinities, edges = [v], [], []
        for layer in range(depth):
            a, e = self.edge_update(layer, nodes[-1])
            affinities.append(a)
            edges.append(e)
            nodes.append(self.node_update(layer, nodes[-1], e, training=training))
        return GraphState(nodes, affinities, edges, self.last_min_preact)

    def classify(self, v: ad.Tensor) -> ad.Tensor:
        return ad.softmax(self.classifier(v))

    def classify_layers(self, state: GraphState) -> list[ad.Tensor]:
        """Class probabilities per GNN layer (backbone features if depth 0)."""
        if len(state.nodes) == 1:
            return [self.classify(state.nodes[0])]
        return [self.classify(v) for v in state.nodes[1:]]

    def discriminate(self, v0: ad.Tensor, reversal: float = 1.0,
                     reverse: bool = True) -> ad.Tensor:
        """Per-row probability that a backbone feature is source-domain."""
        x = ad.grad_reverse(v0, reversal) if reverse else v0
        h = self._leaky(self.disc[0](x))
        return ad.sigmoid(self.disc[1](h))
