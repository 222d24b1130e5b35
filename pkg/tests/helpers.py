"""Shared test oracles: finite-difference gradients and micro-models."""

from __future__ import annotations

import numpy as np

from progda import autodiff as ad
from progda import losses as losses_mod
from progda.model import GraphAdaptationModel, ModelConfig

KINK_MARGIN = 1e-3
FD_STEP = 1e-5
GRAD_RTOL = 1e-4


def numeric_grad(f, params, step=FD_STEP):
    """Central finite differences of the scalar f() w.r.t. each parameter tensor."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f().data)
            flat[i] = orig - step
            lo = float(f().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def analytic_grad(f, params):
    for p in params:
        p.grad = None
    f().backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def max_rel_err(analytic, numeric):
    """Worst relative deviation across all parameter tensors."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
        worst = max(worst, np.abs(a - n).max(initial=0.0) / scale)
    return worst


def gradcheck(f, params, rtol=GRAD_RTOL, step=FD_STEP):
    return max_rel_err(analytic_grad(f, params), numeric_grad(f, params, step))


def micro_setup(seed: int, depth: int, n_nodes: int, num_classes: int = 3,
                input_dim: int = 3):
    """A tiny model plus an input graph, for exhaustive gradient checks."""
    cfg = ModelConfig(
        backbone_dims=(4,), gnn_depth=max(depth, 1), node_width=4,
        edge_hidden_width=3, disc_hidden_width=3, dropout=0.0,
    ).resolved(input_dim, num_classes)
    model = GraphAdaptationModel(cfg, seed=seed)
    rng = np.random.default_rng(10_000 + seed)
    # biases start at zero, which parks the self-pair edge pre-activations
    # exactly on the leaky-relu kink; randomize them so finite differences
    # never straddle a kink
    for name, p in model.params.items():
        if name.endswith("/b"):
            p.data = rng.uniform(-0.4, 0.4, size=p.data.shape)
    x = rng.standard_normal((n_nodes, input_dim))
    n_labeled = min(num_classes, n_nodes - 1) if n_nodes > 1 else 1
    labels = rng.integers(1, num_classes + 1, size=n_labeled)
    return model, x, labels


def micro_loss_builder(model, x, labels, kind: str, depth: int,
                       weights=losses_mod.LossWeights()):
    """Return a zero-argument callable producing the requested scalar loss."""
    sup = np.arange(len(labels))
    n = x.shape[0]

    def build():
        state = model.forward(x, training=False, depth=depth)
        terms = {}
        probs = [ad.gather_rows(p, sup) for p in model.classify_layers(state)]
        terms["node"] = losses_mod.focal_node_loss(probs, labels, weights.rho)
        terms["edge"] = losses_mod.edge_loss(state.edges, labels, sup)
        src = ad.gather_rows(state.nodes[0], np.arange(len(labels)))
        tgt = ad.gather_rows(state.nodes[0], np.arange(len(labels), n))
        # reversal off: with it on, backbone gradients are the deliberate
        # negation of the loss derivative, which finite differences measure;
        # the sign flip itself is checked exactly elsewhere
        terms["adversarial"], _ = losses_mod.adversarial_loss(
            lambda f: model.discriminate(f, reverse=False), src, tgt)
        if kind == "total":
            return losses_mod.total_loss(terms["node"], terms["edge"],
                                         terms["adversarial"], weights)
        return terms[kind]

    return build


def kink_distance(model, build) -> float:
    """Smallest |pre-activation| at any kink during one loss evaluation."""
    build()
    return model.last_min_preact
