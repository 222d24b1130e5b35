"""Training losses: focal node classification, edge BCE, adversarial alignment.

The total objective is node_loss + mu * edge_loss + gamma * adversarial_loss.
The sign split between the discriminator (descends the adversarial term)
and the backbone (ascends it) is realized structurally: the discriminator
input passes through a gradient-reversal layer, so one backward pass
updates both parameter groups in their intended directions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad

LOG_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    mu: float = 0.3
    gamma: float = 0.4
    rho: float = 2.0

    def __post_init__(self):
        if self.mu < 0 or self.gamma < 0 or self.rho < 0:
            raise ValueError("loss weights must be nonnegative")


def same_class_matrix(labels) -> np.ndarray:
    """Ground-truth edge map: 1 where both endpoints share a class."""
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def focal_node_loss(layer_probs: Sequence[ad.Tensor], labels, rho: float = 2.0) -> ad.Tensor:
    """Mean focal term -(1-p_y)^rho * log p_y over labeled nodes, summed over layers.

    rho=0 reduces to plain negative log-likelihood. Labels must be known
    classes (1..C); an unknown-class label here is a wiring bug upstream.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(layer_probs) == 0:
        raise ValueError("focal_node_loss: need at least one probability matrix")
    num_classes = layer_probs[0].shape[1]
    if labels.min(initial=1) < 1 or labels.max(initial=1) > num_classes:
        raise ValueError(
            f"focal_node_loss: labels must lie in 1..{num_classes}; "
            "unknown-class nodes never receive node supervision"
        )
    rows = np.arange(len(labels))
    total = None
    for probs in layer_probs:
        if probs.shape[0] != len(labels):
            raise ad.ShapeError(
                f"focal_node_loss: {probs.shape[0]} rows vs {len(labels)} labels"
            )
        p = ad.take_rc(probs, rows, labels - 1)
        weight = ad.powconst(ad.add(1.0, ad.neg(p)), rho)
        term = ad.mean(ad.mul(weight, ad.neg(ad.log(p))))
        total = term if total is None else ad.add(total, term)
    return total


def edge_loss(layer_edges: Sequence[ad.Tensor], labels, nodes=None) -> ad.Tensor:
    """Binary cross-entropy between normalized edges and the same-class map.

    Supervision is restricted to pairs of label-bearing nodes: `nodes`
    selects the labeled rows/columns of each edge matrix (all rows when
    omitted), and `labels` aligns with that selection.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if nodes is None:
        nodes = np.arange(len(labels))
    nodes = np.asarray(nodes, dtype=np.intp)
    if len(nodes) != len(labels):
        raise ad.ShapeError(f"edge_loss: {len(nodes)} nodes vs {len(labels)} labels")
    y = same_class_matrix(labels)
    total = None
    for e in layer_edges:
        block = ad.clip(ad.submatrix(e, nodes, nodes), LOG_EPS, 1.0 - LOG_EPS)
        pos = ad.mul(y, ad.log(block))
        negt = ad.mul(1.0 - y, ad.log(ad.add(1.0, ad.neg(block))))
        term = ad.neg(ad.mean(ad.add(pos, negt)))
        total = term if total is None else ad.add(total, term)
    return total


def adversarial_loss(
    discriminate: Callable[[ad.Tensor], ad.Tensor],
    source_features: ad.Tensor,
    target_features: ad.Tensor,
) -> tuple[ad.Tensor, int]:
    """E_s[log D] + E_t[log(1-D)] with saturation clamping.

    `discriminate` must already include the gradient-reversal wiring.
    Returns the scalar loss and the number of discriminator outputs that
    had to be clamped away from exact 0/1 before the log.
    """
    if source_features.shape[0] == 0 or target_features.shape[0] == 0:
        raise ValueError("adversarial_loss: both feature sets must be nonempty")
    d_src = discriminate(source_features)
    d_tgt = discriminate(target_features)
    clamped = int(((d_src.data < LOG_EPS) | (d_src.data > 1.0 - LOG_EPS)).sum())
    clamped += int(((d_tgt.data < LOG_EPS) | (d_tgt.data > 1.0 - LOG_EPS)).sum())
    src_term = ad.mean(ad.log(ad.clip(d_src, LOG_EPS, 1.0 - LOG_EPS)))
    tgt_term = ad.mean(ad.log(ad.add(1.0, ad.neg(ad.clip(d_tgt, LOG_EPS, 1.0 - LOG_EPS)))))
    return ad.add(src_term, tgt_term), clamped


def total_loss(node_term: ad.Tensor, edge_term: ad.Tensor | None,
               adversarial_term: ad.Tensor | None, weights: LossWeights) -> ad.Tensor:
    total = node_term
    if edge_term is not None and weights.mu != 0.0:
        total = ad.add(total, ad.mul(edge_term, weights.mu))
    if adversarial_term is not None and weights.gamma != 0.0:
        total = ad.add(total, ad.mul(adversarial_term, weights.gamma))
    return total
