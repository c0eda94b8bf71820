"""MLP classifier head, cross-entropy and the two disagreement regularizers.

The training objective is J = L - lambda * D where D measures how much the
attention heads disagree: D_penal penalizes overlap between the head
distributions (via ||A A^T - I||_F^2), D_emb penalizes cosine similarity
between the per-head sentence embeddings. Both are <= their maximum at
perfectly disagreeing heads, so subtracting them pushes heads apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node

REGULARIZERS = ("none", "positions", "embeddings")

PROB_FLOOR = 1e-12


def init_classifier_arrays(input_dim: int, hidden: int, num_classes: int,
                           rng: np.random.Generator, dtype=np.float32) -> dict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    b1 = 1.0 / np.sqrt(input_dim)
    b2 = 1.0 / np.sqrt(hidden)
    return {
        "W1": rng.uniform(-b1, b1, size=(hidden, input_dim)).astype(dtype),
        "b1": np.zeros((hidden, 1), dtype=dtype),
        "W_c": rng.uniform(-b2, b2, size=(num_classes, hidden)).astype(dtype),
        "b_c": np.zeros((num_classes, 1), dtype=dtype),
    }


def classify(d_doc: Node, W1: Node, b1: Node, W_c: Node, b_c: Node,
             dropout_rate: float, train: bool,
             rng: np.random.Generator | None = None) -> tuple[Node, Node]:
    """Class probabilities and the logits they came from.

    One tanh hidden layer with (inverted) dropout on its activations, then a
    linear map to C logits and a softmax.
    """
    if W1.shape[1] != d_doc.shape[0]:
        raise ad.ShapeMismatchError("classify", W1.shape, d_doc.shape)
    hidden = ad.tanh(ad.add(ad.matmul(W1, d_doc), b1))
    if train and dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        hidden = ad.dropout(hidden, dropout_rate, rng, train=True)
    logits = ad.add(ad.matmul(W_c, hidden), b_c)
    probs = ad.softmax(logits, axis=0)
    return probs, logits


def cross_entropy(probs: Node, onehot: Node) -> Node:
    """-sum(y log yhat) on probabilities, clamped at PROB_FLOOR before log.

    The training path feeds logits to the fused stable primitive instead
    (``autodiff.softmax_cross_entropy``); this form is for probabilities
    coming from anywhere.
    """
    if probs.shape != onehot.shape:
        raise ad.ShapeMismatchError("cross_entropy", probs.shape, onehot.shape)
    p = probs.value
    clamped = np.maximum(p, PROB_FLOOR)
    out = np.array([[-float((onehot.value * np.log(clamped)).sum())]], dtype=p.dtype)

    def back_p(g):
        grad = -onehot.value / clamped
        grad[p < PROB_FLOOR] = 0.0
        return float(g[0, 0]) * grad

    def back_y(g):
        return float(g[0, 0]) * (-np.log(clamped))

    return ad.Node(out, "cross_entropy", ((probs, back_p), (onehot, back_y)))


def disagreement_positions(A: Node) -> Node:
    """D_penal = -||A A^T - I||_F^2 (0 exactly when rows are orthonormal)."""
    m = A.shape[0]
    gram = ad.matmul(A, ad.transpose(A))
    eye = ad.constant(np.eye(m, dtype=A.value.dtype))
    diff = ad.add(gram, ad.scale(eye, -1.0))
    return ad.scale(ad.frobenius_sq(diff), -1.0)


def disagreement_embeddings(S: Node) -> Node:
    """D_emb = -(1/m^2) sum_ij cos(s_i, s_j), diagonal included."""
    normalized = ad.l2_normalize(S, axis=1)
    cosines = ad.matmul(normalized, ad.transpose(normalized))
    return ad.scale(ad.tmean(cosines), -1.0)


def total_objective(loss: Node, disagreement: Node | None, lam: float) -> Node:
    """J = L - lambda * D; with no regularizer J is the plain loss."""
    if disagreement is None or lam == 0.0:
        return loss
    return ad.add(loss, ad.scale(disagreement, -lam))


@dataclass
class ObjectiveConfig:
    regularizer: str = "none"
    lam: float = 0.2

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


def disagreement(config: ObjectiveConfig, A: Node, S: Node) -> Node | None:
    if config.regularizer == "positions":
        return disagreement_positions(A)
    if config.regularizer == "embeddings":
        return disagreement_embeddings(S)
    return None
