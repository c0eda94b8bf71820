"""Rank-1 factorized multi-head attention over a global context vector.

Per head i, the word score is the bilinear form c^T W_i u_t with W_i
factorized as the outer product p_i q_i^T, which collapses the m scores
into a Hadamard product of two projections: F[:, t] = (P^T c) o (Q^T u_t).
The m x T score matrix then runs through tanh, a per-word L2 normalization
across heads, and a row-wise softmax to give each head a distribution over
words. A dense (unfactorized) single-head scorer is kept as the exactness
oracle for the factorized path.

Masked positions are never fed to the normalizations: valid columns are
computed on their own and zeros are placed in the padded slots, so padding
a document further cannot perturb the attended output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node

CTX_LEARNED = "learned"
CTX_DOC_MEAN = "doc-mean"


class AllPositionsMaskedError(Exception):
    pass


def init_attention_arrays(d_ann: int, m: int, rng: np.random.Generator,
                          ctx: str = CTX_LEARNED, dtype=np.float32) -> dict:
    """N(0, 0.1^2) init for the word transform, both factor matrices and
    (in learned mode) the context vector. Order of draws is fixed."""
    out = {
        "W_w": rng.normal(0.0, 0.1, size=(d_ann, d_ann)).astype(dtype),
        "b_w": rng.normal(0.0, 0.1, size=(d_ann, 1)).astype(dtype),
        "P": rng.normal(0.0, 0.1, size=(d_ann, m)).astype(dtype),
        "Q": rng.normal(0.0, 0.1, size=(d_ann, m)).astype(dtype),
    }
    if ctx == CTX_LEARNED:
        out["c"] = rng.normal(0.0, 0.1, size=(d_ann, 1)).astype(dtype)
    return out


def context_init(mode: str, doc_embeddings: Node | None = None,
                 rng: np.random.Generator | None = None,
                 d_ann: int | None = None, dtype=np.float32):
    """Context vector for one of the two modes.

    learned: a fresh N(0, 0.1^2) array to be registered as trainable.
    doc-mean: the differentiable mean of the document's word embeddings,
    recomputed per document (gradients flow into the embedding matrix).
    """
    if mode == CTX_LEARNED:
        if rng is None or d_ann is None:
            raise ValueError("learned mode needs rng and d_ann")
        return rng.normal(0.0, 0.1, size=(d_ann, 1)).astype(dtype)
    if mode == CTX_DOC_MEAN:
        if doc_embeddings is None:
            raise ValueError("doc-mean mode needs the embedded document")
        return doc_mean_context(doc_embeddings)
    raise ValueError(f"unknown context mode {mode!r}")


def doc_mean_context(doc_embeddings: Node) -> Node:
    """Mean embedding of the (valid) tokens, as a column vector Node."""
    return ad.transpose(ad.tmean(doc_embeddings, axis=0))


def word_transform(H: Node, W_w: Node, b_w: Node) -> Node:
    """u_t = tanh(W_w h_t + b_w), applied to every row of H."""
    if W_w.shape[1] != H.shape[1] or b_w.shape != (W_w.shape[0], 1):
        raise ad.ShapeMismatchError("word_transform", H.shape, W_w.shape, b_w.shape)
    return ad.tanh(ad.add(ad.matmul(H, ad.transpose(W_w)), ad.transpose(b_w)))


def single_head_scores(U: Node, c: Node, W_i: Node,
                       mask: np.ndarray | None = None) -> tuple[Node, Node]:
    """Dense bilinear oracle: f_t = c^T W_i u_t, softmax over valid t."""
    if W_i.shape != (c.shape[0], U.shape[1]):
        raise ad.ShapeMismatchError("single_head_scores", W_i.shape, c.shape, U.shape)
    f = ad.matmul(ad.matmul(ad.transpose(c), W_i), ad.transpose(U))  # 1 x T
    alpha = attention_matrix(f, mask, normalize=False)
    return f, alpha


def lama_scores(U: Node, c: Node, P: Node, Q: Node) -> Node:
    """All m head scores at once: column t of F is (P^T c) o (Q^T u_t)."""
    d_ann = U.shape[1]
    if P.shape[0] != d_ann or Q.shape[0] != d_ann or P.shape[1] != Q.shape[1] \
            or c.shape != (d_ann, 1):
        raise ad.ShapeMismatchError("lama_scores", U.shape, c.shape, P.shape, Q.shape)
    ctx_proj = ad.matmul(ad.transpose(P), c)           # m x 1, broadcast over words
    word_proj = ad.matmul(ad.transpose(Q), ad.transpose(U))  # m x T
    return ad.hadamard(ctx_proj, word_proj)


def attention_matrix(F: Node, mask: np.ndarray | None = None,
                     normalize: bool = True) -> Node:
    """tanh -> per-word L2 across heads -> row softmax, restricted to valid
    columns; masked columns come back exactly zero.

    ``normalize=False`` skips tanh+L2 (the dense single-head oracle applies
    the softmax directly to its scores).
    """
    m, T = F.shape
    if mask is None:
        valid = None
        L = T
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (T,):
            raise ad.ShapeMismatchError("attention_matrix", F.shape, mask.shape)
        if not mask.any():
            raise AllPositionsMaskedError("attention_matrix: every position is masked")
        valid = np.flatnonzero(mask)
        L = len(valid)

    if L == T:
        core = F
    elif np.array_equal(valid, np.arange(L)):
        core = ad.slice_cols(F, 0, L)
    else:
        core = ad.transpose(ad.take_rows(ad.transpose(F), valid))

    if normalize:
        core = ad.l2_normalize(ad.tanh(core), axis=0)
    A = ad.softmax(core, axis=1)
    if L == T:
        return A

    # scatter back with exact zeros in the masked slots
    if np.array_equal(valid, np.arange(L)):
        pad = ad.constant(np.zeros((m, T - L), dtype=F.value.dtype))
        return ad.concat([A, pad], axis=1)
    select = np.zeros((L, T), dtype=F.value.dtype)
    select[np.arange(L), valid] = 1.0
    return ad.matmul(A, ad.constant(select))


def sentence_embedding(A: Node, H: Node) -> tuple[Node, Node]:
    """S = A H (one row per head) and its row-major flattening d_doc."""
    if A.shape[1] != H.shape[0]:
        raise ad.ShapeMismatchError("sentence_embedding", A.shape, H.shape)
    S = ad.matmul(A, H)
    d_doc = ad.reshape(S, (S.shape[0] * S.shape[1], 1))
    return S, d_doc


@dataclass
class AttentionOutput:
    """Attention and sentence embedding for one document.

    ``A`` spans all T positions (padded columns exactly zero) while
    ``A_valid``/``S``/``d_doc`` are the graph nodes the model trains
    through, built from valid positions only.
    """
    A: np.ndarray
    A_valid: Node
    S: Node
    d_doc: Node


def attend(H_valid: Node, c: Node, W_w: Node, b_w: Node, P: Node, Q: Node,
           total_length: int | None = None) -> AttentionOutput:
    """Full pipeline over the valid annotation rows of one document."""
    U = word_transform(H_valid, W_w, b_w)
    F = lama_scores(U, c, P, Q)
    A_valid = attention_matrix(F)
    S, d_doc = sentence_embedding(A_valid, H_valid)
    m, L = A_valid.shape
    T = total_length if total_length is not None else L
    A = np.zeros((m, T), dtype=A_valid.value.dtype)
    A[:, :L] = A_valid.value
    return AttentionOutput(A=A, A_valid=A_valid, S=S, d_doc=d_doc)


def lama_encoder_forward(embedded_valid: Node, c: Node, W_w: Node, b_w: Node,
                         P: Node, Q: Node,
                         total_length: int | None = None) -> AttentionOutput:
    """The RNN-free variant: annotations are the raw word embeddings, so the
    attention dimension equals the embedding dimension."""
    return attend(embedded_valid, c, W_w, b_w, P, Q, total_length)
