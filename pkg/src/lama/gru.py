"""GRU cell and bidirectional encoder producing contextual word annotations.

All graph-level functions take parameters as Nodes (see ``GruCell``) so
gradients flow to the underlying arrays. Vectors are column vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node

GATE_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def init_gru_arrays(d: int, h: int, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases.

    Arrays are created in GATE_NAMES order so RNG consumption is fixed.
    """
    bound = 1.0 / np.sqrt(h)
    out = {}
    for name in GATE_NAMES:
        if name.startswith("W"):
            out[name] = rng.uniform(-bound, bound, size=(h, d)).astype(dtype)
        elif name.startswith("U"):
            out[name] = rng.uniform(-bound, bound, size=(h, h)).astype(dtype)
        else:
            out[name] = np.zeros((h, 1), dtype=dtype)
    return out


@dataclass
class GruCell:
    """Node view of one direction's parameters."""
    W_z: Node
    U_z: Node
    b_z: Node
    W_r: Node
    U_r: Node
    b_r: Node
    W_h: Node
    U_h: Node
    b_h: Node

    @classmethod
    def from_nodes(cls, nodes: dict, prefix: str) -> "GruCell":
        return cls(**{name: nodes[prefix + name] for name in GATE_NAMES})

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]


def _one_minus(x: Node) -> Node:
    return ad.add_scalar(ad.scale(x, -1.0), 1.0)


def _step(wx_z: Node, wx_r: Node, wx_h: Node, h_prev: Node, cell: GruCell) -> Node:
    """Advance one step given precomputed input projections W_* x_t."""
    z = ad.sigmoid(ad.add(ad.add(wx_z, ad.matmul(cell.U_z, h_prev)), cell.b_z))
    r = ad.sigmoid(ad.add(ad.add(wx_r, ad.matmul(cell.U_r, h_prev)), cell.b_r))
    # bias sits outside the reset product: tanh(W_h x + r o (U_h h) + b_h)
    cand = ad.tanh(ad.add(ad.add(wx_h, ad.hadamard(r, ad.matmul(cell.U_h, h_prev))), cell.b_h))
    return ad.add(ad.hadamard(_one_minus(z), h_prev), ad.hadamard(z, cand))


def gru_step(x_t: Node, h_prev: Node, cell: GruCell) -> Node:
    """h_t = (1 - z) o h_prev + z o tanh(W_h x + r o (U_h h_prev) + b_h)."""
    if x_t.shape != (cell.input_dim, 1) or h_prev.shape != (cell.hidden_dim, 1):
        raise ad.ShapeMismatchError("gru_step", x_t.shape, h_prev.shape)
    return _step(ad.matmul(cell.W_z, x_t), ad.matmul(cell.W_r, x_t),
                 ad.matmul(cell.W_h, x_t), h_prev, cell)


def _run_direction(x_cols: Node, cell: GruCell, order) -> list:
    """States for positions visited in ``order``, returned indexed by position."""
    h = ad.constant(np.zeros((cell.hidden_dim, 1), dtype=x_cols.value.dtype))
    # one matmul per gate for the whole document, sliced per step
    wx_z = ad.matmul(cell.W_z, x_cols)
    wx_r = ad.matmul(cell.W_r, x_cols)
    wx_h = ad.matmul(cell.W_h, x_cols)
    states = [None] * x_cols.shape[1]
    for t in order:
        h = _step(ad.slice_cols(wx_z, t, t + 1), ad.slice_cols(wx_r, t, t + 1),
                  ad.slice_cols(wx_h, t, t + 1), h, cell)
        states[t] = h
    return states


@dataclass
class AnnotationMatrix:
    """Word annotations for one document.

    ``H`` is the full T x 2h matrix with padded rows exactly zero; ``valid``
    is the L x 2h slice actually produced by the recurrences, and is the
    tensor downstream layers should consume (it is bit-identical no matter
    how much padding the document carries).
    """
    H: Node
    valid: Node
    mask: np.ndarray
    true_length: int


def bigru_encode(embedded: Node, forward_cell: GruCell, backward_cell: GruCell,
                 true_length: int) -> AnnotationMatrix:
    """Encode a T x d document; rows beyond ``true_length`` are ignored by
    both directions and come back as zero rows."""
    T = embedded.shape[0]
    if not 0 < true_length <= T:
        raise ad.ShapeMismatchError("bigru_encode", embedded.shape, (true_length,))
    if forward_cell.hidden_dim != backward_cell.hidden_dim:
        raise ad.ShapeMismatchError(
            "bigru_encode", (forward_cell.hidden_dim,), (backward_cell.hidden_dim,))
    L = true_length
    x_cols = ad.transpose(embedded if L == T else ad.slice_rows(embedded, 0, L))
    fwd = _run_direction(x_cols, forward_cell, range(L))
    bwd = _run_direction(x_cols, backward_cell, range(L - 1, -1, -1))
    columns = [ad.concat([fwd[t], bwd[t]], axis=0) for t in range(L)]
    valid = ad.transpose(ad.concat(columns, axis=1))
    if L == T:
        H = valid
    else:
        pad = ad.constant(np.zeros((T - L, valid.shape[1]), dtype=valid.value.dtype))
        H = ad.concat([valid, pad], axis=0)
    mask = np.arange(T) < L
    return AnnotationMatrix(H=H, valid=valid, mask=mask, true_length=L)
