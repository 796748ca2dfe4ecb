"""Single- and multi-aspect self-attention over Bi-GRU hidden states.

For hidden states H (n x d_h) and projection U (d_a x d_h):

    P = tanh(U H^T)              d_a x n
    V = row_softmax(W_a P)       a x n      (a = 1 gives the single-aspect form)
    M = V H                      a x d_h, flattened row by row

All functions also accept a leading batch axis (B, n, d_h) with a (B, n)
mask. Masked positions receive exactly zero weight.
"""
from dataclasses import dataclass

import numpy as np

from .gru import glorot_uniform
from .tensor import (DimensionError, Parameter, as_tensor, div, matmul, masked_softmax, mul,
                     reshape, sub, sum_all, sum_axis, swap_last, take_rows, tanh)


@dataclass
class AttentionParameters:
    U: Parameter
    W: Parameter

    @classmethod
    def init(cls, hidden_dim, attention_size, aspects, rng, prefix="attention"):
        if attention_size < 1 or aspects < 1:
            raise ValueError(f"attention_size and aspects must be >= 1, got {attention_size}, {aspects}")
        return cls(Parameter(glorot_uniform(rng, attention_size, hidden_dim), f"{prefix}.U"),
                   Parameter(glorot_uniform(rng, aspects, attention_size), f"{prefix}.W"))

    @property
    def aspects(self):
        return self.W.shape[0]

    @property
    def attention_size(self):
        return self.U.shape[0]

    @property
    def w(self):
        """The single-aspect weight vector (only meaningful when aspects == 1)."""
        return self.W.data[0]

    def parameters(self):
        return [self.U, self.W]


def _default_mask(H, mask):
    return np.ones(H.shape[:-1]) if mask is None else np.asarray(mask, dtype=np.float64)


def multi_aspect_weights(H, params, mask=None):
    """Attention matrix V: (a, n), or (B, a, n) for batched H."""
    H = as_tensor(H)
    if H.shape[-1] != params.U.shape[1]:
        raise DimensionError(f"attention: H width {H.shape[-1]} != U width {params.U.shape[1]}")
    if H.shape[-2] < 1:
        raise ValueError("attention over an empty sequence")
    mask = _default_mask(H, mask)
    P = tanh(matmul(H, swap_last(params.U)))            # (..., n, d_a) = (U H^T)^T
    logits = swap_last(matmul(P, swap_last(params.W)))  # (..., a, n)
    return masked_softmax(logits, mask[..., None, :], axis=-1)


def single_aspect_weights(H, params, mask=None):
    """Attention vector v: (n,), or (B, n). Uses the first row of ``params.W``."""
    if params.aspects != 1:
        params = AttentionParameters(params.U, take_rows(params.W, [0]))
    V = multi_aspect_weights(H, params, mask)
    return reshape(V, V.shape[:-2] + V.shape[-1:])


def attend(H, V):
    """Flattened M = V H: (a * d_h,) or (B, a * d_h)."""
    H, V = as_tensor(H), as_tensor(V)
    if V.shape[-1] != H.shape[-2]:
        raise DimensionError(f"attend: V {V.shape} does not match H {H.shape}")
    M = matmul(V, H)
    return reshape(M, M.shape[:-2] + (M.shape[-2] * M.shape[-1],))


def mean_pool(H, mask=None):
    """Average of the unmasked rows of H; the ablation's stand-in for attention."""
    H = as_tensor(H)
    mask = _default_mask(H, mask)
    summed = sum_axis(mul(H, mask[..., None]), axis=-2)
    return div(summed, mask.sum(axis=-1, keepdims=True))


def redundancy_penalty(V):
    """||V V^T - I||_F^2 summed over the batch (off by default in the model)."""
    V = as_tensor(V)
    G = sub(matmul(V, swap_last(V)), np.eye(V.shape[-2]))
    return sum_all(mul(G, G))
