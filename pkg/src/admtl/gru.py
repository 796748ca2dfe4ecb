"""GRU cell and bidirectional GRU encoder.

Weights are stored for row vectors: ``x @ W`` with W of shape (d, d_dir) and
``h @ V`` with V of shape (d_dir, d_dir). That is the transpose of the
column-vector notation ``W x``; the gate equations are otherwise unchanged:

    z = sigmoid(x Wz + h Vz + bz)
    r = sigmoid(x Wr + h Vr + br)
    c = tanh(x W + (r * h) V + b)
    h' = z * c + (1 - z) * h
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tensor import (DimensionError, Parameter, _node, add, as_tensor, concat, matmul, mul, reshape,
                     sigmoid, sub, tanh)

GATES = ("z", "r", "c")


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class GruParameters:
    wz: Parameter
    wr: Parameter
    wc: Parameter
    vz: Parameter
    vr: Parameter
    vc: Parameter
    bz: Parameter
    br: Parameter
    bc: Parameter

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, prefix="gru"):
        p = {}
        for g in GATES:
            p["w" + g] = Parameter(glorot_uniform(rng, input_dim, hidden_dim), f"{prefix}.w{g}")
        for g in GATES:
            p["v" + g] = Parameter(orthogonal(rng, hidden_dim), f"{prefix}.v{g}")
        for g in GATES:
            p["b" + g] = Parameter(np.zeros(hidden_dim), f"{prefix}.b{g}")
        return cls(**p)

    @property
    def input_dim(self):
        return self.wz.shape[0]

    @property
    def hidden_dim(self):
        return self.wz.shape[1]

    def parameters(self):
        return [self.wz, self.wr, self.wc, self.vz, self.vr, self.vc, self.bz, self.br, self.bc]

    def check(self):
        d, h = self.input_dim, self.hidden_dim
        for p in self.parameters():
            want = {"w": (d, h), "v": (h, h), "b": (h,)}[p.name.rsplit(".", 1)[-1][0]]
            if p.shape != want:
                raise DimensionError(f"{p.name}: shape {p.shape}, expected {want}")


@dataclass
class BiGruParameters:
    forward: GruParameters
    backward: GruParameters

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, prefix="bigru"):
        return cls(GruParameters.init(input_dim, hidden_dim, rng, f"{prefix}.fwd"),
                   GruParameters.init(input_dim, hidden_dim, rng, f"{prefix}.bwd"))

    @property
    def output_dim(self):
        return 2 * self.forward.hidden_dim

    def parameters(self):
        return self.forward.parameters() + self.backward.parameters()


def gru_cell(x_t, h_prev, params):
    """One GRU step built from differentiable primitives.

    Works on a single vector (d,) / (d_dir,) or a batch of rows.
    """
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    if x_t.shape[-1] != params.input_dim or h_prev.shape[-1] != params.hidden_dim:
        raise DimensionError(f"gru_cell: input {x_t.shape} / state {h_prev.shape} do not match "
                             f"W {params.wz.shape} / V {params.vz.shape}")
    single = x_t.ndim == 1
    x = reshape(x_t, (1, -1)) if single else x_t
    h = reshape(h_prev, (1, -1)) if h_prev.ndim == 1 else h_prev
    z = sigmoid(add(add(matmul(x, params.wz), matmul(h, params.vz)), params.bz))
    r = sigmoid(add(add(matmul(x, params.wr), matmul(h, params.vr)), params.br))
    c = tanh(add(add(matmul(x, params.wc), matmul(mul(r, h), params.vc)), params.bc))
    h_new = add(mul(z, c), mul(sub(1.0, z), h))
    return reshape(h_new, (params.hidden_dim,)) if single else h_new


def gru_sequence(x, mask, params, reverse=False, backend=None):
    """Run one GRU direction over a padded batch with the fused kernel.

    ``x`` is (B, n, d), ``mask`` (B, n). Returns the (B, n, d_dir) hidden
    states with zeros at masked positions; masked steps carry the state.
    """
    x = as_tensor(x)
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    params.check()
    if x.ndim != 3 or x.shape[-1] != params.input_dim or mask.shape != x.shape[:2]:
        raise DimensionError(f"gru_sequence: input {x.shape}, mask {mask.shape}, W {params.wz.shape}")
    kernel = _kernels.get_backend(backend, x.shape[0], params.hidden_dim)
    X = x.data
    proj = [np.ascontiguousarray(X @ getattr(params, "w" + g).data + getattr(params, "b" + g).data)
            for g in GATES]
    vs = [np.ascontiguousarray(getattr(params, "v" + g).data) for g in GATES]
    states, hprev, z, r, c = kernel.gru_forward(*proj, *vs, mask, reverse)
    out = states * mask[:, :, None]

    def bw(g):
        dstates = np.ascontiguousarray(g * mask[:, :, None])
        dxz, dxr, dxc, dvz, dvr, dvc = kernel.gru_backward(dstates, hprev, z, r, c, *vs, mask, reverse)
        dproj = (dxz, dxr, dxc)
        flat_x = X.reshape(-1, X.shape[-1])
        dx = sum(dp @ getattr(params, "w" + gate).data.T for dp, gate in zip(dproj, GATES))
        dws = tuple(flat_x.T @ dp.reshape(-1, dp.shape[-1]) for dp in dproj)
        dbs = tuple(dp.sum(axis=(0, 1)) for dp in dproj)
        return (dx,) + dws + (dvz, dvr, dvc) + dbs

    parents = (x, params.wz, params.wr, params.wc, params.vz, params.vr, params.vc,
               params.bz, params.br, params.bc)
    return _node(out, parents, bw)


def bigru_encode(x_seq, mask, params, backend=None):
    """Bidirectional encoding H = [forward ; backward] per position.

    Accepts a single sequence (n, d) with mask (n,) or a batch (B, n, d) with
    mask (B, n); returns (n, 2 d_dir) or (B, n, 2 d_dir).
    """
    x_seq = as_tensor(x_seq)
    single = x_seq.ndim == 2
    if single:
        if x_seq.shape[0] == 0:
            raise ValueError("bigru_encode: empty sequence")
        mask = np.ones(x_seq.shape[0]) if mask is None else np.asarray(mask, dtype=np.float64)
        x_seq = reshape(x_seq, (1,) + x_seq.shape)
        mask = mask[None, :]
    elif x_seq.shape[1] == 0:
        raise ValueError("bigru_encode: empty sequence")
    fwd = gru_sequence(x_seq, mask, params.forward, reverse=False, backend=backend)
    bwd = gru_sequence(x_seq, mask, params.backward, reverse=True, backend=backend)
    H = concat([fwd, bwd], axis=-1)
    if single:
        H = reshape(H, H.shape[1:])
    return H
