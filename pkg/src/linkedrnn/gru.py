"""Gated recurrent unit encoder.

States are rows: a batch of ``B`` sequences advances as a ``B x H`` matrix.
Weight matrices keep the column-vector convention (``W_z`` is ``H x d``), so a
step computes ``x @ W_z.T``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tape as T
from .tape import DimensionError, Node, Parameter


@dataclass
class GruParams:
    W_z: Parameter
    U_z: Parameter
    b_z: Parameter
    W_r: Parameter
    U_r: Parameter
    b_r: Parameter
    W: Parameter
    U: Parameter
    b_c: Parameter

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def parameters(self) -> list[Parameter]:
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator, prefix: str = "gru.") -> "GruParams":
        """Weights uniform in [-1/sqrt(H), 1/sqrt(H)], biases zero."""
        bound = 1.0 / np.sqrt(hidden)
        shapes = {
            "W_z": (hidden, input_dim), "U_z": (hidden, hidden), "b_z": None,
            "W_r": (hidden, input_dim), "U_r": (hidden, hidden), "b_r": None,
            "W": (hidden, input_dim), "U": (hidden, hidden), "b_c": None,
        }
        made = {}
        for name, shape in shapes.items():
            if shape is None:
                value = np.zeros((hidden, 1))
            else:
                value = rng.uniform(-bound, bound, size=shape)
            made[name] = Parameter(prefix + name, value)
        return cls(**made)

    @classmethod
    def from_arrays(cls, prefix: str = "gru.", **arrays) -> "GruParams":
        return cls(**{k: Parameter(prefix + k, v) for k, v in arrays.items()})


class _Transposed:
    """Per-tape transposes of the weights, built once and reused across steps."""

    def __init__(self, p: GruParams):
        self.W_z, self.U_z, self.b_z = T.transpose(p.W_z), T.transpose(p.U_z), T.transpose(p.b_z)
        self.W_r, self.U_r, self.b_r = T.transpose(p.W_r), T.transpose(p.U_r), T.transpose(p.b_r)
        self.W, self.U, self.b_c = T.transpose(p.W), T.transpose(p.U), T.transpose(p.b_c)


def _step(t: _Transposed, h_prev: Node, x: Node) -> Node:
    z = T.sigmoid(T.add(T.add(T.matmul(x, t.W_z), T.matmul(h_prev, t.U_z)), t.b_z))
    r = T.sigmoid(T.add(T.add(T.matmul(x, t.W_r), T.matmul(h_prev, t.U_r)), t.b_r))
    cand = T.tanh(T.add(T.add(T.matmul(x, t.W), T.matmul(T.hadamard(r, h_prev), t.U)), t.b_c))
    return T.add(T.hadamard(z, h_prev), T.hadamard(T.sub(1.0, z), cand))


def _check(params: GruParams, h_prev: Node, x: Node) -> None:
    if h_prev.shape[1] != params.hidden or x.shape[1] != params.input_dim or h_prev.shape[0] != x.shape[0]:
        raise DimensionError(
            f"gru step: state {h_prev.shape} and input {x.shape} vs H={params.hidden}, d={params.input_dim}"
        )


def gru_step(params: GruParams, h_prev, x_t) -> Node:
    """One GRU update; ``h_prev`` is ``B x H`` and ``x_t`` is ``B x d``."""
    h_prev, x_t = T._node(h_prev), T._node(x_t)
    _check(params, h_prev, x_t)
    return _step(_Transposed(params), h_prev, x_t)


def encode_sequence(params: GruParams, seq, h0=None) -> list[Node]:
    """Fold :func:`gru_step` over ``seq`` (``N x d``) and return every state."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq.reshape(-1, 1) if params.input_dim == 1 else seq.reshape(1, -1)
    if seq.shape[0] == 0:
        raise ValueError("cannot encode an empty sequence")
    h = T.const(np.zeros((1, params.hidden)) if h0 is None else T.as_matrix(h0))
    states = []
    for x in seq:
        h = gru_step(params, h, T.const(x.reshape(1, -1)))
        states.append(h)
    return states


def pad_batch(sequences) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length sequences into ``(B, T, d)`` with a ``(B, T)`` validity mask."""
    lengths = [len(s) for s in sequences]
    if min(lengths) == 0:
        raise ValueError("cannot encode an empty sequence")
    d = np.asarray(sequences[0]).shape[1]
    out = np.zeros((len(sequences), max(lengths), d))
    mask = np.zeros((len(sequences), max(lengths)), dtype=bool)
    for i, s in enumerate(sequences):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask


def encode_batch(params: GruParams, sequences, h0=None) -> tuple[list[Node], np.ndarray]:
    """Encode many sequences at once.

    Past a sequence's end its row is carried forward unchanged, so the final
    state row equals ``h_{N^i}`` for every sequence. Returns the ``T_max``
    state nodes (each ``B x H``) and the ``B x T_max`` validity mask.
    """
    padded, mask = pad_batch(sequences)
    batch, steps, _ = padded.shape
    t = _Transposed(params)
    h = T.const(np.zeros((batch, params.hidden)) if h0 is None else T.as_matrix(h0))
    states = []
    for k in range(steps):
        x = T.const(padded[:, k, :])
        _check(params, h, x)
        new = _step(t, h, x)
        live = mask[:, k]
        if not live.all():
            keep = T.const(live.astype(np.float64).reshape(-1, 1))
            new = T.add(T.hadamard(keep, new), T.hadamard(T.const(1.0 - keep.value), h))
        h = new
        states.append(h)
    return states, mask
