"""Collapse a run of hidden states into one vector per sequence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .tape import Node, Parameter

POOLINGS = ("last", "attention")


@dataclass
class AttentionParams:
    W_a: Parameter  # A x H
    v_a: Parameter  # A x 1

    def parameters(self) -> list[Parameter]:
        return [self.W_a, self.v_a]

    @classmethod
    def init(cls, hidden: int, width: int, rng: np.random.Generator, prefix: str = "attn.") -> "AttentionParams":
        bound = 1.0 / np.sqrt(hidden)
        return cls(
            Parameter(prefix + "W_a", rng.uniform(-bound, bound, size=(width, hidden))),
            Parameter(prefix + "v_a", rng.uniform(-bound, bound, size=(width, 1))),
        )

    @classmethod
    def from_arrays(cls, W_a, v_a, prefix: str = "attn.") -> "AttentionParams":
        return cls(Parameter(prefix + "W_a", W_a), Parameter(prefix + "v_a", v_a))


def pool_last(states: list[Node]) -> Node:
    if not states:
        raise ValueError("cannot pool an empty state sequence")
    return states[-1]


def pool_attention(params: AttentionParams, states: list[Node], mask: np.ndarray | None = None) -> tuple[Node, Node]:
    """Attention-weighted sum of states.

    Scores are ``v_a . tanh(W_a h_j)`` with no bias; weights are their softmax
    over the valid steps (``mask``, ``B x T``). Returns ``(pooled, weights)``.
    """
    if not states:
        raise ValueError("cannot pool an empty state sequence")
    W_t = T.transpose(params.W_a)
    scores = [T.matmul(T.tanh(T.matmul(h, W_t)), params.v_a) for h in states]
    weights = T.softmax_rows(T.concat_cols(scores), mask)
    # h_1 + sum_j a_j (h_j - h_1): same value since the weights sum to one, but
    # identical states come back bit-exact.
    anchor = states[0]
    pooled = anchor
    for j, h in enumerate(states[1:], start=1):
        pooled = T.add(pooled, T.hadamard(T.column(weights, j), T.sub(h, anchor)))
    return pooled, weights


def pool(variant: str, states: list[Node], attention: AttentionParams | None = None, mask=None) -> Node:
    if variant == "last":
        return pool_last(states)
    if variant == "attention":
        if attention is None:
            raise ValueError("attention pooling needs AttentionParams")
        return pool_attention(attention, states, mask)[0]
    raise ValueError(f"unknown pooling {variant!r}; expected one of {POOLINGS}")
