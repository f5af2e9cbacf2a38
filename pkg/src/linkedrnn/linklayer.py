"""Neighbourhood averaging over the link graph and combination of its rounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .tape import DimensionError, Node, Parameter

ACTIVATIONS = {"identity": T.identity, "tanh": T.tanh, "relu": T.relu}
_NP_ACTIVATIONS = {"identity": lambda x: x, "tanh": np.tanh, "relu": lambda x: np.maximum(x, 0.0)}
AGGREGATIONS = ("last", "ffn_last_two", "ffn_all")


class ConfigError(ValueError):
    """A variant choice does not fit the shapes it was given."""


class LinkGraph:
    """Undirected, unweighted graph with self-loops added on the diagonal.

    ``neighbors[i]`` lists the other endpoints of node ``i`` in ascending
    order and ``degree[i]`` is its length; the closed-neighbourhood size used
    for averaging is ``degree[i] + 1``.
    """

    def __init__(self, n: int, edges=()):
        if n < 1:
            raise ValueError("graph needs at least one node")
        self.n = n
        adjacency = np.zeros((n, n))
        for i, j in edges:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for {n} nodes")
            if i != j:
                adjacency[i, j] = adjacency[j, i] = 1.0
        np.fill_diagonal(adjacency, 1.0)
        self.adjacency = adjacency
        off = adjacency.copy()
        np.fill_diagonal(off, 0.0)
        self.neighbors = [np.flatnonzero(row) for row in off]
        self.degree = np.array([len(nb) for nb in self.neighbors], dtype=np.intp)
        src, dst = np.nonzero(off)  # row-major, so sorted by (src, dst)
        self._src, self._dst = src, dst
        self._has = np.flatnonzero(self.degree)
        self._starts = np.concatenate([[0], np.cumsum(self.degree)])[self._has]
        self._norm: np.ndarray | None = None

    @classmethod
    def from_adjacency(cls, adjacency) -> "LinkGraph":
        a = np.asarray(adjacency)
        if a.shape[0] != a.shape[1]:
            raise DimensionError(f"adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if (a < 0).any():
            raise ValueError("adjacency must be non-negative")
        i, j = np.nonzero(np.triu(a, 1))
        return cls(a.shape[0], zip(i, j))

    @property
    def edges(self) -> list[tuple[int, int]]:
        keep = self._src < self._dst
        return list(zip(self._src[keep].tolist(), self._dst[keep].tolist()))

    @property
    def normalized(self) -> np.ndarray:
        """Row-normalised ``D^-1 A`` with ``D(i,i) = degree[i] + 1``."""
        if self._norm is None:
            self._norm = self.adjacency / (self.degree + 1.0)[:, None]
        return self._norm

    def closed_mean(self, X: np.ndarray) -> np.ndarray:
        """Mean of each node's closed neighbourhood, row by row.

        Computed as ``x_i + sum_j (x_j - x_i) / (deg_i + 1)`` with each node's
        differences summed in sorted-value order, so the result does not depend
        on node labels or neighbour-list order and constant rows are fixed points.
        """
        out = np.array(X, dtype=np.float64, copy=True)
        if self._has.size == 0:
            return out
        diff = (X[self._dst] - X[self._src]).T  # H x E
        keys = (diff, np.broadcast_to(self._src, diff.shape))
        order = np.lexsort(keys, axis=-1)
        ordered = np.take_along_axis(diff, order, axis=1)
        sums = np.add.reduceat(ordered, self._starts, axis=1).T
        out[self._has] += sums / (self.degree[self._has] + 1.0)[:, None]
        return out


def propagate_once(graph: LinkGraph, V, activation: str = "tanh") -> Node:
    """One averaging round followed by the element-wise activation."""
    V = T._node(V)
    if V.shape[0] != graph.n:
        raise DimensionError(f"representations have {V.shape[0]} rows, graph has {graph.n} nodes")
    act = _activation(activation)
    P = graph.normalized
    mixed = Node(graph.closed_mean(V.value), (V,), "propagate", lambda g: T._acc(V, P.T @ g))
    return act(mixed)


@dataclass
class PropagationStack:
    layers: list[Node]
    activation: str = "tanh"

    @property
    def rounds(self) -> int:
        return len(self.layers) - 1


def propagate(graph: LinkGraph, V0, rounds: int, activation: str = "tanh") -> PropagationStack:
    if rounds < 0:
        raise ValueError("round count must be non-negative")
    layers = [T._node(V0)]
    for _ in range(rounds):
        layers.append(propagate_once(graph, layers[-1], activation))
    return PropagationStack(layers, activation)


@dataclass
class FFNParams:
    """Single tanh layer mapping ``k*H`` concatenated features back to ``H``."""

    W: Parameter
    b: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]

    @classmethod
    def init(cls, in_width: int, out_width: int, rng: np.random.Generator, prefix: str = "agg2.") -> "FFNParams":
        bound = 1.0 / np.sqrt(in_width)
        return cls(
            Parameter(prefix + "W", rng.uniform(-bound, bound, size=(out_width, in_width))),
            Parameter(prefix + "b", np.zeros((out_width, 1))),
        )

    @classmethod
    def from_arrays(cls, W, b, prefix: str = "agg2.") -> "FFNParams":
        return cls(Parameter(prefix + "W", W), Parameter(prefix + "b", T.as_matrix(b).reshape(-1, 1)))


@dataclass
class Aggregation2Choice:
    variant: str = "ffn_all"
    ffn: FFNParams | None = field(default=None)


def ffn_input_width(variant: str, width: int, rounds: int) -> int | None:
    if variant == "last":
        return None
    if variant == "ffn_last_two":
        return 2 * width
    if variant == "ffn_all":
        return (rounds + 1) * width
    raise ConfigError(f"unknown aggregation {variant!r}; expected one of {AGGREGATIONS}")


def aggregate2(stack: PropagationStack, choice: Aggregation2Choice) -> Node:
    variant = choice.variant
    if variant == "last":
        return stack.layers[-1]
    if variant == "ffn_last_two":
        if stack.rounds < 1:
            raise ConfigError("ffn_last_two needs at least one propagation round")
        features = T.concat_cols([stack.layers[-1], stack.layers[-2]])
    elif variant == "ffn_all":
        features = T.concat_cols(stack.layers)
    else:
        raise ConfigError(f"unknown aggregation {variant!r}; expected one of {AGGREGATIONS}")
    if choice.ffn is None:
        raise ConfigError(f"{variant} needs feed-forward parameters")
    if choice.ffn.W.shape[1] != features.shape[1]:
        raise ConfigError(f"{variant}: ffn expects width {choice.ffn.W.shape[1]}, stack gives {features.shape[1]}")
    pre = T.add(T.matmul(features, T.transpose(choice.ffn.W)), T.transpose(choice.ffn.b))
    return T.tanh(pre)


def matrix_individual_equivalence_check(graph: LinkGraph, V, activation: str = "identity") -> float:
    """Max abs gap between per-node neighbour summation and ``act(D^-1 A V)``."""
    V = np.asarray(V, dtype=np.float64)
    act = _NP_ACTIVATIONS[activation]
    per_node = np.empty_like(V)
    for i in range(graph.n):
        acc = V[i].copy()
        for j in graph.neighbors[i]:
            acc = acc + V[j]
        per_node[i] = acc / (graph.degree[i] + 1)
    matrix = graph.normalized @ V
    return float(np.max(np.abs(act(per_node) - act(matrix))))


def _activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; expected one of {tuple(ACTIVATIONS)}") from None
