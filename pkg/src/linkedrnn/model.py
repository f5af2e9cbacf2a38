"""The full pipeline: encode, pool, propagate over links, combine, predict."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import tape as T
from .gru import GruParams, encode_batch
from .linklayer import (
    ACTIVATIONS,
    AGGREGATIONS,
    Aggregation2Choice,
    ConfigError,
    FFNParams,
    LinkGraph,
    PropagationStack,
    aggregate2,
    ffn_input_width,
    propagate,
)
from .pooling import POOLINGS, AttentionParams, pool
from .tape import DimensionError, Node, Parameter

TASKS = ("classification", "regression")
ENCODERS = ("gru", "mean")
PROB_FLOOR = 1e-12
CHECKPOINT_FORMAT = "linkedrnn-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int = 100
    layers: int = 2
    pooling: str = "attention"
    aggregation: str = "ffn_all"
    activation: str = "tanh"
    task: str = "classification"
    num_classes: int = 2
    attention_dim: int | None = None
    # "mean" swaps the recurrent encoder for the average event vector (link-only baseline)
    encoder: str = "gru"

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("input_dim and hidden_dim must be >= 1")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if self.aggregation == "ffn_last_two" and self.layers < 1:
            raise ConfigError("ffn_last_two needs layers >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {tuple(ACTIVATIONS)}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.task == "classification" and self.num_classes < 2:
            raise ConfigError("classification needs num_classes >= 2")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}")
        if self.attention_dim is not None and self.attention_dim < 1:
            raise ConfigError("attention_dim must be >= 1")

    @property
    def width(self) -> int:
        """Width of the per-node representations that enter the link layer."""
        return self.hidden_dim if self.encoder == "gru" else self.input_dim

    @property
    def outputs(self) -> int:
        return self.num_classes if self.task == "classification" else 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def rnn_baseline(config: ModelConfig) -> ModelConfig:
    """Propagation switched off: the plain recurrent classifier."""
    return replace(config, layers=0, aggregation="last")


@dataclass
class ModelParams:
    gru: GruParams | None
    attention: AttentionParams | None
    ffn: FFNParams | None
    head_W: Parameter
    head_b: Parameter

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for part in (self.gru, self.attention, self.ffn):
            if part is not None:
                out.extend(part.parameters())
        out += [self.head_W, self.head_b]
        return out

    def named(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"parameter {p.name!r} registered twice")
            out[p.name] = p
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named().items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named()
        if set(arrays) != set(named):
            raise ValueError(f"parameter names differ: {sorted(set(arrays) ^ set(named))}")
        for name, value in arrays.items():
            value = T.as_matrix(value)
            if value.shape != named[name].shape:
                raise DimensionError(f"{name}: expected {named[name].shape}, got {value.shape}")
            named[name].value = value.copy()

    def zero_grad(self) -> None:
        T.zero_grads(self.parameters())


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    gru = attention = None
    if config.encoder == "gru":
        gru = GruParams.init(config.input_dim, config.hidden_dim, rng)
        attention = AttentionParams.init(config.hidden_dim, config.attention_dim or config.hidden_dim, rng)
    width = config.width
    ffn_in = ffn_input_width(config.aggregation, width, config.layers)
    ffn = FFNParams.init(ffn_in, width, rng) if ffn_in is not None else None
    bound = 1.0 / np.sqrt(width)
    if config.task == "classification":
        W = Parameter("head.W_c", rng.uniform(-bound, bound, size=(config.num_classes, width)))
        b = Parameter("head.b_c", np.zeros((config.num_classes, 1)))
    else:
        W = Parameter("head.W_r", rng.uniform(-bound, bound, size=(1, width)))
        b = Parameter("head.b_r", np.zeros((1, 1)))
    return ModelParams(gru, attention, ffn, W, b)


@dataclass
class ModelOutput:
    task: str
    z: Node  # n x width final representations
    layers: list[Node]  # V^0 .. V^M
    scores: Node  # logits (classification) or predictions (regression)
    probs: Node | None = None

    @property
    def predictions(self) -> np.ndarray:
        return self.probs.value if self.task == "classification" else self.scores.value[:, 0]


def encode_nodes(config: ModelConfig, params: ModelParams, sequences) -> Node:
    """Pooled per-sequence representations ``V^0`` (one row per sequence)."""
    if config.encoder == "mean":
        return T.const(np.stack([np.asarray(s, dtype=np.float64).mean(axis=0) for s in sequences]))
    states, mask = encode_batch(params.gru, sequences)
    return pool(config.pooling, states, params.attention, mask)


def _head(config: ModelConfig, params: ModelParams, z: Node) -> tuple[Node, Node | None]:
    scores = T.add(T.matmul(z, T.transpose(params.head_W)), T.transpose(params.head_b))
    if config.task == "classification":
        return scores, T.softmax_rows(scores)
    return scores, None


def _finish(config: ModelConfig, params: ModelParams, layers: list[Node]) -> ModelOutput:
    z = aggregate2(PropagationStack(layers, config.activation), Aggregation2Choice(config.aggregation, params.ffn))
    scores, probs = _head(config, params, z)
    return ModelOutput(config.task, z, layers, scores, probs)


def forward(config: ModelConfig, params: ModelParams, sequences, graph: LinkGraph) -> ModelOutput:
    if len(sequences) != graph.n:
        raise DimensionError(f"{len(sequences)} sequences but the graph has {graph.n} nodes")
    V0 = encode_nodes(config, params, sequences)
    stack = propagate(graph, V0, config.layers, config.activation)
    return _finish(config, params, stack.layers)


def _probs(output) -> Node:
    if isinstance(output, ModelOutput):
        if output.probs is None:
            raise ValueError("output carries no class distribution")
        return output.probs
    return T._node(output)


def _scores(output) -> Node:
    if isinstance(output, ModelOutput):
        return output.scores
    node = T._node(output)
    return node if node.shape[1] == 1 else T.transpose(node)


def _indices(labeled) -> np.ndarray:
    idx = np.asarray(labeled, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        raise ValueError("loss needs at least one labeled node")
    return idx


def loss_classification(output, labels, labeled) -> Node:
    """Mean cross-entropy over the labeled rows; probabilities floored at 1e-12."""
    idx = _indices(labeled)
    probs = _probs(output)
    y = np.asarray(labels)[idx].astype(np.intp)
    if (y < 0).any() or (y >= probs.shape[1]).any():
        raise ValueError(f"labels must lie in [0, {probs.shape[1]})")
    picked = T.clamp_min(T.pick(probs, idx, y), PROB_FLOOR)
    return T.scale(T.mean(T.log(picked)), -1.0)


def loss_regression(output, labels, labeled) -> Node:
    """Mean squared error over the labeled nodes."""
    idx = _indices(labeled)
    pred = T.pick(_scores(output), idx, np.zeros_like(idx))
    resid = T.sub(pred, np.asarray(labels, dtype=np.float64)[idx].reshape(-1, 1))
    return T.mean(T.hadamard(resid, resid))


def task_loss(config: ModelConfig, output: ModelOutput, labels, labeled) -> Node:
    if config.task == "classification":
        return loss_classification(output, labels, labeled)
    return loss_regression(output, labels, labeled)


def predict(output, task: str | None = None) -> np.ndarray:
    """Argmax class per row (lowest index wins ties), or the regression value."""
    if isinstance(output, ModelOutput):
        task = output.task
        values = output.predictions
    else:
        values = np.asarray(output.value if isinstance(output, Node) else output, dtype=np.float64)
    if task == "classification":
        return np.argmax(np.atleast_2d(values), axis=1)
    if task == "regression":
        return values.reshape(-1)
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------- inductive use


def stored_neighbor_layers(output: ModelOutput, graph: LinkGraph, node: int) -> list[np.ndarray]:
    """Per-neighbour ``(M+1) x width`` stacks of a node, taken from a transductive run."""
    stacked = np.stack([layer.value for layer in output.layers], axis=1)  # n x (M+1) x width
    return [stacked[j] for j in graph.neighbors[node]]


def represent_inductive(config: ModelConfig, params: ModelParams, new_sequence, neighbor_reprs) -> ModelOutput:
    """Run one unseen node through the pipeline with its neighbours held fixed.

    ``neighbor_reprs`` holds, per neighbour, its stored rows for layers
    ``0 .. M-1`` (an ``L x width`` array with ``L >= M``; a bare vector counts
    as layer 0). The neighbours' rows are treated as constants.
    """
    stored = []
    for r in neighbor_reprs:
        r = np.asarray(r, dtype=np.float64)
        r = r.reshape(1, -1) if r.ndim == 1 else r
        if r.shape[1] != config.width:
            raise DimensionError(f"neighbour rows have width {r.shape[1]}, model width is {config.width}")
        if r.shape[0] < config.layers:
            raise DimensionError(f"neighbour supplies {r.shape[0]} layers, {config.layers} needed")
        stored.append(r)
    k = len(stored)
    star = LinkGraph(k + 1, [(0, j) for j in range(1, k + 1)])
    act = ACTIVATIONS[config.activation]

    layers = [encode_nodes(config, params, [np.asarray(new_sequence, dtype=np.float64)])]
    for level in range(config.layers):
        rows = np.vstack([layers[-1].value] + [r[level : level + 1] for r in stored])
        mixed = star.closed_mean(rows)[:1]
        layers.append(act(T.const(mixed)))
    return _finish(config, params, layers)


def predict_inductive(config: ModelConfig, params: ModelParams, new_sequence, neighbor_reprs):
    out = represent_inductive(config, params, new_sequence, neighbor_reprs)
    return predict(out)[0]


# ---------------------------------------------------------------- checkpoints


def checkpoint_dict(config: ModelConfig, params: ModelParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "params": {
            name: {"shape": list(p.shape), "data": p.value.reshape(-1).tolist()}
            for name, p in params.named().items()
        },
    }


def save_checkpoint(path, config: ModelConfig, params: ModelParams) -> None:
    text = json.dumps(checkpoint_dict(config, params), indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a linkedrnn checkpoint")
    config = ModelConfig.from_dict(doc["config"])
    params = init_params(config)
    params.restore(
        {name: np.array(e["data"], dtype=np.float64).reshape(e["shape"]) for name, e in doc["params"].items()}
    )
    return config, params
