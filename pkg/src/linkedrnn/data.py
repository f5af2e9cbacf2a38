"""Linked-sequence datasets: file format, splits, a synthetic generator, metrics.

A dataset file is one UTF-8 JSON document::

    {"d": 2, "task": "classification",
     "sequences": [[[0.1, 0.2], [0.3, 0.1]], [[1.0, 0.0]]],
     "edges": [[0, 1]],
     "labels": [0, 1]}

``labels`` may hold ``null`` for unlabeled nodes. Edges are undirected; both
orientations of a pair collapse to one edge on load. Self-loops are rejected
here because the model adds them itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linklayer import LinkGraph

TASKS = ("classification", "regression")


class DatasetError(ValueError):
    """The dataset file cannot be parsed or breaks an invariant."""


@dataclass
class LinkedSequenceDataset:
    sequences: list[np.ndarray]
    edges: list[tuple[int, int]]
    labels: list | None = None
    task: str = "classification"
    num_classes: int | None = None

    def __post_init__(self):
        self.sequences = [np.asarray(s, dtype=np.float64) for s in self.sequences]
        self.edges = canonical_edges(self.edges)
        if self.task == "classification" and self.num_classes is None and self.labels is not None:
            known = [y for y in self.labels if y is not None]
            self.num_classes = max(known) + 1 if known else None

    @property
    def n(self) -> int:
        return len(self.sequences)

    @property
    def d(self) -> int:
        return self.sequences[0].shape[1]

    @property
    def labeled(self) -> np.ndarray:
        if self.labels is None:
            return np.zeros(0, dtype=np.intp)
        return np.array([i for i, y in enumerate(self.labels) if y is not None], dtype=np.intp)

    def label_array(self) -> np.ndarray:
        """Labels as an array; unlabeled entries are -1 (classes) or NaN (values)."""
        labels = self.labels or [None] * self.n
        if self.task == "classification":
            return np.array([-1 if y is None else int(y) for y in labels], dtype=np.intp)
        return np.array([np.nan if y is None else float(y) for y in labels], dtype=np.float64)

    def graph(self) -> LinkGraph:
        return LinkGraph(self.n, self.edges)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "task": self.task,
            "sequences": [s.tolist() for s in self.sequences],
            "edges": [list(e) for e in self.edges],
            "labels": self.labels,
        }

    def to_json(self) -> str:
        # one sequence / edge per line keeps load diagnostics line-accurate
        head = f'{{"d": {self.d}, "task": {json.dumps(self.task)},\n'
        seqs = ",\n".join(" " + json.dumps(s.tolist()) for s in self.sequences)
        edges = ",\n".join(" " + json.dumps(list(e)) for e in self.edges)
        labels = json.dumps(self.labels)
        return f'{head}"sequences": [\n{seqs}\n],\n"edges": [\n{edges}\n],\n"labels": {labels}}}\n'


def canonical_edges(edges) -> list[tuple[int, int]]:
    return sorted({(min(int(i), int(j)), max(int(i), int(j))) for i, j in edges})


def save_dataset(path, dataset: LinkedSequenceDataset) -> None:
    Path(path).write_text(dataset.to_json(), encoding="utf-8")


def _positions(text: str) -> dict[str, list[int]]:
    """Character offsets of each element of the top-level arrays."""
    dec = json.JSONDecoder()
    pos: dict[str, list[int]] = {}

    def skip(i):
        while i < len(text) and text[i] in " \t\r\n":
            i += 1
        return i

    i = skip(0)
    if text[i : i + 1] != "{":
        return pos
    i = skip(i + 1)
    while i < len(text) and text[i] != "}":
        key, i = dec.raw_decode(text, i)
        i = skip(skip(i) + 1)  # past ':'
        if text[i] == "[":
            offsets = []
            i = skip(i + 1)
            while text[i] != "]":
                offsets.append(i)
                _, i = dec.raw_decode(text, i)
                i = skip(i)
                if text[i] == ",":
                    i = skip(i + 1)
            pos[key] = offsets
            i += 1
        else:
            _, i = dec.raw_decode(text, i)
        i = skip(i)
        if text[i] == ",":
            i = skip(i + 1)
    return pos


def parse_dataset(text: str, source: str = "<string>") -> LinkedSequenceDataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise DatasetError(f"{source}: top level must be a JSON object")
    positions = _positions(text)

    def fail(key, k, msg):
        where = ""
        if key in positions and k < len(positions[key]):
            where = f":{text.count(chr(10), 0, positions[key][k]) + 1}"
        raise DatasetError(f"{source}{where}: {key}[{k}]: {msg}")

    for key in ("d", "task", "sequences", "edges"):
        if key not in doc:
            raise DatasetError(f"{source}: missing key {key!r}")
    d, task = doc["d"], doc["task"]
    if not isinstance(d, int) or d < 1:
        raise DatasetError(f"{source}: 'd' must be a positive integer")
    if task not in TASKS:
        raise DatasetError(f"{source}: unknown task kind {task!r}; expected one of {TASKS}")

    sequences = []
    if not isinstance(doc["sequences"], list) or not doc["sequences"]:
        raise DatasetError(f"{source}: 'sequences' must be a non-empty list")
    for k, seq in enumerate(doc["sequences"]):
        if not isinstance(seq, list) or not seq:
            fail("sequences", k, "sequence must be a non-empty list of events")
        try:
            arr = np.array(seq, dtype=np.float64)
        except (TypeError, ValueError):
            fail("sequences", k, "events must be equal-length lists of numbers")
        if arr.ndim != 2 or arr.shape[1] != d:
            fail("sequences", k, f"every event must have {d} entries")
        if not np.isfinite(arr).all():
            fail("sequences", k, "non-finite value")
        sequences.append(arr)
    n = len(sequences)

    for k, e in enumerate(doc["edges"]):
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(v, int) for v in e)):
            fail("edges", k, "edge must be a pair of integers")
        i, j = e
        if not (0 <= i < n and 0 <= j < n):
            fail("edges", k, f"endpoint out of range [0, {n})")
        if i == j:
            fail("edges", k, "self-loop")

    labels = doc.get("labels")
    if labels is not None:
        if not isinstance(labels, list) or len(labels) != n:
            raise DatasetError(f"{source}: 'labels' must list one entry per sequence ({n})")
        for k, y in enumerate(labels):
            if y is None:
                continue
            if task == "classification" and (isinstance(y, bool) or not isinstance(y, int) or y < 0):
                fail("labels", k, "class label must be a non-negative integer")
            if task == "regression" and (isinstance(y, bool) or not isinstance(y, (int, float)) or not math.isfinite(y)):
                fail("labels", k, "regression label must be a finite number")
    return LinkedSequenceDataset(sequences, doc["edges"], labels, task)


def load_dataset(path) -> LinkedSequenceDataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"{path}: {e.strerror}") from None
    return parse_dataset(text, str(path))


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    test_frac: float = 0.30
    train_frac: float = 0.50  # share of the non-test labeled nodes
    seed: int = 0

    def __post_init__(self):
        for name in ("test_frac", "train_frac"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def subset(self, name: str) -> np.ndarray:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def make_split(dataset: LinkedSequenceDataset, spec: SplitSpec = SplitSpec()) -> Split:
    """Hold out ``test_frac`` of labeled nodes, then split the rest train/val."""
    labeled = dataset.labeled
    if labeled.size == 0:
        raise ValueError("dataset has no labels to split")
    order = labeled[np.random.default_rng(spec.seed).permutation(labeled.size)]
    n_test = int(round(spec.test_frac * labeled.size))
    rest = labeled.size - n_test
    n_train = int(round(spec.train_frac * rest))
    if n_test < 1 or n_train < 1 or rest - n_train < 1:
        raise ValueError(f"{labeled.size} labeled nodes are too few for train/val/test")
    test = np.sort(order[:n_test])
    train = np.sort(order[n_test : n_test + n_train])
    val = np.sort(order[n_test + n_train :])
    return Split(train, val, test)


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Block-model graph whose blocks also drive rotating linear dynamics.

    Class ``c`` rotates every coordinate pair by ``base_angle + c * angle_gap``
    per step (damped by ``damping``); each step adds Gaussian noise of scale
    ``noise``. Labels are block memberships, or for ``task="regression"`` the
    block index plus Gaussian jitter of scale ``label_noise``.
    """

    n: int = 300
    classes: int = 4
    p_in: float = 0.05
    p_out: float = 0.005
    min_len: int = 5
    max_len: int = 12
    dim: int = 4
    base_angle: float = 0.3
    angle_gap: float = 0.25
    damping: float = 0.95
    noise: float = 0.6
    task: str = "classification"
    label_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out < p_in <= 1")
        if self.classes < 2 or self.n < self.classes:
            raise ValueError("need classes >= 2 and n >= classes")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if self.dim < 1 or self.noise < 0 or self.label_noise < 0:
            raise ValueError("dim must be >= 1 and noise levels >= 0")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")


def class_dynamics(spec: SyntheticSpec, c: int) -> np.ndarray:
    angle = spec.base_angle + c * spec.angle_gap
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    R = np.eye(spec.dim)
    for k in range(0, spec.dim - 1, 2):
        R[k : k + 2, k : k + 2] = rot
    return spec.damping * R


def block_edges(blocks: np.ndarray, p_in: float, p_out: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    n = len(blocks)
    iu, ju = np.triu_indices(n, 1)
    prob = np.where(blocks[iu] == blocks[ju], p_in, p_out)
    hit = rng.random(iu.size) < prob
    return list(zip(iu[hit].tolist(), ju[hit].tolist()))


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> LinkedSequenceDataset:
    rng = np.random.default_rng(spec.seed)
    blocks = rng.permutation(np.arange(spec.n) % spec.classes)
    edges = block_edges(blocks, spec.p_in, spec.p_out, rng)
    dynamics = [class_dynamics(spec, c) for c in range(spec.classes)]
    sequences = []
    for c in blocks:
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        x = rng.normal(size=spec.dim)
        seq = [x]
        for _ in range(length - 1):
            x = dynamics[c] @ x + spec.noise * rng.normal(size=spec.dim)
            seq.append(x)
        sequences.append(np.array(seq))
    if spec.task == "classification":
        labels = [int(c) for c in blocks]
        return LinkedSequenceDataset(sequences, edges, labels, "classification", spec.classes)
    labels = [float(c + spec.label_noise * rng.normal()) for c in blocks]
    return LinkedSequenceDataset(sequences, edges, labels, "regression")


# ---------------------------------------------------------------- metrics


def micro_macro_f1(y_true, y_pred, num_classes: int) -> tuple[float, float]:
    """Micro-F1 from pooled counts and the unweighted mean of per-class F1.

    A class with no true and no predicted members scores F1 = 0.
    """
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
    conf = np.bincount(y_true * num_classes + y_pred, minlength=num_classes**2).reshape(num_classes, num_classes)
    tp = np.diag(conf)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    per_class = [_f1(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)]
    micro = _f1(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    return micro, sum(per_class) / num_classes


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def mse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("mse of an empty set")
    return float(np.mean((y_true - y_pred) ** 2))


def metrics_report(task: str, y_true, y_pred, num_classes: int | None = None) -> dict:
    """The JSON-ready metrics block: micro/macro F1 or MSE."""
    if task == "classification":
        micro, macro = micro_macro_f1(y_true, y_pred, num_classes)
        return {"micro_f1": micro, "macro_f1": macro}
    return {"mse": mse(y_true, y_pred)}
