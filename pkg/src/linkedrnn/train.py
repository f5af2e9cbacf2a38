"""Full-batch training with validation-based model selection, and gradient checks."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tape as T
from .data import LinkedSequenceDataset, Split, SplitSpec, make_split, metrics_report
from .model import ModelConfig, ModelParams, ModelOutput, forward, init_params, predict, task_loss


class NumericError(RuntimeError):
    """Training produced a non-finite loss or a gradient check failed."""


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    clip: float | None = None

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")


class SGD:
    def __init__(self, params: list[T.Parameter], lr: float):
        self.params, self.lr = params, lr

    def step(self) -> None:
        for p in self.params:
            p.value = p.value - self.lr * p.grad


class Adam:
    def __init__(self, params: list[T.Parameter], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig, params: list[T.Parameter]):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.lr)
    return Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)


def clip_global_norm(params: list[T.Parameter], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if norm > max_norm:
        for p in params:
            p.grad = p.grad * (max_norm / norm)
    return norm


@dataclass
class TrainReport:
    metric: str
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0
    test_metrics: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        """Serializable form; timing is left out unless asked so reruns compare byte-equal."""
        d = asdict(self)
        if not timing:
            d.pop("wall_seconds")
        return d


def validation_metric(task: str) -> tuple[str, bool]:
    """Name of the model-selection metric and whether larger is better."""
    return ("micro_f1", True) if task == "classification" else ("mse", False)


def evaluate(config: ModelConfig, output: ModelOutput, labels: np.ndarray, idx) -> dict:
    idx = np.asarray(idx, dtype=np.intp)
    pred = predict(output)[idx]
    return metrics_report(config.task, labels[idx], pred, config.num_classes)


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    dataset: LinkedSequenceDataset,
    split: Split,
) -> tuple[ModelParams, TrainReport]:
    """Fit on ``split.train``; keep the parameters of the best validation epoch.

    Epoch ``e`` evaluates the parameters left by ``e`` updates, so loss and
    validation metric come from the same forward pass. Ties on the metric go
    to the lower validation loss.
    """
    started = time.perf_counter()
    params = init_params(model_config, train_config.seed)
    plist = params.parameters()
    opt = make_optimizer(train_config, plist)
    graph = dataset.graph()
    labels = dataset.label_array()
    name, larger = validation_metric(model_config.task)
    report = TrainReport(metric=name)
    best_key = None
    best = params.snapshot()

    for epoch in range(train_config.max_epochs):
        params.zero_grad()
        out = forward(model_config, params, dataset.sequences, graph)
        loss = task_loss(model_config, out, labels, split.train)
        if not np.isfinite(loss.item()):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        val_loss = task_loss(model_config, out, labels, split.val).item()
        score = evaluate(model_config, out, labels, split.val)[name]
        report.train_loss.append(loss.item())
        report.val_loss.append(val_loss)
        report.val_metric.append(score)
        report.epochs_run = epoch + 1
        key = (score if larger else -score, -val_loss)
        if best_key is None or key > best_key:
            best_key, best, report.best_epoch = key, params.snapshot(), epoch
        elif epoch - report.best_epoch >= train_config.patience:
            break
        T.backward(loss)
        if train_config.clip is not None:
            clip_global_norm(plist, train_config.clip)
        opt.step()

    params.restore(best)
    params.zero_grad()
    out = forward(model_config, params, dataset.sequences, graph)
    report.test_metrics = evaluate(model_config, out, labels, split.test)
    report.wall_seconds = time.perf_counter() - started
    return params, report


def run_experiment(
    dataset: LinkedSequenceDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    split_spec: SplitSpec,
) -> tuple[ModelParams, TrainReport, Split]:
    split = make_split(dataset, split_spec)
    params, report = train(model_config, train_config, dataset, split)
    return params, report, split


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    max_analytic: dict[str, float]
    max_numeric: dict[str, float]
    tolerance: float
    entries_checked: int

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(
    model_config: ModelConfig,
    dataset: LinkedSequenceDataset,
    tolerance: float = 1e-5,
    epsilon: float = 1e-5,
    seed: int = 0,
    sample: int | None = None,
    init_scale: float | None = 1.0,
) -> GradCheckReport:
    """Compare tape gradients with central differences for every parameter.

    Every entry, biases included, is redrawn uniform in
    ``[-init_scale, init_scale]`` so the check runs at a generic point rather
    than at the zero-bias initialisation (``None`` keeps the model's own init).
    With ``sample`` set, at most that many seeded entries per parameter are
    probed instead of all of them.
    """
    params = init_params(model_config, seed)
    rng = np.random.default_rng(seed)
    if init_scale is not None:
        for p in params.parameters():
            p.value = rng.uniform(-init_scale, init_scale, size=p.shape)
    graph = dataset.graph()
    labels = dataset.label_array()
    labeled = dataset.labeled

    def loss_fn():
        out = forward(model_config, params, dataset.sequences, graph)
        return task_loss(model_config, out, labels, labeled)

    params.zero_grad()
    T.backward(loss_fn())
    errors, max_a, max_n = {}, {}, {}
    checked = 0
    for name, p in params.named().items():
        entries = list(np.ndindex(*p.shape))
        if sample is not None and len(entries) > sample:
            pick = rng.choice(len(entries), size=sample, replace=False)
            entries = [entries[k] for k in sorted(pick)]
        numeric = T.finite_diff_grad(loss_fn, p, epsilon, entries)
        rows, cols = zip(*entries)
        a, f = p.grad[rows, cols], numeric[rows, cols]
        errors[name] = float(relative_error(a, f).max())
        max_a[name] = float(np.abs(a).max())
        max_n[name] = float(np.abs(f).max())
        checked += len(entries)
    return GradCheckReport(errors, max_a, max_n, tolerance, checked)


def tiny_dataset(task: str = "classification", num_classes: int = 3, input_dim: int = 2, seed: int = 0) -> LinkedSequenceDataset:
    """Three sequences of 2 to 4 steps on a path graph 0-1-2, all labeled."""
    rng = np.random.default_rng(seed)
    sequences = [rng.uniform(-2.0, 2.0, size=(length, input_dim)) for length in (2, 4, 3)]
    if task == "classification":
        labels = [int(y) for y in rng.integers(0, num_classes, size=3)]
        return LinkedSequenceDataset(sequences, [(0, 1), (1, 2)], labels, task, num_classes)
    labels = [float(y) for y in rng.normal(size=3)]
    return LinkedSequenceDataset(sequences, [(0, 1), (1, 2)], labels, task)
