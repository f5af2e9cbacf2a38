import numpy as np
import pytest

from linkedrnn import tape as T
from linkedrnn.data import LinkedSequenceDataset, Split, SplitSpec, SyntheticSpec, generate_synthetic
from linkedrnn.model import ModelConfig, forward, init_params, predict, task_loss
from linkedrnn.train import (
    Adam,
    SGD,
    TrainConfig,
    clip_global_norm,
    grad_check,
    relative_error,
    run_experiment,
    tiny_dataset,
    train,
)

VARIANTS = [
    (pooling, agg, layers)
    for pooling in ("last", "attention")
    for agg, layers in (("last", 2), ("ffn_last_two", 2), ("ffn_all", 2))
]


def small_problem(seed=0, n=40, task="classification"):
    ds = generate_synthetic(SyntheticSpec(n=n, classes=2, p_in=0.3, p_out=0.02, dim=2, max_len=6, task=task, seed=seed))
    cfg = ModelConfig(input_dim=2, hidden_dim=4, layers=1, task=task, num_classes=2)
    return ds, cfg


def one_node(y=1.7):
    ds = LinkedSequenceDataset([np.array([[0.8], [-0.3]])], [], [y], "regression")
    cfg = ModelConfig(input_dim=1, hidden_dim=1, layers=0, aggregation="last", task="regression", encoder="mean")
    return ds, cfg, Split(np.array([0]), np.array([0]), np.array([0]))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)


def test_zero_learning_rate_leaves_parameters():
    ds, cfg = small_problem()
    params, report, _ = run_experiment(ds, cfg, TrainConfig(lr=0.0, max_epochs=5, optimizer="sgd"), SplitSpec(seed=0))
    fresh = init_params(cfg, 0)
    for name, p in params.named().items():
        assert np.array_equal(p.value, fresh.named()[name].value)
    assert len(set(report.train_loss)) == 1


@pytest.mark.parametrize("optimizer,lr", [("sgd", 0.2), ("adam", 0.05)])
def test_scalar_regression_converges(optimizer, lr):
    ds, cfg, split = one_node()
    params, report = train(cfg, TrainConfig(optimizer=optimizer, lr=lr, max_epochs=2000, patience=2000), ds, split)
    pred = predict(forward(cfg, params, ds.sequences, ds.graph()))[0]
    assert abs(pred - 1.7) <= 1e-6
    assert report.test_metrics["mse"] <= 1e-6
    assert report.epochs_run <= 2000


def test_training_is_deterministic():
    ds, cfg = small_problem(1)
    tcfg = TrainConfig(lr=0.01, max_epochs=15, seed=3)
    a_params, a = run_experiment(ds, cfg, tcfg, SplitSpec(seed=2))[:2]
    b_params, b = run_experiment(ds, cfg, tcfg, SplitSpec(seed=2))[:2]
    assert a.to_dict() == b.to_dict()
    for name, p in a_params.named().items():
        assert p.value.tobytes() == b_params.named()[name].value.tobytes()


@pytest.mark.parametrize("seed", range(10))
def test_first_small_sgd_step_lowers_the_loss(seed):
    ds, cfg = small_problem(seed)
    _, report, _ = run_experiment(ds, cfg, TrainConfig(optimizer="sgd", lr=1e-4, max_epochs=2, patience=5, seed=seed),
                                    SplitSpec(seed=seed))
    assert report.train_loss[1] < report.train_loss[0]


def test_report_restores_the_best_epoch():
    ds, cfg = small_problem(4)
    params, report, split = run_experiment(ds, cfg, TrainConfig(lr=0.05, max_epochs=40, patience=5), SplitSpec(seed=4))
    best = report.best_epoch
    assert 0 <= best < report.epochs_run <= 40
    assert report.val_metric[best] == max(report.val_metric)
    ties = [e for e, v in enumerate(report.val_metric) if v == report.val_metric[best]]
    assert report.val_loss[best] == min(report.val_loss[e] for e in ties)
    assert report.epochs_run == 40 or report.epochs_run - 1 - best >= 5
    out = forward(cfg, params, ds.sequences, ds.graph())
    val_loss = task_loss(cfg, out, ds.label_array(), split.val).item()
    assert val_loss == report.val_loss[best]


def test_report_serialization_omits_timing():
    ds, cfg = small_problem()
    _, report, _ = run_experiment(ds, cfg, TrainConfig(max_epochs=2), SplitSpec())
    assert "wall_seconds" not in report.to_dict()
    assert report.to_dict(timing=True)["wall_seconds"] > 0


def test_optimizers_step_as_written():
    p = T.Parameter("p", [[1.0, -2.0]])
    p.grad = np.array([[0.5, -0.5]])
    SGD([p], 0.1).step()
    assert np.array_equal(p.value, [[0.95, -1.95]])
    q = T.Parameter("q", [[1.0]])
    q.grad = np.array([[3.0]])
    Adam([q], 0.01).step()
    assert abs(q.value[0, 0] - (1.0 - 0.01 * 3.0 / (3.0 + 1e-8))) <= 1e-15


def test_clip_global_norm():
    a, b = T.Parameter("a", [[0.0]]), T.Parameter("b", [[0.0]])
    a.grad, b.grad = np.array([[3.0]]), np.array([[4.0]])
    assert clip_global_norm([a, b], 1.0) == 5.0
    assert abs(a.grad[0, 0] - 0.6) <= 1e-15 and abs(b.grad[0, 0] - 0.8) <= 1e-15


@pytest.mark.parametrize("pooling,agg,layers", VARIANTS)
@pytest.mark.parametrize("task", ["classification", "regression"])
def test_grad_check_passes(pooling, agg, layers, task):
    cfg = ModelConfig(input_dim=2, hidden_dim=3, layers=layers, pooling=pooling, aggregation=agg,
                      task=task, num_classes=3)
    report = grad_check(cfg, tiny_dataset(task))
    assert report.passed, report.errors
    assert report.max_error <= 1e-5


def test_unused_parameters_have_zero_gradients():
    cfg = ModelConfig(input_dim=2, hidden_dim=3, layers=1, pooling="last", aggregation="last", num_classes=3)
    report = grad_check(cfg, tiny_dataset())
    for name in ("attn.W_a", "attn.v_a"):
        assert report.max_analytic[name] <= 1e-10
        assert report.max_numeric[name] <= 1e-10


def test_grad_check_sampling_and_zero_tolerance():
    cfg = ModelConfig(input_dim=2, hidden_dim=3, layers=2, num_classes=3)
    sampled = grad_check(cfg, tiny_dataset(), sample=4)
    full = grad_check(cfg, tiny_dataset())
    assert sampled.entries_checked < full.entries_checked
    assert sampled.passed
    assert not grad_check(cfg, tiny_dataset(), tolerance=0.0).passed


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(0.1)
    assert relative_error(np.array([2.0]), np.array([2.0]))[0] == 0.0
