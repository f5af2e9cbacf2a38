"""Command line: generate data, train, evaluate, sweep, and check gradients.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from .data import DatasetError, SplitSpec, SyntheticSpec, generate_synthetic, load_dataset, make_split, save_dataset
from .linklayer import ConfigError
from .model import ModelConfig, forward, load_checkpoint, save_checkpoint
from .tape import DimensionError
from .train import NumericError, TrainConfig, evaluate, grad_check, run_experiment, tiny_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

AGG1 = {"last": "last", "attn": "attention"}
AGG2 = {"last": "last", "ffn2": "ffn_last_two", "ffnall": "ffn_all"}
VARIANTS = {  # LinkedRNN<agg1><agg2>
    f"LinkedRNN{i}{j}": (a1, a2)
    for i, a1 in ((1, "last"), (2, "attn"))
    for j, a2 in ((1, "last"), (2, "ffn2"), (3, "ffnall"))
}
TRAIN_FRACS = (10, 30, 50, 70)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(path: Path, command: str, config: dict, seed, inputs: dict, outputs: dict, dataset: Path | None, **extra) -> None:
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "dataset_hash": git_blob_hash(dataset.read_bytes()) if dataset is not None else None,
        **extra,
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- flag plumbing


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--agg1", choices=sorted(AGG1), default=None, help="pooling of RNN states (default attn)")
    g.add_argument("--agg2", choices=sorted(AGG2), default=None, help="combination of link rounds (default ffnall)")
    g.add_argument("--layers", type=int, default=None, help="link-layer rounds M (default 2)")
    g.add_argument("--hidden", type=int, default=100, help="representation size H")
    g.add_argument("--activation", choices=("tanh", "relu", "identity"), default="tanh")
    g.add_argument("--baseline", choices=("rnn", "link"), default=None)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--epochs", type=int, default=200)
    g.add_argument("--patience", type=int, default=20)
    g.add_argument("--clip", type=float, default=None, help="global gradient-norm clip")


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("split")
    g.add_argument("--train-frac", type=float, default=50, help="percent of non-test nodes used for training")
    g.add_argument("--test-frac", type=float, default=30, help="percent of labeled nodes held out for test")
    g.add_argument("--seed", type=int, default=0)


def model_config_from_args(args, input_dim: int, task: str, num_classes: int | None) -> ModelConfig:
    agg1 = args.agg1 or "attn"
    agg2 = args.agg2 or "ffnall"
    layers = 2 if args.layers is None else args.layers
    encoder = "gru"
    if args.baseline == "rnn":
        if (args.layers is not None and args.layers != 0) or (args.agg2 is not None and args.agg2 != "last"):
            raise UsageError("--baseline rnn fixes --layers 0 --agg2 last; drop the conflicting flags")
        layers, agg2 = 0, "last"
    elif args.baseline == "link":
        if args.agg1 is not None:
            raise UsageError("--baseline link has no recurrent encoder; --agg1 does not apply")
        encoder = "mean"
    return ModelConfig(
        input_dim=input_dim,
        hidden_dim=args.hidden,
        layers=layers,
        pooling=AGG1[agg1],
        aggregation=AGG2[agg2],
        activation=args.activation,
        task=task,
        num_classes=num_classes or 2,
        encoder=encoder,
    )


def train_config_from_args(args, seed: int) -> TrainConfig:
    return TrainConfig(
        optimizer=args.optimizer, lr=args.lr, max_epochs=args.epochs,
        patience=args.patience, seed=seed, clip=args.clip,
    )


def split_spec_from_args(args, seed: int, train_frac: float | None = None) -> SplitSpec:
    frac = args.train_frac if train_frac is None else train_frac
    return SplitSpec(test_frac=args.test_frac / 100.0, train_frac=frac / 100.0, seed=seed)


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    for flag, value in (("--p-in", args.p_in), ("--p-out", args.p_out)):
        if not 0.0 <= value <= 1.0:
            raise UsageError(f"{flag} must lie in [0, 1]")
    if not args.p_out < args.p_in:
        raise UsageError("--p-out must be smaller than --p-in")
    try:
        spec = SyntheticSpec(
            n=args.nodes, classes=args.classes, p_in=args.p_in, p_out=args.p_out,
            min_len=args.min_len, max_len=args.max_len, dim=args.dim,
            angle_gap=args.angle_gap, noise=args.noise, task=args.task, seed=args.seed,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = Path(args.out)
    save_dataset(out, generate_synthetic(spec))
    write_manifest(
        out.with_name(out.name + ".manifest.json"), "generate", asdict(spec), args.seed,
        {}, {"dataset": out}, out,
    )
    print(f"wrote {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    mcfg = model_config_from_args(args, dataset.d, dataset.task, dataset.num_classes)
    tcfg = train_config_from_args(args, args.seed)
    sspec = split_spec_from_args(args, args.seed)
    params, report, _ = run_experiment(dataset, mcfg, tcfg, sspec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.json", mcfg, params)
    _dump(out / "report.json", report.to_dict())
    _dump(out / "metrics.json", report.test_metrics)
    write_manifest(
        out / "manifest.json", "train",
        {"model": mcfg.to_dict(), "train": asdict(tcfg), "split": asdict(sspec)},
        args.seed, {"dataset": args.dataset},
        {k: out / f"{k}.json" for k in ("checkpoint", "report", "metrics")},
        Path(args.dataset), wall_seconds=report.wall_seconds,
    )
    print(json.dumps(report.test_metrics))
    return EXIT_OK


def cmd_eval(args) -> int:
    config, params = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    if config.input_dim != dataset.d or config.task != dataset.task:
        raise DimensionError(
            f"checkpoint expects d={config.input_dim} ({config.task}), dataset has d={dataset.d} ({dataset.task})"
        )
    split = make_split(dataset, split_spec_from_args(args, args.seed))
    out = forward(config, params, dataset.sequences, dataset.graph())
    metrics = evaluate(config, out, dataset.label_array(), split.subset(args.subset))
    text = json.dumps(metrics)
    if args.out:
        _dump(Path(args.out), metrics)
    print(text)
    return EXIT_OK


def sweep_configs(args, dataset) -> list[dict]:
    """One row spec per (configuration, seed), in output order."""
    seeds = [args.seed + k for k in range(args.seeds)]
    rows = []
    if args.axis == "layers":
        for m in range(args.max_layers + 1):
            a = argparse.Namespace(**{**vars(args), "layers": m})
            cfg = model_config_from_args(a, dataset.d, dataset.task, dataset.num_classes)
            rows += [dict(value=m, variant=f"M={m}", model=cfg, train_frac=args.train_frac, seed=s) for s in seeds]
    elif args.axis == "aggregations":
        for name, (a1, a2) in VARIANTS.items():
            a = argparse.Namespace(**{**vars(args), "agg1": a1, "agg2": a2})
            cfg = model_config_from_args(a, dataset.d, dataset.task, dataset.num_classes)
            rows += [dict(value=name, variant=name, model=cfg, train_frac=args.train_frac, seed=s) for s in seeds]
    else:
        cfg = model_config_from_args(args, dataset.d, dataset.task, dataset.num_classes)
        for frac in TRAIN_FRACS:
            rows += [dict(value=frac, variant=f"x={frac}", model=cfg, train_frac=frac, seed=s) for s in seeds]
    return rows


def _sweep_job(job):
    dataset, row, args = job
    tcfg = train_config_from_args(args, row["seed"])
    sspec = split_spec_from_args(args, row["seed"], row["train_frac"])
    _, report, _ = run_experiment(dataset, row["model"], tcfg, sspec)
    return report


def cmd_sweep(args) -> int:
    dataset = load_dataset(args.dataset)
    rows = sweep_configs(args, dataset)
    jobs = [(dataset, row, args) for row in rows]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            reports = list(pool.map(_sweep_job, jobs))
    else:
        reports = [_sweep_job(j) for j in jobs]
    metric_names = list(reports[0].test_metrics)
    out = Path(args.out)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "variant", "pooling", "aggregation", "layers", "train_frac", "seed",
                         *metric_names, "best_epoch", "epochs_run"])
        for row, rep in zip(rows, reports):
            m = row["model"]
            writer.writerow([args.axis, row["value"], row["variant"], m.pooling, m.aggregation, m.layers,
                             row["train_frac"], row["seed"], *(rep.test_metrics[k] for k in metric_names),
                             rep.best_epoch, rep.epochs_run])
    write_manifest(
        out.with_name(out.name + ".manifest.json"), "sweep",
        {"axis": args.axis, "seeds": args.seeds, "max_layers": args.max_layers, "rows": len(rows),
         "train": asdict(train_config_from_args(args, args.seed))},
        args.seed, {"dataset": args.dataset}, {"csv": out}, Path(args.dataset),
    )
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    combos = []
    tasks = ("classification", "regression") if args.all_variants else (args.task,)
    names = list(VARIANTS.items()) if args.all_variants else [(None, (args.agg1 or "attn", args.agg2 or "ffnall"))]
    for task in tasks:
        for name, (a1, a2) in names:
            a = argparse.Namespace(**{**vars(args), "agg1": a1, "agg2": a2, "baseline": None})
            combos.append((task, name or f"agg1={a1},agg2={a2}", a))
    started = time.perf_counter()
    worst = 0.0
    ok = True
    for task, name, a in combos:
        dataset = tiny_dataset(task, num_classes=3, input_dim=2, seed=args.seed)
        cfg = model_config_from_args(a, dataset.d, task, dataset.num_classes)
        rep = grad_check(cfg, dataset, tolerance=args.tolerance, epsilon=args.epsilon, seed=args.seed)
        worst = max(worst, rep.max_error)
        ok = ok and rep.passed
        print(f"{'PASS' if rep.passed else 'FAIL'} {task:<14} {name:<24} max rel err {rep.max_error:.3e}")
        if args.verbose:
            for pname, err in rep.errors.items():
                print(f"    {pname:<12} {err:.3e}")
    print(f"{'PASS' if ok else 'FAIL'}: max rel err {worst:.3e} (tolerance {args.tolerance:g}, "
          f"{time.perf_counter() - started:.1f}s)")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linkedrnn", description="Linked recurrent networks over graphs of sequences.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic linked-sequence dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--nodes", type=int, default=300)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--p-in", type=float, default=0.05)
    g.add_argument("--p-out", type=float, default=0.005)
    g.add_argument("--min-len", type=int, default=5)
    g.add_argument("--max-len", type=int, default=12)
    g.add_argument("--dim", type=int, default=4)
    g.add_argument("--angle-gap", type=float, default=0.25)
    g.add_argument("--noise", type=float, default=0.6)
    g.add_argument("--task", choices=("classification", "regression"), default="classification")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train on a dataset and write checkpoint + report")
    t.add_argument("dataset")
    t.add_argument("--out", required=True, help="output directory")
    _add_model_flags(t)
    _add_train_flags(t)
    _add_split_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split subset")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--subset", choices=("train", "val", "test"), default="test")
    e.add_argument("--out", default=None, help="also write the metrics JSON here")
    _add_split_flags(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train a grid of configurations and write a CSV")
    s.add_argument("dataset")
    s.add_argument("--axis", choices=("layers", "aggregations", "train-frac"), required=True)
    s.add_argument("--max-layers", type=int, default=4)
    s.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds starting at --seed")
    s.add_argument("--out", required=True)
    s.add_argument("--parallel", type=int, default=1)
    _add_model_flags(s)
    _add_train_flags(s)
    _add_split_flags(s)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("gradcheck", help="compare tape gradients with finite differences")
    c.add_argument("--tolerance", type=float, default=1e-5)
    c.add_argument("--epsilon", type=float, default=1e-5)
    c.add_argument("--task", choices=("classification", "regression"), default="classification")
    c.add_argument("--all-variants", action="store_true", help="all six aggregation variants x both heads")
    c.add_argument("--verbose", action="store_true")
    c.add_argument("--seed", type=int, default=0)
    _add_model_flags(c)
    c.set_defaults(func=cmd_gradcheck, hidden=3)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"linkedrnn {args.command}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError, DimensionError) as e:
        print(f"linkedrnn {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"linkedrnn {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"linkedrnn {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
