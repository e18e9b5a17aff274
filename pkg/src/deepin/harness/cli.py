"""``deepin`` command line.

Exit status is 0 on success, 1 when an input violates a contract (bad flags,
malformed files, invalid configuration) and 2 on numerical failure.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from deepin.datagen import gen_setting
from deepin.errors import ContractViolation, DeepInError, NumericalFailure
from deepin.harness.config import load_config
from deepin.harness.experiments import (
    covariate_study,
    fit_model,
    make_model,
    method_penalty,
    representation_study,
    run_benchmark,
)
from deepin.harness.io import load_model, read_dataset, save_model, write_dataset
from deepin.harness.metrics import prediction_metrics, structure_metrics
from deepin.inference import covariate_test, representation_test
from deepin.model import Task
from deepin.numerics import derive_seed, make_rng
from deepin.trainer import normalize_model, train, tune

EXIT_OK, EXIT_CONTRACT, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONTRACT, f"{self.prog}: error: {message}\n")


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _index_set(text):
    try:
        idx = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad index set {text!r}") from None
    if not idx or min(idx) < 1:
        raise argparse.ArgumentTypeError("index set entries are 1-based positive integers")
    return idx


def build_parser():
    parser = _Parser(prog="deepin", description="Sparse-representation RePU networks")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text, *flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=_seed, help="override the configured seed")
        p.add_argument("--out", required=True, help="output directory")
        if "data" in flags:
            p.add_argument("--data", help="dataset CSV")
            p.add_argument("--response", default="y", help="response column (default y)")
        if "model" in flags:
            p.add_argument("--model", help="model JSON file")
        if "index" in flags:
            p.add_argument("--index-set", type=_index_set,
                           help="comma-separated 1-based rows kept under the null")
        return p

    add("simulate", "draw a synthetic dataset and its truth")
    add("train", "fit one model", "data")
    add("tune", "sequential penalty search", "data")
    add("evaluate", "metrics of a saved model on a dataset", "data", "model")
    add("test-covariates", "per-variable test (or the Monte Carlo study)", "data", "model")
    add("test-representations", "representation test (or the Monte Carlo study)", "data",
        "index")
    add("benchmark", "replicated benchmark", "data")
    return parser


def _config(args, **extra):
    overrides = dict(extra)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _need(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise ContractViolation(f"--{name.replace('_', '-')} is required for {args.command}")


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _task_of(y):
    return Task.BINARY if np.all((y == 0) | (y == 1)) else Task.REGRESSION


def cmd_simulate(args, out):
    config = _config(args)
    spec = config.synthetic_spec()
    if spec is None:
        raise ContractViolation("simulate needs a synthetic data spec in the config")
    ds = gen_setting(spec)
    write_dataset(out / "data.csv", ds.X, ds.y)
    _write_json(out / "truth.json", {
        "spec": spec.to_dict(),
        "support": [int(j) + 1 for j in ds.truth.support],
        "B0": {"shape": list(ds.truth.B0.shape), "values": ds.truth.B0.reshape(-1).tolist()},
        "f0": ds.truth.f0.tolist(),
    })


def cmd_train(args, out):
    _need(args, "data")
    config = _config(args)
    X, y, _ = read_dataset(args.data, args.response)
    config = dataclasses.replace(config, tuning=None)
    model, penalty = fit_model(config, X, y, _task_of(y), config.seed)
    save_model(model, out / "model.json", penalty, config.seed)
    _write_json(out / "structure.json", structure_metrics(model))


def cmd_tune(args, out):
    _need(args, "data")
    config = _config(args)
    if not config.tuning:
        raise ContractViolation("tune needs 'tuning' grids in the config")
    X, y, _ = read_dataset(args.data, args.response)
    task = _task_of(y)
    d = X.shape[1]
    seed = config.seed
    opts = config.train_options(seed)
    model_seed = derive_seed(seed, 1)

    def factory():
        return make_model(config.method, d, config.hidden, make_rng(model_seed), config.k,
                          config.power, config.init_noise, task)

    base = method_penalty(config.method, config.penalty_config())
    result = tune(X, y, config.tuning, factory, opts, base=base)
    _write_json(out / "tuning.json", {
        "penalty": result.config.to_dict(),
        "cells": [{"name": n, "value": v, "score": s} for n, v, s in result.cells],
    })
    model, _ = train(factory(), X, y, result.config, opts)
    save_model(model, out / "model.json", result.config, seed)


def cmd_evaluate(args, out):
    _need(args, "data", "model")
    model, _, _ = load_model(args.model)
    X, y, _ = read_dataset(args.data, args.response)
    if model.task is Task.REGRESSION:
        mets = prediction_metrics(model.predict(X), y, None, model.task)
    else:
        mets = prediction_metrics(model.predict_proba(X), y, None, model.task)
    mets.update(structure_metrics(model))
    _write_json(out / "metrics.json", mets)


def cmd_test_covariates(args, out):
    if args.data is None and args.model is None:
        config = _config(args)
        summary = covariate_study(config.covariate(), config.seed, out)
        print(json.dumps(summary))
        return
    _need(args, "data", "model")
    config = _config(args)
    model, _, _ = load_model(args.model)
    X, y, names = read_dataset(args.data, args.response)
    model = normalize_model(model)
    report = covariate_test(model, X, y, seed=config.seed)
    doc = report.to_dict()
    for row in doc["results"]:
        row["name"] = names[row["variable"]]
        row["variable"] += 1
    tests = out / "tests"
    tests.mkdir(exist_ok=True)
    _write_json(tests / "covariates.json", doc)


def cmd_test_representations(args, out):
    if args.data is None:
        config = _config(args)
        summary = representation_study(config.representation(), config.seed, out)
        print(json.dumps(summary))
        return
    _need(args, "data", "index_set")
    config = _config(args)
    X, y, _ = read_dataset(args.data, args.response)
    task = _task_of(y)
    d = X.shape[1]
    if config.method != "deepin":
        raise ContractViolation("the representation test uses the deepin method")
    rows = d
    if max(args.index_set) > rows:
        raise ContractViolation(f"index set exceeds the {rows} rows of B")
    model_seed = derive_seed(config.seed, 1)

    def factory():
        return make_model("deepin", d, config.hidden, make_rng(model_seed), None,
                          config.power, config.init_noise, task)

    report = representation_test(
        X, y, [i - 1 for i in args.index_set], factory, config.penalty_config(),
        config.train_options(config.seed), seed=config.seed,
    )
    doc = report.to_dict()
    doc["index_set"] = [i + 1 for i in doc["index_set"]]
    tests = out / "tests"
    tests.mkdir(exist_ok=True)
    _write_json(tests / "representations.json", doc)


def cmd_benchmark(args, out):
    extra = {"data_csv": args.data, "response": args.response} if args.data else {}
    config = _config(args, **extra)
    summary = run_benchmark(config, out)
    print(json.dumps({"failures": summary["failures"], "metrics": summary["metrics"]}))


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "test-covariates": cmd_test_covariates,
    "test-representations": cmd_test_representations,
    "benchmark": cmd_benchmark,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except NumericalFailure as exc:
        print(f"deepin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DeepInError, ValueError, OSError) as exc:
        print(f"deepin: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
