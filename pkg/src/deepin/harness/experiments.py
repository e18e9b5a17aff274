"""Benchmark replications and Monte Carlo studies of the two tests."""

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

from deepin.datagen import gen_setting
from deepin.errors import DeepInError
from deepin.harness.io import format_real, read_dataset, save_model
from deepin.harness.metrics import (
    prediction_metrics,
    selection_metrics,
    structure_metrics,
    summarize,
)
from deepin.inference import covariate_test, representation_test
from deepin.model import DeepInModel, PenaltyConfig, Task
from deepin.network import RepuNetwork
from deepin.numerics import derive_seed, make_rng
from deepin.trainer import TrainOptions, normalize_model, split_indices, train, tune

__all__ = [
    "REPLICATION_COLUMNS",
    "make_model",
    "method_penalty",
    "fit_model",
    "run_replication",
    "run_benchmark",
    "covariate_study",
    "representation_study",
    "write_rows",
]

REPLICATION_COLUMNS = [
    "rep", "seed", "status", "error", "PE", "MSE", "ACC", "AUC", "Dims", "Variables",
    "Prop0", "TPR", "FPR", "lam1", "lam2", "lam3", "lam4",
]
METRIC_KEYS = ["PE", "MSE", "ACC", "AUC", "Dims", "Variables", "Prop0", "TPR", "FPR"]

# stream labels for derive_seed
_MODEL, _TEST, _SPLIT = 1, 2, 3


def make_model(method, d, hidden, rng, k=None, power=2, init_noise=0.01,
               task=Task.REGRESSION):
    """Fresh untrained model for one of the three methods.

    ``deepin`` starts from ``B = I + noise``; ``vanilla-dnn`` freezes ``B = I``;
    ``index-model`` uses a ``k x d`` matrix with random orthonormal rows.
    """
    if method == "index-model":
        Q, _ = np.linalg.qr(rng.standard_normal((d, k)))
        B = Q.T
        rows = k
    else:
        B = np.eye(d)
        if method == "deepin":
            B = B + init_noise * rng.standard_normal((d, d))
        rows = d
    net = RepuNetwork.initialize((rows,) + tuple(hidden) + (1,), rng, power)
    return DeepInModel(B, net, task, frozen_B=(method == "vanilla-dnn"))


def method_penalty(method, penalty):
    """Penalty actually used by ``method``: zero for the vanilla network and
    no row penalty for index models."""
    if method == "vanilla-dnn":
        return PenaltyConfig()
    if method == "index-model":
        return penalty.replace(lam1=0.0)
    return penalty


def fit_model(config, X, y, task, seed):
    """Tune (if configured) and train one model; returns ``(model, penalty)``."""
    d = X.shape[1]
    opts = config.train_options(seed)
    if config.method == "vanilla-dnn":
        opts = opts.replace(truncate=False)
    model_seed = derive_seed(seed, _MODEL)

    def factory():
        return make_model(config.method, d, config.hidden, make_rng(model_seed), config.k,
                          config.power, config.init_noise, task)

    penalty = method_penalty(config.method, config.penalty_config())
    if config.tuning and config.method != "vanilla-dnn":
        grids = dict(config.tuning)
        if config.method == "index-model":
            grids["lam1"] = [0.0]
        penalty = tune(X, y, grids, factory, opts, base=penalty).config
    model, _ = train(factory(), X, y, penalty, opts)
    return model, penalty


def _load_data(config, seed, cache):
    """``(X, y, X_test, y_test, f0_test, support, task)`` for one replication."""
    if config.data_csv is not None:
        if "csv" not in cache:
            cache["csv"] = read_dataset(config.data_csv, config.response)
        X, y, _ = cache["csv"]
        tr, te = split_indices(len(y), config.test_fraction, derive_seed(seed, _SPLIT))
        binary = bool(np.all((y == 0) | (y == 1)))
        task = Task.BINARY if binary else Task.REGRESSION
        return X[tr], y[tr], X[te], y[te], None, None, task
    spec = config.synthetic_spec(seed)
    ds = gen_setting(spec)
    X_te, y_te, f_te = ds.signal.sample(config.test_size, make_rng(derive_seed(seed, _TEST)))
    task = Task.BINARY if spec.setting == 4 else Task.REGRESSION
    return ds.X, ds.y, X_te, y_te, f_te, ds.truth.support, task


def run_replication(config, rep, cache=None):
    """One replication; never raises for model failures, which are recorded."""
    cache = {} if cache is None else cache
    seed = config.seed + rep
    row = {key: "" for key in REPLICATION_COLUMNS}
    row.update(rep=rep, seed=seed)
    try:
        X, y, X_te, y_te, f_te, support, task = _load_data(config, seed, cache)
        model, penalty = fit_model(config, X, y, task, seed)
        if task is Task.REGRESSION:
            pred = model.predict(X_te)
            mets = prediction_metrics(pred, y_te, f_te, task)
        else:
            mets = prediction_metrics(model.predict_proba(X_te), y_te, None, task)
        mets.pop("diagnostic", None)
        row.update(mets)
        row.update(structure_metrics(model))
        if support is not None and config.method != "index-model":
            selected = np.flatnonzero(np.linalg.norm(model.B, axis=0))
            row["TPR"], row["FPR"] = selection_metrics(selected, support, X.shape[1])
        row.update(penalty.to_dict())
        row["status"] = "ok"
        return row, model, penalty
    except DeepInError as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row, None, None


def _cell(value):
    if value is None or value == "":
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_real(value)
    return str(value)


def write_rows(path, rows, columns):
    """CSV with a fixed column order, 17-digit reals and LF line endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])


def _replicate(args):
    config, rep = args
    return run_replication(config, rep)


def run_benchmark(config, out):
    """Run ``config.replications`` replications and write the artifacts.

    Writes ``replications.csv``, ``summary.json`` and, when
    ``config.save_models`` is set, ``models/rep_<i>.json`` under ``out``.
    Returns the summary dictionary.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    reps = range(config.replications)
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_replicate, [(config, r) for r in reps]))
    else:
        cache = {}
        results = [run_replication(config, r, cache) for r in reps]
    rows = [r[0] for r in results]
    write_rows(out / "replications.csv", rows, REPLICATION_COLUMNS)
    if config.save_models:
        (out / "models").mkdir(exist_ok=True)
        for row, model, penalty in results:
            if model is not None:
                save_model(model, out / "models" / f"rep_{row['rep']}.json", penalty, row["seed"])
    ok = [r for r in rows if r["status"] == "ok"]
    summary = {
        "method": config.method,
        "replications": config.replications,
        "failures": len(rows) - len(ok),
        "metrics": summarize(ok, METRIC_KEYS),
        "config": config.to_dict(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    return summary


def _covariate_rep(cfg, seed):
    rng = make_rng(seed)
    X = rng.standard_normal((cfg.n, 2))
    y = cfg.beta * X[:, 0] + cfg.sigma * rng.standard_normal(cfg.n)
    model = make_model("deepin", 2, cfg.hidden, make_rng(derive_seed(seed, _MODEL)))
    opts = TrainOptions(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=seed)
    fit, _ = train(model, X, y, PenaltyConfig(lam1=cfg.lam1, tau2=0.0), opts)
    fit = normalize_model(fit)
    return fit, covariate_test(fit, X, y, seed=seed)


def covariate_study(cfg, seed=0, out=None):
    """Monte Carlo size and power of the covariate test.

    Variable 1 carries the signal and variable 2 is null.  Returns a summary
    with rejection rates; with ``out`` set, also writes the long-format
    ``tests/covariate_study.csv`` and ``tests/covariate_study.json``.
    """
    rows = []
    failures = 0
    for r in range(cfg.reps):
        try:
            fit, report = _covariate_rep(cfg, seed + r)
        except DeepInError:
            failures += 1
            continue
        dims = int(np.count_nonzero(np.linalg.norm(fit.B, axis=1)))
        for res in report.results:
            p = res["p_value"]
            rows.append({
                "rep": r, "variable": res["variable"] + 1, "dims": dims,
                "statistic": res["statistic"], "df": res["df"], "p_value": p,
                "reject": None if p is None else bool(p < cfg.alpha),
            })
    summary = {"alpha": cfg.alpha, "reps": cfg.reps, "failures": failures}
    for var, name in ((1, "power"), (2, "size")):
        ps = [row["p_value"] for row in rows if row["variable"] == var
              and row["p_value"] is not None]
        summary[name] = float(np.mean(np.array(ps) < cfg.alpha)) if ps else None
        summary[f"valid_{name}_reps"] = len(ps)
    if out is not None:
        _write_study(out, "covariate_study", rows,
                     ["rep", "variable", "dims", "statistic", "df", "p_value", "reject"],
                     summary)
    return summary


def _teacher(X):
    return X[:, 0] + X[:, 1] ** 2 - 1.0


def _representation_rep(cfg, seed, n, index_set):
    rng = make_rng(seed)
    X = rng.standard_normal((n, 3))
    y = _teacher(X) + cfg.sigma * rng.standard_normal(n)
    model_seed = derive_seed(seed, _MODEL)

    def factory():
        return make_model("deepin", 3, cfg.hidden, make_rng(model_seed))

    opts = TrainOptions(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=seed,
                        truncate=cfg.lam1 > 0)
    return representation_test(X, y, index_set, factory, PenaltyConfig(lam1=cfg.lam1), opts,
                               seed=seed, combine=cfg.combine)


def representation_study(cfg, seed=0, out=None, scenarios=("null", "power")):
    """Monte Carlo null distribution and power of the representation test.

    Under the null the kept rows are ``{1, 2}`` (the third is inert); the
    alternative keeps only row 1, dropping an active quadratic direction.
    Returns a summary with the null size, the KS p-value of the null ``z``
    against N(0, 1), the null mean/SD of ``z`` and the power.
    """
    rows = []
    plan = {
        "null": (cfg.reps_null, cfg.n_null, (0, 1), 0),
        "power": (cfg.reps_power, cfg.n_power, (0,), 1_000_000),
    }
    failures = {}
    for name in scenarios:
        reps, n, index_set, offset = plan[name]
        failures[name] = 0
        for r in range(reps):
            try:
                rep = _representation_rep(cfg, seed + offset + r, n, index_set)
            except DeepInError:
                failures[name] += 1
                continue
            rows.append({
                "scenario": name, "rep": r, "n": n, "T": rep.T, "sigma2": rep.sigma2,
                "z": rep.z, "p_value": rep.p_value,
                "reject": None if rep.p_value is None else bool(rep.p_value < cfg.alpha),
            })
    summary = {"alpha": cfg.alpha, "combine": cfg.combine, "failures": failures}
    if "null" in scenarios:
        z = np.array([r["z"] for r in rows if r["scenario"] == "null" and r["z"] is not None])
        summary["null_reps"] = int(z.size)
        if z.size:
            summary["size"] = float(np.mean(2 * stats.norm.sf(np.abs(z)) < cfg.alpha))
            summary["null_z_mean"] = float(z.mean())
            summary["null_z_sd"] = float(z.std(ddof=1)) if z.size > 1 else 0.0
            summary["ks_pvalue"] = float(stats.kstest(z, "norm").pvalue)
    if "power" in scenarios:
        ps = [r["p_value"] for r in rows if r["scenario"] == "power" and r["p_value"] is not None]
        summary["power_reps"] = len(ps)
        summary["power"] = float(np.mean(np.array(ps) < cfg.alpha)) if ps else None
    if out is not None:
        _write_study(out, "representation_study", rows,
                     ["scenario", "rep", "n", "T", "sigma2", "z", "p_value", "reject"], summary)
    return summary


def _write_study(out, name, rows, columns, summary):
    tests = Path(out) / "tests"
    tests.mkdir(parents=True, exist_ok=True)
    write_rows(tests / f"{name}.csv", rows, columns)
    (tests / f"{name}.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
