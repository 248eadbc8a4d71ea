"""Benchmark protocol: three tasks, several seeded instances, two evaluation sets.

Task ``kse`` regresses the score with kernel targets; ``klre`` and ``carl``
classify parameter pairs drawn from the kernel and the iid pair
distributions.  Every trained network is evaluated on every task it can
perform, next to the exact model ("truth") plugged in as a predictor.

Random streams: ``make_rng(seed, task_index, purpose, instance)`` with
purpose 0 = training data, 1/2 = evaluation sets, 3 = initialisation,
4 = batch order.
"""

import csv
import logging
import time
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .architectures import TrainConfig, build_model, predict_log_ratio, predict_score, train
from .datagen import generate_kse, generate_ratio, saturation_fraction
from .errors import ConfigurationError, TaskMismatchError, TrainingDivergenceError
from .losses import LossSpec, loss_value
from .oracles import make_oracle
from .samplers import KernelSpec, PairDistribution, PriorSpec, make_rng

log = logging.getLogger(__name__)

TASK_IDS = ("kse", "klre", "carl")
TASK_INDEX = {t: i + 1 for i, t in enumerate(TASK_IDS)}
ARCHS = ("isn", "direct")
NA = "---"


@dataclass(frozen=True)
class TaskSpec:
    id: str
    oracle: str = "dirichlet3"
    prior: PriorSpec = PriorSpec((0.5,) * 3, (5.0,) * 3)
    kernel: KernelSpec = None
    pair: str = None
    loss: str = None
    n_train: int = 100_000
    n_eval: int = 100_000
    n_seeds: int = 5
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.id not in TASK_IDS:
            raise ConfigurationError(f"unknown task {self.id!r}; expected one of {TASK_IDS}")
        if self.n_train < 1 or self.n_eval < 1 or self.n_seeds < 1:
            raise ConfigurationError("n_train, n_eval and n_seeds must be positive")
        if self.id == "kse" and self.kernel is None:
            raise ConfigurationError("task kse needs a kernel")
        if self.id == "klre" and self.kernel is None:
            raise ConfigurationError("task klre needs a pair kernel")

    @property
    def kind(self):
        return "score" if self.id == "kse" else "ratio"

    @property
    def loss_spec(self):
        return LossSpec(self.loss or ("mse" if self.kind == "score" else "logistic"))

    def pair_distribution(self):
        if self.id == "kse":
            raise TaskMismatchError("task kse has no parameter pairs")
        kind = self.pair or ("kernel" if self.id == "klre" else "iid")
        return PairDistribution(kind, self.prior, kernel=self.kernel if kind == "kernel" else None)

    def architecture_tag(self, arch):
        if arch == "isn":
            return "isn"
        if arch == "direct":
            return "direct_score" if self.kind == "score" else "direct_ratio"
        raise ConfigurationError(f"unknown architecture {arch!r}; expected one of {ARCHS}")


PROFILES = {
    "full": {"n_train": 100_000, "n_eval": 100_000, "n_seeds": 5, "epochs": 20},
    "desk": {"n_train": 20_000, "n_eval": 100_000, "n_seeds": 5, "epochs": 10},
}


def study_tasks(profile="full", **overrides):
    """The three benchmark tasks on the 3-component Dirichlet model."""
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    p = dict(PROFILES[profile], **overrides)
    tc = TrainConfig(epochs=p.pop("epochs"))
    common = dict(p, train_config=tc)
    return {
        "kse": TaskSpec("kse", kernel=KernelSpec("delta", 0.25), **common),
        "klre": TaskSpec("klre", kernel=KernelSpec("rectangular", 0.4), **common),
        "carl": TaskSpec("carl", **common),
    }


# ---------------------------------------------------------------- data


def task_data(task, seed, purpose, instance=0, n=None, counters=None):
    """Training (purpose 0) or evaluation (purpose 1, 2) data for ``task``."""
    oracle = make_oracle(task.oracle)
    rng = make_rng(seed, TASK_INDEX[task.id], purpose, instance)
    n = n or (task.n_train if purpose == 0 else task.n_eval)
    if task.kind == "score":
        return generate_kse(oracle, task.prior, task.kernel, n, rng, counters)
    return generate_ratio(oracle, task.pair_distribution(), n, rng, task=task.id, counters=counters)


def evaluation_sets(task, seed):
    return task_data(task, seed, 1), task_data(task, seed, 2)


# ---------------------------------------------------------------- truth as a model


class OracleModel:
    """Wraps an oracle so it can be evaluated like a trained network."""

    tag = "truth"
    heads = ("score", "ratio")

    def __init__(self, oracle):
        self.oracle = oracle
        self.D, self.d = oracle.D, oracle.d

    def score(self, x, theta):
        return self.oracle.score(x, theta)

    def log_ratio(self, x, theta0, theta1):
        return self.oracle.log_ratio(x, theta0, theta1)


def can_perform(model, task):
    return ("score" if task.kind == "score" else "ratio") in model.heads


def _predict(model, task, ds, chunk=20_000):
    if not can_perform(model, task):
        raise TaskMismatchError(f"{model.tag} cannot perform task {task.id}")
    out = []
    for s in range(0, len(ds), chunk):
        sl = slice(s, s + chunk)
        if task.kind == "score":
            out.append(predict_score(model, ds.x[sl], ds.theta[sl]))
        else:
            out.append(predict_log_ratio(model, ds.x[sl], ds.theta0[sl], ds.theta1[sl]))
    return np.concatenate(out)


@dataclass
class Metric:
    mean: float
    se: float
    values: np.ndarray = field(default=None, repr=False)

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size)), values)


def eval_avg_loss(model, task, ds1):
    """Mean per-example task loss (mean-square error or logistic) on evaluation set 1."""
    pred = _predict(model, task, ds1)
    spec = LossSpec("mse") if task.kind == "score" else LossSpec("logistic")
    return Metric.of(loss_value(spec, pred, ds1.y))


def eval_avg_error(model, task, ds2, oracle=None):
    """Mean squared deviation from the exact score (per component) or log-ratio on evaluation set 2."""
    oracle = oracle or make_oracle(task.oracle)
    pred = _predict(model, task, ds2)
    if task.kind == "score":
        if not oracle.can_score:
            raise ConfigurationError(f"oracle {oracle.kind} cannot provide exact scores")
        err = np.mean((pred - oracle.score(ds2.x, ds2.theta)) ** 2, axis=1)
    else:
        if not oracle.can_log_density:
            raise ConfigurationError(f"oracle {oracle.kind} cannot provide exact ratios")
        err = (pred - oracle.log_ratio(ds2.x, ds2.theta0, ds2.theta1)) ** 2
    return Metric.of(err)


def oracle_floor(task, ds1):
    return eval_avg_loss(OracleModel(make_oracle(task.oracle)), task, ds1)


# ---------------------------------------------------------------- training runs


@dataclass
class InstanceResult:
    instance: int
    model: object
    report: object
    avg_loss: Metric = None
    avg_error: Metric = None
    saturation: float = 0.0


@dataclass
class TaskRun:
    task: TaskSpec
    arch: str
    seed: int
    instances: list

    @property
    def models(self):
        return [r.model for r in self.instances]

    def median_loss(self):
        return float(np.median([r.avg_loss.mean for r in self.instances]))

    def median_error(self):
        return float(np.median([r.avg_error.mean for r in self.instances]))


def train_instance(task, arch, seed, instance, counters=None):
    tag = task.architecture_tag(arch)
    counters = Counter() if counters is None else counters
    ds = task_data(task, seed, 0, instance, counters=counters)
    oracle = make_oracle(task.oracle)
    model = build_model(tag, oracle.D, oracle.d, make_rng(seed, TASK_INDEX[task.id], 3, instance, ARCHS.index(arch)))
    start = time.perf_counter()
    try:
        report = train(model, ds, task.loss_spec, task.train_config,
                       make_rng(seed, TASK_INDEX[task.id], 4, instance, ARCHS.index(arch)), counters)
    except TrainingDivergenceError as exc:
        exc.instance = instance
        raise
    log.info("trained %s/%s instance %d in %.1fs", task.id, tag, instance, time.perf_counter() - start)
    return model, report


def _train_job(args):
    return train_instance(*args)


def run_task(task, arch, seed, eval_sets=None, jobs=1):
    """Train ``task.n_seeds`` instances and score each on the task's own evaluation sets."""
    if eval_sets is None:
        eval_sets = evaluation_sets(task, seed)
    ds1, ds2 = eval_sets
    jobs_args = [(task, arch, seed, i) for i in range(task.n_seeds)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trained = list(pool.map(_train_job, jobs_args))
    else:
        trained = [_train_job(a) for a in jobs_args]
    oracle = make_oracle(task.oracle)
    results = []
    for i, (model, report) in enumerate(trained):
        res = InstanceResult(i, model, report, eval_avg_loss(model, task, ds1), eval_avg_error(model, task, ds2, oracle))
        if task.kind == "score" and task.kernel.kind == "delta":
            pred = _predict(model, task, ds1)
            res.saturation = saturation_fraction(pred, task.kernel.lam(ds1.theta), task.kernel.sigma_sq)
            if res.saturation > 0:
                warnings.warn(f"{task.id}/{model.tag} instance {i}: fraction {res.saturation:.3g} of score outputs near "
                              "the target bound; the kernel width is likely causing high bias", stacklevel=2)
        results.append(res)
    return TaskRun(task, arch, seed, results)


# ---------------------------------------------------------------- cross evaluation


@dataclass
class Cell:
    eval_task: str
    column: str
    losses: list = None
    errors: list = None

    @property
    def applicable(self):
        return self.losses is not None

    @property
    def median_loss(self):
        return float(np.median([m.mean for m in self.losses])) if self.applicable else None

    @property
    def median_error(self):
        return float(np.median([m.mean for m in self.errors])) if self.applicable else None


@dataclass
class CrossEval:
    eval_tasks: list
    columns: list
    cells: dict

    def cell(self, eval_task, column):
        return self.cells[(eval_task, column)]

    def rows(self):
        for t in self.eval_tasks:
            for metric in ("avg_loss", "avg_error"):
                vals = []
                for c in self.columns:
                    cell = self.cells[(t, c)]
                    if not cell.applicable:
                        vals.append(NA)
                    else:
                        vals.append(cell.median_loss if metric == "avg_loss" else cell.median_error)
                yield t, metric, vals

    def to_text(self):
        head = ["eval_task", "metric"] + list(self.columns)
        lines = ["  ".join(f"{h:>14}" for h in head)]
        for t, metric, vals in self.rows():
            cells = [v if isinstance(v, str) else f"{v:.4f}" for v in vals]
            lines.append("  ".join(f"{h:>14}" for h in [t, metric] + cells))
        lines.append("")
        lines.append("per-instance values (mean +- standard error)")
        for (t, c), cell in sorted(self.cells.items()):
            if cell.applicable and c != "truth":
                for i, (l, e) in enumerate(zip(cell.losses, cell.errors)):
                    lines.append(f"{t:>6} {c:>12} #{i}: loss {l.mean:.5f} +- {l.se:.5f}  error {e.mean:.5f} +- {e.se:.5f}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        out = {"eval_tasks": list(self.eval_tasks), "columns": list(self.columns), "cells": []}
        for (t, c), cell in self.cells.items():
            entry = {"eval_task": t, "column": c, "applicable": cell.applicable}
            if cell.applicable:
                entry.update(median_loss=cell.median_loss, median_error=cell.median_error,
                             losses=[[m.mean, m.se] for m in cell.losses],
                             errors=[[m.mean, m.se] for m in cell.errors])
            out["cells"].append(entry)
        return out


def cross_evaluate(runs, tasks, eval_sets):
    """Evaluate every trained column on every task, plus the exact model.

    ``runs`` maps a column name (e.g. ``"kse/isn"``) to its list of models;
    ``tasks`` and ``eval_sets`` are keyed by task id.
    """
    columns = list(runs) + ["truth"]
    cells = {}
    for tid, task in tasks.items():
        ds1, ds2 = eval_sets[tid]
        oracle = make_oracle(task.oracle)
        for col in columns:
            models = [OracleModel(oracle)] if col == "truth" else runs[col]
            if not can_perform(models[0], task):
                cells[(tid, col)] = Cell(tid, col)
                continue
            cells[(tid, col)] = Cell(tid, col, [eval_avg_loss(m, task, ds1) for m in models],
                                     [eval_avg_error(m, task, ds2, oracle) for m in models])
    return CrossEval(list(tasks), columns, cells)


# ---------------------------------------------------------------- heatmaps


def export_heatmap_data(model, task, ds2, path, oracle=None):
    """CSV with one (component, truth, prediction) row per score component or log-ratio."""
    oracle = oracle or make_oracle(task.oracle)
    pred = _predict(model, task, ds2)
    if task.kind == "score":
        truth = oracle.score(ds2.x, ds2.theta)
    else:
        truth = oracle.log_ratio(ds2.x, ds2.theta0, ds2.theta1)[:, None]
        pred = pred[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "truth", "prediction"])
        for j in range(truth.shape[1]):
            for t, p in zip(truth[:, j], pred[:, j]):
                w.writerow([j, repr(float(t)), repr(float(p))])
    return truth.size


# ---------------------------------------------------------------- whole study


@dataclass
class StudyResult:
    tasks: dict
    runs: dict
    cross: CrossEval
    eval_sets: dict = field(repr=False)
    seconds: dict = field(default_factory=dict)
    counters: Counter = field(default_factory=Counter)


def run_study(tasks, seed, jobs=1, progress=None):
    """Train both architectures on every task and build the cross-evaluation matrix."""
    eval_sets = {tid: evaluation_sets(t, seed) for tid, t in tasks.items()}
    runs, models, seconds, counters = {}, {}, {}, Counter()
    for tid, task in tasks.items():
        for arch in ARCHS:
            col = f"{tid}/{arch}"
            start = time.perf_counter()
            run = run_task(task, arch, seed, eval_sets[tid], jobs=jobs)
            seconds[col] = time.perf_counter() - start
            log.info("%s: %.1fs wall clock", col, seconds[col])
            runs[col], models[col] = run, run.models
            for r in run.instances:
                counters.update(r.report.counters)
            if progress is not None:
                progress(col, run)
    cross = cross_evaluate(models, tasks, eval_sets)
    return StudyResult(tasks, runs, cross, eval_sets, seconds, counters)


def with_overrides(task, **kw):
    return replace(task, **kw)
