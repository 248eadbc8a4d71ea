"""Command-line entry point.

Every subcommand reads an optional INI config (``--config``), accepts
``--set section.key=value`` overrides and a master ``--seed``, and writes a
``<output>.manifest.json`` next to each file it produces.  Relative output
paths are resolved against ``$INFEROSTATIC_OUTPUT_DIR`` when it is set.

Failures exit with status 1 and print ``error[<category>]: <message>``.
"""

import argparse
import json
import logging
import os
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .architectures import build_model, load_model, save_model, train
from .datagen import EventDataset, dataset_load, dataset_save, generate_events
from .errors import ConfigurationError, InferostaticError, TaskMismatchError
from .inference_apps import bce_estimate, mle_estimate, reweight, weighted_mean, write_trace
from .oracles import make_oracle
from .samplers import make_rng
from .trainer_eval import (
    ARCHS,
    TASK_IDS,
    TASK_INDEX,
    OracleModel,
    can_perform,
    eval_avg_error,
    eval_avg_loss,
    evaluation_sets,
    export_heatmap_data,
    oracle_floor,
    run_study,
    task_data,
    train_instance,
)

OUTPUT_ENV = "INFEROSTATIC_OUTPUT_DIR"
PURPOSES = {"train": 0, "eval1": 1, "eval2": 2}
EVENTS_PURPOSE = 5

log = logging.getLogger("inferostatic")


def _out(path, directory=False):
    path = Path(path)
    base = os.environ.get(OUTPUT_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    (path if directory else path.parent).mkdir(parents=True, exist_ok=True)
    return path


def _vector(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from None


def _manifest(path, args, cfg, **extra):
    info = {
        "command": args.command,
        "argv": sys.argv[1:],
        "version": __version__,
        "seed": cfg.seed,
        "config_hash": cfg.hash,
        "config_source": cfg.source,
        "config": cfg.values,
        "output": str(path),
    }
    info.update(extra)
    mpath = Path(f"{path}.manifest.json")
    mpath.write_text(json.dumps(info, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return mpath


def _jsonable(obj):
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, (np.ndarray, tuple)):
        return list(obj)
    if isinstance(obj, Counter):
        return dict(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _model(spec, cfg):
    """A saved model file, or ``truth`` for the exact model of the configured oracle."""
    if spec == "truth":
        return OracleModel(make_oracle(cfg["oracle.kind"])), {}
    return load_model(spec)


def _events(path):
    ds = dataset_load(path)
    if not isinstance(ds, EventDataset):
        raise TaskMismatchError(f"{path} holds a {ds.kind} dataset, expected plain events")
    return ds.x


# ---------------------------------------------------------------- commands


def cmd_generate(args, cfg):
    counters = Counter()
    if args.task == "events":
        if args.theta is None:
            raise ConfigurationError("--theta is required for event generation")
        oracle = make_oracle(cfg["oracle.kind"])
        n = args.n or cfg["eval.n_eval"]
        ds = generate_events(oracle, _vector(args.theta), n, make_rng(cfg.seed, EVENTS_PURPOSE, args.instance), counters)
    else:
        task = cfg.tasks()[args.task]
        ds = task_data(task, cfg.seed, PURPOSES[args.purpose], args.instance, args.n, counters)
    path = _out(args.out)
    dataset_save(ds, path)
    _manifest(path, args, cfg, task=args.task, rows=len(ds.x), instance=args.instance, counters=ds.counters)
    print(f"wrote {len(ds.x)} rows to {path}")


def cmd_train(args, cfg):
    task = cfg.tasks()[args.task]
    counters = Counter()
    if args.data:
        ds = dataset_load(args.data)
        if ds.task != task.id:
            raise TaskMismatchError(f"{args.data} holds {ds.task} data, not {task.id}")
        oracle = make_oracle(task.oracle)
        tag = task.architecture_tag(args.arch)
        rng = make_rng(cfg.seed, TASK_INDEX[task.id], 3, args.instance, ARCHS.index(args.arch))
        model = build_model(tag, oracle.D, oracle.d, rng)
        report = train(model, ds, task.loss_spec, task.train_config,
                       make_rng(cfg.seed, TASK_INDEX[task.id], 4, args.instance, ARCHS.index(args.arch)), counters)
    else:
        model, report = train_instance(task, args.arch, cfg.seed, args.instance, counters)
    path = _out(args.out)
    save_model(model, path, extra={"task": task.id, "seed": cfg.seed, "config_hash": cfg.hash})
    _manifest(path, args, cfg, task=task.id, architecture=model.tag, instance=args.instance, data=args.data,
              steps=report.steps, seconds=report.seconds, train_loss=report.train_loss,
              validation_loss=report.validation_loss, counters=report.counters)
    print(f"trained {model.tag} on {task.id}: final validation loss {report.validation_loss[-1]:.6g}; saved {path}")


def cmd_evaluate(args, cfg):
    tasks = cfg.tasks()
    selected = [args.task] if args.task else list(TASK_IDS)
    rows = []
    for tid in selected:
        task = tasks[tid]
        ds1, ds2 = evaluation_sets(task, cfg.seed)
        for spec in args.models:
            model, _ = _model(spec, cfg)
            if not can_perform(model, task):
                rows.append({"task": tid, "model": spec, "avg_loss": None, "avg_error": None})
                continue
            loss, err = eval_avg_loss(model, task, ds1), eval_avg_error(model, task, ds2)
            rows.append({"task": tid, "model": spec, "avg_loss": loss.mean, "avg_loss_se": loss.se,
                         "avg_error": err.mean, "avg_error_se": err.se})
    for r in rows:
        if r["avg_loss"] is None:
            print(f"{r['task']:>5}  {r['model']}: ---")
        else:
            print(f"{r['task']:>5}  {r['model']}: avg_loss {r['avg_loss']:.6f} +- {r['avg_loss_se']:.6f}  "
                  f"avg_error {r['avg_error']:.6g} +- {r['avg_error_se']:.6g}")
    if args.report:
        path = _out(args.report)
        path.write_text(json.dumps(rows, indent=2) + "\n")
        _manifest(path, args, cfg, models=args.models)


def cmd_floors(args, cfg):
    rows = {}
    for tid, task in cfg.tasks().items():
        ds1 = task_data(task, cfg.seed, 1)
        m = oracle_floor(task, ds1)
        rows[tid] = {"floor": m.mean, "se": m.se, "n_eval": len(ds1)}
        print(f"{tid:>5}  floor {m.mean:.4f} +- {m.se:.4f}  (n={len(ds1)})")
    if args.report:
        path = _out(args.report)
        path.write_text(json.dumps(rows, indent=2) + "\n")
        _manifest(path, args, cfg)


def cmd_cross_eval(args, cfg):
    start = time.perf_counter()

    def progress(col, run):
        print(f"  {col}: median avg_loss {run.median_loss():.5f}, median avg_error {run.median_error():.5f}",
              flush=True)

    study = run_study(cfg.tasks(), cfg.seed, jobs=args.jobs, progress=progress)
    path = _out(args.out)
    text = study.cross.to_text()
    path.write_text(text)
    json_path = Path(f"{path}.json")
    json_path.write_text(json.dumps(study.cross.to_dict(), indent=2) + "\n")
    if args.models_dir:
        mdir = _out(args.models_dir, directory=True)
        for col, run in study.runs.items():
            for r in run.instances:
                save_model(r.model, mdir / f"{col.replace('/', '_')}_{r.instance}.model",
                           extra={"task": run.task.id, "seed": cfg.seed, "config_hash": cfg.hash})
    _manifest(path, args, cfg, seconds=time.perf_counter() - start, per_column_seconds=study.seconds,
              counters=study.counters)
    print(text, end="")


def cmd_heatmap(args, cfg):
    task = cfg.tasks()[args.task]
    model, _ = _model(args.model, cfg)
    _, ds2 = evaluation_sets(task, cfg.seed)
    path = _out(args.out)
    n = export_heatmap_data(model, task, ds2, path)
    _manifest(path, args, cfg, task=task.id, model=args.model, rows=n)
    print(f"wrote {n} points to {path}")


def cmd_infer(args, cfg):
    model, _ = _model(args.model, cfg)
    x = _events(args.data)
    theta_ref = _vector(args.theta_ref)
    search = cfg.search_config(args.search)
    if args.method == "mle":
        est = mle_estimate(model, x, theta_ref, search)
    else:
        if args.ref_data:
            x_ref = _events(args.ref_data)
        else:
            n_ref = search.n_ref or len(x)
            x_ref = generate_events(make_oracle(cfg["oracle.kind"]), theta_ref, n_ref,
                                    make_rng(cfg.seed, EVENTS_PURPOSE, 1)).x
        est = bce_estimate(model, x, x_ref, theta_ref, search)
    print("theta_hat " + " ".join(f"{v:.4f}" for v in est.theta) + f"  objective {est.objective:.6f}"
          + f"  converged {est.converged}" + (f"  warnings {','.join(est.warnings)}" if est.warnings else ""))
    if args.trace:
        path = _out(args.trace)
        write_trace(est, path)
        _manifest(path, args, cfg, theta_hat=est.theta, objective=est.objective, converged=est.converged,
                  warnings=est.warnings, method=args.method, search=search.method)


def cmd_reweight(args, cfg):
    model, _ = _model(args.model, cfg)
    x = _events(args.data)
    w = reweight(model, x, _vector(args.theta0), _vector(args.theta1))
    mean, se = weighted_mean(x, w)
    print("weighted mean " + " ".join(f"{m:.4f}+-{s:.4f}" for m, s in zip(mean, se))
          + f"  mean weight {w.mean():.4f}")
    if args.out:
        path = _out(args.out)
        np.savetxt(path, w, fmt="%.17g", header="weight")
        _manifest(path, args, cfg, rows=len(w), weighted_mean=mean, weighted_mean_se=se)


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="inferostatic", description="Train and evaluate score and likelihood-ratio estimators.")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file (defaults: full benchmark)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value")
    common.add_argument("--seed", type=int, help="master seed (overrides train.seed)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a training or evaluation dataset")
    g.add_argument("--task", required=True, choices=TASK_IDS + ("events",))
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--purpose", choices=sorted(PURPOSES), default="train")
    g.add_argument("--instance", type=int, default=0)
    g.add_argument("--theta", help="parameter point for --task events, e.g. 1.5,3,5")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train one network instance")
    t.add_argument("--task", required=True, choices=TASK_IDS)
    t.add_argument("--arch", required=True, choices=ARCHS)
    t.add_argument("--out", required=True)
    t.add_argument("--data", help="dataset file; generated from the seed when omitted")
    t.add_argument("--instance", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="avg_loss and avg_error of saved models")
    e.add_argument("--models", nargs="+", required=True, help="model files, or 'truth'")
    e.add_argument("--task", choices=TASK_IDS)
    e.add_argument("--report")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("cross-eval", parents=[common], help="train every column and build the cross-task matrix")
    c.add_argument("--out", required=True)
    c.add_argument("--models-dir")
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_cross_eval)

    f = sub.add_parser("floors", parents=[common], help="loss of the exact model on each task")
    f.add_argument("--report")
    f.set_defaults(func=cmd_floors)

    h = sub.add_parser("heatmap", parents=[common], help="(truth, prediction) pairs as CSV")
    h.add_argument("--task", required=True, choices=TASK_IDS)
    h.add_argument("--model", required=True)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_heatmap)

    i = sub.add_parser("infer", parents=[common], help="estimate parameters from an event file")
    i.add_argument("--model", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--theta-ref", required=True)
    i.add_argument("--method", choices=("mle", "bce"), default="mle")
    i.add_argument("--search", choices=("grid", "gradient"))
    i.add_argument("--ref-data")
    i.add_argument("--trace")
    i.set_defaults(func=cmd_infer)

    r = sub.add_parser("reweight", parents=[common], help="weights moving events from theta0 to theta1")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--theta0", required=True)
    r.add_argument("--theta1", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_reweight)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        overrides = list(args.set) + ([f"train.seed={args.seed}"] if args.seed is not None else [])
        cfg = load_config(args.config, overrides)
        args.func(args, cfg)
    except InferostaticError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
