import csv
import itertools

import numpy as np
import pytest

from inferostatic.architectures import TrainConfig
from inferostatic.errors import ConfigurationError, TaskMismatchError
from inferostatic.oracles import Dirichlet3, dirichlet_score
from inferostatic.samplers import make_rng
from inferostatic.trainer_eval import (
    NA,
    Metric,
    OracleModel,
    TaskRun,
    InstanceResult,
    cross_evaluate,
    eval_avg_error,
    eval_avg_loss,
    evaluation_sets,
    export_heatmap_data,
    oracle_floor,
    run_task,
    study_tasks,
    task_data,
    with_overrides,
)

ORACLE = Dirichlet3()


def tiny_tasks(**kw):
    opts = dict(n_train=400, n_eval=3_000, n_seeds=2, epochs=1)
    opts.update(kw)
    return study_tasks("desk", **opts)


@pytest.fixture(scope="module")
def tasks():
    return tiny_tasks()


@pytest.fixture(scope="module")
def eval_sets(tasks):
    return {tid: evaluation_sets(t, 11) for tid, t in tasks.items()}


@pytest.fixture(scope="module")
def runs(tasks, eval_sets):
    return {f"{tid}/{arch}": run_task(t, arch, 11, eval_sets[tid])
            for tid, t in tasks.items() for arch in ("isn", "direct")}


class ZeroScore:
    tag = "zero"
    heads = ("score",)

    def score(self, x, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))


def test_defaults_mirror_the_protocol():
    full = study_tasks()
    for t in full.values():
        assert (t.n_train, t.n_eval, t.n_seeds, t.train_config.epochs) == (100_000, 100_000, 5, 20)
    assert full["kse"].kernel.kind == "delta" and full["kse"].kernel.widths == 0.25
    assert full["klre"].pair_distribution().kind == "kernel"
    assert full["carl"].pair_distribution().kind == "iid"
    assert full["kse"].loss_spec.kind == "mse" and full["carl"].loss_spec.kind == "logistic"


def test_zero_training_rows_rejected():
    with pytest.raises(ConfigurationError):
        study_tasks("desk", n_train=0)
    with pytest.raises(ConfigurationError):
        study_tasks("nightly")


def test_evaluation_sets_differ_from_training_data(tasks):
    t = tasks["kse"]
    a, b = evaluation_sets(t, 3)
    train = task_data(t, 3, 0, 0)
    assert not np.array_equal(a.x[:10], b.x[:10])
    assert not np.array_equal(a.x[:10], train.x[:10])
    assert np.array_equal(a.x, evaluation_sets(t, 3)[0].x)


def test_oracle_as_model_has_zero_error(tasks, eval_sets):
    for tid, t in tasks.items():
        err = eval_avg_error(OracleModel(ORACLE), t, eval_sets[tid][1])
        assert err.mean == 0.0 and np.all(err.values == 0.0)


def test_floor_matches_hand_computation(tasks, eval_sets):
    ds1 = eval_sets["kse"][0]
    by_hand = np.mean((dirichlet_score(ds1.x, ds1.theta) - ds1.y) ** 2, axis=1)
    floor = oracle_floor(tasks["kse"], ds1)
    assert floor.mean == pytest.approx(by_hand.mean(), rel=1e-12)
    assert floor.se == pytest.approx(by_hand.std(ddof=1) / np.sqrt(by_hand.size), rel=1e-9)
    ds1 = eval_sets["carl"][0]
    t = ORACLE.log_ratio(ds1.x, ds1.theta0, ds1.theta1)
    # y = 1 marks theta1 events; -ln of the matching posterior
    by_hand = np.where(ds1.y == 1, np.logaddexp(0, t), np.logaddexp(0, -t))
    assert oracle_floor(tasks["carl"], ds1).mean == pytest.approx(by_hand.mean(), rel=1e-12)


def test_zero_score_error_is_mean_square_score(tasks, eval_sets):
    err = eval_avg_error(ZeroScore(), tasks["kse"], eval_sets["kse"][1]).mean
    # independent sampling of the kernel-shifted parameter distribution
    rng = np.random.default_rng(5)
    theta = rng.uniform(0.5, 5.0, size=(20_000, 3))
    shifted = theta + 0.25 * rng.choice([-1.0, 1.0], size=theta.shape)
    x = np.array([rng.dirichlet(a) for a in shifted])
    mc = np.mean(dirichlet_score(x, theta) ** 2)
    assert err == pytest.approx(mc, rel=0.05)


def test_task_mismatch(tasks, eval_sets):
    with pytest.raises(TaskMismatchError):
        eval_avg_loss(ZeroScore(), tasks["carl"], eval_sets["carl"][0])


def test_run_task_shapes(runs):
    for col, run in runs.items():
        assert len(run.instances) == 2
        for r in run.instances:
            assert np.isfinite(r.avg_loss.mean) and np.isfinite(r.avg_error.mean) and r.avg_error.mean >= 0


def test_run_task_reproducible(tasks, eval_sets, runs):
    again = run_task(tasks["klre"], "isn", 11, eval_sets["klre"])
    for a, b in zip(again.instances, runs["klre/isn"].instances):
        assert a.avg_loss.mean == b.avg_loss.mean and a.avg_error.mean == b.avg_error.mean
        assert a.report.train_loss == b.report.train_loss


def test_instances_are_distinct(runs):
    a, b = runs["kse/isn"].instances
    assert a.avg_error.mean != b.avg_error.mean


def test_median_ignores_instance_order(tasks):
    rng = np.random.default_rng(0)
    results = [InstanceResult(i, None, None, Metric.of(rng.random(5)), Metric.of(rng.random(5))) for i in range(5)]
    base = TaskRun(tasks["kse"], "isn", 0, results)
    for perm in itertools.islice(itertools.permutations(results), 30):
        run = TaskRun(tasks["kse"], "isn", 0, list(perm))
        assert run.median_loss() == base.median_loss() and run.median_error() == base.median_error()


def test_error_depends_only_on_the_model(tasks, eval_sets, runs):
    m = runs["carl/isn"].models[1]
    a = eval_avg_error(m, tasks["carl"], eval_sets["carl"][1])
    b = eval_avg_error(m.copy(), tasks["carl"], eval_sets["carl"][1])
    assert a.mean == b.mean


def test_cross_evaluation_matrix(tasks, eval_sets, runs):
    cross = cross_evaluate({c: r.models for c, r in runs.items()}, tasks, eval_sets)
    assert len(cross.columns) == 7 and cross.columns[-1] == "truth"
    assert len(cross.cells) == 21
    for tid in ("klre", "carl"):
        assert not cross.cell(tid, "kse/direct").applicable
    for col in ("klre/direct", "carl/direct"):
        assert not cross.cell("kse", col).applicable
    assert sum(not c.applicable for c in cross.cells.values()) == 4
    isn_on_carl = cross.cell("carl", "kse/isn")
    assert np.isfinite(isn_on_carl.median_loss) and np.isfinite(isn_on_carl.median_error)
    assert cross.cell("kse", "truth").median_error == 0.0
    rows = list(cross.rows())
    assert len(rows) == 6 and all(len(v) == 7 for _, _, v in rows)
    assert rows[2][2][cross.columns.index("kse/direct")] == NA
    text = cross.to_text()
    assert NA in text and "truth" in text
    d = cross.to_dict()
    assert len(d["cells"]) == 21


def test_cross_eval_uses_same_data_as_floor(tasks, eval_sets, runs):
    cross = cross_evaluate({c: r.models for c, r in runs.items()}, tasks, eval_sets)
    for tid, t in tasks.items():
        assert cross.cell(tid, "truth").median_loss == oracle_floor(t, eval_sets[tid][0]).mean


def test_heatmap_rows_and_diagonal(tmp_path, tasks, eval_sets):
    for tid, per_row in (("kse", 3), ("klre", 1)):
        path = tmp_path / f"{tid}.csv"
        ds2 = eval_sets[tid][1]
        n = export_heatmap_data(OracleModel(ORACLE), tasks[tid], ds2, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["component", "truth", "prediction"]
        assert n == len(rows) - 1 == len(ds2) * per_row
        assert all(float(r[1]) == float(r[2]) for r in rows[1:])
        assert sorted({r[0] for r in rows[1:]}) == [str(j) for j in range(per_row)]


def heatmap_correlation(model, task, ds2, path):
    export_heatmap_data(model, task, ds2, path)
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    return np.corrcoef(data[:, 1], data[:, 2])[0, 1]


@pytest.mark.slow
def test_desk_kse_isn_run(tmp_path):
    task = study_tasks("desk", n_eval=20_000)["kse"]
    ds1, ds2 = evaluation_sets(task, 0)
    run = run_task(task, "isn", 0, (ds1, ds2))
    errs = [r.avg_error.mean for r in run.instances]
    assert len(errs) == 5 and np.all(np.isfinite(errs))
    rho = heatmap_correlation(run.models[0], task, ds2, tmp_path / "heat.csv")
    if rho <= 0.7:
        pytest.xfail(f"desk-scale heatmap correlation {rho:.3f} (avg_error {errs[0]:.3f})")


@pytest.mark.slow
def test_full_scale_kse_isn_heatmap_correlation(tmp_path):
    task = study_tasks("full", n_eval=20_000, n_seeds=1)["kse"]
    ds1, ds2 = evaluation_sets(task, 0)
    run = run_task(task, "isn", 0, (ds1, ds2))
    assert heatmap_correlation(run.models[0], task, ds2, tmp_path / "heat.csv") > 0.7


def test_with_overrides(tasks):
    t = with_overrides(tasks["kse"], n_seeds=1, train_config=TrainConfig(epochs=3))
    assert t.n_seeds == 1 and t.train_config.epochs == 3 and tasks["kse"].n_seeds == 2
