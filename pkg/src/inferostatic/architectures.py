"""Estimator heads built on :mod:`nn_core` and their mini-batch training loop.

* ``IsnModel``: scalar potential ``phi(x, theta)`` with input ``[x, theta]``.
  The score is ``d phi / d theta`` and the log-ratio is
  ``phi(x, theta0) - phi(x, theta1)``, so one network serves both tasks.
* ``DirectScoreModel``: ``[x, theta] -> s_hat`` (d outputs).
* ``DirectRatioModel``: ``[x, theta0, theta1] -> (zeta0, zeta1)`` with
  ``ln r_hat = zeta0 - zeta1``.
"""

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import nn_core
from .errors import ConfigurationError, InputShapeError, TaskMismatchError, TrainingDivergenceError
from .losses import LossSpec, loss_value_and_grad

log = logging.getLogger(__name__)

HIDDEN = (8, 16, 8)


def _rows(a, width, what):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :] if width > 1 or a.size == 1 else a[:, None]
    if a.ndim != 2 or a.shape[1] != width:
        raise InputShapeError(f"{what} has shape {a.shape}, expected (n, {width})")
    return a


class _Model:
    tag = "model"
    heads = ()

    def __init__(self, net, D, d):
        self.net = net
        self.D = int(D)
        self.d = int(d)
        if net.input_dim != self.input_width:
            raise InputShapeError(f"{self.tag} with D={D}, d={d} needs {self.input_width} inputs, "
                                  f"network has {net.input_dim}")

    input_width = 0

    def _xt(self, x, theta):
        x = _rows(x, self.D, "x")
        theta = _rows(theta, self.d, "theta")
        if theta.shape[0] == 1 and x.shape[0] > 1:
            theta = np.repeat(theta, x.shape[0], axis=0)
        if x.shape[0] != theta.shape[0]:
            raise InputShapeError(f"{x.shape[0]} events but {theta.shape[0]} parameter rows")
        return x, theta

    def n_params(self):
        return self.net.n_params()

    def copy(self):
        return type(self)(self.net.copy(), self.D, self.d)


class IsnModel(_Model):
    tag = "isn"
    heads = ("score", "ratio")

    @property
    def input_width(self):
        return self.D + self.d

    @classmethod
    def build(cls, D, d, rng, hidden=HIDDEN):
        net = nn_core.DenseNet.initialize([D + d, *hidden, 1], rng, output_bias=False)
        return cls(net, D, d)

    @property
    def theta_slice(self):
        return (self.D, self.D + self.d)

    def potential(self, x, theta):
        x, theta = self._xt(x, theta)
        return nn_core.forward(self.net, np.hstack([x, theta]))[:, 0]

    def score(self, x, theta):
        x, theta = self._xt(x, theta)
        _, jac = nn_core.forward_with_input_gradient(self.net, np.hstack([x, theta]), self.theta_slice)
        return jac[:, 0, :]

    def log_ratio(self, x, theta0, theta1):
        x, theta0 = self._xt(x, theta0)
        _, theta1 = self._xt(x, theta1)
        n = x.shape[0]
        phi = nn_core.forward(self.net, np.vstack([np.hstack([x, theta0]), np.hstack([x, theta1])]))[:, 0]
        return phi[:n] - phi[n:]


class DirectScoreModel(_Model):
    tag = "direct_score"
    heads = ("score",)

    @property
    def input_width(self):
        return self.D + self.d

    @classmethod
    def build(cls, D, d, rng, hidden=HIDDEN):
        return cls(nn_core.DenseNet.initialize([D + d, *hidden, d], rng), D, d)

    def score(self, x, theta):
        x, theta = self._xt(x, theta)
        return nn_core.forward(self.net, np.hstack([x, theta]))


class DirectRatioModel(_Model):
    tag = "direct_ratio"
    heads = ("ratio",)

    @property
    def input_width(self):
        return self.D + 2 * self.d

    @classmethod
    def build(cls, D, d, rng, hidden=HIDDEN):
        return cls(nn_core.DenseNet.initialize([D + 2 * d, *hidden, 2], rng), D, d)

    def zeta(self, x, theta0, theta1):
        x, theta0 = self._xt(x, theta0)
        _, theta1 = self._xt(x, theta1)
        return nn_core.forward(self.net, np.hstack([x, theta0, theta1]))

    def log_ratio(self, x, theta0, theta1):
        z = self.zeta(x, theta0, theta1)
        return z[:, 0] - z[:, 1]


ARCHITECTURES = {cls.tag: cls for cls in (IsnModel, DirectScoreModel, DirectRatioModel)}


def build_model(tag, D, d, rng, hidden=HIDDEN):
    try:
        return ARCHITECTURES[tag].build(D, d, rng, hidden)
    except KeyError:
        raise ConfigurationError(f"unknown architecture {tag!r}; expected one of {sorted(ARCHITECTURES)}") from None


def isn_potential(model, x, theta):
    if not isinstance(model, IsnModel):
        raise TaskMismatchError(f"{model.tag} has no potential")
    return model.potential(x, theta)


def predict_score(model, x, theta):
    if "score" not in model.heads:
        raise TaskMismatchError(f"{model.tag} cannot predict scores")
    return model.score(x, theta)


def predict_log_ratio(model, x, theta0, theta1):
    if "ratio" not in model.heads:
        raise TaskMismatchError(f"{model.tag} cannot predict likelihood ratios")
    return model.log_ratio(x, theta0, theta1)


def save_model(model, path, extra=None):
    meta = {"D": model.D, "d": model.d}
    meta.update(extra or {})
    nn_core.save_net(model.net, path, architecture_tag=model.tag, extra=meta)


def load_model(path):
    net, tag, extra = nn_core.load_net(path)
    if tag not in ARCHITECTURES:
        raise ConfigurationError(f"model file has unknown architecture tag {tag!r}")
    return ARCHITECTURES[tag](net, extra["D"], extra["d"]), extra


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 20
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7
    validation_fraction: float = 0.1
    lr_schedule: str = "constant"  # or "linear": anneal to zero over the run

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigurationError("validation_fraction must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "linear"):
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass
class TrainingReport:
    architecture: str
    loss: str
    n_train: int
    n_validation: int
    train_loss: list = field(default_factory=list)
    validation_loss: list = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0
    counters: Counter = field(default_factory=Counter)


class _Batches:
    """Model inputs prepared once so each mini-batch is a cheap row slice."""

    def __init__(self, model, dataset, spec):
        self.model, self.spec = model, spec
        n = len(dataset)
        self.weight = getattr(dataset, "weight", None)
        if self.weight is None:
            self.weight = np.ones(n)
        if dataset.kind == "score":
            if "score" not in model.heads or spec.output_channel != "score_vector":
                raise TaskMismatchError(f"cannot train {model.tag} with {spec.kind} on score data")
            self.inp = np.hstack([dataset.x, dataset.theta])
            self.target = dataset.y
            self.r_lat = None
        elif dataset.kind == "ratio":
            if "ratio" not in model.heads or spec.output_channel != "log_ratio":
                raise TaskMismatchError(f"cannot train {model.tag} with {spec.kind} on ratio data")
            if spec.needs_r_lat and dataset.r_lat is None:
                raise ConfigurationError(f"loss {spec.kind!r} needs r_lat, dataset has none")
            if isinstance(model, IsnModel):
                self.inp = np.hstack([dataset.x, dataset.theta0])
                self.inp1 = np.hstack([dataset.x, dataset.theta1])
            else:
                self.inp = np.hstack([dataset.x, dataset.theta0, dataset.theta1])
            self.target = dataset.y.astype(np.float64)
            self.r_lat = dataset.r_lat
        else:
            raise TaskMismatchError(f"cannot train on {dataset.kind} data")

    def loss_and_grads(self, idx, counters=None, need_grads=True):
        """Weighted mean loss over rows ``idx`` and its parameter gradients."""
        net, spec = self.model.net, self.spec
        w = self.weight[idx]
        m = len(idx)
        rl = None if self.r_lat is None else self.r_lat[idx]
        y = self.target[idx]
        if spec.kind == "mse":
            if isinstance(self.model, IsnModel):
                _, jac = nn_core.forward_with_input_gradient(net, self.inp[idx], self.model.theta_slice)
                pred = jac[:, 0, :]
            else:
                pred = nn_core.forward(net, self.inp[idx])
            vals, g = loss_value_and_grad(spec, pred, y, rl, counters)
            loss = float(np.mean(w * vals))
            if not need_grads:
                return loss, None
            up = (w / m)[:, None] * g
            if isinstance(self.model, IsnModel):
                return loss, nn_core.backward_through_input_gradient(net, self.inp[idx], self.model.theta_slice,
                                                                     up[:, None, :])
            return loss, nn_core.backward(net, self.inp[idx], up)
        if isinstance(self.model, IsnModel):
            stacked = np.vstack([self.inp[idx], self.inp1[idx]])
            phi = nn_core.forward(net, stacked)[:, 0]
            t = phi[:m] - phi[m:]
        else:
            stacked = self.inp[idx]
            z = nn_core.forward(net, stacked)
            t = z[:, 0] - z[:, 1]
        vals, g = loss_value_and_grad(spec, t, y, rl, counters)
        loss = float(np.mean(w * vals))
        if not need_grads:
            return loss, None
        gt = w * g / m
        if isinstance(self.model, IsnModel):
            up = np.concatenate([gt, -gt])[:, None]
        else:
            up = np.stack([gt, -gt], axis=1)
        return loss, nn_core.backward(net, stacked, up)

    def mean_loss(self, idx, chunk=4096):
        if len(idx) == 0:
            return float("nan")
        total = 0.0
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            total += self.loss_and_grads(part, need_grads=False)[0] * len(part)
        return total / len(idx)


def validation_size(n, fraction=0.1):
    return math.ceil(fraction * n) if fraction > 0 else 0


def train(model, dataset, loss_spec, config=None, rng=None, counters=None, progress=None):
    """Fit ``model`` in place with Adam on mini-batches; returns a :class:`TrainingReport`.

    The last ``ceil(validation_fraction * n)`` rows are held out for
    validation.  Training rows are shuffled once per epoch with ``rng``.
    """
    config = config or TrainConfig()
    spec = loss_spec if isinstance(loss_spec, LossSpec) else LossSpec(loss_spec)
    if rng is None:
        raise ConfigurationError("train needs an explicit rng for the batch order")
    counters = Counter() if counters is None else counters
    batches = _Batches(model, dataset, spec)
    n = len(dataset)
    n_val = validation_size(n, config.validation_fraction)
    n_tr = n - n_val
    if n_tr < 1:
        raise ConfigurationError("no training rows left after the validation split")
    train_idx, val_idx = np.arange(n_tr), np.arange(n_tr, n)
    state = nn_core.AdamState.for_net(model.net, lr=config.learning_rate, beta1=config.beta1,
                                      beta2=config.beta2, eps=config.adam_eps)
    report = TrainingReport(model.tag, spec.kind, n_tr, n_val, counters=counters)
    total_steps = config.epochs * math.ceil(n_tr / config.batch_size)
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        running = 0.0
        for b, s in enumerate(range(0, n_tr, config.batch_size)):
            idx = order[s:s + config.batch_size]
            loss, grads = batches.loss_and_grads(idx, counters)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            if config.lr_schedule == "linear":
                state.lr = config.learning_rate * (1.0 - report.steps / total_steps)
            try:
                nn_core.adam_step(model.net, grads, state)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(f"{exc} (epoch {epoch}, batch {b})", epoch=epoch, batch=b) from None
            running += loss * len(idx)
            report.steps += 1
        report.train_loss.append(running / n_tr)
        report.validation_loss.append(batches.mean_loss(val_idx))
        log.info("%s/%s epoch %d: loss %.6g val %.6g", model.tag, spec.kind, epoch + 1,
                 report.train_loss[-1], report.validation_loss[-1])
        if progress is not None:
            progress(epoch, report)
    report.seconds = time.perf_counter() - start
    return report
