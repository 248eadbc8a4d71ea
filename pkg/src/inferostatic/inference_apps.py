"""Parameter estimation and event reweighting with a learned likelihood ratio.

A *source* is anything with ``log_ratio(x, theta0, theta1)``: a trained model,
an oracle, or ``trainer_eval.OracleModel``.  The gradient search additionally
needs ``score(x, theta)``.  Parameters are passed as single rows and broadcast
over the events.
"""

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputShapeError, SearchDivergenceError, TaskMismatchError
from .samplers import PriorSpec

DEFAULT_BOX = PriorSpec((0.5, 0.5, 0.5), (5.0, 5.0, 5.0))


@dataclass
class SearchConfig:
    method: str = "grid"
    grid_step: float = 0.05
    coarse_step: float = 0.8
    window: int = 2
    gradient_step: float = 0.01
    iterations: int = 500
    tolerance: float = 1e-5
    box: PriorSpec = None
    start: tuple = None
    n_ref: int = None

    def __post_init__(self):
        if self.method not in ("grid", "gradient"):
            raise ConfigurationError(f"unknown search method {self.method!r}; expected grid or gradient")
        if not (self.grid_step > 0 and self.coarse_step >= self.grid_step):
            raise ConfigurationError("need 0 < grid_step <= coarse_step")
        if self.iterations < 1 or self.gradient_step <= 0:
            raise ConfigurationError("gradient search needs iterations >= 1 and a positive step")
        if self.box is None:
            self.box = DEFAULT_BOX


@dataclass
class Estimate:
    theta: np.ndarray
    objective: float
    method: str
    converged: bool
    trace: list = field(default_factory=list)  # (iteration, theta, objective)
    warnings: list = field(default_factory=list)
    evaluations: int = 0


def _events(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise InputShapeError(f"events must be (n, D), got {x.shape}")
    if x.shape[0] == 0:
        raise ConfigurationError("cannot estimate parameters from an empty dataset")
    return x


def _row(theta):
    return np.asarray(theta, dtype=np.float64).reshape(1, -1)


def _log_ratio(source, x, theta0, theta1):
    if "ratio" not in getattr(source, "heads", ("ratio",)):
        raise TaskMismatchError(f"{source.tag} cannot predict likelihood ratios")
    return np.asarray(source.log_ratio(x, _row(theta0), _row(theta1)), dtype=np.float64).reshape(-1)


def _score(source, x, theta):
    if "score" not in getattr(source, "heads", ("score",)) or not hasattr(source, "score"):
        raise TaskMismatchError("gradient search needs a source with a score head")
    return np.asarray(source.score(x, _row(theta)), dtype=np.float64).reshape(x.shape[0], -1)


def _softplus(t):
    return np.logaddexp(0.0, t)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


# --------------------------------------------------------------- objectives


def mle_objective(source, x, theta, theta_ref):
    """``-mean ln r(x; theta, theta_ref)``."""
    return float(-np.mean(_log_ratio(source, x, theta, theta_ref)))


def mle_gradient(source, x, theta):
    return -np.mean(_score(source, x, theta), axis=0)


def bce_objective(source, x, x_ref, theta, theta_ref):
    """Cross entropy with the data labelled 1 and the reference sample labelled 0.

    ``-ln(r/(1+r)) = softplus(-t)`` and ``-ln(1/(1+r)) = softplus(t)`` with
    ``t = ln r``.
    """
    t = _log_ratio(source, x, theta, theta_ref)
    t_ref = _log_ratio(source, x_ref, theta, theta_ref)
    return float(np.mean(_softplus(-t)) + np.mean(_softplus(t_ref)))


def bce_gradient(source, x, x_ref, theta, theta_ref):
    t = _log_ratio(source, x, theta, theta_ref)
    t_ref = _log_ratio(source, x_ref, theta, theta_ref)
    g = -(_sigmoid(-t)[:, None] * _score(source, x, theta)).mean(axis=0)
    return g + (_sigmoid(t_ref)[:, None] * _score(source, x_ref, theta)).mean(axis=0)


# ------------------------------------------------------------------ searches


def _axis(lo, hi, center, step, window):
    if center is None:
        n = max(1, int(math.floor((hi - lo) / step + 1e-9)))
        pts = lo + step * np.arange(n + 1)
        if hi - pts[-1] > 1e-9:
            pts = np.append(pts, hi)
        return pts
    pts = center + step * np.arange(-window, window + 1)
    return np.unique(np.clip(pts, lo, hi))


def _levels(config):
    steps = [config.grid_step]
    while steps[-1] * 2 <= config.coarse_step + 1e-12:
        steps.append(steps[-1] * 2)
    return steps[::-1]


def _checked(value, theta, method):
    if not np.isfinite(value):
        raise SearchDivergenceError(f"{method} objective is {value} at theta={np.round(theta, 6).tolist()}")
    return value


def grid_search(objective, config):
    """Coarse-to-fine grid: a full grid at ``coarse_step`` then local grids of
    ``2*window + 1`` points per axis, halving the step down to ``grid_step``."""
    lo, hi = np.array(config.box.lower), np.array(config.box.upper)
    best, best_val, trace, evals = None, math.inf, [], 0
    for level, step in enumerate(_levels(config)):
        axes = [_axis(lo[k], hi[k], None if best is None else best[k], step, config.window)
                for k in range(len(lo))]
        for pt in itertools.product(*axes):
            theta = np.array(pt)
            val = _checked(objective(theta), theta, "grid")
            evals += 1
            if val < best_val:
                best, best_val = theta, val
        trace.append((level, best.copy(), best_val))
    return Estimate(best, best_val, "grid", True, trace, evaluations=evals)


def gradient_search(objective, gradient, config):
    """Fixed-step descent projected onto the box.  Converged when a step
    moves the parameters by less than ``tolerance``."""
    lo, hi = np.array(config.box.lower), np.array(config.box.upper)
    theta = np.clip(np.asarray(config.start if config.start is not None else (lo + hi) / 2, float), lo, hi)
    val = _checked(objective(theta), theta, "gradient")
    trace, converged = [(0, theta.copy(), val)], False
    for it in range(1, config.iterations + 1):
        g = gradient(theta)
        if not np.all(np.isfinite(g)):
            raise SearchDivergenceError(f"non-finite gradient at iteration {it}")
        new = np.clip(theta - config.gradient_step * g, lo, hi)
        moved = float(np.max(np.abs(new - theta)))
        theta = new
        val = _checked(objective(theta), theta, "gradient")
        trace.append((it, theta.copy(), val))
        if moved < config.tolerance:
            converged = True
            break
    return Estimate(theta, val, "gradient", converged, trace, evaluations=len(trace))


def _flag(est, config, n):
    if n == 1:
        est.warnings.append("single_event")
    if np.any(np.isclose(est.theta, config.box.lower)) or np.any(np.isclose(est.theta, config.box.upper)):
        est.warnings.append("on_boundary")
    if not est.converged:
        est.warnings.append("not_converged")
    return est


def _search(objective, gradient, config):
    if config.method == "grid":
        return grid_search(objective, config)
    return gradient_search(objective, gradient, config)


def mle_estimate(source, x, theta_ref, config=None):
    """Minimise ``-mean ln r(x_i; theta', theta_ref)`` over the search box."""
    config = config or SearchConfig()
    x = _events(x)
    est = _search(lambda th: mle_objective(source, x, th, theta_ref),
                  lambda th: mle_gradient(source, x, th), config)
    return _flag(est, config, x.shape[0])


def bce_estimate(source, x, x_ref, theta_ref, config=None):
    """Minimise the two-sample cross entropy between data and a reference
    sample drawn at ``theta_ref``.  ``config.n_ref`` truncates the reference
    sample; by default it is used whole."""
    config = config or SearchConfig()
    x, x_ref = _events(x), _events(x_ref)
    if config.n_ref is not None:
        if not 0 < config.n_ref <= x_ref.shape[0]:
            raise ConfigurationError(f"n_ref={config.n_ref} but only {x_ref.shape[0]} reference events")
        x_ref = x_ref[:config.n_ref]
    est = _search(lambda th: bce_objective(source, x, x_ref, th, theta_ref),
                  lambda th: bce_gradient(source, x, x_ref, th, theta_ref), config)
    return _flag(est, config, x.shape[0])


def reweight(source, x, theta0, theta1):
    """Weights ``r(x; theta1, theta0)`` that turn a ``theta0`` sample into a ``theta1`` one."""
    x = _events(x)
    return np.exp(_log_ratio(source, x, theta1, theta0))


def weighted_mean(values, weights):
    """Weighted mean and its delta-method standard error."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    w = np.asarray(weights, dtype=np.float64)
    mean = (w[:, None] * values).sum(axis=0) / w.sum()
    resid = w[:, None] * (values - mean)
    se = np.sqrt((resid ** 2).sum(axis=0)) / w.sum()
    return mean, se


def write_trace(est, path):
    d = len(est.theta)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iteration", *[f"theta_{k}" for k in range(d)], "objective"])
        for it, theta, val in est.trace:
            out.writerow([it, *[repr(float(v)) for v in theta], repr(float(val))])
    return len(est.trace)
