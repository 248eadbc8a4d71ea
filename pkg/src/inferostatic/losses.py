"""Per-example losses with their gradients with respect to the network output.

Ratio losses take ``t = ln r_hat`` as the prediction and differentiate with
respect to ``t``; classification forms are written with the logistic sigmoid,
using ``1 / (1 + r) = sigmoid(-t)``.  Score regression uses mean-square error
on the score vector.

Every classification loss here is affine in the label ``y``.  Its latent
counterpart is the same expression with ``y`` replaced by ``1 / (1 + r_lat)``;
for the square loss this gives ``(1/(1+r_hat) - 1/(1+r_lat))^2`` directly.
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputShapeError, UnsupportedBaseError

CLAMP = 30.0

BASE_KINDS = ("logistic", "square", "exponential", "savage", "rolr")
LATENT_OF = {
    "rolr": "latent_rolr",
    "logistic": "alice",
    "square": "latent_square",
    "exponential": "latent_exponential",
    "savage": "latent_savage",
}
BASE_OF = {v: k for k, v in LATENT_OF.items()}
LOSS_KINDS = ("mse",) + BASE_KINDS + tuple(LATENT_OF.values())


@dataclass(frozen=True)
class LossSpec:
    kind: str

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"unknown loss {self.kind!r}; expected one of {LOSS_KINDS}")

    @property
    def output_channel(self):
        return "score_vector" if self.kind == "mse" else "log_ratio"

    @property
    def is_latent(self):
        return self.kind in BASE_OF

    @property
    def needs_r_lat(self):
        return self.is_latent or self.kind == "rolr"

    @property
    def base(self):
        return BASE_OF.get(self.kind, self.kind)


def latentify(base):
    """Latent-supervision version of an affine-in-``y`` classification loss."""
    kind = base.kind if isinstance(base, LossSpec) else base
    if kind in BASE_OF:
        return LossSpec(kind)
    if kind not in LATENT_OF:
        raise UnsupportedBaseError(f"no latent form for loss {kind!r}")
    return LossSpec(LATENT_OF[kind])


def _sig(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _softplus(t):
    return np.logaddexp(0.0, t)


def _clamped(t, counters):
    c = np.clip(t, -CLAMP, CLAMP)
    if counters is not None:
        counters["loss_clamps"] += int(np.count_nonzero(c != t))
    return c


def _logistic(t, y, r_lat, counters):
    return y * _softplus(t) + (1 - y) * _softplus(-t), _sig(t) - (1 - y)


def _square(t, y, r_lat, counters):
    p, q = _sig(t), _sig(-t)
    res = (1 - y) * q - y * p  # q - y without cancellation
    return res ** 2, -2.0 * res * q * p


def _exponential(t, y, r_lat, counters):
    t = _clamped(t, counters)
    up, down = np.exp(0.5 * t), np.exp(-0.5 * t)
    return y * up + (1 - y) * down, 0.5 * (y * up - (1 - y) * down)


def _savage(t, y, r_lat, counters):
    p, q = _sig(t), _sig(-t)
    return y * p ** 2 + (1 - y) * q ** 2, 2.0 * p * q * (y * p - (1 - y) * q)


def _rolr(t, y, r_lat, counters):
    t = _clamped(t, counters)
    r = np.exp(t)
    a, b = r - r_lat, 1.0 / r - 1.0 / r_lat
    return y * a ** 2 + (1 - y) * b ** 2, 2.0 * (y * a * r - (1 - y) * b / r)


_RATIO_FORMS = {"logistic": _logistic, "square": _square, "exponential": _exponential,
                "savage": _savage, "rolr": _rolr}


def _targets(target, r_lat):
    if target is not None and hasattr(target, "y"):
        r_lat = getattr(target, "r_lat", None) if r_lat is None else r_lat
        target = target.y
    return target, r_lat


def loss_value_and_grad(spec, prediction, target=None, r_lat=None, counters=None):
    """Per-example loss values and ``dL/dprediction``.

    ``prediction`` is ``(n, d)`` scores for ``mse`` and ``(n,)`` log-ratios
    otherwise.  ``target`` may be an array of labels/targets or any object with
    ``y`` (and optionally ``r_lat``) attributes, e.g. an example or dataset.
    """
    spec = spec if isinstance(spec, LossSpec) else LossSpec(spec)
    y, r_lat = _targets(target, r_lat)
    pred = np.asarray(prediction, dtype=np.float64)
    if spec.kind == "mse":
        y = np.asarray(y, dtype=np.float64)
        if y.shape != pred.shape:
            raise InputShapeError(f"prediction {pred.shape} and target {y.shape} differ")
        diff = pred - y
        k = pred.shape[-1] if pred.ndim else 1
        return np.mean(diff ** 2, axis=-1), 2.0 * diff / k
    if spec.needs_r_lat:
        if r_lat is None:
            raise ConfigurationError(f"loss {spec.kind!r} needs r_lat in the examples")
        r_lat = np.asarray(r_lat, dtype=np.float64)
    if spec.is_latent:
        y = 1.0 / (1.0 + r_lat)
    elif y is None:
        raise ConfigurationError(f"loss {spec.kind!r} needs labels")
    else:
        y = np.asarray(y, dtype=np.float64)
    return _RATIO_FORMS[spec.base](pred, y, r_lat, counters)


def loss_value(spec, prediction, target=None, r_lat=None, counters=None):
    return loss_value_and_grad(spec, prediction, target, r_lat, counters)[0]


# ---------------------------------------------------------------- gradient statistics


@dataclass
class VarianceReport:
    base: str
    latent: str
    n: int
    mean_base: float
    mean_latent: float
    se_base: float
    se_latent: float
    var_base: float
    var_latent: float
    var_se_ratio: float

    @property
    def means_agree(self):
        return abs(self.mean_latent - self.mean_base) < 3.0 * np.hypot(self.se_base, self.se_latent)

    @property
    def variance_reduced(self):
        return self.var_latent <= self.var_base * (1.0 + 3.0 * self.var_se_ratio)

    @property
    def passed(self):
        return bool(self.means_agree and self.variance_reduced)


def _var_rel_se(g):
    v = g.var()
    if v == 0:
        return 0.0
    m4 = np.mean((g - g.mean()) ** 4)
    return np.sqrt(max(m4 - v ** 2, 0.0) / g.size) / v


def scaled_log_ratio_model(oracle, w=1.0):
    """One-weight model ``t = w ln r(x; theta0, theta1)``; ``w = 1`` is the exact ratio."""

    def model(ds):
        lr = oracle.log_ratio(ds.x, ds.theta0, ds.theta1)
        return w * lr, lr

    return model


def gradient_statistics(base, t, dt_dw, dataset):
    """Compare ``dL/dw`` for a base loss and its latent version on the same examples."""
    base = base if isinstance(base, LossSpec) else LossSpec(base)
    lat = latentify(base)
    _, gb = loss_value_and_grad(base, t, dataset.y, dataset.r_lat)
    _, gl = loss_value_and_grad(lat, t, r_lat=dataset.r_lat)
    gb, gl = gb * dt_dw, gl * dt_dw
    n = gb.size
    return VarianceReport(base.kind, lat.kind, n, float(gb.mean()), float(gl.mean()),
                          float(gb.std(ddof=1) / np.sqrt(n)), float(gl.std(ddof=1) / np.sqrt(n)),
                          float(gb.var(ddof=1)), float(gl.var(ddof=1)),
                          float(np.hypot(_var_rel_se(gb), _var_rel_se(gl))))


def check_variance_reduction(base, model, n, rng, oracle=None, pair_distribution=None):
    """Monte Carlo check that the latent loss keeps the mean gradient and lowers its variance.

    ``model(dataset)`` returns ``(t, dt/dw)`` per example for one designated
    weight ``w``.  Data come from ``oracle`` (default: the two-stage latent
    model) with pairs from ``pair_distribution`` (default: iid on [-1, 1)).
    """
    from .datagen import generate_ratio
    from .oracles import LatentTwoStage
    from .samplers import PairDistribution, PriorSpec

    oracle = LatentTwoStage() if oracle is None else oracle
    if pair_distribution is None:
        pair_distribution = PairDistribution("iid", PriorSpec((-1.0,), (1.0,)))
    ds = generate_ratio(oracle, pair_distribution, n, rng, with_latent=True)
    t, dt = model(ds)
    return gradient_statistics(base, np.asarray(t, float), np.asarray(dt, float), ds)


def new_loss_counters():
    return Counter()
