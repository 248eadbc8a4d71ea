"""Training and evaluation datasets for score regression and ratio classification.

Datasets are columnar: each field is a numpy array whose first axis runs over
examples.  Indexing a dataset with an integer gives back a single example
record (:class:`ScoreExample` or :class:`RatioExample`).
"""

import io
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParseError, SchemaError, SchemaVersionError

SCHEMA_ID = "inferostatic-dataset"
SCHEMA_VERSION = 1
SCORE_TASKS = ("kse", "kse_alt")
RATIO_TASKS = ("klre", "carl", "ratio")


@dataclass
class ScoreExample:
    x: np.ndarray
    theta: np.ndarray
    y: np.ndarray
    weight: float = 1.0


@dataclass
class RatioExample:
    x: np.ndarray
    theta0: np.ndarray
    theta1: np.ndarray
    y: int
    r_lat: float = None


@dataclass
class ScoreDataset:
    """Score-regression examples: target ``y_i = u_i / (lam_i sigma^2)`` (linear psi)."""

    x: np.ndarray
    theta: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    sigma_sq: float
    task: str = "kse"
    counters: Counter = field(default_factory=Counter)

    kind = "score"

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, i):
        return ScoreExample(self.x[i], self.theta[i], self.y[i], float(self.weight[i]))

    def subset(self, idx):
        return ScoreDataset(self.x[idx], self.theta[idx], self.y[idx], self.weight[idx], self.u[idx],
                            self.lam[idx], self.sigma_sq, self.task, Counter(self.counters))

    @property
    def d(self):
        return self.theta.shape[1]

    @property
    def D(self):
        return self.x.shape[1]

    def columns(self):
        return {"x": self.x, "theta": self.theta, "y": self.y, "weight": self.weight[:, None],
                "u": self.u, "lam": self.lam}


@dataclass
class RatioDataset:
    """Labelled ``(x, theta0, theta1, y)``; ``y = 0`` means ``x ~ p(. ; theta0)``."""

    x: np.ndarray
    theta0: np.ndarray
    theta1: np.ndarray
    y: np.ndarray
    z: np.ndarray = None
    r_lat: np.ndarray = None
    task: str = "ratio"
    counters: Counter = field(default_factory=Counter)

    kind = "ratio"

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, i):
        r = None if self.r_lat is None else float(self.r_lat[i])
        return RatioExample(self.x[i], self.theta0[i], self.theta1[i], int(self.y[i]), r)

    def subset(self, idx):
        pick = (lambda a: None if a is None else a[idx])
        return RatioDataset(self.x[idx], self.theta0[idx], self.theta1[idx], self.y[idx], pick(self.z),
                            pick(self.r_lat), self.task, Counter(self.counters))

    @property
    def d(self):
        return self.theta0.shape[1]

    @property
    def D(self):
        return self.x.shape[1]

    @property
    def has_latent(self):
        return self.r_lat is not None

    def columns(self):
        cols = {"x": self.x, "theta0": self.theta0, "theta1": self.theta1, "y": self.y[:, None].astype(float)}
        if self.z is not None:
            cols["z"] = self.z
        if self.r_lat is not None:
            cols["r_lat"] = self.r_lat[:, None]
        return cols


@dataclass
class EventDataset:
    """Plain events drawn at known parameters (inputs to inference and reweighting)."""

    x: np.ndarray
    theta: np.ndarray
    task: str = "events"
    counters: Counter = field(default_factory=Counter)

    kind = "events"

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        return EventDataset(self.x[idx], self.theta[idx], self.task, Counter(self.counters))

    def columns(self):
        return {"x": self.x, "theta": self.theta}


def _valid_rows(oracle, theta):
    return np.asarray(oracle.valid_params(theta), dtype=bool)


def generate_kse(oracle, prior, kernel, n, rng, counters=None):
    """Draw ``theta ~ prior``, ``u ~ K``, ``x ~ p(. ; theta + lam u)``; target ``u / (lam sigma^2)``.

    Rows whose shifted parameter falls outside the oracle's domain are redrawn
    (counted under ``domain_redraws``).
    """
    if n <= 0:
        raise ConfigurationError("dataset size must be positive")
    counters = Counter() if counters is None else counters
    d = prior.dim
    theta = np.empty((n, d))
    u = np.empty((n, d))
    pending = np.arange(n)
    while pending.size:
        th = prior.sample(pending.size, rng)
        uu = kernel.sample_u(pending.size, d, rng)
        ok = _valid_rows(oracle, th + kernel.lam(th) * uu)
        theta[pending[ok]] = th[ok]
        u[pending[ok]] = uu[ok]
        counters["domain_redraws"] += int((~ok).sum())
        pending = pending[~ok]
    lam = np.array(kernel.lam(theta))
    x = oracle.sample(theta + lam * u, rng, counters)
    y = u / (lam * kernel.sigma_sq)
    return ScoreDataset(x, theta, y, np.ones(n), u, lam, kernel.sigma_sq, "kse", counters)


def generate_kse_alt(oracle, prior, kernel, n, rng, pool=None, counters=None):
    """Weighted variant: events are produced first and the parameter is moved afterwards.

    Draw ``theta' ~ prior`` and ``x ~ p(. ; theta')`` (or take them from
    ``pool = (theta', x)``), then ``eps ~ K_{x, theta'}`` and
    ``theta = theta' - eps``.  Target and weight are

        y_i = (lam_i(x, theta)^2 / lam_i(x, theta + eps)^2) eps_i / (lam_i(x, theta)^2 sigma^2)
        w   = prior(theta) / prior(theta + eps)

    Examples whose weight vanishes or is undefined are dropped and counted.  With
    a pool, one candidate is made per pool row, so fewer than ``len(pool)`` rows
    may come back.
    """
    counters = Counter() if counters is None else counters
    d = prior.dim
    if pool is not None:
        theta_p, x = (np.asarray(a, dtype=np.float64) for a in pool)
    else:
        if n <= 0:
            raise ConfigurationError("dataset size must be positive")
        theta_p = prior.sample(n, rng)
        x = oracle.sample(theta_p, rng, counters)
    u = kernel.sample_u(theta_p.shape[0], d, rng)
    lam_p = np.array(kernel.lam(theta_p, x))
    eps = lam_p * u
    theta = theta_p - eps
    den = np.asarray(prior.density(theta_p), dtype=np.float64)
    num = np.asarray(prior.density(theta), dtype=np.float64)
    bad_den = den <= 0
    zero_w = (num <= 0) & ~bad_den
    counters["zero_prior_drops"] += int(bad_den.sum())
    counters["zero_weight_drops"] += int(zero_w.sum())
    keep = ~(bad_den | zero_w)
    theta, theta_p, x, u, eps, lam_p = theta[keep], theta_p[keep], x[keep], u[keep], eps[keep], lam_p[keep]
    weight = num[keep] / den[keep]
    lam = np.array(kernel.lam(theta, x))
    y = (lam ** 2 / lam_p ** 2) * eps / (lam ** 2 * kernel.sigma_sq)
    return ScoreDataset(x, theta, y, weight, u, lam, kernel.sigma_sq, "kse_alt", counters)


def generate_ratio(oracle, pair_distribution, n, rng, with_latent=False, task="ratio", counters=None):
    """Balanced classification data: ``y ~ Bernoulli(1/2)`` and ``x ~ p(. ; theta_y)``."""
    if n <= 0:
        raise ConfigurationError("dataset size must be positive")
    if with_latent and not oracle.can_latent_ratio:
        raise ConfigurationError(f"oracle {oracle.kind!r} cannot provide latent ratios")
    counters = Counter() if counters is None else counters
    d = pair_distribution.prior.dim
    th0, th1 = np.empty((n, d)), np.empty((n, d))
    pending = np.arange(n)
    while pending.size:
        a, b = pair_distribution.sample(pending.size, rng)
        ok = _valid_rows(oracle, a) & _valid_rows(oracle, b)
        th0[pending[ok]] = a[ok]
        th1[pending[ok]] = b[ok]
        counters["domain_redraws"] += int((~ok).sum())
        pending = pending[~ok]
    y = rng.integers(0, 2, size=n)
    theta_y = np.where(y[:, None] == 0, th0, th1)
    if with_latent:
        x, z = oracle.sample_latent(theta_y, rng, counters)
        r_lat = oracle.latent_ratio(z, th0, th1)
        return RatioDataset(x, th0, th1, y, z, r_lat, task, counters)
    x = oracle.sample(theta_y, rng, counters)
    return RatioDataset(x, th0, th1, y, task=task, counters=counters)


def generate_events(oracle, theta, n, rng, counters=None):
    counters = Counter() if counters is None else counters
    theta = np.tile(np.asarray(theta, dtype=np.float64), (n, 1))
    return EventDataset(oracle.sample(theta, rng, counters), theta, "events", counters)


# ---------------------------------------------------------------------- files


def _column_names(cols):
    names = []
    for key, arr in cols.items():
        if arr.shape[1] == 1 and key in ("weight", "y", "r_lat"):
            names.append(key)
        else:
            names.extend(f"{key}_{i}" for i in range(arr.shape[1]))
    return names


def dataset_save(dataset, path):
    """Write a header line, a column-name line, then one row per example (17 significant digits)."""
    cols = dataset.columns()
    table = np.hstack([np.asarray(a, dtype=np.float64) for a in cols.values()])
    meta = {"schema": SCHEMA_ID, "version": SCHEMA_VERSION, "kind": dataset.kind, "task": dataset.task,
            "rows": len(dataset)}
    if dataset.kind == "score":
        meta["sigma_sq"] = repr(float(dataset.sigma_sq))
    header = "# " + " ".join(f"{k}={v}" for k, v in meta.items())
    buf = io.StringIO()
    buf.write(header + "\n")
    buf.write(",".join(_column_names(cols)) + "\n")
    np.savetxt(buf, table, fmt="%.17g", delimiter=",")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _parse_header(line):
    if not line.startswith("#"):
        raise ParseError("missing dataset header", line=1)
    meta = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ParseError(f"malformed header token {tok!r}", line=1)
        meta[key] = val
    if meta.get("schema") != SCHEMA_ID:
        raise SchemaError(f"not a dataset file (schema={meta.get('schema')!r})")
    if meta.get("version") != str(SCHEMA_VERSION):
        raise SchemaVersionError(f"dataset schema version {meta.get('version')!r}, expected {SCHEMA_VERSION}")
    for key in ("kind", "task", "rows"):
        if key not in meta:
            raise ParseError(f"header lacks {key!r}", line=1)
    return meta


def _group(names, table, key):
    idx = [i for i, nm in enumerate(names) if nm == key or nm.rsplit("_", 1)[0] == key and
           nm.rsplit("_", 1)[1].isdigit()]
    if not idx:
        return None
    return table[:, idx]


def dataset_load(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    meta = _parse_header(lines[0])
    if len(lines) < 2:
        raise ParseError("missing column-name line", line=2)
    names = lines[1].split(",")
    rows = []
    for lineno, text in enumerate(lines[2:], start=3):
        if not text.strip():
            continue
        parts = text.split(",")
        if len(parts) != len(names):
            raise ParseError(f"expected {len(names)} fields, found {len(parts)}", line=lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    if table.shape[0] != int(meta["rows"]):
        raise ParseError(f"header announces {meta['rows']} rows, file holds {table.shape[0]}")
    kind, task = meta["kind"], meta["task"]
    if kind == "score":
        weight = _group(names, table, "weight")
        return ScoreDataset(_group(names, table, "x"), _group(names, table, "theta"), _group(names, table, "y"),
                            weight[:, 0], _group(names, table, "u"), _group(names, table, "lam"),
                            float(meta["sigma_sq"]), task)
    if kind == "ratio":
        r_lat = _group(names, table, "r_lat")
        return RatioDataset(_group(names, table, "x"), _group(names, table, "theta0"),
                            _group(names, table, "theta1"), _group(names, table, "y")[:, 0].astype(int),
                            _group(names, table, "z"), None if r_lat is None else r_lat[:, 0], task)
    if kind == "events":
        return EventDataset(_group(names, table, "x"), _group(names, table, "theta"), task)
    raise SchemaError(f"unknown dataset kind {kind!r}")


def saturation_fraction(pred, lam, sigma_sq, threshold=0.9):
    """Share of score outputs with ``|s_i| >= threshold / (lam_i sigma^2)``.

    With the delta kernel every target sits exactly on that bound, so
    predictions approaching it mean the kernel is too wide for the score
    being learned (high bias).
    """
    bound = 1.0 / (np.asarray(lam) * sigma_sq)
    return float(np.mean(np.abs(pred) >= threshold * bound))
