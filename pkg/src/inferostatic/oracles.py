"""Analytic models with exact log-density, score and likelihood ratio.

Each oracle works on row batches: ``theta`` is ``(n, d)``, events are
``(n, D)``.  They serve both as simulators for data generation and as the
ground truth that trained estimators are measured against.
"""

from collections import Counter

import numpy as np

from .errors import BoundaryError, ConfigurationError, DomainError
from .special import digamma, lgamma

_LOG_2PI = np.log(2.0 * np.pi)


def gamma_sample(shape, rng):
    """Unit-scale gamma draws, one per entry of ``shape`` (Marsaglia-Tsang).

    Shapes below one use the boost ``G(a) = G(a + 1) * U**(1/a)``.
    """
    shape = np.asarray(shape, dtype=np.float64)
    flat = shape.ravel()
    if np.any(~(flat > 0)):
        raise DomainError("gamma shape parameters must be positive")
    boost = flat < 1.0
    a = np.where(boost, flat + 1.0, flat)
    dd = a - 1.0 / 3.0
    cc = 1.0 / np.sqrt(9.0 * dd)
    out = np.empty_like(flat)
    pending = np.arange(flat.size)
    while pending.size:
        z = rng.standard_normal(pending.size)
        u = rng.random(pending.size)
        v = (1.0 + cc[pending] * z) ** 3
        d_p = dd[pending]
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (v > 0) & (np.log(u) < 0.5 * z * z + d_p - d_p * v + d_p * np.log(v))
        out[pending[ok]] = d_p[ok] * v[ok]
        pending = pending[~ok]
    if np.any(boost):
        idx = np.flatnonzero(boost)
        out[idx] *= rng.random(idx.size) ** (1.0 / flat[idx])
    return out.reshape(shape.shape)


class Oracle:
    kind = "oracle"
    d = 0
    D = 0
    can_log_density = True
    can_score = True
    can_latent_ratio = False

    def _theta(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        if theta.shape[-1] != self.d:
            raise DomainError(f"{self.kind} expects {self.d}-dim parameters, got {theta.shape}")
        return theta

    def valid_params(self, theta):
        return np.ones(np.atleast_2d(theta).shape[0], dtype=bool)

    def log_ratio(self, x, theta0, theta1):
        """Exact ``ln p(x; theta0) - ln p(x; theta1)``."""
        return self.log_density(x, theta0) - self.log_density(x, theta1)

    def describe(self):
        return {"kind": self.kind}


class Dirichlet3(Oracle):
    """Three-component Dirichlet distribution over the 2-simplex."""

    kind = "dirichlet3"
    d = 3
    D = 3

    def valid_params(self, theta):
        return np.all(np.atleast_2d(theta) > 0, axis=-1)

    def sample(self, theta, rng, counters=None):
        theta = self._theta(theta)
        if np.any(theta <= 0):
            raise DomainError("Dirichlet parameters must be positive")
        x = np.empty_like(theta)
        pending = np.arange(theta.shape[0])
        while pending.size:
            g = gamma_sample(theta[pending], rng)
            xs = g / g.sum(axis=1, keepdims=True)
            good = np.all(xs > 0, axis=1) & np.all(np.isfinite(xs), axis=1)
            x[pending[good]] = xs[good]
            if counters is not None and not np.all(good):
                counters["boundary_redraws"] += int((~good).sum())
            pending = pending[~good]
        return x

    @staticmethod
    def _check_interior(x, theta):
        on_edge = x <= 0
        if np.any(on_edge & (theta < 1)):
            raise BoundaryError("event on the simplex boundary where the density is infinite")
        return on_edge

    def log_density(self, x, theta):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        theta = self._theta(theta)
        if np.any(theta <= 0):
            raise DomainError("Dirichlet parameters must be positive")
        on_edge = self._check_interior(x, theta)
        norm = lgamma(theta.sum(axis=1)) - lgamma(theta).sum(axis=1)
        with np.errstate(divide="ignore"):
            logx = np.log(x)
        terms = np.where(on_edge & (theta == 1), 0.0, (theta - 1.0) * logx)
        return norm + terms.sum(axis=1)

    def score(self, x, theta):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        theta = self._theta(theta)
        if np.any(x <= 0):
            raise BoundaryError("score is undefined on the simplex boundary")
        return np.log(x) + digamma(theta.sum(axis=1))[:, None] - digamma(theta)


class Gaussian1D(Oracle):
    """Unit-variance normal with the mean as the only parameter."""

    kind = "gaussian1d"
    d = 1
    D = 1

    def sample(self, theta, rng, counters=None):
        theta = self._theta(theta)
        return theta + rng.standard_normal(theta.shape)

    def log_density(self, x, theta):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        theta = self._theta(theta)
        return (-0.5 * (x - theta) ** 2 - 0.5 * _LOG_2PI)[:, 0]

    def score(self, x, theta):
        return np.atleast_2d(np.asarray(x, dtype=np.float64)) - self._theta(theta)


def gaussian1d_ksa_closed_form(x, theta, lam):
    """Kernel score approximation for :class:`Gaussian1D` with the delta kernel and linear psi.

    ``(1/lam) * (p(x; theta+lam) - p(x; theta-lam)) / (p(x; theta+lam) + p(x; theta-lam))``,
    evaluated through log-densities so it stays finite far in the tails.
    """
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    lp_plus = -0.5 * (x - theta - lam) ** 2
    lp_minus = -0.5 * (x - theta + lam) ** 2
    return np.tanh(0.5 * (lp_plus - lp_minus)) / lam


def delta_kernel_ksa(oracle, x, theta, lam):
    """Exact kernel score approximation for the delta kernel and linear psi.

    ``E[u | x, theta] / lam`` with ``u`` uniform over the ``2^d`` sign vectors,
    weighted by ``p(x; theta + lam u)``.  Works for any oracle with a log-density.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    theta = oracle._theta(theta)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), theta.shape)
    d = theta.shape[1]
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T
    logp = np.stack([oracle.log_density(x, theta + lam * u) for u in signs], axis=1)
    w = np.exp(logp - logp.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return (w @ signs) / lam


class LatentTwoStage(Oracle):
    """Two-step simulator: ``z ~ N(theta, 1)``, then ``x = z + N(0, 1)``.

    The observable marginal is ``N(theta, 2)``; the joint ratio only needs the
    first step: ``r_lat = exp((theta0 - theta1) z - (theta0^2 - theta1^2) / 2)``.
    """

    kind = "latent_two_stage"
    d = 1
    D = 1
    can_latent_ratio = True

    def sample_latent(self, theta, rng, counters=None):
        theta = self._theta(theta)
        z = theta + rng.standard_normal(theta.shape)
        x = z + rng.standard_normal(theta.shape)
        return x, z

    def sample(self, theta, rng, counters=None):
        return self.sample_latent(theta, rng, counters)[0]

    def log_density(self, x, theta):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        theta = self._theta(theta)
        return (-0.25 * (x - theta) ** 2 - 0.5 * np.log(4.0 * np.pi))[:, 0]

    def score(self, x, theta):
        return 0.5 * (np.atleast_2d(np.asarray(x, dtype=np.float64)) - self._theta(theta))

    def latent_log_ratio(self, z, theta0, theta1):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        t0, t1 = self._theta(theta0), self._theta(theta1)
        return ((t0 - t1) * z - 0.5 * (t0 ** 2 - t1 ** 2))[:, 0]

    def latent_ratio(self, z, theta0, theta1):
        return np.exp(self.latent_log_ratio(z, theta0, theta1))


ORACLES = {cls.kind: cls for cls in (Dirichlet3, Gaussian1D, LatentTwoStage)}


def make_oracle(kind):
    try:
        return ORACLES[kind]()
    except KeyError:
        raise ConfigurationError(f"unknown oracle {kind!r}; expected one of {sorted(ORACLES)}") from None


def new_counters():
    return Counter()


# functional aliases
def dirichlet_sample(theta, rng):
    return Dirichlet3().sample(theta, rng)


def dirichlet_log_density(x, theta):
    return Dirichlet3().log_density(x, theta)


def dirichlet_score(x, theta):
    return Dirichlet3().score(x, theta)
