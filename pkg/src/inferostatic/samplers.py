"""Kernels, difference functions, priors, parameter-pair distributions and RNG streams.

All samplers are vectorised: they draw ``n`` rows at once and return arrays
of shape ``(n, d)``.

RNG convention: every random stream is a Philox (counter-based) generator
keyed by ``(master_seed, *keys)`` through :class:`numpy.random.SeedSequence`
spawn keys.  Two streams with different key tuples are independent, so work
can be split across processes without sharing a generator.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateWeightError

KERNEL_KINDS = ("rectangular", "delta")
PAIR_KINDS = ("iid", "reference", "kernel")


def make_rng(seed, *keys):
    """Independent Philox generator for the stream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class KernelSpec:
    """Symmetric product kernel ``K_theta(eps)`` built from a standard-width kernel.

    ``widths`` is either a constant (scalar or length-d sequence) or a callable
    ``widths(theta, x)`` returning an ``(n, d)`` array of positive widths; ``x``
    may be ``None`` when the widths depend on ``theta`` only.
    """

    kind: str = "delta"
    widths: object = 0.25

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ConfigurationError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if not callable(self.widths) and np.any(np.asarray(self.widths, dtype=float) <= 0):
            raise ConfigurationError("kernel widths must be strictly positive")

    @property
    def sigma_sq(self):
        """Variance of each standard-width coordinate ``u_i``."""
        return 1.0 / 3.0 if self.kind == "rectangular" else 1.0

    @property
    def constant_widths(self):
        return not callable(self.widths)

    def lam(self, theta, x=None):
        theta = np.atleast_2d(theta)
        if callable(self.widths):
            lam = np.asarray(self.widths(theta, x), dtype=np.float64)
            lam = np.broadcast_to(lam, theta.shape)
            if np.any(lam <= 0):
                raise ConfigurationError("width function returned a non-positive width")
            return lam
        return np.broadcast_to(np.asarray(self.widths, dtype=np.float64), theta.shape)

    def sample_u(self, n, d, rng):
        return sample_u(self, rng, n, d)

    def second_moment(self, lam):
        """``E[eps_i^2]`` under ``K_theta``, i.e. ``lam_i^2 sigma_i^2``."""
        return np.asarray(lam) ** 2 * self.sigma_sq


def sample_u(kernel, rng, n, d):
    """Standard-width draws: uniform on ``[-1, 1)`` or equiprobable signs."""
    if kernel.kind == "rectangular":
        return rng.uniform(-1.0, 1.0, size=(n, d))
    return 2.0 * rng.integers(0, 2, size=(n, d)) - 1.0


def linear_psi(eps):
    """Linear difference function: ``psi_i(eps) = eps_i``."""
    return np.asarray(eps, dtype=np.float64)


def reflect(eps, axis):
    out = np.array(eps, dtype=np.float64)
    out[..., axis] = -out[..., axis]
    return out


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform prior on the box ``[lower, upper)``."""

    lower: tuple
    upper: tuple
    kind: str = "box_uniform"

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("prior bounds must be 1-D and of equal length")
        if np.any(lo >= hi):
            raise ConfigurationError("prior requires lower < upper in every dimension")
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    @property
    def dim(self):
        return len(self.lower)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def sample(self, n, rng):
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def contains(self, theta):
        theta = np.atleast_2d(theta)
        return np.all((theta >= self.lower) & (theta < self.upper), axis=-1)

    def density(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        inside = self.contains(theta)
        dens = np.where(inside, 1.0 / self.volume, 0.0)
        return dens[0] if theta.ndim == 1 else dens


def prior_sample(prior, n, rng):
    return prior.sample(n, rng)


def prior_density(prior, theta):
    return prior.density(theta)


def pair_weight(theta, eps, prior):
    """``prior(theta) / prior(theta + eps)``; raises when the denominator vanishes."""
    num = np.asarray(prior.density(theta), dtype=np.float64)
    den = np.asarray(prior.density(np.asarray(theta) + np.asarray(eps)), dtype=np.float64)
    if np.any(den <= 0):
        raise DegenerateWeightError("prior density is zero at theta + eps")
    return num / den


@dataclass(frozen=True)
class PairDistribution:
    """Joint distribution of ``(theta0, theta1)``.

    * ``iid``: both drawn independently from the prior.
    * ``reference``: ``theta0`` from the prior, ``theta1`` fixed to ``theta_ref``.
    * ``kernel``: symmetrised kernel pairs; an anchor is drawn from the prior,
      its partner is ``anchor + eps`` with ``eps ~ K_anchor``, and the anchor's
      slot (0 or 1) is chosen uniformly.  Partners may leave the prior box.
    """

    kind: str
    prior: PriorSpec
    theta_ref: tuple = None
    kernel: KernelSpec = field(default=None)

    def __post_init__(self):
        if self.kind not in PAIR_KINDS:
            raise ConfigurationError(f"unknown pair kind {self.kind!r}; expected one of {PAIR_KINDS}")
        if self.kind == "reference" and self.theta_ref is None:
            raise ConfigurationError("reference pairs need theta_ref")
        if self.kind == "kernel" and self.kernel is None:
            raise ConfigurationError("kernel pairs need a kernel")

    def sample(self, n, rng):
        d = self.prior.dim
        if self.kind == "iid":
            return self.prior.sample(n, rng), self.prior.sample(n, rng)
        if self.kind == "reference":
            th0 = self.prior.sample(n, rng)
            return th0, np.tile(np.asarray(self.theta_ref, dtype=np.float64), (n, 1))
        anchor = self.prior.sample(n, rng)
        eps = self.kernel.lam(anchor) * sample_u(self.kernel, rng, n, d)
        partner = anchor + eps
        swap = rng.integers(0, 2, size=n).astype(bool)[:, None]
        return np.where(swap, partner, anchor), np.where(swap, anchor, partner)


def sample_pair(pd, rng, n=1):
    return pd.sample(n, rng)
