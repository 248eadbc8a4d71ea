"""Vectorised log-gamma and digamma for positive real arguments."""

import numpy as np

from .errors import DomainError

EULER_GAMMA = 0.57721566490153286061

# Lanczos approximation, g = 7, nine coefficients.
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

# Bernoulli-number terms B_2k / (2k) of the digamma asymptotic series.
_DIGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_DIGAMMA_SHIFT = 10.0


def _lanczos(x):
    # valid for x >= 0.5
    z = x - 1.0
    acc = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        acc += _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def lgamma(x):
    """Natural log of the gamma function for ``x > 0``.

    Arguments below 0.5 go through the reflection formula.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(~(x > 0)):
        raise DomainError("lgamma is only implemented for positive arguments")
    out = np.empty_like(x)
    big = x >= 0.5
    out[big] = _lanczos(x[big])
    small = ~big
    if np.any(small):
        xs = x[small]
        out[small] = np.log(np.pi / np.abs(np.sin(np.pi * xs))) - _lanczos(1.0 - xs)
    return out[0] if scalar else out


def digamma(x):
    """Derivative of :func:`lgamma` for ``x > 0``."""
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.array(np.atleast_1d(x), dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("digamma is only implemented for positive arguments")
    acc = np.zeros_like(x)
    mask = x < _DIGAMMA_SHIFT
    while np.any(mask):
        acc[mask] -= 1.0 / x[mask]
        x[mask] += 1.0
        mask = x < _DIGAMMA_SHIFT
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    power = inv2.copy()
    for c in _DIGAMMA_SERIES:
        series += c * power
        power *= inv2
    out = acc + np.log(x) - 0.5 / x - series
    return out[0] if scalar else out
