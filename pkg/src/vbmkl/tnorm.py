"""Moments of unit-variance truncated normal distributions.

The classifier couples latent decision scores to labels through the
truncation rule ``f * y > nu`` on a normal with unit pre-truncation
variance.  Everything the inference engine and the ELBO need from that
distribution (mean, variance, log normalizer) is computed here with the
scaled complementary error function so that deep truncations (standardized
offsets up to several hundred) neither overflow nor collapse to 0/inf.
"""

import numpy as np
from scipy.special import erfcx, log_ndtr

__all__ = ["truncated_normal_moments"]

_SQRT_2 = np.sqrt(2.0)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)

# Below this standardized offset the truncation is so far in the tail that
# the survival probability is 1 to machine precision; the erfcx route would
# overflow there (erfcx(-x) ~ 2*exp(x^2)).
_DIRECT_BRANCH = -20.0


def _hazard(z):
    """phi(z) / (1 - Phi(z)), stable over the whole real line."""
    z = np.asarray(z, dtype=float)
    deep = z < _DIRECT_BRANCH
    # survival probability is 1 - O(1e-88) on the deep branch; dividing by
    # it would be a no-op, so use the density alone there
    zd = np.minimum(z, _DIRECT_BRANCH)
    direct = np.exp(-0.5 * zd * zd) / np.sqrt(2.0 * np.pi)
    zr = np.maximum(z, _DIRECT_BRANCH)
    scaled = _SQRT_2_OVER_PI / erfcx(zr / _SQRT_2)
    return np.where(deep, direct, scaled)


def truncated_normal_moments(mu, y, nu):
    """Mean, variance and log partition of TN(mu, 1) restricted to f*y > nu.

    Parameters
    ----------
    mu : float or ndarray
        Pre-truncation mean(s).
    y : int or ndarray
        Side of the truncation, +1 or -1 per element.
    nu : float
        Nonnegative truncation offset (margin).

    Returns
    -------
    mean, variance, log_partition : float or ndarray
        ``log_partition`` is ``log P(f*y > nu)`` under N(mu, 1).

    With z = nu - y*mu and h = phi(z)/(1 - Phi(z)):
    mean = mu + y*h, variance = 1 + z*h - h**2, log_partition = log Phi(-z).
    """
    mu_a = np.asarray(mu, dtype=float)
    y_a = np.asarray(y, dtype=float)
    scalar = mu_a.ndim == 0 and y_a.ndim == 0
    z = nu - y_a * mu_a
    h = _hazard(z)
    mean = mu_a + y_a * h
    variance = 1.0 + z * h - h * h
    log_partition = log_ndtr(-z)
    if scalar:
        return float(mean), float(variance), float(log_partition)
    return mean, variance, log_partition
