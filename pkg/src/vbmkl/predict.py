"""Predictive distributions and calibrated class probabilities.

Prediction is pure-functional over an immutable TrainedModel: per-kernel
score moments from the instance-weight posterior, decision-score moments
from the joint bias/kernel-weight posterior (plugging in the mean of the
per-kernel scores), and a two-sided probit class probability normalized
over the +1/-1 truncation regions.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr

__all__ = [
    "Prediction",
    "predict_g",
    "predict_f",
    "predict_proba",
    "predict",
    "selected_kernels",
    "format_predictions",
]


@dataclass
class Prediction:
    """Per-point predictive summary (batch: leading axis is the point)."""

    g_mean: np.ndarray
    g_var: np.ndarray | None
    f_mean: np.ndarray
    f_var: np.ndarray
    p_positive: np.ndarray

    @property
    def label(self):
        return np.where(np.asarray(self.f_mean) > 0, 1, -1)


def _as_batch(model, kx):
    """Normalize cross-kernel input to (P, T, N); report if it was single."""
    kx = np.asarray(kx, dtype=float)
    p = model.n_kernels
    n = model.posterior.a_mean.size
    if kx.ndim == 2:
        if kx.shape != (p, n):
            raise ValueError(
                f"cross-kernel block must be ({p}, {n}), got {kx.shape}"
            )
        return kx[:, None, :], True
    if kx.ndim == 3:
        if kx.shape[0] != p or kx.shape[2] != n:
            raise ValueError(
                f"cross-kernel array must be ({p}, T, {n}), got {kx.shape}"
            )
        return kx, False
    raise ValueError("cross kernels must be 2-D (one point) or 3-D (batch)")


def predict_g(model, kx):
    """Moments of the per-kernel scores for new point(s).

    Returns (g_mean, g_var), each (P,) for a single point or (T, P) for a
    batch.  g_var requires the full instance-weight covariance; models
    loaded without the sidecar raise.
    """
    kx, single = _as_batch(model, kx)
    post = model.posterior
    g_mean = np.einsum("ptn,n->tp", kx, post.a_mean)
    if post.a_cov is None:
        raise ValueError(
            "full instance-weight covariance unavailable "
            "(model saved without sidecar); exact g variances need it"
        )
    tmp = kx @ post.a_cov          # (P, T, N)
    g_var = 1.0 + np.einsum("ptn,ptn->tp", tmp, kx)
    if single:
        return g_mean[0], g_var[0]
    return g_mean, g_var


def _g_mean_only(model, kx):
    g_mean = np.einsum("ptn,n->tp", kx, model.posterior.a_mean)
    return g_mean


def predict_f(model, g_mean):
    """Decision-score moments given per-kernel score means.

    f_mean = be_mean . [1; g], f_var = 1 + [1; g]^T be_cov [1; g].
    Accepts a (P,) vector or a (T, P) batch.
    """
    g_mean = np.asarray(g_mean, dtype=float)
    single = g_mean.ndim == 1
    G = g_mean[None, :] if single else g_mean
    post = model.posterior
    ext = np.concatenate([np.ones((G.shape[0], 1)), G], axis=1)
    f_mean = ext @ post.be_mean
    f_var = 1.0 + np.einsum("ti,ij,tj->t", ext, post.be_cov, ext)
    if single:
        return float(f_mean[0]), float(f_var[0])
    return f_mean, f_var


def _proba_from_f(f_mean, f_var, nu):
    sd = np.sqrt(f_var)
    log_pos = log_ndtr((f_mean - nu) / sd)
    log_neg = log_ndtr((-f_mean - nu) / sd)
    # p+ / (p+ + p-) in log space; never NaN even when both sides underflow
    return expit(log_pos - log_neg)


def predict_proba(model, kx, propagate_g_var=False):
    """Probability of the +1 class for new point(s).

    The default plugs the mean of the per-kernel scores into the
    decision-score distribution.  ``propagate_g_var=True`` additionally
    widens f_var by sum_m <e_m^2> (g_var_m - 1) to account for score
    uncertainty (study option; needs the full covariance sidecar).
    """
    kx, single = _as_batch(model, kx)
    post = model.posterior
    if propagate_g_var:
        g_mean, g_var = predict_g(model, kx if not single else kx[:, 0, :])
        g_mean = np.atleast_2d(g_mean)
        g_var = np.atleast_2d(g_var)
    else:
        g_mean = _g_mean_only(model, kx)
        g_var = None
    f_mean, f_var = predict_f(model, g_mean)
    f_mean = np.atleast_1d(f_mean)
    f_var = np.atleast_1d(f_var)
    if propagate_g_var:
        e2 = post.e_mean ** 2 + np.diag(post.be_cov[1:, 1:])
        f_var = f_var + (g_var - 1.0) @ e2
    p = _proba_from_f(f_mean, f_var, model.nu)
    if single:
        return float(p[0])
    return p


def predict(model, kx, with_g_var=True):
    """Full Prediction record(s) for new point(s)."""
    kx, single = _as_batch(model, kx)
    if with_g_var:
        g_mean, g_var = predict_g(model, kx)
        g_mean = np.atleast_2d(g_mean)
        g_var = np.atleast_2d(g_var)
    else:
        g_mean = _g_mean_only(model, kx)
        g_var = None
    f_mean, f_var = predict_f(model, g_mean)
    f_mean = np.atleast_1d(f_mean)
    f_var = np.atleast_1d(f_var)
    p = _proba_from_f(f_mean, f_var, model.nu)
    if single:
        return Prediction(
            g_mean=g_mean[0],
            g_var=None if g_var is None else g_var[0],
            f_mean=float(f_mean[0]),
            f_var=float(f_var[0]),
            p_positive=float(p[0]),
        )
    return Prediction(g_mean=g_mean, g_var=g_var, f_mean=f_mean, f_var=f_var, p_positive=p)


def selected_kernels(model, threshold=None):
    """Kernels whose posterior weight magnitude clears the relative cut.

    Returns (count, indices) for |e_m| >= threshold * max_m |e_m|; the
    threshold defaults to the model's (1e-3 unless overridden at fit time).
    """
    thr = model.selection_threshold if threshold is None else threshold
    e_abs = np.abs(model.posterior.e_mean)
    top = e_abs.max()
    if top == 0.0:
        return 0, np.empty(0, dtype=int)
    idx = np.flatnonzero(e_abs >= thr * top)
    return int(idx.size), idx


def format_predictions(pred, delimiter="\t"):
    """Render batch predictions as delimited text, one row per point:
    f_mean, f_var, p_positive, predicted label."""
    f_mean = np.atleast_1d(pred.f_mean)
    f_var = np.atleast_1d(pred.f_var)
    p = np.atleast_1d(pred.p_positive)
    labels = np.where(f_mean > 0, 1, -1)
    lines = ["f_mean%sf_var%sp_positive%slabel" % (delimiter, delimiter, delimiter)]
    for i in range(f_mean.size):
        lines.append(
            delimiter.join(
                (repr(float(f_mean[i])), repr(float(f_var[i])), repr(float(p[i])), str(int(labels[i])))
            )
        )
    return "\n".join(lines) + "\n"
