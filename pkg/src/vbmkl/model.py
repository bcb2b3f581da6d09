"""Textual model persistence with an optional binary covariance sidecar.

The main file is JSON: version, hyperparameters, and the named arrays a
prediction needs (instance-weight mean and covariance diagonal, joint
bias/kernel-weight mean and covariance, the gamma factor parameters and the
kernel names).  The full instance-weight covariance, needed for exact
per-kernel predictive variances, is large (N x N) and goes into a ``.npy``
sidecar next to the main file unless disabled.
"""

import json
import os

import numpy as np

from .engine import HyperParams, PosteriorState, TrainedModel

__all__ = ["save_model", "load_model", "ModelFormatError"]

_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for unreadable or wrong-version model files."""


def _sidecar_path(path):
    return str(path) + ".acov.npy"


def save_model(model, path, full_cov=True):
    """Write a TrainedModel; returns the list of files written."""
    post = model.posterior
    hp = post.hp
    doc = {
        "format_version": _FORMAT_VERSION,
        "hyperparams": {
            "alpha_lambda": hp.alpha_lambda,
            "beta_lambda": hp.beta_lambda,
            "alpha_gamma": hp.alpha_gamma,
            "beta_gamma": hp.beta_gamma,
            "alpha_omega": hp.alpha_omega,
            "beta_omega": hp.beta_omega,
            "nu": hp.nu,
            "max_iterations": hp.max_iterations,
            "elbo_rel_tol": hp.elbo_rel_tol,
        },
        "nu": model.nu,
        "selection_threshold": model.selection_threshold,
        "iterations_run": model.iterations_run,
        "kernel_names": list(model.kernel_names),
        "arrays": {
            "a_mean": post.a_mean.tolist(),
            "a_cov_diag": np.diag(post.a_cov).tolist(),
            "be_mean": post.be_mean.tolist(),
            "be_cov": post.be_cov.tolist(),
            "lambda_shape": post.lambda_shape.tolist(),
            "lambda_scale": post.lambda_scale.tolist(),
            "gamma_shape": post.gamma_shape,
            "gamma_scale": post.gamma_scale,
            "omega_shape": post.omega_shape.tolist(),
            "omega_scale": post.omega_scale.tolist(),
        },
        "elbo_trace": [float(v) for v in post.elbo_trace],
        "a_cov_sidecar": bool(full_cov),
    }
    written = [str(path)]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    if full_cov:
        np.save(_sidecar_path(path), post.a_cov)
        written.append(_sidecar_path(path))
    return written


def load_model(path):
    """Read a model file back into a TrainedModel.

    The returned posterior carries only the persisted factors; training
    internals (per-kernel score matrix, decision-score moments, kernel
    cache) are absent.  Without the covariance sidecar, ``a_cov`` is None
    and only its diagonal is available.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a model file: {exc}") from exc
    version = doc.get("format_version")
    if version != _FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")

    arrays = doc["arrays"]
    a_cov = None
    if doc.get("a_cov_sidecar") and os.path.exists(_sidecar_path(path)):
        a_cov = np.load(_sidecar_path(path))
    n = len(arrays["a_mean"])
    p = len(doc["kernel_names"])
    hp = HyperParams(**doc["hyperparams"])
    post = PosteriorState(
        lambda_shape=np.asarray(arrays["lambda_shape"], dtype=float),
        lambda_scale=np.asarray(arrays["lambda_scale"], dtype=float),
        a_mean=np.asarray(arrays["a_mean"], dtype=float),
        a_cov=a_cov,
        G_mean=None,
        G_cov=None,
        gamma_shape=float(arrays["gamma_shape"]),
        gamma_scale=float(arrays["gamma_scale"]),
        omega_shape=np.asarray(arrays["omega_shape"], dtype=float),
        omega_scale=np.asarray(arrays["omega_scale"], dtype=float),
        be_mean=np.asarray(arrays["be_mean"], dtype=float),
        be_cov=np.asarray(arrays["be_cov"], dtype=float),
        f_mu=None,
        f_mean=None,
        f_var=None,
        f_logz=None,
        kernels=np.empty((p, 0, 0)),
        y=np.empty(n),
        hp=hp,
        cached_KK=None,
        elbo_trace=list(doc.get("elbo_trace", [])),
    )
    model = TrainedModel(
        posterior=post,
        kernel_names=list(doc["kernel_names"]),
        nu=float(doc["nu"]),
        selection_threshold=float(doc["selection_threshold"]),
        iterations_run=int(doc.get("iterations_run", 0)),
        meta={"a_cov_diag": np.asarray(arrays["a_cov_diag"], dtype=float)},
    )
    return model
