"""Multiclass classification: one-vs-all and shared-kernel-weights training.

One-vs-all trains K independent binary models.  The shared-weights variant
keeps per-class instance weights, scores, biases and decision scores, but a
single kernel-weight vector couples all classes through one joint Gaussian
factor over (b_1 .. b_K, e).  Its precision assembles the per-class bias
entries gamma_c + N on the diagonal, the per-class coupling columns
G_c . 1, and diag(omega) + sum_c <G_c G_c^T> on the weight block, which is
the blockwise extension of the binary joint factor.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from . import engine
from .engine import HyperParams, _gamma_entropy, _gamma_prior_term, _spd_inverse, _tn_entropy
from .predict import predict_proba

__all__ = [
    "MulticlassModel",
    "encode_labels",
    "fit_one_vs_all",
    "fit_shared_weights",
    "predict_multiclass",
    "save_multiclass",
    "load_multiclass",
]

_LOG_2PI = np.log(2.0 * np.pi)
_MC_FORMAT_VERSION = 1


def encode_labels(labels):
    """Map class tags to (class_names, Y) with Y[c] the one-vs-all +/-1 row.

    Classes are indexed in first-appearance order.
    """
    labels = np.asarray(labels)
    names = []
    seen = {}
    for v in labels.tolist():
        if v not in seen:
            seen[v] = len(names)
            names.append(v)
    if len(names) < 2:
        raise ValueError("need at least two classes")
    codes = np.asarray([seen[v] for v in labels.tolist()])
    Y = np.where(codes[None, :] == np.arange(len(names))[:, None], 1, -1)
    return [str(v) for v in names], Y


@dataclass
class MulticlassModel:
    """K-class model in either mode.

    ``binary_models`` holds K TrainedModels in one-vs-all mode.  In
    shared-weights mode the prediction surface is the per-class instance
    weights and biases plus the single kernel-weight vector.
    """

    mode: str
    class_names: list
    kernel_names: list
    nu: float
    binary_models: list | None = None
    a_means: np.ndarray | None = None   # (K, N)
    b_means: np.ndarray | None = None   # (K,)
    e_mean: np.ndarray | None = None    # (P,)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("one-vs-all", "shared-weights"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "one-vs-all" and not self.binary_models:
            raise ValueError("one-vs-all model requires per-class binary models")
        if self.mode == "shared-weights" and self.e_mean is None:
            raise ValueError("shared-weights model requires the joint weight vector")

    @property
    def n_classes(self):
        return len(self.class_names)


def fit_one_vs_all(bundle, labels, hp=None):
    """K independent binary fits, +1 for the class and -1 for the rest."""
    hp = hp or HyperParams()
    class_names, Y = encode_labels(labels)
    models = [engine.fit(bundle, Y[c], hp) for c in range(len(class_names))]
    return MulticlassModel(
        mode="one-vs-all",
        class_names=class_names,
        kernel_names=list(bundle.names),
        nu=hp.nu,
        binary_models=models,
    )


def _effective_be_views(states, joint_mean, joint_cov, k):
    """Refresh each class state's (b_c, e) view from the joint factor."""
    p = joint_mean.size - k
    for c, st in enumerate(states):
        be_mean = np.empty(p + 1)
        be_mean[0] = joint_mean[c]
        be_mean[1:] = joint_mean[k:]
        be_cov = np.empty((p + 1, p + 1))
        be_cov[0, 0] = joint_cov[c, c]
        be_cov[0, 1:] = joint_cov[c, k:]
        be_cov[1:, 0] = joint_cov[k:, c]
        be_cov[1:, 1:] = joint_cov[k:, k:]
        st.be_mean = be_mean
        st.be_cov = be_cov


def _update_joint(states, omega_mean, joint_logdet_box, k):
    """Coordinate update of the joint (b_1..b_K, e) Gaussian factor."""
    p = states[0].p
    n = states[0].n
    H = np.zeros((k + p, k + p))
    rhs = np.empty(k + p)
    weight_block = np.diag(omega_mean).astype(float)
    rhs_e = np.zeros(p)
    for c, st in enumerate(states):
        H[c, c] = st.gamma_mean + n
        coupling = st.G_mean.sum(axis=1)
        H[c, k:] = coupling
        H[k:, c] = coupling
        weight_block += st.G_mean @ st.G_mean.T + n * st.G_cov
        rhs[c] = st.f_mean.sum()
        rhs_e += st.G_mean @ st.f_mean
    H[k:, k:] = weight_block
    rhs[k:] = rhs_e
    mean, cov, logdet = _spd_inverse(H, rhs, "joint (b, e) covariance")
    joint_logdet_box[0] = logdet
    return mean, cov


def _update_omega_shared(states, joint_mean, joint_cov, hp, k):
    p = states[0].p
    e = joint_mean[k:]
    e2 = e ** 2 + np.diag(joint_cov[k:, k:])
    shape = np.full(p, hp.alpha_omega + 0.5)
    scale = 1.0 / (1.0 / hp.beta_omega + 0.5 * e2)
    return shape, scale


def _shared_elbo(states, joint_mean, joint_cov, joint_logdet,
                 omega_shape, omega_scale, hp, k):
    """Bound for the shared-weights model; per-class terms plus the joint
    factor's prior/entropy and the single omega block."""
    p, n = states[0].p, states[0].n
    e = joint_mean[k:]
    e_cov = joint_cov[k:, k:]
    EeeT = e_cov + np.outer(e, e)
    omg = omega_shape * omega_scale
    e_log_omg = digamma(omega_shape) + np.log(omega_scale)
    e2 = e ** 2 + np.diag(e_cov)

    total = _gamma_prior_term(omega_shape, omega_scale, hp.alpha_omega, hp.beta_omega)
    total += -0.5 * p * _LOG_2PI + 0.5 * np.sum(e_log_omg) - 0.5 * np.sum(omg * e2)
    total += _gamma_entropy(omega_shape, omega_scale)
    total += 0.5 * (k + p) * (1.0 + _LOG_2PI) + 0.5 * joint_logdet

    for c, st in enumerate(states):
        lam = st.lambda_mean
        e_log_lam = digamma(st.lambda_shape) + np.log(st.lambda_scale)
        a2 = st.a_mean ** 2 + np.diag(st.a_cov)
        AA = st.a_cov + np.outer(st.a_mean, st.a_mean)
        b_c = joint_mean[c]
        b2 = b_c ** 2 + joint_cov[c, c]
        Ebe = b_c * e + joint_cov[k:, c]
        GG = st.G_mean @ st.G_mean.T + n * st.G_cov
        Ka = (st.stacked @ st.a_mean).reshape(p, n)
        f2 = st.f_var + st.f_mean ** 2

        total += _gamma_prior_term(st.lambda_shape, st.lambda_scale,
                                   hp.alpha_lambda, hp.beta_lambda)
        total += -0.5 * n * _LOG_2PI + 0.5 * np.sum(e_log_lam) - 0.5 * np.sum(lam * a2)
        sum_g2 = np.sum(st.G_mean ** 2) + n * np.trace(st.G_cov)
        total += -0.5 * n * p * _LOG_2PI - 0.5 * (
            sum_g2 - 2.0 * np.sum(st.G_mean * Ka) + np.sum(AA * st.cached_KK)
        )
        total += _gamma_prior_term(st.gamma_shape, st.gamma_scale,
                                   hp.alpha_gamma, hp.beta_gamma)
        e_log_gam = digamma(st.gamma_shape) + np.log(st.gamma_scale)
        total += -0.5 * _LOG_2PI + 0.5 * e_log_gam - 0.5 * st.gamma_mean * b2
        g_colsum = st.G_mean.sum(axis=1)
        total += -0.5 * n * _LOG_2PI - 0.5 * (
            np.sum(f2)
            - 2.0 * (st.f_mean @ (st.G_mean.T @ e) + b_c * st.f_mean.sum())
            + np.sum(EeeT * GG)
            + 2.0 * (Ebe @ g_colsum)
            + n * b2
        )
        total += _gamma_entropy(st.lambda_shape, st.lambda_scale)
        total += 0.5 * n * (1.0 + _LOG_2PI) + 0.5 * st.logdet_a_cov
        total += n * (0.5 * p * (1.0 + _LOG_2PI) + 0.5 * st.logdet_G_cov)
        total += _gamma_entropy(st.gamma_shape, st.gamma_scale)
        total += _tn_entropy(st)

    if not np.isfinite(total):
        raise engine.EngineError("non-finite shared-weights ELBO")
    return float(total)


def _fit_shared_core(bundle, Y, hp):
    """Shared-weights coordinate ascent over an explicit +/-1 matrix Y (K, N).

    Returns (states, joint_mean, joint_cov, omega_shape, omega_scale, trace).
    With K = 1 this reproduces the binary engine exactly: same factor forms,
    same update order, same initialization.
    """
    k = Y.shape[0]
    kernels = np.ascontiguousarray(bundle.train_kernels, dtype=float)
    p, n, _ = kernels.shape
    stacked = kernels.reshape(p * n, n)
    cached_kk = stacked.T @ stacked

    states = [engine.initialize(bundle, Y[c], hp, _cached_kk=cached_kk) for c in range(k)]
    joint_mean = np.concatenate([np.zeros(k), np.ones(p)])
    joint_cov = np.eye(k + p)
    joint_logdet_box = [0.0]
    omega_shape = np.full(p, hp.alpha_omega)
    omega_scale = np.full(p, hp.beta_omega)
    _effective_be_views(states, joint_mean, joint_cov, k)

    trace = []
    for _ in range(hp.max_iterations):
        for st in states:
            engine.update_lambda(st)
            engine.update_a(st)
            engine.update_G(st)
            engine.update_gamma(st)
        omega_shape, omega_scale = _update_omega_shared(states, joint_mean, joint_cov, hp, k)
        for st in states:
            st.omega_shape = omega_shape
            st.omega_scale = omega_scale
        joint_mean, joint_cov = _update_joint(states, omega_shape * omega_scale,
                                              joint_logdet_box, k)
        _effective_be_views(states, joint_mean, joint_cov, k)
        for st in states:
            engine.update_f(st)
        trace.append(_shared_elbo(states, joint_mean, joint_cov, joint_logdet_box[0],
                                  omega_shape, omega_scale, hp, k))
        if (
            hp.elbo_rel_tol > 0
            and len(trace) > 1
            and abs(trace[-1] - trace[-2]) < hp.elbo_rel_tol * abs(trace[-1])
        ):
            break
    return states, joint_mean, joint_cov, omega_shape, omega_scale, trace


def fit_shared_weights(bundle, labels, hp=None):
    """K-class fit with one kernel-weight vector shared by all classes."""
    hp = hp or HyperParams()
    class_names, Y = encode_labels(labels)
    k = len(class_names)
    states, joint_mean, joint_cov, _, _, trace = _fit_shared_core(bundle, Y, hp)
    return MulticlassModel(
        mode="shared-weights",
        class_names=class_names,
        kernel_names=list(bundle.names),
        nu=hp.nu,
        a_means=np.stack([st.a_mean for st in states]),
        b_means=joint_mean[:k].copy(),
        e_mean=joint_mean[k:].copy(),
        meta={"elbo_trace": trace},
    )


def predict_multiclass(model, kx):
    """Class-score vector and argmax labels for new point(s).

    One-vs-all scores are each classifier's normalized positive-class
    probability; shared-weights scores are the per-class decision-score
    means.  Exact ties resolve to the lowest class index.
    """
    kx = np.asarray(kx, dtype=float)
    single = kx.ndim == 2
    if single:
        kx = kx[:, None, :]
    t = kx.shape[1]
    k = model.n_classes
    scores = np.empty((t, k))
    if model.mode == "one-vs-all":
        for c, m in enumerate(model.binary_models):
            scores[:, c] = np.atleast_1d(predict_proba(m, kx))
    else:
        for c in range(k):
            g = np.einsum("ptn,n->tp", kx, model.a_means[c])
            scores[:, c] = g @ model.e_mean + model.b_means[c]
    labels = np.argmax(scores, axis=1)  # first maximum wins on ties
    names = [model.class_names[i] for i in labels]
    if single:
        return scores[0], names[0]
    return scores, names


def save_multiclass(model, path):
    """Persist a multiclass model: mode tag plus per-class sections."""
    doc = {
        "format_version": _MC_FORMAT_VERSION,
        "mode": model.mode,
        "class_names": list(model.class_names),
        "kernel_names": list(model.kernel_names),
        "nu": model.nu,
    }
    if model.mode == "one-vs-all":
        from .model import save_model

        doc["classes"] = []
        for c, m in enumerate(model.binary_models):
            section = f"{path}.class{c}"
            save_model(m, section)
            doc["classes"].append(section)
    else:
        doc["classes"] = [
            {"a_mean": model.a_means[c].tolist(), "b_mean": float(model.b_means[c])}
            for c in range(model.n_classes)
        ]
        doc["e_mean"] = model.e_mean.tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_multiclass(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != _MC_FORMAT_VERSION:
        raise ValueError(f"unsupported multiclass format version {doc.get('format_version')}")
    if doc["mode"] == "one-vs-all":
        from .model import load_model

        models = [load_model(section) for section in doc["classes"]]
        return MulticlassModel(
            mode="one-vs-all",
            class_names=doc["class_names"],
            kernel_names=doc["kernel_names"],
            nu=doc["nu"],
            binary_models=models,
        )
    return MulticlassModel(
        mode="shared-weights",
        class_names=doc["class_names"],
        kernel_names=doc["kernel_names"],
        nu=doc["nu"],
        a_means=np.asarray([c["a_mean"] for c in doc["classes"]], dtype=float),
        b_means=np.asarray([c["b_mean"] for c in doc["classes"]], dtype=float),
        e_mean=np.asarray(doc["e_mean"], dtype=float),
    )
