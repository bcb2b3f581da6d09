"""Deterministic variational inference for the kernel-combination classifier.

The model couples, for every training instance i and kernel m:

    lambda_i ~ Gamma(alpha_lambda, beta_lambda)        instance-weight precisions
    a_i | lambda_i ~ N(0, 1/lambda_i)                  instance weights
    g_i^m | a ~ N(a . k_{m,i}, 1)                      per-kernel scores
    gamma ~ Gamma(alpha_gamma, beta_gamma);  b | gamma ~ N(0, 1/gamma)
    omega_m ~ Gamma(alpha_omega, beta_omega); e_m | omega_m ~ N(0, 1/omega_m)
    f_i | b, e, g_i ~ N(e . g_i + b, 1)                decision scores
    y_i in {-1,+1} observed through the truncation f_i * y_i > nu

All gamma distributions are in shape-scale form (mean = shape * scale).
Inference runs closed-form coordinate ascent over the factorization
q(lambda) q(a) q(G) q(gamma) q(omega) q(b,e) q(f), monitored by the
evidence lower bound, which is exact for this conjugate model and therefore
non-decreasing under every single factor update.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import brentq
from scipy.special import digamma, gammaln

from .tnorm import _hazard, truncated_normal_moments

__all__ = [
    "HyperParams",
    "PosteriorState",
    "TrainedModel",
    "EngineError",
    "initialize",
    "update_lambda",
    "update_a",
    "update_G",
    "update_gamma",
    "update_omega",
    "update_be",
    "update_f",
    "elbo",
    "fit",
]

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


class EngineError(RuntimeError):
    """Inference failure: non-finite bound or irrecoverable factorization."""


@dataclass(frozen=True)
class HyperParams:
    """Gamma hyperpriors (shape-scale), margin and iteration control.

    ``elbo_rel_tol = 0`` disables early stopping: the engine then runs the
    full ``max_iterations`` sweeps (200 by default).
    """

    alpha_lambda: float = 1.0
    beta_lambda: float = 1.0
    alpha_gamma: float = 1.0
    beta_gamma: float = 1.0
    alpha_omega: float = 1.0
    beta_omega: float = 1.0
    nu: float = 1.0
    max_iterations: int = 200
    elbo_rel_tol: float = 0.0

    def __post_init__(self):
        for name in ("alpha_lambda", "beta_lambda", "alpha_gamma",
                     "beta_gamma", "alpha_omega", "beta_omega"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.elbo_rel_tol < 0:
            raise ValueError("elbo_rel_tol must be nonnegative")


@dataclass
class PosteriorState:
    """All variational factor parameters plus cached sufficient statistics.

    Covariances are full SPD matrices; ``G_cov`` is shared by every column
    of ``G_mean`` because the G-factor covariance does not depend on the
    instance.  ``cached_KK`` holds sum_m K_m K_m^T, computed once.
    """

    # factor parameters
    lambda_shape: np.ndarray
    lambda_scale: np.ndarray
    a_mean: np.ndarray
    a_cov: np.ndarray
    G_mean: np.ndarray
    G_cov: np.ndarray
    gamma_shape: float
    gamma_scale: float
    omega_shape: np.ndarray
    omega_scale: np.ndarray
    be_mean: np.ndarray
    be_cov: np.ndarray
    f_mu: np.ndarray      # pre-truncation means of q(f)
    f_mean: np.ndarray
    f_var: np.ndarray
    f_logz: np.ndarray
    # problem data
    kernels: np.ndarray   # (P, N, N)
    y: np.ndarray
    hp: HyperParams
    cached_KK: np.ndarray
    # log-determinants of the Gaussian factor covariances
    logdet_a_cov: float = 0.0
    logdet_G_cov: float = 0.0
    logdet_be_cov: float = 0.0
    elbo_trace: list = field(default_factory=list)

    @property
    def n(self):
        return self.y.size

    @property
    def p(self):
        return self.kernels.shape[0]

    @property
    def stacked(self):
        """(P*N, N) view of the kernel bank: K_0 over K_1 over ..."""
        p, n, _ = self.kernels.shape
        return self.kernels.reshape(p * n, n)

    @property
    def lambda_mean(self):
        return self.lambda_shape * self.lambda_scale

    @property
    def gamma_mean(self):
        return self.gamma_shape * self.gamma_scale

    @property
    def omega_mean(self):
        return self.omega_shape * self.omega_scale

    @property
    def b_mean(self):
        return float(self.be_mean[0])

    @property
    def e_mean(self):
        return self.be_mean[1:]


def _spd_inverse(H, rhs, what):
    """Solve H x = rhs and invert H through one Cholesky factorization.

    On failure adds diagonal jitter 1e-8 * trace/n, then 1e-6 * trace/n,
    then gives up.  Returns (mean, covariance, logdet of the covariance).
    """
    n = H.shape[0]
    scale = np.trace(H) / n
    for jitter in (0.0, 1e-8 * scale, 1e-6 * scale):
        try:
            c, low = cho_factor(H + jitter * np.eye(n) if jitter else H, lower=True)
        except LinAlgError:
            continue
        mean = cho_solve((c, low), rhs)
        cov = cho_solve((c, low), np.eye(n))
        cov = 0.5 * (cov + cov.T)
        logdet_cov = -2.0 * float(np.sum(np.log(np.diag(c))))
        return mean, cov, logdet_cov
    raise EngineError(f"SPD factorization failed for {what} even with jitter")


def _init_f_offset():
    """Distance from the truncation boundary of the initial q(f).

    The initial decision-score factor is a genuine truncated normal whose
    mean sits exactly at y*(nu+1); that places its pre-truncation mean at
    y*(nu - t) where t solves hazard(t) = t + 1.
    """
    return brentq(lambda t: float(_hazard(t)) - t - 1.0, -5.0, 5.0, xtol=1e-14)


def initialize(bundle, y, hp, rng=None, _cached_kk=None):
    """Build the starting PosteriorState for a kernel bundle and labels.

    Deterministic by default: zero instance weights with identity
    covariance, per-kernel scores at the labels, unit kernel weights, gamma
    factors at their priors, and decision scores one margin-width beyond
    the truncation boundary.  Passing a ``numpy.random.Generator`` perturbs
    the Gaussian factor means with standard-normal noise for restart
    studies.
    """
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be a 1-D vector")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must take values in {-1, +1}")
    if np.unique(y).size < 2:
        raise ValueError("labels contain a single class; need both -1 and +1")
    kernels = np.ascontiguousarray(bundle.train_kernels, dtype=float)
    p, n, _ = kernels.shape
    if n != y.size:
        raise ValueError(f"bundle has {n} training rows but got {y.size} labels")
    y = y.astype(float)

    if _cached_kk is None:
        stacked = kernels.reshape(p * n, n)
        cached_kk = stacked.T @ stacked
    else:
        cached_kk = _cached_kk

    a_mean = np.zeros(n)
    G_mean = np.outer(np.ones(p), y)
    be_mean = np.concatenate(([0.0], np.ones(p)))
    if rng is not None:
        a_mean =rng.standard_normal(n)
        G_mean = G_mean + rng.standard_normal((p, n))
        be_mean = be_mean + rng.standard_normal(p + 1)

    t_star = _init_f_offset()
    f_mu = y * (hp.nu - t_star)
    _, f_var, f_logz = truncated_normal_moments(f_mu, y, hp.nu)
    f_mean = y * (hp.nu + 1.0)

    return PosteriorState(
        lambda_shape=np.full(n, hp.alpha_lambda),
        lambda_scale=np.full(n, hp.beta_lambda),
        a_mean=a_mean,
        a_cov=np.eye(n),
        G_mean=G_mean,
        G_cov=np.eye(p),
        gamma_shape=hp.alpha_gamma,
        gamma_scale=hp.beta_gamma,
        omega_shape=np.full(p, hp.alpha_omega),
        omega_scale=np.full(p, hp.beta_omega),
        be_mean=be_mean,
        be_cov=np.eye(p + 1),
        f_mu=f_mu,
        f_mean=f_mean,
        f_var=f_var,
        f_logz=f_logz,
        kernels=kernels,
        y=y,
        hp=hp,
        cached_KK=cached_kk,
    )


def update_lambda(state):
    """Precision factors of the instance weights: shape alpha + 1/2,
    scale (1/beta + <a_i^2>/2)^-1."""
    hp = state.hp
    a2 = state.a_mean ** 2 + np.diag(state.a_cov)
    state.lambda_shape = np.full(state.n, hp.alpha_lambda + 0.5)
    state.lambda_scale = 1.0 / (1.0 / hp.beta_lambda + 0.5 * a2)
    return state


def update_a(state):
    """Instance-weight Gaussian: precision diag(lambda) + sum_m K_m K_m^T,
    mean pulled toward sum_m K_m g_m."""
    H = np.diag(state.lambda_mean) + state.cached_KK
    rhs = state.stacked.T @ state.G_mean.reshape(-1)
    state.a_mean, state.a_cov, state.logdet_a_cov = _spd_inverse(H, rhs, "a covariance")
    return state


def update_G(state):
    """Per-kernel score columns: shared covariance (I + <e e^T>)^-1, each
    column mean combining the kernel view of a, the decision score and the
    bias-weight coupling."""
    p = state.p
    e_mean = state.e_mean
    e_cov = state.be_cov[1:, 1:]
    EeeT = e_cov + np.outer(e_mean, e_mean)
    H = np.eye(p) + EeeT
    # <b e> couples through the joint (b, e) factor
    be_cross = state.be_cov[1:, 0]
    Ebe = state.b_mean * e_mean + be_cross
    Ka = (state.stacked @ state.a_mean).reshape(p, state.n)
    R = Ka + np.outer(e_mean, state.f_mean) - Ebe[:, None]
    state.G_mean, state.G_cov, state.logdet_G_cov = _spd_inverse(H, R, "G covariance")
    return state


def update_gamma(state):
    """Bias precision factor."""
    hp = state.hp
    b2 = state.b_mean ** 2 + state.be_cov[0, 0]
    state.gamma_shape = hp.alpha_gamma + 0.5
    state.gamma_scale = 1.0 / (1.0 / hp.beta_gamma + 0.5 * b2)
    return state


def update_omega(state):
    """Kernel-weight precision factors; sparsity-inducing hyperpriors act here."""
    hp = state.hp
    e2 = state.e_mean ** 2 + np.diag(state.be_cov[1:, 1:])
    state.omega_shape = np.full(state.p, hp.alpha_omega + 0.5)
    state.omega_scale = 1.0 / (1.0 / hp.beta_omega + 0.5 * e2)
    return state


def update_be(state):
    """Joint bias and kernel-weight Gaussian over P+1 coordinates."""
    p, n = state.p, state.n
    GG = state.G_mean @ state.G_mean.T + n * state.G_cov
    H = np.empty((p + 1, p + 1))
    H[0, 0] = state.gamma_mean + n
    g_row = state.G_mean.sum(axis=1)
    H[0, 1:] = g_row
    H[1:, 0] = g_row
    H[1:, 1:] = np.diag(state.omega_mean) + GG
    rhs = np.concatenate(([state.f_mean.sum()], state.G_mean @ state.f_mean))
    state.be_mean, state.be_cov, state.logdet_be_cov = _spd_inverse(
        H, rhs, "(b, e) covariance"
    )
    return state


def update_f(state):
    """Decision-score truncated normals around e . g_i + b."""
    state.f_mu = state.G_mean.T @ state.e_mean + state.b_mean
    state.f_mean, state.f_var, state.f_logz = truncated_normal_moments(
        state.f_mu, state.y, state.hp.nu
    )
    return state


def _gamma_prior_term(shape, scale, alpha, beta):
    """E_q[log Gamma(x; alpha, beta)] for gamma factor(s) q = G(shape, scale)."""
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    e_log = digamma(shape) + np.log(scale)
    e_x = shape * scale
    return np.sum((alpha - 1.0) * e_log - e_x / beta - gammaln(alpha) - alpha * np.log(beta))


def _gamma_entropy(shape, scale):
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    return np.sum(shape + np.log(scale) + gammaln(shape) + (1.0 - shape) * digamma(shape))


def _tn_entropy(state):
    """Entropy of the decision-score factors from their stored statistics."""
    h = np.abs(state.f_mean - state.f_mu)
    zh = state.f_var - 1.0 + h * h
    return np.sum(0.5 * (1.0 + _LOG_2PI) + state.f_logz + 0.5 * zh)


def elbo(state):
    """Evidence lower bound at the current factors.

    Computed from scratch (no stale caches) so it is valid after any single
    factor update.  A non-finite term aborts with a diagnostic naming it.
    """
    hp = state.hp
    n, p = state.n, state.p
    lam = state.lambda_mean
    e_log_lam = digamma(state.lambda_shape) + np.log(state.lambda_scale)
    gam = state.gamma_mean
    e_log_gam = digamma(state.gamma_shape) + np.log(state.gamma_scale)
    omg = state.omega_mean
    e_log_omg = digamma(state.omega_shape) + np.log(state.omega_scale)

    a2 = state.a_mean ** 2 + np.diag(state.a_cov)
    AA = state.a_cov + np.outer(state.a_mean, state.a_mean)
    e_mean = state.e_mean
    e_cov = state.be_cov[1:, 1:]
    EeeT = e_cov + np.outer(e_mean, e_mean)
    b2 = state.b_mean ** 2 + state.be_cov[0, 0]
    Ebe = state.b_mean * e_mean + state.be_cov[1:, 0]
    e2 = e_mean ** 2 + np.diag(e_cov)
    GG = state.G_mean @ state.G_mean.T + n * state.G_cov
    Ka = (state.stacked @ state.a_mean).reshape(p, n)
    f2 = state.f_var + state.f_mean ** 2

    terms = {}
    terms["lambda_prior"] = _gamma_prior_term(
        state.lambda_shape, state.lambda_scale, hp.alpha_lambda, hp.beta_lambda
    )
    terms["a_given_lambda"] = (
        -0.5 * n * _LOG_2PI + 0.5 * np.sum(e_log_lam) - 0.5 * np.sum(lam * a2)
    )
    sum_g2 = np.sum(state.G_mean ** 2) + n * np.trace(state.G_cov)
    terms["g_given_a"] = -0.5 * n * p * _LOG_2PI - 0.5 * (
        sum_g2 - 2.0 * np.sum(state.G_mean * Ka) + np.sum(AA * state.cached_KK)
    )
    terms["gamma_prior"] = _gamma_prior_term(
        state.gamma_shape, state.gamma_scale, hp.alpha_gamma, hp.beta_gamma
    )
    terms["b_given_gamma"] = -0.5 * _LOG_2PI + 0.5 * e_log_gam - 0.5 * gam * b2
    terms["omega_prior"] = _gamma_prior_term(
        state.omega_shape, state.omega_scale, hp.alpha_omega, hp.beta_omega
    )
    terms["e_given_omega"] = (
        -0.5 * p * _LOG_2PI + 0.5 * np.sum(e_log_omg) - 0.5 * np.sum(omg * e2)
    )
    g_colsum = state.G_mean.sum(axis=1)
    terms["f_given_beG"] = -0.5 * n * _LOG_2PI - 0.5 * (
        np.sum(f2)
        - 2.0 * (state.f_mean @ (state.G_mean.T @ e_mean) + state.b_mean * state.f_mean.sum())
        + np.sum(EeeT * GG)
        + 2.0 * (Ebe @ g_colsum)
        + n * b2
    )

    terms["H_lambda"] = _gamma_entropy(state.lambda_shape, state.lambda_scale)
    terms["H_a"] = 0.5 * n * (1.0 + _LOG_2PI) + 0.5 * state.logdet_a_cov
    terms["H_G"] = n * (0.5 * p * (1.0 + _LOG_2PI) + 0.5 * state.logdet_G_cov)
    terms["H_gamma"] = _gamma_entropy(state.gamma_shape, state.gamma_scale)
    terms["H_omega"] = _gamma_entropy(state.omega_shape, state.omega_scale)
    terms["H_be"] = 0.5 * (p + 1) * (1.0 + _LOG_2PI) + 0.5 * state.logdet_be_cov
    terms["H_f"] = _tn_entropy(state)

    total = 0.0
    for name, value in terms.items():
        if not np.isfinite(value):
            raise EngineError(f"non-finite ELBO term '{name}' ({value})")
        total += float(value)
    return total


_SWEEP = (update_lambda, update_a, update_G, update_gamma,
          update_omega, update_be, update_f)


def sweep(state):
    """One full coordinate-ascent pass in the fixed factor order."""
    for step in _SWEEP:
        step(state)
    return state


@dataclass
class TrainedModel:
    """Converged posterior snapshot plus the metadata prediction needs."""

    posterior: PosteriorState
    kernel_names: list
    nu: float
    selection_threshold: float = 1e-3
    iterations_run: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_kernels(self):
        return len(self.kernel_names)

    @property
    def final_elbo(self):
        trace = self.posterior.elbo_trace
        return trace[-1] if trace else None


def fit(bundle, y, hp=None, rng=None, selection_threshold=1e-3):
    """Run coordinate ascent to convergence and return a TrainedModel.

    Sweeps lambda -> a -> G -> gamma -> omega -> (b, e) -> f for
    ``hp.max_iterations`` iterations (200 by default), recording the bound
    after every sweep; early stop on relative ELBO change only when
    ``hp.elbo_rel_tol > 0``.  Timing splits the one-off precomputation
    (kernel stacking and the K K^T cache) from the inference loop.
    """
    hp = hp or HyperParams()
    t0 = time.perf_counter()
    state = initialize(bundle, y, hp, rng=rng)
    precompute_seconds = time.perf_counter() - t0

    t1 = time.perf_counter()
    previous = None
    iterations = 0
    for iterations in range(1, hp.max_iterations + 1):
        sweep(state)
        bound = elbo(state)
        state.elbo_trace.append(bound)
        logger.debug("iteration %d elbo %.10f", iterations, bound)
        if (
            hp.elbo_rel_tol > 0
            and previous is not None
            and abs(bound - previous) < hp.elbo_rel_tol * abs(bound)
        ):
            break
        previous = bound
    inference_seconds = time.perf_counter() - t1

    return TrainedModel(
        posterior=state,
        kernel_names=list(bundle.names),
        nu=hp.nu,
        selection_threshold=selection_threshold,
        iterations_run=iterations,
        meta={
            "precompute_seconds": precompute_seconds,
            "inference_seconds": inference_seconds,
        },
    )
