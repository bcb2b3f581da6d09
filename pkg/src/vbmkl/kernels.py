"""Kernel-bank construction, normalization and binary serialization.

The training pipeline consumes a bank of precomputed kernel matrices: the
standard bank holds, for the all-features view and for every single-feature
view, Gaussian kernels at 10 widths (2**-3 .. 2**6) and inhomogeneous
polynomial kernels of degree 1..3, all spherically normalized to unit
diagonal.  A bank over D features therefore always contains 13*(D+1)
kernels.
"""

import io
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FeatureMatrix",
    "KernelBundle",
    "BundleFormatError",
    "gaussian_kernel",
    "polynomial_kernel",
    "build_feature_bank",
    "spherical_normalize",
    "distance_to_kernel",
    "save_bundle",
    "load_bundle",
    "GAUSSIAN_WIDTHS",
    "POLYNOMIAL_DEGREES",
]

GAUSSIAN_WIDTHS = tuple(2.0 ** k for k in range(-3, 7))
POLYNOMIAL_DEGREES = (1, 2, 3)

_MAGIC = b"BMKL"
_VERSION = 1


class BundleFormatError(ValueError):
    """Raised when a bundle file is malformed, truncated or wrong-version."""


@dataclass
class FeatureMatrix:
    """A dense real feature matrix with one row per instance.

    ``labels`` is optional and carries one class tag per row (strings or
    numbers); it is never consumed by kernel construction itself.
    """

    X: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("feature matrix must be 2-D (rows x features)")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != self.X.shape[0]:
                raise ValueError("label count does not match row count")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


@dataclass
class KernelBundle:
    """A bank of P train kernels plus optional cross kernels for test points.

    Attributes
    ----------
    train_kernels : ndarray, shape (P, N, N)
        Symmetric train-train kernel matrices.
    cross_kernels : ndarray or None, shape (P, N_test, N)
        Test-train kernel blocks, one row per test point.
    test_self : ndarray or None, shape (P, N_test)
        Per-kernel self-similarity of each test point; required to
        spherically normalize cross kernels (all ones once normalized).
    names : list of str
        One identifier per kernel.
    meta : dict
        Provenance (normalization state, parameter grids, degenerate
        feature columns).  In-memory only; not serialized.
    """

    train_kernels: np.ndarray
    names: list
    cross_kernels: np.ndarray | None = None
    test_self: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.train_kernels = np.ascontiguousarray(self.train_kernels, dtype=float)
        if self.train_kernels.ndim != 3:
            raise ValueError("train_kernels must have shape (P, N, N)")
        p, n, n2 = self.train_kernels.shape
        if n != n2:
            raise ValueError("train kernels must be square")
        if p == 0:
            raise ValueError("empty kernel bank")
        if len(self.names) != p:
            raise ValueError(f"got {len(self.names)} names for {p} kernels")
        if self.cross_kernels is not None:
            self.cross_kernels = np.ascontiguousarray(self.cross_kernels, dtype=float)
            if self.cross_kernels.shape != (p, self.cross_kernels.shape[1], n):
                raise ValueError("cross_kernels must have shape (P, N_test, N)")
            if self.test_self is None:
                self.test_self = np.ones(self.cross_kernels.shape[:2])
            else:
                self.test_self = np.ascontiguousarray(self.test_self, dtype=float)
                if self.test_self.shape != self.cross_kernels.shape[:2]:
                    raise ValueError("test_self must have shape (P, N_test)")

    @property
    def n_kernels(self):
        return self.train_kernels.shape[0]

    @property
    def n_train(self):
        return self.train_kernels.shape[1]

    @property
    def n_test(self):
        return 0 if self.cross_kernels is None else self.cross_kernels.shape[1]

    def validate(self, atol=1e-10):
        """Check symmetry of every train kernel (within ``atol``)."""
        t = self.train_kernels
        worst = np.max(np.abs(t - t.transpose(0, 2, 1)))
        if worst > atol:
            raise ValueError(f"train kernel asymmetry {worst:.3e} exceeds {atol:.0e}")
        return self


def _check_features(A, B):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: {A.shape[1]} vs {B.shape[1]}"
        )
    if not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise ValueError("non-finite feature input")
    return A, B


def gaussian_kernel(A, B, width):
    """exp(-||a_i - b_j||^2 / (2 width^2)) for all row pairs; entries in (0, 1]."""
    if not width > 0:
        raise ValueError("width must be positive")
    A, B = _check_features(A, B)
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * width * width))


def polynomial_kernel(A, B, degree):
    """Inhomogeneous polynomial kernel (<a_i, b_j> + 1) ** degree, degree in {1,2,3}."""
    if degree not in POLYNOMIAL_DEGREES:
        raise ValueError(f"degree must be one of {POLYNOMIAL_DEGREES}, got {degree}")
    A, B = _check_features(A, B)
    return (A @ B.T + 1.0) ** degree


def spherical_normalize(K_train, K_cross=None, cross_self=None):
    """Rescale to unit diagonal: k'_ij = k_ij / sqrt(k_ii * k_jj).

    Cross entries divide by the test point's own self-similarity
    (``cross_self``, one value per test row) and the train diagonal.
    Train diagonal entries must be strictly positive.
    """
    K_train = np.asarray(K_train, dtype=float)
    d = np.diag(K_train).copy()
    if np.any(d <= 0):
        bad = int(np.argmax(d <= 0))
        raise ValueError(f"non-positive diagonal entry at index {bad}: {d[bad]}")
    s = np.sqrt(d)
    K_out = K_train / np.outer(s, s)
    if K_cross is None:
        return K_out, None
    K_cross = np.asarray(K_cross, dtype=float)
    if cross_self is None:
        raise ValueError("cross normalization requires test self-similarities")
    cross_self = np.asarray(cross_self, dtype=float)
    if np.any(cross_self <= 0):
        raise ValueError("non-positive test self-similarity")
    C_out = K_cross / (np.sqrt(cross_self)[:, None] * s[None, :])
    return K_out, C_out


def _feature_views(d):
    yield "all", slice(None)
    for j in range(d):
        yield f"f{j}", slice(j, j + 1)


def build_feature_bank(train, test=None, normalize=True):
    """Construct the standard 13*(D+1)-kernel bank over feature views.

    Parameters
    ----------
    train, test : FeatureMatrix or ndarray
        Training rows and optional test rows.  Expected already
        standardized (test with the training statistics).
    normalize : bool
        Apply spherical normalization (the default protocol).

    Returns
    -------
    KernelBundle with kernels ordered view-major (all features first, then
    each single feature), widths ascending then degrees ascending within a
    view.  Constant feature columns still produce their (constant) kernels
    and are flagged in ``meta['degenerate_features']``.
    """
    Xtr = train.X if isinstance(train, FeatureMatrix) else np.asarray(train, dtype=float)
    Xte = None
    if test is not None:
        Xte = test.X if isinstance(test, FeatureMatrix) else np.asarray(test, dtype=float)
        _check_features(Xtr, Xte)
    n, d = Xtr.shape
    if d == 0:
        raise ValueError("feature matrix has no columns")
    if not np.isfinite(Xtr).all():
        raise ValueError("non-finite feature input")

    degenerate = [j for j in range(d) if np.ptp(Xtr[:, j]) == 0.0]

    n_test = 0 if Xte is None else Xte.shape[0]
    p_total = 13 * (d + 1)
    train_k = np.empty((p_total, n, n))
    cross_k = np.empty((p_total, n_test, n)) if Xte is not None else None
    test_self = np.empty((p_total, n_test)) if Xte is not None else None
    names = []

    idx = 0
    for view, cols in _feature_views(d):
        Atr = Xtr[:, cols]
        Ate = Xte[:, cols] if Xte is not None else None
        sq_tr = (
            np.sum(Atr * Atr, axis=1)[:, None]
            + np.sum(Atr * Atr, axis=1)[None, :]
            - 2.0 * (Atr @ Atr.T)
        )
        np.maximum(sq_tr, 0.0, out=sq_tr)
        if Ate is not None:
            sq_te = (
                np.sum(Ate * Ate, axis=1)[:, None]
                + np.sum(Atr * Atr, axis=1)[None, :]
                - 2.0 * (Ate @ Atr.T)
            )
            np.maximum(sq_te, 0.0, out=sq_te)
        for w in GAUSSIAN_WIDTHS:
            train_k[idx] = np.exp(-sq_tr / (2.0 * w * w))
            if Ate is not None:
                cross_k[idx] = np.exp(-sq_te / (2.0 * w * w))
                test_self[idx] = 1.0
            names.append(f"{view}:rbf:w={w:g}")
            idx += 1
        gram_tr = Atr @ Atr.T
        gram_te = Ate @ Atr.T if Ate is not None else None
        for deg in POLYNOMIAL_DEGREES:
            train_k[idx] = (gram_tr + 1.0) ** deg
            if Ate is not None:
                cross_k[idx] = (gram_te + 1.0) ** deg
                test_self[idx] = (np.sum(Ate * Ate, axis=1) + 1.0) ** deg
            names.append(f"{view}:poly:d={deg}")
            idx += 1

    if normalize:
        for m in range(p_total):
            if cross_k is not None:
                train_k[m], cross_k[m] = spherical_normalize(
                    train_k[m], cross_k[m], test_self[m]
                )
                test_self[m] = 1.0
            else:
                train_k[m], _ = spherical_normalize(train_k[m])

    meta = {
        "normalized": bool(normalize),
        "gaussian_form": "exp(-||x-y||^2 / (2*w^2))",
        "gaussian_widths": list(GAUSSIAN_WIDTHS),
        "polynomial_form": "(<x,y> + 1)^d",
        "polynomial_degrees": list(POLYNOMIAL_DEGREES),
        "degenerate_features": degenerate,
    }
    return KernelBundle(
        train_kernels=train_k,
        names=names,
        cross_kernels=cross_k,
        test_self=test_self,
        meta=meta,
    )


def distance_to_kernel(D_full, train_indices):
    """Convert a distance matrix to similarities via exp(-d / s).

    ``s`` is the mean distance over all ordered train-train pairs with
    distinct indices, so that typical train distances map near exp(-1).
    """
    D_full = np.asarray(D_full, dtype=float)
    if np.any(D_full < 0):
        raise ValueError("distances must be nonnegative")
    idx = np.asarray(train_indices, dtype=int)
    if idx.size < 2:
        raise ValueError("need at least two training points")
    sub = D_full[np.ix_(idx, idx)]
    mask = ~np.eye(idx.size, dtype=bool)
    s = float(np.mean(sub[mask]))
    if s == 0.0:
        raise ValueError("all train-train distances are zero")
    return np.exp(-D_full / s)


def save_bundle(bundle, path):
    """Write a bundle to the binary container format (bit-exact round trip).

    Layout: magic ``BMKL``, u32 version, u32 P, u32 N, u32 N_test, then per
    kernel a u32 name length, the UTF-8 name, the N*N train block, the
    N_test*N cross block and the N_test self-similarity vector, all
    little-endian f64 row-major.
    """
    p, n, t = bundle.n_kernels, bundle.n_train, bundle.n_test
    if p == 0:
        raise ValueError("refusing to save an empty kernel bank")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<IIII", _VERSION, p, n, t))
    for m in range(p):
        name = bundle.names[m].encode("utf-8")
        buf.write(struct.pack("<I", len(name)))
        buf.write(name)
        buf.write(np.ascontiguousarray(bundle.train_kernels[m], dtype="<f8").tobytes())
        if t:
            buf.write(np.ascontiguousarray(bundle.cross_kernels[m], dtype="<f8").tobytes())
            buf.write(np.ascontiguousarray(bundle.test_self[m], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, nbytes, what):
    data = fh.read(nbytes)
    if len(data) != nbytes:
        raise BundleFormatError(f"truncated bundle file while reading {what}")
    return data


def load_bundle(path):
    """Read a bundle written by :func:`save_bundle`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise BundleFormatError(f"bad magic bytes {magic!r}, not a bundle file")
        version, p, n, t = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        if version != _VERSION:
            raise BundleFormatError(f"unsupported bundle version {version}")
        if p == 0 or n == 0:
            raise BundleFormatError("dimension header inconsistent with payload")
        names = []
        train_k = np.empty((p, n, n))
        cross_k = np.empty((p, t, n)) if t else None
        test_self = np.empty((p, t)) if t else None
        for m in range(p):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            names.append(_read_exact(fh, name_len, "name").decode("utf-8"))
            raw = _read_exact(fh, 8 * n * n, f"train block {m}")
            train_k[m] = np.frombuffer(raw, dtype="<f8").reshape(n, n)
            if t:
                raw = _read_exact(fh, 8 * t * n, f"cross block {m}")
                cross_k[m] = np.frombuffer(raw, dtype="<f8").reshape(t, n)
                raw = _read_exact(fh, 8 * t, f"self-similarity vector {m}")
                test_self[m] = np.frombuffer(raw, dtype="<f8")
        if fh.read(1) != b"":
            raise BundleFormatError("dimension header inconsistent with payload")
    return KernelBundle(
        train_kernels=train_k,
        names=names,
        cross_kernels=cross_k,
        test_self=test_self,
    )
