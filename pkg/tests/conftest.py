import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vbmkl.kernels import (
    FeatureMatrix,
    KernelBundle,
    gaussian_kernel,
    polynomial_kernel,
    spherical_normalize,
)


def random_bundle(rng, n, p, n_test=0):
    """A small random bank of symmetric normalized kernels for engine tests."""
    d = max(2, p // 2)
    X = rng.normal(size=(n + n_test, d))
    Xtr, Xte = X[:n], X[n:]
    kernels, crosses, names = [], [], []
    widths = rng.uniform(0.5, 4.0, size=p)
    for m in range(p):
        if m % 3 == 2:
            kt = polynomial_kernel(Xtr, Xtr, degree=(m % 2) + 1)
            kc = polynomial_kernel(Xte, Xtr, degree=(m % 2) + 1) if n_test else None
            self_sim = (np.sum(Xte * Xte, axis=1) + 1.0) ** ((m % 2) + 1) if n_test else None
            kt, kc = spherical_normalize(kt, kc, self_sim)
            names.append(f"poly{m}")
        else:
            kt = gaussian_kernel(Xtr, Xtr, widths[m])
            kc = gaussian_kernel(Xte, Xtr, widths[m]) if n_test else None
            names.append(f"rbf{m}")
        kernels.append(kt)
        if n_test:
            crosses.append(kc)
    return KernelBundle(
        train_kernels=np.stack(kernels),
        names=names,
        cross_kernels=np.stack(crosses) if n_test else None,
    )


def balanced_labels(rng, n):
    y = np.ones(n, dtype=int)
    y[: n // 2] = -1
    return rng.permutation(y)


def two_class_dataset(rng, n=80, d=5, noise=0.3):
    """UCI-style synthetic: features plus a noisy linear rule, string labels."""
    X = rng.normal(size=(n, d))
    logits = 1.2 * X[:, 0] - 0.8 * X[:, 1] + noise * rng.normal(size=n)
    labels = np.where(logits > 0, "pos", "neg")
    return FeatureMatrix(X, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
