"""Multiclass training tests: one-vs-all, shared weights, dense oracle."""

import numpy as np
import pytest

from conftest import balanced_labels, random_bundle
from vbmkl import engine, multiclass
from vbmkl.engine import HyperParams
from vbmkl.kernels import build_feature_bank
from vbmkl.multiclass import (
    encode_labels,
    fit_one_vs_all,
    fit_shared_weights,
    load_multiclass,
    predict_multiclass,
    save_multiclass,
)


def blobs(rng, per_class=8, n_test=4, k=3, spread=0.4, gap=6.0):
    centers = gap * np.stack([
        np.array([np.cos(2 * np.pi * c / k), np.sin(2 * np.pi * c / k)])
        for c in range(k)
    ])
    Xtr = np.vstack([rng.normal(size=(per_class, 2)) * spread + c for c in centers])
    Xte = np.vstack([rng.normal(size=(n_test, 2)) * spread + c for c in centers])
    names = [f"class{c}" for c in range(k)]
    ytr = np.repeat(names, per_class)
    yte = np.repeat(names, n_test)
    return build_feature_bank(Xtr, Xte), ytr, yte


class TestEncodeLabels:
    def test_first_appearance_order(self):
        names, Y = encode_labels(["b", "a", "b", "c"])
        assert names == ["b", "a", "c"]
        np.testing.assert_array_equal(Y[0], [1, -1, 1, -1])
        np.testing.assert_array_equal(Y[2], [-1, -1, -1, 1])

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="two classes"):
            encode_labels(["a", "a"])


class TestOneVsAll:
    def test_k2_fits_are_negations(self, rng):
        bundle = random_bundle(rng, 10, 3)
        labels = np.where(balanced_labels(rng, 10) > 0, "up", "down")
        model = fit_one_vs_all(bundle, labels, HyperParams(max_iterations=10))
        p0 = model.binary_models[0].posterior
        p1 = model.binary_models[1].posterior
        np.testing.assert_array_equal(p0.a_mean, -p1.a_mean)
        np.testing.assert_array_equal(p0.be_mean[1:], p1.be_mean[1:])

    def test_k2_probabilities_complementary(self, rng):
        bundle = random_bundle(rng, 10, 3, n_test=5)
        labels = np.where(balanced_labels(rng, 10) > 0, "up", "down")
        model = fit_one_vs_all(bundle, labels, HyperParams(max_iterations=10))
        scores, _ = predict_multiclass(model, bundle.cross_kernels)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-10)

    def test_blobs_perfect_accuracy(self, rng):
        bundle, ytr, yte = blobs(rng)
        model = fit_one_vs_all(bundle, ytr, HyperParams(max_iterations=40))
        scores, pred = predict_multiclass(model, bundle.cross_kernels)
        assert np.all((scores >= 0) & (scores <= 1))
        assert np.mean(np.asarray(pred) == yte) == 1.0


class TestSharedWeights:
    def test_k1_reduces_to_binary_engine(self, rng):
        bundle = random_bundle(rng, 12, 3)
        y = balanced_labels(rng, 12)
        hp = HyperParams(max_iterations=15)
        binary = engine.fit(bundle, y, hp).posterior
        states, jm, jc, osh, osc, trace = multiclass._fit_shared_core(
            bundle, y[None, :], hp
        )
        st = states[0]
        np.testing.assert_array_equal(st.a_mean, binary.a_mean)
        np.testing.assert_array_equal(st.G_mean, binary.G_mean)
        np.testing.assert_array_equal(
            np.concatenate(([jm[0]], jm[1:])), binary.be_mean
        )
        np.testing.assert_array_equal(osc, binary.omega_scale)
        assert trace[-1] == pytest.approx(binary.elbo_trace[-1], abs=1e-10)

    def test_joint_factor_dimension(self, rng):
        bundle = random_bundle(rng, 9, 4)
        labels = np.asarray(["a", "b", "c"] * 3)
        hp = HyperParams(max_iterations=3)
        _, jm, jc, _, _, _ = multiclass._fit_shared_core(
            bundle, encode_labels(labels)[1], hp
        )
        assert jm.shape == (3 + 4,)
        assert jc.shape == (7, 7)

    def test_joint_update_matches_dense_oracle(self, rng):
        # K=3, N=12, P=2: assemble the block system independently
        bundle = random_bundle(rng, 12, 2)
        labels = np.asarray(["a"] * 4 + ["b"] * 4 + ["c"] * 4)
        hp = HyperParams(max_iterations=4)
        k = 3
        states, jm, jc, osh, osc, _ = multiclass._fit_shared_core(
            bundle, encode_labels(labels)[1], hp
        )
        # rerun the joint update by hand from the per-class factors
        n, p = 12, 2
        omega_mean = osh * osc
        H = np.zeros((k + p, k + p))
        rhs = np.zeros(k + p)
        H[k:, k:] = np.diag(omega_mean)
        for c, st in enumerate(states):
            H[c, c] = st.gamma_mean + n
            H[c, k:] = H[k:, c] = st.G_mean.sum(axis=1)
            H[k:, k:] += st.G_mean @ st.G_mean.T + n * st.G_cov
            rhs[c] = st.f_mean.sum()
            rhs[k:] += st.G_mean @ st.f_mean
        cov = np.linalg.inv(H)
        mean = cov @ rhs
        box = [0.0]
        jm2, jc2 = multiclass._update_joint(states, omega_mean, box, k)
        np.testing.assert_allclose(jm2, mean, atol=1e-10)
        np.testing.assert_allclose(jc2, cov, atol=1e-10)

    def test_elbo_monotone_per_sweep(self, rng):
        bundle = random_bundle(rng, 12, 3)
        labels = np.asarray(["a", "b", "c"] * 4)
        hp = HyperParams(max_iterations=25)
        model = fit_shared_weights(bundle, labels, hp)
        trace = model.meta["elbo_trace"]
        for prev, cur in zip(trace, trace[1:]):
            assert cur >= prev - 1e-8 * abs(prev)

    def test_exactly_one_weight_vector(self, rng):
        bundle, ytr, _ = blobs(rng)
        model = fit_shared_weights(bundle, ytr, HyperParams(max_iterations=10))
        assert model.e_mean.shape == (bundle.n_kernels,)
        assert model.a_means.shape == (3, bundle.n_train)

    def test_class_permutation_consistency(self, rng):
        bundle = random_bundle(rng, 12, 3)
        labels = np.asarray(["a", "b", "c"] * 4)
        hp = HyperParams(max_iterations=12)
        m1 = fit_shared_weights(bundle, labels, hp)
        # renaming swaps which class index each name maps to
        renamed = np.vectorize({"a": "c", "b": "a", "c": "b"}.get)(labels)
        m2 = fit_shared_weights(bundle, renamed, hp)
        np.testing.assert_allclose(m2.e_mean, m1.e_mean, atol=1e-10)
        # class "a" in m1 covers the same rows as "c" in m2, etc.
        remap = {"a": "c", "b": "a", "c": "b"}
        for name in "abc":
            i1 = m1.class_names.index(name)
            i2 = m2.class_names.index(remap[name])
            np.testing.assert_allclose(m2.a_means[i2], m1.a_means[i1], atol=1e-10)
            assert m2.b_means[i2] == pytest.approx(m1.b_means[i1], abs=1e-10)

    def test_blobs_perfect_accuracy(self, rng):
        bundle, ytr, yte = blobs(rng)
        model = fit_shared_weights(bundle, ytr, HyperParams(max_iterations=40))
        _, pred = predict_multiclass(model, bundle.cross_kernels)
        assert np.mean(np.asarray(pred) == yte) == 1.0


class TestPredictMulticlass:
    def test_tie_breaks_to_lowest_index(self):
        model = multiclass.MulticlassModel(
            mode="shared-weights",
            class_names=["x", "y"],
            kernel_names=["k0"],
            nu=1.0,
            a_means=np.zeros((2, 3)),
            b_means=np.zeros(2),
            e_mean=np.ones(1),
        )
        scores, label = predict_multiclass(model, np.ones((1, 3)))
        assert scores[0] == scores[1]
        assert label == "x"

    def test_dominant_score_wins(self):
        model = multiclass.MulticlassModel(
            mode="shared-weights",
            class_names=["x", "y"],
            kernel_names=["k0"],
            nu=1.0,
            a_means=np.zeros((2, 3)),
            b_means=np.array([0.1, 5.0]),
            e_mean=np.ones(1),
        )
        _, label = predict_multiclass(model, np.ones((1, 3)))
        assert label == "y"


class TestPersistence:
    def test_shared_round_trip(self, rng, tmp_path):
        bundle, ytr, yte = blobs(rng)
        model = fit_shared_weights(bundle, ytr, HyperParams(max_iterations=10))
        path = tmp_path / "mc.json"
        save_multiclass(model, path)
        loaded = load_multiclass(path)
        assert loaded.mode == "shared-weights"
        s1, p1 = predict_multiclass(model, bundle.cross_kernels)
        s2, p2 = predict_multiclass(loaded, bundle.cross_kernels)
        np.testing.assert_array_equal(s1, s2)
        assert p1 == p2

    def test_one_vs_all_round_trip(self, rng, tmp_path):
        bundle, ytr, _ = blobs(rng, per_class=5, n_test=2)
        model = fit_one_vs_all(bundle, ytr, HyperParams(max_iterations=8))
        path = tmp_path / "mc.json"
        save_multiclass(model, path)
        loaded = load_multiclass(path)
        assert loaded.mode == "one-vs-all"
        s1, p1 = predict_multiclass(model, bundle.cross_kernels)
        s2, p2 = predict_multiclass(loaded, bundle.cross_kernels)
        np.testing.assert_array_equal(s1, s2)
        assert p1 == p2
