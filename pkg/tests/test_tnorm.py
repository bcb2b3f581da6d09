"""Truncated-normal moment checks against quadrature and hand values."""

import numpy as np
import pytest

from oracles import quad_tn_moments
from vbmkl.tnorm import truncated_normal_moments

HALF_NORMAL_MEAN = np.sqrt(2.0 / np.pi)  # 0.7978845608...


def test_half_normal_mean_positive_side():
    mean, var, logz = truncated_normal_moments(0.0, 1, 0.0)
    assert mean == pytest.approx(HALF_NORMAL_MEAN, abs=1e-12)
    assert logz == pytest.approx(np.log(0.5), abs=1e-12)


def test_half_normal_mean_is_symmetric():
    mean_pos, var_pos, _ = truncated_normal_moments(0.0, 1, 0.0)
    mean_neg, var_neg, _ = truncated_normal_moments(0.0, -1, 0.0)
    assert mean_neg == -mean_pos
    assert var_neg == var_pos


def test_inactive_truncation_keeps_mean():
    # mu = 5 with truncation at 0: boundary is 5 sigma away
    mean, var, logz = truncated_normal_moments(5.0, 1, 0.0)
    assert mean == pytest.approx(5.0000015, abs=1e-6)
    m_o, v_o, lz_o = quad_tn_moments(5.0, 1, 0.0)
    assert mean == pytest.approx(m_o, abs=1e-8)
    assert var == pytest.approx(v_o, abs=1e-8)
    assert logz == pytest.approx(lz_o, abs=1e-8)


def test_far_mean_tracks_pre_truncation_mean():
    mean, var, _ = truncated_normal_moments(10.0, 1, 1.0)
    assert mean == pytest.approx(10.0, abs=1e-6)
    assert var == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("nu", [0.0, 1.0])
@pytest.mark.parametrize("y", [1, -1])
def test_quadrature_agreement_over_grid(nu, y):
    for mu in np.linspace(-30.0, 30.0, 31):
        m_o, v_o, lz_o = quad_tn_moments(float(mu), y, nu)
        m_c, v_c, lz_c = truncated_normal_moments(float(mu), y, nu)
        assert m_c == pytest.approx(m_o, abs=1e-8), f"mean at mu={mu}"
        assert v_c == pytest.approx(v_o, abs=1e-8), f"variance at mu={mu}"
        assert lz_c == pytest.approx(lz_o, abs=1e-8), f"log partition at mu={mu}"


def test_extreme_offsets_stay_finite():
    for mu in (-40.0, -200.0, 200.0, 40.0):
        for y in (1, -1):
            mean, var, logz = truncated_normal_moments(mu, y, 1.0)
            assert np.isfinite(mean)
            assert np.isfinite(var) and var > 0
            assert np.isfinite(logz) and logz <= 0


def test_truncation_side_respected():
    rng = np.random.default_rng(1)
    mu = rng.normal(size=200) * 10
    y = rng.choice([-1, 1], size=200)
    mean, var, _ = truncated_normal_moments(mu, y, 0.5)
    assert np.all(y * mean > 0.5)
    assert np.all(var > 0)


def test_vectorized_matches_scalar():
    mu = np.array([-2.0, 0.3, 4.0])
    y = np.array([1, -1, 1])
    mv, vv, lv = truncated_normal_moments(mu, y, 1.0)
    for i in range(3):
        ms, vs, ls = truncated_normal_moments(float(mu[i]), int(y[i]), 1.0)
        assert mv[i] == ms and vv[i] == vs and lv[i] == ls
