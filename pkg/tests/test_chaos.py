import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import norm

from arbfun import chaos as C
from arbfun.paths import brownian_increments
from arbfun.stochastics import RandomStream, covariance_with_se, mean_with_se


def _increments(m, count, seed, d=None):
    return brownian_increments(RandomStream(seed).generator(), m, count, d)


def _brute_iterated(weights):
    m = weights[0].shape[-1]
    total = 0.0
    for idx in itertools.combinations(range(m), len(weights)):
        total += np.prod([w[j] for w, j in zip(weights, idx)])
    return total


# --- iterated sums and elements -------------------------------------------

@given(st.integers(1, 3), st.integers(3, 7), st.data())
def test_iterated_sum_matches_brute_force(k, m, data):
    ws = [data.draw(arrays(float, m, elements=st.floats(-2, 2))) for _ in range(k)]
    assert C.iterated_sum(ws) == pytest.approx(_brute_iterated(ws), abs=1e-9)


def test_first_chaos_constant_is_b1():
    db = _increments(64, 100, 1)
    x = C.eval_chaos(C.constant_element(1, 64), db)
    assert np.allclose(x.real, db.sum(axis=-1), atol=1e-13)


def test_second_chaos_hermite_identity():
    db = _increments(64, 100, 2)
    x = C.eval_chaos(C.constant_element(2, 64), db).real
    b1, qv = db.sum(axis=-1), (db * db).sum(axis=-1)
    assert np.allclose(x, (b1 * b1 - qv) / 2, atol=1e-12)


def test_second_chaos_moments():
    m = 64
    x = C.eval_chaos(C.constant_element(2, m), _increments(m, 10 ** 5, 3)).real
    assert mean_with_se(x).within(0.0, 3.0)
    # exact discrete variance: number of pairs / m^2
    assert mean_with_se(x * x).within((m - 1) / (2 * m), 3.0)
    assert mean_with_se(x * x).within(0.5, 3.0, slack=1 / m)


def test_zero_kernel():
    x = C.eval_chaos(C.constant_element(2, 32, 0.0), _increments(32, 10, 4))
    assert np.all(x == 0)


def test_grid_mismatch_rejected():
    with pytest.raises(ValueError):
        C.eval_chaos(C.constant_element(1, 32), _increments(16, 2, 5))


def test_order_limits():
    with pytest.raises(ValueError):
        C.constant_element(4, 8)
    with pytest.raises(ValueError):
        C.ChaosElement(2, 8, (1.0,), ((np.ones(8),),))


def test_norm_matches_dense_kernel():
    for x in (C.constant_element(2, 12), C.mixed_element(12), C.cosine_element(3, 9)):
        d = x.dense()
        assert x.norm_sq == pytest.approx(float(np.sum(np.abs(d) ** 2)) / x.m ** x.k, rel=1e-12)


def test_from_dense_round_trip():
    x = C.mixed_element(10)
    y = C.ChaosElement.from_dense(x.dense())
    assert np.allclose(y.dense(), x.dense(), atol=1e-12)
    db = _increments(10, 20, 6)
    assert np.allclose(C.eval_chaos(x, db), C.eval_chaos(y, db), atol=1e-12)


def test_from_dense_rejects_off_simplex():
    k = np.ones((6, 6))
    with pytest.raises(ValueError):
        C.ChaosElement.from_dense(k)
    with pytest.raises(ValueError):
        C.ChaosElement.from_dense(np.ones((2, 2, 2)))


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_eval_is_linear_in_kernel(a, b):
    m = 16
    db = _increments(m, 8, 7)
    x, y = C.constant_element(2, m), C.mixed_element(m)
    lhs = C.eval_chaos(x.scaled(a) + y.scaled(b), db)
    rhs = a * C.eval_chaos(x, db) + b * C.eval_chaos(y, db)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_chaos_orthogonality():
    m = 64
    db = _increments(m, 10 ** 5, 8)
    x1 = C.eval_chaos(C.constant_element(1, m), db).real
    x2 = C.eval_chaos(C.mixed_element(m), db).real
    assert covariance_with_se(x1, x2).within(0.0, 3.0)


# --- R_n ------------------------------------------------------------------

def test_phase_normalization():
    assert C.sawtooth_phase().check()
    assert not C.zero_phase().check()


def test_zero_phase_is_identity():
    x = C.mixed_element(64)
    db = _increments(64, 10, 9)
    got = C.rn_transform(x, 4, db, C.zero_phase(), check=False)
    assert np.array_equal(got, C.eval_chaos(x, db))


def test_unnormalized_phase_rejected():
    with pytest.raises(ValueError):
        C.rn_transform(C.constant_element(1, 64), 4, _increments(64, 2, 10), C.zero_phase())


def test_unresolved_phase_rejected():
    with pytest.raises(ValueError):
        C.rn_transform(C.constant_element(1, 32), 4, _increments(32, 2, 10))


@pytest.mark.parametrize("name", sorted(C.CHAOS_KERNELS))
@pytest.mark.parametrize("n", [2, 4])
def test_rn_isometry(name, n):
    m = 64
    x = C.CHAOS_KERNELS[name](2, m)
    db = _increments(m, 4 * 10 ** 4, 11)
    r = np.abs(C.rn_transform(x, n, db)) ** 2
    plain = np.abs(C.eval_chaos(x, db)) ** 2
    assert mean_with_se(r).within(x.norm_sq, 4.0)
    assert mean_with_se(r - plain).within(0.0, 4.0)


def test_rn_isometry_exact_first_chaos():
    m = 256
    db = _increments(m, 10 ** 5, 12)
    r = C.rn_transform(C.constant_element(1, m), 8, db)
    assert mean_with_se(np.abs(r) ** 2).within(1.0, 3.0)


# --- theorem 9 (deterministic) ---------------------------------------------

@pytest.mark.parametrize("k", [1, 2])
def test_theorem9_ladder(k):
    x = C.constant_element(k, 4096).normalized()
    vals = [C.theorem9_limit(x, n) for n in (8, 16, 32)]
    gaps = [abs(v.value - v.target) for v in vals]
    assert all(v.target == pytest.approx(k, rel=1e-12) for v in vals)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] / k < 0.02
    for v in vals:
        assert v.value <= v.bound


def test_theorem9_zero_kernel():
    x = C.constant_element(2, 256, 0.0)
    assert all(C.theorem9_limit(x, n).value == 0 for n in (1, 4, 16))


def test_theorem9_matches_monte_carlo():
    m, n = 128, 4
    x = C.constant_element(2, m).normalized()
    db = _increments(m, 10 ** 5, 13)
    d = n * n * np.abs(C.rn_transform(x, n, db) - C.eval_chaos(x, db)) ** 2
    assert mean_with_se(d).within(C.theorem9_limit(x, n).value, 4.0)


@given(st.integers(1, 3), st.integers(1, 8))
def test_theorem9_domination(k, n):
    x = C.cosine_element(k, 32 * n)
    v = C.theorem9_limit(x, n)
    assert 0 <= v.value <= v.bound * (1 + 1e-9)


# --- sharp gradient ---------------------------------------------------------

def test_sharp_first_chaos_is_w1():
    db, dw = _increments(32, 10, 14), _increments(32, 10, 15)
    got = C.sharp_gradient(C.constant_element(1, 32), db, dw)
    assert np.allclose(got.real, dw.sum(axis=-1), atol=1e-13)


def test_sharp_matches_brute_force_slots():
    m = 6
    x = C.mixed_element(m)
    db, dw = _increments(m, 1, 16)[0], _increments(m, 1, 17)[0]
    want = 0
    for c, fs in zip(x.coefs, x.factors):
        want += c * _brute_iterated([fs[0] * dw, fs[1] * db])
        want += c * _brute_iterated([fs[0] * db, fs[1] * dw])
    assert complex(C.sharp_gradient(x, db, dw)) == pytest.approx(complex(want), abs=1e-12)


def test_sharp_second_moment_second_chaos():
    m = 64
    x = C.constant_element(2, m)
    db, dw = _increments(m, 10 ** 5, 18), _increments(m, 10 ** 5, 19)
    s = C.sharp_gradient(x, db, dw).real
    assert mean_with_se(s * s).within(2 * x.norm_sq, 3.0)
    assert 2 * x.norm_sq == pytest.approx(1.0, abs=1 / m)


def test_sharp_moments_match():
    x = C.constant_element(2, 256).normalized()
    r = C.sharp_moments(x, 16, 4 * 10 ** 4, RandomStream(20))
    assert r.target == pytest.approx(2.0)
    for est, target in ((r.mean_real, 0.0), (r.mean_sharp, 0.0), (r.second_real, r.target),
                        (r.second_sharp, r.target), (r.second_diff, 0.0)):
        assert abs(est.z_score(target)) <= 4


# --- rotations ------------------------------------------------------------

def test_planar_schedule_checks():
    C.planar_rotation().check()
    with pytest.raises(ValueError):
        C.identity_schedule().check()
    C.identity_schedule().check(require_mean_zero=False)


def test_non_orthogonal_schedule_rejected():
    bad = C.RotationSchedule(lambda s: np.broadcast_to(2 * np.eye(2), (np.size(s), 2, 2)), 2, "2I")
    with pytest.raises(ValueError):
        bad.check(require_mean_zero=False)
    with pytest.raises(ValueError):
        C.rotation_transform(C.terminal_first_coordinate, bad, 1, 64, 10, RandomStream(1))


def test_identity_schedule_degenerate():
    db = _increments(32, 5, 21, d=2)
    assert np.array_equal(C.rotate_increments(db, C.identity_schedule(), 0), db)


def test_rotation_preserves_gaussian_law():
    r = C.rotation_transform(C.terminal_first_coordinate, C.planar_rotation(), 16, 256, 10 ** 5,
                             RandomStream(22), norm.cdf)
    assert r.ks < 0.0061
    assert r.cov_with_b1.within(0.0, 4.0)


def test_rotation_two_sample_mode():
    r = C.rotation_transform(C.terminal_first_coordinate, C.planar_rotation(), 8, 128, 2 * 10 ** 4,
                             RandomStream(23))
    assert r.ks < r.ks_critical * math.sqrt(2)


def test_rotation_requires_plane():
    one = C.RotationSchedule(lambda s: np.ones((np.size(s), 1, 1)), 1, "1")
    with pytest.raises(ValueError):
        C.rotation_transform(C.terminal_first_coordinate, one, 1, 64, 10, RandomStream(1))
