import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arbfun import rajchman as R
from arbfun.rajchman import CfDecayProfile, Verdict
from arbfun.stochastics import (
    DISTRIBUTIONS,
    RandomStream,
    cantor,
    lattice,
    normal,
    point_mass,
    product,
)


def test_gaussian_profile_empirical():
    u = [1.0, 2.0, 4.0, 8.0]
    p = R.cf_decay_profile(normal(), u, 10 ** 5, RandomStream(1), prefer_exact=False)
    want = np.exp(-np.square(u) / 2)
    assert want[:2] == pytest.approx([0.6065, 0.1353], abs=1e-4)
    assert p.source == "empirical"
    assert np.all(np.abs(p.moduli - want) <= 3 * p.std_errors)


def test_gaussian_profile_exact():
    p = R.cf_decay_profile(normal(), [1.0, 2.0, 4.0, 8.0])
    assert p.source == "exact"
    assert p.moduli[2] == pytest.approx(3.35e-4, rel=1e-2)


def test_lattice_profile_resonant():
    p = R.cf_decay_profile(lattice(10), R.resonant_frequencies(10, 5), 10 ** 5, RandomStream(2),
                           prefer_exact=False)
    assert np.all(np.abs(p.moduli - 1) < 1e-9)


def test_point_mass_profile():
    assert np.all(R.cf_decay_profile(point_mass(), [1.0, 2.0, 4.0]).moduli == 1.0)


def test_profile_needs_increasing_frequencies():
    with pytest.raises(ValueError):
        R.cf_decay_profile(normal(), [2.0, 1.0])


def test_profile_moduli_range_checked():
    with pytest.raises(ValueError):
        CfDecayProfile(np.array([1.0]), np.array([1.5]), "exact")


def test_empirical_profile_needs_stream():
    with pytest.raises(ValueError):
        R.cf_decay_profile(normal(), [1.0], prefer_exact=False)


def test_profile_on_the_plane():
    u = np.array([[1.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    d = product([normal(), normal()])
    want = np.exp(-np.sum(u * u, axis=1) / 2)
    assert R.cf_decay_profile(d, u).moduli == pytest.approx(want, rel=1e-12)
    p = R.cf_decay_profile(d, u, 10 ** 5, RandomStream(3), prefer_exact=False)
    assert np.all(np.abs(p.moduli - want) <= 3 * p.std_errors)


# --- classifier ------------------------------------------------------------

def test_gaussian_decays():
    assert R.classify_rajchman(R.cf_decay_profile(normal(), R.GEOMETRIC_LADDER)) is Verdict.DECAYING


def test_lattice_persists():
    p = R.cf_decay_profile(lattice(10), R.resonant_frequencies(10))
    assert R.classify_rajchman(p) is Verdict.PERSISTENT


def test_empty_tail_inconclusive():
    p = CfDecayProfile(np.array([]), np.array([]), "exact")
    assert R.classify_rajchman(p) is Verdict.INCONCLUSIVE


def test_cantor_inconclusive_at_triadic_frequencies():
    p = R.cf_decay_profile(cantor(), 2 * math.pi * 3.0 ** np.arange(1, 9))
    assert R.classify_rajchman(p) is Verdict.INCONCLUSIVE


@pytest.mark.parametrize("name", ["normal", "uniform", "exponential", "mixture"])
def test_absolutely_continuous_laws_decay(name):
    ladder = tuple(float(2 ** j) for j in range(14))
    p = R.cf_decay_profile(DISTRIBUTIONS[name](), ladder)
    assert R.classify_rajchman(p, 0.05) is Verdict.DECAYING


@pytest.mark.parametrize("m", [2, 5, 10, 16])
def test_every_lattice_persists(m):
    p = R.cf_decay_profile(lattice(m), R.resonant_frequencies(m))
    assert R.classify_rajchman(p) is Verdict.PERSISTENT


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.floats(0.01, 0.4))
def test_classifier_verdicts_consistent(moduli, threshold):
    p = CfDecayProfile(np.arange(1.0, len(moduli) + 1), np.array(moduli), "exact")
    v = R.classify_rajchman(p, threshold)
    tail = np.array(moduli)[int(math.floor(len(moduli) * 0.5)):]
    if v is Verdict.PERSISTENT:
        assert tail.max() > 1 - threshold
    if v is Verdict.DECAYING:
        assert tail.max() < threshold


# --- arbitrary functions ---------------------------------------------------

def test_arbitrary_functions_gaussian():
    r = R.arbitrary_functions_test(normal(), point_mass(), 1000, 10 ** 5, RandomStream(4))
    assert r.ks_uniform < r.ks_critical
    cell = next(c for c in r.cells if c.k == 1 and c.zeta == 0)
    assert abs(cell.joint.value) < 3 * math.hypot(cell.joint.real.std_error, cell.joint.imag.std_error)


def test_arbitrary_functions_lattice():
    r = R.arbitrary_functions_test(lattice(10), point_mass(), 20, 10 ** 4, RandomStream(5))
    # {nX} = 0 for every draw: all the mass at one point, distance 1
    assert r.ks_uniform == pytest.approx(1.0)


def test_arbitrary_functions_trivial_cell():
    r = R.arbitrary_functions_test(normal(), normal(), 10, 1000, RandomStream(6))
    cell = next(c for c in r.cells if c.k == 0 and c.zeta == 0)
    assert cell.joint.value == 1.0


def test_arbitrary_functions_joint_independence():
    r = R.arbitrary_functions_test(normal(), normal(0.3, 0.1), 1000, 10 ** 5, RandomStream(7))
    for c in r.cells:
        for part, lim in ((c.joint.real, c.limit.real), (c.joint.imag, c.limit.imag)):
            assert abs(part.z_score(lim)) <= 4


def test_arbitrary_functions_rejects_bad_n():
    with pytest.raises(ValueError):
        R.arbitrary_functions_test(normal(), point_mass(), 0, 10, RandomStream(8))


@pytest.mark.parametrize("n", [1, 7, 1000])
def test_fractional_part_cf_consistency(n):
    x = normal(0.0, 3.0).sample(RandomStream(9, n).generator(), 10 ** 4)
    a, b = R.fractional_cf_pair(x, n)
    assert abs(a.real.value - b.real.value) <= 2 * a.real.std_error + 1e-9
    assert abs(a.imag.value - b.imag.value) <= 2 * a.imag.std_error + 1e-9
