import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from services.bloch import (
    BinaryPovm,
    BlochVector,
    QubitState,
    StateTriple,
    bloch_length_from_noise,
    expectation,
    randomness_parameter,
    state_from_polar,
    tilted_state,
)
from utils.errors import InvalidModel


def v(x, y, z):
    return BlochVector(x, y, z)


@pytest.mark.parametrize("a0, t, s, expected", [
    (0.5, (0, 0, 1), (0, 0, 1), 1.0),
    (0.5, (0, 0, 1), (1, 0, 0), 0.0),
    (0.4, (0, 0, 0.6), (0, 0, -0.5), -0.5),
])
def test_expectation_examples(a0, t, s, expected):
    assert expectation(BinaryPovm(a0, v(*t)), QubitState(v(*s))) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("t, s0, expected", [
    ((0, 0, 1), (1, 0, 0), 1.0),
    ((0, 0, 1), (0, 0, 0.7), 0.0),
    ((0, 0, 0.8), (0.6, 0, 0.3), 0.48),
])
def test_randomness_parameter_examples(t, s0, expected):
    assert randomness_parameter(v(*t), v(*s0)) == pytest.approx(expected, abs=1e-12)


def test_randomness_parameter_is_rotation_invariant():
    rng = np.random.default_rng(7)
    for _ in range(200):
        t = rng.normal(size=3)
        t *= rng.random() / np.linalg.norm(t)
        s = rng.normal(size=3)
        s *= rng.random() / np.linalg.norm(s)
        rot = Rotation.from_rotvec(rng.normal(size=3))
        before = randomness_parameter(BlochVector.from_array(t), BlochVector.from_array(s))
        after = randomness_parameter(BlochVector.from_array(rot.apply(t)), BlochVector.from_array(rot.apply(s)))
        assert after == pytest.approx(before, abs=1e-12)


def test_randomness_parameter_is_bounded_by_lengths():
    rng = np.random.default_rng(19)
    for _ in range(1000):
        t = rng.normal(size=3)
        t *= rng.random() / np.linalg.norm(t)
        s = rng.normal(size=3)
        s *= rng.random() / np.linalg.norm(s)
        c = randomness_parameter(BlochVector.from_array(t), BlochVector.from_array(s))
        assert 0.0 <= c <= np.linalg.norm(t) * np.linalg.norm(s) + 1e-12
    # равенство при ортогональных векторах
    assert randomness_parameter(v(0, 0, 0.5), v(0.4, 0, 0)) == pytest.approx(0.2, abs=1e-12)


@pytest.mark.parametrize("theta, expected", [
    (0.0, 1.0),
    (1e-9, 1.0),
    (math.pi / 2, 0.0),
    (math.pi / 4, 2 / math.pi),
])
def test_bloch_length_from_noise(theta, expected):
    assert bloch_length_from_noise(theta) == pytest.approx(expected, abs=1e-12)


def test_bloch_length_is_continuous_at_series_cutoff():
    below = bloch_length_from_noise(1e-6 * (1 - 1e-9))
    above = bloch_length_from_noise(1e-6 * (1 + 1e-9))
    assert below == pytest.approx(above, abs=1e-12)


def test_bloch_length_is_monotone():
    values = [bloch_length_from_noise(x) for x in np.linspace(0, math.pi / 2, 500)]
    assert all(a >= b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("theta", [-0.1, math.pi / 2 + 1e-6])
def test_bloch_length_rejects_out_of_range(theta):
    with pytest.raises(InvalidModel):
        bloch_length_from_noise(theta)


@pytest.mark.parametrize("theta, phi, radius, expected", [
    (0.0, 0.0, 1.0, (0, 0, 1)),
    (math.pi, 0.0, 1.0, (0, 0, -1)),
    (math.pi / 2, math.pi / 2, 0.5, (0, 0.5, 0)),
])
def test_state_from_polar(theta, phi, radius, expected):
    state = state_from_polar(theta, phi, radius)
    np.testing.assert_allclose(state.bloch.as_array(), expected, atol=1e-12)


def test_state_from_polar_rejects_radius():
    with pytest.raises(InvalidModel):
        state_from_polar(0.0, 0.0, 1.5)


def test_constructors_enforce_invariants():
    with pytest.raises(InvalidModel):
        QubitState(v(1, 1, 0))
    with pytest.raises(InvalidModel):
        BinaryPovm(1.2, v(0, 0, 0))
    # |T| ≤ 2·min(a0, 1−a0)
    with pytest.raises(InvalidModel):
        BinaryPovm(0.1, v(0, 0, 0.3))
    with pytest.raises(InvalidModel):
        StateTriple(QubitState(v(0.5, 0, 0)), QubitState(v(0, 0, 1)), QubitState(v(0, 0, -0.2)))
    with pytest.raises(InvalidModel):
        BlochVector(float("nan"), 0, 0)


def test_expectation_stays_in_range_for_random_valid_inputs():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        a0 = rng.random()
        t = rng.normal(size=3)
        t *= rng.random() * 2 * min(a0, 1 - a0) / np.linalg.norm(t)
        s = rng.normal(size=3)
        s *= rng.random() / np.linalg.norm(s)
        g = expectation(BinaryPovm(a0, BlochVector.from_array(t)), QubitState(BlochVector.from_array(s)))
        assert -1 - 1e-9 <= g <= 1 + 1e-9


def test_purity_and_projective_helpers():
    assert QubitState(v(0, 0, 0)).purity == pytest.approx(0.5)
    assert QubitState.pure(v(0, 3, 4)).purity == pytest.approx(1.0)
    povm = BinaryPovm.projective(v(0, 0, 2))
    assert povm.a0 == 0.5 and povm.t.norm == pytest.approx(1.0)


def test_tilted_state_keeps_angle_to_direction():
    direction = v(0.3, -0.2, 0.9)
    unit = direction.as_array() / direction.norm
    for azimuth in np.linspace(0, 2 * math.pi, 13):
        state = tilted_state(direction, 0.4, azimuth)
        assert state.bloch.norm == pytest.approx(1.0, abs=1e-12)
        assert float(np.dot(state.bloch.as_array(), unit)) == pytest.approx(math.cos(0.4), abs=1e-12)


def test_mean_of_tilted_states_matches_bloch_length():
    theta_range = math.pi / 8
    direction = v(1, 0, 0)
    # средняя точка по θ ~ U[0, θ′] и равномерному азимуту
    thetas = (np.arange(2000) + 0.5) / 2000 * theta_range
    azimuths = np.linspace(0, 2 * math.pi, 16, endpoint=False)
    mean = np.mean([tilted_state(direction, 2 * t, a).bloch.as_array() for t in thetas for a in azimuths], axis=0)
    np.testing.assert_allclose(mean, [bloch_length_from_noise(theta_range), 0, 0], atol=1e-6)
