import csv
import math

import numpy as np
import pytest

from services.adversary import (
    AdversaryInstance,
    best_decomposition,
    fibonacci_sphere,
    ideal_instance,
    max_pguess_numeric,
    nxy_of,
    pguess_pure,
    sample_instance,
    soundness_sweep,
    sweep_summary,
    verdicts_to_csv,
    verify_instance,
)
from services.bloch import BinaryPovm, BlochVector, QubitState, randomness_parameter
from services.entropy import guessing_prob_upper
from utils.errors import InvalidModel


@pytest.mark.parametrize("a0, n_xy, expected", [
    (0.5, 1.0, 0.5),
    (0.3, 0.0, 1.0),
    (0.9, 0.0, 1.0),
    (0.4, 0.5, 1 - 0.4 * (1 - math.sqrt(0.75))),
])
def test_pguess_pure_examples(a0, n_xy, expected):
    assert pguess_pure(a0, n_xy) == pytest.approx(expected, abs=1e-12)


def test_pguess_pure_anchor_is_exact():
    assert pguess_pure(0.5, 1.0) == 0.5
    assert pguess_pure(0.4, 0.5) == pytest.approx(0.946410, abs=1e-6)


def test_pguess_pure_monotonicity():
    grid = np.arange(0.0, 1.0 + 1e-9, 1e-3)
    by_nxy = [pguess_pure(0.4, min(1.0, x)) for x in grid]
    assert all(a >= b for a, b in zip(by_nxy, by_nxy[1:]))
    by_a0 = [pguess_pure(min(1.0, a), 0.7) for a in grid]
    assert all(a >= b for a, b in zip(by_a0, by_a0[1:]))


@pytest.mark.parametrize("args", [(-0.1, 0.5), (0.5, 1.2)])
def test_pguess_pure_rejects_range(args):
    with pytest.raises(InvalidModel):
        pguess_pure(*args)


@pytest.mark.parametrize("a0, t, s, expected", [
    (0.5, (0, 0, 1), (1, 0, 0), 1.0),
    (0.5, (0, 0, 1), (0, 0, 1), 0.0),
    (0.4, (0, 0, 0.6), (1, 0, 0), 0.75),
])
def test_nxy_examples(a0, t, s, expected):
    assert nxy_of(BinaryPovm(a0, BlochVector(*t)), BlochVector(*s)) == pytest.approx(expected, abs=1e-12)


def test_nxy_rejects_zero_a0():
    with pytest.raises(InvalidModel):
        nxy_of(BinaryPovm(0.0, BlochVector(0, 0, 0)), BlochVector(1, 0, 0))


def test_fibonacci_sphere_is_unit_and_balanced():
    points = fibonacci_sphere(4096)
    np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(points.mean(axis=0), 0.0, atol=1e-3)


def test_pure_state_maximum_is_closed_form():
    povm = BinaryPovm(0.4, BlochVector(0.1, 0.2, 0.5))
    state = QubitState.pure(BlochVector(0.3, -0.8, 0.2))
    expected = pguess_pure(0.4, nxy_of(povm, state.bloch))
    assert max_pguess_numeric(povm, state, 16) == pytest.approx(expected, abs=1e-12)


def test_trivial_measurement_is_fully_predictable():
    povm = BinaryPovm(0.5, BlochVector(0, 0, 0))
    assert max_pguess_numeric(povm, QubitState(BlochVector(0.2, 0.1, 0)), 16) == 1.0


def test_grid_size_is_validated():
    povm, triple = ideal_instance()
    with pytest.raises(InvalidModel):
        max_pguess_numeric(povm, triple.rho0, 4)


def test_numeric_maximum_respects_bound_and_refinement():
    rng = np.random.default_rng(99)
    for _ in range(25):
        povm, triple = sample_instance(rng)
        bound = guessing_prob_upper(min(1.0, randomness_parameter(povm.t, triple.rho0.bloch)))
        coarse = max_pguess_numeric(povm, triple.rho0, 16)
        fine = max_pguess_numeric(povm, triple.rho0, 128)
        assert fine >= coarse - 1e-12 or fine == pytest.approx(coarse, abs=1e-3)
        assert coarse <= bound + 1e-9
        assert fine <= bound + 1e-9


def test_best_decomposition_reproduces_state_and_value():
    povm = BinaryPovm(0.5, BlochVector(0, 0, 0.9))
    state = QubitState(BlochVector(0.3, 0.1, 0.2))
    instance = best_decomposition(povm, state, 32)
    assert isinstance(instance, AdversaryInstance)
    assert instance.guessing_probability() == pytest.approx(max_pguess_numeric(povm, state, 32), abs=1e-12)


def test_adversary_instance_validation():
    povm = BinaryPovm(0.5, BlochVector(0, 0, 1))
    with pytest.raises(InvalidModel):
        AdversaryInstance(povm, QubitState(BlochVector(0, 0, 0)), ((0.7, BlochVector(1, 0, 0)), (0.3, BlochVector(-1, 0, 0))))


def test_ideal_instance_is_sound():
    povm, triple = ideal_instance()
    verdicts = verify_instance(0, povm, triple, grid_n=16)
    assert [v.check for v in verdicts] == ["c_bound", "p_guess"]
    for verdict in verdicts:
        assert verdict.margin >= 0 and not verdict.violated
    assert verdicts[0].analytic_bound == pytest.approx(1.0)
    assert verdicts[1].numeric_pguess == pytest.approx(0.5)


def test_desk_sweep_finds_no_violations():
    verdicts = soundness_sweep(400, seed=2024, grid_n=32, adversarial_fraction=0.3)
    summary = sweep_summary(verdicts)
    assert summary["n_verdicts"] == 800
    assert summary["violated"] == 0
    assert [v.sample_index for v in verdicts] == sorted(v.sample_index for v in verdicts)


def test_adversarial_sampling_reaches_the_abort_path():
    verdicts = soundness_sweep(300, seed=5, checks=("c_bound",), adversarial_fraction=1.0)
    assert all(v.aborted or v.margin >= -1e-9 for v in verdicts)
    assert any(v.aborted for v in verdicts)


def test_random_test_states_rarely_abort():
    verdicts = soundness_sweep(2000, seed=8, checks=("c_bound",), adversarial_fraction=0.0)
    summary = sweep_summary(verdicts)
    assert summary["violated"] == 0
    assert summary["aborted"] < 0.2 * summary["n_verdicts"]


def test_sampled_test_states_straddle_the_measurement_axis():
    rng = np.random.default_rng(12)
    for _ in range(200):
        povm, triple = sample_instance(rng)
        t = povm.t
        assert t.dot(triple.rho1.bloch) >= 0.0
        assert t.dot(triple.rho2.bloch) <= 0.0


def test_sweep_is_deterministic_and_worker_independent():
    serial = soundness_sweep(60, seed=17, grid_n=16)
    again = soundness_sweep(60, seed=17, grid_n=16)
    parallel = soundness_sweep(60, seed=17, grid_n=16, workers=2)
    margins = [v.margin for v in serial]
    np.testing.assert_array_equal([v.margin for v in again], margins)
    np.testing.assert_array_equal([v.margin for v in parallel], margins)


def test_impossible_tolerance_flags_violations():
    verdicts = soundness_sweep(5, seed=1, tolerance=-1.0, grid_n=16)
    assert sweep_summary(verdicts)["violated"] > 0


def test_verdicts_csv(tmp_path):
    verdicts = soundness_sweep(3, seed=4, grid_n=16)
    path = tmp_path / "verdicts.csv"
    verdicts_to_csv(verdicts, path)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == len(verdicts)
    assert rows[0]["check"] == "c_bound"
    assert float(rows[1]["margin"]) == verdicts[1].margin


@pytest.mark.slow
def test_c_bound_sweep_full_scale():
    verdicts = soundness_sweep(10 ** 5, seed=31337, checks=("c_bound",))
    summary = sweep_summary(verdicts)
    assert summary["violated"] == 0
    # прерывания дают в основном адверсариальные экземпляры (10 %)
    assert summary["aborted"] < 0.25 * summary["n_verdicts"]


@pytest.mark.slow
def test_pguess_sweep_full_scale():
    verdicts = soundness_sweep(10 ** 4, seed=4242, checks=("p_guess",), grid_n=64)
    assert sweep_summary(verdicts)["violated"] == 0
