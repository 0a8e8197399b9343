"""Model validation, hazard tables, one-step matrices and simulation."""

import numpy as np
import pytest

from smcbsde import (
    InvalidModelError,
    SemiMarkovModel,
    SimulationError,
    martingale_increment,
    simulate,
    simulate_paths,
    sojourn_quantities,
    transition_matrix,
    validate_model,
)
from smcbsde.instances import random_model

from conftest import geometric_model, tiny_model, uniform_jump


def test_model_coercion_and_readonly():
    model = tiny_model()
    assert model.pi.dtype == float
    assert not model.pi.flags.writeable
    assert not model.jump.flags.writeable
    assert not model.x0.flags.writeable
    assert model.n_durations == 2


def test_model_shape_errors():
    with pytest.raises(ValueError):
        SemiMarkovModel(2, 1, np.zeros((2, 3)), uniform_jump(2, 2), [1, 0])
    with pytest.raises(ValueError):
        SemiMarkovModel(2, 1, np.full((2, 2), 0.5), np.zeros((2, 2, 3)), [1, 0])
    with pytest.raises(ValueError):
        SemiMarkovModel(2, 1, np.full((2, 2), 0.5), uniform_jump(2, 2), [1, 0, 0])


def test_from_start_state():
    model = SemiMarkovModel.from_start_state(
        2, 1, np.full((2, 2), 0.5), uniform_jump(2, 2), 1
    )
    assert model.x0.tolist() == [0.0, 1.0]


def test_validate_clean_model():
    assert validate_model(tiny_model()) == []
    assert validate_model(geometric_model([0.3, 0.6], 5)) == []


def test_validate_finds_each_violation_kind():
    pi = np.array([[0.4, 0.8], [0.5, 0.5]])  # state 0 mass 1.2
    model = SemiMarkovModel(2, 1, pi, uniform_jump(2, 2), [1.0, 0.0])
    fields = [v.field for v in validate_model(model)]
    assert "pi" in fields

    jump = uniform_jump(2, 2)
    jump = jump.copy()
    jump[0, 0] = [0.5, 0.5]  # self-jump mass
    model = SemiMarkovModel(2, 1, np.full((2, 2), 0.5), jump, [1.0, 0.0])
    violations = validate_model(model)
    assert any(v.field == "jump" and "self-jump" in v.message for v in violations)

    jump = uniform_jump(2, 2)
    jump = jump.copy()
    jump[1, 1] = [0.25, 0.0]  # row sum 0.25 where pi puts mass
    model = SemiMarkovModel(2, 1, np.full((2, 2), 0.5), jump, [1.0, 0.0])
    violations = validate_model(model)
    assert any(v.field == "jump" and "sums to" in v.message for v in violations)

    model = SemiMarkovModel(2, 1, np.full((2, 2), 0.5), uniform_jump(2, 2),
                            [0.4, 0.4])
    assert any(v.field == "x0" for v in validate_model(model))

    model = SemiMarkovModel(2, 1, np.array([[-0.2, 0.5], [0.5, 0.5]]),
                            uniform_jump(2, 2), [1.0, 0.0])
    assert any(v.field == "pi" and "outside" in v.message
               for v in validate_model(model))


def test_violation_str_is_informative():
    v = validate_model(
        SemiMarkovModel(2, 1, np.full((2, 2), 0.5), uniform_jump(2, 2),
                        [0.9, 0.0])
    )[0]
    assert "x0" in str(v)


def test_jump_row_sum_not_required_where_law_has_no_mass():
    # pi[0, 2] = 0, so the jump row at that duration may be anything summing
    # to whatever; validation must not flag it.
    pi = np.array([[1.0, 0.0], [0.5, 0.5]])
    jump = uniform_jump(2, 2)
    jump = jump.copy()
    jump[0, 1] = [0.0, 0.0]
    model = SemiMarkovModel(2, 1, pi, jump, [1.0, 0.0])
    assert validate_model(model) == []


def test_geometric_hazard_is_constant():
    deltas = [0.3, 0.6]
    model = geometric_model(deltas, 7)
    sq = sojourn_quantities(model)
    for i, d in enumerate(deltas):
        np.testing.assert_allclose(sq.hazard[i, :-1], d, rtol=0, atol=1e-14)
        assert sq.hazard[i, -1] == pytest.approx(1.0, abs=1e-14)
        # survivor after m steps is (1-d)^m
        np.testing.assert_allclose(
            sq.survivor[i, :-1],
            (1.0 - d) ** np.arange(1, 8),
            rtol=0,
            atol=1e-14,
        )
    assert sq.attainable.all()


def test_sojourn_tables_tiny_model():
    sq = sojourn_quantities(tiny_model())
    np.testing.assert_allclose(sq.cumulative, [[0.4, 1.0], [0.5, 1.0]],
                               atol=1e-15)
    np.testing.assert_allclose(sq.hazard, [[0.4, 1.0], [0.5, 1.0]], atol=1e-15)


def test_unattainable_durations_have_nan_hazard():
    # All mass at duration 1: duration 2 is never reached.
    pi = np.array([[1.0, 0.0], [1.0, 0.0]])
    model = SemiMarkovModel(2, 1, pi, uniform_jump(2, 2), [1.0, 0.0])
    sq = sojourn_quantities(model)
    assert sq.attainable[:, 0].all()
    assert not sq.attainable[:, 1].any()
    assert np.isnan(sq.hazard[:, 1]).all()


def test_sojourn_quantities_rejects_excess_mass():
    pi = np.array([[0.6, 0.6], [0.5, 0.5]])  # 0.6 > survivor 0.4 at m=2
    model = SemiMarkovModel(2, 1, pi, uniform_jump(2, 2), [1.0, 0.0])
    with pytest.raises(InvalidModelError):
        sojourn_quantities(model)


def test_transition_matrix_tiny_model():
    model = tiny_model()
    a1 = transition_matrix(model, 1)
    np.testing.assert_allclose(a1, [[0.6, 0.5], [0.4, 0.5]], atol=1e-15)
    a2 = transition_matrix(model, 2)
    np.testing.assert_allclose(a2, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
    with pytest.raises(ValueError):
        transition_matrix(model, 0)
    with pytest.raises(ValueError):
        transition_matrix(model, 3)


def test_transition_matrix_zero_column_when_unattainable():
    pi = np.array([[1.0, 0.0], [0.5, 0.5]])
    model = SemiMarkovModel(2, 1, pi, uniform_jump(2, 2), [1.0, 0.0])
    a2 = transition_matrix(model, 2)
    assert a2[:, 0].tolist() == [0.0, 0.0]
    assert a2[:, 1].sum() == pytest.approx(1.0, abs=1e-15)


def test_transition_columns_stochastic_random_models():
    rng = np.random.default_rng(42)
    for _ in range(25):
        model = random_model(rng)
        sq = sojourn_quantities(model)
        for m in range(1, model.n_durations + 1):
            if not np.any(sq.attainable[:, m - 1]):
                continue
            a = transition_matrix(model, m, sq)
            assert np.all(a >= -1e-15)
            for i in range(model.n_states):
                expected = 1.0 if sq.attainable[i, m - 1] else 0.0
                assert a[:, i].sum() == pytest.approx(expected, abs=1e-12)


def test_martingale_increment_mean_zero():
    rng = np.random.default_rng(7)
    for _ in range(20):
        model = random_model(rng)
        sq = sojourn_quantities(model)
        for m in range(1, model.n_durations + 1):
            if not np.any(sq.attainable[:, m - 1]):
                continue
            a = transition_matrix(model, m, sq)
            for i in range(model.n_states):
                if not sq.attainable[i, m - 1]:
                    continue
                mean = np.zeros(model.n_states)
                for j in range(model.n_states):
                    if a[j, i] > 0.0:
                        mean += a[j, i] * martingale_increment(model, i, m, j, sq)
                np.testing.assert_allclose(mean, 0.0, atol=1e-13)


def test_martingale_increment_values_tiny_model():
    model = tiny_model()
    inc = martingale_increment(model, 0, 1, 1)
    np.testing.assert_allclose(inc, [-0.6, 0.6], atol=1e-15)
    inc = martingale_increment(model, 0, 1, 0)
    np.testing.assert_allclose(inc, [0.4, -0.4], atol=1e-15)


def test_simulate_path_structure():
    model = geometric_model([0.3, 0.6], 20)
    path = simulate(model, seed=123)
    assert path.states.shape == (21,)
    assert path.durations[0] == 1
    assert path.states[0] == 0
    assert 0 in path.jump_times
    for k in range(20):
        if path.states[k + 1] == path.states[k]:
            assert path.durations[k + 1] == path.durations[k] + 1
        else:
            assert path.durations[k + 1] == 1
            assert k + 1 in path.jump_times


def test_simulate_seeded_reproducibility():
    model = geometric_model([0.3, 0.6], 15)
    p1 = simulate(model, seed=9)
    p2 = simulate(model, seed=9)
    assert np.array_equal(p1.states, p2.states)
    assert np.array_equal(p1.durations, p2.durations)
    p3 = simulate(model, seed=10)
    assert not (
        np.array_equal(p1.states, p3.states)
        and np.array_equal(p1.durations, p3.durations)
    )


def test_simulate_deterministic_sojourn():
    # All sojourns last exactly 2 steps; with two states the path alternates.
    pi = np.array([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    model = SemiMarkovModel(2, 2, pi, uniform_jump(2, 3), [1.0, 0.0])
    path = simulate(model, seed=0)
    assert path.states.tolist() == [0, 0, 1]
    assert path.durations.tolist() == [1, 2, 1]


def test_simulate_respects_start_distribution():
    model = geometric_model([0.5, 0.5], 3, x0=np.array([0.0, 1.0]))
    for seed in range(5):
        assert simulate(model, seed=seed).states[0] == 1


def test_simulate_paths_batch_matches_structure():
    model = geometric_model([0.4, 0.7], 12)
    states, durations = simulate_paths(model, 64, seed=5)
    assert states.shape == (64, 13)
    assert durations.shape == (64, 13)
    assert np.all(durations[:, 0] == 1)
    stays = states[:, 1:] == states[:, :-1]
    assert np.array_equal(durations[:, 1:][stays], durations[:, :-1][stays] + 1)
    assert np.all(durations[:, 1:][~stays] == 1)


def test_simulate_paths_byte_identical_per_seed():
    model = geometric_model([0.4, 0.7], 10)
    a = simulate_paths(model, 50, seed=77)
    b = simulate_paths(model, 50, seed=77)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[0].tobytes() == b[0].tobytes()


def test_simulate_error_on_dead_end():
    # State 0's sojourn law has no mass at all: duration 1 survivor is 1
    # forever, which is fine; but a zero jump row with hazard 1 is a dead end.
    pi = np.array([[1.0, 0.0], [1.0, 0.0]])
    jump = np.zeros((2, 2, 2))  # hazard 1 at duration 1, nowhere to go
    model = SemiMarkovModel(2, 1, pi, jump, [1.0, 0.0])
    with pytest.raises(SimulationError):
        simulate(model, seed=0)


def test_batch_hazard_frequencies_match():
    # Aggregate leave frequencies per (state, duration) against the hazard.
    model = geometric_model([0.35, 0.65], 10)
    sq = sojourn_quantities(model)
    states, durations = simulate_paths(model, 4000, seed=2024)
    for i in range(2):
        for m in (1, 2, 3):
            here = (states[:, :-1] == i) & (durations[:, :-1] == m)
            n = int(here.sum())
            if n < 200:
                continue
            left = states[:, 1:][here] != i
            rate = left.mean()
            h = sq.hazard[i, m - 1]
            band = 3.0 * np.sqrt(h * (1.0 - h) / n)
            assert abs(rate - h) <= band
