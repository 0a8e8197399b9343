"""Weighted forward representation of linear backward solutions.

The step factor (1 + noise adjustment)/(1 - drift) reproduces the backward
solution exactly; the two single-parameter forms (purely implicit, purely
shifted) coincide with it only when the other coefficient family vanishes.
The tiny-model tests below verify all of this by direct scalar arithmetic
against frozen matrices.
"""

import numpy as np
import pytest

from smcbsde import (
    Convention,
    DEFAULT_CONVENTION,
    LinearDriver,
    SelectionError,
    VanishingDenominatorError,
    WeightSde,
    build_lattice,
    dual_value,
    enumerate_paths,
    evolve_weights,
    select_convention,
    solve_bsde,
    weight_bounds,
)
from smcbsde.instances import random_linear_instance, random_model

from conftest import tiny_model

TINY_COLUMN = np.array([0.0, 0.4, 0.6, 0.0])


def tiny_bracket():
    e0 = np.zeros(4)
    e0[0] = 1.0
    c = TINY_COLUMN
    return np.diag(c) - np.outer(e0, c) - np.outer(c, e0)


def tiny_driver(alpha=0.3, g=0.5, beta_row=(0.0, 0.2, -0.1, 0.0)):
    alpha_t = np.zeros((1, 4))
    alpha_t[0, 0] = alpha
    g_t = np.zeros((1, 4))
    g_t[0, 0] = g
    beta_t = np.zeros((1, 4, 4))
    beta_t[0, 0] = beta_row
    return LinearDriver(alpha_t, g_t, beta_t)


def noise_adjustments(beta_row):
    """n_j = beta . pinv(bracket) . (e_j - column), from frozen literals."""
    row = np.asarray(beta_row) @ np.linalg.pinv(tiny_bracket())
    return {j: float(row[j] - row @ TINY_COLUMN) for j in (1, 2)}


def test_default_convention_is_the_exact_kernel():
    assert DEFAULT_CONVENTION is Convention.MIXED
    assert {c.value for c in Convention} == {"implicit", "shifted", "mixed"}


def test_step_factors_by_hand():
    sys_ = build_lattice(tiny_model())
    alpha, beta_row = 0.3, (0.0, 0.2, -0.1, 0.0)
    driver = tiny_driver(alpha=alpha, beta_row=beta_row)
    n = noise_adjustments(beta_row)
    for j in (1, 2):
        path = [0, j]
        v_mixed = evolve_weights(
            sys_, WeightSde.from_driver(driver, Convention.MIXED), path
        )
        assert v_mixed[1] == pytest.approx((1 + n[j]) / (1 - alpha), abs=1e-14)
        v_impl = evolve_weights(
            sys_, WeightSde.from_driver(driver, Convention.IMPLICIT), path
        )
        assert v_impl[1] == pytest.approx(1 / (1 - alpha - n[j]), abs=1e-14)
        v_shift = evolve_weights(
            sys_, WeightSde.from_driver(driver, Convention.SHIFTED), path
        )
        assert v_shift[1] == pytest.approx(1 + alpha + n[j], abs=1e-14)


def test_evolve_weights_rejects_unrealizable_path():
    sys_ = build_lattice(tiny_model())
    sde = WeightSde.from_driver(tiny_driver(), Convention.MIXED)
    with pytest.raises(ValueError):
        evolve_weights(sys_, sde, [0, 3])


def test_one_step_duality_by_hand():
    sys_ = build_lattice(tiny_model())
    alpha, g, beta_row = 0.3, 0.5, (0.0, 0.2, -0.1, 0.0)
    driver = tiny_driver(alpha, g, beta_row)
    terminal = np.array([0.0, 1.0, -0.5, 0.0])
    # backward, by hand: mean = .4 - .3 = .1; z = (0, .9, -.6, 0);
    # beta . z = .18 + .06 = .24; y = (.1 + .24 + .5) / .7 = .84/.7 = 1.2
    sol = solve_bsde(sys_, driver, terminal)
    assert sol.values[0, 0] == pytest.approx(0.84 / 0.7, abs=1e-14)

    n = noise_adjustments(beta_row)
    exact = (
        sum(TINY_COLUMN[j] * terminal[j] * (1 + n[j]) for j in (1, 2)) + g
    ) / (1 - alpha)
    assert exact == pytest.approx(0.84 / 0.7, abs=1e-13)

    dual = dual_value(
        sys_, WeightSde.from_driver(driver, Convention.MIXED), driver.g, terminal
    )
    assert dual[0] == pytest.approx(0.84 / 0.7, abs=1e-13)

    # the single-parameter forms are wrong here (both coefficients active)
    for conv in (Convention.IMPLICIT, Convention.SHIFTED):
        off = dual_value(
            sys_, WeightSde.from_driver(driver, conv), driver.g, terminal
        )
        assert abs(off[0] - sol.values[0, 0]) > 1e-3


def test_single_parameter_forms_exact_on_their_subfamilies():
    sys_ = build_lattice(tiny_model())
    terminal = np.array([0.0, 1.0, -0.5, 0.0])

    def residual(driver, sol, conv):
        dual = dual_value(
            sys_, WeightSde.from_driver(driver, conv), driver.g, terminal
        )
        return abs(dual[0] - sol.values[0, 0])

    # drift only, no running term: the implicit form agrees with the exact
    # kernel, the shifted one does not
    driver = tiny_driver(alpha=0.4, g=0.0, beta_row=(0.0, 0.0, 0.0, 0.0))
    sol = solve_bsde(sys_, driver, terminal)
    assert residual(driver, sol, Convention.IMPLICIT) <= 1e-12
    assert residual(driver, sol, Convention.MIXED) <= 1e-12
    assert residual(driver, sol, Convention.SHIFTED) > 1e-3

    # drift only with a running term: the implicit step factor is still
    # right, but it weights the running term by V instead of V/(1-a), so it
    # loses exactness while the mixed form keeps it
    driver = tiny_driver(alpha=0.4, g=0.2, beta_row=(0.0, 0.0, 0.0, 0.0))
    sol = solve_bsde(sys_, driver, terminal)
    assert residual(driver, sol, Convention.MIXED) <= 1e-12
    assert residual(driver, sol, Convention.IMPLICIT) > 1e-3
    assert residual(driver, sol, Convention.SHIFTED) > 1e-3

    # noise only: shifted agrees (running weights coincide at zero drift),
    # implicit does not
    driver = tiny_driver(alpha=0.0, g=0.2, beta_row=(0.0, 0.3, -0.2, 0.0))
    sol = solve_bsde(sys_, driver, terminal)
    assert residual(driver, sol, Convention.SHIFTED) <= 1e-12
    assert residual(driver, sol, Convention.MIXED) <= 1e-12
    assert residual(driver, sol, Convention.IMPLICIT) > 1e-3


def test_enumerate_paths_probabilities():
    rng = np.random.default_rng(15)
    sys_ = build_lattice(random_model(rng, n_max=3, t_max=4))
    for start in range(sys_.horizon + 1):
        for s in sys_.reachable_at[start]:
            pairs = list(enumerate_paths(sys_, start, int(s)))
            total = sum(p for _, p in pairs)
            assert total == pytest.approx(1.0, abs=1e-12)
            # endpoint distribution equals forward matrix powers
            end = np.zeros(sys_.dim)
            for path, p in pairs:
                end[path[-1]] += p
            dist = np.zeros(sys_.dim)
            dist[int(s)] = 1.0
            for _ in range(sys_.horizon - start):
                dist = sys_.transition @ dist
            np.testing.assert_allclose(end, dist, atol=1e-12)
    with pytest.raises(ValueError):
        list(enumerate_paths(sys_, sys_.horizon + 1, 0))


def test_dual_value_equals_backward_all_start_times():
    rng = np.random.default_rng(16)
    for _ in range(8):
        sys_ = build_lattice(random_model(rng, n_max=3, t_max=4))
        driver, terminal = random_linear_instance(sys_, rng)
        sol = solve_bsde(sys_, driver, terminal)
        sde = WeightSde.from_driver(driver, Convention.MIXED)
        for start in range(sys_.horizon + 1):
            dual = dual_value(sys_, sde, driver.g, terminal, start_time=start)
            reach = sys_.reachable_at[start]
            np.testing.assert_allclose(
                dual[reach], sol.values[start, reach], atol=1e-11
            )


def test_dual_value_monte_carlo_consistency():
    rng = np.random.default_rng(17)
    sys_ = build_lattice(random_model(rng, n_max=3, t_max=4))
    driver, terminal = random_linear_instance(sys_, rng)
    sde = WeightSde.from_driver(driver, Convention.MIXED)
    exact = dual_value(sys_, sde, driver.g, terminal)
    approx = dual_value(sys_, sde, driver.g, terminal, mc_paths=20000, seed=3)
    reach = sys_.reachable_at[0]
    np.testing.assert_allclose(approx[reach], exact[reach], atol=0.15)
    again = dual_value(sys_, sde, driver.g, terminal, mc_paths=20000, seed=3)
    np.testing.assert_array_equal(approx[reach], again[reach])


def test_weight_bounds_moments_and_sign():
    rng = np.random.default_rng(18)
    for _ in range(5):
        sys_ = build_lattice(random_model(rng, n_max=3, t_max=4))
        driver, _ = random_linear_instance(sys_, rng)
        _, l_bound = driver.bounds(sys_)
        sde = WeightSde.from_driver(driver, Convention.MIXED)
        report = weight_bounds(sys_, sde, beta_bound=l_bound)
        assert report.positivity is not None and report.positivity.passed
        assert report.min_weight >= -1e-10
        assert report.e_max_sq >= 1.0 - 1e-12
        assert report.e_max_running_sq > 0.0
        assert set(report.per_state) == {int(s) for s in sys_.reachable_at[0]}


def test_weight_bounds_sampled_close_to_exhaustive():
    rng = np.random.default_rng(19)
    sys_ = build_lattice(random_model(rng, n_max=2, t_max=3))
    driver, _ = random_linear_instance(sys_, rng)
    sde = WeightSde.from_driver(driver, Convention.MIXED)
    exact = weight_bounds(sys_, sde)
    sampled = weight_bounds(sys_, sde, samples=20000, seed=4)
    assert sampled.e_max_sq == pytest.approx(exact.e_max_sq, rel=0.2)


def test_negative_weights_outside_condition_do_not_assert():
    # Engineer a violating coefficient: noise adjustment below -1 flips the
    # weight sign.  The positivity report fails, so no assertion may fire.
    sys_ = build_lattice(tiny_model())
    scale = 0.0
    beta_row = None
    for mag in (1.0, 2.0, 5.0, 10.0, 25.0):
        cand = np.array([0.0, mag, -mag, 0.0])
        n = noise_adjustments(cand)
        if min(n.values()) < -1.2:
            beta_row = cand
            scale = mag
            break
    assert beta_row is not None, "failed to build a sign-flipping row"
    driver = tiny_driver(alpha=0.0, g=0.0, beta_row=beta_row)
    sde = WeightSde.from_driver(driver, Convention.MIXED)
    report = weight_bounds(sys_, sde, beta_bound=np.sqrt(2) * scale)
    assert not report.positivity.passed
    assert report.min_weight < 0.0


def test_vanishing_denominator_raises():
    sys_ = build_lattice(tiny_model())
    driver = tiny_driver(alpha=1.0, g=0.1)
    sde = WeightSde.from_driver(driver, Convention.MIXED)
    with pytest.raises(VanishingDenominatorError):
        dual_value(sys_, sde, driver.g, np.ones(4))


def test_select_convention_unique_and_exact():
    rng = np.random.default_rng(20)
    for seed in (0, 1):
        sys_ = build_lattice(random_model(rng, n_max=3, t_max=4))
        result = select_convention(sys_, trials=10, seed=seed)
        assert result.convention is Convention.MIXED
        assert result.unique
        assert result.residuals[Convention.MIXED][0] <= 1e-10
        for conv in (Convention.IMPLICIT, Convention.SHIFTED):
            assert result.residuals[conv][0] > 1e-6
        assert "mixed" in result.summary()


def test_select_convention_unsatisfiable_tolerance():
    rng = np.random.default_rng(21)
    sys_ = build_lattice(random_model(rng, n_max=2, t_max=3))
    with pytest.raises(SelectionError):
        select_convention(sys_, trials=4, seed=0, tol=1e-30)


def test_weight_sde_shape_validation():
    sys_ = build_lattice(tiny_model())
    sde = WeightSde(np.zeros((2, 4)), None)
    with pytest.raises(ValueError):
        dual_value(sys_, sde, np.zeros((2, 4)), np.ones(4))
