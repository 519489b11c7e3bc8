from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defaultbsde.comparison import (
    check_condition_c,
    compare_solutions,
    counterexample_drivers,
    counterexample_suite,
    random_compliant_pair,
)
from defaultbsde.engine import DriverSpec, RegressionBasis, SolverConfig, solve
from defaultbsde.kernel import DefaultModel, build_grid, simulate_bundle
from defaultbsde.linear import LinearBsdeSpec, linear_driver
from defaultbsde.terminal import TerminalSpec


@pytest.fixture(scope="module")
def bundle():
    return simulate_bundle(DefaultModel.constant(0.5), build_grid(1.0, 20), 1, 20_000, 31)


def test_condition_c_linear_quotient(bundle):
    drv = linear_driver(LinearBsdeSpec(0.0, 0.0, 0.5, form="comparison"), bundle)
    ok, worst, _ = check_condition_c(drv, bundle)
    assert ok and worst == pytest.approx(0.5, abs=1e-9)


def test_condition_c_counterexample_quotient():
    b = simulate_bundle(DefaultModel.constant(1.0), build_grid(1.0, 10), 1, 2000, 1)
    drv, _ = counterexample_drivers(1.0)
    res = check_condition_c(drv, b)
    assert not res.ok and res.worst == pytest.approx(-2.0, abs=1e-9)
    assert res.witnesses and res.witnesses[0]["quotient"] == pytest.approx(-2.0)


def test_condition_c_zeta_free_driver(bundle):
    drv = DriverSpec(lambda t, y, z, s, st: np.sin(y) + z[:, 0], 1.0)
    ok, worst, _ = check_condition_c(drv, bundle)
    assert ok and worst == 0.0


def test_condition_c_two_defaults():
    b = simulate_bundle(DefaultModel.constant([0.3, 0.6]), build_grid(1.0, 10), 1, 3000, 2)
    drv = linear_driver(LinearBsdeSpec(0.0, 0.0, [0.2, -0.7], form="comparison"), b)
    ok, worst, wit = check_condition_c(drv, b, 512)
    assert ok and worst == pytest.approx(-0.7, abs=1e-9) and wit[0]["component"] == 1


def test_reflexive_comparison(bundle):
    pair = random_compliant_pair(np.random.default_rng(4), 0.5)
    sol = solve(pair.driver, pair.terminal, bundle, RegressionBasis(2), SolverConfig(), bundle.B)
    rep = compare_solutions(sol, sol)
    assert rep.violation_fraction == 0.0 and rep.y0_gap == 0.0 and not rep.strict_candidate


def test_shifted_terminal_dominates(bundle):
    drv = linear_driver(LinearBsdeSpec(0.1, 0.2, 0.3, form="comparison"), bundle)
    xi = TerminalSpec(lambda H, X: 1 - 0.5 * H[:, 0], 1.0)
    sol = solve(drv, xi.shifted(1.0), bundle)
    sol_bar = solve(drv, xi, bundle)
    rep = compare_solutions(sol, sol_bar)
    assert rep.violation_fraction == 0.0
    # for a linear equation the shift propagates as e^{a (T - t)}
    assert rep.y0_gap == pytest.approx(np.exp(0.1), abs=5 * bundle.grid.dt)


def test_counterexample_other_intensity():
    rep = counterexample_suite(gamma=0.25, N=20, n_paths=20_000, seed=5)
    assert rep["passed"] and rep["strict_comparison_fails"]
    assert rep["condition_c"]["worst_quotient"] == pytest.approx(-3.0, abs=1e-9)
    assert rep["condition_c"]["expected"] == pytest.approx(-3.0)


def test_zero_pair_is_trivial(bundle):
    _, zero = counterexample_drivers(1.0)
    sol = solve(zero, TerminalSpec.constant(0.0), bundle)
    assert not sol.Y.any() and not sol.Z.any() and not sol.zeta.any()
    rep = compare_solutions(sol, sol)
    assert rep.violation_fraction == 0.0 and rep.max_violation == 0.0


def test_mismatched_bundles_rejected(bundle):
    other = simulate_bundle(DefaultModel.constant(0.5), build_grid(1.0, 10), 1, 20_000, 31)
    sol = solve(counterexample_drivers(1.0)[1], TerminalSpec.constant(0.0), bundle)
    sol2 = solve(counterexample_drivers(1.0)[1], TerminalSpec.constant(0.0), other)
    with pytest.raises(ValueError, match="share"):
        compare_solutions(sol, sol2)


def test_report_serializes(bundle):
    sol = solve(counterexample_drivers(1.0)[1], TerminalSpec.constant(1.0), bundle)
    back = json.loads(compare_solutions(sol, sol).to_json())
    assert set(back) >= {"violation_fraction", "y0_gap", "tol", "condition_c_ok"}


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_compliant_pairs_are_ordered(seed):
    rng = np.random.default_rng(seed)
    b = simulate_bundle(DefaultModel.constant(0.5), build_grid(1.0, 10), 1, 5000, seed)
    pair = random_compliant_pair(rng, 0.5)
    assert check_condition_c(pair.driver, b, 128, rng).ok
    sol = solve(pair.driver, pair.terminal, b, RegressionBasis(2), SolverConfig(), b.B)
    sol_bar = solve(pair.driver_bar, pair.terminal_bar, b, RegressionBasis(2), SolverConfig(), b.B)
    assert compare_solutions(sol, sol_bar).violation_fraction <= 1e-3
