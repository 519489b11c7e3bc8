from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defaultbsde.engine import RegressionBasis, SolverConfig, solve
from defaultbsde.game import (
    GameSpec,
    IsaacsError,
    ThetaSet,
    evaluate_cost,
    girsanov_weights,
    hamiltonian,
    robust_price,
    saddle_search,
    separable_game,
    solve_game_bsde,
    verify_saddle,
)
from defaultbsde.jump_ito import ForwardSdeSpec
from defaultbsde.kernel import DefaultModel, build_grid, simulate_bundle
from defaultbsde.linear import LinearBsdeSpec, linear_driver
from defaultbsde.terminal import TerminalSpec


def _game(f, U=(0.0,), V=(0.0,), b=0.0, c=0.0, h=0.0, state_free=False):
    return GameSpec(
        forward=ForwardSdeSpec.constant(0.0, 0.0, 1.0, 1.0),
        b=lambda t, x, u, v: b + 0.0 * x,
        c=lambda t, x, u, v: c + 0.0 * x,
        f=f,
        h=TerminalSpec.constant(h),
        U=U,
        V=V,
        sigma_inv_bound=1.0,
        kappa_inv_bound=1.0,
        b_bound=abs(b),
        c_bound=abs(c),
        state_free=state_free,
    )


def _uv(t, x, u, v):
    return np.asarray(u, float) * np.asarray(v, float) + 0.0 * np.asarray(x, float)[..., 0]


@pytest.fixture(scope="module")
def bundle():
    return simulate_bundle(DefaultModel.constant(0.5), build_grid(1.0, 20), 1, 5000, 90)


def test_hamiltonian_example():
    spec = separable_game()
    x = np.zeros((3, 1))
    val = hamiltonian(spec, 0.0, x, np.ones((3, 1)), np.full((3, 1), 2.0), np.array([0.2, -0.5, 1.0]),
                      np.array([0.0, 0.5, -1.0]), np.ones((3, 1)))
    # z u + zeta gamma v / 2 + u^2 + 1 - v^2
    assert val == pytest.approx([0.2 + 0.04 + 1, -0.5 + 0.5 + 0.25 + 1 - 0.25, 1 - 1 + 1 + 1 - 1])


@pytest.mark.parametrize("state_free", [True, False])
def test_separable_saddle(state_free):
    spec = dataclasses.replace(separable_game(), state_free=state_free)
    res = saddle_search(spec, 0.0, np.zeros((2, 1)), np.ones((2, 1)), np.full((2, 1), 2.0), np.ones((2, 1)))
    assert res.u_star == pytest.approx([-0.5, -0.5]) and res.v_star == pytest.approx([0.5, 0.5])
    assert res.value == pytest.approx([1.0, 1.0]) and np.all(res.isaacs_gap == 0)


def test_constant_hamiltonian_picks_lowest_index():
    spec = _game(lambda t, x, u, v: 0 * _uv(t, x, u, v) + 1.0, U=[0.0, 1.0, 2.0], V=[3.0, 4.0])
    res = saddle_search(spec, 0.0, np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    assert res.u_index[0] == 0 and res.v_index[0] == 0 and res.value[0] == 1.0


def test_product_game_has_isaacs_gap():
    grid = [-1.0, -0.5, 0.5, 1.0]
    spec = _game(_uv, U=grid, V=grid)
    res = saddle_search(spec, 0.0, np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    assert res.upper[0] == 0.5 and res.lower[0] == -0.5 and res.isaacs_gap[0] == 1.0


def test_saddle_mode_refuses_without_isaacs(bundle):
    grid = [-1.0, -0.5, 0.5, 1.0]
    with pytest.raises(IsaacsError, match="gap 1"):
        solve_game_bsde(_game(_uv, U=grid, V=grid), bundle, RegressionBasis(0))


vals = st.floats(-2, 2, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(U=st.lists(vals, min_size=1, max_size=5), V=st.lists(vals, min_size=1, max_size=5),
       z=vals, zeta=vals, geff=st.sampled_from([0.0, 0.3, 1.0]), a=vals, free=st.booleans())
def test_saddle_search_matches_brute_force(U, V, z, zeta, geff, a, free):
    spec = GameSpec(
        forward=ForwardSdeSpec.constant(0.0, 0.0, 1.0, 1.0),
        b=lambda t, x, u, v: (np.asarray(u) + 0.0 * x[..., 0])[..., None],
        c=lambda t, x, u, v: (0.5 * np.asarray(v) + 0.0 * x[..., 0])[..., None],
        f=lambda t, x, u, v: a * np.asarray(u) * np.asarray(v) + np.asarray(u) ** 2,
        h=TerminalSpec.constant(0.0), U=U, V=V, state_free=free,
    )
    x = np.zeros((1, 1))
    res = saddle_search(spec, 0.0, x, [[z]], [[zeta]], [[geff]])
    table = np.array([[z * u + zeta * geff * 0.5 * v + a * u * v + u * u for v in V] for u in U])
    upper = table.max(axis=1)
    lower = table.min(axis=0)
    assert res.upper[0] == pytest.approx(upper.min(), abs=1e-12)
    assert res.lower[0] == pytest.approx(lower.max(), abs=1e-12)
    assert upper[res.u_index[0]] == pytest.approx(upper.min(), abs=1e-12)
    assert lower[res.v_index[0]] == pytest.approx(lower.max(), abs=1e-12)
    assert res.upper[0] >= res.lower[0] - 1e-12


def test_zero_cost_game(bundle):
    spec = _game(lambda t, x, u, v: 0.0 * _uv(t, x, u, v))
    sol, J0, ctrl = solve_game_bsde(spec, bundle, RegressionBasis(1), "saddle")
    assert J0 == 0.0 and not sol.Y.any() and np.all(ctrl["u"] == 0)


def test_unit_density_without_drift(bundle):
    gw = girsanov_weights(_game(_uv), 0.0, 0.0, bundle)
    assert np.all(gw.L == 1.0) and gw.ess == pytest.approx(bundle.n_paths) and not gw.unreliable


def test_unit_running_cost_gives_horizon(bundle):
    spec = _game(lambda t, x, u, v: 1.0 + 0.0 * _uv(t, x, u, v))
    J, se, _ = evaluate_cost(spec, 0.0, 0.0, bundle)
    assert J == pytest.approx(1.0, abs=1e-12) and se < 1e-12
    _, J0, _ = solve_game_bsde(spec, bundle, RegressionBasis(0), "fixed", u=0.0, v=0.0)
    assert J0 == pytest.approx(1.0, abs=1e-12)


def test_fixed_controls_bsde_matches_girsanov(bundle):
    spec = separable_game()
    sol, J0, _ = solve_game_bsde(spec, bundle, RegressionBasis(2), "fixed", u=0.5, v=0.4)
    J, se, _ = evaluate_cost(spec, 0.5, 0.4, bundle)
    assert abs(J0 - J) <= 3 * np.hypot(se, sol.y0_se) + 5 * bundle.grid.dt


def test_maximizer_only_game(bundle):
    spec = dataclasses.replace(separable_game(n_grid=11), U=[0.0])
    rep = verify_saddle(spec, 4, bundle, RegressionBasis(2), np.random.default_rng(2), one_sided="v")
    assert rep["passed"] and all(r["kind"] == "v" for r in rep["perturbations"])


def test_validate_rejects_negative_cost():
    spec = _game(lambda t, x, u, v: -1.0 + 0.0 * _uv(t, x, u, v))
    with pytest.raises(ValueError, match="nonnegative"):
        spec.validate(np.random.default_rng(0))
    with pytest.raises(ValueError, match="jump"):
        ThetaSet(((0.0, 0.0, -1.0),))


@pytest.fixture(scope="module")
def rbundle():
    return simulate_bundle(DefaultModel.constant(0.2), build_grid(1.0, 20), 1, 20_000, 12)


CLAIM = TerminalSpec(lambda H, X: (1 - H[:, 0]) * (1 + 0.5 * np.tanh(X[:, 0])), 1.5)


def test_singleton_theta_equals_linear(rbundle):
    pt = (0.05, -0.1, 0.3)
    y0, _, sol = robust_price(ThetaSet((pt,)), CLAIM, rbundle, RegressionBasis(2), rbundle.B)
    lin = solve(linear_driver(LinearBsdeSpec(*pt, CLAIM, form="comparison"), rbundle), CLAIM, rbundle,
                RegressionBasis(2), SolverConfig(), rbundle.B)
    assert np.array_equal(sol.Y, lin.Y)


def test_two_point_theta_dominates_members(rbundle):
    pts = ((0.0, 0.2, -0.5), (0.1, -0.2, 0.5))
    y0, _, _ = robust_price(ThetaSet(pts), CLAIM, rbundle, RegressionBasis(2), rbundle.B)
    for p in pts:
        yp, _, _ = robust_price(ThetaSet((p,)), CLAIM, rbundle, RegressionBasis(2), rbundle.B)
        assert y0 >= yp - 1e-10


def test_robust_price_monotone_in_theta(rbundle):
    small = ThetaSet.grid([0.0], [-0.1, 0.1], [0.0])
    large = ThetaSet.grid([0.0, 0.1], [-0.2, -0.1, 0.1, 0.2], [-0.5, 0.0, 0.5])
    ys, _, _ = robust_price(small, CLAIM, rbundle, RegressionBasis(2), rbundle.B)
    yl, _, _ = robust_price(large, CLAIM, rbundle, RegressionBasis(2), rbundle.B)
    assert yl >= ys - 1e-10
