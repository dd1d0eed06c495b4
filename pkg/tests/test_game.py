import numpy as np
import pytest

from hopfreach.game import (AvoidGames, HopfEvader, PursuitScenario, build_avoid_games,
                            decomposed_avoid_value, mpc_pursuer_step, scenario, simulate,
                            zero_action_reference)
from hopfreach.hopf import make_game
from hopfreach.lintv import linearize_along, propagate


def frozen(N):
    return lambda t, x: np.zeros(N)


def still(t, x):
    return np.zeros(1), np.nan, None


def test_initial_configuration():
    # [DERIVED] substitution into the polygon layout
    scn = scenario(N=4, theta_a=0.0)
    x = scn.initial_state().reshape(4, 3)
    assert np.allclose(x[0], [0.0, 3.0, -np.pi / 2])
    assert np.allclose(scn.distances(scn.initial_state()), 3.0)


def test_polygon_symmetry():
    scn = scenario(N=5)
    x = scn.initial_state().reshape(5, 3)
    ang = np.arctan2(x[:, 1], x[:, 0])
    gaps = np.mod(np.diff(np.r_[ang, ang[0] + 2 * np.pi]), 2 * np.pi)
    assert np.allclose(gaps, 2 * np.pi / 5)
    assert np.allclose(np.diff(x[:, 2]), 2 * np.pi / 5)


def test_scenario_validation():
    with pytest.raises(ValueError):
        PursuitScenario(N=0)
    with pytest.raises(ValueError):
        PursuitScenario(horizon=1.0, step=0.3)
    with pytest.raises(ValueError):
        PursuitScenario(lapses=(0.015,))


def test_targets_weight_own_pursuer():
    scn = scenario(N=3)
    W = scn.weight(1)
    assert W[3, 3] == scn.capture_radius**2 and W[0, 0] == scn.r_max**2
    assert W[5, 5] == scn.theta_max**2
    x = np.zeros(9)
    x[3] = 0.5
    assert scn.targets()[1].value(x) == pytest.approx(0.0)


def test_linear_prediction_tracks_reference():
    # [DERIVED] RK4 reference trajectory of the nonlinear model
    scn = scenario(N=3, horizon=0.4, lapses=(0.4,))
    ref = zero_action_reference(scn, scn.initial_state())
    model = linearize_along(scn.system(), ref)
    K = model.nodes
    xs = propagate(model, ref.states[0], np.zeros((K - 1, 1)), np.zeros((K - 1, 3)))
    assert np.max(np.abs(xs - ref.states)) <= 1e-6


def test_lapse_zero_decomposition_is_min_of_targets():
    scn = scenario(N=3, horizon=0.2, lapses=(0.2,))
    x0 = scn.initial_state()
    x0[3:5] *= 0.5  # break the polygon tie
    games = build_avoid_games(scn, x0)
    sysd = scn.system()
    specs = {(i, 0.0): make_game("avoid", games.model, games.fund, t, sysd.U, sysd.D, games.error,
                                 0, 0) for i, t in enumerate(scn.targets())}
    zero = AvoidGames(x0, games.times, games.model, games.fund, games.error, games.tube, specs,
                      (0.0,))
    val = decomposed_avoid_value(zero)
    expect = [t.value(x0) for t in scn.targets()]
    assert val.value == pytest.approx(min(expect), abs=1e-6)
    assert val.index == int(np.argmin(expect))


def test_decomposed_value_is_member_minimum():
    scn = scenario(N=2, horizon=0.3, lapses=(0.1, 0.3))
    games = build_avoid_games(scn, scn.initial_state())
    val = decomposed_avoid_value(games)
    assert val.value == pytest.approx(min(r.value for r in val.members.values()))
    only = decomposed_avoid_value(games, lapse=0.3)
    assert only.lapse == 0.3 and only.value >= val.value - 1e-12
    with pytest.raises(KeyError):
        decomposed_avoid_value(games, lapse=0.2)


def test_mpc_zero_horizon_and_bounds():
    scn = scenario(N=2, horizon=0.4, lapses=(0.4,))
    ref = zero_action_reference(scn, scn.initial_state())
    model = linearize_along(scn.system(), ref)
    assert np.array_equal(mpc_pursuer_step(scn, model, scn.initial_state(), 0), np.zeros(2))
    b = mpc_pursuer_step(scn, model, scn.initial_state(), 15)
    assert np.all(np.abs(b) <= scn.b_max + 1e-12)


def test_mpc_turns_reduce_predicted_distance():
    scn = scenario(N=2, horizon=0.4, lapses=(0.4,))
    x0 = scn.initial_state()
    ref = zero_action_reference(scn, x0)
    model = linearize_along(scn.system(), ref)
    H = 15
    b = mpc_pursuer_step(scn, model, x0, H, iters=200)

    def cost(bb):
        xs = propagate(model, x0, np.zeros((H, 1)), np.tile(bb, (H, 1)), steps=H)[1:]
        return float(np.sum(xs[:, 0::3] ** 2 + xs[:, 1::3] ** 2))

    assert cost(b) < cost(np.zeros(2))
    # each pursuer turns toward the side where the evader passes
    assert cost(b) <= cost(-b)


def test_frozen_evader_is_captured_head_on():
    # [DERIVED] the pursuer directly ahead closes at 6 units per time
    scn = scenario(N=4, theta_a=0.0, r_p=1.0)
    tr = simulate(scn, still, frozen(4))
    assert tr.captured
    assert tr.capture_time == pytest.approx(0.5 / 6.0, abs=scn.step / 4)


def test_trailing_pursuer_keeps_distance():
    # [DERIVED] equal speeds and headings: the relative state is stationary
    scn = scenario(N=1, theta_a=np.pi / 2)
    x0 = scn.initial_state()
    assert np.allclose(x0, [-3.0, 0.0, 0.0])
    tr = simulate(scn, still, frozen(1))
    assert not tr.captured and tr.min_distance == pytest.approx(3.0, abs=1e-9)


def test_hopf_evader_actions_bounded_and_held():
    scn = scenario(N=2, horizon=0.3, lapses=(0.1, 0.3))
    games = build_avoid_games(scn, scn.initial_state())
    val = decomposed_avoid_value(games)
    ev = HopfEvader(games, val)
    a, bound, held = ev(0.0, scn.initial_state())
    assert abs(a[0]) <= scn.a_max and held == (val.index, val.lapse)
    assert bound == pytest.approx(val.value, abs=1e-6)
    tr = simulate(scn, ev, frozen(2))
    assert all(k is not None for k in tr.active)
    assert np.all(np.abs(tr.a) <= scn.a_max)
