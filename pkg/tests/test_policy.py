import numpy as np
import pytest

from fjnudge.dyn import fixed_point, mean_step
from fjnudge.errors import EmptyBox
from fjnudge.net import GraphGenParams, Network, generate_clustered_er
from fjnudge.policy import (
    ControllerState,
    PolicyParams,
    WeightSchedule,
    build_tv_problem,
    build_wc_problem,
    feasible_input_set,
    newton_for,
    preview_weights,
    receding_horizon_step,
    stage_cost,
)
from fjnudge.qpcore import QpSettings, Status, solve_qp

from oracles import kkt_case_scalar

EPS = 1e-6


def scalar_net(lam):
    return Network([[1.0]], [lam], [0])


def test_box_examples():
    box = feasible_input_set([0.7], 0.025)
    assert box.upper[0] == pytest.approx(1 - 0.7 - 0.7 * 0.025 / 1.7320508, abs=1e-9)
    assert box.upper[0] == pytest.approx(0.2898968, abs=1e-6)
    assert feasible_input_set([0.7], 0.0).upper[0] == pytest.approx(0.3, abs=1e-15)
    zero = feasible_input_set([0.0], 0.025)
    assert zero.lower[0] == 0 and zero.upper[0] == 1.0
    assert (feasible_input_set(np.linspace(0, 0.9, 5), 0.025).upper <= 1 - np.linspace(0, 0.9, 5)).all()


def test_empty_box():
    with pytest.raises(EmptyBox):
        feasible_input_set([1.0], 0.5)


def scalar_case(r=0.1, alpha=1.0, xbar=0.5):
    net = scalar_net(0.5)
    u_o = np.array([0.2])
    box = feasible_input_set(u_o, 0.0)
    params = PolicyParams(T=1, r=r, alpha=alpha)
    return net, u_o, box, params, np.array([xbar])


def test_wc_scalar_matches_calculus_oracle():
    net, u_o, box, params, xbar = scalar_case()
    prob = build_wc_problem(xbar, net, u_o, box, params)
    # (0.65 - 0.5u)^2 + 0.1u^2 = 0.35u^2 - 0.65u + const
    assert prob.H[0, 0] == pytest.approx(2 * 0.35)
    assert prob.f[0] == pytest.approx(-0.65)
    assert -prob.f[0] / prob.H[0, 0] == pytest.approx(0.9286, abs=1e-4)
    u_star = kkt_case_scalar(0.35, 0.325, 0.0, 0.8)
    assert u_star == 0.8
    sol = solve_qp(prob)
    assert sol.z_star[0] == pytest.approx(u_star, abs=1e-8)
    # the controller skips the active-set polish, so the bound is met to interior-point accuracy
    u_now, _ = receding_horizon_step(ControllerState(), xbar, "WC", net, u_o, box, params)
    assert u_now[0] == pytest.approx(0.8, abs=1e-5)


def test_target_reached_needs_no_input():
    net = generate_clustered_er(GraphGenParams(n=6, n_clusters=2, seed=0), 0.25)
    u_o = np.full(6, 1.0)
    box = feasible_input_set(u_o, 0.0)
    params = PolicyParams(T=5, alpha=1.0)
    sol = solve_qp(build_wc_problem(np.ones(6), net, u_o, box, params))
    assert np.abs(sol.z_star).max() <= 1e-8
    assert sol.objective + build_wc_problem(np.ones(6), net, u_o, box, params).offset == pytest.approx(0, abs=1e-8)


def test_large_penalty_kills_input():
    net = generate_clustered_er(GraphGenParams(n=6, n_clusters=2, seed=1), 0.25)
    u_o = np.full(6, 0.5)
    box = feasible_input_set(u_o, 0.025)
    params = PolicyParams(T=4, r=1e6, alpha=1.0)
    sol = solve_qp(build_wc_problem(np.full(6, 0.5), net, u_o, box, params))
    assert np.linalg.norm(sol.z_star[:24]) <= 1e-3


def test_tv_with_unit_weights_equals_wc():
    net = generate_clustered_er(GraphGenParams(seed=2), 0.25)
    u_o = np.full(20, 0.7)
    box = feasible_input_set(u_o, 0.025)
    params = PolicyParams(T=6)
    x = np.random.default_rng(2).random(20)
    wc = build_wc_problem(x, net, u_o, box, params)
    tv = build_tv_problem(x, WeightSchedule.uniform(6, 20), net, u_o, box, params)
    for name in ("H", "f", "A_in", "b_in", "lb"):
        assert np.abs(getattr(wc, name) - getattr(tv, name)).max() <= 1e-14
    np.testing.assert_array_equal(wc.ub, tv.ub)


def test_doubled_weights_push_input_up():
    # from xbar = 0.2 the contraction row is slack: w (0.8 - 0.5u)^2 + u^2
    net, u_o, box, params, xbar = scalar_case(r=1.0, xbar=0.2)
    base = solve_qp(build_wc_problem(xbar, net, u_o, box, params)).z_star[0]
    doubled = solve_qp(build_tv_problem(xbar, WeightSchedule(np.array([[2.0]])), net, u_o, box, params)).z_star[0]
    assert base == pytest.approx(kkt_case_scalar(1.25, 0.4, 0, 0.8), abs=1e-8)
    assert doubled == pytest.approx(kkt_case_scalar(1.5, 0.8, 0, 0.8), abs=1e-8)
    assert doubled > base


def test_tv_rejects_nonpositive_weights():
    net, u_o, box, params, xbar = scalar_case()
    with pytest.raises(ValueError):
        build_tv_problem(xbar, WeightSchedule(np.array([[0.0]])), net, u_o, box, params)


def test_steady_state_weighted_cost_is_one_norm():
    net = generate_clustered_er(GraphGenParams(seed=3), 0.25)
    u_o = np.full(20, 0.7)
    xs = fixed_point(net, u_o)
    Q = 1.0 / np.abs(1.0 - xs)
    assert stage_cost(xs, Q) == pytest.approx(np.abs(1 - xs).sum(), abs=1e-12)


def test_preview_uniform_start():
    net = generate_clustered_er(GraphGenParams(seed=4), 0.25)
    params = PolicyParams(T=3)
    w = preview_weights(ControllerState(), np.full(20, 0.5), net, np.full(20, 0.5), params)
    # the free response from 0.5 with bias 0.5 stays at 0.5
    np.testing.assert_allclose(w.Q, 1.0 / (0.5 + EPS))


def test_preview_saturates_at_one_over_eps():
    net = scalar_net(0.0)
    params = PolicyParams(T=2)
    w = preview_weights(ControllerState(prev_solution=np.zeros((2, 1)), prev_xbar=np.array([1.0])),
                        np.array([1.0]), net, np.array([1.0]), params)
    np.testing.assert_allclose(w.Q, 1.0 / EPS)


def test_preview_hand_propagation():
    net = scalar_net(0.0)
    params = PolicyParams(T=2)
    # previous plan [*, 0.2] shifts to the candidate [0.2, 0]
    cs = ControllerState(prev_solution=np.array([[0.1], [0.2]]), prev_xbar=np.array([0.35]))
    w = preview_weights(cs, np.array([0.4]), net, np.array([0.3]), params)
    assert w.Q[0, 0] == pytest.approx(1 / (0.65 + EPS))
    assert w.Q[1, 0] == pytest.approx(1 / (0.6 + EPS))
    # the candidate's first input drives the preview to 0.3 + 0.2
    long = preview_weights(cs, np.array([0.4]), net, np.array([0.3]), PolicyParams(T=3))
    assert long.Q[2, 0] == pytest.approx(1 / (0.5 + EPS))


def test_proportional_weight_law():
    net = scalar_net(0.0)
    w = preview_weights(ControllerState(), np.array([0.4]), net, np.array([0.3]),
                        PolicyParams(T=2, weight_law="proportional"))
    assert w.Q[0, 0] == pytest.approx(0.6 + EPS)
    with pytest.raises(ValueError):
        PolicyParams(weight_law="other")


@pytest.mark.parametrize("kw", [dict(T=0), dict(r=0), dict(alpha=0), dict(alpha=1.5), dict(epsilon=0)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        PolicyParams(**kw)


@pytest.fixture(scope="module")
def table_case():
    net = generate_clustered_er(GraphGenParams(seed=3), 0.25)
    u_o = np.repeat([0.2, 0.8], 10)
    box = feasible_input_set(u_o, 0.025)
    return net, u_o, box, PolicyParams()


@pytest.mark.parametrize("kind", ["WC", "TV"])
def test_structured_newton_matches_dense(table_case, kind):
    net, u_o, box, params = table_case
    x = np.random.default_rng(5).random(20)
    cs = ControllerState()
    if kind == "TV":
        # one step first so the weights come from a real preview
        u, cs = receding_horizon_step(cs, x, "TV", net, u_o, box, params)
        x = mean_step(x, net, u_o, u)
        Q = preview_weights(cs, x, net, u_o, params).Q
    else:
        Q = np.ones((params.T, 20))
    prob = build_tv_problem(x, WeightSchedule(Q), net, u_o, box, params)
    fast = solve_qp(prob, QpSettings(polish=False, tol_gap=1e-6), newton=newton_for(net, Q, params))
    slow = solve_qp(prob, QpSettings(polish=False, tol_gap=1e-6))
    assert fast.status is Status.OPTIMAL and slow.status is Status.OPTIMAL
    assert np.abs(fast.z_star[:20] - slow.z_star[:20]).max() <= 1e-5
    assert fast.objective == pytest.approx(slow.objective, rel=1e-6)


def test_closed_loop_contraction_and_box(table_case):
    net, u_o, box, params = table_case
    x = np.random.default_rng(6).random(20)
    cs = ControllerState()
    for _ in range(15):
        u, cs = receding_horizon_step(cs, x, "WC", net, u_o, box, params)
        assert box.contains(u)
        x_next = mean_step(x, net, u_o, u)
        info = cs.history[-1]
        assert info.status == "Optimal"
        if info.max_slack <= 1e-6:
            assert (1 - x_next).sum() <= params.alpha * (1 - x).sum() + 1e-6
        x = x_next
    assert cs.t == 15 and len(cs.history) == 15
    assert cs.prev_solution.shape == (params.T, 20)


def test_first_tv_step_uses_zero_candidate(table_case):
    net, u_o, box, params = table_case
    x = np.random.default_rng(7).random(20)
    u, cs = receding_horizon_step(ControllerState(), x, "TV", net, u_o, box, params)
    w = preview_weights(ControllerState(), x, net, u_o, params)
    prob = build_tv_problem(x, w, net, u_o, box, params)
    ref = solve_qp(prob, QpSettings(polish=False, tol_gap=1e-6))
    assert np.abs(u - ref.z_star[:20]).max() <= 1e-5
    np.testing.assert_array_equal(cs.prev_xbar, x)
