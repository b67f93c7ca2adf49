import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resilient_uav.channel import draw_fading, spectral_efficiency
from resilient_uav.plan import Plan, plan_violations, static_traj
from resilient_uav.subproblems import (EtaBounds, association_program, bandwidth_program, init_eta,
                                       inverse_sq_distance, plan_objective, round_association, solve_association,
                                       solve_bandwidth, solve_trajectory, surrogate_rate, surrogate_se,
                                       trajectory_program)

from conftest import (central_gradient, make_scenario, random_feasible_traj, random_relaxed_plan,
                      window_for)


def fd_relative_error(oracle, x):
    _, g = oracle(x)
    fd = central_gradient(lambda v: oracle(v)[0], x)
    return np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12)


def instance(seed, n_slots=4, mu_history=True):
    rng = np.random.default_rng(seed)
    sc = make_scenario([(150, 250), (350, 250), (250, 400)], rng.uniform(50, 450, (4, 2)), n_slots=n_slots,
                       seed=seed)
    traj = random_feasible_traj(rng, sc, n_slots)
    plan = random_relaxed_plan(rng, sc, n_slots, traj=traj)
    hist = rng.uniform(5e4, 2e5, 3) if mu_history else None
    return rng, sc, plan, window_for(sc, plan, draw_fading(sc).hbar, hist)


def linearization_point(plan, win, info):
    lay = info["layout"]
    q = plan.traj[win.alive_idx, 1:] / win.scenario.d_max
    return np.concatenate([q.ravel(), np.ones(lay.n_lo), np.ones(lay.n_up)])


def random_trajectory_point(rng, plan, win, info):
    lay = info["layout"]
    x = linearization_point(plan, win, info)
    x[:lay.nq] += rng.uniform(-0.3, 0.3, lay.nq)
    x[lay.nq:] = rng.uniform(0.5, 1.5, lay.n_lo + lay.n_up)
    return x


# association ---------------------------------------------------------------

def test_single_alive_uav_takes_everything():
    _, sc, plan, _ = instance(0)
    alive = np.array([False, True, False])
    plan = random_relaxed_plan(np.random.default_rng(1), sc, 4, alive=alive, traj=plan.traj)
    win = window_for(sc, plan, draw_fading(sc).hbar)
    assoc, _ = solve_association(plan, win, -1.0)
    assert np.all(assoc[1] == 1.0) and np.all(assoc[[0, 2]] == 0.0)


def test_association_prefers_stronger_link():
    sc = make_scenario([(100, 250), (400, 250)], [(150, 250)], n_slots=3)
    W = 3
    assoc = np.full((2, 1, W), 0.5)
    bw = np.full((2, 1, W), 5e3)
    plan = Plan(assoc, bw, static_traj(sc.initial_positions(), W), 1, np.ones(2, bool))
    win = window_for(sc, plan, np.ones((2, 1, W)))
    se = spectral_efficiency(plan.traj, sc, win.hbar, win.alive)
    assert np.all(se[0] > se[1])  # the oracle: UAV 0 is stronger every slot
    new, rep = solve_association(plan, win, 0.0)
    np.testing.assert_allclose(new[0], 1.0, atol=1e-3)


def test_symmetric_association_is_indifferent():
    sc = make_scenario([(200, 250), (300, 250)], [(250, 100), (250, 400)], n_slots=2)
    W = 2
    assoc = np.full((2, 2, W), 0.5)
    bw = np.full((2, 2, W), 4e3)
    plan = Plan(assoc, bw, static_traj(sc.initial_positions(), W), 1, np.ones(2, bool))
    win = window_for(sc, plan, np.ones((2, 2, W)))
    new, _ = solve_association(plan, win, -2.0)
    pure = np.zeros_like(assoc)
    pure[0] = 1.0
    got = plan_objective(plan.replace(assoc=new), win, -2.0)
    assert got == pytest.approx(plan_objective(plan.replace(assoc=pure), win, -2.0), rel=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_association_feasible_and_not_worse(seed):
    _, sc, plan, win = instance(seed)
    before = plan_objective(plan, win, -5.0)
    new, rep = solve_association(plan, win, -5.0)
    out = plan.replace(assoc=new)
    assert plan_violations(out, sc) == []
    assert plan_objective(out, win, -5.0) >= before - 1e-9


# rounding ------------------------------------------------------------------

def _single(values):
    a = np.array(values, float)[:, None, None]
    return Plan(a, np.zeros_like(a), np.zeros((a.shape[0], 1, 2)), 1, np.ones(a.shape[0], bool))


def test_rounding_examples():
    assert round_association(_single([0.9, 0.1])).assoc[:, 0, 0].tolist() == [1.0, 0.0]
    assert round_association(_single([0.5, 0.5])).assoc[:, 0, 0].tolist() == [1.0, 0.0]
    dead_first = _single([0.6, 0.4]).replace(alive=np.array([False, True]))
    assert round_association(dead_first).assoc[:, 0, 0].tolist() == [0.0, 1.0]


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rounding_is_one_hot(seed):
    rng = np.random.default_rng(seed)
    sc = make_scenario([(0, 0), (100, 0), (200, 0)], rng.uniform(0, 500, (5, 2)))
    alive = rng.random(3) < 0.7
    alive[rng.integers(3)] = True
    plan = random_relaxed_plan(rng, sc, 3, alive=alive)
    b = round_association(plan)
    assert b.binary
    np.testing.assert_array_equal(b.assoc[alive].sum(axis=0), 1.0)
    assert np.all(b.assoc[~alive] == 0)
    assert set(np.unique(b.assoc)) <= {0.0, 1.0}


# bandwidth -----------------------------------------------------------------

def _one_uav_two_users(users, W=3):
    sc = make_scenario([(250, 250)], users, n_slots=W)
    assoc = np.ones((1, 2, W))
    plan = Plan(assoc, np.full((1, 2, W), 4e3), static_traj(sc.initial_positions(), W), 1, np.ones(1, bool),
                binary=True)
    return sc, plan, window_for(sc, plan, np.ones((1, 2, W)))


def test_identical_users_any_split_optimal():
    sc, plan, win = _one_uav_two_users([(300, 300), (300, 300)])
    bw, _ = solve_bandwidth(plan, win, 0.0)
    half = plan.replace(bandwidth=np.full_like(plan.bandwidth, 5e3))
    assert plan_objective(plan.replace(bandwidth=bw), win, 0.0) == pytest.approx(
        plan_objective(half, win, 0.0), rel=1e-6)


def test_better_user_gets_the_budget():
    sc, plan, win = _one_uav_two_users([(260, 250), (450, 450)])
    se = spectral_efficiency(plan.traj, sc, win.hbar, win.alive)
    assert np.all(se[0, 0] > se[0, 1])  # the linear-program oracle puts all mass on user 0
    bw, _ = solve_bandwidth(plan, win, 0.0)
    np.testing.assert_allclose(bw[0, 0], 10e3, atol=10.0)
    np.testing.assert_allclose(bw[0, 1], 0.0, atol=10.0)


def test_zero_budget_uav_gets_no_bandwidth():
    sc = make_scenario([(100, 250), (400, 250)], [(120, 250), (380, 250)], n_slots=2, budgets=[10e3, 0.0])
    plan = random_relaxed_plan(np.random.default_rng(0), sc, 2)
    plan = plan.replace(bandwidth=np.where(np.arange(2)[:, None, None] == 1, 0.0, plan.bandwidth))
    win = window_for(sc, plan, np.ones((2, 2, 2)))
    bw, _ = solve_bandwidth(plan, win, -1.0)
    assert np.all(bw[1] == 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_bandwidth_feasible_and_not_worse(seed):
    _, sc, plan, win = instance(seed)
    before = plan_objective(plan, win, -2.0)
    bw, _ = solve_bandwidth(plan, win, -2.0)
    out = plan.replace(bandwidth=bw)
    assert plan_violations(out, sc) == []
    assert plan_objective(out, win, -2.0) >= before - 1e-9


# eta bounds and the surrogate ------------------------------------------------

def test_init_eta_at_user_position():
    sc = make_scenario([(100, 100)], [(100, 100), (100, 100)])
    eta = init_eta(static_traj(sc.initial_positions(), 3), sc)
    for table in (eta.eta_lower, eta.eta_upper, eta.eta_lower_l, eta.eta_upper_l):
        np.testing.assert_allclose(table, 1 / 3600, rtol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_init_eta_positive(seed):
    rng = np.random.default_rng(seed)
    sc = make_scenario([(0, 0), (500, 500)], rng.uniform(-1e4, 1e4, (3, 2)), altitude=rng.uniform(1, 200))
    eta = init_eta(rng.uniform(-1e4, 1e4, (2, 3, 2)), sc)
    assert np.all(eta.eta_lower > 0) and np.all(eta.eta_lower == eta.eta_upper)


@pytest.mark.parametrize("seed", range(5))
def test_eta_constraints_tight_at_linearization(seed):
    _, sc, plan, win = instance(seed)
    bp, info = trajectory_program(plan, win, -2.0)
    x = linearization_point(plan, win, info)
    for g, name in zip(bp.program.ineqs, bp.program.ineq_names):
        if name in ("eta_lower", "eta_upper"):
            np.testing.assert_allclose(g(x)[0], 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_surrogate_exact_at_linearization(seed):
    _, sc, plan, win = instance(seed)
    eta = init_eta(plan.traj, sc)
    se = spectral_efficiency(plan.traj, sc, win.hbar, win.alive)
    np.testing.assert_allclose(surrogate_se(eta, win.hbar, sc, win.alive), se, rtol=1e-9)


def test_surrogate_single_uav():
    sc = make_scenario([(100, 100)], [(300, 200)], n_slots=2)
    traj = static_traj(sc.initial_positions(), 2)
    eta = init_eta(traj, sc)
    hbar = np.full((1, 1, 2), 0.7)
    rho, p, s2 = sc.channel.ref_gain_rho, 0.1, sc.channel.noise_power
    expected = np.log2(rho * eta.eta_lower[0, 0, 0] * 0.7 * p + s2) - np.log2(s2)
    assert surrogate_rate(eta, hbar, sc, [True], 0, 0, 1) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_surrogate_never_exceeds_true_rate(seed):
    rng = np.random.default_rng(seed)
    sc = make_scenario([(150, 250), (350, 250), (250, 400)], rng.uniform(0, 500, (4, 2)), n_slots=3)
    traj_l = random_feasible_traj(rng, sc, 3)
    traj = random_feasible_traj(rng, sc, 3)
    alive = rng.random(3) < 0.8
    alive[0] = True
    hbar = draw_fading(sc, seed=seed % 1000).hbar
    exact = inverse_sq_distance(traj, sc)
    lin = inverse_sq_distance(traj_l, sc)
    eta = EtaBounds(exact * rng.uniform(0.5, 1.0, exact.shape), exact * rng.uniform(1.0, 2.0, exact.shape),
                    lin, lin.copy(), traj_l)
    f = surrogate_se(eta, hbar, sc, alive)
    se = spectral_efficiency(traj, sc, hbar, alive)
    assert np.all(f - se <= 1e-9 * np.maximum(1.0, np.abs(se)))


# trajectory ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_surrogate_objective_tight(seed):
    _, sc, plan, win = instance(seed)
    bp, info = trajectory_program(plan, win, -5.0)
    x = linearization_point(plan, win, info)
    assert bp.program.objective(x)[0] == pytest.approx(plan_objective(plan, win, -5.0), rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(eta=st.floats(1e-8, 1.0), eta_l=st.floats(1e-8, 1.0))
def test_eta_lower_tangent_underestimates_reciprocal(eta, eta_l):
    tangent = 1 / eta_l - (eta - eta_l) / eta_l ** 2
    assert tangent <= 1 / eta * (1 + 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_eta_lower_constraint_implies_true_bound(seed):
    rng, sc, plan, win = instance(seed)
    bp, info = trajectory_program(plan, win, -2.0)
    lay = info["layout"]
    g19 = bp.program.ineqs[bp.program.ineq_names.index("eta_lower")]
    for _ in range(20):
        x = random_trajectory_point(rng, plan, win, info)
        q, s_lo, _ = lay.split(x)
        i, k, j = info["lo_idx"]
        d = q[i, j] * sc.d_max - sc.user_positions()[k]
        e = info["eta_l"][info["lo_idx"]]
        # g <= 0 forces eta_lower = s e below 1 / (d^2 + H^2)
        assert np.all(g19(x)[0] >= e * (np.sum(d * d, axis=1) + 3600) - 1 / s_lo - 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_separation_linearization_underestimates(seed):
    rng, sc, plan, win = instance(seed)
    bp, info = trajectory_program(plan, win, -2.0)
    lay = info["layout"]
    sep = bp.program.ineqs[bp.program.ineq_names.index("separation")]
    for _ in range(20):
        x = random_trajectory_point(rng, plan, win, info)
        q = lay.split(x)[0] * sc.d_max
        vals = sep(x)[0]
        r = 0
        for a in range(3):
            for b in range(a + 1, 3):
                for j in range(lay.F):
                    true = np.sum((q[a, j] - q[b, j]) ** 2)
                    assert vals[r] >= 1 - true / sc.d_min ** 2 - 1e-9
                    r += 1


@pytest.mark.parametrize("seed", range(5))
def test_subproblem_gradients(seed):
    rng, sc, plan, win = instance(seed)
    mu = -float(rng.uniform(0.5, 10))
    a = association_program(plan, win, mu).program
    x = rng.dirichlet(np.ones(3), size=a.dim // 3).T.ravel()
    assert fd_relative_error(a.objective, x) < 1e-4
    b = bandwidth_program(plan, win, mu).program
    assert fd_relative_error(b.objective, rng.uniform(0, 1, b.dim)) < 1e-4
    bp, info = trajectory_program(plan, win, mu)
    xt = random_trajectory_point(rng, plan, win, info)
    assert fd_relative_error(bp.program.objective, xt) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_trajectory_constraint_jacobians(seed):
    rng, sc, plan, win = instance(seed)
    bp, info = trajectory_program(plan, win, -2.0)
    x = random_trajectory_point(rng, plan, win, info)
    for g in bp.program.ineqs:
        v, J = g(x)[:2]
        J = J.toarray() if hasattr(J, "toarray") else np.asarray(J)
        fd = np.array([central_gradient(lambda y: g(y)[0][r], x) for r in range(v.size)])
        np.testing.assert_allclose(J, fd, rtol=1e-4, atol=1e-6 * max(1.0, np.abs(J).max()))


def test_single_uav_flies_straight_at_full_speed():
    W = 5
    sc = make_scenario([(0, 250)], [(400, 250)], n_slots=W, d_max=25.0)
    plan = Plan(np.ones((1, 1, W)), np.full((1, 1, W), 10e3), static_traj(sc.initial_positions(), W), 1,
                np.ones(1, bool), binary=True)
    win = window_for(sc, plan, np.ones((1, 1, W)))
    for _ in range(3):
        traj, _, _ = solve_trajectory(plan, win, 0.0)
        plan = plan.replace(traj=traj)
    expected = np.c_[25.0 * np.arange(W), np.full(W, 250.0)]
    np.testing.assert_allclose(plan.traj[0], expected, atol=1e-2)


def test_single_slot_window_unchanged():
    _, sc, plan, _ = instance(0, n_slots=1)
    win = window_for(sc, plan, np.ones((3, 4, 1)))
    traj, _, rep = solve_trajectory(plan, win, -1.0)
    np.testing.assert_array_equal(traj, plan.traj)


@pytest.mark.parametrize("seed", range(4))
def test_crossing_uavs_keep_separation(seed):
    rng = np.random.default_rng(seed)
    W = 4
    # each UAV's user sits behind the other UAV, so the best unconstrained paths cross
    sc = make_scenario([(248, 250), (252, 250)],
                       [(300, 250 + rng.uniform(-5, 5)), (200, 250 + rng.uniform(-5, 5))], n_slots=W)
    assoc = np.zeros((2, 2, W))
    assoc[0, 0] = assoc[1, 1] = 1.0
    plan = Plan(assoc, assoc * 10e3, static_traj(sc.initial_positions(), W), 1, np.ones(2, bool), binary=True)
    win = window_for(sc, plan, np.ones((2, 2, W)))
    traj, _, _ = solve_trajectory(plan, win, -1.0)
    sep = np.linalg.norm(traj[0] - traj[1], axis=1)
    assert sep.min() >= sc.d_min - 1e-6
    assert plan_violations(plan.replace(traj=traj), sc, anchors=win.anchors) == []


@pytest.mark.parametrize("seed", range(4))
def test_trajectory_step_feasible_and_not_worse(seed):
    _, sc, plan, win = instance(seed)
    before = plan_objective(plan, win, -3.0)
    traj, eta, rep = solve_trajectory(plan, win, -3.0)
    out = plan.replace(traj=traj)
    assert plan_violations(out, sc, anchors=win.anchors) == []
    assert plan_objective(out, win, -3.0) >= before - 1e-9
    assert np.all(eta.eta_lower > 0) and np.all(eta.eta_lower <= eta.eta_upper * (1 + 1e-9))


def test_infeasible_linearization_point_rejected():
    _, sc, plan, win = instance(0)
    bad = plan.traj.copy()
    bad[0, 2] = bad[0, 1] + 100.0
    with pytest.raises(ValueError, match="SCA requires feasible linearization point"):
        solve_trajectory(plan.replace(traj=bad), win, 0.0)
