import numpy as np
import pytest

from resilient_uav.harness import (SCHEMES, EpisodeOptions, run_episode, sweep_jobs, sweep_mu, worker_count,
                                   WORKERS_ENV)
from resilient_uav.plan import plan_violations
from resilient_uav.risk import jain_index, sum_rate_variance

from conftest import make_scenario

USERS = [(100, 200), (300, 320), (260, 100), (420, 420)]


def failing(n_slots=6, fail=4):
    return make_scenario([(150, 250), (350, 250), (250, 420)], USERS, n_slots=n_slots, failures=[(1, fail)])


@pytest.mark.parametrize("scheme", SCHEMES)
def test_no_failure_single_period(scheme):
    sc = make_scenario([(150, 250), (350, 250)], USERS, n_slots=4)
    m = run_episode(sc, scheme, seed=3, mu=-2.0)
    assert len(m.plans) == 1 and len(m.traces) == 1
    assert m.avg_rate_p1 == pytest.approx(m.slot_sums.mean()) and m.avg_rate_p2 == m.avg_rate_p1


@pytest.mark.parametrize("scheme", SCHEMES)
def test_failure_episode_contract(scheme):
    sc = failing()
    m = run_episode(sc, scheme, seed=1, mu=-3.0)
    n_f = 4
    np.testing.assert_allclose(m.slot_sums, m.user_rates.sum(axis=0), rtol=1e-9)
    assert m.variance == sum_rate_variance(m.slot_sums)
    assert m.jain == jain_index(m.user_rates.mean(axis=1))
    assert m.avg_rate_p1 == pytest.approx(m.slot_sums[:n_f - 1].mean())
    assert m.avg_rate_p2 == pytest.approx(m.slot_sums[n_f - 1:].mean())
    # plan for 1..3, stale slot 4, replan 5..6
    assert [(p.first_slot, p.last_slot) for p in m.plans] == [(1, 3), (5, 6)]
    assert not m.alive[0, n_f - 1:].any() and m.alive[0, :n_f - 1].all()
    # the failure slot repeats the last planned positions and the replan starts there
    np.testing.assert_array_equal(m.positions[:, n_f - 1], m.plans[0].traj[:, -1])
    np.testing.assert_array_equal(m.plans[1].traj[:, 0], m.positions[:, n_f - 1])
    for p in m.plans:
        assert plan_violations(p, sc, anchors=p.traj[:, 0]) == []
    late = m.plans[1]
    assert np.all(late.assoc[0] == 0) and np.all(late.bandwidth[0] == 0)
    # movement stays within D_max across the failure boundary too
    steps = np.linalg.norm(np.diff(m.positions[1:], axis=1), axis=2)
    assert steps.max() <= sc.d_max + 1e-6


def test_failed_uavs_users_lose_the_failure_slot():
    sc = failing()
    m = run_episode(sc, "baseline1", seed=0)
    served = m.plans[0].assoc[0, :, -1] > 0
    assert served.any()
    assert np.all(m.user_rates[served, 3] == 0.0)


def test_episode_deterministic():
    sc = failing()
    a = run_episode(sc, "pro_alg", seed=2, mu=-5.0)
    b = run_episode(sc, "pro_alg", seed=2, mu=-5.0)
    np.testing.assert_array_equal(a.user_rates, b.user_rates)
    np.testing.assert_array_equal(a.positions, b.positions)


def test_expected_fading_changes_the_plan():
    sc = failing()
    a = run_episode(sc, "sr_max", seed=0)
    b = run_episode(sc, "sr_max", seed=0, options=EpisodeOptions(expected_fading=True))
    assert not np.array_equal(a.plans[0].bandwidth, b.plans[0].bandwidth)
    assert a.user_rates.shape == b.user_rates.shape


def test_unknown_scheme():
    with pytest.raises(ValueError, match="unknown scheme"):
        run_episode(failing(), "greedy", seed=0)


def test_sweep_jobs_cardinality():
    jobs = sweep_jobs([0.0, -2.0], range(3))
    assert len(jobs) == 3 * (2 + 3)
    assert sum(1 for s, _, _ in jobs if s == "sr_max") == 3


def test_sweep_rejects_positive_mu():
    with pytest.raises(ValueError):
        sweep_mu(failing(), [0.5], [0])


def test_zero_mu_matches_sum_rate_and_pool_is_order_free():
    sc = failing(n_slots=5, fail=3)
    serial = sweep_mu(sc, [0.0], [0, 1], workers=1)
    pooled = sweep_mu(sc, [0.0], [0, 1], workers=2)
    for a, b in zip(serial, pooled):
        assert (a.scheme, a.mu, a.seed) == (b.scheme, b.mu, b.seed)
        np.testing.assert_array_equal(a.user_rates, b.user_rates)
    by = {(m.scheme, m.seed): m for m in serial}
    for seed in (0, 1):
        pro, sr = by[("pro_alg", seed)], by[("sr_max", seed)]
        for tp, ts in zip(pro.traces, sr.traces):
            assert tp.rounded_objective == pytest.approx(ts.rounded_objective, rel=1e-6)


def test_worker_cap(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert worker_count(10) == 3
    assert worker_count(2) == 2
    monkeypatch.delenv(WORKERS_ENV)
    assert worker_count(1) == 1
