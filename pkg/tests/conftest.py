import numpy as np
import pytest

from resilient_uav.plan import Plan, static_traj
from resilient_uav.scenario import ChannelParams, FailureEvent, Scenario, SlotBounds, UavConfig, UserSite
from resilient_uav.subproblems import PlanningWindow


def make_scenario(uav_xy, user_xy, n_slots=4, d_max=25.0, d_min=4.0, budgets=10e3, powers=0.1,
                  rho=0.01, rician_m=1.995, noise=1e-13, altitude=60.0, failures=(), seed=0,
                  bounds=((0.0, 0.0), (500.0, 500.0))) -> Scenario:
    U = len(uav_xy)
    budgets = np.broadcast_to(np.asarray(budgets, dtype=float), (U,))
    powers = np.broadcast_to(np.asarray(powers, dtype=float), (U,))
    uavs = tuple(UavConfig(id=i + 1, initial_position=tuple(map(float, p)), bandwidth_budget=float(budgets[i]),
                           tx_power=float(powers[i])) for i, p in enumerate(uav_xy))
    users = tuple(UserSite(id=k + 1, position=tuple(map(float, p))) for k, p in enumerate(user_xy))
    return Scenario(uavs=uavs, users=users, channel=ChannelParams(rho, rician_m, noise), n_slots=n_slots,
                    slot_bounds=SlotBounds(*bounds), altitude_h=altitude, d_max=d_max, d_min=d_min,
                    failures=tuple(FailureEvent(u, n) for u, n in failures), seed=seed)


@pytest.fixture
def small_scenario():
    return make_scenario([(150.0, 250.0), (350.0, 250.0)], [(100.0, 200.0), (300.0, 320.0), (260.0, 100.0)])


def central_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def random_relaxed_plan(rng, scenario, n_slots, alive=None, traj=None):
    """Dirichlet association, budget-feasible bandwidth, trajectory at the anchors unless given."""
    U, K = scenario.n_uavs, scenario.n_users
    alive = np.ones(U, bool) if alive is None else np.asarray(alive, bool)
    assoc = np.zeros((U, K, n_slots))
    assoc[alive] = rng.dirichlet(np.ones(alive.sum()), size=(K, n_slots)).transpose(2, 0, 1)
    share = rng.uniform(0.1, 1.0, (U, K, n_slots)) * (assoc > 0)
    load = np.einsum("ukn,ukn->un", assoc, share)
    bw = share * (0.95 * scenario.budgets()[:, None] / np.maximum(load, 1e-12))[:, None, :]
    traj = static_traj(scenario.initial_positions(), n_slots) if traj is None else traj
    return Plan(assoc=assoc, bandwidth=bw, traj=traj, first_slot=1, alive=alive, binary=False)


def random_feasible_traj(rng, scenario, n_slots, frac=0.8):
    """Random walk from the initial positions with steps below frac * D_max, separation kept."""
    anchors = scenario.initial_positions()
    lo, hi = scenario.bounds()
    while True:
        traj = np.zeros((scenario.n_uavs, n_slots, 2))
        traj[:, 0] = anchors
        for j in range(1, n_slots):
            ang = rng.uniform(0, 2 * np.pi, scenario.n_uavs)
            r = rng.uniform(0, frac * scenario.d_max, scenario.n_uavs)
            traj[:, j] = np.clip(traj[:, j - 1] + r[:, None] * np.c_[np.cos(ang), np.sin(ang)], lo, hi)
        sep = [np.linalg.norm(traj[a] - traj[b], axis=1).min()
               for a in range(scenario.n_uavs) for b in range(a + 1, scenario.n_uavs)]
        if not sep or min(sep) > scenario.d_min * 1.01:
            return traj


def window_for(scenario, plan, hbar, history=None, rate_unit=1e5):
    return PlanningWindow(scenario=scenario, hbar=np.asarray(hbar, float), first_slot=plan.first_slot,
                          alive=np.asarray(plan.alive, bool), anchors=plan.traj[:, 0].copy(),
                          history=np.zeros(0) if history is None else np.asarray(history, float),
                          rate_unit=rate_unit)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Collects one (passed, detail) entry per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_KEY, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results, key=lambda n: (not n[0].isdigit(), n)):
        ok, detail = results[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
