"""Reference schemes: nearest-UAV association with an equal split, and static placement."""
from __future__ import annotations

import logging

import numpy as np

from .convex import InfeasibleStartError, find_strictly_feasible, maximize
from .plan import Plan, plan_violations, static_traj
from .planner import ConvergenceTrace, PlannerSettings, make_window
from .scenario import Scenario
from .subproblems import _settings_for, plan_objective, solve_bandwidth, trajectory_program

log = logging.getLogger(__name__)


def nearest_association(scenario: Scenario, anchors, alive) -> np.ndarray:
    """Serving UAV index per user: nearest alive anchor, ties to the lower index."""
    alive = np.asarray(alive, dtype=bool)
    if not alive.any():
        raise ValueError("no alive UAV")
    users = scenario.user_positions()
    d = np.linalg.norm(np.asarray(anchors, float)[:, None, :] - users[None], axis=2)
    d[~alive] = np.inf
    return np.argmin(d, axis=0)  # argmin keeps the first of equal distances


def nearest_equal_plan(scenario: Scenario, n_slots: int, first_slot: int, anchors, alive) -> Plan:
    """Hover at the anchors; nearest alive UAV serves; budgets split equally among served users."""
    alive = np.asarray(alive, dtype=bool)
    U, K = scenario.n_uavs, scenario.n_users
    serve = nearest_association(scenario, anchors, alive)
    assoc = np.zeros((U, K, n_slots))
    assoc[serve, np.arange(K)] = 1.0
    counts = assoc[:, :, 0].sum(axis=1)
    share = np.divide(scenario.budgets(), counts, out=np.zeros(U), where=counts > 0)
    bandwidth = assoc * share[:, None, None]
    return Plan(assoc=assoc, bandwidth=bandwidth, traj=static_traj(anchors, n_slots),
                first_slot=first_slot, alive=alive, binary=True)


def straight_line_traj(anchors, hover, n_slots: int, d_max: float) -> np.ndarray:
    """Fly from each anchor straight toward its hover point at D_max per slot, then stay."""
    anchors = np.asarray(anchors, dtype=float)
    hover = np.asarray(hover, dtype=float)
    step = hover - anchors
    dist = np.linalg.norm(step, axis=1)
    j = np.arange(n_slots)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(dist[:, None] > 0, np.minimum(1.0, j * d_max / dist[:, None]), 1.0)
    traj = anchors[:, None, :] + frac[:, :, None] * step[:, None, :]
    arrived = frac >= 1.0
    traj[arrived] = np.broadcast_to(hover[:, None, :], traj.shape)[arrived]
    traj[:, 0] = anchors
    return traj


def _hover_step(plan: Plan, win, settings: PlannerSettings):
    """One SCA step on the hover points; ``plan.traj`` is anchor then hover in every later slot."""
    sc = win.scenario
    reach = (plan.n_slots - 1) * sc.d_max
    bp, _ = trajectory_program(plan, win, 0.0, first_reach=reach, hover=True)
    prog = bp.program
    if any(not np.all(g(prog.start)[0] < -1e-9) for g in prog.ineqs):
        prog.start = find_strictly_feasible(prog)
    rep = maximize(prog, _settings_for(prog.n_constraints(), settings.solver))
    return bp.decode(rep.x), rep


def _hover_feasible(traj: np.ndarray, win) -> bool:
    """Hover points in bounds, separated and within reach of the anchors."""
    sc = win.scenario
    alive = win.alive
    h = traj[alive, -1]
    lo, hi = sc.bounds()
    if np.any(h < lo - 1e-9) or np.any(h > hi + 1e-9):
        return False
    reach = (traj.shape[1] - 1) * sc.d_max
    if np.any(np.linalg.norm(h - win.anchors[alive], axis=1) > reach + 1e-9):
        return False
    for a in range(h.shape[0]):
        for b in range(a + 1, h.shape[0]):
            if np.linalg.norm(h[a] - h[b]) < sc.d_min:
                return False
    return True


def placement_plan(scenario: Scenario, hbar, first_slot: int, anchors, alive,
                   settings: PlannerSettings | None = None, history=None) -> tuple[Plan, ConvergenceTrace]:
    """Nearest-UAV association, one optimized hover point per UAV, sum-rate bandwidth.

    Hover points are found by successive convex steps on the window sum
    rate as if every UAV sat at its hover point from the second slot on;
    the executed trajectory then flies there in straight lines. The result
    is never worse than the anchor geometry with optimized bandwidth.
    """
    settings = settings or PlannerSettings()
    hbar = np.asarray(hbar, dtype=float)
    W = hbar.shape[2]
    anchors = np.asarray(anchors, dtype=float)
    win = make_window(scenario, hbar, first_slot, anchors, alive, history, settings)
    base = nearest_equal_plan(scenario, W, first_slot, anchors, alive)
    trace = ConvergenceTrace(objectives=[plan_objective(base, win, 0.0)])

    hover = anchors.copy()
    if W > 1 and scenario.d_max > 0:
        virtual = base
        for it in range(1, settings.max_iterations + 1):
            try:
                new_traj, rep = _hover_step(virtual, win, settings)
            except InfeasibleStartError:
                break
            trace.reports.append((it, "placement", rep))
            cand = virtual.replace(traj=new_traj)
            if not _hover_feasible(new_traj, win):
                break
            obj, prev = plan_objective(cand, win, 0.0), trace.objectives[-1]
            if obj < prev:
                break
            virtual = cand
            trace.objectives.append(obj)
            if obj - prev <= settings.tolerance * max(abs(prev), 1e-12):
                trace.converged = True
                break
        hover = virtual.traj[:, -1].copy()
        hover[~win.alive] = anchors[~win.alive]

    candidates = []
    for traj in (straight_line_traj(anchors, hover, W, scenario.d_max), base.traj):
        plan = base.replace(traj=traj)
        if plan_violations(plan, scenario, anchors=anchors):
            continue
        bw, rep = solve_bandwidth(plan, win, 0.0, settings.solver)
        trace.reports.append((-1, "bandwidth", rep))
        plan = plan.replace(bandwidth=bw)
        candidates.append((plan_objective(plan, win, 0.0), plan))
    best_obj, best = max(candidates, key=lambda c: c[0])
    trace.rounded_objective = best_obj
    problems = plan_violations(best, scenario, anchors=anchors)
    if problems:
        raise RuntimeError("placement produced an infeasible plan: " + "; ".join(problems))
    return best, trace
