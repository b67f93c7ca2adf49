"""Alternating optimization of association, bandwidth and trajectories."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .convex import SolveReport, SolverSettings
from .plan import Plan, plan_violations, static_traj
from .risk import RiskConfig
from .scenario import Scenario
from .subproblems import (PlanningWindow, plan_objective, round_association, solve_association,
                          solve_bandwidth, solve_trajectory)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerSettings:
    max_iterations: int = 20
    tolerance: float = 1e-4
    risk: RiskConfig = field(default_factory=RiskConfig)
    history_in_objective: bool = True
    rate_unit: float = 1e5  # bits/s per utility unit
    solver: SolverSettings | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not self.rate_unit > 0:
            raise ValueError("rate_unit must be > 0")


@dataclass
class ConvergenceTrace:
    """Relaxed objective after every AO iteration (index 0 is the initial plan)."""

    objectives: list[float] = field(default_factory=list)
    reports: list[tuple[int, str, SolveReport]] = field(default_factory=list)
    rounded_objective: float | None = None
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.objectives) - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "objective", "block", "status"])
            by_iter: dict[int, list[tuple[str, str]]] = {}
            for it, block, rep in self.reports:
                by_iter.setdefault(it, []).append((block, rep.status))
            for it, obj in enumerate(self.objectives):
                for block, status in by_iter.get(it, [("init", "")]):
                    w.writerow([it, repr(float(obj)), block, status])
            if self.rounded_objective is not None:
                for block, status in by_iter.get(-1, [("rounded", "")]):
                    w.writerow(["final", repr(float(self.rounded_objective)), block, status])


def initial_plan(scenario: Scenario, n_slots: int, first_slot: int, anchors, alive) -> Plan:
    """Uniform relaxed association, equal bandwidth split, hovering at the anchors."""
    alive = np.asarray(alive, dtype=bool)
    U, K = scenario.n_uavs, scenario.n_users
    assoc = np.zeros((U, K, n_slots))
    assoc[alive] = 1.0 / alive.sum()
    mass = assoc.sum(axis=1, keepdims=True)
    share = np.divide(0.9, mass, out=np.zeros_like(mass), where=mass > 0)
    bandwidth = np.where(assoc > 0, scenario.budgets()[:, None, None] * np.minimum(share, 1.0), 0.0)
    return Plan(assoc=assoc, bandwidth=bandwidth, traj=static_traj(anchors, n_slots),
                first_slot=first_slot, alive=alive, binary=False)


def make_window(scenario: Scenario, hbar, first_slot: int, anchors, alive, history=None,
                settings: PlannerSettings | None = None) -> PlanningWindow:
    settings = settings or PlannerSettings()
    hist = np.zeros(0) if history is None or not settings.history_in_objective else np.asarray(history, float)
    return PlanningWindow(scenario=scenario, hbar=np.asarray(hbar, dtype=float), first_slot=first_slot,
                          alive=np.asarray(alive, dtype=bool), anchors=np.asarray(anchors, dtype=float),
                          history=hist, rate_unit=settings.rate_unit)


def ao_optimize(scenario: Scenario, hbar, first_slot: int, anchors, alive,
                settings: PlannerSettings | None = None, history=None) -> tuple[Plan, ConvergenceTrace]:
    """Plan one window: association, bandwidth, trajectory in turn, then round.

    ``hbar`` is the (uav, user, slot) fading the planner assumes for the
    window; ``history`` holds realized per-slot sum rates (bits/s) that
    enter the utility as constants when the settings ask for it.
    """
    settings = settings or PlannerSettings()
    hbar = np.asarray(hbar, dtype=float)
    if hbar.ndim != 3 or hbar.shape[2] == 0:
        raise ValueError("window must contain at least one slot")
    alive = np.asarray(alive, dtype=bool)
    if not alive.any():
        raise ValueError("no alive UAV to plan for")
    win = make_window(scenario, hbar, first_slot, anchors, alive, history, settings)
    probe = static_traj(win.anchors, 1)
    bad = [p for p in plan_violations(initial_plan(scenario, 1, first_slot, win.anchors, alive).replace(traj=probe),
                                      scenario) if "association" not in p and "budget" not in p]
    if bad:
        raise ValueError("infeasible anchors: " + "; ".join(bad))

    mu = settings.risk.mu
    st = settings.solver
    plan = initial_plan(scenario, hbar.shape[2], first_slot, win.anchors, alive)
    trace = ConvergenceTrace(objectives=[plan_objective(plan, win, mu)])
    for it in range(1, settings.max_iterations + 1):
        assoc, rep = solve_association(plan, win, mu, st)
        plan = plan.replace(assoc=assoc)
        trace.reports.append((it, "association", rep))
        bw, rep = solve_bandwidth(plan, win, mu, st)
        plan = plan.replace(bandwidth=bw)
        trace.reports.append((it, "bandwidth", rep))
        traj, _, rep = solve_trajectory(plan, win, mu, st)
        plan = plan.replace(traj=traj)
        trace.reports.append((it, "trajectory", rep))
        obj = plan_objective(plan, win, mu)
        prev = trace.objectives[-1]
        trace.objectives.append(obj)
        log.debug("AO iteration %d objective %.10g", it, obj)
        if abs(obj - prev) <= settings.tolerance * max(abs(prev), 1e-12):
            trace.converged = True
            break

    binary = round_association(plan)
    bw, rep = solve_bandwidth(binary, win, mu, st)
    binary = binary.replace(bandwidth=bw)
    trace.reports.append((-1, "bandwidth", rep))
    trace.rounded_objective = plan_objective(binary, win, mu)
    problems = plan_violations(binary, scenario, anchors=win.anchors)
    if problems:
        raise RuntimeError("planner produced an infeasible plan: " + "; ".join(problems))
    return binary, trace


def sr_max(scenario: Scenario, hbar, first_slot: int, anchors, alive,
           settings: PlannerSettings | None = None, history=None) -> tuple[Plan, ConvergenceTrace]:
    """Sum-rate maximization: the planner with the plain mean of the per-slot sums."""
    settings = settings or PlannerSettings()
    settings = PlannerSettings(max_iterations=settings.max_iterations, tolerance=settings.tolerance,
                               risk=RiskConfig(0.0), history_in_objective=settings.history_in_objective,
                               rate_unit=settings.rate_unit, solver=settings.solver)
    return ao_optimize(scenario, hbar, first_slot, anchors, alive, settings, history)
