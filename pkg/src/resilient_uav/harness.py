"""Failure episodes: plan, execute, lose a UAV, replan, execute, and score."""
from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .baselines import nearest_equal_plan, placement_plan
from .channel import draw_fading, user_rates
from .plan import Plan
from .planner import ConvergenceTrace, PlannerSettings, ao_optimize, make_window, sr_max
from .risk import RiskConfig, jain_index, sum_rate_variance
from .scenario import Scenario, validate_scenario
from .subproblems import plan_objective

log = logging.getLogger(__name__)

SCHEMES = ("pro_alg", "sr_max", "baseline1", "baseline2")
WORKERS_ENV = "RESILIENT_UAV_WORKERS"


@dataclass
class EpisodeMetrics:
    scheme: str
    mu: float
    seed: int
    slot_sums: np.ndarray  # (N,) bits/s
    user_rates: np.ndarray  # (K, N) bits/s
    avg_rate_p1: float
    avg_rate_p2: float
    variance: float
    jain: float
    traces: list[ConvergenceTrace] = field(default_factory=list)
    plans: list[Plan] = field(default_factory=list)
    alive: np.ndarray | None = None  # (U, N) UAVs operating at each slot
    # positions flown at each slot, (U, N, 2)
    positions: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return sum(t.iterations for t in self.traces)


@dataclass(frozen=True)
class EpisodeOptions:
    """Planner settings plus the two harness switches."""

    planner: PlannerSettings = field(default_factory=PlannerSettings)
    expected_fading: bool = False  # plan with E[hbar] = 1 instead of the realized draws


def _plan_window(scheme: str, mu: float, scenario: Scenario, hbar, first: int, anchors, alive,
                 opts: EpisodeOptions, history) -> tuple[Plan, ConvergenceTrace]:
    st = opts.planner
    if scheme == "pro_alg":
        st = dataclasses.replace(st, risk=RiskConfig(mu))
        return ao_optimize(scenario, hbar, first, anchors, alive, st, history)
    if scheme == "sr_max":
        return sr_max(scenario, hbar, first, anchors, alive, st, history)
    if scheme == "baseline1":
        plan = nearest_equal_plan(scenario, hbar.shape[2], first, anchors, alive)
        win = make_window(scenario, hbar, first, anchors, alive, history, st)
        obj = plan_objective(plan, win, 0.0)
        return plan, ConvergenceTrace(objectives=[obj], rounded_objective=obj, converged=True)
    if scheme == "baseline2":
        return placement_plan(scenario, hbar, first, anchors, alive, st, history)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def _hold(plan: Plan, slot: int, alive) -> Plan:
    """The last slot of ``plan`` repeated at ``slot`` with only ``alive`` UAVs operating."""
    col = plan.column(plan.n_slots - 1)
    alive = np.asarray(alive, dtype=bool)
    keep = alive[:, None, None]
    return col.replace(assoc=np.where(keep, col.assoc, 0.0), bandwidth=np.where(keep, col.bandwidth, 0.0),
                       first_slot=slot, alive=alive)


def run_episode(scenario: Scenario, scheme: str, seed: int, mu: float = 0.0,
                options: EpisodeOptions | None = None) -> EpisodeMetrics:
    """One episode of ``scheme`` on ``scenario`` reseeded to ``seed``.

    Each failure slot executes the previous plan's last decisions with the
    failed UAV silent; the next window starts one slot later from the
    positions held at the failure slot, with the realized sums so far as
    history.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    opts = options or EpisodeOptions()
    sc = validate_scenario(scenario.reseeded(seed))
    N, U, K = sc.n_slots, sc.n_uavs, sc.n_users
    fading = draw_fading(sc)
    plan_hbar = fading.expected().hbar if opts.expected_fading else fading.hbar

    rates = np.zeros((K, N))
    alive_log = np.zeros((U, N), dtype=bool)
    pos = np.zeros((U, N, 2))
    traces, plans = [], []
    start = 1
    anchors = sc.initial_positions()
    alive = np.ones(U, dtype=bool)
    last: Plan | None = None

    def execute(plan: Plan) -> None:
        lo, hi = plan.first_slot - 1, plan.last_slot
        rates[:, lo:hi] = user_rates(plan, sc, fading.hbar[:, :, lo:hi])
        alive_log[:, lo:hi] = plan.alive[:, None]
        pos[:, lo:hi] = plan.traj

    def plan_until(stop: int) -> None:
        nonlocal last
        if stop < start:
            return
        hist = rates[:, :start - 1].sum(axis=0)
        plan, trace = _plan_window(scheme, mu, sc, plan_hbar[:, :, start - 1:stop], start, anchors, alive,
                                   opts, hist)
        traces.append(trace)
        plans.append(plan)
        execute(plan)
        last = plan

    for n_f in sc.failure_slots():
        plan_until(n_f - 1)
        alive = sc.alive_mask(n_f)
        stale = _hold(last, n_f, alive)
        execute(stale)
        last = stale
        anchors = stale.traj[:, 0].copy()
        start = n_f + 1
    plan_until(N)

    sums = rates.sum(axis=0)
    fails = sc.failure_slots()
    split = fails[0] - 1 if fails else N
    p1 = float(sums[:split].mean())
    p2 = float(sums[split:].mean()) if split < N else p1
    return EpisodeMetrics(scheme=scheme, mu=float(mu) if scheme == "pro_alg" else 0.0, seed=seed,
                          slot_sums=sums, user_rates=rates, avg_rate_p1=p1, avg_rate_p2=p2,
                          variance=sum_rate_variance(sums), jain=jain_index(rates.mean(axis=1)),
                          traces=traces, plans=plans, alive=alive_log, positions=pos)


def worker_count(jobs: int) -> int:
    """Pool size: the environment cap if set, else the CPU count, never above ``jobs``."""
    cap = os.environ.get(WORKERS_ENV)
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, jobs))


def _job(args):
    scenario, scheme, seed, mu, opts = args
    return run_episode(scenario, scheme, seed, mu, opts)


def sweep_jobs(mus: Sequence[float], seeds: Sequence[int]) -> list[tuple[str, float, int]]:
    """(scheme, mu, seed) for pro_alg at every mu and each other scheme once, per seed."""
    jobs = []
    for seed in seeds:
        jobs += [("pro_alg", float(mu), seed) for mu in mus]
        jobs += [(s, 0.0, seed) for s in SCHEMES if s != "pro_alg"]
    return jobs


def sweep_mu(scenario: Scenario, mus: Sequence[float], seeds: Sequence[int],
             options: EpisodeOptions | None = None, workers: int | None = None) -> list[EpisodeMetrics]:
    """Every job of ``sweep_jobs``; results come back in job order whatever the pool does."""
    for mu in mus:
        RiskConfig(mu)  # rejects mu > 0
    opts = options or EpisodeOptions()
    jobs = sweep_jobs(mus, seeds)
    args = [(scenario, s, seed, mu, opts) for s, mu, seed in jobs]
    n = workers if workers is not None else worker_count(len(args))
    if n <= 1:
        return [_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_job, args))
