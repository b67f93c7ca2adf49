"""The decision triple (association, bandwidth, trajectories) over one planning window."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .scenario import Scenario

BUDGET_RTOL = 1e-9
MOBILITY_TOL = 1e-6  # m
SEPARATION_TOL = 1e-6  # m
BOUNDS_TOL = 1e-6  # m
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class Plan:
    """Decisions for slots ``first_slot .. first_slot + W - 1``.

    ``assoc`` and ``bandwidth`` are (uav, user, slot); ``traj`` is
    (uav, slot, 2) in meters. Rows of UAVs outside ``alive`` carry zero
    association and bandwidth.
    """

    assoc: np.ndarray
    bandwidth: np.ndarray
    traj: np.ndarray
    first_slot: int
    alive: np.ndarray
    binary: bool = False

    @property
    def n_slots(self) -> int:
        return self.assoc.shape[2]

    @property
    def last_slot(self) -> int:
        return self.first_slot + self.n_slots - 1

    def replace(self, **changes) -> "Plan":
        return dataclasses.replace(self, **changes)

    def serving(self) -> np.ndarray:
        """Index of the serving UAV per (user, slot); only meaningful for binary plans."""
        return np.argmax(self.assoc, axis=0)

    def column(self, j: int) -> "Plan":
        """Single-slot plan holding the decisions of local slot ``j``."""
        sl = slice(j, j + 1)
        return self.replace(assoc=self.assoc[:, :, sl], bandwidth=self.bandwidth[:, :, sl],
                            traj=self.traj[:, sl], first_slot=self.first_slot + j)


def static_traj(anchors: np.ndarray, n_slots: int) -> np.ndarray:
    return np.repeat(np.asarray(anchors, dtype=float)[:, None, :], n_slots, axis=1)


def plan_violations(plan: Plan, scenario: Scenario, anchors: np.ndarray | None = None) -> list[str]:
    """Every violated Problem constraint of ``plan`` at the module tolerances.

    Checks association simplex/binary structure, bandwidth sign and budgets,
    per-slot mobility, pairwise separation, flying area and, when
    ``anchors`` is given, the pinned first-slot positions.
    """
    out: list[str] = []
    U, K, W = plan.assoc.shape
    alive = np.asarray(plan.alive, dtype=bool)
    a, b, q = plan.assoc, plan.bandwidth, plan.traj
    if plan.bandwidth.shape != (U, K, W) or q.shape != (U, W, 2):
        return [f"shape mismatch: assoc {a.shape}, bandwidth {b.shape}, traj {q.shape}"]
    if U != scenario.n_uavs or K != scenario.n_users:
        return [f"plan dimensions {U}x{K} do not match scenario {scenario.n_uavs}x{scenario.n_users}"]

    if np.any(a[~alive] != 0) or np.any(b[~alive] != 0):
        out.append("dead UAV carries association or bandwidth")
    if plan.binary:
        if not np.all((a == 0) | (a == 1)):
            out.append("binary plan has fractional association")
        cols = a[alive].sum(axis=0)
        if not np.all(cols == 1):
            bad = np.argwhere(cols != 1)[0]
            out.append(f"user {bad[0]} slot {plan.first_slot + bad[1]}: association sum {cols[tuple(bad)]} != 1")
    else:
        if np.any(a < -SIMPLEX_TOL) or np.any(a > 1 + SIMPLEX_TOL):
            out.append("relaxed association outside [0, 1]")
        cols = a[alive].sum(axis=0)
        if np.any(np.abs(cols - 1) > SIMPLEX_TOL * max(1, alive.sum())):
            out.append(f"relaxed association column sum off by {np.max(np.abs(cols - 1)):.3g}")
    if np.any(b < 0):
        out.append(f"negative bandwidth (min {b.min():.3g})")
    budgets = scenario.budgets()
    load = np.einsum("ukn,ukn->un", a, b)
    excess = load - budgets[:, None] * (1 + BUDGET_RTOL)
    if np.any(excess > 0):
        u, n = np.unravel_index(np.argmax(excess), excess.shape)
        out.append(f"uav {u} slot {plan.first_slot + n}: bandwidth budget exceeded by {excess[u, n]:.3g} Hz")

    if W > 1:
        steps = np.linalg.norm(np.diff(q, axis=1), axis=2)[alive]
        if steps.size and steps.max() > scenario.d_max + MOBILITY_TOL:
            out.append(f"mobility: step {steps.max():.9g} m exceeds D_max {scenario.d_max}")
    idx = np.flatnonzero(alive)
    for ii, u in enumerate(idx):
        for j in idx[ii + 1:]:
            sep = np.linalg.norm(q[u] - q[j], axis=1)
            if sep.min() < scenario.d_min - SEPARATION_TOL:
                out.append(f"uavs {u},{j}: separation {sep.min():.9g} m below D_min {scenario.d_min}")
    lo, hi = scenario.bounds()
    qa = q[alive]
    if np.any(qa < lo - BOUNDS_TOL) or np.any(qa > hi + BOUNDS_TOL):
        out.append("trajectory leaves the flying area")
    if anchors is not None:
        anchors = np.asarray(anchors, dtype=float)
        if np.any(q[alive, 0] != anchors[alive]):
            out.append("first-slot positions differ from the window anchors")
    return out
