"""The three alternating-optimization blocks: association, bandwidth, trajectory.

Every block maximizes the exponential utility of the per-slot sum rates of
one planning window (optionally prefixed by already realized slots) over a
single decision block, holding the other two fixed. Rates enter the utility
in units of ``PlanningWindow.rate_unit`` bits/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .channel import spectral_efficiency, sum_rates
from .convex import (CompositeObjective, ConcaveProgram, InfeasibleStartError, LinearIneq, PatternJacobian, SolveReport,
                     SolverSettings, find_strictly_feasible, maximize)
from .plan import Plan, plan_violations
from .risk import exp_utility_curvature, exp_utility_grad
from .scenario import Scenario

LN2 = math.log(2.0)


@dataclass(frozen=True)
class PlanningWindow:
    """Everything a block solve needs besides the plan itself."""

    scenario: Scenario
    hbar: np.ndarray  # (uav, user, slot) fading assumed by the planner
    first_slot: int
    alive: np.ndarray  # (uav,) bool
    anchors: np.ndarray  # (uav, 2) pinned first-slot positions
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))  # realized sums, bits/s
    rate_unit: float = 1e5

    @property
    def n_slots(self) -> int:
        return self.hbar.shape[2]

    @property
    def alive_idx(self) -> np.ndarray:
        return np.flatnonzero(self.alive)


def window_utility(sums, win: PlanningWindow, mu: float) -> float:
    """Exponential utility of history + window sums (bits/s in, rate units out)."""
    s = np.concatenate([np.asarray(win.history, dtype=float), np.asarray(sums, dtype=float)])
    return exp_utility_grad(s / win.rate_unit, mu)[0]


def plan_objective(plan: Plan, win: PlanningWindow, mu: float) -> float:
    return window_utility(sum_rates(plan, win.scenario, win.hbar), win, mu)


def _utility_and_window_grad(window_sums_units, win: PlanningWindow, mu: float, prefix=()):
    hist = np.concatenate([np.asarray(win.history, dtype=float) / win.rate_unit, prefix])
    g, grad = exp_utility_grad(np.concatenate([hist, window_sums_units]), mu)
    return g, grad[hist.size:]


def _utility_window_curvature(window_sums_units, win: PlanningWindow, mu: float, prefix=()):
    hist = np.concatenate([np.asarray(win.history, dtype=float) / win.rate_unit, prefix])
    H = exp_utility_curvature(np.concatenate([hist, window_sums_units]), mu)
    return H[hist.size:, hist.size:]


def _window_composite_affine(C, win: PlanningWindow, mu: float) -> CompositeObjective:
    W = C.shape[0]
    return CompositeObjective.affine(C, np.zeros(W), lambda s: _utility_and_window_grad(s, win, mu),
                                     lambda s: _utility_window_curvature(s, win, mu))


def _settings_for(n_constraints: int, base: SolverSettings | None) -> SolverSettings:
    # without explicit settings the first barrier weight follows the objective scale
    st = SolverSettings(**base.__dict__) if base is not None else SolverSettings(t0=None)
    needed = int(math.ceil(math.log(max(n_constraints, 1) / st.gap_tol / (st.t0 or 1.0), st.t_factor))) + 1
    st.max_outer = max(st.max_outer, needed)
    return st


def _skipped(x, reason: str, objective: float) -> SolveReport:
    return SolveReport(x=np.asarray(x), objective=objective, outer_iterations=0, inner_iterations=0,
                       violation=0.0, stationarity=0.0, status=reason)


# ---------------------------------------------------------------------------
# Association
# ---------------------------------------------------------------------------

@dataclass
class BlockProgram:
    """A block's program plus the map from its solution back to plan tables."""

    program: ConcaveProgram
    decode: callable


def association_program(plan: Plan, win: PlanningWindow, mu: float, start=None) -> BlockProgram:
    sc = win.scenario
    A = win.alive_idx
    Ua, K, W = A.size, sc.n_users, win.n_slots
    se = spectral_efficiency(plan.traj, sc, win.hbar, win.alive)
    coef = (plan.bandwidth * se)[A] / win.rate_unit  # (Ua, K, W)
    dim = Ua * K * W

    slot_of = np.broadcast_to(np.arange(W), (Ua, K, W)).ravel()
    objective = _window_composite_affine(
        sp.csr_matrix((coef.ravel(), (slot_of, np.arange(dim))), shape=(W, dim)), win, mu)

    budgets = sc.budgets()[A]
    b = plan.bandwidth[A]
    rows, cols, vals = [], [], []
    r = 0
    for iu in range(Ua):
        for n in range(W):
            col = iu * K * W + np.arange(K) * W + n
            v = b[iu, :, n] / budgets[iu]
            nz = v > 0
            if not nz.any():
                continue
            rows.append(np.full(nz.sum(), r))
            cols.append(col[nz])
            vals.append(v[nz])
            r += 1
    ineqs, names = [], []
    if r:
        L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, dim))
        ineqs.append(LinearIneq(L, np.ones(r)))
        names.append("budget")

    # simplex per (user, slot): orthonormal null-space basis built blockwise
    block = scipy.linalg.null_space(np.ones((1, Ua)))  # (Ua, Ua-1)
    KW = K * W
    eq = np.zeros((KW, dim))
    Z = np.zeros((dim, KW * (Ua - 1)))
    j = np.arange(KW)
    for iu in range(Ua):
        eq[j, iu * KW + j] = 1.0
        for rr in range(Ua - 1):
            Z[iu * KW + j, j * (Ua - 1) + rr] = block[iu, rr]

    x0 = np.full(dim, 1.0 / Ua) if start is None else np.asarray(start, dtype=float)
    program = ConcaveProgram(dim=dim, objective=objective, start=x0, ineqs=ineqs, eq_matrix=eq,
                             eq_rhs=np.ones(KW), lower=np.zeros(dim), ineq_names=names, null_space=Z)

    def decode(x):
        out = np.zeros_like(plan.assoc)
        out[A] = np.clip(x.reshape(Ua, K, W), 0.0, 1.0)
        return out

    return BlockProgram(program, decode)


def _association_start(plan: Plan, win: PlanningWindow, program: ConcaveProgram):
    """Incoming relaxed association, pulled toward low-load choices until strictly feasible."""
    A = win.alive_idx
    Ua = A.size
    current = np.clip(plan.assoc[A], 0.0, 1.0)
    cols = current.sum(axis=0, keepdims=True)
    current = np.where(cols > 0, current / np.where(cols > 0, cols, 1.0), 1.0 / Ua)
    b = plan.bandwidth[A] / win.scenario.budgets()[A][:, None, None]
    low = np.zeros_like(current)
    pick = np.argmin(b, axis=0)
    np.put_along_axis(low, pick[None], 1.0, axis=0)
    uniform = np.full_like(current, 1.0 / Ua)

    def strict(x):
        if np.any(x <= 0):
            return False
        return all(np.all(g(x)[0] < -1e-9) for g in program.ineqs)

    for theta in (0.0, 1e-3, 1e-2, 0.1, 0.5):
        x = ((1 - theta) * current + theta * 0.5 * (low + uniform)).ravel()
        if strict(x):
            return x
    program.start = uniform.ravel()
    return find_strictly_feasible(program)


def solve_association(plan: Plan, win: PlanningWindow, mu: float,
                      settings: SolverSettings | None = None) -> tuple[np.ndarray, SolveReport]:
    """Relaxed association step: simplex per (user, slot) plus per-UAV budgets.

    Returns the incoming table unchanged when the new one would lower the
    true objective or when the feasible set has no interior.
    """
    A = win.alive_idx
    before = plan_objective(plan, win, mu)
    if A.size == 1:
        out = np.zeros_like(plan.assoc)
        out[A[0]] = 1.0
        return out, _skipped(out[A].ravel(), "trivial", plan_objective(plan.replace(assoc=out), win, mu))
    bp = association_program(plan, win, mu)
    try:
        bp.program.start = _association_start(plan, win, bp.program)
    except InfeasibleStartError:
        if _budget_feasible(plan, win):
            return plan.assoc, _skipped(plan.assoc[A].ravel(), "no-interior", before)
        raise
    rep = maximize(bp.program, _settings_for(bp.program.n_constraints(), settings))
    new = bp.decode(rep.x)
    after = plan_objective(plan.replace(assoc=new), win, mu)
    if after < before and _budget_feasible(plan, win):
        rep.status += "+kept-incoming"
        return plan.assoc, rep
    return new, rep


def _budget_feasible(plan: Plan, win: PlanningWindow) -> bool:
    load = np.einsum("ukn,ukn->un", plan.assoc, plan.bandwidth)
    return bool(np.all(load <= win.scenario.budgets()[:, None] * (1 + 1e-9)))


def round_association(plan: Plan) -> Plan:
    """Each (user, slot) goes to its largest relaxed weight among alive UAVs; ties to the lowest index."""
    alive = np.asarray(plan.alive, dtype=bool)
    masked = np.where(alive[:, None, None], plan.assoc, -np.inf)
    pick = np.argmax(masked, axis=0)
    binary = np.zeros_like(plan.assoc)
    np.put_along_axis(binary, pick[None], 1.0, axis=0)
    return plan.replace(assoc=binary, bandwidth=plan.bandwidth * binary, binary=True)


# ---------------------------------------------------------------------------
# Bandwidth
# ---------------------------------------------------------------------------

def bandwidth_program(plan: Plan, win: PlanningWindow, mu: float) -> BlockProgram:
    sc = win.scenario
    U, K, W = plan.assoc.shape
    budgets = sc.budgets()
    se = spectral_efficiency(plan.traj, sc, win.hbar, win.alive)
    mask = (plan.assoc > 0) & win.alive[:, None, None] & (budgets[:, None, None] > 0)
    u_i, k_i, n_i = np.nonzero(mask)
    dim = u_i.size
    a = plan.assoc[u_i, k_i, n_i]
    coef = a * budgets[u_i] * se[u_i, k_i, n_i] / win.rate_unit

    objective = _window_composite_affine(sp.csr_matrix((coef, (n_i, np.arange(dim))), shape=(W, dim)), win, mu)

    row_key = u_i * W + n_i
    uniq, row = np.unique(row_key, return_inverse=True)
    L = sp.csr_matrix((a, (row, np.arange(dim))), shape=(uniq.size, dim))
    mass = np.bincount(row, weights=a, minlength=uniq.size)
    start = np.minimum(0.9, 0.9 / mass[row])
    program = ConcaveProgram(dim=dim, objective=objective, start=start,
                             ineqs=[LinearIneq(L, np.ones(uniq.size))] if dim else [],
                             lower=np.zeros(dim), upper=np.ones(dim), ineq_names=["budget"])

    def decode(y):
        out = np.zeros_like(plan.bandwidth)
        out[u_i, k_i, n_i] = np.clip(y, 0.0, 1.0) * budgets[u_i]
        return out

    return BlockProgram(program, decode)


def solve_bandwidth(plan: Plan, win: PlanningWindow, mu: float,
                    settings: SolverSettings | None = None) -> tuple[np.ndarray, SolveReport]:
    """Bandwidth step for fixed association and trajectories.

    Only associated pairs get variables (scaled by the UAV budget, so each
    lies in [0, 1]); every other entry of the returned table is zero.
    """
    bp = bandwidth_program(plan, win, mu)
    if bp.program.dim == 0:
        out = np.zeros_like(plan.bandwidth)
        return out, _skipped(np.zeros(0), "trivial", plan_objective(plan.replace(bandwidth=out), win, mu))
    rep = maximize(bp.program, _settings_for(bp.program.n_constraints(), settings))
    new = bp.decode(rep.x)
    if _budget_feasible(plan, win) and np.all(plan.bandwidth[plan.assoc == 0] == 0):
        before = plan_objective(plan, win, mu)
        if plan_objective(plan.replace(bandwidth=new), win, mu) < before:
            rep.status += "+kept-incoming"
            return plan.bandwidth, rep
    return new, rep


# ---------------------------------------------------------------------------
# Trajectory (successive convex approximation)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EtaBounds:
    """Bounds eta_lower <= 1/(d^2 + H^2) <= eta_upper and the linearization point they came from."""

    eta_lower: np.ndarray
    eta_upper: np.ndarray
    eta_lower_l: np.ndarray
    eta_upper_l: np.ndarray
    traj_l: np.ndarray


def inverse_sq_distance(traj: np.ndarray, scenario: Scenario) -> np.ndarray:
    users = scenario.user_positions()
    diff = traj[:, None, :, :] - users[None, :, None, :]
    return 1.0 / (np.einsum("ukjc,ukjc->ukj", diff, diff) + scenario.altitude_h ** 2)


def init_eta(traj_l: np.ndarray, scenario: Scenario) -> EtaBounds:
    eta = inverse_sq_distance(np.asarray(traj_l, dtype=float), scenario)
    return EtaBounds(eta.copy(), eta.copy(), eta.copy(), eta.copy(), np.array(traj_l, dtype=float))


def surrogate_se(eta: EtaBounds, hbar: np.ndarray, scenario: Scenario, alive) -> np.ndarray:
    """Concave lower bound of log2(1 + SINR) for every (serving uav, user, slot)."""
    alive = np.asarray(alive, dtype=bool)
    rho, noise = scenario.channel.ref_gain_rho, scenario.channel.noise_power
    base = rho * hbar * scenario.powers()[:, None, None]
    base = np.where(alive[:, None, None], base, 0.0)
    signal_all = (base * eta.eta_lower).sum(axis=0) + noise
    p_l = base * eta.eta_upper_l
    interf_l = p_l.sum(axis=0, keepdims=True) - p_l + noise
    p_up = base * (eta.eta_upper - eta.eta_upper_l)
    lin = p_up.sum(axis=0, keepdims=True) - p_up
    out = np.log2(signal_all)[None] - np.log2(interf_l) - lin / (interf_l * LN2)
    return np.where(alive[:, None, None], out, 0.0)


def surrogate_rate(eta: EtaBounds, hbar: np.ndarray, scenario: Scenario, alive, u: int, k: int, n: int) -> float:
    return float(surrogate_se(eta, hbar, scenario, alive)[u, k, n])


def _traj_feasible(traj: np.ndarray, win: PlanningWindow) -> list[str]:
    sc = win.scenario
    probe = Plan(assoc=np.zeros((sc.n_uavs, sc.n_users, win.n_slots)),
                 bandwidth=np.zeros((sc.n_uavs, sc.n_users, win.n_slots)),
                 traj=traj, first_slot=win.first_slot, alive=win.alive, binary=False)
    problems = plan_violations(probe, sc, anchors=win.anchors)
    return [p for p in problems if "association" not in p]


class _TrajectoryLayout:
    """Variable layout: positions (alive uav, free slot, 2) / pos_scale, then eta ratios."""

    def __init__(self, n_alive: int, n_free: int, lo_idx: tuple, up_idx: tuple):
        self.Ua, self.F = n_alive, n_free
        self.nq = n_alive * n_free * 2
        self.lo_idx = lo_idx  # (i, k, j) arrays of eta_lower variables
        self.up_idx = up_idx
        self.n_lo = lo_idx[0].size
        self.n_up = up_idx[0].size
        self.dim = self.nq + self.n_lo + self.n_up

    def q_col(self, i, j, c):
        return (np.asarray(i) * self.F + np.asarray(j)) * 2 + c

    def split(self, x):
        q = x[:self.nq].reshape(self.Ua, self.F, 2)
        s_lo = x[self.nq:self.nq + self.n_lo]
        s_up = x[self.nq + self.n_lo:]
        return q, s_lo, s_up


UP_CAP = 4.0


def trajectory_program(plan: Plan, win: PlanningWindow, mu: float, first_reach: float | None = None,
                       hover: bool = False) -> tuple[BlockProgram, dict]:
    """Convex surrogate of the trajectory block linearized at ``plan.traj``.

    Decision variables are the free-slot positions of alive UAVs (slot 0 is
    the pinned anchor) and the eta bounds, stored as ratios to their
    linearization values. ``first_reach`` replaces D_max for the step out of
    the anchor; ``hover`` ties every free slot of a UAV to one position.
    """
    sc = win.scenario
    A = win.alive_idx
    Ua, K, W = A.size, sc.n_users, win.n_slots
    F = W - 1
    H2 = sc.altitude_h ** 2
    rho, noise = sc.channel.ref_gain_rho, sc.channel.noise_power
    users = sc.user_positions()
    ql = plan.traj[A]  # (Ua, W, 2)
    eta_l = inverse_sq_distance(plan.traj, sc)[A][:, :, 1:]  # (Ua, K, F)
    P = rho * eta_l * win.hbar[A][:, :, 1:] * sc.powers()[A][:, None, None]  # rx power at l
    w = (plan.assoc * plan.bandwidth)[A][:, :, 1:]  # Hz
    Dfull = P.sum(axis=0) + noise  # (K, F)
    Du = Dfull[None] - P  # interference + noise seen by serving u
    Wkj = w.sum(axis=0)
    ratio = (w / Du).sum(axis=0)[None] - w / Du
    cup = P / LN2 * ratio  # linear cost of eta_upper ratios
    const = -(w * np.log2(Du)).sum(axis=0) + cup.sum(axis=0)  # (K, F)

    lo_mask = np.broadcast_to(Wkj[None] > 0, (Ua, K, F))
    up_mask = cup > 0
    lo_idx = np.nonzero(lo_mask)
    up_idx = np.nonzero(up_mask)
    lay = _TrajectoryLayout(Ua, F, lo_idx, up_idx)
    scale = sc.d_max
    unit = win.rate_unit

    # slot 0 is fixed: its sum rate is a constant of the program
    se0 = spectral_efficiency(plan.traj[:, :1], sc, win.hbar[:, :, :1], win.alive)
    s0 = float((plan.assoc[:, :, :1] * plan.bandwidth[:, :, :1] * se0).sum()) / unit

    P_lo = P[lo_idx]
    W_lo = Wkj[lo_idx[1], lo_idx[2]]
    cup_up = cup[up_idx]
    kj_lo = lo_idx[1] * F + lo_idx[2]
    # affine inner map u = [signal totals T_kj, eta_upper cost per slot]; the
    # log and the utility live in the outer function
    n_T = K * F
    rows = np.concatenate([kj_lo, n_T + up_idx[2]])
    cols = np.concatenate([lay.nq + np.arange(lay.n_lo), lay.nq + lay.n_lo + np.arange(lay.n_up)])
    L = sp.csr_matrix((np.concatenate([P_lo, cup_up]), (rows, cols)), shape=(n_T + F, lay.dim))
    u0 = np.concatenate([np.full(n_T, noise), np.zeros(F)])
    Wflat = Wkj.ravel()
    kj_slot = np.tile(np.arange(F), K)
    prefix = np.array([s0])

    def slot_sums(u):
        T = u[:n_T]
        terms = np.where(Wflat > 0, Wflat * np.log2(np.where(Wflat > 0, T, 1.0)), 0.0)
        s = np.bincount(kj_slot, weights=terms, minlength=F) + const.sum(axis=0) - u[n_T:]
        return s / unit

    def outer(u):
        g, pi = _utility_and_window_grad(slot_sums(u), win, mu, prefix)
        dT = pi[kj_slot] * Wflat / (u[:n_T] * LN2 * unit)
        return g, np.concatenate([dT, -pi / unit])

    def outer_curvature(u):
        S = slot_sums(u)
        _, pi = _utility_and_window_grad(S, win, mu, prefix)
        HG = _utility_window_curvature(S, win, mu, prefix)
        T = u[:n_T]
        Js = np.zeros((F, n_T + F))
        Js[kj_slot, np.arange(n_T)] = Wflat / (T * LN2 * unit)
        Js[np.arange(F), n_T + np.arange(F)] = -1.0 / unit
        H = Js.T @ HG @ Js
        H[np.arange(n_T), np.arange(n_T)] -= pi[kj_slot] * Wflat / (T * T * LN2 * unit)
        return H

    objective = CompositeObjective.affine(L, u0, outer, outer_curvature)

    ineqs, names = [], []
    # eta_lower: first-order expansion of 1/eta_lower must dominate d^2 + H^2
    i19, k19, j19 = lo_idx
    e19 = eta_l[lo_idx]
    c19 = users[k19]
    rows19 = np.repeat(np.arange(lay.n_lo), 3)
    cols19 = np.stack([lay.q_col(i19, j19, 0), lay.q_col(i19, j19, 1), lay.nq + np.arange(lay.n_lo)], axis=1).ravel()
    jac19 = PatternJacobian(rows19, cols19, (lay.n_lo, lay.dim))

    def g19(x):
        q, s_lo, _ = lay.split(x)
        d = q[i19, j19] * scale - c19
        val = e19 * (np.einsum("ij,ij->i", d, d) + H2) + s_lo - 2.0
        dq = 2.0 * e19[:, None] * d * scale
        return val, jac19.build(np.column_stack([dq, np.ones(lay.n_lo)]).ravel()), curv19

    qc19 = np.concatenate([lay.q_col(i19, j19, 0), lay.q_col(i19, j19, 1)])

    def curv19(wts):
        return qc19, qc19, np.tile(2.0 * e19 * scale ** 2 * wts, 2)

    if lay.n_lo:
        ineqs.append(g19)
        names.append("eta_lower")

    # eta_upper: 1/eta_upper below the linearized squared distance
    i20, k20, j20 = up_idx
    e20 = eta_l[up_idx]
    ql20 = ql[i20, j20 + 1]
    dl20 = ql20 - users[k20]
    rows20 = np.repeat(np.arange(lay.n_up), 3)
    cols20 = np.stack([lay.q_col(i20, j20, 0), lay.q_col(i20, j20, 1),
                       lay.nq + lay.n_lo + np.arange(lay.n_up)], axis=1).ravel()
    jac20 = PatternJacobian(rows20, cols20, (lay.n_up, lay.dim))
    up_cols20 = lay.nq + lay.n_lo + np.arange(lay.n_up)

    def g20(x):
        q, _, s_up = lay.split(x)
        step = q[i20, j20] * scale - ql20
        lin = 1.0 + 2.0 * e20 * np.einsum("ij,ij->i", dl20, step)
        val = 1.0 / s_up - lin
        dq = -2.0 * e20[:, None] * dl20 * scale

        def curv20(wts):
            return up_cols20, up_cols20, 2.0 * wts / s_up ** 3

        return val, jac20.build(np.column_stack([dq, -1.0 / s_up ** 2]).ravel()), curv20

    if lay.n_up:
        ineqs.append(g20)
        names.append("eta_upper")

    # per-slot mobility
    anchors = win.anchors[A] / scale
    im, jm = np.meshgrid(np.arange(Ua), np.arange(F), indexing="ij")
    im, jm = im.ravel(), jm.ravel()
    first = jm == 0
    rows_m, cols_m = [], []
    for c in range(2):
        rows_m.append(np.arange(im.size))
        cols_m.append(lay.q_col(im, jm, c))
    later = np.flatnonzero(~first)
    for c in range(2):
        rows_m.append(later)
        cols_m.append(lay.q_col(im[later], jm[later] - 1, c))
    jacm = PatternJacobian(np.concatenate(rows_m), np.concatenate(cols_m), (im.size, lay.dim))

    # squared step limits in units of D_max
    reach2 = np.ones(im.size)
    if first_reach is not None:
        reach2[first] = (first_reach / scale) ** 2

    def gmob(x):
        q = x[:lay.nq].reshape(Ua, F, 2)
        prev = np.concatenate([anchors[:, None, :], q[:, :-1]], axis=1)
        d = (q - prev).reshape(-1, 2) / np.sqrt(reach2)[:, None]
        val = np.einsum("ij,ij->i", d, d) - 1.0
        d = d / np.sqrt(reach2)[:, None]
        vals = [2 * d[:, 0], 2 * d[:, 1], -2 * d[later, 0], -2 * d[later, 1]]
        return val, jacm.build(np.concatenate(vals)), curvm

    # hessian of |q_j - q_{j-1}|^2 is 2 [[I, -I], [-I, I]] (just 2 I for the first step)
    hm_rows, hm_cols, hm_sign, hm_row_id = [], [], [], []
    for c in range(2):
        cur = lay.q_col(im, jm, c)
        hm_rows.append(cur); hm_cols.append(cur); hm_sign.append(np.ones(im.size)); hm_row_id.append(np.arange(im.size))
        prv = lay.q_col(im[later], jm[later] - 1, c)
        cl = cur[later]
        for r_, c_, sg in ((prv, prv, 1.0), (cl, prv, -1.0), (prv, cl, -1.0)):
            hm_rows.append(r_); hm_cols.append(c_); hm_sign.append(np.full(later.size, sg)); hm_row_id.append(later)
    hm_rows, hm_cols = np.concatenate(hm_rows), np.concatenate(hm_cols)
    hm_sign, hm_row_id = np.concatenate(hm_sign), np.concatenate(hm_row_id)

    def curvm(wts):
        return hm_rows, hm_cols, 2.0 * hm_sign * (wts / reach2)[hm_row_id]

    ineqs.append(gmob)
    names.append("mobility")

    # linearized pairwise separation (affine in the positions)
    if sc.d_min > 0 and Ua > 1:
        rows, cols, vals, rhs = [], [], [], []
        r = 0
        for a in range(Ua):
            for b in range(a + 1, Ua):
                for j in range(F):
                    dl = ql[a, j + 1] - ql[b, j + 1]
                    # 1 - (2 dl.(q_a - q_b) - |dl|^2) / Dmin^2 <= 0
                    for c in range(2):
                        rows += [r, r]
                        cols += [lay.q_col(a, j, c), lay.q_col(b, j, c)]
                        vals += [-2 * dl[c] * scale / sc.d_min ** 2, 2 * dl[c] * scale / sc.d_min ** 2]
                    rhs.append(-1.0 - dl @ dl / sc.d_min ** 2)
                    r += 1
        Lc = sp.csr_matrix((vals, (rows, cols)), shape=(r, lay.dim))
        ineqs.append(LinearIneq(Lc, np.array(rhs)))
        names.append("separation")

    lo_b, hi_b = sc.bounds()
    lower = np.full(lay.dim, -np.inf)
    upper = np.full(lay.dim, np.inf)
    lower[:lay.nq] = np.tile(lo_b / scale, Ua * F)
    upper[:lay.nq] = np.tile(hi_b / scale, Ua * F)
    lower[lay.nq:] = 0.0
    # eta never exceeds 1/H^2; a loose multiple of that keeps the upper ratios bounded
    up_cap = UP_CAP / (e20 * H2)
    upper[lay.nq + lay.n_lo:] = up_cap

    # strictly feasible start: shrink the incoming steps toward the anchor, then open eta slack
    q0 = win.anchors[A][:, None, :] + (1 - 1e-6) * (ql[:, 1:] - win.anchors[A][:, None, :])
    # anchors may sit on the area edge; the box must hold strictly
    edge = 1e-7 * scale
    q0 = np.clip(q0, lo_b + edge, hi_b - edge)
    d0 = q0[i19, j19] - c19
    # eta values halfway into their feasible ranges keep the first centering short
    s_lo0 = 0.5 * (2.0 - e19 * (np.einsum("ij,ij->i", d0, d0) + H2))
    lin0 = 1.0 + 2.0 * e20 * np.einsum("ij,ij->i", dl20, q0[i20, j20] - ql20)
    s_up0 = np.sqrt(up_cap / np.maximum(lin0, 1.0 / up_cap))
    x0 = np.concatenate([(q0 / scale).ravel(), s_lo0, s_up0])
    eq = eq_rhs = Z = None
    if hover and F > 1:
        # q[i, j] = q[i, 0] for every later free slot j
        n_eq = Ua * (F - 1) * 2
        eq = np.zeros((n_eq, lay.dim))
        Z = np.zeros((lay.dim, lay.dim - n_eq))
        r = 0
        for i in range(Ua):
            for c in range(2):
                Z[lay.q_col(i, np.arange(F), c), i * 2 + c] = 1.0 / np.sqrt(F)
                for j in range(1, F):
                    eq[r, lay.q_col(i, j, c)] = 1.0
                    eq[r, lay.q_col(i, 0, c)] = -1.0
                    r += 1
        Z[lay.nq:, Ua * 2:] = np.eye(lay.dim - lay.nq)
        eq_rhs = np.zeros(n_eq)
    program = ConcaveProgram(dim=lay.dim, objective=objective, start=x0, ineqs=ineqs,
                             lower=lower, upper=upper, ineq_names=names, eq_matrix=eq, eq_rhs=eq_rhs,
                             null_space=Z)

    def decode(x):
        q, s_lo, s_up = lay.split(x)
        traj = plan.traj.copy()
        traj[A, 1:] = q * scale
        return traj

    info = dict(layout=lay, eta_l=eta_l, A=A, lo_idx=lo_idx, up_idx=up_idx)
    return BlockProgram(program, decode), info


def _eta_from_solution(x, info, plan: Plan, new_traj: np.ndarray, win: PlanningWindow) -> EtaBounds:
    lay = info["layout"]
    A = info["A"]
    exact_new = inverse_sq_distance(new_traj, win.scenario)
    exact_l = inverse_sq_distance(plan.traj, win.scenario)
    lo = exact_new.copy()
    up = exact_new.copy()
    _, s_lo, s_up = lay.split(x)
    i, k, j = info["lo_idx"]
    lo[A[i], k, j + 1] = s_lo * info["eta_l"][info["lo_idx"]]
    i, k, j = info["up_idx"]
    up[A[i], k, j + 1] = s_up * info["eta_l"][info["up_idx"]]
    return EtaBounds(lo, up, exact_l, exact_l.copy(), plan.traj.copy())


def solve_trajectory(plan: Plan, win: PlanningWindow, mu: float,
                     settings: SolverSettings | None = None) -> tuple[np.ndarray, EtaBounds, SolveReport]:
    """One SCA step linearized at the incoming trajectories.

    Because the surrogate is tight at the linearization point and a global
    under-estimator elsewhere, an exact solve cannot lower the true
    objective; numerically worse results are discarded.
    """
    problems = _traj_feasible(plan.traj, win)
    if problems:
        raise ValueError("SCA requires feasible linearization point: " + "; ".join(problems))
    before = plan_objective(plan, win, mu)
    if win.n_slots == 1 or win.scenario.d_max == 0 or win.alive_idx.size == 0:
        return plan.traj, init_eta(plan.traj, win.scenario), _skipped(np.zeros(0), "trivial", before)
    bp, info = trajectory_program(plan, win, mu)
    try:
        find_start = False
        for g in bp.program.ineqs:
            if not np.all(g(bp.program.start)[0] < -1e-9):
                find_start = True
        if find_start:
            bp.program.start = find_strictly_feasible(bp.program)
    except InfeasibleStartError:
        return plan.traj, init_eta(plan.traj, win.scenario), _skipped(np.zeros(0), "no-interior", before)
    rep = maximize(bp.program, _settings_for(bp.program.n_constraints(), settings))
    new = bp.decode(rep.x)
    # the barrier keeps iterates interior; snap round-off in the pinned/dead rows only
    if _traj_feasible(new, win) or plan_objective(plan.replace(traj=new), win, mu) < before:
        rep.status += "+kept-incoming"
        return plan.traj, init_eta(plan.traj, win.scenario), rep
    return new, _eta_from_solution(rep.x, info, plan, new, win), rep
