"""Log-barrier solver for smooth concave maximization.

Problems are described by oracles: the objective and each block of convex
inequality constraints ``g(x) <= 0`` return their value and first
derivatives. Affine equalities are eliminated once by a null-space
parameterization, so the barrier subproblems are unconstrained in the
reduced variables. The inner loop is a quasi-Newton descent globalized by
Armijo backtracking. Its metric combines Gauss-Newton curvature of the
barrier terms (from the constraint Jacobians), the small outer curvature of
composite objectives, and a BFGS model of the rest; objective oracles only
ever supply values and gradients.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

Oracle = Callable[[np.ndarray], tuple]


MAX_POLISH = 3  # full Newton steps allowed below the evaluation noise per centering


class SolverError(RuntimeError):
    pass


class InfeasibleStartError(SolverError):
    pass


class InfeasiblePointError(ValueError):
    pass


class LinearIneq:
    """``A x - b <= 0`` as an inequality oracle with a constant Jacobian."""

    def __init__(self, A, b):
        self.A = A if sp.issparse(A) else np.atleast_2d(np.asarray(A, dtype=float))
        if sp.issparse(self.A):
            self.A = sp.csr_matrix(self.A)
        self.b = np.asarray(b, dtype=float).ravel()

    def __call__(self, x):
        return self.A @ x - self.b, self.A


class PatternJacobian:
    """Sparse Jacobian with a fixed sparsity pattern; only the values change.

    Entries are given in (rows, cols) order once; ``build(values)`` returns
    the CSR matrix for new values without re-sorting.
    """

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        order = sp.coo_matrix((np.arange(1, rows.size + 1, dtype=float), (rows, cols)), shape=shape).tocsr()
        if order.nnz != rows.size:
            raise ValueError("duplicate entries in Jacobian pattern")
        self._perm = order.data.astype(np.int64) - 1
        self._indices = order.indices
        self._indptr = order.indptr
        self.shape = shape

    def build(self, values) -> sp.csr_matrix:
        values = np.asarray(values, dtype=float)
        return sp.csr_matrix((values[self._perm], self._indices, self._indptr), shape=self.shape)


class CompositeObjective:
    """Objective ``outer(S(x))`` with a low-dimensional inner map ``S``.

    ``inner(x)`` returns (S, dS/dx) with the Jacobian of shape (k, dim);
    ``outer(S)`` returns (value, gradient) and ``outer_curvature(S)`` the
    (k, k) second-derivative matrix of the outer function. The solver uses
    that small matrix with the inner Jacobian for a Gauss-Newton model of
    the objective; any curvature of a nonlinear inner map is left to
    quasi-Newton updates. Decision-space Hessians are never formed.
    """

    def __init__(self, inner, outer, outer_curvature, linear: bool = False):
        self.inner = inner
        self.outer = outer
        self.outer_curvature = outer_curvature
        self.linear = linear

    @classmethod
    def affine(cls, C, c0, outer, outer_curvature) -> "CompositeObjective":
        C = sp.csr_matrix(C) if sp.issparse(C) else np.atleast_2d(np.asarray(C, dtype=float))
        c0 = np.asarray(c0, dtype=float).ravel()
        return cls(lambda x: (C @ x + c0, C), outer, outer_curvature, linear=True)

    def evaluate_full(self, x):
        S, J = self.inner(x)
        v, gS = self.outer(S)
        gS = np.asarray(gS, dtype=float)
        return float(v), J.T @ gS, S, J, gS

    def __call__(self, x):
        v, g, *_ = self.evaluate_full(x)
        return v, g


@dataclass
class ConcaveProgram:
    """maximize f(x) s.t. g_j(x) <= 0, eq_matrix x = eq_rhs, lower < x < upper.

    ``start`` must satisfy the inequalities and box strictly and the
    equalities to 1e-9.
    """

    dim: int
    objective: Oracle
    start: np.ndarray
    ineqs: Sequence[Oracle] = ()
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    ineq_names: Sequence[str] | None = None
    null_space: np.ndarray | None = None

    def name_of(self, block: int) -> str:
        if self.ineq_names is not None and block < len(self.ineq_names):
            return self.ineq_names[block]
        return f"ineq{block}"

    def n_constraints(self) -> int:
        m = sum(np.size(_eval_block(g, self.start)[0]) for g in self.ineqs)
        if self.lower is not None:
            m += int(np.sum(np.isfinite(self.lower)))
        if self.upper is not None:
            m += int(np.sum(np.isfinite(self.upper)))
        return m


@dataclass
class SolverSettings:
    # None scales the first barrier weight to the objective at the start
    t0: float | None = 1.0
    t_factor: float = 10.0
    gap_tol: float = 1e-7
    max_outer: int = 12
    max_inner: int = 400
    # inner loop stops when half the squared Newton decrement drops below this
    newton_tol: float = 0.0
    stationarity_tol: float = 1e-5
    violation_tol: float = 1e-7
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-14
    debug: bool = False
    trace_path: str | None = None
    # stop as soon as the objective reaches this value (phase-one searches)
    target: float | None = None


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    outer_iterations: int
    inner_iterations: int
    violation: float
    stationarity: float
    status: str  # converged | iteration-cap | numerical-failure | target-reached
    objective_history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "target-reached")


@dataclass
class KKTReport:
    stationarity: float
    complementarity: float
    equality: float
    multipliers: np.ndarray

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.complementarity, self.equality)


def _eval_full(oracle, x):
    """(value, Jacobian, curvature) where curvature is None or ``w -> sum_i w_i hess g_i``."""
    out = oracle(x)
    v, J = out[0], out[1]
    curv = out[2] if len(out) > 2 else None
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not sp.issparse(J):
        J = np.asarray(J, dtype=float)
        if J.ndim == 1:
            J = J[None, :]
    return v, J, curv


def _eval_block(oracle, x):
    return _eval_full(oracle, x)[:2]


def _sq(J):
    return J.multiply(J) if sp.issparse(J) else J * J


class _Barrier:
    """phi_t(z) = -t f(x(z)) - sum log(-g(x(z))) - box barrier terms."""

    def __init__(self, program: ConcaveProgram):
        self.p = program
        n = program.dim
        self.lower = None if program.lower is None else np.asarray(program.lower, dtype=float)
        self.upper = None if program.upper is None else np.asarray(program.upper, dtype=float)
        self.lo_mask = None if self.lower is None else np.isfinite(self.lower)
        self.hi_mask = None if self.upper is None else np.isfinite(self.upper)
        x0 = np.asarray(program.start, dtype=float).copy()
        if program.eq_matrix is not None and np.size(program.eq_matrix):
            A = np.atleast_2d(np.asarray(program.eq_matrix, dtype=float))
            Z = program.null_space if program.null_space is not None else scipy.linalg.null_space(A)
            self.Z = np.asarray(Z, dtype=float)
        else:
            self.Z = None
        self.base = x0
        self.n = n
        self.n_evals = 0
        self._pairs: dict = {}
        obj = program.objective
        self.composite = obj if isinstance(obj, CompositeObjective) else None

    def uses_remainder_model(self) -> bool:
        return self.composite is None or not self.composite.linear

    @property
    def structured(self) -> bool:
        """Sparse barrier matrix plus a low-rank objective term: solve by factor + Woodbury."""
        return self.Z is None and not self.uses_remainder_model()

    def objective_factor(self, obj_part, t: float):
        """U with U U^T the Gauss-Newton model of -t * objective curvature in z coordinates.

        None when the objective is not composite.
        """
        if self.composite is None:
            return None
        _, S, J, _ = obj_part
        H = -t * np.asarray(self.composite.outer_curvature(S), dtype=float)
        # equilibrate first: entries can span many orders of magnitude and an
        # unscaled eigh would smear roundoff onto the small ones
        d = np.sqrt(np.abs(np.diag(H)))
        d = np.where(d > 0, d, 1.0)
        Hs = H / d[:, None] / d[None, :]
        vals, vecs = np.linalg.eigh(0.5 * (Hs + Hs.T))
        keep = vals > 1e-12 * max(float(np.abs(vals).max(initial=0.0)), 1e-300)
        V = d[:, None] * vecs[:, keep] * np.sqrt(vals[keep])
        U = J.T @ V
        U = np.asarray(U)
        if self.Z is not None:
            U = self.Z.T @ U
        return U

    def remainder_pair(self, obj_old, obj_new, t: float):
        """Gradient difference of the part of -t f not covered by the Gauss-Newton model."""
        if self.composite is None:
            return -t * self.project(obj_new - obj_old)
        _, _, J_old, _ = obj_old
        _, _, J_new, gS = obj_new
        # inner-map curvature weighted by the current outer gradient
        return -t * self.project(J_new.T @ gS - J_old.T @ gS)

    def x_of(self, z):
        return self.base + self.Z @ z if self.Z is not None else z

    def z0(self):
        return np.zeros(self.Z.shape[1]) if self.Z is not None else self.base.copy()

    def project(self, gx):
        return self.Z.T @ gx if self.Z is not None else gx

    def evaluate(self, z, t):
        """(phi, grad_z, barrier parts, f, objective parts) or None outside the barrier domain."""
        self.n_evals += 1
        x = self.x_of(z)
        if not np.all(np.isfinite(x)):
            return None
        phi = 0.0
        gx = np.zeros(self.n)
        dx = np.zeros(self.n)
        blocks = []
        if self.lower is not None:
            s = x[self.lo_mask] - self.lower[self.lo_mask]
            if np.any(s <= 0):
                return None
            phi -= np.log(s).sum()
            gx[self.lo_mask] -= 1.0 / s
            dx[self.lo_mask] += 1.0 / (s * s)
        if self.upper is not None:
            s = self.upper[self.hi_mask] - x[self.hi_mask]
            if np.any(s <= 0):
                return None
            phi -= np.log(s).sum()
            gx[self.hi_mask] += 1.0 / s
            dx[self.hi_mask] += 1.0 / (s * s)
        for oracle in self.p.ineqs:
            v, J, c = _eval_full(oracle, x)
            if not np.all(v < 0):
                return None
            w = -1.0 / v
            phi -= np.log(-v).sum()
            gx += J.T @ w
            blocks.append((J, w, c))
        if self.composite is not None:
            f, grad_f, S, J, gS = self.composite.evaluate_full(x)
            obj_part = (grad_f, S, J, gS)
        else:
            f, grad_f = self.p.objective(x)
            grad_f = np.asarray(grad_f, dtype=float)
            obj_part = grad_f
        if not np.isfinite(f):
            return None
        phi -= t * f
        gx -= t * grad_f
        if not np.isfinite(phi):
            return None
        return phi, self.project(gx), (dx, blocks), float(f), obj_part

    def residual_scale(self, x, t) -> float:
        """Sum of the magnitudes of the terms that cancel in grad phi at x."""
        total = 0.0
        if self.lower is not None:
            total += float(np.sum(1.0 / (x[self.lo_mask] - self.lower[self.lo_mask])))
        if self.upper is not None:
            total += float(np.sum(1.0 / (self.upper[self.hi_mask] - x[self.hi_mask])))
        for oracle in self.p.ineqs:
            v, J = _eval_block(oracle, x)
            if sp.issparse(J):
                norms = np.sqrt(np.asarray(J.multiply(J).sum(axis=1)).ravel())
            else:
                norms = np.linalg.norm(np.atleast_2d(J), axis=1)
            total += float(np.sum(norms / -np.asarray(v)))
        f, g = self.p.objective(x)
        return total + t * (1.0 + abs(float(f)) + float(np.linalg.norm(g)))

    def curvature(self, parts, sparse: bool = False):
        """Curvature of the barrier terms (x coordinates if ``sparse``, else dense in z).

        Built from the constraint Jacobians plus any curvature a constraint
        oracle supplies for itself.
        """
        dx, blocks = parts
        rows = [np.arange(self.n)]
        cols = [np.arange(self.n)]
        vals = [dx]
        dense = None
        for j, (J, w, c) in enumerate(blocks):
            if sp.issparse(J):
                r_, c_, v_ = self._gram_triplets(j, J, w)
                rows.append(r_)
                cols.append(c_)
                vals.append(v_)
            else:
                Jw = J * w[:, None]
                dense = Jw.T @ Jw if dense is None else dense + Jw.T @ Jw
            if c is not None:
                H = c(w)
                if isinstance(H, tuple):
                    rows.append(H[0])
                    cols.append(H[1])
                    vals.append(H[2])
                elif sp.issparse(H):
                    H = H.tocoo()
                    rows.append(H.row)
                    cols.append(H.col)
                    vals.append(H.data)
                else:
                    dense = H if dense is None else dense + H
        acc = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(self.n, self.n))
        if sparse:
            return acc if dense is None else acc + sp.csc_matrix(dense)
        M = acc.toarray()
        if dense is not None:
            M += dense
        if self.Z is not None:
            M = self.Z.T @ M @ self.Z
        return M

    def _gram_triplets(self, block: int, J, w):
        """Entries of J^T diag(w^2) J, with the row-pair index maps cached per block pattern."""
        J = J.tocsr() if not sp.isspmatrix_csr(J) else J
        cached = self._pairs.get(block)
        if cached is None or not (np.array_equal(cached[0], J.indptr) and np.array_equal(cached[1], J.indices)):
            counts = np.diff(J.indptr)
            row_of = np.repeat(np.arange(J.shape[0]), counts)
            pa, pb = [], []
            for k in np.unique(counts):
                if k == 0:
                    continue
                rows_k = np.flatnonzero(counts == k)
                starts = J.indptr[rows_k]
                ia, ib = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
                pa.append((starts[:, None] + ia.ravel()[None, :]).ravel())
                pb.append((starts[:, None] + ib.ravel()[None, :]).ravel())
            pa = np.concatenate(pa) if pa else np.zeros(0, dtype=int)
            pb = np.concatenate(pb) if pb else np.zeros(0, dtype=int)
            cached = (J.indptr.copy(), J.indices.copy(), pa, pb, row_of[pa], J.indices[pa], J.indices[pb])
            self._pairs[block] = cached
        _, _, pa, pb, prow, r_, c_ = cached
        return r_, c_, (w[prow] ** 2) * J.data[pa] * J.data[pb]


def _metric(M: np.ndarray):
    """Solver for M d = v, or None when M is not numerically positive definite.

    The matrix is equilibrated by its diagonal before factoring; barrier
    curvatures span many orders of magnitude near the boundary.
    """
    n = M.shape[0]
    diag = np.diag(M).copy()
    if not np.any(diag > 0):
        return lambda v: v
    diag = np.maximum(diag, 1e-14 * float(diag.max()))
    r = 1.0 / np.sqrt(diag)
    Ms = M * r[:, None] * r[None, :]
    Ms[np.diag_indices(n)] += 1e-12
    try:
        c = scipy.linalg.cho_factor(Ms, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    return lambda v: r * scipy.linalg.cho_solve(c, r * v, check_finite=False)


def _violation(program: ConcaveProgram, x, equalities: bool = True) -> tuple[float, str]:
    """Largest constraint violation (0 if feasible) and the name of the worst constraint."""
    worst, name = 0.0, ""
    for j, oracle in enumerate(program.ineqs):
        v, _ = _eval_block(oracle, x)
        i = int(np.argmax(v))
        if v[i] > worst:
            worst, name = float(v[i]), f"{program.name_of(j)}[{i}]"
    if program.lower is not None:
        d = np.where(np.isfinite(program.lower), program.lower - x, -np.inf)
        i = int(np.argmax(d))
        if d[i] > worst:
            worst, name = float(d[i]), f"lower[{i}]"
    if program.upper is not None:
        d = np.where(np.isfinite(program.upper), x - program.upper, -np.inf)
        i = int(np.argmax(d))
        if d[i] > worst:
            worst, name = float(d[i]), f"upper[{i}]"
    if equalities and program.eq_matrix is not None and np.size(program.eq_matrix):
        r = np.abs(np.atleast_2d(program.eq_matrix) @ x - np.asarray(program.eq_rhs, dtype=float))
        i = int(np.argmax(r))
        if r[i] > worst:
            worst, name = float(r[i]), f"eq[{i}]"
    return worst, name


def _check_start(program: ConcaveProgram):
    x = np.asarray(program.start, dtype=float)
    if x.shape != (program.dim,):
        raise ValueError(f"start has shape {x.shape}, expected ({program.dim},)")
    for j, oracle in enumerate(program.ineqs):
        v, _ = _eval_block(oracle, x)
        if not np.all(v < -1e-10):
            i = int(np.argmax(v))
            raise InfeasibleStartError(
                f"start not strictly feasible: {program.name_of(j)}[{i}] = {v[i]:.3g}")
    if program.lower is not None and np.any(x <= program.lower):
        raise InfeasibleStartError("start not strictly inside the lower box")
    if program.upper is not None and np.any(x >= program.upper):
        raise InfeasibleStartError("start not strictly inside the upper box")
    if program.eq_matrix is not None and np.size(program.eq_matrix):
        r = np.atleast_2d(program.eq_matrix) @ x - np.asarray(program.eq_rhs, dtype=float)
        if np.max(np.abs(r)) > 1e-9:
            raise InfeasibleStartError(f"start violates equalities by {np.max(np.abs(r)):.3g}")


def maximize(program: ConcaveProgram, settings: SolverSettings | None = None) -> SolveReport:
    """Barrier method: t starts at ``t0`` and grows by ``t_factor`` until m/t < gap_tol."""
    st = settings or SolverSettings()
    _check_start(program)
    bar = _Barrier(program)
    m = program.n_constraints()
    z = bar.z0()
    t = st.t0 if st.t0 is not None else 1.0
    state = bar.evaluate(z, t)
    if state is None:
        raise InfeasibleStartError("barrier undefined at start")
    if st.t0 is None:
        # initial gap m / t of the order of the objective itself
        t = float(min(max(m / (1.0 + abs(state[3])), 1.0), max(m, 1) / st.gap_tol))

    inner_total = 0
    R = np.zeros((z.size, z.size))  # quasi-Newton objective curvature, rescaled as t grows
    history: list[float] = []
    best_x, best_f, best_t, best_g = bar.x_of(z), state[3], t, state[1]
    status = "iteration-cap"
    stalled = False
    trace_rows = []

    outer = 0
    for outer in range(1, st.max_outer + 1):
        state = bar.evaluate(z, t)
        z, state, n_inner, stalled = _inner(bar, z, t, state, R, st)
        inner_total += n_inner
        f = state[3]
        stat = np.linalg.norm(state[1]) / (t * (1.0 + abs(f)))
        if f >= best_f or outer == 1:
            best_x, best_f, best_t, best_g = bar.x_of(z), f, t, state[1]
        history.append(best_f)
        trace_rows.append((outer, inner_total, t, f, stat))
        log.debug("outer %d t=%.3g f=%.12g stat=%.3g inner=%d", outer, t, f, stat, n_inner)
        if st.target is not None and f >= st.target:
            status = "target-reached"
            break
        if m == 0 or m / t < st.gap_tol:
            status = "converged"
            break
        t *= st.t_factor
        R *= st.t_factor

    x = best_x
    stationarity = np.linalg.norm(best_g) / bar.residual_scale(x, best_t)
    violation, _ = _violation(program, x)
    violation /= 1.0 + abs(best_f)
    if status == "converged":
        if stationarity > st.stationarity_tol or violation > st.violation_tol:
            status = "numerical-failure" if stalled else "iteration-cap"
    if st.trace_path:
        with open(st.trace_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["outer", "inner", "t", "objective", "stationarity"])
            w.writerows(trace_rows)
    return SolveReport(x=x, objective=float(best_f), outer_iterations=outer, inner_iterations=inner_total,
                       violation=float(violation), stationarity=float(stationarity), status=status,
                       objective_history=history)


def _step_solver(bar: _Barrier, parts, obj_part, t, R):
    """Solver for the Newton-like system of the current iterate (None if it fails)."""
    U = bar.objective_factor(obj_part, t)
    if bar.structured:
        return _woodbury_metric(bar.curvature(parts, sparse=True), U)
    M = bar.curvature(parts)
    if U is not None:
        M = M + U @ U.T
    if R is not None and np.any(R):
        M = M + R
    return _metric(M)


def _woodbury_metric(A, U):
    """Solver for (A + U U^T) d = v with A sparse; A is equilibrated by its diagonal."""
    n = A.shape[0]
    diag = A.diagonal().copy()
    if not np.any(diag > 0):
        diag = np.ones(n)
    diag = np.maximum(diag, 1e-14 * float(diag.max()))
    r = 1.0 / np.sqrt(diag)
    Dr = sp.diags(r)
    As = (Dr @ A @ Dr).tocsc() + 1e-12 * sp.identity(n, format="csc")
    try:
        lu = spla.splu(As)
    except RuntimeError:
        return None
    if U is None or U.shape[1] == 0:
        return lambda v: r * lu.solve(r * v)
    Us = U * r[:, None]
    AiU = lu.solve(Us)
    cap = np.eye(U.shape[1]) + Us.T @ AiU
    try:
        c = scipy.linalg.cho_factor(cap, check_finite=False)
    except np.linalg.LinAlgError:
        return None

    def solve(v):
        w = lu.solve(r * v)
        w -= AiU @ scipy.linalg.cho_solve(c, Us.T @ w, check_finite=False)
        return r * w

    return solve


def _inner(bar: _Barrier, z, t, state, R, st: SolverSettings):
    """Minimize phi_t from z; returns (z, state, iterations, stalled).

    The step metric is the barrier curvature, plus the Gauss-Newton model of
    a composite objective, plus ``R``: a dense BFGS model of whatever
    objective curvature remains, fitted from gradient differences and
    updated in place.
    """
    phi, g, parts, f, obj = state
    learn = bar.uses_remainder_model()
    stalled = False
    retried = False
    polished = 0
    it = 0
    for it in range(1, st.max_inner + 1):
        if np.linalg.norm(g) <= st.stationarity_tol * 0.1 * t * (1.0 + abs(f)):
            it -= 1
            break
        if st.target is not None and f >= st.target:
            it -= 1
            break
        solve = _step_solver(bar, parts, obj, t, R)
        if solve is None and np.any(R):
            R[:] = 0.0
            solve = _step_solver(bar, parts, obj, t, R)
        d = -solve(g) if solve is not None else -g
        gd = g @ d
        noise = 16 * np.finfo(float).eps * (abs(phi) + t * abs(f) + 1.0)
        polish = False
        if solve is not None and 0 <= -0.5 * gd <= max(st.newton_tol, noise):
            # predicted decrease is below the tolerance or the evaluation noise;
            # below the noise, full steps that halve the gradient are still taken
            stalled = -0.5 * gd > st.newton_tol
            polish = stalled and polished < MAX_POLISH
            if not polish:
                it -= 1
                break
        if not gd < 0 and np.any(R):
            R[:] = 0.0
            solve = _step_solver(bar, parts, obj, t, R)
            d = -solve(g) if solve is not None else -g
            gd = g @ d
        if not gd < 0:
            d = -g
            gd = g @ d
        alpha = 1.0
        new = None
        zn = z
        while True:
            zn = z + alpha * d
            new = bar.evaluate(zn, t)
            if polish:
                if new is None or not np.linalg.norm(new[1]) <= 0.5 * np.linalg.norm(g):
                    new = None
                break
            if new is not None:
                if new[0] <= phi + st.armijo * alpha * gd:
                    break
                # within evaluation noise of phi: accept only if the gradient shrinks
                if new[0] <= phi + noise and np.linalg.norm(new[1]) < np.linalg.norm(g):
                    break
            alpha *= st.backtrack
            if alpha * np.linalg.norm(d) < st.min_step * (1.0 + np.linalg.norm(z)):
                new = None
                break
        if new is None and polish:
            it -= 1
            break
        polished += polish
        if new is None:
            if not retried and np.any(R):
                # retry once without the quasi-Newton part
                R[:] = 0.0
                retried = True
                continue
            stalled = True
            break
        retried = False
        if learn:
            s_vec = zn - z
            y = bar.remainder_pair(obj, new[4], t)
            sy = s_vec @ y
            if sy > 1e-10 * np.linalg.norm(s_vec) * np.linalg.norm(y):
                Rs = R @ s_vec
                sRs = s_vec @ Rs
                R += np.outer(y, y) / sy
                if sRs > 1e-10 * np.linalg.norm(Rs) * np.linalg.norm(s_vec):
                    R -= np.outer(Rs, Rs) / sRs
        if st.debug:
            x = bar.x_of(zn)
            # equalities hold by construction up to round-off
            viol, name = _violation(bar.p, x, equalities=False)
            assert viol <= 0.0, f"iterate left the interior at {name}"
        z = zn
        phi, g, parts, f, obj = new
    return z, (phi, g, parts, f, obj), it, stalled


def find_strictly_feasible(program: ConcaveProgram, margin: float = 1e-6,
                           settings: SolverSettings | None = None) -> np.ndarray:
    """Phase one: drive max_j g_j below ``-margin`` starting from ``program.start``.

    The start must be strictly inside the box and satisfy the equalities;
    only the inequality oracles may be violated.
    """
    x0 = np.asarray(program.start, dtype=float)
    worst = max((float(np.max(_eval_block(g, x0)[0])) for g in program.ineqs), default=-np.inf)
    if worst < -margin:
        return x0
    n = program.dim

    def wrap(oracle):
        def g(y):
            v, J = _eval_block(oracle, y[:n])
            if sp.issparse(J):
                J = sp.hstack([J, sp.csr_matrix(-np.ones((J.shape[0], 1)))], format="csr")
            else:
                J = np.hstack([J, -np.ones((J.shape[0], 1))])
            return v - y[n], J
        return g

    def objective(y):
        grad = np.zeros(n + 1)
        grad[n] = -1.0
        return -y[n], grad

    s_floor = -1.0 - 10 * margin
    lower = np.full(n + 1, -np.inf) if program.lower is None else np.append(program.lower, s_floor)
    lower[n] = s_floor
    upper = None if program.upper is None else np.append(program.upper, np.inf)
    eq = None
    if program.eq_matrix is not None and np.size(program.eq_matrix):
        A = np.atleast_2d(program.eq_matrix)
        eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    aug = ConcaveProgram(
        dim=n + 1, objective=objective, start=np.append(x0, max(worst, 0.0) + 1.0),
        ineqs=[wrap(g) for g in program.ineqs], eq_matrix=eq, eq_rhs=program.eq_rhs,
        lower=lower, upper=upper,
    )
    st = SolverSettings(**{**(settings or SolverSettings()).__dict__, "target": 2 * margin, "trace_path": None})
    rep = maximize(aug, st)
    x = rep.x[:n]
    worst = max(float(np.max(_eval_block(g, x)[0])) for g in program.ineqs)
    if not worst < -margin:
        raise InfeasibleStartError(f"no strictly feasible point found (best max constraint {worst:.3g})")
    return x


def check_kkt(program: ConcaveProgram, point, multipliers=None, active_tol: float = 1e-6,
              feas_tol: float = 1e-6) -> KKTReport:
    """First-order optimality residuals of ``point`` for the maximization.

    Multipliers, when not given, are estimated by nonnegative least squares
    over the constraints within ``active_tol`` of being active.
    """
    x = np.asarray(point, dtype=float)
    viol, name = _violation(program, x)
    if viol > feas_tol:
        raise InfeasiblePointError(f"point infeasible: {name} violated by {viol:.3g}")

    values, grads = [], []
    for oracle in program.ineqs:
        v, J = _eval_block(oracle, x)
        values.append(v)
        grads.append(J.toarray() if sp.issparse(J) else J)
    n = program.dim
    eye = np.eye(n)
    if program.lower is not None:
        fin = np.isfinite(program.lower)
        values.append((program.lower - x)[fin])
        grads.append(-eye[fin])
    if program.upper is not None:
        fin = np.isfinite(program.upper)
        values.append((x - program.upper)[fin])
        grads.append(eye[fin])
    g_all = np.concatenate(values) if values else np.zeros(0)
    J_all = np.vstack(grads) if grads else np.zeros((0, n))

    if program.eq_matrix is not None and np.size(program.eq_matrix):
        A = np.atleast_2d(program.eq_matrix)
        Z = program.null_space if program.null_space is not None else scipy.linalg.null_space(A)
        eq_res = float(np.max(np.abs(A @ x - np.asarray(program.eq_rhs, dtype=float))))
    else:
        Z = None
        eq_res = 0.0
    _, gf = program.objective(x)
    gf = np.asarray(gf, dtype=float)
    proj = (lambda v: Z.T @ v) if Z is not None else (lambda v: v)

    if multipliers is None:
        lam = np.zeros(g_all.size)
        active = np.flatnonzero(g_all >= -active_tol)
        if active.size:
            M = proj(J_all[active].T)
            M = np.atleast_2d(M)
            if M.shape[0] != proj(gf).shape[0]:
                M = M.T
            lam[active], _ = scipy.optimize.nnls(M, proj(gf))
    else:
        lam = np.asarray(multipliers, dtype=float)
    stationarity = float(np.linalg.norm(proj(gf - J_all.T @ lam))) if J_all.size else float(np.linalg.norm(proj(gf)))
    comp = float(np.max(np.abs(lam * g_all))) if lam.size else 0.0
    return KKTReport(stationarity=stationarity, complementarity=comp, equality=eq_res, multipliers=lam)


def barrier_multipliers(program: ConcaveProgram, x, t: float) -> np.ndarray:
    """lambda_j = 1 / (t * -g_j(x)), ordered like ``check_kkt``'s constraint stack."""
    vals = [_eval_block(o, x)[0] for o in program.ineqs]
    if program.lower is not None:
        fin = np.isfinite(program.lower)
        vals.append((program.lower - x)[fin])
    if program.upper is not None:
        fin = np.isfinite(program.upper)
        vals.append((x - program.upper)[fin])
    g = np.concatenate(vals) if vals else np.zeros(0)
    return 1.0 / (t * -g)
