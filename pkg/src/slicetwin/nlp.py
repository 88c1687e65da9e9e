"""Box-bounded nonlinear maximization with smooth inequality constraints.

The solver is a line-search SQP: at each iterate a convex QP (damped-BFGS
Hessian model, elastic slacks on every inequality so the subproblem is always
consistent) proposes a step and its multipliers; an l1 merit function accepts
or shrinks the step.  Multipliers at the final iterate are reported, which the
primal-decomposition layer consumes as subgradients.

A brute-force grid oracle over the same problem shape serves as an
independent check in the regression suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix, solvers

_QP_OPTIONS = {"show_progress": False, "abstol": 1e-11, "reltol": 1e-10,
               "feastol": 1e-11, "maxiters": 200}

DEFAULT_FEAS_TOL = 1e-6
DEFAULT_KKT_TOL = 1e-5
DEFAULT_MAX_ITER = 200


class CallbackError(RuntimeError):
    """A problem callback returned a non-finite value."""


@dataclass
class NlpProblem:
    """max objective(x) s.t. g_j(x) <= 0, A x <= b, lower <= x <= upper.

    ``objective`` and each constraint callback return (value, gradient).
    """

    lower: np.ndarray
    upper: np.ndarray
    objective: callable
    constraints: list = field(default_factory=list)
    linear: list = field(default_factory=list)    # (row, bound) pairs

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower/upper must be 1-D arrays of equal length")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        for row, _ in self.linear:
            if len(np.asarray(row)) != self.n:
                raise ValueError("linear row length mismatch")

    @property
    def n(self):
        return len(self.lower)


@dataclass
class NlpSolution:
    x: np.ndarray
    objective: float
    multipliers: np.ndarray          # one per nonlinear inequality, >= 0
    linear_multipliers: np.ndarray   # one per linear row, >= 0
    status: str                      # converged | max-iter | infeasible
    iterations: int
    kkt_residual: float
    max_violation: float
    trace: list = field(default_factory=list, repr=False)

    @property
    def converged(self):
        return self.status == "converged"


def _eval_objective(problem, x):
    v, g = problem.objective(x)
    g = np.asarray(g, dtype=float)
    if not (np.isfinite(v) and np.all(np.isfinite(g))):
        raise CallbackError(f"objective returned non-finite value at x={x.tolist()}")
    return -float(v), -g  # minimize internally


def _eval_constraints(problem, x):
    vals, grads = [], []
    for j, c in enumerate(problem.constraints):
        v, g = c(x)
        g = np.asarray(g, dtype=float)
        if not (np.isfinite(v) and np.all(np.isfinite(g))):
            raise CallbackError(f"constraint {j} returned non-finite value at x={x.tolist()}")
        vals.append(float(v))
        grads.append(g)
    if vals:
        return np.array(vals), np.vstack(grads)
    return np.zeros(0), np.zeros((0, problem.n))


def _violation(g, lin_viol):
    v = 0.0
    if len(g):
        v += float(np.clip(g, 0.0, None).sum())
    if len(lin_viol):
        v += float(np.clip(lin_viol, 0.0, None).sum())
    return v


def _solve_qp(B, gf, g, J, lin_viol, A, dlo, dhi, nu):
    """Elastic QP around the iterate: returns step d, slacks and duals."""
    n = len(gf)
    m = len(g) + len(lin_viol)
    dim = n + m
    P = np.zeros((dim, dim))
    P[:n, :n] = B
    if m:
        P[n:, n:] = np.eye(m) * 1e-9
    q = np.concatenate([gf, np.full(m, nu)])

    G_rows, h_vals = [], []
    JA = np.vstack([J, A]) if m else np.zeros((0, n))
    rhs = np.concatenate([g, lin_viol])
    for j in range(m):
        row = np.zeros(dim)
        row[:n] = JA[j]
        row[n + j] = -1.0
        G_rows.append(row)
        h_vals.append(-rhs[j])
    for j in range(m):                      # s >= 0
        row = np.zeros(dim)
        row[n + j] = -1.0
        G_rows.append(row)
        h_vals.append(0.0)
    for i in range(n):                      # box on the step
        row = np.zeros(dim)
        row[i] = 1.0
        G_rows.append(row)
        h_vals.append(dhi[i])
        row = np.zeros(dim)
        row[i] = -1.0
        G_rows.append(row)
        h_vals.append(-dlo[i])

    sol = solvers.qp(matrix(P), matrix(q), matrix(np.array(G_rows)),
                     matrix(np.array(h_vals)), options=_QP_OPTIONS)
    if sol["status"] not in ("optimal", "unknown"):
        raise FloatingPointError(f"QP subproblem status {sol['status']}")
    z = np.array(sol["x"]).ravel()
    duals = np.array(sol["z"]).ravel()
    d = z[:n]
    s = z[n:]
    lam = duals[:m]
    mu_hi = duals[2 * m:2 * m + 2 * n:2]
    mu_lo = duals[2 * m + 1:2 * m + 2 * n:2]
    return d, s, lam, mu_hi, mu_lo


def _kkt_residual(gf, J, A, lam_nl, lam_lin, mu_hi, mu_lo):
    r = gf.copy()
    if len(lam_nl):
        r += J.T @ lam_nl
    if len(lam_lin):
        r += A.T @ lam_lin
    r += mu_hi - mu_lo
    return float(np.max(np.abs(r)))


def solve(problem: NlpProblem, x0, feas_tol=DEFAULT_FEAS_TOL, kkt_tol=DEFAULT_KKT_TOL,
          max_iter=DEFAULT_MAX_ITER) -> NlpSolution:
    """Solve the maximization problem from one start point.

    Deterministic.  ``status='converged'`` guarantees feasibility within
    feas_tol, stationarity within kkt_tol and complementarity of the reported
    multipliers.  When elastic slacks cannot be driven out even under an
    escalated penalty, the problem is reported infeasible with the largest
    remaining violation.
    """
    x = np.clip(np.asarray(x0, dtype=float), problem.lower, problem.upper)
    if x.shape != problem.lower.shape:
        raise ValueError("x0 has wrong dimension")
    n = problem.n
    A = np.array([np.asarray(r, dtype=float) for r, _ in problem.linear]) \
        if problem.linear else np.zeros((0, n))
    b = np.array([float(bb) for _, bb in problem.linear])

    B = np.eye(n)
    f, gf = _eval_objective(problem, x)
    g, J = _eval_constraints(problem, x)
    lin_viol = A @ x - b if len(b) else np.zeros(0)
    nu = 1e3 * (1.0 + float(np.max(np.abs(gf))))
    mu_merit = 1.0
    lam = np.zeros(len(g))
    lam_lin = np.zeros(len(b))
    mu_hi = mu_lo = np.zeros(n)
    trace = []
    escalations = 0
    bad_steps = 0
    status = "max-iter"
    it = 0

    for it in range(1, max_iter + 1):
        dlo = problem.lower - x
        dhi = problem.upper - x
        try:
            d, s, lam_all, mu_hi, mu_lo = _solve_qp(B, gf, g, J, lin_viol, A, dlo, dhi, nu)
        except (FloatingPointError, ValueError, ArithmeticError, ZeroDivisionError):
            B = B + np.eye(n) * (1e-6 * (1.0 + np.trace(B) / n))
            try:
                d, s, lam_all, mu_hi, mu_lo = _solve_qp(B, gf, g, J, lin_viol, A, dlo, dhi, nu)
            except Exception:
                status = "max-iter"
                break
        lam = lam_all[:len(g)]
        lam_lin = lam_all[len(g):]

        feas = max(float(np.max(g, initial=0.0)), float(np.max(lin_viol, initial=0.0)))
        kkt = _kkt_residual(gf, J, A, lam, lam_lin, mu_hi, mu_lo)
        comp = float(np.min(lam * g, initial=0.0)) if len(g) else 0.0
        step_norm = float(np.max(np.abs(d)))
        trace.append((it, -f, feas, step_norm, kkt))

        if feas <= feas_tol and kkt <= kkt_tol and comp >= -10 * kkt_tol and step_norm <= 1e2 * kkt_tol:
            status = "converged"
            break

        slack_left = float(np.max(s, initial=0.0))
        if step_norm <= 1e-11:
            if slack_left > feas_tol and escalations < 4:
                nu *= 10.0
                escalations += 1
                continue
            if feas > feas_tol:
                status = "infeasible"
                break
            status = "converged" if kkt <= kkt_tol else "max-iter"
            break

        # l1 merit line search
        mu_merit = max(mu_merit, 2.0 * float(np.max(lam_all, initial=0.0)) + 1e-3)
        viol0 = _violation(g, lin_viol)
        phi0 = f + mu_merit * viol0
        descent = float(gf @ d) - mu_merit * viol0
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            x_new = np.clip(x + alpha * d, problem.lower, problem.upper)
            try:
                f_new, gf_new = _eval_objective(problem, x_new)
                g_new, J_new = _eval_constraints(problem, x_new)
            except CallbackError:
                alpha *= 0.5
                continue
            lin_new = A @ x_new - b if len(b) else np.zeros(0)
            phi_new = f_new + mu_merit * _violation(g_new, lin_new)
            if phi_new <= phi0 + 1e-4 * alpha * min(descent, 0.0) or phi_new < phi0 - 1e-16:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            bad_steps += 1
            if bad_steps >= 3:
                feas = max(float(np.max(g, initial=0.0)), float(np.max(lin_viol, initial=0.0)))
                status = "converged" if (feas <= feas_tol and kkt <= kkt_tol) else "max-iter"
                break
            B = np.eye(n)  # curvature model went stale; restart it
            continue
        bad_steps = 0

        # damped BFGS on the Lagrangian gradient
        grad_L_old = gf + (J.T @ lam if len(lam) else 0.0) + (A.T @ lam_lin if len(b) else 0.0)
        grad_L_new = gf_new + (J_new.T @ lam if len(lam) else 0.0) + (A.T @ lam_lin if len(b) else 0.0)
        s_vec = x_new - x
        y_vec = grad_L_new - grad_L_old
        sBs = float(s_vec @ B @ s_vec)
        sy = float(s_vec @ y_vec)
        if sBs > 1e-16 and float(s_vec @ s_vec) > 1e-20:
            if sy < 0.2 * sBs:
                theta = 0.8 * sBs / (sBs - sy)
                y_vec = theta * y_vec + (1.0 - theta) * (B @ s_vec)
                sy = float(s_vec @ y_vec)
            if sy > 1e-14:
                Bs = B @ s_vec
                B = B - np.outer(Bs, Bs) / sBs + np.outer(y_vec, y_vec) / sy

        x, f, gf, g, J = x_new, f_new, gf_new, g_new, J_new
        lin_viol = A @ x - b if len(b) else np.zeros(0)

    feas = max(float(np.max(g, initial=0.0)), float(np.max(lin_viol, initial=0.0)))
    kkt = _kkt_residual(gf, J, A, lam, lam_lin, mu_hi, mu_lo)
    # a run that stalls far outside the feasible set is an infeasibility
    # verdict, not a slow convergence
    if status != "converged" and feas > max(100 * feas_tol, 1e-4):
        status = "infeasible"
    return NlpSolution(x=x, objective=-f, multipliers=lam, linear_multipliers=lam_lin,
                       status=status, iterations=it, kkt_residual=kkt,
                       max_violation=feas, trace=trace)


def default_starts(problem: NlpProblem, count=5):
    """Deterministic multi-start points: center plus structured near-corners."""
    lo, hi = problem.lower, problem.upper
    span = hi - lo
    margin = 0.05
    pts = [lo + 0.5 * span,
           lo + margin * span,
           hi - margin * span]
    alt = lo + margin * span
    alt = alt.copy()
    alt[0::2] = (hi - margin * span)[0::2]
    pts.append(alt)
    alt2 = hi - margin * span
    alt2 = alt2.copy()
    alt2[0::2] = (lo + margin * span)[0::2]
    pts.append(alt2)
    return pts[:count]


def solve_multistart(problem: NlpProblem, starts=None, feas_tol=DEFAULT_FEAS_TOL,
                     kkt_tol=DEFAULT_KKT_TOL, max_iter=DEFAULT_MAX_ITER) -> NlpSolution:
    """Run solve() from several starts; best converged objective wins, ties
    broken by lowest start index.  Falls back to the least-infeasible result
    when nothing converges."""
    if starts is None:
        starts = default_starts(problem)
    best = None
    fallback = None
    for x0 in starts:
        sol = solve(problem, x0, feas_tol=feas_tol, kkt_tol=kkt_tol, max_iter=max_iter)
        if sol.converged:
            if best is None or sol.objective > best.objective + 1e-12:
                best = sol
        else:
            if fallback is None or sol.max_violation < fallback.max_violation:
                fallback = sol
    return best if best is not None else fallback


@dataclass
class GridOracleResult:
    feasible: bool
    x: np.ndarray | None
    objective: float | None

    def __str__(self):
        if not self.feasible:
            return "no feasible grid point"
        return f"best feasible grid point {self.x.tolist()} objective {self.objective:.6g}"


def grid_oracle(problem: NlpProblem, resolution: int, feas_tol=DEFAULT_FEAS_TOL) -> GridOracleResult:
    """Exhaustive scan of a uniform grid; independent check for small problems."""
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    if problem.n > 4:
        raise ValueError(f"grid oracle limited to dimension <= 4, got {problem.n}")
    axes = [np.linspace(problem.lower[i], problem.upper[i], resolution)
            for i in range(problem.n)]
    A = np.array([np.asarray(r, dtype=float) for r, _ in problem.linear]) \
        if problem.linear else np.zeros((0, problem.n))
    b = np.array([float(bb) for _, bb in problem.linear])

    best_x, best_v = None, -np.inf
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    for x in pts:
        if len(b) and np.any(A @ x - b > feas_tol):
            continue
        ok = True
        for c in problem.constraints:
            v, _ = c(x)
            if v > feas_tol:
                ok = False
                break
        if not ok:
            continue
        v, _ = problem.objective(x)
        if v > best_v:
            best_v, best_x = float(v), x.copy()
    if best_x is None:
        return GridOracleResult(feasible=False, x=None, objective=None)
    return GridOracleResult(feasible=True, x=best_x, objective=best_v)


def dump_trace(solution: NlpSolution, path):
    """Write the iteration trace as CSV: iteration, objective, violation,
    step norm, KKT residual."""
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "violation", "step_norm", "kkt_residual"])
        for row in solution.trace:
            w.writerow(row)
