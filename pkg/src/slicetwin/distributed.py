"""Two-agent primal decomposition of the joint allocation problem.

A network-side agent owns the flow fractions and the per-site network QoE
models; a server-side agent owns the CPU fractions and the server models.
The master splits each class's delay budget (tau_n of tau) and throughput
requirement (rho_n of rho, multiplicative) between the sites, the agents
solve their local problems, and the master walks the splits along the
difference of the returned Lagrange multipliers; the stochastic parameter
theta moves along the summed subgradients (ascent when the objective is
deterministic, descent in the saddle-point variant).

Because total throughput is the product of per-site success fractions, the
network split requirement satisfies rho <= rho_n <= 1: the network must
deliver at least the end-to-end fraction, and the server side then owes
rho / rho_n.  (This follows from writing both site constraints as lower
bounds; see README for why the split cannot live below rho.)

The agents never see each other's variables, models or constraint values;
only ControllerMessages (plain serialized dicts) cross the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from collections import deque

import numpy as np

from .nlp import NlpProblem, solve_multistart, solve as nlp_solve

BIG_MULTIPLIER = 1e3    # reported on a violated split constraint when a
                        # subproblem is infeasible, to steer the master
RHO_SPLIT_FLOOR = 1e-6


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassSpec:
    """E2E requirements of one class as the master sees them."""

    app_id: str
    tau: float
    rho: float


@dataclass
class CouplingState:
    """Master variables: per-class budget splits and theta, plus the step rule."""

    classes: list                       # ClassSpec, fixed order
    tau_split: np.ndarray               # tau_n per class, in [0, tau]
    rho_split: np.ndarray               # rho_n per class, in [max(rho,floor), 1]
    theta: np.ndarray                   # per class, in [theta_lo, theta_hi]
    theta_lo: float
    theta_hi: float
    alpha0: float = 0.1                 # step scale factor
    iteration: int = 0

    @staticmethod
    def initial(classes, theta_lo, theta_hi, alpha0=0.1):
        tau = np.array([c.tau for c in classes])
        rho = np.array([c.rho for c in classes])
        return CouplingState(
            classes=list(classes),
            tau_split=tau / 2.0,
            rho_split=(rho + 1.0) / 2.0,
            theta=np.full(len(classes), 0.5 * (theta_lo + theta_hi)),
            theta_lo=theta_lo, theta_hi=theta_hi, alpha0=alpha0)

    def network_view(self):
        return {c.app_id: {"d_bound": float(self.tau_split[i]),
                           "t_bound": float(self.rho_split[i]),
                           "theta": float(self.theta[i])}
                for i, c in enumerate(self.classes)}

    def server_view(self):
        return {c.app_id: {"d_bound": float(c.tau - self.tau_split[i]),
                           "t_bound": float(c.rho / self.rho_split[i]),
                           "theta": float(self.theta[i])}
                for i, c in enumerate(self.classes)}


@dataclass
class ControllerMessage:
    """What one agent tells the master after solving its subproblem."""

    sender: str                         # "network" | "server"
    iteration: int
    lam_tau: dict                       # app_id -> multiplier >= 0
    lam_rho: dict
    g_theta: dict                       # app_id -> local Lagrangian d/d(theta)
    objective: float
    solution: dict                      # app_id -> {column: value}
    feasible: bool = True
    status: str = "converged"

    def to_dict(self):
        return asdict(self)

    @staticmethod
    def from_dict(d):
        return ControllerMessage(**d)

    def __post_init__(self):
        for d in (self.lam_tau, self.lam_rho):
            for k, v in d.items():
                if v < 0:
                    raise ProtocolError(f"negative multiplier for {k}: {v}")


class Channel:
    """In-process message pipe; everything crossing it is a serialized dict."""

    def __init__(self):
        self._q = deque()

    def send(self, message: ControllerMessage):
        self._q.append(message.to_dict())

    def recv(self) -> ControllerMessage:
        if not self._q:
            raise ProtocolError("channel empty")
        return ControllerMessage.from_dict(self._q.popleft())


def model_site_fn(model):
    """Adapt a trained surrogate with inputs (resources..., theta) to the
    (x, theta) -> (value, grad_x, dtheta) callable the agents consume."""
    def fn(x, theta):
        z = np.concatenate([np.asarray(x, dtype=float), [theta]])
        v = model.predict(z)
        g = model.input_gradient(z)
        return float(v), g[:-1], float(g[-1])
    return fn


def log_utility(x, theta):
    """Sum of logs of the class's own variables; theta-free."""
    x = np.asarray(x, dtype=float)
    return float(np.sum(np.log(np.maximum(x, 1e-12)))), 1.0 / np.maximum(x, 1e-12), 0.0


@dataclass
class AgentClass:
    """One class as seen by one agent: its variables and local functions."""

    app_id: str
    columns: list                       # names of this class's local variables
    lower: np.ndarray
    upper: np.ndarray
    utility: callable                   # (x, theta) -> (val, grad_x, dtheta)
    delay: callable | None = None       # same signature; constraint delay <= d_bound
    throughput: callable | None = None  # same signature; constraint T >= t_bound


class SubproblemAgent:
    """Solves one side's NLP for given splits and reports multipliers.

    ``capacity_rows`` couple classes on shared resources: a list of
    ({app_id: {column: coeff}}, bound) entries.
    """

    def __init__(self, side, classes, capacity_rows=(), feas_tol=1e-6,
                 kkt_tol=1e-5, max_iter=200):
        self.side = side
        self.classes = list(classes)
        self.capacity_rows = list(capacity_rows)
        self.feas_tol = feas_tol
        self.kkt_tol = kkt_tol
        self.max_iter = max_iter
        self._warm = None
        self._slices = {}
        pos = 0
        lower, upper = [], []
        for ac in self.classes:
            k = len(ac.columns)
            self._slices[ac.app_id] = slice(pos, pos + k)
            lower.extend(np.asarray(ac.lower, dtype=float).tolist())
            upper.extend(np.asarray(ac.upper, dtype=float).tolist())
            pos += k
        self.lower = np.array(lower)
        self.upper = np.array(upper)
        self.n = pos

    def _linear_rows(self):
        rows = []
        for coeffs, bound in self.capacity_rows:
            row = np.zeros(self.n)
            for app_id, cols in coeffs.items():
                sl = self._slices[app_id]
                ac = next(c for c in self.classes if c.app_id == app_id)
                for col, coef in cols.items():
                    row[sl.start + ac.columns.index(col)] = coef
            rows.append((row, float(bound)))
        return rows

    def solve_local(self, view, iteration) -> ControllerMessage:
        """Solve the side's subproblem for the given splits.

        Returns multipliers of the delay and throughput split constraints and
        the theta-subgradient of the local Lagrangian (envelope theorem).  An
        infeasible subproblem reports BIG_MULTIPLIER on each violated split
        constraint so the master shifts budget toward this side.
        """
        cons = []
        index = {}
        for ac in self.classes:
            v = view[ac.app_id]
            sl = self._slices[ac.app_id]
            if ac.delay is not None:
                index[("tau", ac.app_id)] = len(cons)
                cons.append(self._delay_con(ac, sl, v["d_bound"], v["theta"]))
            if ac.throughput is not None:
                index[("rho", ac.app_id)] = len(cons)
                cons.append(self._thru_con(ac, sl, v["t_bound"], v["theta"]))

        def objective(x):
            val = 0.0
            grad = np.zeros_like(x)
            for ac in self.classes:
                sl = self._slices[ac.app_id]
                v, gx, _ = ac.utility(x[sl], view[ac.app_id]["theta"])
                val += v
                grad[sl] += gx
            return val, grad

        problem = NlpProblem(lower=self.lower, upper=self.upper,
                             objective=objective, constraints=cons,
                             linear=self._linear_rows())
        if self._warm is not None:
            sol = nlp_solve(problem, self._warm, feas_tol=self.feas_tol,
                            kkt_tol=self.kkt_tol, max_iter=self.max_iter)
            if not sol.converged:
                sol = solve_multistart(problem, feas_tol=self.feas_tol,
                                       kkt_tol=self.kkt_tol, max_iter=self.max_iter)
        else:
            sol = solve_multistart(problem, feas_tol=self.feas_tol,
                                   kkt_tol=self.kkt_tol, max_iter=self.max_iter)
        self._warm = sol.x.copy()

        lam_tau, lam_rho, g_theta, xs = {}, {}, {}, {}
        for ac in self.classes:
            v = view[ac.app_id]
            sl = self._slices[ac.app_id]
            x_c = sol.x[sl]
            xs[ac.app_id] = {col: float(val) for col, val in zip(ac.columns, x_c)}
            lt = lr = 0.0
            if ("tau", ac.app_id) in index:
                j = index[("tau", ac.app_id)]
                lt = float(sol.multipliers[j])
                if not sol.converged:
                    # duals of a failed solve carry elastic-penalty scale; the
                    # violated split gets the synthetic steering signal, the
                    # rest are capped
                    lt = BIG_MULTIPLIER if cons[j](sol.x)[0] > self.feas_tol \
                        else min(lt, BIG_MULTIPLIER)
            if ("rho", ac.app_id) in index:
                j = index[("rho", ac.app_id)]
                lr = float(sol.multipliers[j])
                if not sol.converged:
                    lr = BIG_MULTIPLIER if cons[j](sol.x)[0] > self.feas_tol \
                        else min(lr, BIG_MULTIPLIER)
            lam_tau[ac.app_id] = lt
            lam_rho[ac.app_id] = lr

            # d(Lagrangian)/d(theta) at the optimum, by the envelope theorem
            _, _, du_dth = ac.utility(x_c, v["theta"])
            g = du_dth
            if ac.delay is not None:
                _, _, dd = ac.delay(x_c, v["theta"])
                g -= lam_tau[ac.app_id] * dd
            if ac.throughput is not None:
                tv, _, dt = ac.throughput(x_c, v["theta"])
                g += lam_rho[ac.app_id] * dt / max(tv, 1e-12)
            g_theta[ac.app_id] = float(g)

        return ControllerMessage(
            sender=self.side, iteration=iteration, lam_tau=lam_tau, lam_rho=lam_rho,
            g_theta=g_theta, objective=float(sol.objective), solution=xs,
            feasible=sol.converged, status=sol.status)

    @staticmethod
    def _delay_con(ac, sl, bound, theta):
        def fn(x):
            v, gx, _ = ac.delay(x[sl], theta)
            g = np.zeros_like(x)
            g[sl] = gx
            return v - bound, g
        return fn

    @staticmethod
    def _thru_con(ac, sl, bound, theta):
        log_bound = float(np.log(max(bound, 1e-12)))

        def fn(x):
            v, gx, _ = ac.throughput(x[sl], theta)
            v = max(v, 1e-12)
            g = np.zeros_like(x)
            g[sl] = -gx / v
            return log_bound - float(np.log(v)), g
        return fn


# ---------------------------------------------------------------------------
# master
# ---------------------------------------------------------------------------

def _project(x, lo, hi):
    return np.minimum(np.maximum(x, lo), hi)


def master_update(state: CouplingState, msg_n: ControllerMessage,
                  msg_s: ControllerMessage, mode="fixed-objective") -> CouplingState:
    """One projected subgradient step on the splits and theta.

    tau_n  += a*(lam_tau_n - lam_tau_s), projected to [0, tau]
    rho_n  += a*(lam_rho_s - lam_rho_n), projected to [max(rho, floor), 1]
    theta  +- a*(g_n + g_s), ascent for the fixed objective, descent (saddle)
    for the stochastic one; projected to the theta box.
    """
    if mode not in ("fixed-objective", "saddle"):
        raise ValueError(f"unknown mode {mode!r}")
    if msg_n.iteration != msg_s.iteration:
        raise ProtocolError(
            f"iteration mismatch: network {msg_n.iteration} vs server {msg_s.iteration}")

    k = state.iteration + 1
    step = state.alpha0 / np.sqrt(k)
    tau = np.array([c.tau for c in state.classes])
    rho = np.array([c.rho for c in state.classes])
    ids = [c.app_id for c in state.classes]

    # multiplier gaps can be huge (synthetic infeasibility signals, barrier-like
    # utilities); clip the drive so one step moves at most ~20% of a box
    cap = 2.0
    d_tau = np.clip([msg_n.lam_tau[a] - msg_s.lam_tau[a] for a in ids], -cap, cap)
    d_rho = np.clip([msg_s.lam_rho[a] - msg_n.lam_rho[a] for a in ids], -cap, cap)
    d_theta = np.clip([msg_n.g_theta[a] + msg_s.g_theta[a] for a in ids], -cap, cap)
    sign = 1.0 if mode == "fixed-objective" else -1.0

    new_tau = _project(state.tau_split + step * tau * d_tau, 0.0, tau)
    new_rho = _project(state.rho_split + step * rho * d_rho,
                       np.maximum(rho, RHO_SPLIT_FLOOR), 1.0)
    span = state.theta_hi - state.theta_lo
    new_theta = _project(state.theta + sign * step * span * d_theta,
                         state.theta_lo, state.theta_hi)
    return CouplingState(classes=state.classes, tau_split=new_tau,
                         rho_split=new_rho, theta=new_theta,
                         theta_lo=state.theta_lo, theta_hi=state.theta_hi,
                         alpha0=state.alpha0, iteration=k)


@dataclass
class DistributedResult:
    status: str                 # converged | max-iter
    iterations: int
    state: CouplingState
    solution: dict              # app_id -> {column: value}, merged from both sides
    objective: float            # sum of the two local objectives
    residuals: dict             # final stopping quantities
    trace: list = field(default_factory=list, repr=False)


def run_algorithm1(classes, network_agent: SubproblemAgent, server_agent: SubproblemAgent,
                   theta_lo, theta_hi, mode="fixed-objective", eps=1e-4,
                   max_iter=500, alpha0=0.1) -> DistributedResult:
    """Iterate subproblem solves and master updates until the multiplier gaps
    and the summed theta-subgradients all fall below eps."""
    state = CouplingState.initial(classes, theta_lo, theta_hi, alpha0=alpha0)
    chan_n, chan_s = Channel(), Channel()
    trace = []
    ids = [c.app_id for c in classes]
    status = "max-iter"
    msg_n = msg_s = None
    residuals = {}

    for it in range(1, max_iter + 1):
        chan_n.send(network_agent.solve_local(state.network_view(), it))
        chan_s.send(server_agent.solve_local(state.server_view(), it))
        msg_n, msg_s = chan_n.recv(), chan_s.recv()

        r_tau = max(abs(msg_n.lam_tau[a] - msg_s.lam_tau[a]) for a in ids)
        r_rho = max(abs(msg_n.lam_rho[a] - msg_s.lam_rho[a]) for a in ids)
        r_theta = max(abs(msg_n.g_theta[a] + msg_s.g_theta[a]) for a in ids)
        residuals = {"tau": r_tau, "rho": r_rho, "theta": r_theta}
        for i, a in enumerate(ids):
            trace.append({
                "iteration": it, "app": a,
                "tau_split": float(state.tau_split[i]),
                "rho_split": float(state.rho_split[i]),
                "theta": float(state.theta[i]),
                "lam_tau_n": msg_n.lam_tau[a], "lam_tau_s": msg_s.lam_tau[a],
                "lam_rho_n": msg_n.lam_rho[a], "lam_rho_s": msg_s.lam_rho[a],
                "g_theta_n": msg_n.g_theta[a], "g_theta_s": msg_s.g_theta[a],
                "r_tau": r_tau, "r_rho": r_rho, "r_theta": r_theta,
                "obj_n": msg_n.objective, "obj_s": msg_s.objective,
            })
        if r_tau < eps and r_rho < eps and r_theta < eps:
            status = "converged"
            break
        state = master_update(state, msg_n, msg_s, mode=mode)

    solution = {}
    for a in ids:
        solution[a] = {}
        solution[a].update(msg_n.solution.get(a, {}))
        solution[a].update(msg_s.solution.get(a, {}))
    return DistributedResult(
        status=status, iterations=it, state=state, solution=solution,
        objective=msg_n.objective + msg_s.objective, residuals=residuals,
        trace=trace)


def dump_trace(result: DistributedResult, path):
    """Iteration trace as CSV, one row per (iteration, class)."""
    import csv
    if not result.trace:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(result.trace[0].keys()))
        w.writeheader()
        for row in result.trace:
            w.writerow(row)
