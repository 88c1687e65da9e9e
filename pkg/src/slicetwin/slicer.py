"""Centralized slice allocation over learned worst-case QoE surfaces.

``solve_robust`` maximizes total predicted throughput subject to per-class
delay and throughput constraints (both learned) plus the exact linear capacity
constraints.  ``solve_graceful`` trades constraint satisfaction of degradable
classes against one-sided quadratic penalties so that strict classes stay
feasible under resource shortage.

Delay constraints are scaled by their bounds and throughput constraints are
handled in log form, so everything the solver sees is O(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nlp import NlpProblem, NlpSolution, solve_multistart
from .scenario import ScenarioConfig
from .simulator import SliceDecision, run_sim


class SlicerError(ValueError):
    pass


@dataclass
class ClassModels:
    """Trained per-class surrogates plus the decision entries they consume.

    ``columns`` name the model inputs in order, e.g. ["f_fronthaul", "phi_0"];
    both models must share that layout.
    """

    delay: object
    throughput: object
    columns: list

    def __post_init__(self):
        for m in (self.delay, self.throughput):
            if m.input_dim != len(self.columns):
                raise SlicerError(
                    f"model input dim {m.input_dim} != columns {self.columns}")


@dataclass
class SliceProblem:
    config: ScenarioConfig
    models: dict                      # app_id -> ClassModels
    utility: str = "throughput"
    delay_margin: dict = field(default_factory=dict)   # app_id -> factor <= 1

    def __post_init__(self):
        if self.utility != "throughput":
            raise SlicerError(f"unsupported utility {self.utility!r}")
        for app in self.config.apps:
            if app.id not in self.models:
                raise SlicerError(f"no models for app {app.id!r}")


@dataclass
class _Layout:
    """Flat variable vector: each app's model columns, concatenated."""

    apps: list
    slices: dict          # app_id -> slice into x
    columns: dict         # app_id -> column names
    lower: np.ndarray
    upper: np.ndarray

    def sub(self, x, app_id):
        return x[self.slices[app_id]]


def _build_layout(problem: SliceProblem) -> _Layout:
    apps = [a.id for a in problem.config.apps]
    slices, columns = {}, {}
    lower, upper = [], []
    pos = 0
    for app_id in apps:
        cm = problem.models[app_id]
        k = len(cm.columns)
        slices[app_id] = slice(pos, pos + k)
        columns[app_id] = list(cm.columns)
        lo = np.maximum(cm.delay.input_lo_, 0.0)
        hi = np.minimum(cm.delay.input_hi_, 1.0)
        lower.extend(lo.tolist())
        upper.extend(hi.tolist())
        pos += k
    return _Layout(apps=apps, slices=slices, columns=columns,
                   lower=np.array(lower), upper=np.array(upper))


def _capacity_rows(problem: SliceProblem, layout: _Layout):
    rows = []
    topo = problem.config.topology
    n = len(layout.lower)
    for edge in topo.edges:
        row = np.zeros(n)
        hit = False
        for app_id in layout.apps:
            for i, col in enumerate(layout.columns[app_id]):
                if col == f"f_{edge.id}":
                    row[layout.slices[app_id].start + i] = 1.0
                    hit = True
        if hit:
            rows.append((row, 1.0))
    for core in range(topo.cores):
        row = np.zeros(n)
        hit = False
        for app_id in layout.apps:
            for i, col in enumerate(layout.columns[app_id]):
                if col == f"phi_{core}":
                    row[layout.slices[app_id].start + i] = 1.0
                    hit = True
        if hit:
            rows.append((row, 1.0))
    return rows


def _scatter(layout, app_id, sub_grad):
    g = np.zeros(len(layout.lower))
    g[layout.slices[app_id]] = sub_grad
    return g


def _objective(problem, layout):
    def fn(x):
        val = 0.0
        grad = np.zeros_like(x)
        for app_id in layout.apps:
            m = problem.models[app_id].throughput
            sub = layout.sub(x, app_id)
            val += m.predict(sub)
            grad[layout.slices[app_id]] += m.input_gradient(sub)
        return val, grad
    return fn


def _delay_constraint(problem, layout, app, tighten=1.0):
    m = problem.models[app.id].delay
    tau_eff = app.tau * problem.delay_margin.get(app.id, 1.0) * tighten

    def fn(x):
        sub = layout.sub(x, app.id)
        d = m.predict(sub)
        g = m.input_gradient(sub)
        return d / tau_eff - 1.0, _scatter(layout, app.id, g / tau_eff)
    return fn


def _throughput_constraint(problem, layout, app, tighten=1.0):
    m = problem.models[app.id].throughput
    rho_eff = min(app.rho * tighten, 0.999)

    def fn(x):
        sub = layout.sub(x, app.id)
        t = max(m.predict(sub), 1e-12)
        g = m.input_gradient(sub)
        return float(np.log(rho_eff) - np.log(t)), _scatter(layout, app.id, -g / t)
    return fn


def _decision_from_x(problem, layout, x) -> SliceDecision:
    config = problem.config
    flows = {a.id: {} for a in config.apps}
    cpu = {a.id: {} for a in config.apps}
    for app_id in layout.apps:
        sub = layout.sub(x, app_id)
        for col, v in zip(layout.columns[app_id], sub):
            v = min(max(float(v), 0.0), 1.0)
            if col.startswith("f_"):
                flows[app_id][col[2:]] = v
            else:
                cpu[app_id][int(col[4:])] = v
    # exact capacity: rescale any sum that numerically crept above 1
    for edge in config.topology.edges:
        s = sum(flows[a].get(edge.id, 0.0) for a in flows)
        if s > 1.0:
            for a in flows:
                if edge.id in flows[a]:
                    flows[a][edge.id] /= s
    for core in range(config.topology.cores):
        s = sum(cpu[a].get(core, 0.0) for a in cpu)
        if s > 1.0:
            for a in cpu:
                if core in cpu[a]:
                    cpu[a][core] /= s
    return SliceDecision(flows=flows, cpu=cpu)


@dataclass
class SliceResult:
    decision: SliceDecision | None
    solution: NlpSolution
    predicted: dict                   # app_id -> {"delay": s, "throughput": frac}
    recommendation: str = ""

    @property
    def feasible(self):
        return self.decision is not None


def _predicted(problem, layout, x):
    out = {}
    for app_id in layout.apps:
        sub = layout.sub(x, app_id)
        out[app_id] = {
            "delay": float(problem.models[app_id].delay.predict(sub)),
            "throughput": float(problem.models[app_id].throughput.predict(sub)),
        }
    return out


def solve_robust(problem: SliceProblem, feas_tol=1e-6, kkt_tol=1e-5,
                 max_iter=200) -> SliceResult:
    """Joint robust allocation: max sum of predicted worst-case throughput
    subject to learned QoE constraints and exact capacity sums."""
    layout = _build_layout(problem)
    cons = []
    for app in problem.config.apps:
        cons.append(_delay_constraint(problem, layout, app))
        cons.append(_throughput_constraint(problem, layout, app))
    nlp = NlpProblem(lower=layout.lower, upper=layout.upper,
                     objective=_objective(problem, layout),
                     constraints=cons,
                     linear=_capacity_rows(problem, layout))
    sol = solve_multistart(nlp, feas_tol=feas_tol, kkt_tol=kkt_tol, max_iter=max_iter)
    if not sol.converged:
        return SliceResult(
            decision=None, solution=sol, predicted=_predicted(problem, layout, sol.x),
            recommendation="robust problem infeasible; consider solve_graceful "
                           "with a degradable class set")
    return SliceResult(decision=_decision_from_x(problem, layout, sol.x),
                       solution=sol, predicted=_predicted(problem, layout, sol.x))


# ---------------------------------------------------------------------------
# graceful degradation
# ---------------------------------------------------------------------------

@dataclass
class DegradeSpec:
    """Strict/degradable partition and per-class penalty weights.

    Penalty of a degradable class: w_tau*max(0, D-tau)^2 + w_rho*max(0, rho-T)^2.
    Default weights 1/tau^2 and 1/rho^2 make the terms dimensionless and O(1)
    per unit of relative violation.  Strict classes carry no penalty; they stay
    as hard constraints.
    """

    strict: frozenset
    degradable: frozenset
    w_tau: dict = field(default_factory=dict)
    w_rho: dict = field(default_factory=dict)

    def validate(self, config: ScenarioConfig):
        all_ids = set(config.app_ids)
        if set(self.strict) | set(self.degradable) != all_ids:
            raise SlicerError("strict and degradable sets must cover all apps")
        if set(self.strict) & set(self.degradable):
            raise SlicerError("strict and degradable sets must be disjoint")
        for d in (self.w_tau, self.w_rho):
            for k, v in d.items():
                if not v > 0:
                    raise SlicerError(f"penalty weight for {k} must be > 0")

    @staticmethod
    def from_config(config: ScenarioConfig) -> "DegradeSpec":
        strict = frozenset(a.id for a in config.apps if a.priority == "strict")
        degradable = frozenset(a.id for a in config.apps if a.priority == "degradable")
        return DegradeSpec(strict=strict, degradable=degradable)


@dataclass
class GracefulResult:
    decision: SliceDecision
    relaxed: dict          # app_id -> {"delay": achieved D, "throughput": achieved T}
    solution: NlpSolution
    predicted: dict
    objective_min: float   # penalty-minus-utility objective, minimization sense


def solve_graceful(problem: SliceProblem, spec: DegradeSpec, feas_tol=1e-6,
                   kkt_tol=1e-5, max_iter=300, strict_delay_tighten=0.97,
                   strict_rho_tighten=1.03) -> GracefulResult:
    """Penalized allocation: strict classes keep hard QoE constraints, the
    rest trade violations against quadratic penalties.

    In a resource-constrained regime the optimum rides the strict classes'
    constraint boundaries, so model error translates directly into missed
    bounds; the tighten factors buy a conservative margin there (delay bound
    scaled down, required success scaled up).
    """
    spec.validate(problem.config)
    layout = _build_layout(problem)
    apps = {a.id: a for a in problem.config.apps}

    # the strict-only problem must be feasible before degradation means anything
    strict_cons = []
    for app_id in sorted(spec.strict):
        strict_cons.append(_delay_constraint(problem, layout, apps[app_id],
                                             tighten=strict_delay_tighten))
        strict_cons.append(_throughput_constraint(problem, layout, apps[app_id],
                                                  tighten=strict_rho_tighten))
    probe = NlpProblem(lower=layout.lower, upper=layout.upper,
                       objective=_objective(problem, layout),
                       constraints=strict_cons,
                       linear=_capacity_rows(problem, layout))
    probe_sol = solve_multistart(probe, feas_tol=feas_tol, kkt_tol=kkt_tol,
                                 max_iter=max_iter)
    if not probe_sol.converged:
        raise SlicerError("strict set itself infeasible: the strict classes cannot "
                          "be satisfied even with every resource")

    def penalty(x):
        val = 0.0
        grad = np.zeros_like(x)
        for app_id in sorted(spec.degradable):
            app = apps[app_id]
            cm = problem.models[app_id]
            sub = layout.sub(x, app_id)
            w_t = spec.w_tau.get(app_id, 1.0 / app.tau ** 2)
            w_r = spec.w_rho.get(app_id, 1.0 / app.rho ** 2)
            d = cm.delay.predict(sub)
            gd = cm.delay.input_gradient(sub)
            over = max(0.0, d - app.tau)
            val += w_t * over * over
            if over > 0:
                grad[layout.slices[app_id]] += 2.0 * w_t * over * gd
            t = cm.throughput.predict(sub)
            gt = cm.throughput.input_gradient(sub)
            short = max(0.0, app.rho - t)
            val += w_r * short * short
            if short > 0:
                grad[layout.slices[app_id]] -= 2.0 * w_r * short * gt
        return val, grad

    base_obj = _objective(problem, layout)

    def graceful_obj(x):       # maximize utility - penalty
        v0, g0 = base_obj(x)
        v1, g1 = penalty(x)
        return v0 - v1, g0 - g1

    nlp = NlpProblem(lower=layout.lower, upper=layout.upper,
                     objective=graceful_obj,
                     constraints=strict_cons,
                     linear=_capacity_rows(problem, layout))
    sol = solve_multistart(nlp, feas_tol=feas_tol, kkt_tol=kkt_tol, max_iter=max_iter)
    if not sol.converged:
        raise SlicerError(f"graceful solve did not converge: {sol.status} "
                          f"(max violation {sol.max_violation:g})")
    predicted = _predicted(problem, layout, sol.x)
    relaxed = {app_id: dict(predicted[app_id]) for app_id in sorted(spec.degradable)}
    return GracefulResult(decision=_decision_from_x(problem, layout, sol.x),
                          relaxed=relaxed, solution=sol, predicted=predicted,
                          objective_min=-sol.objective)


# ---------------------------------------------------------------------------
# validation and verification
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    valid: bool
    violations: list
    warnings: list

    def __str__(self):
        if self.valid and not self.warnings:
            return "decision valid"
        lines = [] if self.valid else ["violations:"] + [f"  {v}" for v in self.violations]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def validate_decision(decision: SliceDecision, topology) -> ValidationReport:
    """Exact box/sum check; report-only (an all-zero decision is valid but
    gets a usefulness warning)."""
    violations = decision.violations(topology)
    warnings = []
    total = sum(sum(d.values()) for d in decision.flows.values()) \
        + sum(sum(d.values()) for d in decision.cpu.values())
    if total == 0:
        warnings.append("decision allocates no resources at all")
    return ValidationReport(valid=not violations, violations=violations,
                            warnings=warnings)


@dataclass
class VerifyClassReport:
    requests: int
    delivered: int
    violation_frac: float      # delivered requests with e2e > tau
    worst_delay: float
    e2e_success: float
    predicted_delay: float | None = None
    surrogate_adequate: bool | None = None


def verify_decision(config: ScenarioConfig, decision: SliceDecision, seeds,
                    theta=None, mode="sliced", priority_app=None,
                    predicted=None, error_margin=0.0) -> dict:
    """Re-simulate a decision with fresh seeds; per class, report the fraction
    of delivered requests over the delay bound and compare the worst observed
    delay against the surrogate prediction inflated by the model-error margin.
    Surrogate failures are reported, never hidden."""
    theta = config.theta.hi if theta is None else theta
    agg = {a.id: dict(requests=0, delivered=0, over=0, worst=0.0) for a in config.apps}
    for seed in seeds:
        sample = run_sim(config, decision, theta, seed, mode=mode,
                         priority_app=priority_app)
        for app in config.apps:
            st = sample.stats[app.id]
            a = agg[app.id]
            a["requests"] += st.emitted
            a["delivered"] += st.delivered
            a["over"] += st.over_tau_count
            if st.delivered and st.max_delay > a["worst"]:
                a["worst"] = st.max_delay
    out = {}
    for app in config.apps:
        a = agg[app.id]
        pred = (predicted or {}).get(app.id, {}).get("delay")
        adequate = None
        if pred is not None:
            adequate = a["worst"] <= pred * (1.0 + error_margin)
        out[app.id] = VerifyClassReport(
            requests=a["requests"], delivered=a["delivered"],
            violation_frac=a["over"] / a["delivered"] if a["delivered"] else 0.0,
            worst_delay=a["worst"],
            e2e_success=a["delivered"] / a["requests"] if a["requests"] else 1.0,
            predicted_delay=pred, surrogate_adequate=adequate)
    return out
