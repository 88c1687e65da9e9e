"""Command-line pipeline: sweep -> train -> solve/degrade/distribute -> verify -> report.

Every stage writes its artifacts plus a manifest.json into its output
directory; downstream stages refuse to run when a prerequisite artifact is
missing (exit 2, naming the stage to run first).  Invalid flags exit 1.
All stages are deterministic for fixed scenario seeds.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .scenario import ScenarioError, load_scenario
from .simulator import MODES, SliceDecision, equal_share_decision, run_sim, uniform_decision
from .dataset import aggregate_worst_case, load_dataset, make_isolation_grid, sweep_grid
from . import surrogate as sg
from .slicer import (ClassModels, DegradeSpec, SliceProblem, solve_graceful,
                     solve_robust, validate_decision, verify_decision)
from . import distributed as dist

BUNDLED_DIR = os.path.join(os.path.dirname(__file__), "scenarios")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING = 2


class StageError(RuntimeError):
    """A prerequisite artifact is missing; carries the stage that makes it."""

    def __init__(self, message, stage):
        super().__init__(message)
        self.stage = stage


def _scenario_path(name_or_path):
    if os.path.exists(name_or_path):
        return name_or_path
    bundled = os.path.join(BUNDLED_DIR, name_or_path + ".cfg")
    if os.path.exists(bundled):
        return bundled
    raise StageError(f"scenario {name_or_path!r} not found (no such file, no bundled "
                     f"scenario of that name)", stage="scenario")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(out_dir, command, args, scenario_path, seeds, artifacts, t0):
    man = {
        "command": command,
        "argv": [str(a) for a in args],
        "scenario": os.path.abspath(scenario_path),
        "scenario_sha256": _sha256(scenario_path),
        "seeds": list(seeds),
        "artifacts": {k: os.path.basename(v) for k, v in artifacts.items()},
        "tool_version": __version__,
        "wall_clock_s": round(time.time() - t0, 3),
    }
    path = os.path.join(out_dir, "manifest.json")
    _write_json(path, man)
    for rel in man["artifacts"].values():
        full = os.path.join(out_dir, rel)
        if not os.path.exists(full):
            raise RuntimeError(f"manifest names missing artifact {full}")
    return path


def _require(path, what, stage):
    if not os.path.exists(path):
        raise StageError(f"missing {what}: {path}", stage=stage)
    return path


def _load_manifest(dir_path, stage):
    path = os.path.join(dir_path, "manifest.json")
    _require(path, "manifest.json", stage)
    with open(path) as fh:
        return json.load(fh)


def _decision_to_dict(decision: SliceDecision):
    return {"flows": decision.flows,
            "cpu": {a: {str(c): v for c, v in d.items()} for a, d in decision.cpu.items()}}


def _decision_from_dict(d):
    return SliceDecision(
        flows={a: dict(v) for a, v in d["flows"].items()},
        cpu={a: {int(c): x for c, x in v.items()} for a, v in d["cpu"].items()})


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    t0 = time.time()
    spath = _scenario_path(args.scenario)
    config = load_scenario(spath)
    os.makedirs(args.out, exist_ok=True)
    if args.decision:
        with open(_require(args.decision, "decision file", "solve")) as fh:
            decision = _decision_from_dict(json.load(fh)["decision"])
    else:
        decision = equal_share_decision(config)
    theta = args.theta if args.theta is not None else config.theta.mid
    sample = run_sim(config, decision, theta, args.seed, mode=args.mode,
                     priority_app=args.priority_app)
    out = {"theta": theta, "seed": args.seed, "mode": args.mode, "classes": {}}
    hist_path = os.path.join(args.out, "histograms.csv")
    with open(hist_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["app", "bin_lo_us", "count"])
        for app_id, st in sample.stats.items():
            out["classes"][app_id] = {
                "emitted": st.emitted, "delivered": st.delivered,
                "net_dropped": st.net_dropped, "srv_dropped": st.srv_dropped,
                "e2e_success": st.e2e_success, "max_delay_s": st.max_delay,
                "mean_delay_s": st.mean_delay, "p99_s": st.p99,
                "violation_frac": st.frac_over_tau,
            }
            for b, cnt in enumerate(st.hist_counts):
                if cnt:
                    w.writerow([app_id, b * st.hist_bin_us, int(cnt)])
    sample_path = os.path.join(args.out, "sample.json")
    _write_json(sample_path, out)
    _manifest(args.out, "simulate", sys.argv[1:], spath, [args.seed],
              {"sample": sample_path, "histograms": hist_path}, t0)
    return EXIT_OK


def cmd_sweep(args):
    t0 = time.time()
    spath = _scenario_path(args.scenario)
    config = load_scenario(spath)
    os.makedirs(args.out, exist_ok=True)
    fvals = np.linspace(args.f_min, 1.0, args.grid)
    pvals = np.linspace(args.phi_min, 1.0, args.grid)
    grid = make_isolation_grid(config, fvals, pvals)
    thetas = [config.theta.lo, config.theta.mid, config.theta.hi] \
        if args.thetas is None else [float(x) for x in args.thetas.split(",")]
    data_path = os.path.join(args.out, "dataset.csv")
    result = sweep_grid(config, grid, thetas, list(config.theta.seeds), path=data_path)
    print(f"sweep: {len(result)} samples ({len(result.failed)} failed cells)")
    _manifest(args.out, "sweep", sys.argv[1:], spath, config.theta.seeds,
              {"dataset": data_path,
               "histograms": os.path.join(args.out, "dataset_hist.csv")}, t0)
    return EXIT_OK


def _parse_arch(text, input_dim):
    widths = [int(w) for w in text.lower().split("x")]
    if len(widths) >= 3 and widths[0] == input_dim and widths[-1] == 1:
        return tuple(widths[1:-1])   # full layer spec given
    return tuple(widths)


def cmd_train(args):
    t0 = time.time()
    spath = _scenario_path(args.scenario)
    config = load_scenario(spath)
    man = _load_manifest(args.data, stage="sweep")
    data_path = _require(os.path.join(args.data, man["artifacts"]["dataset"]),
                         "dataset", "sweep")
    os.makedirs(args.out, exist_ok=True)
    dataset = load_dataset(data_path, config)
    agg = aggregate_worst_case(dataset, config)

    metrics = ("delay", "throughput") if args.metric == "all" else (args.metric,)
    index = {}
    reports = {}
    artifacts = {}
    for app_id, tables in agg.items():
        entry = {"columns": tables.delay.columns}
        for metric in metrics:
            table = tables.delay if metric == "delay" else tables.throughput
            arch = _parse_arch(args.arch, table.X.shape[1])
            model, report = sg.fit(table, arch=arch, seed=args.seed, metric=metric)
            fname = f"{app_id}_{metric}.npz"
            sg.save(model, os.path.join(args.out, fname))
            entry[metric] = fname
            reports[f"{app_id}.{metric}"] = vars(report)
            artifacts[f"{app_id}_{metric}"] = os.path.join(args.out, fname)
        if args.site:
            site_tables = {
                "net_delay": (tables.site_net_delay, "site-delay"),
                "net_throughput": (tables.site_net_throughput, "site-throughput"),
                "srv_delay": (tables.site_srv_delay, "site-delay"),
                "srv_throughput": (tables.site_srv_throughput, "site-throughput"),
            }
            entry["site"] = {}
            entry["site_columns"] = {
                "net": tables.site_net_delay.columns,
                "srv": tables.site_srv_delay.columns,
            }
            for key, (table, metric) in site_tables.items():
                arch = _parse_arch(args.arch, table.X.shape[1])
                model, report = sg.fit(table, arch=arch, seed=args.seed, metric=metric)
                fname = f"{app_id}_{key}.npz"
                sg.save(model, os.path.join(args.out, fname))
                entry["site"][key] = fname
                reports[f"{app_id}.{key}"] = vars(report)
                artifacts[f"{app_id}_{key}"] = os.path.join(args.out, fname)
        index[app_id] = entry

    index_path = os.path.join(args.out, "models.json")
    _write_json(index_path, index)
    report_path = os.path.join(args.out, "fit_report.json")
    _write_json(report_path, reports)
    artifacts.update({"models": index_path, "fit_report": report_path})
    _manifest(args.out, "train", sys.argv[1:], spath, config.theta.seeds, artifacts, t0)
    for key, rep in sorted(reports.items()):
        print(f"{key}: val rel err {100 * rep['val_rel_err']:.2f}%")
    return EXIT_OK


def _load_models(models_dir, config, need_site=False):
    man = _load_manifest(models_dir, stage="train")
    index_path = _require(os.path.join(models_dir, man["artifacts"]["models"]),
                          "models.json", "train")
    with open(index_path) as fh:
        index = json.load(fh)
    models = {}
    for app in config.apps:
        if app.id not in index:
            raise StageError(f"no trained models for app {app.id!r}", stage="train")
        entry = index[app.id]
        if need_site:
            if "site" not in entry:
                raise StageError(f"no per-site models for app {app.id!r}; "
                                 "re-run train --site", stage="train")
            models[app.id] = {
                key: sg.load(os.path.join(models_dir, fname))
                for key, fname in entry["site"].items()}
            models[app.id]["columns"] = entry["site_columns"]
        else:
            for metric in ("delay", "throughput"):
                if metric not in entry:
                    raise StageError(f"model {app.id}.{metric} not trained", stage="train")
            models[app.id] = ClassModels(
                delay=sg.load(os.path.join(models_dir, entry["delay"])),
                throughput=sg.load(os.path.join(models_dir, entry["throughput"])),
                columns=entry["columns"])
    return models


def _solution_json(config, decision, solution, predicted, extra=None):
    rep = validate_decision(decision, config.topology) if decision else None
    out = {
        "status": solution.status,
        "objective": solution.objective,
        "iterations": solution.iterations,
        "kkt_residual": solution.kkt_residual,
        "multipliers": solution.multipliers.tolist(),
        "linear_multipliers": solution.linear_multipliers.tolist(),
        "decision": _decision_to_dict(decision) if decision else None,
        "decision_valid": bool(rep.valid) if rep else None,
        "predicted": predicted,
    }
    if extra:
        out.update(extra)
    return out


def cmd_solve(args):
    t0 = time.time()
    spath = _scenario_path(args.scenario)
    config = load_scenario(spath)
    models = _load_models(args.models, config)
    os.makedirs(args.out, exist_ok=True)
    problem = SliceProblem(config=config, models=models,
                           delay_margin={a.id: args.delay_margin for a in config.apps})
    result = solve_robust(problem)
    payload = _solution_json(config, result.decision, result.solution, result.predicted,
                             extra={"recommendation": result.recommendation})
    path = os.path.join(args.out, "solution.json")
    _write_json(path, payload)
    _manifest(args.out, "solve", sys.argv[1:], spath, config.theta.seeds,
              {"solution": path}, t0)
    print(f"solve: {result.solution.status}"
          + ("" if result.feasible else f" ({result.recommendation})"))
    return EXIT_OK


def cmd_degrade(args):
    t0 = time.time()
    spath = _scenario_path(args.scenario)
    config = load_scenario(spath)
    models = _load_models(args.models, config)
    os.makedirs(args.out, exist_ok=True)
    problem = SliceProblem(config=config, models=models)
    if args.strict or args.degradable:
        strict = frozenset((args.strict or "").split(",")) - {""}
        degradable = frozenset((args.degradable or "").split(",")) - {""}
        spec = DegradeSpec(strict=strict, degradable=degradable)
    else:
        spec = DegradeSpec.from_config(config)
    result = solve_graceful(problem, spec)
    payload = _solution_json(config, result.decision, result.solution, result.predicted,
                             extra={"relaxed": result.relaxed,
                                    "objective_min": result.objective_min,
                                    "strict": sorted(spec.strict),
                                    "degradable": sorted(spec.degradable)})
    path = os.path.join(args.out, "solution.json")
    _write_json(path, payload)
    _manifest(args.out, "degrade", sys.argv[1:], spath, config.theta.seeds,
              {"solution": path}, t0)
    for app_id, vals in result.relaxed.items():
        print(f"degrade: {app_id} relaxed to delay {vals['delay']*1e3:.2f} ms, "
              f"throughput {vals['throughput']:.4f}")
    return EXIT_OK


def cmd_distribute(args):
    t0 = time.time()
    spath = _scenario_path(args.scenario)
    config = load_scenario(spath)
    site_models = _load_models(args.models, config, need_site=True)
    os.makedirs(args.out, exist_ok=True)

    def log_thru_utility(model):
        fn = dist.model_site_fn(model)

        def u(x, theta):
            v, gx, gt = fn(x, theta)
            v = max(v, 1e-9)
            return float(np.log(v)), gx / v, gt / v
        return u

    classes = [dist.ClassSpec(a.id, a.tau, a.rho) for a in config.apps]
    net_classes, srv_classes = [], []
    for app in config.apps:
        m = site_models[app.id]
        ncols = m["columns"]["net"][:-1]   # strip the theta column
        scols = m["columns"]["srv"][:-1]
        nd, nt = m["net_delay"], m["net_throughput"]
        sd, st = m["srv_delay"], m["srv_throughput"]
        net_classes.append(dist.AgentClass(
            app.id, ncols, nd.input_lo_[:-1], np.minimum(nd.input_hi_[:-1], 1.0),
            utility=log_thru_utility(nt),
            delay=dist.model_site_fn(nd), throughput=dist.model_site_fn(nt)))
        srv_classes.append(dist.AgentClass(
            app.id, scols, sd.input_lo_[:-1], np.minimum(sd.input_hi_[:-1], 1.0),
            utility=log_thru_utility(st),
            delay=dist.model_site_fn(sd), throughput=dist.model_site_fn(st)))

    net_caps = [({a.id: {f"f_{e.id}": 1.0} for a in config.apps}, 1.0)
                for e in config.topology.edges]
    srv_caps = []
    for core in range(config.topology.cores):
        coeffs = {a.id: {f"phi_{core}": 1.0} for a in config.apps
                  if f"phi_{core}" in site_models[a.id]["columns"]["srv"]}
        if coeffs:
            srv_caps.append((coeffs, 1.0))

    agent_n = dist.SubproblemAgent("network", net_classes, net_caps)
    agent_s = dist.SubproblemAgent("server", srv_classes, srv_caps)
    result = dist.run_algorithm1(classes, agent_n, agent_s,
                                 config.theta.lo, config.theta.hi,
                                 mode=args.mode, eps=args.eps,
                                 max_iter=args.max_iter, alpha0=args.alpha0)
    trace_path = os.path.join(args.out, "trace.csv")
    dist.dump_trace(result, trace_path)

    flows = {a.id: {} for a in config.apps}
    cpu = {a.id: {} for a in config.apps}
    for app in config.apps:
        for col, v in result.solution[app.id].items():
            v = min(max(float(v), 0.0), 1.0)
            if col.startswith("f_"):
                flows[app.id][col[2:]] = v
            else:
                cpu[app.id][int(col[4:])] = v
    decision = SliceDecision(flows=flows, cpu=cpu)
    payload = {
        "status": result.status,
        "iterations": result.iterations,
        "objective": result.objective,
        "residuals": result.residuals,
        "decision": _decision_to_dict(decision),
        "decision_valid": validate_decision(decision, config.topology).valid,
        "splits": {c.app_id: {"tau_n": float(result.state.tau_split[i]),
                              "rho_n": float(result.state.rho_split[i]),
                              "theta": float(result.state.theta[i])}
                   for i, c in enumerate(result.state.classes)},
    }
    path = os.path.join(args.out, "solution.json")
    _write_json(path, payload)
    _manifest(args.out, "distribute", sys.argv[1:], spath, config.theta.seeds,
              {"solution": path, "trace": trace_path}, t0)
    print(f"distribute: {result.status} after {result.iterations} iterations; "
          f"residuals {result.residuals}")
    return EXIT_OK


def cmd_verify(args):
    t0 = time.time()
    spath = _scenario_path(args.scenario)
    config = load_scenario(spath)
    os.makedirs(args.out, exist_ok=True)
    with open(_require(args.solution, "solution file", "solve")) as fh:
        sol = json.load(fh)
    if sol.get("decision") is None:
        raise StageError("solution has no decision (infeasible run?)", stage="solve")
    decision = _decision_from_dict(sol["decision"])
    seeds = [args.seed_base + k for k in range(args.seeds)]
    mode = args.baseline or "sliced"
    theta = args.theta if args.theta is not None else config.theta.hi
    predicted = sol.get("predicted") if mode == "sliced" else None
    report = verify_decision(config, decision, seeds, theta=theta, mode=mode,
                             priority_app=args.priority_app, predicted=predicted,
                             error_margin=args.error_margin)
    hist_path = os.path.join(args.out, "verify_hist.csv")
    with open(hist_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["app", "bin_lo_us", "count"])
        agg_hist = {}
        for seed in seeds:
            sample = run_sim(config, decision, theta, seed, mode=mode,
                             priority_app=args.priority_app)
            for app_id, st in sample.stats.items():
                cur = agg_hist.setdefault(app_id, np.zeros(0, dtype=np.int64))
                if len(st.hist_counts) > len(cur):
                    cur = np.concatenate([cur, np.zeros(len(st.hist_counts) - len(cur),
                                                        dtype=np.int64)])
                cur[:len(st.hist_counts)] += st.hist_counts
                agg_hist[app_id] = cur
        for app_id, hist in sorted(agg_hist.items()):
            for b, cnt in enumerate(hist):
                if cnt:
                    w.writerow([app_id, b * 50, int(cnt)])
    payload = {"mode": mode, "theta": theta, "seeds": seeds, "classes": {
        a: {"requests": r.requests, "delivered": r.delivered,
            "violation_frac": r.violation_frac, "worst_delay_s": r.worst_delay,
            "e2e_success": r.e2e_success, "predicted_delay_s": r.predicted_delay,
            "surrogate_adequate": r.surrogate_adequate}
        for a, r in report.items()}}
    path = os.path.join(args.out, "verify.json")
    _write_json(path, payload)
    _manifest(args.out, "verify", sys.argv[1:], spath, seeds,
              {"verify": path, "histograms": hist_path}, t0)
    for a, r in report.items():
        print(f"verify[{mode}] {a}: violation {100*r.violation_frac:.3f}% "
              f"success {100*r.e2e_success:.2f}% worst {r.worst_delay*1e3:.3f} ms")
    return EXIT_OK


def cmd_report(args):
    t0 = time.time()
    runs = []
    for d in args.runs:
        man = _load_manifest(d, stage="verify")
        if man["command"] != "verify":
            raise StageError(f"{d} is not a verify run", stage="verify")
        vr = os.path.join(d, man["artifacts"]["verify"])
        _require(vr, "verify.json", "verify")
        with open(vr) as fh:
            runs.append((d, man, json.load(fh)))
    if not runs:
        raise StageError("no verify runs given", stage="verify")
    os.makedirs(args.out, exist_ok=True)
    scenario_hashes = {man["scenario_sha256"] for _, man, _ in runs}

    summary = {"scenario_sha256": sorted(scenario_hashes), "rows": []}
    csv_path = os.path.join(args.out, "summary.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "app", "requests", "violation_pct", "throughput_pct",
                    "worst_delay_ms"])
        for d, man, v in runs:
            for app_id, r in sorted(v["classes"].items()):
                row = {
                    "mode": v["mode"], "app": app_id, "requests": r["requests"],
                    "violation_pct": round(100 * r["violation_frac"], 4),
                    "throughput_pct": round(100 * r["e2e_success"], 4),
                    "worst_delay_ms": round(1e3 * r["worst_delay_s"], 4),
                }
                summary["rows"].append(row)
                w.writerow([row["mode"], row["app"], row["requests"],
                            row["violation_pct"], row["throughput_pct"],
                            row["worst_delay_ms"]])
        # histogram sidecars travel with the report for plotting
    for i, (d, man, _) in enumerate(runs):
        src = os.path.join(d, man["artifacts"]["histograms"])
        if os.path.exists(src):
            dst = os.path.join(args.out, f"hist_{i}_{os.path.basename(d)}.csv")
            with open(src) as s, open(dst, "w") as t:
                t.write(s.read())
    json_path = os.path.join(args.out, "summary.json")
    _write_json(json_path, summary)
    _manifest(args.out, "report", sys.argv[1:], runs[0][1]["scenario"], [],
              {"summary": json_path, "summary_csv": csv_path}, t0)
    print(f"report: {len(summary['rows'])} rows -> {json_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="slicetwin",
                description="Digital-twin pipeline for joint network/compute slicing")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        sp.set_defaults(fn=fn)
        sp.add_argument("--scenario", required=(name != "report"),
                        help="scenario file path or bundled name (table2, table3, ...)")
        sp.add_argument("--out", required=True, help="output directory")
        return sp

    sp = add("simulate", cmd_simulate, help="run one simulation cell")
    sp.add_argument("--decision", help="solution.json from solve/degrade; equal share if omitted")
    sp.add_argument("--theta", type=float)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--mode", choices=MODES, default="sliced")
    sp.add_argument("--priority-app", dest="priority_app")

    sp = add("sweep", cmd_sweep, help="probe the twin over a decision grid")
    sp.add_argument("--grid", type=int, default=11)
    sp.add_argument("--f-min", dest="f_min", type=float, default=0.05)
    sp.add_argument("--phi-min", dest="phi_min", type=float, default=0.05)
    sp.add_argument("--thetas", help="comma list; defaults to lo,mid,hi")

    sp = add("train", cmd_train, help="fit QoE surrogates from a sweep")
    sp.add_argument("--data", required=True, help="sweep output directory")
    sp.add_argument("--metric", choices=["delay", "throughput", "all"], default="all")
    sp.add_argument("--arch", default="16x32x8",
                    help="hidden widths, or full widths like 2x16x32x8x1")
    sp.add_argument("--seed", type=int, default=11)
    sp.add_argument("--site", action="store_true",
                    help="also fit per-site models (inputs include theta)")

    sp = add("solve", cmd_solve, help="robust joint allocation")
    sp.add_argument("--models", required=True, help="train output directory")
    sp.add_argument("--delay-margin", dest="delay_margin", type=float, default=1.0)

    sp = add("degrade", cmd_degrade, help="graceful degradation allocation")
    sp.add_argument("--models", required=True)
    sp.add_argument("--strict", help="comma list of strict app ids (default from scenario)")
    sp.add_argument("--degradable", help="comma list of degradable app ids")

    sp = add("distribute", cmd_distribute, help="two-agent primal decomposition")
    sp.add_argument("--models", required=True, help="train --site output directory")
    sp.add_argument("--mode", choices=["fixed-objective", "saddle"],
                    default="fixed-objective")
    sp.add_argument("--eps", type=float, default=1e-4)
    sp.add_argument("--max-iter", dest="max_iter", type=int, default=500)
    sp.add_argument("--alpha0", type=float, default=0.1)

    sp = add("verify", cmd_verify, help="re-simulate a decision with fresh seeds")
    sp.add_argument("--solution", required=True, help="solution.json to verify")
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--seed-base", dest="seed_base", type=int, default=900)
    sp.add_argument("--theta", type=float, help="defaults to theta hi (worst case)")
    sp.add_argument("--baseline", choices=["network-priority", "compute-priority"])
    sp.add_argument("--priority-app", dest="priority_app")
    sp.add_argument("--error-margin", dest="error_margin", type=float, default=0.15)

    sp = sub.add_parser("report", help="summary table from verify runs")
    sp.set_defaults(fn=cmd_report)
    sp.add_argument("--runs", nargs="+", required=True, help="verify output directories")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        sys.stderr.write(f"error: {exc} (run the {exc.stage} stage first)\n")
        return EXIT_MISSING
    except ScenarioError as exc:
        sys.stderr.write(f"scenario error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
