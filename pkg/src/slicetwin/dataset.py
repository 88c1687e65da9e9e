"""Sweep execution, CSV persistence and worst-case aggregation.

The dataset CSV holds one row per (class, decision, theta, seed) with the
class's own decision entries, delay statistics and per-site success fractions.
Histograms go to a sidecar CSV (bin lower edges in microseconds + counts).
Sweeps persist incrementally and are resumable: cells already present in the
CSV are not re-simulated.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .scenario import ScenarioConfig
from .simulator import (ClassStats, QoESample, SliceDecision, run_sim,
                        uniform_decision, DEFAULT_HIST_BIN_US)

_STAT_COLS = [
    "emitted", "net_ok", "delivered", "net_dropped", "srv_dropped",
    "net_success", "srv_success", "e2e_success",
    "max_delay_s", "mean_delay_s", "p50_s", "p95_s", "p99_s",
    "max_net_s", "max_srv_s", "over_tau", "frac_over_tau",
]


def cell_id(decision: SliceDecision, theta: float, seed: int) -> str:
    text = repr((decision.key(), float(theta), int(seed)))
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def _decision_columns(config: ScenarioConfig):
    cols = [f"f_{e.id}" for e in config.topology.edges]
    cols += [f"phi_{c}" for c in range(config.topology.cores)]
    return cols


def _decision_values(config, decision, app_id):
    vals = [decision.flow(app_id, e.id) for e in config.topology.edges]
    vals += [decision.phi(app_id, c) for c in range(config.topology.cores)]
    return vals


class SweepError(RuntimeError):
    pass


@dataclass
class SweepResult:
    """Samples in deterministic grid order plus any failed cells."""

    samples: list = field(default_factory=list)
    failed: list = field(default_factory=list)   # (cell_id, theta, seed, message)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


def make_isolation_grid(config: ScenarioConfig, f_values, phi_values) -> list[SliceDecision]:
    """Per-class probe decisions covering the (f, phi) box.

    Classes are isolated by their slices, so each class's QoE surface is a
    function of its own fractions only; probing one class at a time keeps
    every grid decision capacity-feasible.
    """
    grid = []
    for app in config.apps:
        for f in f_values:
            for phi in phi_values:
                fractions = {a.id: (0.0, 0.0) for a in config.apps}
                fractions[app.id] = (float(f), float(phi))
                grid.append(uniform_decision(config, fractions))
    return grid


def _write_row(writer, config, cid, theta, seed, app_id, st: ClassStats, decision):
    row = {
        "cell": cid, "app": app_id, "theta": repr(float(theta)), "seed": seed,
        "status": "ok",
    }
    for col, val in zip(_decision_columns(config), _decision_values(config, decision, app_id)):
        row[col] = repr(float(val))
    row.update({
        "emitted": st.emitted, "net_ok": st.net_ok_count, "delivered": st.delivered,
        "net_dropped": st.net_dropped, "srv_dropped": st.srv_dropped,
        "net_success": repr(st.net_success), "srv_success": repr(st.srv_success),
        "e2e_success": repr(st.e2e_success),
        "max_delay_s": repr(st.max_delay), "mean_delay_s": repr(st.mean_delay),
        "p50_s": repr(st.p50), "p95_s": repr(st.p95), "p99_s": repr(st.p99),
        "max_net_s": repr(st.max_net_delay), "max_srv_s": repr(st.max_srv_delay),
        "over_tau": st.over_tau_count, "frac_over_tau": repr(st.frac_over_tau),
    })
    writer.writerow(row)


def _header(config):
    return ["cell", "app", "theta", "seed", "status"] + _decision_columns(config) + _STAT_COLS


def _load_existing(path, config):
    """Map cell id -> list of row dicts already persisted."""
    cells = {}
    if path is None or not os.path.exists(path):
        return cells
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cells.setdefault(row["cell"], []).append(row)
    return cells


def _load_hist(path):
    hists = {}
    if path is None or not os.path.exists(path):
        return hists
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["cell"], row["app"])
            hists.setdefault(key, []).append((int(row["bin_lo_us"]), int(row["count"])))
    return hists


def _sample_from_rows(config, decision, theta, seed, rows, hists, cid, hist_bin_us):
    stats = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        pairs = sorted(hists.get((cid, row["app"]), []))
        if pairs:
            nbins = pairs[-1][0] // hist_bin_us + 1
            hist = np.zeros(nbins, dtype=np.int64)
            for lo, cnt in pairs:
                hist[lo // hist_bin_us] = cnt
        else:
            hist = np.zeros(0, dtype=np.int64)
        stats[row["app"]] = ClassStats(
            emitted=int(row["emitted"]), net_ok_count=int(row["net_ok"]),
            delivered=int(row["delivered"]), net_dropped=int(row["net_dropped"]),
            srv_dropped=int(row["srv_dropped"]), net_success=float(row["net_success"]),
            srv_success=float(row["srv_success"]), e2e_success=float(row["e2e_success"]),
            max_delay=float(row["max_delay_s"]), mean_delay=float(row["mean_delay_s"]),
            p50=float(row["p50_s"]), p95=float(row["p95_s"]), p99=float(row["p99_s"]),
            max_net_delay=float(row["max_net_s"]), max_srv_delay=float(row["max_srv_s"]),
            over_tau_count=int(row["over_tau"]), frac_over_tau=float(row["frac_over_tau"]),
            hist_counts=hist, hist_bin_us=hist_bin_us)
    return QoESample(decision=decision, theta=theta, seed=seed, mode="sliced",
                     horizon=config.sim_horizon, warmup=config.warmup, stats=stats)


def sweep_grid(config: ScenarioConfig, grid, thetas, seeds, path=None,
               hist_bin_us: int = DEFAULT_HIST_BIN_US, mode: str = "sliced") -> SweepResult:
    """Simulate |grid| x |thetas| x |seeds| cells in deterministic order.

    With ``path`` set, results stream to <path> and <path minus .csv>_hist.csv
    as they complete; cells already present there are loaded, not re-run.
    run_sim failures are recorded per cell and do not abort the sweep.
    """
    for d in grid:
        bad = d.violations(config.topology)
        if bad:
            raise SweepError("invalid grid decision: " + "; ".join(bad))

    hist_path = None
    if path is not None:
        base, _ = os.path.splitext(str(path))
        hist_path = base + "_hist.csv"
    existing = _load_existing(path, config)
    hists = _load_hist(hist_path)

    out = SweepResult()
    writer = hist_writer = fh = hfh = None
    if path is not None:
        new_file = not os.path.exists(path)
        fh = open(path, "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=_header(config))
        hfh = open(hist_path, "a", newline="")
        hist_writer = csv.DictWriter(hfh, fieldnames=["cell", "app", "bin_lo_us", "count"])
        if new_file:
            writer.writeheader()
            hist_writer.writeheader()

    try:
        for decision in grid:
            for theta in thetas:
                for seed in seeds:
                    cid = cell_id(decision, theta, seed)
                    if cid in existing:
                        rows = existing[cid]
                        if all(r["status"] == "ok" for r in rows):
                            out.samples.append(_sample_from_rows(
                                config, decision, theta, seed, rows, hists, cid, hist_bin_us))
                        else:
                            msg = next(r["status"] for r in rows if r["status"] != "ok")
                            out.failed.append((cid, theta, seed, msg))
                        continue
                    try:
                        sample = run_sim(config, decision, theta, seed,
                                         hist_bin_us=hist_bin_us, mode=mode)
                    except Exception as exc:  # record, keep sweeping
                        out.failed.append((cid, theta, seed, str(exc)))
                        if writer is not None:
                            writer.writerow({"cell": cid, "app": "*", "theta": repr(float(theta)),
                                             "seed": seed, "status": f"failed: {exc}"})
                            fh.flush()
                        continue
                    out.samples.append(sample)
                    if writer is not None:
                        for app_id, st in sample.stats.items():
                            _write_row(writer, config, cid, theta, seed, app_id, st, decision)
                            for b, cnt in enumerate(st.hist_counts):
                                if cnt:
                                    hist_writer.writerow({
                                        "cell": cid, "app": app_id,
                                        "bin_lo_us": b * hist_bin_us, "count": int(cnt)})
                        fh.flush()
                        hfh.flush()
    finally:
        if fh is not None:
            fh.close()
            hfh.close()
    return out


def load_dataset(path, config: ScenarioConfig,
                 hist_bin_us: int = DEFAULT_HIST_BIN_US) -> SweepResult:
    """Rebuild a SweepResult from a persisted dataset CSV (plus sidecar)."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    base, _ = os.path.splitext(str(path))
    existing = _load_existing(path, config)
    hists = _load_hist(base + "_hist.csv")
    out = SweepResult()
    for cid, rows in existing.items():
        bad = [r for r in rows if r["status"] != "ok"]
        theta = float(rows[0]["theta"])
        seed = int(rows[0]["seed"])
        if bad:
            out.failed.append((cid, theta, seed, bad[0]["status"]))
            continue
        flows, cpu = {}, {}
        for r in rows:
            flows[r["app"]] = {e.id: float(r[f"f_{e.id}"]) for e in config.topology.edges}
            cpu[r["app"]] = {c: float(r[f"phi_{c}"]) for c in range(config.topology.cores)}
        decision = SliceDecision(flows=flows, cpu=cpu)
        out.samples.append(_sample_from_rows(config, decision, theta, seed, rows,
                                             hists, cid, hist_bin_us))
    return out


# ---------------------------------------------------------------------------
# worst-case aggregation
# ---------------------------------------------------------------------------

@dataclass
class FitTable:
    """Input matrix and target vector for one surrogate fit."""

    columns: list
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass
class ClassAggregate:
    """Worst-case training tables of one class.

    ``delay``/``throughput`` fold everything (all theta, all seeds) into one
    worst case per decision, for the centralized robust problem.  The site_*
    tables keep theta as an input and fold only the seeds, because max/min do
    not commute with the per-site decomposition.
    """

    delay: FitTable
    throughput: FitTable
    site_net_delay: FitTable
    site_net_throughput: FitTable
    site_srv_delay: FitTable
    site_srv_throughput: FitTable


def _own_columns(config, app, samples):
    """Decision-entry columns this app actually uses (positive somewhere)."""
    edges = [e.id for e in config.topology.edges]
    cores = sorted({c for s in samples
                    for c, v in s.decision.cpu.get(app.id, {}).items() if v > 0})
    return edges, cores


def _nanmax(vals):
    vals = [v for v in vals if not math.isnan(v)]
    return max(vals) if vals else float("nan")


def aggregate_worst_case(dataset, config: ScenarioConfig) -> dict:
    """Fold a sweep into per-class worst-case training tables.

    Centralized tables: per distinct decision, max delay and min success over
    all (theta, seed).  Site tables: per (decision, theta), max site delays
    and min site success over seeds.  Rows where a class had no positive
    allocation are probe filler and are skipped.  Delay targets are NaN when
    nothing was delivered; surrogate fitting drops those rows.
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("empty dataset: nothing to aggregate")

    result = {}
    for app in config.apps:
        edges, cores = _own_columns(config, app, samples)
        rows = []
        for s in samples:
            st = s.stats.get(app.id)
            if st is None:
                continue
            fvals = [s.decision.flow(app.id, e) for e in edges]
            pvals = [s.decision.phi(app.id, c) for c in cores]
            if not fvals or min(fvals) <= 0 or not pvals or sum(pvals) <= 0:
                continue  # class parked in this probe
            rows.append((tuple(fvals + pvals), s.theta, s.seed, st))
        if not rows:
            continue

        cols = [f"f_{e}" for e in edges] + [f"phi_{c}" for c in cores]

        by_dec = {}
        for x, theta, seed, st in rows:
            by_dec.setdefault(x, []).append(st)
        X, yd, yt = [], [], []
        for x in sorted(by_dec):
            sts = by_dec[x]
            X.append(x)
            yd.append(_nanmax([st.max_delay for st in sts]))
            yt.append(min(st.e2e_success for st in sts))
        X = np.array(X, dtype=float)
        delay = FitTable(cols, X, np.array(yd))
        thru = FitTable(cols, X, np.array(yt))

        by_dec_theta = {}
        for x, theta, seed, st in rows:
            by_dec_theta.setdefault((x, theta), []).append(st)
        nf = len(edges)
        Xn, Xs, ynd, ynt, ysd, yst = [], [], [], [], [], []
        for (x, theta) in sorted(by_dec_theta):
            sts = by_dec_theta[(x, theta)]
            Xn.append(list(x[:nf]) + [theta])
            Xs.append(list(x[nf:]) + [theta])
            ynd.append(_nanmax([st.max_net_delay for st in sts]))
            ynt.append(min(st.net_success for st in sts))
            ysd.append(_nanmax([st.max_srv_delay for st in sts]))
            yst.append(min(st.srv_success for st in sts))
        ncols = [f"f_{e}" for e in edges] + ["theta"]
        scols = [f"phi_{c}" for c in cores] + ["theta"]
        result[app.id] = ClassAggregate(
            delay=delay, throughput=thru,
            site_net_delay=FitTable(ncols, np.array(Xn, dtype=float), np.array(ynd)),
            site_net_throughput=FitTable(ncols, np.array(Xn, dtype=float), np.array(ynt)),
            site_srv_delay=FitTable(scols, np.array(Xs, dtype=float), np.array(ysd)),
            site_srv_throughput=FitTable(scols, np.array(Xs, dtype=float), np.array(yst)),
        )
    if not result:
        raise ValueError("dataset has no usable rows (all classes parked)")
    return result
