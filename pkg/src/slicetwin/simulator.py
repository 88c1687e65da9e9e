"""Queueing simulation of request flow: client -> sliced link(s) -> sliced CPU.

Two service modes:

* ``sliced`` (default): every class has its own FIFO queue at each edge and at
  the server, served at its fraction of the resource (f * capacity on an edge,
  phi * core speed on a core).  Classes do not interact, which is exactly the
  isolation that slicing provides; the capacity coupling lives in the
  optimizer's sum constraints.
* ``network-priority`` / ``compute-priority``: differentiated-service
  baselines.  The named site pools its full capacity and serves one designated
  class with preemptive-resume priority; the other site is pooled FIFO.

Time is integer nanoseconds end to end, so identical inputs give bit-identical
samples.  Per request, E2E delay = network delay + server delay + the fixed
round-trip propagation, exactly.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .scenario import NS, ScenarioConfig, make_arrival_process
from ._kernels import fifo_stage, multi_server_stage

DEFAULT_HIST_BIN_US = 50

MODES = ("sliced", "network-priority", "compute-priority")


class CapacityError(ValueError):
    """Decision violates box or capacity-sum constraints."""


@dataclass(frozen=True)
class SliceDecision:
    """Per-class resource fractions: flows per edge, CPU share per core."""

    flows: dict            # app_id -> {edge_id: fraction}
    cpu: dict              # app_id -> {core_index: fraction}

    def flow(self, app_id: str, edge_id: str) -> float:
        return self.flows.get(app_id, {}).get(edge_id, 0.0)

    def phi(self, app_id: str, core: int) -> float:
        return self.cpu.get(app_id, {}).get(core, 0.0)

    def violations(self, topology) -> list[str]:
        """Box and capacity-sum violations, with margins; empty when valid."""
        out = []
        for app_id, per_edge in self.flows.items():
            for eid, v in per_edge.items():
                if not 0.0 <= v <= 1.0:
                    margin = v - 1.0 if v > 1.0 else -v
                    out.append(f"flow {app_id}@{eid} = {v:g} outside [0, 1] (margin {margin:g})")
        for app_id, per_core in self.cpu.items():
            for c, v in per_core.items():
                if not 0.0 <= v <= 1.0:
                    margin = v - 1.0 if v > 1.0 else -v
                    out.append(f"cpu {app_id}@core{c} = {v:g} outside [0, 1] (margin {margin:g})")
        for edge in topology.edges:
            s = sum(self.flow(a, edge.id) for a in self.flows)
            if s > 1.0:
                out.append(f"edge {edge.id}: sum of flows = {s:g} exceeds 1 (margin {s - 1.0:g})")
        for c in range(topology.cores):
            s = sum(self.phi(a, c) for a in self.cpu)
            if s > 1.0:
                out.append(f"core {c}: sum of cpu fractions = {s:g} exceeds 1 (margin {s - 1.0:g})")
        return out

    def key(self) -> tuple:
        """Canonical hashable form, used for sweep bookkeeping and resume."""
        fl = tuple(sorted((a, tuple(sorted(d.items()))) for a, d in self.flows.items()))
        cp = tuple(sorted((a, tuple(sorted(d.items()))) for a, d in self.cpu.items()))
        return (fl, cp)


def uniform_decision(config: ScenarioConfig, fractions: dict) -> SliceDecision:
    """Build a decision from per-app scalars: {app_id: (f, phi)}.

    f is applied on every edge, phi on the app's pinned core.
    """
    flows, cpu = {}, {}
    for app in config.apps:
        f, phi = fractions.get(app.id, (0.0, 0.0))
        flows[app.id] = {e.id: float(f) for e in config.topology.edges}
        cpu[app.id] = {app.core: float(phi)}
    return SliceDecision(flows=flows, cpu=cpu)


def equal_share_decision(config: ScenarioConfig) -> SliceDecision:
    """Equal split of each edge among all apps; full share of the pinned core
    split among the apps pinned to it."""
    n = len(config.apps)
    per_core = {}
    for app in config.apps:
        per_core[app.core] = per_core.get(app.core, 0) + 1
    flows, cpu = {}, {}
    for app in config.apps:
        flows[app.id] = {e.id: 1.0 / n for e in config.topology.edges}
        cpu[app.id] = {app.core: 1.0 / per_core[app.core]}
    return SliceDecision(flows=flows, cpu=cpu)


@dataclass
class RequestRecords:
    """Per-request outcome arrays for one class (times in integer ns)."""

    emit_ns: np.ndarray
    bytes: np.ndarray
    net_ns: np.ndarray     # queueing + transmission over all edges; -1 if net-dropped
    srv_ns: np.ndarray     # queueing + processing; -1 unless served
    e2e_ns: np.ndarray     # net + srv + round-trip propagation; -1 unless delivered
    net_ok: np.ndarray
    srv_ok: np.ndarray


@dataclass
class ClassStats:
    """Post-warmup QoE statistics of one class in one run."""

    emitted: int
    net_ok_count: int
    delivered: int
    net_dropped: int
    srv_dropped: int
    net_success: float          # net_ok_count / emitted
    srv_success: float          # delivered / net_ok_count (conditional)
    e2e_success: float          # delivered / emitted
    max_delay: float            # seconds, NaN if nothing delivered
    mean_delay: float
    p50: float
    p95: float
    p99: float
    max_net_delay: float        # over requests that cleared the network
    max_srv_delay: float        # over requests that were served
    over_tau_count: int         # delivered requests with e2e > tau
    frac_over_tau: float        # over_tau_count / delivered
    hist_counts: np.ndarray = field(repr=False, default=None)
    hist_bin_us: int = DEFAULT_HIST_BIN_US
    records: RequestRecords | None = field(repr=False, default=None)


@dataclass
class QoESample:
    """One simulated measurement of a decision under (theta, seed)."""

    decision: SliceDecision
    theta: float
    seed: int
    mode: str
    horizon: float
    warmup: float
    stats: dict  # app_id -> ClassStats


def _stats_for_class(app, emit_ns, sizes, net_ns, srv_ns, net_ok, srv_ok,
                     prop_rt_ns, warmup_ns, hist_bin_us, keep_records):
    e2e_ns = np.where(srv_ok, net_ns + srv_ns + prop_rt_ns, -1).astype(np.int64)
    pw = emit_ns >= warmup_ns
    emitted = int(pw.sum())
    nok = net_ok & pw
    dok = srv_ok & pw
    net_ok_count = int(nok.sum())
    delivered = int(dok.sum())
    net_dropped = emitted - net_ok_count
    srv_dropped = net_ok_count - delivered

    d = e2e_ns[dok] / NS
    if delivered:
        max_delay = float(d.max())
        mean_delay = float(d.mean())
        p50, p95, p99 = (float(x) for x in np.percentile(d, [50, 95, 99]))
        n_over = int((d > app.tau).sum())
        nbins = int(math.ceil(max(d.max() * 1e6, hist_bin_us) / hist_bin_us))
        hist, _ = np.histogram(d * 1e6, bins=nbins, range=(0.0, nbins * hist_bin_us))
    else:
        max_delay = mean_delay = p50 = p95 = p99 = float("nan")
        n_over = 0
        hist = np.zeros(0, dtype=np.int64)

    nn = net_ns[nok] / NS
    ss = srv_ns[dok] / NS
    stats = ClassStats(
        emitted=emitted,
        net_ok_count=net_ok_count,
        delivered=delivered,
        net_dropped=net_dropped,
        srv_dropped=srv_dropped,
        net_success=net_ok_count / emitted if emitted else 1.0,
        srv_success=delivered / net_ok_count if net_ok_count else 1.0,
        e2e_success=delivered / emitted if emitted else 1.0,
        max_delay=max_delay,
        mean_delay=mean_delay,
        p50=p50, p95=p95, p99=p99,
        max_net_delay=float(nn.max()) if len(nn) else float("nan"),
        max_srv_delay=float(ss.max()) if len(ss) else float("nan"),
        over_tau_count=n_over,
        frac_over_tau=n_over / delivered if delivered else 0.0,
        hist_counts=hist.astype(np.int64),
        hist_bin_us=hist_bin_us,
    )
    if keep_records:
        stats.records = RequestRecords(
            emit_ns=emit_ns, bytes=sizes, net_ns=net_ns, srv_ns=srv_ns,
            e2e_ns=e2e_ns, net_ok=net_ok, srv_ok=srv_ok)
    return stats


def _run_sliced_class(config, app, stream, flows, phis):
    """Push one class's stream through its own edge and CPU slices."""
    topo = config.topology
    n = len(stream.times_ns)
    net_ok = np.ones(n, dtype=bool)
    net_ns = np.zeros(n, dtype=np.int64)
    cur_t = stream.times_ns.copy()
    alive = np.arange(n)

    for edge in topo.edges:
        f = flows.get(edge.id, 0.0)
        if len(alive) == 0:
            break
        if f <= 0.0:
            net_ok[alive] = False
            alive = alive[:0]
            break
        rate = f * edge.capacity
        bits = stream.sizes[alive] * 8
        svc = np.ceil(bits * 1e9 / rate).astype(np.int64)
        dep, acc = fifo_stage(cur_t[alive], svc, topo.buffer_len)
        accepted = alive[acc]
        net_ok[alive[~acc]] = False
        net_ns[accepted] += dep[acc] - cur_t[accepted]
        prop_ns = int(round(edge.prop_delay * NS))
        cur_t[accepted] = dep[acc] + prop_ns
        alive = accepted

    srv_ok = np.zeros(n, dtype=bool)
    srv_ns = np.full(n, -1, dtype=np.int64)
    active_cores = sorted(c for c, v in phis.items() if v > 0.0)
    if len(alive) and active_cores:
        svc_by_core = np.array(
            [int(math.ceil(app.work * 1e9 / (phis[c] * topo.core_speed))) for c in active_cores],
            dtype=np.int64)
        dep, acc = multi_server_stage(cur_t[alive], svc_by_core, topo.buffer_len)
        served = alive[acc]
        srv_ok[served] = True
        srv_ns[served] = dep[acc] - cur_t[served]
    net_ns[~net_ok] = -1
    return net_ns, srv_ns, net_ok, srv_ok


# ---------------------------------------------------------------------------
# pooled priority queues (differentiated-service baselines)
# ---------------------------------------------------------------------------

_ARRIVE, _DONE = 0, 1


class _PrioritySite:
    """Channels shared by every class, with head-of-line priority for one.

    Multi-channel sites bind arrivals round-robin, the way an unmanaged
    dispatcher spreads requests over replicas.  With ``preemptive`` (CPU-style
    scheduling) a running other-class request is paused for the prioritized
    one and resumes with its remaining service time; without it, in-service
    requests always finish, since no router aborts a frame mid-flight.
    Per-class buffer limits apply site-wide.
    """

    def __init__(self, channels, buffer_len, n_classes, prio_cls, preemptive):
        self.buffer_len = buffer_len
        self.prio_cls = prio_cls
        self.preemptive = preemptive
        self.n_channels = channels
        self.running = [None] * channels          # (cls, idx, token)
        self.high = [deque() for _ in range(channels)]
        self.low = [deque() for _ in range(channels)]
        self.in_count = [0] * n_classes
        self.rem = {}                              # (cls, idx) -> remaining ns
        self.end_at = {}                           # (cls, idx) -> scheduled end while running
        self.token = {}                            # (cls, idx) -> generation
        self.rr = 0

    def queue_of(self, cls, ch):
        return self.high[ch] if cls == self.prio_cls else self.low[ch]


def _run_priority_stage(arrivals, svc_fns, channels, buffer_len, prio_cls, preemptive):
    """Shared priority queue stage over per-class sorted arrival times.

    arrivals: list of int64 arrays (one per class); svc_fns[cls](idx) gives
    the request's full-speed service time.  Returns per-class (exit time or
    -1, accepted) arrays; per-class exit order stays FIFO.
    """
    n_cls = len(arrivals)
    site = _PrioritySite(channels, buffer_len, n_cls, prio_cls, preemptive)
    out_t = [np.full(len(a), -1, dtype=np.int64) for a in arrivals]
    ok = [np.zeros(len(a), dtype=bool) for a in arrivals]
    site_arr = {}

    events = []
    seq = 0
    for cls, arr in enumerate(arrivals):
        for i, t in enumerate(arr):
            events.append((int(t), seq, _ARRIVE, cls, i, 0))
            seq += 1
    heapq.heapify(events)

    def start(ch, cls, idx, t):
        nonlocal seq
        tok = site.token[(cls, idx)]
        site.running[ch] = (cls, idx, tok)
        site.end_at[(cls, idx)] = t + site.rem[(cls, idx)]
        heapq.heappush(events, (site.end_at[(cls, idx)], seq, _DONE, cls, idx, tok))
        seq += 1

    while events:
        t, _, kind, cls, idx, tok = heapq.heappop(events)
        job = (cls, idx)
        if kind == _ARRIVE:
            if site.in_count[cls] >= site.buffer_len:
                continue
            site.in_count[cls] += 1
            site_arr[job] = t
            site.rem[job] = svc_fns[cls](idx)
            site.token[job] = site.token.get(job, 0) + 1
            ch = site.rr
            site.rr = (site.rr + 1) % site.n_channels
            if site.running[ch] is None:
                start(ch, cls, idx, t)
            elif site.preemptive and cls == site.prio_cls \
                    and site.running[ch][0] != site.prio_cls:
                vcls, vidx, _ = site.running[ch]
                site.token[(vcls, vidx)] += 1      # invalidate its completion
                site.rem[(vcls, vidx)] = site.end_at[(vcls, vidx)] - t
                site.low[ch].appendleft((vcls, vidx))
                start(ch, cls, idx, t)
            else:
                site.queue_of(cls, ch).append(job)
        else:
            if site.token.get(job) != tok:
                continue  # stale completion: the request was preempted
            ch = next(c for c, r in enumerate(site.running)
                      if r is not None and r[0] == cls and r[1] == idx)
            site.in_count[cls] -= 1
            out_t[cls][idx] = t
            ok[cls][idx] = True
            q = site.high[ch] if site.high[ch] else site.low[ch]
            if q:
                ncls, nidx = q.popleft()
                start(ch, ncls, nidx, t)
            else:
                site.running[ch] = None
    return out_t, ok


def _baseline_run(config, streams, mode, priority_app):
    """Differentiated-service baselines: priority scheduling at one site,
    uninformed equal static slicing at the other.

    network-priority: the link serves the prioritized class head-of-line at
    full capacity; every class gets an equal share of every core.
    compute-priority: every class gets an equal share of each edge; the
    prioritized class preempts on the (round-robin bound) cores.
    """
    topo = config.topology
    n_cls = len(config.apps)
    prio_cls = next(i for i, a in enumerate(config.apps) if a.id == priority_app)
    equal_f = 1.0 / n_cls
    counts = [len(s.times_ns) for s in streams]
    net_ns = [np.zeros(n, dtype=np.int64) for n in counts]
    net_ok = [np.ones(n, dtype=bool) for n in counts]
    srv_ns = [np.full(n, -1, dtype=np.int64) for n in counts]
    srv_ok = [np.zeros(n, dtype=bool) for n in counts]

    if mode == "network-priority":
        # full-capacity priority link(s), then an equal share of every core
        alive = [np.arange(n) for n in counts]
        cur = [s.times_ns.copy() for s in streams]
        for edge in topo.edges:
            svc_fns = [
                (lambda sizes, cap, al: (lambda i: int(math.ceil(
                    sizes[al[i]] * 8 * 1e9 / cap))))(streams[c].sizes, edge.capacity, alive[c])
                for c in range(n_cls)]
            out_t, ok = _run_priority_stage(cur, svc_fns, 1, topo.buffer_len,
                                            prio_cls, preemptive=False)
            prop = int(round(edge.prop_delay * NS))
            for c in range(n_cls):
                acc = ok[c]
                net_ok[c][alive[c][~acc]] = False
                kept = alive[c][acc]
                net_ns[c][kept] += out_t[c][acc] - cur[c][acc]
                cur[c] = out_t[c][acc] + prop
                alive[c] = kept
        for c, app in enumerate(config.apps):
            if len(alive[c]):
                svc = int(math.ceil(app.work * 1e9 / (equal_f * topo.core_speed)))
                svc_by_core = np.full(topo.cores, svc, dtype=np.int64)
                dep, acc = multi_server_stage(cur[c], svc_by_core, topo.buffer_len)
                served = alive[c][acc]
                srv_ok[c][served] = True
                srv_ns[c][served] = dep[acc] - cur[c][acc]
    else:
        # compute-priority: equal static link slices, priority CPU scheduling
        prop_total = sum(int(round(e.prop_delay * NS)) for e in topo.edges)
        arrivals, alive = [], []
        for c, (app, stream) in enumerate(zip(config.apps, streams)):
            flows = {e.id: equal_f for e in topo.edges}
            nns, _, nok, _ = _run_sliced_class(config, app, stream, flows, {})
            net_ns[c] = nns
            net_ok[c] = nok
            idx = np.flatnonzero(nok)
            alive.append(idx)
            arrivals.append(stream.times_ns[idx] + nns[idx] + prop_total)
        svc_fns = [
            (lambda work: (lambda i: int(math.ceil(work * 1e9 / topo.core_speed))))(app.work)
            for app in config.apps]
        out_t, ok = _run_priority_stage(arrivals, svc_fns, topo.cores, topo.buffer_len,
                                        prio_cls, preemptive=True)
        for c in range(n_cls):
            served = alive[c][ok[c]]
            srv_ok[c][served] = True
            srv_ns[c][served] = out_t[c][ok[c]] - arrivals[c][ok[c]]

    results = {}
    for c, app in enumerate(config.apps):
        net_ns[c][~net_ok[c]] = -1
        results[app.id] = (net_ns[c], srv_ns[c], net_ok[c], srv_ok[c])
    return results


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def run_sim(config: ScenarioConfig, decision: SliceDecision, theta: float, seed: int,
            mode: str = "sliced", priority_app: str | None = None,
            hist_bin_us: int = DEFAULT_HIST_BIN_US, keep_records: bool = False) -> QoESample:
    """Simulate one (decision, theta, seed) cell and return its QoESample.

    Deterministic given its inputs.  Warmup-period requests are simulated but
    excluded from statistics.  In the baseline modes the decision's fractions
    are ignored (resources are pooled) but the argument is kept for uniform
    bookkeeping.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not config.theta.lo <= theta <= config.theta.hi:
        raise ValueError(f"theta {theta:g} outside configured range "
                         f"[{config.theta.lo:g}, {config.theta.hi:g}]")
    if mode == "sliced":
        bad = decision.violations(config.topology)
        if bad:
            raise CapacityError("; ".join(bad))
    if mode != "sliced":
        if priority_app is None:
            # the baseline protects the class that dominates the prioritized
            # resource: most offered bits/s on the link, most MI/s on the CPU
            if mode == "network-priority":
                priority_app = max(config.apps,
                                   key=lambda a: a.pkt_rate * a.pkt_size_dist.mean()).id
            else:
                priority_app = max(config.apps, key=lambda a: a.pkt_rate * a.work).id
        if priority_app not in config.app_ids:
            raise ValueError(f"unknown priority app {priority_app!r}")

    warmup_ns = int(round(config.warmup * NS))
    prop_rt_ns = 2 * sum(int(round(e.prop_delay * NS)) for e in config.topology.edges)
    streams = [make_arrival_process(app, config.users, theta, seed, config.sim_horizon)
               for app in config.apps]

    stats = {}
    if mode == "sliced":
        for app, stream in zip(config.apps, streams):
            net_ns, srv_ns, net_ok, srv_ok = _run_sliced_class(
                config, app, stream,
                decision.flows.get(app.id, {}), decision.cpu.get(app.id, {}))
            stats[app.id] = _stats_for_class(
                app, stream.times_ns, stream.sizes, net_ns, srv_ns, net_ok, srv_ok,
                prop_rt_ns, warmup_ns, hist_bin_us, keep_records)
    else:
        results = _baseline_run(config, streams, mode, priority_app)
        for app, stream in zip(config.apps, streams):
            net_ns, srv_ns, net_ok, srv_ok = results[app.id]
            stats[app.id] = _stats_for_class(
                app, stream.times_ns, stream.sizes, net_ns, srv_ns,
                net_ok, srv_ok, prop_rt_ns, warmup_ns, hist_bin_us, keep_records)

    return QoESample(decision=decision, theta=theta, seed=seed, mode=mode,
                     horizon=config.sim_horizon, warmup=config.warmup, stats=stats)
