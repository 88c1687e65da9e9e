"""Scenario definition: topology, application classes, traffic and experiment config.

A scenario is a flat INI-style text file with sections [topology], [app.<id>],
[theta] and [sim].  All units are fixed: seconds, bits/s, MI (million
instructions), MIPS, bytes.  See README for the full grammar.

Traffic per (app, user) is an on/off source: ON and OFF durations are Pareto
distributed (truncated to keep empirical rates stable), packets are emitted at
a fixed peak rate during ON periods.  The OFF-period mean is calibrated
analytically so the long-run rate equals users * pkt_rate * theta.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from configparser import ConfigParser, Error as ConfigParserError

import numpy as np

NS = 1_000_000_000  # integer nanoseconds per second

# traffic-shape defaults, overridable per app in the scenario file
DEFAULT_PARETO_SHAPE = 1.4
DEFAULT_BURST_ON_MEAN = 4e-3     # mean ON duration, seconds
DEFAULT_BURST_PEAK_MULT = 2.0    # in-burst rate = peak_mult * pkt_rate
DEFAULT_BURST_CAP_MULT = 8.0     # durations truncated at cap_mult * mean


class ScenarioError(ValueError):
    """Raised for unparseable scenario files or invariant violations."""


@dataclass(frozen=True)
class PacketSizeDist:
    """Packet size distribution over bytes: uniform integer range or fixed."""

    kind: str          # "uniform" | "fixed"
    lo: int
    hi: int

    def __post_init__(self):
        if self.kind not in ("uniform", "fixed"):
            raise ScenarioError(f"pkt_size: unknown kind {self.kind!r}")
        if self.lo < 20:
            raise ScenarioError(f"pkt_size: minimum packet size is 20 bytes, got {self.lo}")
        if self.hi < self.lo:
            raise ScenarioError(f"pkt_size: hi < lo ({self.hi} < {self.lo})")

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @staticmethod
    def parse(text: str) -> "PacketSizeDist":
        parts = text.split(":")
        if parts[0] == "uniform" and len(parts) == 3:
            return PacketSizeDist("uniform", int(float(parts[1])), int(float(parts[2])))
        if parts[0] == "fixed" and len(parts) == 2:
            n = int(float(parts[1]))
            return PacketSizeDist("fixed", n, n)
        raise ScenarioError(f"pkt_size: expected 'uniform:<lo>:<hi>' or 'fixed:<n>', got {text!r}")


@dataclass(frozen=True)
class AppClass:
    """One slice / application class and its QoE requirements."""

    id: str
    tau: float                  # E2E delay bound, seconds
    rho: float                  # required E2E success fraction, (0, 1]
    work: float                 # processing demand per request, MI
    pkt_rate: float             # requests per second per user
    pkt_size_dist: PacketSizeDist = PacketSizeDist("uniform", 20, 65535)
    priority: str = "strict"    # "strict" | "degradable"
    core: int = 0               # server core this class is pinned to
    pareto_shape: float = DEFAULT_PARETO_SHAPE
    burst_on_mean: float = DEFAULT_BURST_ON_MEAN
    burst_peak_mult: float = DEFAULT_BURST_PEAK_MULT
    burst_cap_mult: float = DEFAULT_BURST_CAP_MULT

    def __post_init__(self):
        if not self.id:
            raise ScenarioError("app: id must be non-empty")
        if not self.tau > 0:
            raise ScenarioError(f"app {self.id}: tau must be > 0, got {self.tau}")
        if not 0 < self.rho <= 1:
            raise ScenarioError(f"app {self.id}: rho must be in (0, 1], got {self.rho}")
        if not self.work > 0:
            raise ScenarioError(f"app {self.id}: work must be > 0, got {self.work}")
        if not self.pkt_rate > 0:
            raise ScenarioError(f"app {self.id}: pkt_rate must be > 0, got {self.pkt_rate}")
        if self.priority not in ("strict", "degradable"):
            raise ScenarioError(f"app {self.id}: priority must be strict|degradable, got {self.priority!r}")
        if not self.pareto_shape > 1:
            raise ScenarioError(f"app {self.id}: pareto_shape must be > 1, got {self.pareto_shape}")
        if not self.burst_on_mean > 0:
            raise ScenarioError(f"app {self.id}: burst_on_mean must be > 0")
        if not self.burst_peak_mult > 1:
            raise ScenarioError(f"app {self.id}: burst_peak_mult must be > 1")
        if not self.burst_cap_mult > 1:
            raise ScenarioError(f"app {self.id}: burst_cap_mult must be > 1")


@dataclass(frozen=True)
class Edge:
    id: str
    capacity: float     # bits/s
    prop_delay: float   # seconds, one way

    def __post_init__(self):
        if not self.capacity > 0:
            raise ScenarioError(f"edge {self.id}: capacity must be > 0")
        if not self.prop_delay >= 0:
            raise ScenarioError(f"edge {self.id}: prop_delay must be >= 0")


@dataclass(frozen=True)
class Topology:
    """Chain of edges from clients to the server plus the server's cores.

    ``sites`` maps edge id to the number of clients attached there; by default
    all configured users sit behind the first edge.
    """

    edges: tuple[Edge, ...]
    cores: int
    core_speed: float           # MIPS per core
    buffer_len: int = 100       # per-class queue capacity, packets/requests
    sites: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.edges:
            raise ScenarioError("topology: at least one edge required")
        if self.cores < 1:
            raise ScenarioError(f"topology: cores must be >= 1, got {self.cores}")
        if not self.core_speed > 0:
            raise ScenarioError("topology: core_speed must be > 0")
        if self.buffer_len < 1:
            raise ScenarioError(f"topology: buffer_len must be >= 1, got {self.buffer_len}")
        ids = [e.id for e in self.edges]
        if len(set(ids)) != len(ids):
            raise ScenarioError("topology: duplicate edge ids")
        for eid in self.sites:
            if eid not in ids:
                raise ScenarioError(f"topology: sites references unknown edge {eid!r}")

    @property
    def edge_ids(self) -> list[str]:
        return [e.id for e in self.edges]

    @property
    def total_prop_delay(self) -> float:
        return sum(e.prop_delay for e in self.edges)


@dataclass(frozen=True)
class ThetaSpec:
    """Stochastic environment parameter: an arrival-rate multiplier."""

    lo: float
    hi: float
    seeds: tuple[int, ...]
    kind: str = "arrival-rate"

    def __post_init__(self):
        if self.kind != "arrival-rate":
            raise ScenarioError(f"theta: unsupported kind {self.kind!r}")
        if not 0 < self.lo <= self.hi:
            raise ScenarioError(f"theta: need 0 < lo <= hi, got lo={self.lo}, hi={self.hi}")
        if len(self.seeds) == 0:
            raise ScenarioError("theta: no Monte-Carlo seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ScenarioError("theta: seeds must be distinct")

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class ScenarioConfig:
    topology: Topology
    apps: tuple[AppClass, ...]
    theta: ThetaSpec
    users: int
    sim_horizon: float  # seconds
    warmup: float       # seconds

    def __post_init__(self):
        if not self.apps:
            raise ScenarioError("scenario: at least one app required")
        ids = [a.id for a in self.apps]
        if len(set(ids)) != len(ids):
            raise ScenarioError("scenario: duplicate app ids")
        if self.users < 1:
            raise ScenarioError(f"scenario: users must be >= 1, got {self.users}")
        if not self.sim_horizon > 0:
            raise ScenarioError("scenario: sim_horizon must be > 0")
        if not 0 <= self.warmup < self.sim_horizon:
            raise ScenarioError(
                f"scenario: need 0 <= warmup < sim_horizon, got warmup={self.warmup}, horizon={self.sim_horizon}")
        for a in self.apps:
            if not 0 <= a.core < self.topology.cores:
                raise ScenarioError(f"app {a.id}: core {a.core} out of range (cores={self.topology.cores})")

    def app(self, app_id: str) -> AppClass:
        for a in self.apps:
            if a.id == app_id:
                return a
        raise KeyError(app_id)

    @property
    def app_ids(self) -> list[str]:
        return [a.id for a in self.apps]


# ---------------------------------------------------------------------------
# scenario file parsing
# ---------------------------------------------------------------------------

def _get(section, key, cast, *, sec_name, default=None):
    if key not in section:
        if default is not None:
            return default
        raise ScenarioError(f"[{sec_name}] missing required key {key!r}")
    raw = section[key]
    try:
        return cast(raw)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"[{sec_name}] {key} = {raw!r}: {exc}") from exc


def _parse_edges(text: str) -> tuple[Edge, ...]:
    edges = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise ScenarioError(f"edges: expected '<id>:<capacity_bps>:<prop_s>', got {item.strip()!r}")
        edges.append(Edge(parts[0], float(parts[1]), float(parts[2])))
    return tuple(edges)


def _parse_sites(text: str) -> dict[str, int]:
    sites = {}
    for item in text.split(","):
        eid, _, count = item.strip().partition(":")
        sites[eid] = int(count)
    return sites


def _parse_seeds(text: str) -> tuple[int, ...]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    return tuple(int(s) for s in items)


def parse_scenario(text: str, origin: str = "<string>") -> ScenarioConfig:
    """Parse scenario text; raises ScenarioError with line/field context."""
    cp = ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=origin)
    except ConfigParserError as exc:
        raise ScenarioError(f"{origin}: parse error: {exc}") from exc

    if "topology" not in cp:
        raise ScenarioError(f"{origin}: missing [topology] section")
    topo_sec = cp["topology"]
    topology = Topology(
        edges=_get(topo_sec, "edges", _parse_edges, sec_name="topology"),
        cores=_get(topo_sec, "cores", int, sec_name="topology"),
        core_speed=_get(topo_sec, "core_speed", float, sec_name="topology"),
        buffer_len=_get(topo_sec, "buffer_len", int, sec_name="topology", default=100),
        sites=_get(topo_sec, "sites", _parse_sites, sec_name="topology", default={}),
    )

    apps = []
    app_sections = [s for s in cp.sections() if s.startswith("app.")]
    for idx, sec_name in enumerate(app_sections):
        sec = cp[sec_name]
        app_id = sec_name[len("app."):]
        apps.append(AppClass(
            id=app_id,
            tau=_get(sec, "tau", float, sec_name=sec_name),
            rho=_get(sec, "rho", float, sec_name=sec_name),
            work=_get(sec, "work", float, sec_name=sec_name),
            pkt_rate=_get(sec, "pkt_rate", float, sec_name=sec_name),
            pkt_size_dist=_get(sec, "pkt_size", PacketSizeDist.parse, sec_name=sec_name,
                               default=PacketSizeDist("uniform", 20, 65535)),
            priority=_get(sec, "priority", str, sec_name=sec_name, default="strict"),
            core=_get(sec, "core", int, sec_name=sec_name,
                      default=idx % max(topology.cores, 1)),
            pareto_shape=_get(sec, "pareto_shape", float, sec_name=sec_name,
                              default=DEFAULT_PARETO_SHAPE),
            burst_on_mean=_get(sec, "burst_on_mean", float, sec_name=sec_name,
                               default=DEFAULT_BURST_ON_MEAN),
            burst_peak_mult=_get(sec, "burst_peak_mult", float, sec_name=sec_name,
                                 default=DEFAULT_BURST_PEAK_MULT),
            burst_cap_mult=_get(sec, "burst_cap_mult", float, sec_name=sec_name,
                                default=DEFAULT_BURST_CAP_MULT),
        ))

    if "theta" not in cp:
        raise ScenarioError(f"{origin}: missing [theta] section")
    th = cp["theta"]
    theta = ThetaSpec(
        lo=_get(th, "lo", float, sec_name="theta"),
        hi=_get(th, "hi", float, sec_name="theta"),
        seeds=_get(th, "seeds", _parse_seeds, sec_name="theta"),
        kind=_get(th, "kind", str, sec_name="theta", default="arrival-rate"),
    )

    if "sim" not in cp:
        raise ScenarioError(f"{origin}: missing [sim] section")
    sim = cp["sim"]
    return ScenarioConfig(
        topology=topology,
        apps=tuple(apps),
        theta=theta,
        users=_get(sim, "users", int, sec_name="sim"),
        sim_horizon=_get(sim, "horizon", float, sec_name="sim"),
        warmup=_get(sim, "warmup", float, sec_name="sim", default=0.0),
    )


def load_scenario(path) -> ScenarioConfig:
    """Load and validate a scenario file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_scenario(text, origin=str(path))


# ---------------------------------------------------------------------------
# arrival process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrivalStream:
    """Aggregate request stream of one app class: sorted emit times and sizes."""

    times_ns: np.ndarray   # int64, sorted, within [0, horizon)
    sizes: np.ndarray      # int64 bytes, aligned with times_ns
    horizon: float         # seconds

    def __len__(self):
        return len(self.times_ns)

    def empirical_rate(self) -> float:
        return len(self.times_ns) / self.horizon


def _truncated_pareto_scale(mean: float, shape: float, cap: float) -> float:
    """Scale s so that E[min(Pareto(shape, s), cap)] == mean.

    E[min(X, c)] = s + s/(shape-1) * (1 - (s/c)^(shape-1)) is increasing in s,
    so bisection on s in [mean*(shape-1)/shape, mean] converges.
    """
    a = shape

    def trunc_mean(s):
        return s + s / (a - 1.0) * (1.0 - (s / cap) ** (a - 1.0))

    lo, hi = mean * (a - 1.0) / a, mean
    if trunc_mean(hi) < mean:  # cap below target mean is unsatisfiable
        raise ScenarioError(f"burst cap {cap:g}s too small for mean {mean:g}s")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if trunc_mean(mid) < mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _expected_pkts_per_on(s_on: float, shape: float, cap: float, gap: float) -> float:
    """E[ceil(T_on / gap)] for T_on ~ truncated Pareto: sum of survival at k*gap."""
    total, k = 0.0, 0
    while True:
        t = k * gap
        if t >= cap:
            break
        surv = 1.0 if t <= s_on else (s_on / t) ** shape
        total += surv
        k += 1
        if k > 10_000_000:  # defensive; cap/gap bounds the loop in practice
            break
    return total


def _sample_truncated_pareto(rng, n, shape, scale, cap):
    u = rng.random(n)
    x = scale * u ** (-1.0 / shape)
    return np.minimum(x, cap)


def make_arrival_process(app: AppClass, users: int, theta: float, seed: int,
                         horizon: float) -> ArrivalStream:
    """Generate the aggregate arrival stream for one app class.

    Deterministic given (app, users, theta, seed, horizon).  Long-run mean
    rate equals users * pkt_rate * theta by renewal-reward calibration of the
    OFF-period mean.
    """
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    if users < 1:
        raise ValueError(f"users must be >= 1, got {users}")
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")

    target_rate = app.pkt_rate * theta            # per user
    peak_rate = app.burst_peak_mult * app.pkt_rate
    if peak_rate <= target_rate:
        raise ValueError(
            f"app {app.id}: peak rate {peak_rate:g}/s <= target rate {target_rate:g}/s "
            f"(theta={theta:g}); raise burst_peak_mult")

    gap = 1.0 / peak_rate
    shape = app.pareto_shape
    cap_on = app.burst_cap_mult * app.burst_on_mean
    s_on = _truncated_pareto_scale(app.burst_on_mean, shape, cap_on)
    e_on = app.burst_on_mean

    # packets per ON period, then OFF mean from the rate balance
    n_per_on = _expected_pkts_per_on(s_on, shape, cap_on, gap)
    e_off = n_per_on / target_rate - e_on
    if e_off <= 0:
        raise ValueError(
            f"app {app.id}: calibrated OFF mean <= 0 at theta={theta:g}; raise burst_peak_mult")
    cap_off = app.burst_cap_mult * e_off
    s_off = _truncated_pareto_scale(e_off, shape, cap_off)

    gap_ns = int(round(gap * NS))
    horizon_ns = int(round(horizon * NS))
    app_key = zlib.crc32(app.id.encode("utf-8"))

    all_times = []
    all_sizes = []
    cycle_mean = e_on + e_off
    for u in range(users):
        rng = np.random.default_rng(np.random.SeedSequence((seed, app_key, u)))
        est = int(horizon / cycle_mean * 1.5) + 16
        on_list, off_list = [], []
        covered = 0.0
        while covered < horizon:
            on = _sample_truncated_pareto(rng, est, shape, s_on, cap_on)
            off = _sample_truncated_pareto(rng, est, shape, s_off, cap_off)
            on_list.append(on)
            off_list.append(off)
            covered += float(np.sum(on) + np.sum(off))
            est = max(est // 2, 16)
        on_d = np.concatenate(on_list)
        off_d = np.concatenate(off_list)
        # random initial phase: shrink the first OFF period
        off_d[0] *= rng.random()

        # alternate OFF/ON; cumsum boundaries at even indices are ON starts
        cyc = np.empty(2 * len(on_d))
        cyc[0::2] = off_d
        cyc[1::2] = on_d
        bounds = np.cumsum(cyc)
        on_start_ns = np.round(bounds[0::2] * NS).astype(np.int64)
        on_len_ns = np.round(on_d * NS).astype(np.int64)
        counts = np.maximum((on_len_ns + gap_ns - 1) // gap_ns, 0)

        # emit packets at gap spacing inside each ON window
        keep = counts > 0
        starts, cnt = on_start_ns[keep], counts[keep]
        total = int(cnt.sum())
        if total:
            first = np.cumsum(cnt) - cnt
            within = np.arange(total, dtype=np.int64) - np.repeat(first, cnt)
            times = np.repeat(starts, cnt) + within * gap_ns
            times = times[times < horizon_ns]
        else:
            times = np.empty(0, np.int64)

        if app.pkt_size_dist.kind == "fixed":
            sizes = np.full(len(times), app.pkt_size_dist.lo, dtype=np.int64)
        else:
            sizes = rng.integers(app.pkt_size_dist.lo, app.pkt_size_dist.hi + 1,
                                 size=len(times), dtype=np.int64)
        all_times.append(times)
        all_sizes.append(sizes)

    times = np.concatenate(all_times)
    sizes = np.concatenate(all_sizes)
    order = np.argsort(times, kind="stable")
    return ArrivalStream(times_ns=times[order], sizes=sizes[order], horizon=horizon)
