import numpy as np
import pytest

from slicetwin.scenario import NS, parse_scenario
from slicetwin.simulator import (CapacityError, equal_share_decision, run_sim,
                                 uniform_decision)

ONE_APP = """
[topology]
edges = fronthaul:1e9:15e-6
cores = 2
core_speed = 3e8
buffer_len = 100

[app.app1]
tau = 1e-3
rho = 0.90
work = 5e4
pkt_rate = 10
pkt_size = fixed:1000

[theta]
lo = 0.5
hi = 1.5
seeds = 1,2,3

[sim]
users = 1
horizon = 10.0
warmup = 0.0
"""


@pytest.fixture(scope="module")
def one_app():
    return parse_scenario(ONE_APP)


def test_no_queueing_closed_form(one_app):
    """Light load, fixed sizes: every request matches the hand computation
    to the nanosecond: 8e3/(0.5*1e9) transmission + 30 us round-trip prop
    + 5e4/3e8 service."""
    dec = uniform_decision(one_app, {"app1": (0.5, 1.0)})
    s = run_sim(one_app, dec, 1.0, 7, keep_records=True)
    r = s.stats["app1"].records
    assert s.stats["app1"].delivered == s.stats["app1"].emitted > 50
    assert np.all(r.net_ns[r.net_ok] == 16_000)          # 8000 bits / 0.5 Gb/s
    assert np.all(r.srv_ns[r.srv_ok] == 166_667)         # ceil(5e4/3e8 s)
    assert np.all(r.e2e_ns[r.srv_ok] == 16_000 + 166_667 + 30_000)


def test_service_time_forced_by_parameters(one_app):
    dec = uniform_decision(one_app, {"app1": (1.0, 1.0)})
    s = run_sim(one_app, dec, 1.0, 3, keep_records=True)
    r = s.stats["app1"].records
    assert np.all(r.srv_ns[r.srv_ok] == 166_667)  # 5e4 MI / 3e8 MIPS


def test_zero_emitted_vacuous_success():
    cfg = parse_scenario(ONE_APP.replace("horizon = 10.0", "horizon = 1e-4")
                         .replace("warmup = 0.0", "warmup = 0"))
    dec = uniform_decision(cfg, {"app1": (0.5, 1.0)})
    s = run_sim(cfg, dec, 1.0, 7)
    st = s.stats["app1"]
    assert st.emitted == 0
    assert st.e2e_success == 1.0 and st.net_success == 1.0 and st.srv_success == 1.0
    assert len(st.hist_counts) == 0
    assert np.isnan(st.max_delay)


def test_zero_flow_drops_reported_not_raised(one_app):
    dec = uniform_decision(one_app, {"app1": (0.0, 1.0)})
    s = run_sim(one_app, dec, 1.0, 7)
    st = s.stats["app1"]
    assert st.emitted > 0 and st.delivered == 0
    assert st.net_dropped == st.emitted
    assert st.e2e_success == 0.0


def test_zero_cpu_drops_at_server(one_app):
    dec = uniform_decision(one_app, {"app1": (0.5, 0.0)})
    s = run_sim(one_app, dec, 1.0, 7)
    st = s.stats["app1"]
    assert st.net_dropped == 0
    assert st.srv_dropped == st.emitted
    assert st.net_success == 1.0 and st.e2e_success == 0.0


def test_capacity_violation_raises(one_app):
    dec = uniform_decision(one_app, {"app1": (1.2, 1.0)})
    with pytest.raises(CapacityError, match="outside"):
        run_sim(one_app, dec, 1.0, 7)


def test_theta_outside_range_raises(one_app):
    dec = uniform_decision(one_app, {"app1": (0.5, 1.0)})
    with pytest.raises(ValueError, match="theta"):
        run_sim(one_app, dec, 2.0, 7)


def test_sum_capacity_violation(tiny_config):
    dec = uniform_decision(tiny_config, {"app1": (0.7, 1.0), "app2": (0.7, 1.0)})
    with pytest.raises(CapacityError, match="exceeds 1"):
        run_sim(tiny_config, dec, 1.0, 7)


def test_transmission_monotone_in_f(tiny_config):
    """More bandwidth never increases any request's network time (same seed)."""
    lo = uniform_decision(tiny_config, {"app1": (0.2, 1.0), "app2": (0.0, 0.0)})
    hi = uniform_decision(tiny_config, {"app1": (0.8, 1.0), "app2": (0.0, 0.0)})
    s_lo = run_sim(tiny_config, lo, 1.0, 5, keep_records=True)
    s_hi = run_sim(tiny_config, hi, 1.0, 5, keep_records=True)
    a, b = s_lo.stats["app1"].records, s_hi.stats["app1"].records
    both = a.net_ok & b.net_ok
    assert both.sum() > 100
    assert np.all(a.net_ns[both] >= b.net_ns[both])
    assert s_lo.stats["app1"].mean_delay >= s_hi.stats["app1"].mean_delay


def test_service_monotone_in_phi(tiny_config):
    lo = uniform_decision(tiny_config, {"app1": (0.5, 0.4), "app2": (0.0, 0.0)})
    hi = uniform_decision(tiny_config, {"app1": (0.5, 1.0), "app2": (0.0, 0.0)})
    s_lo = run_sim(tiny_config, lo, 1.0, 5, keep_records=True)
    s_hi = run_sim(tiny_config, hi, 1.0, 5, keep_records=True)
    a, b = s_lo.stats["app1"].records, s_hi.stats["app1"].records
    both = a.srv_ok & b.srv_ok
    assert np.all(a.srv_ns[both] >= b.srv_ns[both])


def test_multi_core_class(tiny_config):
    """A class with shares on both cores uses them as parallel servers."""
    dec = uniform_decision(tiny_config, {"app1": (0.5, 0.0), "app2": (0.0, 0.0)})
    dec.cpu["app1"] = {0: 0.5, 1: 0.5}
    s = run_sim(tiny_config, dec, 1.0, 5, keep_records=True)
    st = s.stats["app1"]
    assert st.delivered > 0
    # both half-speed cores give each request service ceil(5e4/(0.5*3e8))
    r = st.records
    assert np.all(r.srv_ns[r.srv_ok] >= 333_334)


def test_priority_modes_run_and_conserve(tiny_config):
    dec = equal_share_decision(tiny_config)
    for mode in ("network-priority", "compute-priority"):
        s = run_sim(tiny_config, dec, 1.0, 9, mode=mode, keep_records=True)
        for app_id, st in s.stats.items():
            assert st.emitted == st.delivered + st.net_dropped + st.srv_dropped
            r = st.records
            m = r.srv_ok
            assert np.all(r.e2e_ns[m] == r.net_ns[m] + r.srv_ns[m] + 30_000)
        s2 = run_sim(tiny_config, dec, 1.0, 9, mode=mode, keep_records=True)
        assert np.array_equal(s2.stats["app1"].records.e2e_ns,
                              s.stats["app1"].records.e2e_ns)


def test_priority_app_is_protected(tiny_config):
    """Head-of-line priority at the link must not hurt the prioritized class
    relative to pooled FIFO order with the other class's traffic in front."""
    dec = equal_share_decision(tiny_config)
    s = run_sim(tiny_config, dec, 1.5, 4, mode="network-priority",
                priority_app="app1", keep_records=True)
    s2 = run_sim(tiny_config, dec, 1.5, 4, mode="network-priority",
                 priority_app="app2", keep_records=True)
    assert s.stats["app1"].mean_delay <= s2.stats["app1"].mean_delay


def test_histogram_covers_delivered(tiny_config):
    dec = equal_share_decision(tiny_config)
    s = run_sim(tiny_config, dec, 1.0, 2)
    for st in s.stats.values():
        assert int(st.hist_counts.sum()) == st.delivered
