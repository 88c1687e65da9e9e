import numpy as np
import pytest

from slicetwin.scenario import (AppClass, PacketSizeDist, ScenarioError, ThetaSpec,
                                load_scenario, make_arrival_process, parse_scenario)
from slicetwin.cli import BUNDLED_DIR

import os

GOOD = """
[topology]
edges = fronthaul:1e9:15e-6
cores = 2
core_speed = 3e8

[app.a]
tau = 1e-3
rho = 0.9
work = 5e4
pkt_rate = 200

[theta]
lo = 0.9
hi = 1.1
seeds = 1,2

[sim]
users = 10
horizon = 2.0
warmup = 0.25
"""


def test_parse_good():
    cfg = parse_scenario(GOOD)
    assert cfg.users == 10
    assert cfg.topology.edges[0].capacity == 1e9
    assert cfg.apps[0].pkt_size_dist == PacketSizeDist("uniform", 20, 65535)


def test_bundled_table2_values():
    cfg = load_scenario(os.path.join(BUNDLED_DIR, "table2.cfg"))
    assert cfg.users == 10
    assert all(a.pkt_rate == 200 for a in cfg.apps)
    assert cfg.app("app1").work == 5e4
    assert cfg.app("app2").work == 8e4
    assert cfg.topology.core_speed == 3e8
    assert cfg.topology.cores == 2
    assert cfg.app("app1").tau == 1e-3 and cfg.app("app2").tau == 5e-3


def test_tau_zero_rejected():
    bad = GOOD.replace("tau = 1e-3", "tau = 0")
    with pytest.raises(ScenarioError, match="tau"):
        parse_scenario(bad)


def test_empty_seeds_rejected():
    bad = GOOD.replace("seeds = 1,2", "seeds = ")
    with pytest.raises(ScenarioError, match="no Monte-Carlo seeds"):
        parse_scenario(bad)


def test_duplicate_seeds_rejected():
    with pytest.raises(ScenarioError, match="distinct"):
        ThetaSpec(lo=0.5, hi=1.5, seeds=(1, 1))


def test_parse_error_has_context():
    bad = GOOD.replace("cores = 2", "cores = two")
    with pytest.raises(ScenarioError, match=r"\[topology\] cores"):
        parse_scenario(bad)


def test_missing_section():
    with pytest.raises(ScenarioError, match=r"\[sim\]"):
        parse_scenario(GOOD.replace("[sim]", "[simulation]"))


def test_warmup_must_precede_horizon():
    with pytest.raises(ScenarioError, match="warmup"):
        parse_scenario(GOOD.replace("warmup = 0.25", "warmup = 3.0"))


def test_min_packet_size():
    with pytest.raises(ScenarioError, match="20 bytes"):
        PacketSizeDist("uniform", 10, 100)


@pytest.fixture(scope="module")
def app():
    return AppClass(id="a", tau=1e-3, rho=0.9, work=5e4, pkt_rate=200)


def test_arrival_determinism(app):
    s1 = make_arrival_process(app, 10, 1.0, 7, 60.0)
    s2 = make_arrival_process(app, 10, 1.0, 7, 60.0)
    assert np.array_equal(s1.times_ns, s2.times_ns)
    assert np.array_equal(s1.sizes, s2.sizes)


def test_arrival_rate_calibration(app):
    # frozen seeds; nominal aggregate rate = users * pkt_rate * theta
    for theta in (0.5, 0.9, 1.0, 1.1, 1.5):
        for seed in (1, 2, 3):
            s = make_arrival_process(app, 10, theta, seed, 60.0)
            nominal = 10 * 200 * theta
            assert abs(s.empirical_rate() - nominal) / nominal <= 0.02


def test_theta_halves_rate(app):
    r1 = make_arrival_process(app, 10, 1.0, 11, 60.0).empirical_rate()
    r_half = make_arrival_process(app, 10, 0.5, 11, 60.0).empirical_rate()
    assert abs(r_half / r1 - 0.5) <= 0.02 * 0.5 + 0.02  # both rates within 2%


def test_aggregate_rate_example(app):
    s = make_arrival_process(app, 10, 1.0, 3, 60.0)
    assert abs(s.empirical_rate() - 2000) / 2000 <= 0.02


def test_sizes_within_support():
    a = AppClass(id="a", tau=1e-3, rho=0.9, work=5e4, pkt_rate=100,
                 pkt_size_dist=PacketSizeDist("uniform", 100, 1500))
    s = make_arrival_process(a, 4, 1.2, 5, 10.0)
    assert s.sizes.min() >= 100 and s.sizes.max() <= 1500
    f = AppClass(id="b", tau=1e-3, rho=0.9, work=5e4, pkt_rate=100,
                 pkt_size_dist=PacketSizeDist("fixed", 777, 777))
    sf = make_arrival_process(f, 2, 1.0, 5, 5.0)
    assert np.all(sf.sizes == 777)


def test_times_sorted_within_horizon(app):
    s = make_arrival_process(app, 5, 1.3, 9, 8.0)
    assert np.all(np.diff(s.times_ns) >= 0)
    assert s.times_ns[-1] < 8.0 * 1e9


def test_theta_must_be_positive(app):
    with pytest.raises(ValueError):
        make_arrival_process(app, 10, 0.0, 1, 10.0)


def test_peak_rate_guard(app):
    # theta above the in-burst rate multiplier cannot be calibrated
    with pytest.raises(ValueError, match="burst_peak_mult"):
        make_arrival_process(app, 10, 2.5, 1, 10.0)
