import numpy as np
import pytest

from slicetwin.scenario import parse_scenario

TINY_CFG = """
[topology]
edges = fronthaul:1e9:15e-6
cores = 2
core_speed = 3e8
buffer_len = 50

[app.app1]
tau = 1e-3
rho = 0.90
work = 5e4
pkt_rate = 50
pkt_size = fixed:1000
core = 0

[app.app2]
tau = 5e-3
rho = 0.95
work = 8e4
pkt_rate = 50
pkt_size = uniform:20:65535
core = 1

[theta]
lo = 0.5
hi = 1.5
seeds = 1,2,3

[sim]
users = 2
horizon = 2.0
warmup = 0.25
"""


@pytest.fixture(scope="session")
def tiny_config():
    return parse_scenario(TINY_CFG)


class AnalyticModel:
    """Duck-typed surrogate with a closed form, for solver-level tests.

    delay:      a/f + b/phi            (seconds)
    throughput: clip(1 - c/(f*phi), floor, 1)
    """

    def __init__(self, kind, a=0.3, b=0.2, c=0.002, lo=0.05):
        self.kind = kind
        self.a, self.b, self.c = a, b, c
        self.metric = "delay" if kind == "delay" else "throughput"
        self.input_lo_ = np.array([lo, lo])
        self.input_hi_ = np.array([1.0, 1.0])
        self.input_dim = 2

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "delay":
            v = self.a / x[:, 0] + self.b / x[:, 1]
        else:
            v = np.clip(1.0 - self.c / (x[:, 0] * x[:, 1]), 1e-6, 1.0)
        return v if len(v) > 1 else float(v[0])

    def input_gradient(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "delay":
            g = np.stack([-self.a / x[:, 0] ** 2, -self.b / x[:, 1] ** 2], axis=1)
        else:
            raw = 1.0 - self.c / (x[:, 0] * x[:, 1])
            inside = (raw > 1e-6) & (raw < 1.0)
            g = np.stack([self.c / (x[:, 0] ** 2 * x[:, 1]),
                          self.c / (x[:, 0] * x[:, 1] ** 2)], axis=1)
            g = g * inside[:, None]
        return g if len(g) > 1 else g[0]


@pytest.fixture
def analytic_model_cls():
    return AnalyticModel
