"""Shared independent oracles.

Everything here is written from first principles with plain math so that the
library's analytic paths are checked against something they do not share code with.
"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import settings

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def oracle_paths(max_attempts):
    """Every trajectory as (outcomes, decisions, truncated), decisions as the policy chose them."""
    out = []
    for depth in range(1, max_attempts + 1):
        for outcomes in itertools.product("CW", repeat=depth):
            decisions = ["R"] * (depth - 1) + ["S"]
            out.append((outcomes, decisions, False))
            if depth == max_attempts:
                out.append((outcomes, ["R"] * depth, True))
    return out


def oracle_probs(theta):
    ts, tdc, tdw = theta
    return {"C": sig(ts), "W": 1 - sig(ts)}, {("C", "S"): sig(tdc), ("C", "R"): 1 - sig(tdc),
                                              ("W", "R"): sig(tdw), ("W", "S"): 1 - sig(tdw)}


def oracle_path_prob(theta, path):
    ps, pd = oracle_probs(theta)
    outcomes, decisions, _ = path
    p = 1.0
    for o, d in zip(outcomes, decisions):
        p *= ps[o] * pd[(o, d)]
    return p


def oracle_kl_sum(theta, ref, path, L, sign):
    ps, pd = oracle_probs(theta)
    rs, rd = oracle_probs(ref)
    outcomes, decisions, _ = path
    total = 0.0
    for o, d in zip(outcomes, decisions):
        total += L * sign * math.log(ps[o] / rs[o]) + sign * math.log(pd[(o, d)] / rd[(o, d)])
    return total


def central_diff(f, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    g = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
