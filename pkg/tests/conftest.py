"""Shared fixtures: the reference network and the 4-state example chain."""

from __future__ import annotations

import numpy as np
import pytest

import wncs

CHANNEL_6 = np.array([
    [0.24, 0.16, 0.06, 0.04, 0.30, 0.20],
    [0.04, 0.36, 0.01, 0.09, 0.05, 0.45],
    [0.12, 0.08, 0.06, 0.04, 0.42, 0.28],
    [0.02, 0.18, 0.01, 0.09, 0.07, 0.63],
    [0.00, 0.00, 0.30, 0.20, 0.30, 0.20],
    [0.00, 0.00, 0.05, 0.45, 0.05, 0.45],
])

COMPUTE_3 = np.array([
    [0.1, 0.2, 0.7],
    [0.0, 0.6, 0.4],
    [0.1, 0.3, 0.6],
])

# 4-state chain whose first two states form the open-loop set; reference
# values for the whole certificate pipeline are frozen in the tests.
RETURN_EXAMPLE_4 = np.array([
    [0.10, 0.10, 0.10, 0.70],
    [0.30, 0.20, 0.10, 0.40],
    [0.60, 0.20, 0.10, 0.10],
    [0.90, 0.05, 0.02, 0.03],
])


def reference_network(ca_drop: float = 0.1, l0_policy: str = "literal") -> wncs.NetworkConfig:
    return wncs.NetworkConfig(
        joint_channel=wncs.validate_stochastic(CHANNEL_6),
        compute=wncs.validate_stochastic(COMPUTE_3),
        ca_drop=ca_drop,
        sc_drop=(0.2, 0.01),
        buf_controller=2,
        buf_actuator=2,
        initial=(0, 1, 0),
        l0_policy=l0_policy,
    )


def pinned_network(ca_drop: float = 0.2, sc_drop: float = 0.1) -> wncs.NetworkConfig:
    """Single-open-loop-state deployment: link and computation pinned at 1."""
    pinned = wncs.validate_stochastic([[0.0, 1.0], [0.0, 1.0]])
    return wncs.NetworkConfig(
        joint_channel=pinned,
        compute=pinned,
        ca_drop=ca_drop,
        sc_drop=(sc_drop,),
        buf_controller=1,
        buf_actuator=1,
        initial=(1, 1, 1),
    )


def random_network(rng: np.random.Generator) -> wncs.NetworkConfig:
    """Small random deployment with strictly positive resource chains."""
    b_bar = int(rng.integers(0, 3))
    bp_bar = int(rng.integers(1, 3))
    n_bar = int(rng.integers(1, 3))
    buf_c = int(rng.integers(max(n_bar, 1), 4))
    buf_a = int(rng.integers(1, buf_c + 1))
    nch = (b_bar + 1) * bp_bar
    joint = rng.dirichlet(np.ones(nch), size=nch)
    comp = rng.dirichlet(np.ones(n_bar + 1), size=n_bar + 1)
    return wncs.NetworkConfig(
        joint_channel=wncs.validate_stochastic(joint),
        compute=wncs.validate_stochastic(comp),
        ca_drop=float(rng.uniform(0.05, 0.9)),
        sc_drop=tuple(float(v) for v in rng.uniform(0.0, 0.9, size=bp_bar)),
        buf_controller=buf_c,
        buf_actuator=buf_a,
        initial=(b_bar, 1, 0),
    )


@pytest.fixture
def ref_net() -> wncs.NetworkConfig:
    return reference_network()


@pytest.fixture
def example_chain() -> wncs.StochasticMatrix:
    return wncs.validate_stochastic(RETURN_EXAMPLE_4)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            lines[name] = "PASS" if status == "passed" else "FAIL"
    if not lines:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(lines):
        terminalreporter.write_line(f"{lines[name]}  {name}")
