"""Protocol state and dynamics of the dual-buffer control loop.

The loop runs over two lossy links and a time-varying computation budget:

* the sensor-controller link has ``bp_bar`` quality levels, each with its
  own drop probability;
* the controller-actuator link has a capacity level ``B`` in ``0..b_bar``
  (commands per slot at a guaranteed drop probability ``ca_drop``);
* both levels evolve jointly as one finite Markov chain, and the number of
  commands the controller can compute per slot, ``N`` in ``0..n_bar``,
  evolves as an independent one.

This module encodes the per-slot rules for how many commands are sent
(``compute_L``) and how the two effective buffer lengths move
(``step_lengths``), enumerates the aggregated chain state

    (lam_c, lam_a, B_next, Bp_next, N_next)

and assembles its transition matrix (``build_z_chain``).  The aggregated
state carries the *next* slot's link/computation levels because those are
what drive the next length update; that makes the tuple Markov.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, RangeViolationError
from .markov import StochasticMatrix, validate_stochastic

L0_POLICIES = ("literal", "forced-drop")


class ZState(NamedTuple):
    """Aggregated chain state: buffer lengths plus next-slot resources."""

    lam_c: int
    lam_a: int
    b_next: int
    bp_next: int
    n_next: int

    def label(self) -> str:
        return f"lc{self.lam_c}_la{self.lam_a}_B{self.b_next}_Bp{self.bp_next}_N{self.n_next}"


def parse_z_label(label: str) -> ZState:
    parts = label.split("_")
    try:
        lc = int(parts[0][2:])
        la = int(parts[1][2:])
        b = int(parts[2][1:])
        bp = int(parts[3][2:])
        n = int(parts[4][1:])
    except (IndexError, ValueError):
        raise ConfigError(f"not an aggregated-state label: {label!r}") from None
    return ZState(lc, la, b, bp, n)


class SlotOutcome(NamedTuple):
    """Per-slot transmission outcome: delivery flags and command count."""

    gamma: int
    gamma_p: int
    L: int


@dataclass(frozen=True)
class NetworkConfig:
    """Network, computation and buffer parameters of one deployment.

    ``joint_channel`` is the chain over (B, B') pairs in lexicographic
    order with B major; ``compute`` the chain over N.  ``ca_drop`` is the
    guaranteed drop probability of the controller-actuator link and
    ``sc_drop[b-1]`` the drop probability at sensor-controller level b.
    """

    joint_channel: StochasticMatrix
    compute: StochasticMatrix
    ca_drop: float
    sc_drop: tuple[float, ...]
    buf_controller: int
    buf_actuator: int
    initial: tuple[int, int, int]
    l0_policy: str = "literal"

    def __post_init__(self):
        if not self.sc_drop:
            raise ConfigError("sc_drop must list at least one drop probability")
        if any(not (0.0 <= g < 1.0) for g in self.sc_drop):
            raise ConfigError("sensor-controller drop probabilities must lie in [0, 1)")
        if not (0.0 < self.ca_drop < 1.0):
            raise ConfigError("ca_drop must lie strictly inside (0, 1)")
        if self.buf_actuator > self.buf_controller:
            raise ConfigError("actuator buffer cannot exceed the controller buffer")
        if self.buf_actuator < 1 or self.buf_controller < 1:
            raise ConfigError("buffer lengths must be positive")
        if self.joint_channel.n % len(self.sc_drop) != 0:
            raise ConfigError(
                f"joint channel has {self.joint_channel.n} states, not a multiple of"
                f" {len(self.sc_drop)} sensor-controller levels"
            )
        if self.n_bar > self.buf_controller:
            raise ConfigError("computation budget n_bar must not exceed the controller buffer")
        b0, bp0, n0 = self.initial
        if not (0 <= b0 <= self.b_bar):
            raise ConfigError(f"initial B={b0} outside 0..{self.b_bar}")
        if not (1 <= bp0 <= self.bp_bar):
            raise ConfigError(f"initial B'={bp0} outside 1..{self.bp_bar}")
        if not (0 <= n0 <= self.n_bar):
            raise ConfigError(f"initial N={n0} outside 0..{self.n_bar}")
        if self.l0_policy not in L0_POLICIES:
            raise ConfigError(f"l0_policy must be one of {L0_POLICIES}")

    @property
    def bp_bar(self) -> int:
        return len(self.sc_drop)

    @property
    def b_bar(self) -> int:
        return self.joint_channel.n // len(self.sc_drop) - 1

    @property
    def n_bar(self) -> int:
        return self.compute.n - 1

    @property
    def xa_max(self) -> int:
        return min(self.buf_actuator, self.n_bar)

    def channel_index(self, b: int, bp: int) -> int:
        return b * self.bp_bar + (bp - 1)

    def with_ca_drop(self, ca_drop: float) -> "NetworkConfig":
        return replace(self, ca_drop=ca_drop)


def compute_L(
    gamma_p: int, n: int, b: int, lam_c_prev: int, lam_a_prev: int, cfg: NetworkConfig
) -> int:
    """Number of tentative commands transmitted this slot.

    With a fresh sensor update and computation available (``gamma_p * n >
    0``) the controller sends from the newly computed sequence, limited by
    the link capacity and the actuator buffer size; otherwise, if the plant
    was under control last slot, it forwards from its own buffer, limited
    additionally by the space the actuator has left.  When the plant is
    already open loop and nothing fresh is available, nothing is sent.
    """
    if gamma_p * n > 0:
        return max(min(b, n, cfg.buf_actuator), 0)
    if lam_a_prev != 0:
        return max(min(b, lam_c_prev, cfg.buf_actuator - lam_a_prev), 0)
    return 0


def step_lengths(
    prev: tuple[int, int], outcome: SlotOutcome, n: int, cfg: NetworkConfig
) -> tuple[int, int]:
    """One-slot update of the effective buffer lengths (lam_c, lam_a).

    ``prev`` holds the previous slot's lengths, ``outcome`` the delivery
    flags and the command count L for this slot (L must equal
    :func:`compute_L` on the same arguments for the update to be
    meaningful).  The actuator length is clamped to the declared range
    {0..min(buf_actuator, n_bar)}; along reachable trajectories the clamp
    never binds, but the enumerated state space contains length
    combinations no trajectory produces, and their rows must still be
    well defined.
    """
    lam_c_prev, lam_a_prev = prev
    gamma, gamma_p, L = outcome
    fresh = gamma_p * n > 0

    if fresh:
        lam_c = (n - L) if gamma == 1 else 0
    elif lam_a_prev == 0:
        lam_c = 0
    else:
        lam_c = (lam_c_prev - L) if gamma == 1 else lam_c_prev

    if gamma == 0:
        lam_a = max(lam_a_prev - 1, 0)
    elif fresh:
        lam_a = L
    elif lam_a_prev == 0:
        lam_a = 0
    else:
        lam_a = lam_a_prev + L - 1

    if lam_c < 0 or lam_a < 0:
        raise RangeViolationError(
            f"negative buffer length from prev={prev}, outcome={tuple(outcome)}, n={n}"
        )
    if lam_c > cfg.buf_controller:
        raise RangeViolationError(
            f"controller length out of range from prev={prev}, outcome={tuple(outcome)}, n={n}"
        )
    return lam_c, min(lam_a, cfg.xa_max)


def enumerate_z(cfg: NetworkConfig) -> list[ZState]:
    """All aggregated states in lexicographic order.

    Order is (lam_c, lam_a, b_next, bp_next, n_next); the count is
    (buf_controller+1) * (xa_max+1) * (b_bar+1) * bp_bar * (n_bar+1).
    """
    return [
        ZState(lc, la, b, bp, n)
        for lc in range(cfg.buf_controller + 1)
        for la in range(cfg.xa_max + 1)
        for b in range(cfg.b_bar + 1)
        for bp in range(1, cfg.bp_bar + 1)
        for n in range(cfg.n_bar + 1)
    ]


def _outcome_probs(cfg: NetworkConfig, bp: int, n: int, b: int, lc: int, la: int):
    """(gamma, gamma_p, L, probability) for the four delivery outcomes.

    gamma is drawn every slot regardless of whether anything is sent;
    under the "forced-drop" policy a slot with L = 0 is folded into the
    failed-delivery branch instead.
    """
    p_gp = 1.0 - cfg.sc_drop[bp - 1]
    p_g = 1.0 - cfg.ca_drop
    out = []
    for gp in (0, 1):
        pgp = p_gp if gp else 1.0 - p_gp
        if pgp == 0.0:
            continue
        L = compute_L(gp, n, b, lc, la, cfg)
        if cfg.l0_policy == "forced-drop" and L == 0:
            out.append((0, gp, 0, pgp))
            continue
        for g in (0, 1):
            pg = p_g if g else 1.0 - p_g
            if pg == 0.0:
                continue
            out.append((g, gp, L, pgp * pg))
    return out


def build_z_chain(cfg: NetworkConfig) -> StochasticMatrix:
    """Transition matrix of the aggregated chain.

    For each source state the four delivery outcomes are enumerated with
    their probabilities, the buffer lengths stepped, and the result crossed
    with the (independent) link and computation transitions.  Probability
    mass below machine noise is kept, so the support reflects exact
    reachability for transient detection.
    """
    states = enumerate_z(cfg)
    index = {s: i for i, s in enumerate(states)}
    n_res = cfg.joint_channel.n * cfg.compute.n  # resource block size
    matrix = np.zeros((len(states), len(states)))
    ch = cfg.joint_channel.entries
    cp = cfg.compute.entries
    for s in states:
        i = index[s]
        res_row = np.kron(ch[cfg.channel_index(s.b_next, s.bp_next)], cp[s.n_next])
        for g, gp, L, p in _outcome_probs(
            cfg, s.bp_next, s.n_next, s.b_next, s.lam_c, s.lam_a
        ):
            lc2, la2 = step_lengths(
                (s.lam_c, s.lam_a), SlotOutcome(g, gp, L), s.n_next, cfg
            )
            base = index[ZState(lc2, la2, 0, 1, 0)]
            matrix[i, base : base + n_res] += p * res_row
    labels = tuple(s.label() for s in states)
    return validate_stochastic(matrix, labels)


def split_s0(z: StochasticMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Indices of open-loop states (lam_a = 0) and their complement.

    Works on the full enumerated chain or any restriction of it, since the
    split is read from the state labels.
    """
    lam_a = np.array([parse_z_label(lbl).lam_a for lbl in z.labels])
    idx = np.arange(z.n)
    return idx[lam_a == 0], idx[lam_a != 0]


def chain_to_csv(z: StochasticMatrix, path) -> None:
    """Write a chain as CSV: header row of state labels, one row per source."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(z.labels)
        for row in z.entries:
            writer.writerow([repr(float(v)) for v in row])


def chain_from_csv(path) -> StochasticMatrix:
    """Read a chain written by :func:`chain_to_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            labels = tuple(next(reader))
        except StopIteration:
            raise ConfigError(f"{path}: empty chain file") from None
        rows = []
        for k, row in enumerate(reader):
            if len(row) != len(labels):
                raise ConfigError(
                    f"{path}: row {k} has {len(row)} entries, expected {len(labels)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ConfigError(f"{path}: row {k} has a non-numeric entry") from None
    if len(rows) != len(labels):
        raise ConfigError(f"{path}: {len(rows)} rows for {len(labels)} labels")
    return validate_stochastic(np.array(rows), labels)
