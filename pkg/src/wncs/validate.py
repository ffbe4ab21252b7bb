"""Cross-validation of the analytic pipeline against simulation.

The analytic route builds the aggregated chain and derives the return
chain and excursion-length law in closed form; the empirical route runs
the protocol simulator (or, lacking a network section, walks the injected
chain directly) and measures the same quantities from observed cycles.
Disagreement beyond sampling noise means one of the two implementations of
the dynamics is wrong, which is the point of the check.

When a config carries both [raw-chain] and [network], the raw chain is
used as the analytic side and is checked against a live simulation of the
network, so a stale or corrupted chain dump is caught.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from .config import FileConfig
from .errors import ConfigError
from .markov import (
    StochasticMatrix,
    is_irreducible_aperiodic,
    recurrent_states,
    restrict,
    sample_path,
)
from .model import ZState, build_z_chain, parse_z_label, split_s0
from .plants import NoiseSpec
from .simulate import SimConfig, group_cycles, run
from .stability import delta_law, partition, return_chain

MIN_SOURCE_VISITS = 1000
V_TILDE_TOL = 0.02
CHI_LEVEL = 0.01
MIN_EXPECTED_PER_BIN = 5.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _analytic_side(fc: FileConfig):
    if fc.raw_chain is not None:
        chain = fc.raw_chain.chain
        s0_full = fc.raw_chain.s0_indices()
    else:
        chain = build_z_chain(fc.require("network"))
        s0_full, _ = split_s0(chain)
        s0_full = tuple(int(i) for i in s0_full)
    recurrent, transient = recurrent_states(chain)
    restricted = restrict(chain, recurrent) if transient.size else chain
    pos = {int(old): new for new, old in enumerate(recurrent)}
    s0 = sorted(pos[i] for i in s0_full if i in pos)
    if not s0 or len(s0) == restricted.n:
        raise ConfigError("validation needs both open-loop and closed-loop recurrent states")
    return chain, restricted, s0


def _empirical_cycles(fc: FileConfig, restricted: StochasticMatrix, s0: list[int]):
    """(labels at cycle boundaries, cycle lengths) from the live system."""
    rn = fc.require("run")
    if fc.network is not None:
        plant = fc.plant
        sim = SimConfig(
            network=fc.network,
            plant=plant.name if plant else "linear1d",
            noise=NoiseSpec(),
            horizon=rn.horizon,
            seed=rn.seeds[0],
            x0=plant.x0 if plant and plant.x0 else (0.0,) * (2 if plant and plant.name == "saturated2d" else 1),
        )
        trace = run(sim)
        markers = trace.cycle_markers()
        labels = [trace.z_state_at(int(t)).label() for t in markers]
        deltas = np.diff(markers)
        return labels, deltas
    # No protocol description: walk the injected chain itself.
    rng = np.random.default_rng(rn.seeds[0])
    path = sample_path(restricted, rn.horizon, rng, initial=s0[0])
    s0_set = set(s0)
    markers = np.array([t for t, s in enumerate(path) if int(s) in s0_set])
    labels = [restricted.labels[int(path[t])] for t in markers]
    deltas = np.diff(markers)
    return labels, deltas


def _chi_square_bins(probs: np.ndarray, total: int):
    """Bin edges over cycle lengths with expected counts >= the minimum.

    Lengths run 1..len(probs), with everything beyond folded into the last
    bin.  Adjacent lengths are merged greedily until each bin's expected
    count is large enough for the chi-square approximation.
    """
    tail = max(1.0 - probs.sum(), 0.0)
    expected = np.append(probs, tail) * total
    bins: list[list[int]] = []
    current: list[int] = []
    acc = 0.0
    for idx, e in enumerate(expected):
        current.append(idx)
        acc += e
        if acc >= MIN_EXPECTED_PER_BIN:
            bins.append(current)
            current, acc = [], 0.0
    if current:
        if bins:
            bins[-1].extend(current)
        else:
            bins.append(current)
    return bins, expected


def validate_config(fc: FileConfig) -> list[CheckResult]:
    """Run the full cross-validation suite; one result per check."""
    results: list[CheckResult] = []
    chain, restricted, s0 = _analytic_side(fc)

    irreducible, period = is_irreducible_aperiodic(restricted)
    results.append(
        CheckResult(
            "recurrent-chain-irreducible-aperiodic",
            irreducible and period == 1,
            f"irreducible={irreducible} period={period}",
        )
    )

    if fc.network is not None and fc.raw_chain is None:
        b0, bp0, n0 = fc.network.initial
        label = ZState(0, 0, b0, bp0, n0).label()
        results.append(
            CheckResult(
                "initial-state-recurrent",
                label in restricted.labels,
                f"{label} {'in' if label in restricted.labels else 'not in'} recurrent set",
            )
        )

    blocks = partition(restricted, s0)
    s0_labels = tuple(restricted.labels[i] for i in s0)
    # rho is irrelevant for V~ itself; any value in (0,1) gives the same chain.
    v_tilde, _ = return_chain(blocks, 0.5, s0_labels)

    emp_labels, deltas = _empirical_cycles(fc, restricted, s0)
    foreign = sorted(set(emp_labels) - set(s0_labels))
    if foreign:
        results.append(
            CheckResult(
                "cycle-boundary-states",
                False,
                f"simulated boundary states not in the analytic open-loop set: {foreign[:4]}",
            )
        )
        return results
    results.append(
        CheckResult("cycle-boundary-states", True, f"{len(deltas)} cycles observed")
    )

    obs_labels, counts, hist = group_cycles(emp_labels, deltas)
    col = {lbl: k for k, lbl in enumerate(obs_labels)}
    totals = counts.sum(axis=1)

    worst = 0.0
    checked = 0
    for i, lbl_i in enumerate(obs_labels):
        if totals[i] < MIN_SOURCE_VISITS:
            continue
        ai = s0_labels.index(lbl_i)
        emp_row = counts[i] / totals[i]
        for aj, lbl_j in enumerate(s0_labels):
            emp = emp_row[col[lbl_j]] if lbl_j in col else 0.0
            worst = max(worst, abs(emp - v_tilde.entries[ai, aj]))
            checked += 1
    results.append(
        CheckResult(
            "return-chain-agreement",
            worst <= V_TILDE_TOL and checked > 0,
            f"max |empirical - analytic| = {worst:.4f} over {checked} entries"
            f" (sources with >= {MIN_SOURCE_VISITS} cycles)",
        )
    )

    lmax = max(10 * restricted.n, 64)
    laws = delta_law(blocks, lmax)
    failures = []
    tested = 0
    for (lbl_i, lbl_j), dhist in sorted(hist.items()):
        n_obs = sum(dhist.values())
        if n_obs < MIN_SOURCE_VISITS:
            continue
        ai = s0_labels.index(lbl_i)
        aj = s0_labels.index(lbl_j)
        vt = v_tilde.entries[ai, aj]
        if vt <= 0:
            failures.append(f"{lbl_i}->{lbl_j}: observed but analytically impossible")
            continue
        probs = laws[:, ai, aj] / vt
        bins, expected = _chi_square_bins(probs, n_obs)
        if len(bins) < 2:
            continue
        observed = np.zeros(len(bins))
        exp_binned = np.zeros(len(bins))
        for b, members in enumerate(bins):
            exp_binned[b] = expected[members].sum()
            for idx in members:
                observed[b] += dhist.get(idx + 1, 0)
            if members[-1] == len(expected) - 1:  # tail bin absorbs longer cycles
                observed[b] += sum(c for l, c in dhist.items() if l > len(expected))
        exp_binned *= observed.sum() / exp_binned.sum()
        stat, pvalue = sstats.chisquare(observed, exp_binned)
        tested += 1
        if pvalue < CHI_LEVEL:
            failures.append(f"{lbl_i}->{lbl_j}: p={pvalue:.2g}")
    results.append(
        CheckResult(
            "cycle-length-law",
            not failures,
            f"{tested} pairs tested at the {CHI_LEVEL:.0%} level"
            + (f"; failed: {failures[:4]}" if failures else ""),
        )
    )
    return results
