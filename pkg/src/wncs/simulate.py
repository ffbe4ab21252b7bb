"""Closed-loop simulation of the dual-buffer protocol on a concrete plant.

One run is strictly sequential (slot order matters); Monte-Carlo fan-out
over seeds is concurrent, with results merged deterministically by seed.

Randomness discipline: the master seed spawns five independent child
streams, in fixed order (link states, computation states, actuator-link
deliveries, sensor-link deliveries, process noise).  Changing the noise
spec therefore never perturbs the sampled channel path, and a baseline run
with the same seed sees the identical network sample path as the
dual-buffer run, which is what paired comparisons need.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InsufficientCyclesError
from .markov import StochasticMatrix
from .model import NetworkConfig, SlotOutcome, ZState, compute_L, step_lengths
from .plants import NoiseSpec, PlantModel, generate_sequence, make_plant
from .stability import PlantMargins

MODES = ("dual-buffer", "single-buffer-baseline")

# Full per-step records are kept in memory up to this many steps; longer
# runs must stream rows to disk and retain only lengths/cycle data.
TRACE_MEMORY_LIMIT = 1_000_000

TRACE_COLUMNS_FIXED = (
    "lam_c",
    "lam_a",
    "B",
    "Bp",
    "N",
    "gamma",
    "gamma_p",
    "L",
    "open_loop",
    "cycle_start",
)


@dataclass(frozen=True)
class SimConfig:
    """Everything one closed-loop run needs."""

    network: NetworkConfig
    plant: str
    noise: NoiseSpec
    horizon: int
    seed: int
    x0: tuple[float, ...]
    mode: str = "dual-buffer"
    margins: PlantMargins | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")


@dataclass
class BufferPair:
    """Controller and actuator command buffers (zero padding left implicit)."""

    controller: list[np.ndarray] = field(default_factory=list)
    actuator: list[np.ndarray] = field(default_factory=list)

    @property
    def lam_c(self) -> int:
        return len(self.controller)

    @property
    def lam_a(self) -> int:
        return len(self.actuator)


@dataclass
class SimTrace:
    """Per-step records of one run plus the sampled resource paths.

    ``b_path``/``bp_path``/``n_path`` have one extra entry beyond the
    horizon: aggregated-state bookkeeping at step t needs the resources of
    step t+1.  ``x``/``u`` are None when the run streamed its rows to disk.
    """

    config: SimConfig
    lam_c: np.ndarray
    lam_a: np.ndarray
    b_path: np.ndarray
    bp_path: np.ndarray
    n_path: np.ndarray
    gamma: np.ndarray
    gamma_p: np.ndarray
    L: np.ndarray
    norm_x: np.ndarray
    x: np.ndarray | None
    u: np.ndarray | None
    x_final: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.lam_a)

    def open_loop(self) -> np.ndarray:
        return self.lam_a == 0

    def cycle_markers(self) -> np.ndarray:
        """Steps at which the actuator buffer is empty (cycle boundaries)."""
        return np.where(self.lam_a == 0)[0]

    def deltas(self) -> np.ndarray:
        return np.diff(self.cycle_markers())

    def z_state_at(self, t: int) -> ZState:
        return ZState(
            int(self.lam_c[t]),
            int(self.lam_a[t]),
            int(self.b_path[t + 1]),
            int(self.bp_path[t + 1]),
            int(self.n_path[t + 1]),
        )

    def open_loop_fraction(self) -> float:
        return float(self.open_loop().mean())

    def to_csv(self, path) -> None:
        if self.x is None or self.u is None:
            raise ConfigError("per-step states were streamed to disk, not retained")
        with open(path, "w", newline="") as fh:
            _write_trace_header(fh, self.x.shape[1], self.u.shape[1])
            for t in range(self.horizon):
                _write_trace_row(fh, self, t, self.x[t], self.u[t])


def _write_trace_header(fh, l_s: int, l_u: int) -> None:
    cols = ["t"]
    cols += [f"x{i}" for i in range(l_s)]
    cols += ["norm_x"]
    cols += [f"u{i}" for i in range(l_u)]
    cols += list(TRACE_COLUMNS_FIXED)
    fh.write(",".join(cols) + "\n")


def _write_trace_row(fh, trace: SimTrace, t: int, x_t, u_t) -> None:
    open_loop = int(trace.lam_a[t] == 0)
    cells = [str(t)]
    cells += [repr(float(v)) for v in x_t]
    cells += [repr(float(trace.norm_x[t]))]
    cells += [repr(float(v)) for v in u_t]
    cells += [
        str(int(trace.lam_c[t])),
        str(int(trace.lam_a[t])),
        str(int(trace.b_path[t])),
        str(int(trace.bp_path[t])),
        str(int(trace.n_path[t])),
        str(int(trace.gamma[t])),
        str(int(trace.gamma_p[t])),
        str(int(trace.L[t])),
        str(open_loop),
        str(open_loop),
    ]
    fh.write(",".join(cells) + "\n")


def _sample_chain_path(
    m: StochasticMatrix, steps: int, start: int, rng: np.random.Generator
) -> np.ndarray:
    cum = np.cumsum(m.entries, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(steps)
    path = np.empty(steps + 1, dtype=np.int64)
    path[0] = start
    s = start
    for t in range(steps):
        s = int(np.searchsorted(cum[s], u[t], side="right"))
        path[t + 1] = s
    return path


def run(cfg: SimConfig, trace_path=None, debug: bool = False) -> SimTrace:
    """Simulate the protocol for ``cfg.horizon`` slots.

    Per slot, in order: the sensor-link outcome is drawn; with a fresh
    update and computation available the controller recomputes its command
    sequence (discarding the old one); the transmission size L is fixed;
    the actuator-link outcome is drawn; both buffers are updated; the first
    actuator command (or zero) is applied; the plant steps.  Deterministic
    given the seed.

    In "single-buffer-baseline" mode the actuator retains nothing: on a
    successful delivery it applies the first received command and discards
    the rest, otherwise it applies zero.  The recorded ``lam_a`` is then
    the applied-a-command flag, so open-loop slots keep their meaning.

    With ``debug=True`` the buffer lengths are checked against the
    length-update rules at every step.
    """
    net = cfg.network
    plant = make_plant(cfg.plant)
    l_s, l_u = plant.dims()
    x = np.asarray(cfg.x0, dtype=float)
    if x.shape != (l_s,):
        raise ConfigError(f"x0 has shape {x.shape}, plant {cfg.plant!r} needs ({l_s},)")
    T = cfg.horizon
    retain_xu = T <= TRACE_MEMORY_LIMIT
    if not retain_xu and trace_path is None:
        raise ConfigError(
            f"horizon {T} exceeds the in-memory trace limit {TRACE_MEMORY_LIMIT};"
            " pass trace_path to stream records to disk"
        )
    baseline = cfg.mode == "single-buffer-baseline"

    ss = np.random.SeedSequence(cfg.seed)
    rng_channel, rng_compute, rng_gamma, rng_gamma_p, rng_noise = (
        np.random.default_rng(child) for child in ss.spawn(5)
    )

    b0, bp0, n0 = net.initial
    ch_path = _sample_chain_path(net.joint_channel, T, net.channel_index(b0, bp0), rng_channel)
    n_path = _sample_chain_path(net.compute, T, n0, rng_compute)
    b_path = ch_path // net.bp_bar
    bp_path = ch_path % net.bp_bar + 1

    gamma_raw = rng_gamma.random(T) < (1.0 - net.ca_drop)
    sc_drop = np.asarray(net.sc_drop)
    gamma_p_flags = rng_gamma_p.random(T) < (1.0 - sc_drop[bp_path[:T] - 1])
    noise = cfg.noise.sample(rng_noise, T, l_s)

    lam_c_arr = np.zeros(T, dtype=np.int64)
    lam_a_arr = np.zeros(T, dtype=np.int64)
    gamma_arr = np.zeros(T, dtype=np.int64)
    L_arr = np.zeros(T, dtype=np.int64)
    norm_arr = np.zeros(T)
    x_arr = np.zeros((T, l_s)) if retain_xu else None
    u_arr = np.zeros((T, l_u)) if retain_xu else None

    buffers = BufferPair()
    lam_c_prev = 0
    lam_a_prev = 0
    zero_u = np.zeros(l_u)
    gp_arr = gamma_p_flags.astype(np.int64)

    stream = open(trace_path, "w", newline="") if trace_path is not None and not retain_xu else None
    stream_view = None
    try:
        if stream is not None:
            _write_trace_header(stream, l_s, l_u)
            stream_view = SimTrace(
                cfg, lam_c_arr, lam_a_arr, b_path, bp_path, n_path,
                gamma_arr, gp_arr, L_arr, norm_arr, None, None, x,
            )
        for t in range(T):
            b = int(b_path[t])
            bp = int(bp_path[t])
            n = int(n_path[t])
            gp = int(gamma_p_flags[t])
            fresh = gp * n > 0
            if fresh:
                buffers.controller = generate_sequence(plant, x, n)
            L = compute_L(gp, n, b, lam_c_prev, lam_a_prev, net)
            g = int(gamma_raw[t])
            if net.l0_policy == "forced-drop" and L == 0:
                g = 0

            if fresh:
                if g:
                    transmitted = buffers.controller[:L]
                    buffers.controller = buffers.controller[L:]
                    buffers.actuator = list(transmitted)
                else:
                    buffers.controller = []
                    buffers.actuator = buffers.actuator[1:]
            elif lam_a_prev == 0:
                buffers.controller = []
                buffers.actuator = []
            elif g:
                transmitted = buffers.controller[:L]
                buffers.controller = buffers.controller[L:]
                buffers.actuator = buffers.actuator[1:] + list(transmitted)
            else:
                buffers.actuator = buffers.actuator[1:]

            if baseline:
                if g and L >= 1 and buffers.actuator:
                    u = buffers.actuator[0]
                    lam_a = 1
                else:
                    u = zero_u
                    lam_a = 0
                buffers.actuator = []
                lam_c = buffers.lam_c
            else:
                if buffers.actuator:
                    u = buffers.actuator[0]
                else:
                    u = zero_u
                lam_c = buffers.lam_c
                lam_a = buffers.lam_a

            if debug and not baseline:
                expect = step_lengths(
                    (lam_c_prev, lam_a_prev), SlotOutcome(g, gp, L), n, net
                )
                if (lam_c, lam_a) != expect:
                    raise AssertionError(
                        f"step {t}: buffer contents give lengths ({lam_c}, {lam_a}),"
                        f" length rules give {expect}"
                    )

            lam_c_arr[t] = lam_c
            lam_a_arr[t] = lam_a
            gamma_arr[t] = g
            L_arr[t] = L
            norm_arr[t] = float(np.linalg.norm(x))
            if retain_xu:
                x_arr[t] = x
                u_arr[t] = u

            x_next = plant.step(x, u, noise[t])
            if stream is not None:
                _write_trace_row(stream, stream_view, t, x, u)
            x = x_next
            lam_c_prev, lam_a_prev = lam_c, lam_a
    finally:
        if stream is not None:
            stream.close()

    trace = SimTrace(
        config=cfg,
        lam_c=lam_c_arr,
        lam_a=lam_a_arr,
        b_path=b_path,
        bp_path=bp_path,
        n_path=n_path,
        gamma=gamma_arr,
        gamma_p=gp_arr,
        L=L_arr,
        norm_x=norm_arr,
        x=x_arr,
        u=u_arr,
        x_final=x,
    )
    if trace_path is not None and retain_xu:
        trace.to_csv(trace_path)
    return trace


def run_baseline(cfg: SimConfig, trace_path=None, debug: bool = False) -> SimTrace:
    """Run the single-buffer baseline on the same network sample path."""
    return run(replace(cfg, mode="single-buffer-baseline"), trace_path, debug)


@dataclass
class CycleStats:
    """Cycle statistics grouped by (start state, end state) pairs."""

    labels: tuple[str, ...]
    counts: np.ndarray
    v_tilde_hat: np.ndarray
    delta_hist: dict[tuple[str, str], dict[int, int]]
    xi: np.ndarray

    def source_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def group_cycles(z_labels, deltas):
    """Group cycle lengths by (start label, end label).

    Returns (sorted labels, transition-count matrix, per-pair length
    histograms).
    """
    labels = tuple(sorted(set(z_labels)))
    index = {lbl: k for k, lbl in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    hist: dict[tuple[str, str], dict[int, int]] = {}
    for k, d in enumerate(deltas):
        i, j = z_labels[k], z_labels[k + 1]
        counts[index[i], index[j]] += 1
        pair = hist.setdefault((i, j), {})
        pair[int(d)] = pair.get(int(d), 0) + 1
    return labels, counts, hist


def cycle_stats(trace: SimTrace, margins: PlantMargins) -> CycleStats:
    """Group cycles by their boundary states; estimate the return chain.

    Also evaluates the cycle cost ``Xi(n) = alpha^n rho^(sum_i (Delta_i -
    1))`` by direct product along the trace, one value per completed cycle.
    """
    markers = trace.cycle_markers()
    if len(markers) < 2:
        raise InsufficientCyclesError(
            f"trace has {len(markers)} cycle boundaries; need at least 2"
        )
    deltas = np.diff(markers)
    z_labels = [trace.z_state_at(int(t)).label() for t in markers]
    labels, counts, hist = group_cycles(z_labels, deltas)
    totals = counts.sum(axis=1, keepdims=True)
    v_hat = counts / np.maximum(totals, 1)
    log_xi = np.cumsum(
        np.log(margins.alpha) + (deltas - 1) * np.log(margins.rho)
    )
    return CycleStats(labels, counts, v_hat, hist, np.exp(log_xi))


@dataclass
class MonteCarloReport:
    """Seed-keyed aggregate of independent runs."""

    seeds: tuple[int, ...]
    mean_norm: float
    max_norm: float
    open_loop_fraction: float
    per_seed: dict[int, dict[str, float]]
    errors: dict[int, str]
    xi_decay_slope: float | None
    xi_mean: np.ndarray | None

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "mean_norm": self.mean_norm,
            "max_norm": self.max_norm,
            "open_loop_fraction": self.open_loop_fraction,
            "xi_decay_slope": self.xi_decay_slope,
            "errors": {str(k): v for k, v in sorted(self.errors.items())},
        }

    def to_text(self) -> str:
        lines = [
            "monte-carlo aggregate",
            f"  seeds: {len(self.seeds)}",
            f"  mean |x| = {self.mean_norm:.6g}",
            f"  max |x| = {self.max_norm:.6g}",
            f"  open-loop fraction = {self.open_loop_fraction:.6g}",
        ]
        if self.xi_decay_slope is not None:
            lines.append(f"  cycle-cost decay slope = {self.xi_decay_slope:.6g}")
        for seed, msg in sorted(self.errors.items()):
            lines.append(f"  seed {seed} failed: {msg}")
        return "\n".join(lines)


def _max_workers(n_jobs: int) -> int:
    env = os.environ.get("WNCS_MAX_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"WNCS_MAX_WORKERS={env!r} is not an integer") from None
    return max(1, min(n_jobs, os.cpu_count() or 1))


def monte_carlo(
    cfg: SimConfig, seeds, fit_cycles: int = 16
) -> MonteCarloReport:
    """Run one seed per independent sample path and aggregate.

    The cycle-cost decay slope is the log-linear fit of the across-seed
    mean of ``Xi(n)`` against the cycle index n (margins required);
    estimates beyond ``fit_cycles`` cycles are discarded because the
    estimator variance grows multiplicatively with n.  Aggregation is a
    deterministic fold over seed-sorted results.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")

    def one(seed: int) -> SimTrace:
        return run(replace(cfg, seed=seed))

    results: dict[int, SimTrace] = {}
    errors: dict[int, str] = {}
    with ThreadPoolExecutor(max_workers=_max_workers(len(seeds))) as pool:
        futures = {seed: pool.submit(one, seed) for seed in seeds}
        for seed in seeds:
            try:
                results[seed] = futures[seed].result()
            except Exception as exc:  # noqa: BLE001 - reported per seed
                errors[seed] = f"{type(exc).__name__}: {exc}"

    per_seed: dict[int, dict[str, float]] = {}
    xi_rows = []
    for seed in sorted(results):
        trace = results[seed]
        stats = {
            "mean_norm": float(trace.norm_x.mean()),
            "max_norm": float(trace.norm_x.max()),
            "open_loop_fraction": trace.open_loop_fraction(),
            "cycles": float(len(trace.cycle_markers())),
        }
        per_seed[seed] = stats
        if cfg.margins is not None:
            try:
                xi_rows.append(cycle_stats(trace, cfg.margins).xi)
            except InsufficientCyclesError:
                pass

    xi_mean = None
    slope = None
    if xi_rows:
        n_fit = min(min(len(row) for row in xi_rows), fit_cycles)
        if n_fit >= 2:
            stacked = np.vstack([row[:n_fit] for row in xi_rows])
            xi_mean = stacked.mean(axis=0)
            positive = xi_mean > 0
            if positive.sum() >= 2:
                ns = np.arange(1, n_fit + 1)[positive]
                slope = float(np.polyfit(ns, np.log(xi_mean[positive]), 1)[0])

    if per_seed:
        mean_norm = float(np.mean([s["mean_norm"] for s in per_seed.values()]))
        max_norm = float(np.max([s["max_norm"] for s in per_seed.values()]))
        olf = float(np.mean([s["open_loop_fraction"] for s in per_seed.values()]))
    else:
        mean_norm = max_norm = olf = float("nan")
    return MonteCarloReport(
        seeds=tuple(sorted(seeds)),
        mean_norm=mean_norm,
        max_norm=max_norm,
        open_loop_fraction=olf,
        per_seed=per_seed,
        errors=errors,
        xi_decay_slope=slope,
        xi_mean=xi_mean,
    )
