"""Cycle-cost stability certificates for the buffered control chain.

The pipeline splits the aggregated chain into open-loop states (actuator
buffer empty) and the rest, builds the chain observed at open-loop events
(the return chain), and from the lengths of the excursions between those
events derives two sufficient-stability statistics:

* ``omega_prime`` — worst-case conditional expectation of ``rho**Delta``
  over return transitions, scaled by ``alpha/rho``;
* ``omega`` — ``alpha/rho`` times the spectral radius of a lifted matrix
  that additionally weights transitions by how likely they are under the
  stationary law of the return chain.

Either statistic below one certifies stochastic stability; ``omega`` is
never larger than ``omega_prime``.  The same ``omega < 1`` certificate
covers the process-noise case (the noise only shifts the cost by a constant
per step), so the "robust" verdict reported here is an alias of the tight
one; the Lipschitz-continuity assumptions it rests on are the caller's
responsibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DivergentCycleError,
    EmptyPartitionError,
    NoClosedLoopStatesError,
    SizeLimitError,
    ZeroStationaryMassError,
)
from .markov import (
    Distribution,
    StochasticMatrix,
    SubstochasticMatrix,
    is_irreducible_aperiodic,
    recurrent_states,
    restrict,
    spectral_radius,
    stationary,
)

# Probabilities at or below this are treated as structurally impossible
# transitions; conditional expectations on them are defined to be zero.
ZERO_PROB = 1e-15

SERIES_TOL = 1e-14
# Largest open-loop state set for which the dense lifted matrix (size
# |S0|^2 x |S0|^2) is still built; beyond this we refuse rather than
# silently approximate.
S0_SIZE_LIMIT = 64


@dataclass(frozen=True)
class PlantMargins:
    """Closed-loop contraction factor and open-loop expansion factor.

    ``rho`` bounds the one-step decrease of the Lyapunov function under the
    nominal policy, ``alpha`` bounds its one-step growth with zero input.
    """

    rho: float
    alpha: float

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ValueError(f"rho must lie in (0, 1), got {self.rho!r}")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")

    @property
    def ratio(self) -> float:
        return self.alpha / self.rho


@dataclass(frozen=True)
class CycleAnalysis:
    """Intermediate matrices of one certification run."""

    blocks: tuple[SubstochasticMatrix, SubstochasticMatrix, SubstochasticMatrix, SubstochasticMatrix]
    v_tilde: StochasticMatrix
    pi: Distribution
    r: np.ndarray
    f: np.ndarray
    u: np.ndarray


@dataclass(frozen=True)
class StabilityReport:
    """Certificate statistics and verdicts."""

    omega_prime: float
    omega: float
    verdict_loose: bool
    verdict_tight: bool
    ia_irreducible: bool
    ia_period: int
    counts: dict[str, int]
    max_r: float
    lambda_max_u: float
    rho: float
    alpha: float

    @property
    def verdict_robust(self) -> bool:
        # Same certificate covers the process-noise case.
        return self.verdict_tight

    def to_dict(self) -> dict:
        d = {
            "omega": self.omega,
            "omega_prime": self.omega_prime,
            "lambda_max_U": self.lambda_max_u,
            "max_r": self.max_r,
            "verdict_tight": self.verdict_tight,
            "verdict_loose": self.verdict_loose,
            "verdict_robust": self.verdict_robust,
            "return_chain_irreducible": self.ia_irreducible,
            "return_chain_period": self.ia_period,
            "rho": self.rho,
            "alpha": self.alpha,
        }
        for key, value in self.counts.items():
            d[f"counts.{key}"] = value
        return d

    def to_text(self) -> str:
        c = self.counts
        lines = [
            "stability certificate",
            f"  states: total={c['total']} transient={c['transient']} "
            f"recurrent={c['recurrent']} open-loop={c['s0']}",
            f"  margins: rho={self.rho:g} alpha={self.alpha:g} "
            f"alpha/rho={self.alpha / self.rho:g}",
            f"  max_r={self.max_r:.6g}  lambda_max_U={self.lambda_max_u:.6g}",
            f"  omega_prime={self.omega_prime:.6g}  -> "
            f"{'certified' if self.verdict_loose else 'not certified'} (worst-case bound)",
            f"  omega={self.omega:.6g}  -> "
            f"{'certified' if self.verdict_tight else 'not certified'} (spectral bound)",
            f"  noisy-plant verdict: {'certified' if self.verdict_robust else 'not certified'}"
            " (same omega; Lipschitz bounds are the caller's responsibility)",
            f"  return chain: irreducible={self.ia_irreducible} period={self.ia_period}",
        ]
        return "\n".join(lines)


def partition(
    z: StochasticMatrix, s0
) -> tuple[SubstochasticMatrix, SubstochasticMatrix, SubstochasticMatrix, SubstochasticMatrix]:
    """Split ``z`` into the four blocks indexed with the ``s0`` states first.

    Returns (V00, V01, V10, V11); stacking them back reproduces ``z`` up to
    the row/column permutation that puts ``s0`` first.
    """
    s0 = sorted(set(int(i) for i in s0))
    if not s0:
        raise EmptyPartitionError("open-loop state set is empty")
    if max(s0) >= z.n or min(s0) < 0:
        raise EmptyPartitionError(f"open-loop indices out of range for a {z.n}-state chain")
    s1 = [i for i in range(z.n) if i not in set(s0)]
    m = z.entries
    v00 = m[np.ix_(s0, s0)]
    v01 = m[np.ix_(s0, s1)]
    v10 = m[np.ix_(s1, s0)]
    v11 = m[np.ix_(s1, s1)]
    return (
        SubstochasticMatrix(v00),
        SubstochasticMatrix(v01),
        SubstochasticMatrix(v10),
        SubstochasticMatrix(v11),
    )


def _unpack(blocks) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    v00, v01, v10, v11 = blocks
    return v00.entries, v01.entries, v10.entries, v11.entries


def return_chain(
    blocks, rho: float, labels: tuple[str, ...] = ()
) -> tuple[StochasticMatrix, np.ndarray]:
    """Return chain over the open-loop states, plus its rho-weighted kernel.

    The chain observed only at open-loop events has transition matrix

        V~ = V00 + V01 (I - V11)^{-1} V10,

    and the kernel sum_l rho^l D(l), with D(1) = V00 and
    D(l) = V01 V11^{l-2} V10 for l > 1, has the closed form

        rho V00 + rho^2 V01 (I - rho V11)^{-1} V10.

    Raises DivergentCycleError when the excursion block V11 has spectral
    radius at (or numerically at) one, i.e. excursions may never return.
    """
    v00, v01, v10, v11 = _unpack(blocks)
    n0 = v00.shape[0]
    if v11.size:
        sr = spectral_radius(v11)
        if sr >= 1.0 - 1e-12:
            raise DivergentCycleError(f"excursion block has spectral radius {sr:.12g}")
        eye = np.eye(v11.shape[0])
        v_tilde = v00 + v01 @ np.linalg.solve(eye - v11, v10)
        weighted = rho * v00 + rho**2 * (v01 @ np.linalg.solve(eye - rho * v11, v10))
    else:
        v_tilde = v00.copy()
        weighted = rho * v00
    # Guard tiny negative round-off before validation.
    v_tilde = np.clip(v_tilde, 0.0, None)
    return StochasticMatrix(v_tilde, tuple(labels or ()) or tuple(f"s{i}" for i in range(n0))), weighted


def return_chain_series(
    blocks, rho: float, tol: float = SERIES_TOL, max_terms: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Same two matrices as :func:`return_chain`, by truncated series.

    Terms are added until the largest entry of the next increment falls
    below ``tol``; a backstop of ``max_terms`` (default ten times the full
    state count, with a floor that accommodates slowly-mixing excursion
    blocks) bounds the runtime on pathological inputs, surfacing
    DivergentCycleError instead of looping.
    """
    v00, v01, v10, v11 = _unpack(blocks)
    n_total = v00.shape[0] + v11.shape[0]
    if max_terms is None:
        max_terms = max(10 * n_total, 4096)
    if v11.size:
        sr = spectral_radius(v11)
        if sr >= 1.0 - 1e-12:
            raise DivergentCycleError(f"excursion block has spectral radius {sr:.12g}")
    v_tilde = v00.copy()
    weighted = rho * v00.copy()
    if not v11.size:
        if v01.size and v10.size:
            v_tilde = v_tilde + v01 @ v10
            weighted = weighted + rho**2 * (v01 @ v10)
        return v_tilde, weighted
    tail = v01.copy()  # V01 V11^{l-2} after l-2 multiplications
    rho_l = rho * rho
    for _ in range(2, max_terms + 1):
        term = tail @ v10
        v_tilde = v_tilde + term
        weighted = weighted + rho_l * term
        if term.size == 0 or term.max() < tol:
            return v_tilde, weighted
        tail = tail @ v11
        rho_l *= rho
    raise DivergentCycleError(
        f"return-time series did not converge within {max_terms} terms"
    )


def delta_law(blocks, lmax: int) -> np.ndarray:
    """Stacked matrices D(l), l = 1..lmax, of joint excursion-length law.

    ``out[l-1][i, j]`` is the probability that, starting from open-loop
    state i, the next open-loop event happens after exactly l steps and in
    state j.
    """
    v00, v01, v10, v11 = _unpack(blocks)
    n0 = v00.shape[0]
    out = np.zeros((lmax, n0, n0))
    out[0] = v00
    if v11.size == 0:
        if lmax >= 2 and v01.size:
            out[1] = v01 @ v10
        return out
    tail = v01.copy()
    for l in range(2, lmax + 1):
        out[l - 1] = tail @ v10
        tail = tail @ v11
    return out


def conditional_r(d_weighted: np.ndarray, v_tilde: np.ndarray) -> np.ndarray:
    """Conditional expectation of ``rho**Delta`` per return transition.

    Entries with return probability at or below ``ZERO_PROB`` are set to
    zero (conditioning on an impossible event), keeping the matrix total so
    maxima and the lifted-matrix construction stay well defined.
    """
    safe = np.where(v_tilde > ZERO_PROB, v_tilde, 1.0)
    r = np.where(v_tilde > ZERO_PROB, d_weighted / safe, 0.0)
    return np.clip(r, 0.0, None)


def build_F(v_tilde: np.ndarray, pi: Distribution) -> np.ndarray:
    """Time-reversed return chain, columns f_i.

    F = diag(pi) V~ diag(pi)^{-1}; column i is the law of the previous
    open-loop state given the current one, so every column sums to one.
    """
    p = pi.weights
    if (p <= 1e-14).any():
        bad = int(np.argmin(p))
        raise ZeroStationaryMassError(
            f"stationary mass {p[bad]:g} at state {bad} is numerically zero"
        )
    return (p[:, None] * v_tilde) / p[None, :]


def build_U(r: np.ndarray, f: np.ndarray, pi: Distribution) -> np.ndarray:
    """Lifted transition-pair matrix whose spectral radius drives ``omega``.

    Block row i (one per destination state) is block-diagonal over the
    "via" state k, with the k-th diagonal block the row vector
    ``r[k, i] * pi[k]**2 * f[:, k]``; the squared stationary weight of the
    via state matches the published reference values for this statistic.
    Index form:

        U[i*n + k, k*n + k'] = r[k, i] * pi[k]^2 * f[k', k]

    (0-indexed, n = number of open-loop states); zero elsewhere.
    """
    n0 = r.shape[0]
    p2 = pi.weights**2
    u = np.zeros((n0 * n0, n0 * n0))
    for i in range(n0):
        for k in range(n0):
            u[i * n0 + k, k * n0 : (k + 1) * n0] = r[k, i] * p2[k] * f[:, k]
    return u


def analyze_cycles(
    z: StochasticMatrix, s0, margins: PlantMargins
) -> CycleAnalysis:
    """Run the block/return-chain/lift pipeline on an irreducible chain."""
    n0 = len(set(int(i) for i in s0))
    if n0 > S0_SIZE_LIMIT:
        raise SizeLimitError(
            f"{n0} open-loop states would need a dense {n0**2}x{n0**2} lifted matrix"
            f" (limit {S0_SIZE_LIMIT})"
        )
    blocks = partition(z, s0)
    s0_sorted = sorted(set(int(i) for i in s0))
    labels = tuple(z.labels[i] for i in s0_sorted)
    v_tilde, weighted = return_chain(blocks, margins.rho, labels)
    pi = stationary(v_tilde)
    r = conditional_r(weighted, v_tilde.entries)
    f = build_F(v_tilde.entries, pi)
    u = build_U(r, f, pi)
    return CycleAnalysis(blocks, v_tilde, pi, r, f, u)


def certify(z: StochasticMatrix, s0, margins: PlantMargins) -> StabilityReport:
    """Full certificate for a labeled chain and its open-loop state set.

    Transient states are removed first (with ``s0`` remapped accordingly),
    so ``z`` may be either the raw enumerated chain or an already
    irreducible one.
    """
    recurrent, transient = recurrent_states(z)
    s0 = sorted(set(int(i) for i in s0))
    if transient.size:
        zr = restrict(z, recurrent)
        pos = {int(old): new for new, old in enumerate(recurrent)}
        s0r = sorted(pos[i] for i in s0 if i in pos)
    else:
        zr, s0r = z, s0
    if not s0r:
        raise NoClosedLoopStatesError("no recurrent open-loop states")
    if len(s0r) == zr.n:
        raise NoClosedLoopStatesError(
            "every recurrent state is open-loop; the loop never closes"
        )
    analysis = analyze_cycles(zr, s0r, margins)
    max_r = float(analysis.r.max())
    lam = spectral_radius(analysis.u)
    omega_prime = margins.ratio * max_r
    omega = margins.ratio * lam
    if omega > omega_prime + 1e-9:
        raise AssertionError(
            f"spectral bound {omega!r} exceeds worst-case bound {omega_prime!r}"
        )
    irreducible, period = is_irreducible_aperiodic(analysis.v_tilde)
    counts = {
        "total": z.n,
        "transient": int(transient.size),
        "recurrent": int(recurrent.size),
        "s0": len(s0r),
    }
    return StabilityReport(
        omega_prime=omega_prime,
        omega=omega,
        verdict_loose=omega_prime < 1.0,
        verdict_tight=omega < 1.0,
        ia_irreducible=irreducible,
        ia_period=period,
        counts=counts,
        max_r=max_r,
        lambda_max_u=lam,
        rho=margins.rho,
        alpha=margins.alpha,
    )
