"""Finite Markov-chain utilities on dense matrices.

Validation, reachability/transient-state detection, restriction to closed
classes, stationary distributions, spectral radii and irreducibility /
aperiodicity checks.  Everything works on plain dense ``numpy`` arrays;
state spaces here stay in the low thousands, so no sparse machinery is used
beyond the SCC search.

All returned objects are immutable and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    ConfigError,
    LeakyRestrictionError,
    NegativeEntryError,
    NoConvergenceError,
    NonSquareError,
    NotIrreducibleError,
    RowSumError,
)

# An entry counts as an edge of the support digraph iff it exceeds this.
# Separates numerical noise from genuine support; used by the SCC and
# period computations.
EDGE_EPS = 1e-12

ROW_SUM_TOL = 1e-9
STATIONARY_RESIDUAL_TOL = 1e-10

# Dense eigensolve below this size, shifted power iteration above.
DENSE_EIG_LIMIT = 512
POWER_ITERATION_CAP = 100_000


def _default_labels(n: int) -> tuple[str, ...]:
    return tuple(f"s{i}" for i in range(n))


@dataclass(frozen=True)
class StochasticMatrix:
    """Row-stochastic transition matrix with labeled states.

    Invariants (checked on construction): entries in [0, 1], every row sums
    to 1 within ``ROW_SUM_TOL``, labels unique and as many as rows.
    """

    entries: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.entries, dtype=float))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise NonSquareError(f"expected a square matrix, got shape {m.shape}")
        if (m < 0).any():
            i, j = np.argwhere(m < 0)[0]
            raise NegativeEntryError(f"negative entry {m[i, j]!r} at ({i}, {j})")
        sums = m.sum(axis=1)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if bad.any():
            row = int(np.argmax(bad))
            raise RowSumError(row, float(sums[row]))
        labels = tuple(self.labels) or _default_labels(m.shape[0])
        if len(labels) != m.shape[0]:
            raise NonSquareError(
                f"{len(labels)} labels for a {m.shape[0]}-state matrix"
            )
        if len(set(labels)) != len(labels):
            raise ConfigError("state labels must be unique")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def support(self) -> np.ndarray:
        """Boolean adjacency of the support digraph (entries > EDGE_EPS)."""
        return self.entries > EDGE_EPS


@dataclass(frozen=True)
class SubstochasticMatrix:
    """Nonnegative matrix whose rows may sum to at most one."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.entries, dtype=float))
        if (m < 0).any():
            i, j = np.argwhere(m < 0)[0]
            raise NegativeEntryError(f"negative entry {m[i, j]!r} at ({i}, {j})")
        if m.size and (m > 1.0).any():
            i, j = np.argwhere(m > 1.0)[0]
            raise NegativeEntryError(f"entry {m[i, j]!r} at ({i}, {j}) exceeds 1")
        if m.size:
            sums = m.sum(axis=1)
            if (sums > 1.0 + ROW_SUM_TOL).any():
                row = int(np.argmax(sums))
                raise RowSumError(row, float(sums[row]))
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class Distribution:
    """Probability vector: nonnegative weights summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        if (w < 0).any():
            raise NegativeEntryError("distribution has a negative weight")
        total = float(w.sum())
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise RowSumError(0, total)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)


def validate_stochastic(m, labels: tuple[str, ...] | None = None) -> StochasticMatrix:
    """Validate a raw matrix as row-stochastic.

    Raises NonSquareError, NegativeEntryError or RowSumError (carrying the
    offending row index and its sum).
    """
    return StochasticMatrix(np.asarray(m, dtype=float), tuple(labels or ()))


def _strong_components(support: np.ndarray) -> tuple[int, np.ndarray]:
    graph = csr_matrix(support)
    return connected_components(graph, directed=True, connection="strong")


def recurrent_states(m: StochasticMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Partition state indices into (recurrent, transient).

    Recurrent states are those in closed strongly-connected components of
    the support digraph; every other state is transient.  Both arrays are
    sorted ascending.
    """
    support = m.support()
    ncomp, labels = _strong_components(support)
    recurrent_mask = np.zeros(m.n, dtype=bool)
    for comp in range(ncomp):
        members = labels == comp
        # closed iff no edge leaves the component
        if not support[np.ix_(members, ~members)].any():
            recurrent_mask |= members
    idx = np.arange(m.n)
    return idx[recurrent_mask], idx[~recurrent_mask]


def restrict(m: StochasticMatrix, keep) -> StochasticMatrix:
    """Principal submatrix over ``keep``, relabeled, still row-stochastic.

    ``keep`` must be a union of closed communicating classes; otherwise the
    restricted rows leak mass and LeakyRestrictionError is raised.
    """
    keep = np.asarray(sorted(set(int(i) for i in keep)), dtype=int)
    sub = m.entries[np.ix_(keep, keep)]
    sums = sub.sum(axis=1) if sub.size else np.empty(0)
    low = sums < 1.0 - ROW_SUM_TOL
    if low.any():
        row = int(np.argmax(low))
        raise LeakyRestrictionError(row, float(sums[row]))
    return StochasticMatrix(sub, tuple(m.labels[i] for i in keep))


def stationary(m: StochasticMatrix) -> Distribution:
    """Stationary distribution of an irreducible chain.

    Solves (m^T - I) pi = 0 directly with the last equation replaced by the
    normalization sum(pi) = 1; deterministic and reproducible across
    platforms.  The residual ||pi^T m - pi^T||_inf is checked against
    ``STATIONARY_RESIDUAL_TOL``.
    """
    irreducible, _ = is_irreducible_aperiodic(m)
    if not irreducible:
        raise NotIrreducibleError("stationary distribution requires an irreducible chain")
    n = m.n
    a = m.entries.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    residual = float(np.max(np.abs(pi @ m.entries - pi)))
    if residual > STATIONARY_RESIDUAL_TOL:
        raise NoConvergenceError(1, f"stationary solve residual {residual:g}")
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    return Distribution(pi)


def spectral_radius(m) -> float:
    """Spectral radius of a nonnegative square matrix.

    Dense eigensolve for n <= DENSE_EIG_LIMIT; otherwise power iteration on
    the diagonally shifted matrix (the shift moves every eigenvalue by the
    same amount, so the Perron root is recovered exactly).
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquareError(f"expected a square matrix, got shape {a.shape}")
    if (a < 0).any():
        raise NegativeEntryError("spectral_radius expects a nonnegative matrix")
    n = a.shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_EIG_LIMIT:
        return float(np.max(np.abs(np.linalg.eigvals(a))))
    # Shift makes the dominant eigenvalue simple-positive even for
    # periodic/nilpotent support.
    shift = max(float(a.max()), 1.0) * 1e-3
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for it in range(1, POWER_ITERATION_CAP + 1):
        w = a @ v + shift * v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        w /= norm
        lam_new = float(w @ (a @ w + shift * w))
        if it > 1 and abs(lam_new - lam) <= 1e-12 * max(1.0, abs(lam_new)):
            return max(lam_new - shift, 0.0)
        lam = lam_new
        v = w
    raise NoConvergenceError(POWER_ITERATION_CAP)


def _period_of_state0_class(support: np.ndarray, labels: np.ndarray) -> int:
    """gcd of cycle lengths through state 0, via BFS level decomposition."""
    import math
    from collections import deque

    members = np.where(labels == labels[0])[0]
    in_class = np.zeros(support.shape[0], dtype=bool)
    in_class[members] = True
    if not support[0, :][in_class].any() and not support[:, 0][in_class].any():
        # isolated state without a self-loop has no cycle; call the period 1
        return 1
    level = {0: 0}
    queue = deque([0])
    g = 0
    while queue:
        u = queue.popleft()
        for v in np.where(support[u] & in_class)[0]:
            v = int(v)
            if v not in level:
                level[v] = level[u] + 1
                queue.append(v)
            else:
                g = math.gcd(g, level[u] + 1 - level[v])
    return abs(g) if g != 0 else 1


def is_irreducible_aperiodic(m: StochasticMatrix) -> tuple[bool, int]:
    """(irreducible, period) of the chain's support digraph.

    Irreducible iff the support digraph is strongly connected.  The period
    is a structural property, computed on the support only (probabilities
    ignored) for the class containing state 0.
    """
    support = m.support()
    ncomp, labels = _strong_components(support)
    period = _period_of_state0_class(support, labels)
    return ncomp == 1, period


def sample_path(
    m: StochasticMatrix,
    steps: int,
    rng: np.random.Generator,
    initial: int = 0,
) -> np.ndarray:
    """Sample a state path of length ``steps + 1`` starting from ``initial``.

    Inverse-CDF sampling with one uniform draw per step, so the path is a
    deterministic function of the generator state.
    """
    cum = np.cumsum(m.entries, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(steps)
    path = np.empty(steps + 1, dtype=np.int64)
    path[0] = initial
    s = initial
    for t in range(steps):
        s = int(np.searchsorted(cum[s], u[t], side="right"))
        path[t + 1] = s
    return path
