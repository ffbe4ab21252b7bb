"""Plant models, control policies and the tentative-command generator.

A plant is anything implementing the small :class:`PlantModel` interface:
a deterministic one-step map ``step(x, u, w)``, a stabilizing policy
``policy(x)``, a Lyapunov candidate ``lyapunov(x)`` and the state/input
dimensions.  Implementations must be stateless so they can be shared
across concurrent simulation workers.

Two plants ship with the library and are available by registry name:

* ``"saturated2d"`` — open-loop unstable constrained 2-state plant with a
  saturating nonlinearity;
* ``"linear1d"`` — scalar linear plant ``x+ = 2x + u`` with ``u = -1.5x``,
  handy because its contraction/expansion ratios are exact (0.5 and 2.0).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


class PlantModel(ABC):
    """Deterministic discrete-time plant with a policy and a Lyapunov candidate."""

    @abstractmethod
    def step(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Next state from state ``x``, input ``u`` and additive noise ``w``."""

    @abstractmethod
    def policy(self, x: np.ndarray) -> np.ndarray:
        """Stabilizing feedback input for state ``x``."""

    @abstractmethod
    def lyapunov(self, x: np.ndarray) -> float:
        """Nonnegative energy-like function, zero at the origin."""

    @abstractmethod
    def dims(self) -> tuple[int, int]:
        """(state dimension, input dimension)."""


def sat(v, lo: float = -10.0, hi: float = 10.0):
    """Elementwise saturation to [lo, hi]; identity inside the band."""
    return np.clip(v, lo, hi)


class SaturatedPlant(PlantModel):
    """Two-state constrained plant:

        x1+ = x2 + u1 + w1
        x2+ = -sat(x1 + x2) + u2 + w2

    with policy kappa(x) = (-x2, 0.505 * sat(x1 + x2)).
    """

    def step(self, x, u, w):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        return np.array(
            [x[1] + u[0] + w[0], -sat(x[0] + x[1]) + u[1] + w[1]]
        )

    def policy(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([-x[1], 0.505 * sat(x[0] + x[1])])

    def lyapunov(self, x):
        return float(np.linalg.norm(x))

    def dims(self):
        return 2, 2


class LinearPlant(PlantModel):
    """Scalar plant x+ = 2x + u + w with policy u = -1.5x and V = |x|.

    Closed loop contracts by exactly 0.5 per step; open loop expands by
    exactly 2.0, so margins (rho=0.5, alpha=2.0) are analytic.
    """

    def step(self, x, u, w):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        return 2.0 * x + u + w

    def policy(self, x):
        return -1.5 * np.asarray(x, dtype=float)

    def lyapunov(self, x):
        return float(np.abs(np.asarray(x, dtype=float)).sum())

    def dims(self):
        return 1, 1


@dataclass(frozen=True)
class NoiseSpec:
    """Process-noise description: kind and per-coordinate variance."""

    kind: str = "none"
    variance: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian-iid"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.variance < 0:
            raise ConfigError("noise variance must be nonnegative")

    def sample(self, rng: np.random.Generator, steps: int, dim: int) -> np.ndarray:
        if self.kind == "none" or self.variance == 0.0:
            return np.zeros((steps, dim))
        return rng.normal(0.0, np.sqrt(self.variance), size=(steps, dim))


_REGISTRY: dict[str, type[PlantModel]] = {
    "saturated2d": SaturatedPlant,
    "linear1d": LinearPlant,
}


def register_plant(name: str, factory: type[PlantModel]) -> None:
    """Register a custom plant class under a config-addressable name."""
    _REGISTRY[name] = factory


def make_plant(name: str) -> PlantModel:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ConfigError(
            f"unknown plant {name!r}; registered: {sorted(_REGISTRY)}"
        ) from None


def generate_sequence(model: PlantModel, x: np.ndarray, n: int) -> list[np.ndarray]:
    """Tentative command sequence from a noise-free policy rollout.

    u_1 = policy(x); each later command is the policy evaluated on the
    noise-free rollout under the commands generated so far.  The sequence
    for n+1 always extends the sequence for n (prefix property).
    """
    if n < 1:
        raise ConfigError("sequence length must be at least 1")
    x_i = np.asarray(x, dtype=float)
    zero_w = np.zeros(model.dims()[0])
    commands = []
    for i in range(n):
        u_i = model.policy(x_i)
        commands.append(u_i)
        if i + 1 < n:
            x_i = model.step(x_i, u_i, zero_w)
    return commands


@dataclass(frozen=True)
class MarginCheck:
    """Sampled falsification report for supplied margins."""

    ratio_closed: float
    ratio_open: float
    rho_violated: bool
    alpha_violated: bool
    samples: int


def check_margins(
    model: PlantModel,
    margins,
    samples: int,
    box: float | tuple = 10.0,
    seed: int = 0,
) -> MarginCheck:
    """Sample states uniformly and report worst Lyapunov ratios.

    This falsifies (never proves) the supplied contraction/expansion
    margins: it reports the max over samples of V(f(x, kappa(x), 0))/V(x)
    and V(f(x, 0, 0))/V(x), skipping states with V below 1e-12.
    """
    if samples < 1:
        raise ConfigError("need at least one sample")
    l_s, l_u = model.dims()
    rng = np.random.default_rng(seed)
    lo, hi = (-box, box) if np.isscalar(box) else box
    zero_u = np.zeros(l_u)
    zero_w = np.zeros(l_s)
    worst_closed = 0.0
    worst_open = 0.0
    used = 0
    for _ in range(samples):
        x = rng.uniform(lo, hi, size=l_s)
        v = model.lyapunov(x)
        if v < 1e-12:
            continue
        used += 1
        worst_closed = max(worst_closed, model.lyapunov(model.step(x, model.policy(x), zero_w)) / v)
        worst_open = max(worst_open, model.lyapunov(model.step(x, zero_u, zero_w)) / v)
    tol = 1e-9  # keep round-off from flagging exact-margin plants
    return MarginCheck(
        ratio_closed=worst_closed,
        ratio_open=worst_open,
        rho_violated=worst_closed > margins.rho * (1.0 + tol),
        alpha_violated=worst_open > margins.alpha * (1.0 + tol),
        samples=used,
    )
