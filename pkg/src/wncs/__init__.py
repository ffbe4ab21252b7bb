"""Stability certification and simulation for dual-buffer anytime control
over Markov fading links.

The library answers two questions about a networked control loop whose
sensor and actuator links drop packets and whose controller has a
time-varying computation budget:

* analysis — does the configured network keep a given plant stochastically
  stable?  (:func:`wncs.stability.certify` and the ``analyze`` CLI)
* simulation — how does the dual-buffer protocol actually behave on a
  concrete plant, and how does it compare to a single-buffer baseline?
  (:mod:`wncs.simulate` and the ``simulate`` CLI)

The ``validate`` CLI cross-checks the two against each other.
"""

from . import errors
from .markov import (
    Distribution,
    StochasticMatrix,
    SubstochasticMatrix,
    is_irreducible_aperiodic,
    recurrent_states,
    restrict,
    sample_path,
    spectral_radius,
    stationary,
    validate_stochastic,
)
from .model import (
    NetworkConfig,
    SlotOutcome,
    ZState,
    build_z_chain,
    chain_from_csv,
    chain_to_csv,
    compute_L,
    enumerate_z,
    parse_z_label,
    split_s0,
    step_lengths,
)
from .plants import (
    LinearPlant,
    NoiseSpec,
    PlantModel,
    SaturatedPlant,
    check_margins,
    generate_sequence,
    make_plant,
    register_plant,
)
from .simulate import (
    BufferPair,
    CycleStats,
    MonteCarloReport,
    SimConfig,
    SimTrace,
    cycle_stats,
    monte_carlo,
    run,
    run_baseline,
)
from .stability import (
    CycleAnalysis,
    PlantMargins,
    StabilityReport,
    analyze_cycles,
    build_F,
    build_U,
    certify,
    conditional_r,
    delta_law,
    partition,
    return_chain,
    return_chain_series,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "Distribution",
    "StochasticMatrix",
    "SubstochasticMatrix",
    "is_irreducible_aperiodic",
    "recurrent_states",
    "restrict",
    "sample_path",
    "spectral_radius",
    "stationary",
    "validate_stochastic",
    "NetworkConfig",
    "SlotOutcome",
    "ZState",
    "build_z_chain",
    "chain_from_csv",
    "chain_to_csv",
    "compute_L",
    "enumerate_z",
    "parse_z_label",
    "split_s0",
    "step_lengths",
    "LinearPlant",
    "NoiseSpec",
    "PlantModel",
    "SaturatedPlant",
    "check_margins",
    "generate_sequence",
    "make_plant",
    "register_plant",
    "BufferPair",
    "CycleStats",
    "MonteCarloReport",
    "SimConfig",
    "SimTrace",
    "cycle_stats",
    "monte_carlo",
    "run",
    "run_baseline",
    "CycleAnalysis",
    "PlantMargins",
    "StabilityReport",
    "analyze_cycles",
    "build_F",
    "build_U",
    "certify",
    "conditional_r",
    "delta_law",
    "partition",
    "return_chain",
    "return_chain_series",
]
