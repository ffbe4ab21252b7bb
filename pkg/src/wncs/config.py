"""Config-file ingestion.

Configs are INI files with up to five sections:

``[network]``
    joint_channel / compute matrices (first line of the value is
    ``rows cols``, following indented lines are the rows, row-major),
    ca_drop, sc_drop (one probability per sensor-link level),
    buf_controller, buf_actuator, initial ``B0 Bp0 N0`` and an optional
    l0_policy (``literal`` or ``forced-drop``).

``[raw-chain]``
    An escape hatch that injects a labeled chain directly, bypassing the
    protocol construction: either an inline ``matrix`` (plus optional
    ``labels`` and ``s0`` index list) or ``csv = <path>`` pointing at a
    chain dump.  When ``s0`` is omitted the open-loop states are read from
    the labels.

``[margins]``  rho, alpha.

``[plant]``    name, noise (none | gaussian-iid), variance, x0.

``[run]``      horizon, seeds (list of distinct integers), mode.

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .markov import StochasticMatrix, validate_stochastic
from .model import NetworkConfig, chain_from_csv, parse_z_label
from .plants import NoiseSpec
from .stability import PlantMargins

_SECTION_KEYS = {
    "network": {
        "joint_channel",
        "compute",
        "ca_drop",
        "sc_drop",
        "buf_controller",
        "buf_actuator",
        "initial",
        "l0_policy",
    },
    "raw-chain": {"matrix", "labels", "s0", "csv"},
    "margins": {"rho", "alpha"},
    "plant": {"name", "noise", "variance", "x0"},
    "run": {"horizon", "seeds", "mode"},
}


@dataclass(frozen=True)
class RawChainSpec:
    chain: StochasticMatrix
    s0: tuple[int, ...] | None

    def s0_indices(self) -> tuple[int, ...]:
        """Declared open-loop indices, or the ones encoded in the labels."""
        if self.s0 is not None:
            return self.s0
        try:
            flags = [parse_z_label(lbl).lam_a == 0 for lbl in self.chain.labels]
        except ConfigError:
            raise ConfigError(
                "[raw-chain] needs an explicit s0 list: labels do not encode"
                " buffer lengths"
            ) from None
        return tuple(i for i, f in enumerate(flags) if f)


@dataclass(frozen=True)
class PlantSection:
    name: str
    noise: NoiseSpec
    x0: tuple[float, ...]


@dataclass(frozen=True)
class RunSection:
    horizon: int
    seeds: tuple[int, ...]
    mode: str


@dataclass(frozen=True)
class FileConfig:
    """Parsed config file; sections the file omits are None."""

    network: NetworkConfig | None
    raw_chain: RawChainSpec | None
    margins: PlantMargins | None
    plant: PlantSection | None
    run: RunSection | None
    path: str

    def require(self, name: str):
        value = getattr(self, name.replace("-", "_"))
        if value is None:
            raise ConfigError(f"{self.path}: missing required section [{name}]")
        return value


def _floats(raw: str, key: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split()]
    except ValueError:
        raise ConfigError(f"{key}: expected whitespace-separated numbers, got {raw!r}") from None


def _ints(raw: str, key: str) -> list[int]:
    try:
        return [int(tok) for tok in raw.split()]
    except ValueError:
        raise ConfigError(f"{key}: expected whitespace-separated integers, got {raw!r}") from None


def _one_float(section, key: str) -> float:
    vals = _floats(section[key], key)
    if len(vals) != 1:
        raise ConfigError(f"{key}: expected a single number")
    return vals[0]


def _one_int(section, key: str) -> int:
    vals = _ints(section[key], key)
    if len(vals) != 1:
        raise ConfigError(f"{key}: expected a single integer")
    return vals[0]


def parse_matrix(raw: str, key: str) -> np.ndarray:
    """Parse ``rows cols`` followed by row-major entries, one row per line."""
    lines = [ln.strip() for ln in raw.strip().splitlines() if ln.strip()]
    if not lines:
        raise ConfigError(f"{key}: empty matrix")
    dims = _ints(lines[0], key)
    if len(dims) != 2 or dims[0] < 1 or dims[1] < 1:
        raise ConfigError(f"{key}: first line must be 'rows cols', got {lines[0]!r}")
    rows, cols = dims
    if len(lines) - 1 != rows:
        raise ConfigError(f"{key}: declared {rows} rows, found {len(lines) - 1}")
    data = []
    for r, line in enumerate(lines[1:]):
        vals = _floats(line, key)
        if len(vals) != cols:
            raise ConfigError(f"{key}: row {r} has {len(vals)} entries, expected {cols}")
        data.append(vals)
    return np.array(data)


def _check_keys(parser: configparser.ConfigParser, path: str) -> None:
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        unknown = set(parser[section]) - _SECTION_KEYS[section]
        if unknown:
            raise ConfigError(
                f"{path}: unknown key(s) {sorted(unknown)} in [{section}]"
            )


def _parse_network(section) -> NetworkConfig:
    for key in ("joint_channel", "compute", "ca_drop", "sc_drop",
                "buf_controller", "buf_actuator", "initial"):
        if key not in section:
            raise ConfigError(f"[network] is missing key {key!r}")
    joint = parse_matrix(section["joint_channel"], "joint_channel")
    compute = parse_matrix(section["compute"], "compute")
    initial = _ints(section["initial"], "initial")
    if len(initial) != 3:
        raise ConfigError("initial: expected 'B0 Bp0 N0'")
    return NetworkConfig(
        joint_channel=validate_stochastic(joint),
        compute=validate_stochastic(compute),
        ca_drop=_one_float(section, "ca_drop"),
        sc_drop=tuple(_floats(section["sc_drop"], "sc_drop")),
        buf_controller=_one_int(section, "buf_controller"),
        buf_actuator=_one_int(section, "buf_actuator"),
        initial=tuple(initial),
        l0_policy=section.get("l0_policy", "literal").strip(),
    )


def _parse_raw_chain(section, base: Path) -> RawChainSpec:
    has_matrix = "matrix" in section
    has_csv = "csv" in section
    if has_matrix == has_csv:
        raise ConfigError("[raw-chain] needs exactly one of 'matrix' or 'csv'")
    if has_csv:
        csv_path = Path(section["csv"].strip())
        if not csv_path.is_absolute():
            csv_path = base / csv_path
        chain = chain_from_csv(csv_path)
    else:
        matrix = parse_matrix(section["matrix"], "matrix")
        labels: tuple[str, ...] = ()
        if "labels" in section:
            labels = tuple(section["labels"].split())
        chain = validate_stochastic(matrix, labels)
    s0 = tuple(_ints(section["s0"], "s0")) if "s0" in section else None
    return RawChainSpec(chain=chain, s0=s0)


def _parse_plant(section) -> PlantSection:
    if "name" not in section:
        raise ConfigError("[plant] is missing key 'name'")
    kind = section.get("noise", "none").strip()
    variance = _one_float(section, "variance") if "variance" in section else 0.0
    x0 = tuple(_floats(section["x0"], "x0")) if "x0" in section else ()
    return PlantSection(
        name=section["name"].strip(),
        noise=NoiseSpec(kind=kind, variance=variance),
        x0=x0,
    )


def _parse_run(section) -> RunSection:
    for key in ("horizon", "seeds"):
        if key not in section:
            raise ConfigError(f"[run] is missing key {key!r}")
    seeds = tuple(_ints(section["seeds"], "seeds"))
    if not seeds:
        raise ConfigError("seeds: need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: entries must be distinct")
    return RunSection(
        horizon=_one_int(section, "horizon"),
        seeds=seeds,
        mode=section.get("mode", "dual-buffer").strip(),
    )


def parse_config(path) -> FileConfig:
    """Parse and validate a config file; raises ConfigError on any defect."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    _check_keys(parser, str(path))

    try:
        network = _parse_network(parser["network"]) if "network" in parser else None
        raw_chain = (
            _parse_raw_chain(parser["raw-chain"], path.parent)
            if "raw-chain" in parser
            else None
        )
        margins = None
        if "margins" in parser:
            sec = parser["margins"]
            for key in ("rho", "alpha"):
                if key not in sec:
                    raise ConfigError(f"[margins] is missing key {key!r}")
            try:
                margins = PlantMargins(
                    rho=_one_float(sec, "rho"), alpha=_one_float(sec, "alpha")
                )
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        plant = _parse_plant(parser["plant"]) if "plant" in parser else None
        run_sec = _parse_run(parser["run"]) if "run" in parser else None
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    return FileConfig(
        network=network,
        raw_chain=raw_chain,
        margins=margins,
        plant=plant,
        run=run_sec,
        path=str(path),
    )
