"""Experiment configuration files (YAML).

Fields ending in ``_dbw`` / ``_db`` are converted to linear scale on load;
everything downstream works in watts and nats.  Example::

    name: prf_sweep
    network: {num_bs: 2, antennas: 4, groups_per_bs: 2, users_per_group: 2,
              sinr_target_db: 0, noise_dbw: 0}
    power: {pa_efficiency: 0.35, rf_chain_power: 1.0, static_power: 2.0,
            max_antenna_power_dbw: 9}
    sca: {alpha: 1.5, epsilon: 0.001}
    sweep: {P_RF: [0.5, 1, 2]}
    trials: 20
    seed: 1
    variants: [full, simple, no-as]
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from ..netmodel import NetworkConfig, PowerModel, db_to_linear
from ..sca import VARIANTS, ScaOptions

SWEEP_AXES = ("alpha", "P_RF", "N", "gamma_bar_db")

_NETWORK_KEYS = {"num_bs", "antennas", "groups_per_bs", "users_per_group", "sinr_target_db", "noise_dbw"}
_POWER_KEYS = {"pa_efficiency", "rf_chain_power", "static_power", "max_antenna_power_dbw"}
_SCA_KEYS = {"alpha", "epsilon", "tol", "max_iter", "max_feas_iter", "use_remark1", "penalty", "warm_start_refit"}
_TOP_KEYS = {"name", "network", "power", "sca", "sweep", "trials", "seed", "variants", "output", "workers", "oracle"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    num_bs: int = 2
    antennas: int = 4
    groups_per_bs: int = 2
    users_per_group: int = 2
    sinr_target_db: float | None = 0.0
    noise_dbw: float = 0.0

    def build(self) -> NetworkConfig:
        return NetworkConfig.uniform(
            self.num_bs, self.antennas, self.groups_per_bs, self.users_per_group,
            self.sinr_target_db, self.noise_dbw,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    network: NetworkSpec = field(default_factory=NetworkSpec)
    power: PowerModel = field(default_factory=PowerModel)
    sca: ScaOptions = field(default_factory=ScaOptions)
    sweep: dict = field(default_factory=dict)
    trials: int = 1
    seed: int = 0
    variants: tuple[str, ...] = VARIANTS
    output_dir: str = "results"
    csv_name: str | None = None
    workers: int = 1
    oracle: bool = False

    def grid(self) -> list[dict]:
        """Cartesian product of the sweep axes, in file order."""
        if not self.sweep:
            return [{}]
        axes = list(self.sweep)
        return [dict(zip(axes, vals)) for vals in itertools.product(*self.sweep.values())]

    def at(self, point: dict):
        """(NetworkConfig, PowerModel, ScaOptions) for one grid point."""
        net, pm, sca = self.network, self.power, self.sca
        for axis, value in point.items():
            if axis == "alpha":
                sca = replace(sca, alpha=float(value))
            elif axis == "P_RF":
                pm = replace(pm, rf_chain_power=float(value))
            elif axis == "N":
                net = replace(net, antennas=int(value))
            elif axis == "gamma_bar_db":
                net = replace(net, sinr_target_db=float(value))
        return net.build(), pm, sca

    @property
    def csv_path(self) -> Path:
        out = os.environ.get("EEMCAST_OUTPUT_DIR", self.output_dir)
        return Path(out) / (self.csv_name or f"{self.name}.csv")

    @property
    def num_workers(self) -> int:
        env = os.environ.get("EEMCAST_WORKERS")
        return int(env) if env else self.workers


def _check_keys(section: str, data: dict, allowed: set):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


def parse_config(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    _check_keys("config", data, _TOP_KEYS)

    net = dict(data.get("network") or {})
    _check_keys("network", net, _NETWORK_KEYS)
    network = NetworkSpec(**net)
    if min(network.num_bs, network.antennas, network.groups_per_bs, network.users_per_group) < 1:
        raise ConfigError("network counts must be >= 1")

    pw = dict(data.get("power") or {})
    _check_keys("power", pw, _POWER_KEYS)
    if "max_antenna_power_dbw" in pw:
        pw["max_antenna_power"] = db_to_linear(float(pw.pop("max_antenna_power_dbw")))
    try:
        power = PowerModel(**{k: float(v) for k, v in pw.items()})
        sca_d = dict(data.get("sca") or {})
        _check_keys("sca", sca_d, _SCA_KEYS)
        sca = ScaOptions(**sca_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    sweep = {}
    for axis, values in (data.get("sweep") or {}).items():
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
        values = list(values if isinstance(values, (list, tuple)) else [values])
        if not values:
            raise ConfigError(f"sweep axis {axis} has no values")
        if axis == "N" and any(int(v) < 1 for v in values):
            raise ConfigError("antenna counts must be >= 1")
        if axis in ("alpha",) and any(float(v) < 1 for v in values):
            raise ConfigError("alpha values must be >= 1")
        if axis == "P_RF" and any(float(v) <= 0 for v in values):
            raise ConfigError("P_RF values must be positive")
        sweep[axis] = values

    trials = int(data.get("trials", 1))
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    variants = tuple(data.get("variants") or VARIANTS)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variant(s) {bad}")
    output = dict(data.get("output") or {})
    _check_keys("output", output, {"dir", "csv"})
    out_dir = output.get("dir", "results")
    if base_dir is not None and not Path(out_dir).is_absolute():
        out_dir = str(base_dir / out_dir)
    return ExperimentConfig(
        name=str(data.get("name", "experiment")),
        network=network,
        power=power,
        sca=sca,
        sweep=sweep,
        trials=trials,
        seed=int(data.get("seed", 0)),
        variants=tuple(v for v in VARIANTS if v in variants),
        output_dir=out_dir,
        csv_name=output.get("csv"),
        workers=int(data.get("workers", 1)),
        oracle=bool(data.get("oracle", False)),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, base_dir=path.parent)
