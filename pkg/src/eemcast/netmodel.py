"""Multi-cell multigroup multicast network model.

Topology, Rayleigh channels, the transmitter power model, and evaluation of
SINR, rates, power and energy efficiency for a candidate solution.  Rates are
in nats/s/Hz throughout; divide by ``LN2`` for bits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LN2 = float(np.log(2.0))


def db_to_linear(db: float) -> float:
    return float(10.0 ** (db / 10.0))


@dataclass(frozen=True)
class NetworkConfig:
    """Cells, groups and users.

    Groups are numbered so that the groups of BS ``b`` form a contiguous
    block, and every user belongs to exactly one group.
    """

    antennas_per_bs: tuple[int, ...]
    groups_per_bs: tuple[int, ...]
    users_of_group: tuple[tuple[int, ...], ...]
    sinr_targets: np.ndarray
    noise_power: np.ndarray
    bs_of_group: tuple[int, ...] = field(init=False)
    group_of_user: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.antennas_per_bs) != len(self.groups_per_bs):
            raise ValueError("antennas_per_bs and groups_per_bs lengths differ")
        if any(n < 0 for n in self.antennas_per_bs):
            raise ValueError("antenna counts must be non-negative")
        if sum(self.groups_per_bs) != len(self.users_of_group):
            raise ValueError("groups_per_bs does not match number of groups")
        bs_of_group = tuple(
            b for b, count in enumerate(self.groups_per_bs) for _ in range(count)
        )
        object.__setattr__(self, "bs_of_group", bs_of_group)

        users = [k for grp in self.users_of_group for k in grp]
        num_users = len(users)
        if sorted(users) != list(range(num_users)):
            raise ValueError("user sets must be disjoint and cover users 0..K-1")
        group_of_user = np.empty(num_users, dtype=int)
        for g, grp in enumerate(self.users_of_group):
            if not grp:
                raise ValueError(f"group {g} has no users")
            group_of_user[list(grp)] = g
        object.__setattr__(self, "group_of_user", group_of_user)

        targets = np.asarray(self.sinr_targets, dtype=float).reshape(-1)
        noise = np.asarray(self.noise_power, dtype=float).reshape(-1)
        if targets.shape != (num_users,) or noise.shape != (num_users,):
            raise ValueError("per-user arrays must have length K")
        if np.any(targets < 0) or np.any(noise <= 0):
            raise ValueError("SINR targets must be >= 0 and noise powers > 0")
        object.__setattr__(self, "sinr_targets", targets)
        object.__setattr__(self, "noise_power", noise)

    @classmethod
    def uniform(
        cls,
        num_bs: int,
        antennas: int,
        groups_per_bs: int,
        users_per_group: int,
        sinr_target_db: float | None = 0.0,
        noise_dbw: float = 0.0,
    ) -> "NetworkConfig":
        """Symmetric deck: every BS has the same antennas, groups and group size.

        ``sinr_target_db=None`` means no QoS requirement (target 0).
        """
        num_groups = num_bs * groups_per_bs
        users = tuple(
            tuple(range(g * users_per_group, (g + 1) * users_per_group))
            for g in range(num_groups)
        )
        num_users = num_groups * users_per_group
        target = 0.0 if sinr_target_db is None else db_to_linear(sinr_target_db)
        return cls(
            antennas_per_bs=(antennas,) * num_bs,
            groups_per_bs=(groups_per_bs,) * num_bs,
            users_of_group=users,
            sinr_targets=np.full(num_users, target),
            noise_power=np.full(num_users, db_to_linear(noise_dbw)),
        )

    @property
    def num_bs(self) -> int:
        return len(self.antennas_per_bs)

    @property
    def num_groups(self) -> int:
        return len(self.users_of_group)

    @property
    def num_users(self) -> int:
        return len(self.group_of_user)

    @property
    def num_antennas(self) -> int:
        return sum(self.antennas_per_bs)

    def groups_of_bs(self, b: int) -> range:
        start = sum(self.groups_per_bs[:b])
        return range(start, start + self.groups_per_bs[b])

    def antenna_offset(self, b: int) -> int:
        """Flat index of antenna 0 of BS ``b`` in a network-wide antenna list."""
        return sum(self.antennas_per_bs[:b])

    def with_targets(self, sinr_targets) -> "NetworkConfig":
        return NetworkConfig(
            self.antennas_per_bs,
            self.groups_per_bs,
            self.users_of_group,
            np.broadcast_to(np.asarray(sinr_targets, float), (self.num_users,)).copy(),
            self.noise_power,
        )

    def with_antennas(self, antennas_per_bs: Sequence[int]) -> "NetworkConfig":
        return NetworkConfig(
            tuple(int(n) for n in antennas_per_bs),
            self.groups_per_bs,
            self.users_of_group,
            self.sinr_targets,
            self.noise_power,
        )


@dataclass(frozen=True)
class PowerModel:
    pa_efficiency: float = 0.35
    rf_chain_power: float = 1.0
    static_power: float = 2.0
    max_antenna_power: float = db_to_linear(9.0)

    def __post_init__(self):
        if not 0.0 < self.pa_efficiency <= 1.0:
            raise ValueError("PA efficiency must lie in (0, 1]")
        for name in ("rf_chain_power", "static_power", "max_antenna_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class ChannelSet:
    """``per_bs[b]`` is a (K, N_b) complex array; row k is h_{b,k}."""

    per_bs: tuple[np.ndarray, ...]

    def h(self, b: int, k: int) -> np.ndarray:
        return self.per_bs[b][k]

    def select(self, active: Sequence[np.ndarray]) -> "ChannelSet":
        """Keep only the antennas flagged in ``active[b]`` (boolean masks)."""
        return ChannelSet(tuple(hb[:, np.asarray(m, bool)] for hb, m in zip(self.per_bs, active)))

    def digest(self) -> str:
        sha = hashlib.sha256()
        for hb in self.per_bs:
            sha.update(np.ascontiguousarray(hb, dtype=np.complex128).tobytes())
        return sha.hexdigest()[:16]


@dataclass(frozen=True)
class BeamformerSet:
    """``vectors[g]`` is w_g, a complex vector of length N_{b_g}."""

    vectors: tuple[np.ndarray, ...]

    @classmethod
    def zeros(cls, cfg: NetworkConfig) -> "BeamformerSet":
        return cls(tuple(np.zeros(cfg.antennas_per_bs[b], complex) for b in cfg.bs_of_group))

    def antenna_slice(self, cfg: NetworkConfig, b: int, i: int) -> np.ndarray:
        """Coefficients of antenna ``i`` of BS ``b`` across the groups it serves."""
        return np.array([self.vectors[g][i] for g in cfg.groups_of_bs(b)])

    def scaled(self, factor: float) -> "BeamformerSet":
        return BeamformerSet(tuple(w * factor for w in self.vectors))

    def expand(self, cfg_full: NetworkConfig, active: Sequence[np.ndarray]) -> "BeamformerSet":
        """Lift reduced-dimension beamformers back to full size with zeros."""
        out = []
        for g, w in enumerate(self.vectors):
            b = cfg_full.bs_of_group[g]
            full = np.zeros(cfg_full.antennas_per_bs[b], complex)
            full[np.asarray(active[b], bool)] = w
            out.append(full)
        return BeamformerSet(tuple(out))


@dataclass(frozen=True)
class SelectionVector:
    per_bs: tuple[np.ndarray, ...]
    binary: bool = False

    def __post_init__(self):
        for ab in self.per_bs:
            if np.any(ab < 0) or np.any(ab > 1):
                raise ValueError("antenna selection values must lie in [0, 1]")
            if self.binary and not np.all((ab == 0) | (ab == 1)):
                raise ValueError("binary selection must contain only 0/1")

    @classmethod
    def ones(cls, cfg: NetworkConfig) -> "SelectionVector":
        return cls(tuple(np.ones(n) for n in cfg.antennas_per_bs), binary=True)

    @classmethod
    def from_flat(cls, cfg: NetworkConfig, flat, binary: bool = False) -> "SelectionVector":
        flat = np.asarray(flat, float)
        parts = []
        for b in range(cfg.num_bs):
            off = cfg.antenna_offset(b)
            parts.append(flat[off:off + cfg.antennas_per_bs[b]].copy())
        return cls(tuple(parts), binary=binary)

    def flat(self) -> np.ndarray:
        if not self.per_bs:
            return np.zeros(0)
        return np.concatenate(self.per_bs)

    def masks(self) -> tuple[np.ndarray, ...]:
        return tuple(ab > 0 for ab in self.per_bs)

    def active_counts(self) -> tuple[int, ...]:
        return tuple(int(np.count_nonzero(ab > 0)) for ab in self.per_bs)


def generate_channels(cfg: NetworkConfig, seed, path_gain=None) -> ChannelSet:
    """i.i.d. CN(0, 1) Rayleigh channels from every BS to every user.

    ``seed`` is anything ``numpy.random.default_rng`` accepts.  ``path_gain``
    optionally holds a (B, K) array of average power gains (default all 1).
    """
    rng = np.random.default_rng(seed)
    K = cfg.num_users
    out = []
    for b, n in enumerate(cfg.antennas_per_bs):
        hb = (rng.standard_normal((K, n)) + 1j * rng.standard_normal((K, n))) / np.sqrt(2.0)
        if path_gain is not None:
            hb = hb * np.sqrt(np.asarray(path_gain, float)[b])[:, None]
        out.append(hb)
    return ChannelSet(tuple(out))


def _check_dims(w: BeamformerSet, H: ChannelSet, cfg: NetworkConfig):
    if len(w.vectors) != cfg.num_groups or len(H.per_bs) != cfg.num_bs:
        raise ValueError("beamformer/channel counts do not match the network")
    for g, vec in enumerate(w.vectors):
        if vec.shape != (cfg.antennas_per_bs[cfg.bs_of_group[g]],):
            raise ValueError(f"beamformer of group {g} has wrong length")
    for b, hb in enumerate(H.per_bs):
        if hb.shape != (cfg.num_users, cfg.antennas_per_bs[b]):
            raise ValueError(f"channel block of BS {b} has wrong shape")


def gain_matrix(w: BeamformerSet, H: ChannelSet, cfg: NetworkConfig) -> np.ndarray:
    """(K, G) array of |h_{b_u,k} w_u|^2."""
    _check_dims(w, H, cfg)
    out = np.empty((cfg.num_users, cfg.num_groups))
    for u, wu in enumerate(w.vectors):
        out[:, u] = np.abs(H.per_bs[cfg.bs_of_group[u]] @ wu) ** 2
    return out


def interference_plus_noise(w: BeamformerSet, H: ChannelSet, cfg: NetworkConfig) -> np.ndarray:
    gains = gain_matrix(w, H, cfg)
    own = gains[np.arange(cfg.num_users), cfg.group_of_user]
    return cfg.noise_power + gains.sum(axis=1) - own


def sinr_all(w: BeamformerSet, H: ChannelSet, cfg: NetworkConfig) -> np.ndarray:
    gains = gain_matrix(w, H, cfg)
    own = gains[np.arange(cfg.num_users), cfg.group_of_user]
    return own / (cfg.noise_power + gains.sum(axis=1) - own)


def sinr(w: BeamformerSet, H: ChannelSet, cfg: NetworkConfig, k: int) -> float:
    return float(sinr_all(w, H, cfg)[k])


def user_rate(w: BeamformerSet, H: ChannelSet, cfg: NetworkConfig, k: int) -> float:
    return float(np.log1p(sinr(w, H, cfg, k)))


def group_rates(w: BeamformerSet, H: ChannelSet, cfg: NetworkConfig) -> np.ndarray:
    rates = np.log1p(sinr_all(w, H, cfg))
    return np.array([rates[list(users)].min() for users in cfg.users_of_group])


def group_rate(w: BeamformerSet, H: ChannelSet, cfg: NetworkConfig, g: int) -> float:
    return float(group_rates(w, H, cfg)[g])


def transmit_power(w: BeamformerSet) -> float:
    return float(sum(np.vdot(v, v).real for v in w.vectors))


def total_power(w: BeamformerSet, a: SelectionVector, pm: PowerModel) -> float:
    return (
        transmit_power(w) / pm.pa_efficiency
        + pm.rf_chain_power * float(a.flat().sum())
        + pm.static_power
    )


def energy_efficiency(
    w: BeamformerSet, a: SelectionVector, H: ChannelSet, cfg: NetworkConfig, pm: PowerModel
) -> float:
    """Sum of per-group minimum rates over total consumed power (nats/J)."""
    return float(group_rates(w, H, cfg).sum()) / total_power(w, a, pm)


def antenna_power(w: BeamformerSet, cfg: NetworkConfig, b: int, i: int) -> float:
    s = w.antenna_slice(cfg, b, i)
    return float(np.vdot(s, s).real)


def antenna_powers(w: BeamformerSet, cfg: NetworkConfig) -> np.ndarray:
    """Flat per-antenna powers, BS-major order."""
    out = np.zeros(cfg.num_antennas)
    for g, vec in enumerate(w.vectors):
        off = cfg.antenna_offset(cfg.bs_of_group[g])
        out[off:off + vec.size] += np.abs(vec) ** 2
    return out

