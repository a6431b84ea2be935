"""Relaxed reformulation: SCA lower bounds and Charnes-Cooper variable maps."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .netmodel import (
    BeamformerSet,
    ChannelSet,
    NetworkConfig,
    PowerModel,
    gain_matrix,
)

# Expansion point for the selection bound never goes below this, so an
# antenna whose relaxed variable hit zero can still re-enter.
A_PREV_FLOOR = 1e-4
PHI_FLOOR = 1e-9
BETA_FLOOR_FACTOR = 1.0 - 1e-9


class DegenerateSolutionError(RuntimeError):
    """Charnes-Cooper scaling variable collapsed to (numerically) zero."""


@dataclass(frozen=True)
class RelaxedVariables:
    """A point of the relaxed problem in original (unscaled) units.

    ``v`` and ``a`` are flat per-antenna arrays in BS-major order.
    """

    w: BeamformerSet
    gamma: np.ndarray
    v: np.ndarray
    a: np.ndarray
    beta: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class ScaledVariables:
    phi: float
    w: BeamformerSet
    gamma: np.ndarray
    v: np.ndarray
    a: np.ndarray
    beta: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class SolverState:
    """Linearization point of one SCA iteration plus bookkeeping."""

    w_prev: BeamformerSet
    beta_prev: np.ndarray
    a_prev: np.ndarray
    alpha: float = 1.5
    iteration: int = 0
    objective_history: tuple[float, ...] = ()
    last: RelaxedVariables | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        a = np.asarray(self.a_prev, float)
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("a_prev must lie in [0, 1]")
        if np.any(np.asarray(self.beta_prev) <= 0):
            raise ValueError("beta_prev must be positive")

    def advance(self, x: RelaxedVariables, objective: float) -> "SolverState":
        return replace(
            self,
            w_prev=x.w,
            beta_prev=x.beta,
            a_prev=np.clip(x.a, 0.0, 1.0),
            iteration=self.iteration + 1,
            objective_history=self.objective_history + (objective,),
            last=x,
        )


def floor_beta(beta: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    return np.maximum(np.asarray(beta, float), cfg.noise_power * BETA_FLOOR_FACTOR)


def psi_bound(w_g_prev, beta_k_prev: float, h, w_g, beta_k: float) -> float:
    """Affine minorant of |h w|^2 / beta, tight at (w_g_prev, beta_k_prev)."""
    if beta_k_prev <= 0:
        raise ValueError("beta_k_prev must be positive")
    c = complex(np.dot(h, w_g_prev))
    hw = complex(np.dot(h, w_g))
    return 2.0 * (np.conj(c) * hw).real / beta_k_prev - (abs(c) / beta_k_prev) ** 2 * beta_k


def psi_coefficients(c: complex, beta_prev: float) -> tuple[complex, float]:
    """Return (lin, quad) so that Psi = Re(conj(lin) * h w) - quad * beta.

    ``c`` is h w_prev.
    """
    return 2.0 * c / beta_prev, (abs(c) / beta_prev) ** 2


def chi_bound(a_prev: float, alpha: float, a):
    """Tangent of a**alpha at a_prev; a lower bound on [0, inf)."""
    if np.any(np.asarray(a_prev) < 0):
        raise ValueError("a_prev must be non-negative")
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    const, slope = chi_coefficients(a_prev, alpha, floor=0.0)
    return const + slope * a


def chi_coefficients(a_prev, alpha: float, floor: float = A_PREV_FLOOR):
    """(constant, slope) of the selection bound, with the expansion point floored."""
    ap = np.maximum(np.asarray(a_prev, float), floor)
    if alpha == 1.0:
        return np.zeros_like(ap), np.ones_like(ap)
    return (1.0 - alpha) * ap**alpha, alpha * ap ** (alpha - 1.0)


def scale_to_cc(x: RelaxedVariables, phi: float) -> ScaledVariables:
    if phi <= 0:
        raise ValueError("phi must be positive")
    return ScaledVariables(
        phi=phi,
        w=x.w.scaled(phi),
        gamma=x.gamma * phi,
        v=x.v * phi,
        a=x.a * phi,
        beta=x.beta * phi,
        r=x.r * phi,
    )


def recover_from_cc(xs: ScaledVariables) -> RelaxedVariables:
    phi = xs.phi
    if not phi > PHI_FLOOR:
        raise DegenerateSolutionError(f"phi={phi:.3e} below floor {PHI_FLOOR:g}")
    inv = 1.0 / phi
    return RelaxedVariables(
        w=xs.w.scaled(inv),
        gamma=xs.gamma * inv,
        v=xs.v * inv,
        a=xs.a * inv,
        beta=xs.beta * inv,
        r=xs.r * inv,
    )


def remark1_count(cfg: NetworkConfig, b: int) -> int:
    """Groups of BS ``b`` having at least one user with a nonzero SINR target."""
    return sum(
        1 for g in cfg.groups_of_bs(b)
        if np.any(cfg.sinr_targets[list(cfg.users_of_group[g])] > 0)
    )


def relaxed_power(x: RelaxedVariables, pm: PowerModel) -> float:
    return float(x.v.sum() / pm.pa_efficiency + pm.rf_chain_power * x.a.sum() + pm.static_power)


def relaxed_objective(x: RelaxedVariables, pm: PowerModel) -> float:
    return float(x.r.sum()) / relaxed_power(x, pm)


def _antenna_slice_powers(w: BeamformerSet, cfg: NetworkConfig) -> np.ndarray:
    out = np.zeros(cfg.num_antennas)
    for g, vec in enumerate(w.vectors):
        off = cfg.antenna_offset(cfg.bs_of_group[g])
        out[off:off + vec.size] += np.abs(vec) ** 2
    return out


def linearized_violations(
    x: RelaxedVariables,
    state: SolverState,
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
) -> dict[str, float]:
    """Largest violation of each constraint family of the linearized problem.

    Positive numbers are violations; values are in the natural units of each
    constraint (watts, SINR, nats).
    """
    slice_pow = _antenna_slice_powers(x.w, cfg)
    const, slope = chi_coefficients(state.a_prev, state.alpha)
    chi = const + slope * x.a
    beta_prev = floor_beta(state.beta_prev, cfg)

    gains = gain_matrix(x.w, H, cfg)
    K = cfg.num_users
    own_g = cfg.group_of_user
    interf = gains.sum(axis=1) - gains[np.arange(K), own_g]
    psi = np.empty(K)
    for k in range(K):
        g = own_g[k]
        h = H.per_bs[cfg.bs_of_group[g]][k]
        psi[k] = psi_bound(state.w_prev.vectors[g], beta_prev[k], h, x.w.vectors[g], x.beta[k])

    rate_gap = [
        float(np.max(x.r[g] - np.log1p(x.gamma[list(users)])))
        for g, users in enumerate(cfg.users_of_group)
    ]
    return {
        "coupling": float(np.max(slice_pow - x.v * chi, initial=0.0)),
        "power_cap": float(np.max(x.v - pm.max_antenna_power, initial=0.0)),
        "a_bounds": float(np.max(np.maximum(-x.a, x.a - 1.0), initial=0.0)),
        "sinr_bound": float(np.max(x.gamma - psi, initial=0.0)),
        "qos": float(np.max(cfg.sinr_targets - x.gamma, initial=0.0)),
        "interference": float(np.max(cfg.noise_power + interf - x.beta, initial=0.0)),
        "rate": max(rate_gap + [0.0]),
    }


def alpha_coupling_slack(x: RelaxedVariables, cfg: NetworkConfig, alpha: float) -> float:
    """min over antennas of a**alpha * v - ||w_hat||^2 (negative means violated)."""
    slice_pow = _antenna_slice_powers(x.w, cfg)
    a = np.clip(x.a, 0.0, 1.0)
    if slice_pow.size == 0:
        return 0.0
    return float(np.min(a**alpha * x.v - slice_pow))
