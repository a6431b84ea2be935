"""Shared fixtures and independent reference implementations."""

from __future__ import annotations

import math

import numpy as np
import pytest

from eemcast.netmodel import BeamformerSet, NetworkConfig, PowerModel, generate_channels


def loop_sinr(w, H, cfg, k):
    """Scalar-loop SINR written without numpy vector ops."""
    g_own = None
    for g, users in enumerate(cfg.users_of_group):
        if k in users:
            g_own = g
    signal = 0.0
    interference = 0.0
    for g in range(cfg.num_groups):
        b = cfg.bs_of_group[g]
        acc = 0j
        for i in range(cfg.antennas_per_bs[b]):
            acc += complex(H.per_bs[b][k][i]) * complex(w.vectors[g][i])
        p = acc.real ** 2 + acc.imag ** 2
        if g == g_own:
            signal = p
        else:
            interference += p
    return signal / (float(cfg.noise_power[k]) + interference)


def loop_rate(w, H, cfg, k):
    return math.log(1.0 + loop_sinr(w, H, cfg, k))


def loop_total_power(w, a_flat, pm):
    tx = 0.0
    for vec in w.vectors:
        for c in vec:
            tx += abs(complex(c)) ** 2
    return tx / pm.pa_efficiency + pm.rf_chain_power * float(sum(a_flat)) + pm.static_power


def random_w(cfg, rng):
    return BeamformerSet(tuple(
        rng.standard_normal(cfg.antennas_per_bs[b]) + 1j * rng.standard_normal(cfg.antennas_per_bs[b])
        for b in cfg.bs_of_group
    ))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_net():
    """B=2, N=4, two groups of two users per BS, 0 dB targets."""
    cfg = NetworkConfig.uniform(2, 4, 2, 2, sinr_target_db=0.0)
    return cfg, PowerModel(rf_chain_power=2.0)


@pytest.fixture
def tiny_net():
    """B=2, N=3, one single-user group per BS."""
    cfg = NetworkConfig.uniform(2, 3, 1, 1, sinr_target_db=0.0)
    return cfg, PowerModel(rf_chain_power=2.0)


def cvxpy_subproblem(state, cfg, H, pm, use_remark1=False):
    """The scaled surrogate written directly in cvxpy with complex variables.

    Returns (problem, variables) where variables is a dict of cvxpy objects.
    """
    import cvxpy as cp

    G, K, A = cfg.num_groups, cfg.num_users, cfg.num_antennas
    wb = [cp.Variable(cfg.antennas_per_bs[b], complex=True) for b in cfg.bs_of_group]
    phi = cp.Variable(nonneg=True)
    gam = cp.Variable(K)
    v = cp.Variable(A)
    a = cp.Variable(A)
    beta = cp.Variable(K)
    r = cp.Variable(G)
    alpha = state.alpha
    ap = np.maximum(np.asarray(state.a_prev, float), 1e-4)
    beta_prev = np.maximum(state.beta_prev, cfg.noise_power * (1 - 1e-9))

    cons = [cp.sum(v) / pm.pa_efficiency + pm.rf_chain_power * cp.sum(a) + pm.static_power * phi <= 1]
    for b in range(cfg.num_bs):
        groups = [g for g in range(G) if cfg.bs_of_group[g] == b]
        off = sum(cfg.antennas_per_bs[:b])
        for i in range(cfg.antennas_per_bs[b]):
            j = off + i
            t = (1 - alpha) * ap[j] ** alpha * phi + alpha * ap[j] ** (alpha - 1) * a[j]
            slice_ = cp.hstack([wb[g][i] for g in groups])
            cons.append(cp.quad_over_lin(slice_, t) <= v[j])
    cons += [v <= phi * pm.max_antenna_power, a >= 0, a <= phi]
    for k in range(K):
        g = cfg.group_of_user[k]
        h = H.per_bs[cfg.bs_of_group[g]][k]
        c = complex(h @ state.w_prev.vectors[g])
        cons.append(
            gam[k] <= 2 * cp.real(np.conj(c) * (h @ wb[g])) / beta_prev[k]
            - (abs(c) / beta_prev[k]) ** 2 * beta[k]
        )
        cons.append(gam[k] >= phi * cfg.sinr_targets[k])
        terms = [np.sqrt(cfg.noise_power[k]) * phi]
        for u in range(G):
            if u != g:
                terms.append(H.per_bs[cfg.bs_of_group[u]][k] @ wb[u])
        cons.append(cp.quad_over_lin(cp.hstack(terms), phi) <= beta[k])
        cons.append(r[g] <= -cp.rel_entr(phi, phi + gam[k]))
    if use_remark1:
        for b in range(cfg.num_bs):
            xb = sum(
                1 for g in range(G)
                if cfg.bs_of_group[g] == b and any(cfg.sinr_targets[u] > 0 for u in cfg.users_of_group[g])
            )
            off = sum(cfg.antennas_per_bs[:b])
            if xb:
                cons.append(cp.sum(a[off:off + cfg.antennas_per_bs[b]]) >= phi * xb)
    prob = cp.Problem(cp.Maximize(cp.sum(r)), cons)
    return prob, dict(w=wb, phi=phi, gamma=gam, v=v, a=a, beta=beta, r=r)


def feasible_instance(cfg, pm, first_seed=0, alpha=1.5, max_tries=50):
    """(channel seed, H, feasible state) for the first feasible channel draw."""
    from eemcast.sca import InfeasibleQoSError, ScaOptions, find_feasible_start

    for seed in range(first_seed, first_seed + max_tries):
        H = generate_channels(cfg, seed)
        try:
            state, _ = find_feasible_start(cfg, H, pm, ScaOptions(alpha=alpha), seed=seed)
        except InfeasibleQoSError:
            continue
        return seed, H, state
    raise RuntimeError("no feasible instance found")
