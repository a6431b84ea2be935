import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eemcast.netmodel import BeamformerSet, NetworkConfig
from eemcast.relaxation import (
    A_PREV_FLOOR,
    DegenerateSolutionError,
    RelaxedVariables,
    SolverState,
    alpha_coupling_slack,
    chi_bound,
    chi_coefficients,
    psi_bound,
    recover_from_cc,
    remark1_count,
    scale_to_cc,
)


def _crandn(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_psi_tangent_at_expansion_point():
    rng = np.random.default_rng(0)
    for _ in range(50):
        h, w0 = _crandn(rng, 4), _crandn(rng, 4)
        beta0 = rng.uniform(0.5, 5.0)
        target = abs(h @ w0) ** 2 / beta0
        assert psi_bound(w0, beta0, h, w0, beta0) == pytest.approx(target, abs=1e-12)


def test_psi_zero_gradient_when_beam_orthogonal():
    rng = np.random.default_rng(1)
    h = _crandn(rng, 3)
    w0 = np.array([h[1], -h[0], 0.0])  # h @ w0 == 0
    assert abs(h @ w0) < 1e-12
    for _ in range(20):
        assert psi_bound(w0, 2.0, h, _crandn(rng, 3), rng.uniform(1, 9)) == pytest.approx(0.0, abs=1e-12)


def test_psi_sampled_lower_bound():
    rng = np.random.default_rng(2)
    h, w0 = _crandn(rng, 4), _crandn(rng, 4)
    beta0 = 1.7
    for _ in range(1000):
        w = w0 + rng.normal(scale=2.0) * _crandn(rng, 4)
        beta = rng.uniform(0.01, 20.0)
        assert psi_bound(w0, beta0, h, w, beta) <= abs(h @ w) ** 2 / beta + 1e-10


def test_psi_rejects_nonpositive_beta():
    with pytest.raises(ValueError):
        psi_bound(np.ones(2), 0.0, np.ones(2), np.ones(2), 1.0)


def test_chi_examples():
    for ap in (0.0, 0.3, 1.0):
        for a in (0.0, 0.4, 1.0):
            assert chi_bound(ap, 1.0, a) == a
    assert chi_bound(0.5, 2.0, 0.5) == pytest.approx(0.25)
    assert chi_bound(0.5, 2.0, 1.0) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        chi_bound(-0.1, 2.0, 0.5)


def test_chi_grid_tangent_and_lower_bound():
    grid = np.linspace(0.0, 1.0, 100)
    for alpha in (1.0, 1.25, 1.5, 2.0, 3.0):
        for ap in np.linspace(0.01, 1.0, 100):
            assert chi_bound(ap, alpha, ap) == pytest.approx(ap**alpha, abs=1e-10)
            assert np.all(grid**alpha - chi_bound(ap, alpha, grid) >= -1e-10)


def test_chi_coefficients_floor_keeps_slope_positive():
    const, slope = chi_coefficients(np.array([0.0, 0.5]), 1.5)
    assert slope[0] == pytest.approx(1.5 * A_PREV_FLOOR**0.5)
    assert slope[0] > 0
    c1, s1 = chi_coefficients(np.array([0.2, 0.0]), 1.0)
    np.testing.assert_array_equal(c1, 0.0)
    np.testing.assert_array_equal(s1, 1.0)


def _relaxed_point(rng, cfg):
    w = BeamformerSet(tuple(_crandn(rng, cfg.antennas_per_bs[b]) for b in cfg.bs_of_group))
    return RelaxedVariables(
        w=w,
        gamma=rng.uniform(1, 3, cfg.num_users),
        v=rng.uniform(0, 3, cfg.num_antennas),
        a=rng.uniform(0, 1, cfg.num_antennas),
        beta=rng.uniform(1, 4, cfg.num_users),
        r=rng.uniform(0, 2, cfg.num_groups),
    )


def _assert_close(x, y, tol):
    for f in ("gamma", "v", "a", "beta", "r"):
        np.testing.assert_allclose(getattr(x, f), getattr(y, f), rtol=tol, atol=tol)
    for a, b in zip(x.w.vectors, y.w.vectors):
        np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), phi=st.floats(1e-6, 1e6))
def test_cc_round_trip(seed, phi):
    cfg = NetworkConfig.uniform(2, 2, 2, 1)
    x = _relaxed_point(np.random.default_rng(seed), cfg)
    _assert_close(recover_from_cc(scale_to_cc(x, phi)), x, 1e-12)


def test_cc_identity_and_halving():
    cfg = NetworkConfig.uniform(1, 2, 1, 1)
    x = _relaxed_point(np.random.default_rng(3), cfg)
    s1 = scale_to_cc(x, 1.0)
    assert s1.phi == 1.0
    _assert_close(recover_from_cc(s1), x, 0)
    s2 = scale_to_cc(x, 2.0)
    np.testing.assert_allclose(s2.v, 2 * x.v)
    _assert_close(recover_from_cc(s2), x, 1e-15)


def test_cc_degenerate_phi():
    cfg = NetworkConfig.uniform(1, 1, 1, 1)
    x = _relaxed_point(np.random.default_rng(4), cfg)
    s = scale_to_cc(x, 1.0)
    bad = type(s)(**{**s.__dict__, "phi": 1e-12})
    with pytest.raises(DegenerateSolutionError):
        recover_from_cc(bad)
    with pytest.raises(ValueError):
        scale_to_cc(x, 0.0)


def test_remark1_count():
    cfg = NetworkConfig.uniform(2, 3, 2, 2, sinr_target_db=None)
    assert remark1_count(cfg, 0) == remark1_count(cfg, 1) == 0
    cfg = NetworkConfig.uniform(2, 3, 2, 2, sinr_target_db=0.0)
    assert remark1_count(cfg, 0) == 2
    rng = np.random.default_rng(5)
    for _ in range(20):
        targets = np.where(rng.uniform(size=cfg.num_users) < 0.4, 1.0, 0.0)
        mixed = cfg.with_targets(targets)
        for b in range(cfg.num_bs):
            direct = 0
            for g in range(cfg.num_groups):
                if cfg.bs_of_group[g] == b and any(targets[k] > 0 for k in cfg.users_of_group[g]):
                    direct += 1
            assert remark1_count(mixed, b) == direct


def test_solver_state_validation():
    w = BeamformerSet((np.ones(1, complex),))
    with pytest.raises(ValueError):
        SolverState(w, np.ones(1), np.array([1.5]))
    with pytest.raises(ValueError):
        SolverState(w, np.zeros(1), np.ones(1))
    with pytest.raises(ValueError):
        SolverState(w, np.ones(1), np.ones(1), alpha=0.5)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), a1=st.floats(1.0, 2.0), extra=st.floats(0.0, 1.5))
def test_alpha_containment_on_sampled_points(seed, a1, extra):
    """Feasible for a**alpha2 coupling implies feasible for a**alpha1 when alpha2 >= alpha1."""
    a2 = a1 + extra
    cfg = NetworkConfig.uniform(1, 3, 2, 1)
    rng = np.random.default_rng(seed)
    x = _relaxed_point(rng, cfg)
    slice_pow = sum(np.abs(w) ** 2 for w in x.w.vectors)
    # Make the point satisfy the alpha2 coupling with equality or slack.
    v = slice_pow / np.maximum(x.a ** a2, 1e-300) * rng.uniform(1.0, 2.0, 3)
    x = RelaxedVariables(x.w, x.gamma, v, x.a, x.beta, x.r)
    assert alpha_coupling_slack(x, cfg, a2) >= -1e-9 * max(1.0, float(np.max(v)))
    assert alpha_coupling_slack(x, cfg, a1) >= -1e-9 * max(1.0, float(np.max(v)))
