"""Joint beamforming and antenna selection by successive convex approximation.

Pipeline: penalized feasibility phase, SCA on the relaxed problem, threshold
pruning of the selection variables, then a refit of the beamformers on the
surviving antennas.  The ``simple`` variant skips the refit and the
``no-as`` variant keeps every antenna switched on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import conic
from .netmodel import (
    LN2,
    BeamformerSet,
    ChannelSet,
    NetworkConfig,
    PowerModel,
    SelectionVector,
    antenna_powers,
    energy_efficiency,
    group_rates,
    interference_plus_noise,
    sinr_all,
    total_power,
    transmit_power,
)
from .relaxation import (
    DegenerateSolutionError,
    RelaxedVariables,
    SolverState,
    recover_from_cc,
    remark1_count,
)

log = logging.getLogger(__name__)

VARIANTS = ("full", "simple", "no-as")
FEAS_SLACK_TOL = 1e-7
MAX_RESTORATIONS = 3
# Penalty continuation: when the slack sum stops shrinking the weight grows.
PENALTY_GROWTH = 10.0
PENALTY_MAX_FACTOR = 1e3
STALL_RATIO = 0.9


class InfeasibleQoSError(RuntimeError):
    """The penalized phase could not drive the slacks to zero."""


@dataclass(frozen=True)
class ScaOptions:
    alpha: float = 1.5
    epsilon: float = 1e-3
    tol: float = 1e-6
    max_iter: int = 100
    max_feas_iter: int = 50
    use_remark1: bool | None = None  # None: on when any SINR target is positive
    variant: str = "full"
    penalty: float | None = None  # None: 100 * P_sta
    warm_start_refit: bool = False

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.tol <= 0 or self.max_iter < 1 or self.max_feas_iter < 1:
            raise ValueError("tolerance and iteration caps must be positive")

    def remark1(self, cfg: NetworkConfig) -> bool:
        if self.use_remark1 is None:
            return bool(np.any(cfg.sinr_targets > 0))
        return self.use_remark1

    def lam(self, pm: PowerModel) -> float:
        return self.penalty if self.penalty is not None else 100.0 * pm.static_power


@dataclass
class SolveResult:
    variant: str
    status: str
    w: BeamformerSet | None = None
    a: SelectionVector | None = None
    group_rates: np.ndarray | None = None
    sinr: np.ndarray | None = None
    ee: float = 0.0
    transmit_power: float = 0.0
    antenna_powers: np.ndarray | None = None
    total_power: float = float("nan")
    relaxed_trace: tuple[float, ...] = ()
    refit_trace: tuple[float, ...] = ()
    relaxed_a: np.ndarray | None = None
    iterations: dict = field(default_factory=dict)
    restorations: int = 0
    relaxed_state: SolverState | None = field(default=None, repr=False)

    @property
    def ee_bits(self) -> float:
        return self.ee / LN2

    @property
    def sum_rate(self) -> float:
        return float(self.group_rates.sum()) if self.group_rates is not None else 0.0

    def near_binary_count(self, epsilon: float) -> int:
        if self.relaxed_a is None:
            return 0
        return near_binary_count(self.relaxed_a, epsilon)


def near_binary_count(a: np.ndarray, epsilon: float) -> int:
    """Relaxed selection entries strictly inside (epsilon, 1 - epsilon)."""
    a = np.asarray(a, float)
    return int(np.count_nonzero((a > epsilon) & (a < 1.0 - epsilon)))


def derive_seed(seed, *keys) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        base = list(np.atleast_1d(seed.entropy))
    else:
        base = list(np.atleast_1d(seed))
    return np.random.SeedSequence([int(s) for s in base] + [int(k) for k in keys])


def random_beamformers(cfg: NetworkConfig, pm: PowerModel, rng) -> BeamformerSet:
    """i.i.d. complex Gaussian coefficients, each antenna loaded to P_max / 2."""
    rng = np.random.default_rng(rng)
    vecs = [
        (rng.standard_normal(cfg.antennas_per_bs[b]) + 1j * rng.standard_normal(cfg.antennas_per_bs[b]))
        for b in cfg.bs_of_group
    ]
    for b in range(cfg.num_bs):
        groups = list(cfg.groups_of_bs(b))
        if not groups or cfg.antennas_per_bs[b] == 0:
            continue
        per_ant = sum(np.abs(vecs[g]) ** 2 for g in groups)
        scale = np.sqrt(0.5 * pm.max_antenna_power / per_ant)
        for g in groups:
            vecs[g] = vecs[g] * scale
    return BeamformerSet(tuple(vecs))


def qos_satisfied(w: BeamformerSet, H: ChannelSet, cfg: NetworkConfig, rtol: float = 0.0) -> bool:
    return bool(np.all(sinr_all(w, H, cfg) >= cfg.sinr_targets * (1.0 - rtol)))


def _state_from(w, H, cfg, a, alpha) -> SolverState:
    return SolverState(
        w_prev=w,
        beta_prev=interference_plus_noise(w, H, cfg),
        a_prev=np.asarray(a, float),
        alpha=alpha,
    )


def max_sinr_bound(cfg: NetworkConfig, H: ChannelSet, pm: PowerModel) -> np.ndarray:
    """Interference-free SINR ceiling per user under the per-antenna cap.

    |h w|^2 <= (sum_i |h_i|)^2 P_max, so no beamformer can beat this value.
    """
    out = np.empty(cfg.num_users)
    for k in range(cfg.num_users):
        h = H.per_bs[cfg.bs_of_group[cfg.group_of_user[k]]][k]
        out[k] = np.abs(h).sum() ** 2 * pm.max_antenna_power / cfg.noise_power[k]
    return out


@dataclass
class FeasibilityInfo:
    iterations: int
    slack_history: list[float]
    penalty_history: list[float] = field(default_factory=list)


def find_feasible_start(
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    opts: ScaOptions | None = None,
    seed=0,
    coupling: str = "alpha",
    w0: BeamformerSet | None = None,
) -> tuple[SolverState, FeasibilityInfo]:
    """Random start pushed to QoS feasibility by the penalized SCA phase.

    The selection expansion point stays at all-ones.  Raises
    :class:`InfeasibleQoSError` if some target exceeds the single-user SINR
    ceiling or the slacks do not vanish within ``opts.max_feas_iter``
    iterations.  The penalty weight starts at ``opts.lam(pm)`` and is raised
    tenfold whenever an iteration fails to cut the slack sum by 10%.
    """
    opts = opts or ScaOptions()
    ceiling = max_sinr_bound(cfg, H, pm)
    if np.any(cfg.sinr_targets > ceiling):
        k = int(np.argmax(cfg.sinr_targets - ceiling))
        raise InfeasibleQoSError(
            f"user {k}: target {cfg.sinr_targets[k]:.3g} above SINR ceiling {ceiling[k]:.3g}"
        )
    if opts.remark1(cfg):
        short = [b for b in range(cfg.num_bs) if cfg.antennas_per_bs[b] < remark1_count(cfg, b)]
        if short:
            raise InfeasibleQoSError(f"BS {short[0]} has fewer antennas than groups with QoS targets")
    ones = np.ones(cfg.num_antennas)
    if w0 is None:
        w0 = random_beamformers(cfg, pm, seed)
    state = _state_from(w0, H, cfg, ones, opts.alpha)
    if qos_satisfied(w0, H, cfg):
        return state, FeasibilityInfo(0, [])

    lam = lam0 = opts.lam(pm)
    lam_cap = lam0 * PENALTY_MAX_FACTOR
    history, lams = [], []
    for it in range(1, opts.max_feas_iter + 1):
        p = conic.build_feasibility_problem(
            state, cfg, H, pm, lam, use_remark1=opts.remark1(cfg), coupling=coupling
        )
        sol = conic.solve_conic(p)
        if sol.status == "infeasible":
            # Every constraint but the active-antenna cardinality cut carries a slack.
            raise InfeasibleQoSError(f"penalized problem infeasible: {sol.info}")
        if sol.status != "optimal":
            if lam > lam0:
                # Too stiff for the solver: back off and stop escalating.
                lam_cap = lam = lam / PENALTY_GROWTH
                continue
            if history:
                raise InfeasibleQoSError(
                    f"no progress after {it - 1} iterations (slack sum {history[-1]:.3e}); "
                    f"solver: {sol.info}"
                )
            raise DegenerateSolutionError(f"feasibility subproblem failed: {sol.info}")
        x = recover_from_cc(conic.extract(p, sol.x))
        q = float(conic.slack_values(p, sol.x).sum())
        history.append(q)
        lams.append(lam)
        state = _state_from(x.w, H, cfg, ones, opts.alpha)
        if q <= FEAS_SLACK_TOL:
            return state, FeasibilityInfo(it, history, lams)
        if len(history) > 1 and q > STALL_RATIO * history[-2]:
            lam = min(lam * PENALTY_GROWTH, lam_cap)
    last = f"{history[-1]:.3e}" if history else "n/a"
    raise InfeasibleQoSError(
        f"slacks did not vanish after {opts.max_feas_iter} iterations (last sum {last})"
    )


StepCallback = Callable[[SolverState, RelaxedVariables, float], None]


def power_scale(cfg: NetworkConfig, pm: PowerModel) -> float:
    """Total power with every antenna on at full power: an upper bound on P_tot."""
    A = cfg.num_antennas
    return A * pm.max_antenna_power / pm.pa_efficiency + A * pm.rf_chain_power + pm.static_power


def sca_step(
    state: SolverState,
    opts: ScaOptions,
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    coupling: str = "alpha",
    callback: StepCallback | None = None,
) -> tuple[SolverState, float]:
    """Solve the scaled surrogate at ``state`` and move the expansion point."""
    budget = power_scale(cfg, pm)
    p = conic.build_subproblem(
        state, cfg, H, pm, use_remark1=opts.remark1(cfg), coupling=coupling, budget=budget
    )
    sol = conic.solve_conic(p)
    if sol.status != "optimal":
        log.warning("subproblem %s (%s); retrying penalized", sol.status, sol.info)
        p = conic.build_feasibility_problem(
            state, cfg, H, pm, opts.lam(pm), use_remark1=opts.remark1(cfg), coupling=coupling
        )
        sol = conic.solve_conic(p)
        if sol.status != "optimal" or conic.slack_values(p, sol.x).sum() > FEAS_SLACK_TOL:
            raise DegenerateSolutionError(f"subproblem failed twice: {sol.info}")
    x = recover_from_cc(conic.extract(p, sol.x))
    objective = float(sol.x[p.columns["r"]].sum()) / p.meta.get("budget", 1.0)
    if callback is not None:
        callback(state, x, objective)
    return state.advance(x, objective), objective


def run_relaxed(
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    opts: ScaOptions,
    state: SolverState,
    coupling: str = "alpha",
    callback: StepCallback | None = None,
) -> tuple[SolverState, list[float]]:
    """Iterate :func:`sca_step` until the objective moves less than ``opts.tol``."""
    trace: list[float] = []
    for _ in range(opts.max_iter):
        state, obj = sca_step(state, opts, cfg, H, pm, coupling=coupling, callback=callback)
        trace.append(obj)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < opts.tol:
            break
    return state, trace


def prune_antennas(a, epsilon: float, cfg: NetworkConfig | None = None) -> SelectionVector:
    """Switch off antennas with relaxed value strictly below ``epsilon``."""
    if isinstance(a, SelectionVector):
        return SelectionVector(
            tuple(np.where(ab < epsilon, 0.0, 1.0) for ab in a.per_bs), binary=True
        )
    flat = np.where(np.asarray(a, float) < epsilon, 0.0, 1.0)
    if cfg is None:
        return SelectionVector((flat,), binary=True)
    return SelectionVector.from_flat(cfg, flat, binary=True)


def pattern_mask(a: SelectionVector) -> int:
    bits = a.flat()
    return int(sum(1 << j for j, bit in enumerate(bits) if bit > 0))


def check_feasible(w: BeamformerSet, a: SelectionVector, H, cfg, pm, tol: float = 1e-6) -> bool:
    if not qos_satisfied(w, H, cfg, rtol=tol):
        return False
    powers = antenna_powers(w, cfg)
    return bool(np.all(powers <= pm.max_antenna_power * a.flat() + tol))


def evaluate(
    variant: str,
    w: BeamformerSet,
    a: SelectionVector,
    H: ChannelSet,
    cfg: NetworkConfig,
    pm: PowerModel,
    status: str = "ok",
    **extra,
) -> SolveResult:
    """Fill every derived field of a result from (w, a)."""
    if status == "ok" and not check_feasible(w, a, H, cfg, pm):
        status = "infeasible-qos" if variant == "simple" else "degenerate"
    return SolveResult(
        variant=variant,
        status=status,
        w=w,
        a=a,
        group_rates=group_rates(w, H, cfg),
        sinr=sinr_all(w, H, cfg),
        ee=energy_efficiency(w, a, H, cfg, pm),
        transmit_power=transmit_power(w),
        antenna_powers=antenna_powers(w, cfg),
        total_power=total_power(w, a, pm),
        **extra,
    )


def _solve_fixed_once(a_bin, cfg, H, pm, opts, seed, w_init):
    masks = a_bin.masks()
    cfg_red = cfg.with_antennas([int(m.sum()) for m in masks])
    H_red = H.select(masks)
    w0 = None
    if w_init is not None:
        w0 = BeamformerSet(tuple(
            w[masks[cfg.bs_of_group[g]]] for g, w in enumerate(w_init.vectors)
        ))
    fixed_opts = replace(opts, use_remark1=False)
    state, info = find_feasible_start(cfg_red, H_red, pm, fixed_opts, seed=seed, coupling="fixed", w0=w0)
    state, trace = run_relaxed(cfg_red, H_red, pm, fixed_opts, state, coupling="fixed")
    w_full = state.w_prev.expand(cfg, masks)
    return w_full, trace, info.iterations


def pattern_seed(seed, a_bin: SelectionVector, restart: int = 0) -> np.random.SeedSequence:
    """Initial-point seed of a fixed-pattern solve; shared by the refit and the oracle."""
    return derive_seed(seed, 1, pattern_mask(a_bin), restart)


def solve_fixed_pattern(
    a_bin: SelectionVector,
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    opts: ScaOptions,
    seed=0,
    restart: int = 0,
    w_init: BeamformerSet | None = None,
    variant: str = "full",
) -> SolveResult:
    """One feasibility + SCA run with the selection fixed to ``a_bin``."""
    try:
        w, trace, feas_iters = _solve_fixed_once(
            a_bin, cfg, H, pm, opts, pattern_seed(seed, a_bin, restart), w_init
        )
    except InfeasibleQoSError:
        return SolveResult(variant=variant, status="infeasible-qos", a=a_bin)
    except DegenerateSolutionError:
        return SolveResult(variant=variant, status="degenerate", a=a_bin)
    return evaluate(
        variant, w, a_bin, H, cfg, pm,
        refit_trace=tuple(trace),
        iterations={"refit_feasibility": feas_iters, "refit": len(trace)},
    )


def refit_fixed(
    a_bin: SelectionVector,
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    opts: ScaOptions,
    seed=0,
    a_relaxed: np.ndarray | None = None,
    w_init: BeamformerSet | None = None,
    variant: str = "full",
) -> SolveResult:
    """Beamformers for a fixed antenna set, in reduced dimension.

    When the pruned set cannot meet the QoS targets, pruned antennas are
    restored one at a time (largest relaxed value first) up to
    ``MAX_RESTORATIONS`` times; after that the all-on set is used and the
    result is flagged ``refit-infeasible-fallback``.
    """
    flat = a_bin.flat().copy()
    order = []
    if a_relaxed is not None:
        pruned = np.flatnonzero(flat == 0)
        order = list(pruned[np.argsort(-np.asarray(a_relaxed)[pruned], kind="stable")])
    restorations = 0
    while True:
        current = SelectionVector.from_flat(cfg, flat, binary=True)
        res = solve_fixed_pattern(current, cfg, H, pm, opts, seed, w_init=w_init, variant=variant)
        if res.status != "infeasible-qos":
            res.restorations = restorations
            return res
        if restorations >= MAX_RESTORATIONS or not order:
            break
        flat[order.pop(0)] = 1.0
        restorations += 1

    allon = SelectionVector.ones(cfg)
    if np.array_equal(flat, allon.flat()):
        res.restorations = restorations
        return res
    res = solve_fixed_pattern(allon, cfg, H, pm, opts, seed, w_init=w_init, variant=variant)
    res.restorations = restorations
    if res.status == "ok":
        res.status = "refit-infeasible-fallback"
    return res


def solve_relaxed(
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    opts: ScaOptions,
    seed=0,
    callback: StepCallback | None = None,
) -> tuple[SolverState, list[float], int]:
    """Feasibility phase followed by SCA on the relaxed problem."""
    state, info = find_feasible_start(cfg, H, pm, opts, seed=derive_seed(seed, 0))
    state, trace = run_relaxed(cfg, H, pm, opts, state, callback=callback)
    return state, trace, info.iterations


def run_variants(
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    opts: ScaOptions,
    seed=0,
    variants=VARIANTS,
    callback: StepCallback | None = None,
) -> dict[str, SolveResult]:
    """Run several variants on one instance, sharing the relaxed solve.

    Every variant starts from the same random initial beamformers.
    ``callback`` sees every relaxed SCA step.
    """
    results: dict[str, SolveResult] = {}
    if "no-as" in variants:
        results["no-as"] = _run_no_as(cfg, H, pm, opts, seed)
    wanted = [v for v in variants if v in ("full", "simple")]
    if not wanted:
        return results
    try:
        state, trace, feas_iters = solve_relaxed(cfg, H, pm, opts, seed, callback=callback)
    except InfeasibleQoSError:
        for v in wanted:
            results[v] = SolveResult(variant=v, status="infeasible-qos")
        return results
    except DegenerateSolutionError:
        for v in wanted:
            results[v] = SolveResult(variant=v, status="degenerate")
        return results

    a_rel = np.clip(state.a_prev, 0.0, 1.0)
    a_bin = prune_antennas(a_rel, opts.epsilon, cfg)
    common = dict(
        relaxed_trace=tuple(trace),
        relaxed_a=a_rel,
        relaxed_state=state,
    )
    iters = {"feasibility": feas_iters, "relaxed": len(trace)}

    if "simple" in wanted:
        masks = a_bin.masks()
        w_simple = BeamformerSet(tuple(
            np.where(masks[cfg.bs_of_group[g]], w, 0.0) for g, w in enumerate(state.w_prev.vectors)
        ))
        results["simple"] = evaluate("simple", w_simple, a_bin, H, cfg, pm, iterations=dict(iters), **common)
    if "full" in wanted:
        try:
            res = refit_fixed(
                a_bin, cfg, H, pm, opts,
                seed=seed,
                a_relaxed=a_rel,
                w_init=state.w_prev if opts.warm_start_refit else None,
            )
        except DegenerateSolutionError:
            res = SolveResult(variant="full", status="degenerate")
        res.relaxed_trace = common["relaxed_trace"]
        res.relaxed_a = a_rel
        res.relaxed_state = state
        res.iterations = {**iters, **res.iterations}
        results["full"] = res
    return results


def _run_no_as(cfg, H, pm, opts, seed) -> SolveResult:
    allon = SelectionVector.ones(cfg)
    w0 = random_beamformers(cfg, pm, derive_seed(seed, 0))
    try:
        return refit_fixed(allon, cfg, H, pm, opts, w_init=w0, variant="no-as")
    except DegenerateSolutionError:
        return SolveResult(variant="no-as", status="degenerate")


def run_algorithm1(
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    opts: ScaOptions | None = None,
    seed=0,
) -> SolveResult:
    opts = opts or ScaOptions()
    return run_variants(cfg, H, pm, opts, seed, variants=(opts.variant,))[opts.variant]


def active_counts_ok(res: SolveResult, cfg: NetworkConfig) -> bool:
    counts = res.a.active_counts()
    return all(counts[b] >= remark1_count(cfg, b) for b in range(cfg.num_bs))
