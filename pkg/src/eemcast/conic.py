"""Standard-form conic programs for the scaled SCA subproblem.

A :class:`ConicProblem` is a linear objective (maximized) over real columns
plus a list of blocks.  Each block is an affine map ``A x + b`` together with
its kind:

``le``    ``A x <= b`` componentwise
``eq``    ``A x == b``
``rsoc``  ``(u, v, z) = A x + b`` with ``||z||^2 <= u v``, ``u, v >= 0``
``exp``   ``(x, y, z) = A x + b`` with ``y exp(x / y) <= z``, ``y > 0``

Complex beamformer coefficients are embedded as interleaved (Re, Im) column
pairs; ``columns["w"][g]`` is an ``(N, 2)`` index array for group ``g``.
"""

from __future__ import annotations

import io
import time
from collections import Counter
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .netmodel import BeamformerSet, ChannelSet, NetworkConfig, PowerModel
from .relaxation import (
    ScaledVariables,
    SolverState,
    chi_coefficients,
    floor_beta,
    psi_coefficients,
    remark1_count,
)

KINDS = ("eq", "le", "rsoc", "exp")
COUPLING_MODES = ("alpha", "fixed", "orig")

# Slack-carrying constraint families of the penalized feasibility problem.
PENALIZED_TAGS = ("coupling", "sinr_bound", "qos", "interference", "rate")

SOLVER_TOL = 1e-7


@dataclass
class Block:
    kind: str
    tag: str
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    b: np.ndarray
    label: str = ""

    @property
    def size(self) -> int:
        return self.b.size

    def matrix(self, n: int) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.size, n))


@dataclass
class ConicProblem:
    num_cols: int
    objective: np.ndarray
    blocks: list[Block]
    columns: dict
    meta: dict = field(default_factory=dict)

    def audit(self) -> dict[tuple[str, str], int]:
        """Count blocks per (tag, kind)."""
        return dict(Counter((blk.tag, blk.kind) for blk in self.blocks))


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int
    solve_time: float
    info: str = ""


class _Rows:
    """Accumulates COO triplets for one block."""

    def __init__(self):
        self.r, self.c, self.v, self.b = [], [], [], []

    def add(self, cols, vals, const=0.0):
        cols = np.asarray(cols, int).ravel()
        vals = np.broadcast_to(np.asarray(vals, float), cols.shape).ravel()
        self.r.append(np.full(cols.size, len(self.b)))
        self.c.append(cols)
        self.v.append(vals)
        self.b.append(float(const))

    def block(self, kind: str, tag: str, label: str = "") -> Block:
        cat = (lambda xs: np.concatenate(xs) if xs else np.zeros(0))
        return Block(
            kind, tag,
            cat(self.r).astype(int), cat(self.c).astype(int), cat(self.v),
            np.asarray(self.b, float), label,
        )


def _embed(h: np.ndarray, wcols: np.ndarray):
    """Columns/values of Re(h w) and Im(h w) over interleaved (Re, Im) columns."""
    cols = wcols.ravel()
    re_vals = np.column_stack([h.real, -h.imag]).ravel()
    im_vals = np.column_stack([h.imag, h.real]).ravel()
    return cols, re_vals, im_vals


def _layout(cfg: NetworkConfig, num_slacks: int = 0):
    n = 0
    w_cols = []
    for g in range(cfg.num_groups):
        N = cfg.antennas_per_bs[cfg.bs_of_group[g]]
        w_cols.append(np.arange(n, n + 2 * N).reshape(N, 2))
        n += 2 * N
    columns = {"w": w_cols}
    for name, size in (
        ("phi", 1),
        ("gamma", cfg.num_users),
        ("v", cfg.num_antennas),
        ("a", cfg.num_antennas),
        ("beta", cfg.num_users),
        ("r", cfg.num_groups),
        ("q", num_slacks),
    ):
        columns[name] = np.arange(n, n + size)
        n += size
    columns["phi"] = int(columns["phi"][0])
    return n, columns


def _build(state, cfg, H, pm, *, use_remark1, coupling, penalty, budget=1.0):
    if coupling not in COUPLING_MODES:
        raise ValueError(f"unknown coupling mode {coupling!r}")
    if state.alpha < 1:
        raise ValueError("alpha must be >= 1")
    if len(state.w_prev.vectors) != cfg.num_groups:
        raise ValueError("expansion point does not match the network")
    if np.shape(state.a_prev) != (cfg.num_antennas,) or np.shape(state.beta_prev) != (cfg.num_users,):
        raise ValueError("expansion point does not match the network")
    if len(H.per_bs) != cfg.num_bs or any(
        hb.shape != (cfg.num_users, n) for hb, n in zip(H.per_bs, cfg.antennas_per_bs)
    ):
        raise ValueError("channel dimensions do not match the network")

    K, G, A = cfg.num_users, cfg.num_groups, cfg.num_antennas
    # One slack per row of each penalized family, in a fixed order.
    slack_sizes = {"coupling": A, "sinr_bound": K, "qos": K, "interference": K, "rate": K}
    num_slacks = sum(slack_sizes.values()) if penalty is not None else 0
    n, cols = _layout(cfg, num_slacks)
    phi = cols["phi"]
    slack = {}
    if penalty is not None:
        off = 0
        for tag in PENALIZED_TAGS:
            slack[tag] = cols["q"][off:off + slack_sizes[tag]]
            off += slack_sizes[tag]
    blocks: list[Block] = []

    # Denominator budget.
    rows = _Rows()
    rows.add(
        np.concatenate([cols["v"], cols["a"], [phi]]),
        np.concatenate([
            np.full(A, 1.0 / pm.pa_efficiency),
            np.full(A, pm.rf_chain_power),
            [pm.static_power],
        ]),
        float(budget),
    )
    # Equality in the penalized problem: with "<=" the all-zero point (phi = 0)
    # has zero slack and would always be optimal.
    blocks.append(rows.block("le" if penalty is None else "eq", "budget"))

    # Per-antenna coupling between beamformer slice, power and selection.
    const, slope = chi_coefficients(state.a_prev, state.alpha)
    for b in range(cfg.num_bs):
        groups = list(cfg.groups_of_bs(b))
        for i in range(cfg.antennas_per_bs[b]):
            j = cfg.antenna_offset(b) + i
            slice_cols = [cols["w"][g][i] for g in groups]
            rows = _Rows()
            rows.add([cols["v"][j]], [1.0])
            if coupling == "alpha":
                tc, tv = [phi, cols["a"][j]], [const[j], slope[j]]
            elif coupling == "fixed":
                tc, tv = [cols["a"][j]], [1.0]
            else:
                tc, tv = [phi], [1.0]
            if penalty is not None:
                tc, tv = tc + [slack["coupling"][j]], tv + [1.0]
            rows.add(tc, tv)
            for sc in slice_cols:
                rows.add([sc[0]], [1.0])
                rows.add([sc[1]], [1.0])
            blocks.append(rows.block("rsoc", "coupling", f"b={b},i={i}"))
            if coupling == "orig":
                rows = _Rows()
                rows.add([cols["a"][j]], [pm.max_antenna_power])
                rows.add([phi], [1.0])
                for sc in slice_cols:
                    rows.add([sc[0]], [1.0])
                    rows.add([sc[1]], [1.0])
                blocks.append(rows.block("rsoc", "coupling_orig", f"b={b},i={i}"))

    # Per-antenna power cap and selection bounds.
    rows = _Rows()
    for j in range(A):
        rows.add([cols["v"][j], phi], [1.0, -pm.max_antenna_power])
    blocks.append(rows.block("le", "power_cap"))
    rows = _Rows()
    if coupling == "fixed":
        for j in range(A):
            rows.add([cols["a"][j], phi], [1.0, -1.0])
        blocks.append(rows.block("eq", "a_fixed"))
    else:
        for j in range(A):
            rows.add([cols["a"][j]], [-1.0])
            rows.add([cols["a"][j], phi], [1.0, -1.0])
        blocks.append(rows.block("le", "a_bounds"))

    # Linearized SINR bound and QoS floor.
    beta_prev = floor_beta(state.beta_prev, cfg)
    sinr_rows, qos_rows = _Rows(), _Rows()
    for k in range(K):
        g = cfg.group_of_user[k]
        h = H.per_bs[cfg.bs_of_group[g]][k]
        c = complex(h @ state.w_prev.vectors[g])
        lin, quad = psi_coefficients(c, beta_prev[k])
        wc, re_v, im_v = _embed(h, cols["w"][g])
        sc = [cols["gamma"][k], cols["beta"][k]]
        sv = [1.0, quad]
        if penalty is not None:
            sc, sv = sc + [slack["sinr_bound"][k]], sv + [-1.0]
        sinr_rows.add(
            np.concatenate([sc, wc, wc]),
            np.concatenate([sv, -lin.real * re_v, -lin.imag * im_v]),
        )
        qc = [phi, cols["gamma"][k]]
        qv = [cfg.sinr_targets[k], -1.0]
        if penalty is not None:
            qc, qv = qc + [slack["qos"][k]], qv + [-1.0]
        qos_rows.add(qc, qv)
    blocks.append(sinr_rows.block("le", "sinr_bound"))
    blocks.append(qos_rows.block("le", "qos"))

    # Interference-plus-noise, one rotated cone per user.
    for k in range(K):
        g = cfg.group_of_user[k]
        rows = _Rows()
        rows.add([phi], [1.0])
        bc, bv = [cols["beta"][k]], [1.0]
        if penalty is not None:
            bc, bv = bc + [slack["interference"][k]], bv + [1.0]
        rows.add(bc, bv)
        rows.add([phi], [np.sqrt(cfg.noise_power[k])])
        for u in range(G):
            if u == g:
                continue
            h = H.per_bs[cfg.bs_of_group[u]][k]
            if h.size == 0:
                continue
            wc, re_v, im_v = _embed(h, cols["w"][u])
            rows.add(wc, re_v)
            rows.add(wc, im_v)
        blocks.append(rows.block("rsoc", "interference", f"k={k}"))

    # Rate hypograph, one exponential cone per (group, user).
    for k in range(K):
        g = cfg.group_of_user[k]
        rows = _Rows()
        rows.add([cols["r"][g]], [1.0])
        rows.add([phi], [1.0])
        zc, zv = [phi, cols["gamma"][k]], [1.0, 1.0]
        if penalty is not None:
            zc, zv = zc + [slack["rate"][k]], zv + [1.0]
        rows.add(zc, zv)
        blocks.append(rows.block("exp", "rate", f"g={g},k={k}"))

    if use_remark1 and coupling != "fixed":
        rows = _Rows()
        for b in range(cfg.num_bs):
            xb = remark1_count(cfg, b)
            if xb > 0:
                off = cfg.antenna_offset(b)
                ac = cols["a"][off:off + cfg.antennas_per_bs[b]]
                rows.add(np.concatenate([[phi], ac]), np.concatenate([[float(xb)], -np.ones(ac.size)]))
        if rows.b:
            blocks.append(rows.block("le", "remark1"))

    obj = np.zeros(n)
    obj[cols["r"]] = 1.0
    if penalty is not None:
        obj[cols["q"]] = -penalty
        rows = _Rows()
        for j in cols["q"]:
            rows.add([j], [-1.0])
        blocks.append(rows.block("le", "slack_nonneg"))
        cols["slack"] = slack

    meta = {"coupling": coupling, "alpha": state.alpha, "penalty": penalty, "budget": float(budget)}
    return ConicProblem(n, obj, blocks, cols, meta)


def build_subproblem(
    state: SolverState,
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    use_remark1: bool = False,
    coupling: str = "alpha",
    budget: float = 1.0,
) -> ConicProblem:
    """Scaled convex surrogate of the relaxed problem at ``state``.

    The denominator is normalized to ``budget`` instead of one; the optimal
    sum of scaled rates is then ``budget`` times the EE.  A budget near the
    total power keeps the scaling variable close to one, which limits how much
    solver residuals grow when the solution is unscaled.

    ``coupling`` selects how beamformers, per-antenna power and selection
    variables are tied: ``"alpha"`` (linearized a**alpha bound), ``"fixed"``
    (selection pinned to one, used for fixed antenna sets) or ``"orig"``
    (``||w_hat||^2 <= a P_max`` with power charged at ``||w_hat||^2``).
    """
    if not budget > 0:
        raise ValueError("budget must be positive")
    return _build(state, cfg, H, pm, use_remark1=use_remark1, coupling=coupling, penalty=None, budget=budget)


def build_feasibility_problem(
    state: SolverState,
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    lam: float,
    use_remark1: bool = False,
    coupling: str = "alpha",
) -> ConicProblem:
    """Same constraints as :func:`build_subproblem` softened by L1-penalized slacks."""
    if not lam > 0:
        raise ValueError("penalty weight must be positive")
    return _build(state, cfg, H, pm, use_remark1=use_remark1, coupling=coupling, penalty=float(lam))


def extract(p: ConicProblem, x: np.ndarray) -> ScaledVariables:
    cols = p.columns
    w = BeamformerSet(tuple(x[wc[:, 0]] + 1j * x[wc[:, 1]] for wc in cols["w"]))
    return ScaledVariables(
        phi=float(x[cols["phi"]]),
        w=w,
        gamma=x[cols["gamma"]].copy(),
        v=x[cols["v"]].copy(),
        a=x[cols["a"]].copy(),
        beta=x[cols["beta"]].copy(),
        r=x[cols["r"]].copy(),
    )


def slack_values(p: ConicProblem, x: np.ndarray) -> np.ndarray:
    return np.maximum(x[p.columns["q"]], 0.0)


# --- solver backend -------------------------------------------------------

def _settings():
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.tol_gap_abs = 1e-10
    s.tol_gap_rel = 1e-10
    s.tol_feas = 1e-10
    s.tol_ktratio = 1e-8
    s.reduced_tol_gap_abs = 1e-8
    s.reduced_tol_gap_rel = 1e-8
    s.reduced_tol_feas = 1e-8
    s.max_iter = 200
    s.max_threads = 1
    return s


def _standard_form(p: ConicProblem):
    """Stack blocks into Clarabel's ``A x + s = b, s in K`` form."""
    order = {kind: i for i, kind in enumerate(KINDS)}
    blocks = sorted(p.blocks, key=lambda blk: order[blk.kind])
    R, C, V, B, cones = [], [], [], [], []
    zero = nonneg = 0
    row = 0
    for blk in blocks:
        m = blk.size
        if blk.kind in ("eq", "le"):
            R.append(blk.rows + row); C.append(blk.cols); V.append(blk.vals); B.append(blk.b)
            if blk.kind == "eq":
                zero += m
            else:
                nonneg += m
        elif blk.kind == "exp":
            R.append(blk.rows + row); C.append(blk.cols); V.append(-blk.vals); B.append(blk.b)
        else:
            # (u, v, z) -> (u + v, u - v, 2 z) in the standard second-order cone.
            r, c, v = blk.rows, blk.cols, blk.vals
            top = r < 2
            sign = np.where(r[top] == 0, 1.0, -1.0)
            R += [np.full(top.sum(), row), np.full(top.sum(), row + 1), r[~top] + row]
            C += [c[top], c[top], c[~top]]
            V += [-v[top], -sign * v[top], -2.0 * v[~top]]
            bb = blk.b.copy()
            u, w = bb[0], bb[1]
            bb[0], bb[1] = u + w, u - w
            bb[2:] *= 2.0
            B.append(bb)
        row += m
    for blk in blocks:
        if blk.kind == "rsoc":
            cones.append(clarabel.SecondOrderConeT(blk.size))
        elif blk.kind == "exp":
            cones.append(clarabel.ExponentialConeT())
    head = []
    if zero:
        head.append(clarabel.ZeroConeT(zero))
    if nonneg:
        head.append(clarabel.NonnegativeConeT(nonneg))
    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
    A = sp.csc_matrix(
        (cat(V, float), (cat(R, int), cat(C, int))), shape=(row, p.num_cols)
    )
    return A, cat(B, float), head + cones


def cone_residuals(p: ConicProblem, x: np.ndarray) -> dict[str, float]:
    """Worst relative violation per block kind at ``x``."""
    worst = {kind: 0.0 for kind in KINDS}
    for blk in p.blocks:
        e = blk.matrix(p.num_cols) @ x
        if blk.kind in ("le", "eq"):
            d = e - blk.b
            if blk.kind == "eq":
                d = np.abs(d)
            scale = 1.0 + np.abs(blk.b)
            viol = float(np.max(d / scale, initial=0.0))
        elif blk.kind == "rsoc":
            e = e + blk.b
            u, v, z = e[0], e[1], e[2:]
            lhs = np.hypot(u - v, 2.0 * np.linalg.norm(z))
            viol = max(lhs - (u + v), -u, -v, 0.0) / (1.0 + abs(u) + abs(v))
        else:
            e = e + blk.b
            xe, ye, ze = e
            if ye > 1e-12 and ze > 0:
                gap = xe - ye * np.log(ze / ye)
            else:
                gap = max(xe, -ze, -ye)
            viol = max(gap, 0.0) / (1.0 + abs(xe) + abs(ye) + abs(ze))
        worst[blk.kind] = max(worst[blk.kind], viol)
    return worst


def solve_conic(p: ConicProblem) -> ConicSolution:
    """Solve with Clarabel; ``x`` is populated only for status ``optimal``."""
    A, b, cones = _standard_form(p)
    P = sp.csc_matrix((p.num_cols, p.num_cols))
    t0 = time.perf_counter()
    sol = clarabel.DefaultSolver(P, -p.objective, A, b, cones, _settings()).solve()
    elapsed = time.perf_counter() - t0
    status = str(sol.status)
    iters = int(sol.iterations)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return ConicSolution("infeasible", None, float("nan"), iters, elapsed, status)
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return ConicSolution("unbounded", None, float("nan"), iters, elapsed, status)
    # Stalled runs still carry an iterate; keep it only if it passes our own checks.
    if status not in ("Solved", "AlmostSolved", "InsufficientProgress", "MaxIterations"):
        return ConicSolution("numerical-failure", None, float("nan"), iters, elapsed, status)
    x = np.asarray(sol.x, float)
    obj = float(p.objective @ x)
    res = cone_residuals(p, x)
    gap = abs(sol.obj_val - sol.obj_val_dual) / (1.0 + abs(sol.obj_val))
    if max(res.values()) > SOLVER_TOL or gap > SOLVER_TOL:
        info = f"{status}: residuals {res}, gap {gap:.2e}"
        return ConicSolution("numerical-failure", None, float("nan"), iters, elapsed, info)
    return ConicSolution("optimal", x, obj, iters, elapsed, status)


# --- debug dump -----------------------------------------------------------

def dump_text(p: ConicProblem) -> str:
    """Self-describing text dump: column map, objective, then every block."""
    out = io.StringIO()
    out.write(f"# conic-problem v1\ncolumns {p.num_cols}\n")
    for g, wc in enumerate(p.columns["w"]):
        for i, (re, im) in enumerate(wc):
            out.write(f"col {re} w[{g}][{i}].re\ncol {im} w[{g}][{i}].im\n")
    out.write(f"col {p.columns['phi']} phi\n")
    for name in ("gamma", "v", "a", "beta", "r", "q"):
        for idx, c in enumerate(p.columns[name]):
            out.write(f"col {c} {name}[{idx}]\n")
    nz = np.flatnonzero(p.objective)
    out.write("maximize " + " ".join(f"{p.objective[j]:.17g}*x{j}" for j in nz) + "\n")
    for blk in p.blocks:
        out.write(f"block {blk.kind} {blk.tag} {blk.label or '-'} rows={blk.size}\n")
        M = blk.matrix(p.num_cols).tocsr()
        for i in range(blk.size):
            lo, hi = M.indptr[i], M.indptr[i + 1]
            terms = " ".join(f"{M.data[t]:.17g}*x{M.indices[t]}" for t in range(lo, hi))
            out.write(f"  row {i}: {terms} | {blk.b[i]:.17g}\n")
    return out.getvalue()
