"""Exhaustive antenna-subset search and the relaxation-ordering report.

Only meant for desk-scale networks: every admissible binary selection is
solved as a fixed-antenna problem with several random restarts.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .netmodel import ChannelSet, NetworkConfig, PowerModel, SelectionVector
from .relaxation import remark1_count
from .sca import (
    ScaOptions,
    SolveResult,
    find_feasible_start,
    pattern_mask,
    run_relaxed,
    solve_fixed_pattern,
    solve_relaxed,
    derive_seed,
)

MAX_ORACLE_ANTENNAS = 12
DEFAULT_RESTARTS = 3


@dataclass
class OracleResult:
    best_ee: float
    best_pattern: SelectionVector | None
    table: dict[int, tuple[float, str]]
    num_feasible: int
    best_result: SolveResult | None = field(default=None, repr=False)

    def to_csv(self, fh=None) -> str:
        """Write ``pattern_bitmask, pattern, ee_nats, status`` rows (bit j = flat antenna j)."""
        buf = io.StringIO()
        width = max((m.bit_length() for m in self.table), default=1)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pattern_bitmask", "pattern", "ee_nats", "status"])
        for mask in sorted(self.table):
            ee, status = self.table[mask]
            bits = format(mask, f"0{width}b")[::-1]
            writer.writerow([mask, bits, repr(ee) if status == "ok" else "", status])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def admissible_patterns(cfg: NetworkConfig):
    """Binary selections whose per-BS active counts reach the served-group count."""
    need = [remark1_count(cfg, b) for b in range(cfg.num_bs)]
    for bits in itertools.product((0.0, 1.0), repeat=cfg.num_antennas):
        a = SelectionVector.from_flat(cfg, np.array(bits), binary=True)
        if all(c >= n for c, n in zip(a.active_counts(), need)):
            yield a


def enumerate_subsets(
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    opts: ScaOptions | None = None,
    seed=0,
    restarts: int = DEFAULT_RESTARTS,
) -> OracleResult:
    """Best fixed-pattern EE over all admissible antenna subsets.

    Restart ``r`` of pattern ``a`` uses the same initial point that
    :func:`eemcast.sca.refit_fixed` uses when ``r == 0``.
    """
    if cfg.num_antennas > MAX_ORACLE_ANTENNAS:
        raise ValueError(
            f"exhaustive search limited to {MAX_ORACLE_ANTENNAS} antennas, got {cfg.num_antennas}"
        )
    opts = opts or ScaOptions()
    table: dict[int, tuple[float, str]] = {}
    best_ee, best_pat, best_res = -np.inf, None, None
    feasible = 0
    for a in admissible_patterns(cfg):
        pat_best = None
        for r in range(restarts):
            res = solve_fixed_pattern(a, cfg, H, pm, opts, seed=seed, restart=r)
            if res.status == "ok" and (pat_best is None or res.ee > pat_best.ee):
                pat_best = res
        mask = pattern_mask(a)
        if pat_best is None:
            table[mask] = (float("nan"), "infeasible")
            continue
        feasible += 1
        table[mask] = (pat_best.ee, "ok")
        if pat_best.ee > best_ee:
            best_ee, best_pat, best_res = pat_best.ee, a, pat_best
    if best_pat is None:
        best_ee = float("nan")
    return OracleResult(best_ee, best_pat, table, feasible, best_res)


@dataclass
class ChainReport:
    ee_bin: float
    ee_cont: dict[float, float]
    ee_cont_orig: float
    comparisons: list[tuple[str, float, str, float, bool]]

    @property
    def violations(self) -> list[tuple[str, float, str, float, bool]]:
        return [c for c in self.comparisons if not c[4]]

    def lines(self) -> list[str]:
        out = []
        for lo_name, lo, hi_name, hi, ok in self.comparisons:
            flag = "" if ok else "  [violated: SCA returns local solutions]"
            out.append(f"{lo_name}={lo:.9g} <= {hi_name}={hi:.9g}{flag}")
        return out


def chain_report(
    cfg: NetworkConfig,
    H: ChannelSet,
    pm: PowerModel,
    alphas,
    opts: ScaOptions | None = None,
    seed=0,
    restarts: int = DEFAULT_RESTARTS,
    tol: float = 1e-9,
    oracle: OracleResult | None = None,
) -> ChainReport:
    """Compare the Boolean optimum with relaxed optima for several alphas.

    ``ee_cont[alpha]`` is the converged relaxed objective.  The relaxation of
    the original problem uses ``||w_hat||^2 <= a P_max`` with the transmit
    power charged at ``||w_hat||^2`` (``coupling="orig"``).
    """
    opts = opts or ScaOptions()
    if oracle is None:
        oracle = enumerate_subsets(cfg, H, pm, opts, seed=seed, restarts=restarts)
    ee_cont = {}
    for alpha in sorted(set(float(a) for a in alphas), reverse=True):
        o = ScaOptions(**{**opts.__dict__, "alpha": alpha})
        _, trace, _ = solve_relaxed(cfg, H, pm, o, seed=seed)
        ee_cont[alpha] = trace[-1]
    state, _ = find_feasible_start(cfg, H, pm, opts, seed=derive_seed(seed, 0), coupling="orig")
    _, trace = run_relaxed(cfg, H, pm, opts, state, coupling="orig")
    ee_orig = trace[-1]

    chain = [("EE_bin", oracle.best_ee)]
    chain += [(f"EE_cont(alpha={a:g})", v) for a, v in ee_cont.items()]
    chain.append(("EE_cont_orig", ee_orig))
    comparisons = [
        (n1, v1, n2, v2, bool(v1 <= v2 + tol))
        for (n1, v1), (n2, v2) in zip(chain, chain[1:])
    ]
    return ChainReport(oracle.best_ee, ee_cont, ee_orig, comparisons)
