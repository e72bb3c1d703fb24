"""Exhaustive grid-search reference optimizer for small problems.

Energies are parameterized as shares of the total budget on a simplex
grid of resolution ``1/n``; HD strategies add a time-share axis on the
same resolution. The best grid point is then polished by a pattern search
that moves share between pairs of coordinates (and nudges the time share),
halving the move size ``refine_levels`` times.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import model
from .model import (
    LN2,
    ChannelRealization,
    FdNupaAllocation,
    FdUpaAllocation,
    HdNupaAllocation,
    HdUpaAllocation,
    SystemParams,
)
from .numerics import SolverReport
from .solvers import STRATEGIES, SolverConfig, StrategyResult, solve

__all__ = [
    "DEFAULT_RESOLUTION",
    "MAX_GRID_POINTS",
    "OracleSizeError",
    "grid_size",
    "exhaustive_search",
    "compare",
    "batch_hd_rates",
    "batch_fd_rates",
]

DEFAULT_RESOLUTION = {"hd-upa": 200, "fd-upa": 1000, "hd-nupa": 12, "fd-nupa": 12}
MAX_GRID_POINTS = 5_000_000
_CHUNK = 50_000
_TIE_REL = 1e-12


class OracleSizeError(ValueError):
    """The requested grid is too large to enumerate."""


def _layout(strategy, k):
    """(number of share coordinates, whether a time axis is present)."""
    if strategy == "hd-upa":
        return 2, True
    if strategy == "fd-upa":
        return 2, False
    if strategy == "hd-nupa":
        return 2 * k, True
    if strategy == "fd-nupa":
        return 2 * k, False
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")


def grid_size(strategy: str, k: int, n: int) -> int:
    """Number of grid points the exhaustive scan would evaluate."""
    parts, timed = _layout(strategy, k)
    return math.comb(n + parts - 1, parts - 1) * ((n + 1) if timed else 1)


def batch_hd_rates(params: SystemParams, ch: ChannelRealization, t1, eps1, eps2):
    """HD rates for many allocations at once.

    ``t1`` has shape ``(m,)`` and ``eps1``/``eps2`` shape ``(m, K)``. A link
    with zero time share contributes zero rate whatever its energy (the
    limit of the rate as the time share vanishes). Returns ``(r1, r2)``.
    """
    g21, g12 = ch.gains()
    gam, k = params.gamma_e, params.num_subcarriers

    def link(gain, eps, t, noise):
        t = t[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = gain[None, :] * eps
            sinr = gam * s / (s + (gam + 1) * noise * t)
            r = t / k * np.log1p(sinr) / LN2
        return np.where(t > 0, r, 0.0).sum(axis=1)

    t1 = np.asarray(t1, dtype=float)
    return link(g21, eps1, t1, params.n2), link(g12, eps2, 1.0 - t1, params.n1)


def batch_fd_rates(params: SystemParams, ch: ChannelRealization, eps1, eps2):
    """FD rates for many ``(m, K)`` energy blocks at once; returns ``(r1, r2)``."""
    a1, q2, c1, a2, q1, c2 = model.fd_subcarrier_terms(params, ch)
    gam, k = params.gamma_e, params.num_subcarriers
    r1 = np.log1p(gam * a1 * eps1 / (a1 * eps1 + q2 * eps2 + c1)).sum(axis=1) / (k * LN2)
    r2 = np.log1p(gam * a2 * eps2 / (a2 * eps2 + q1 * eps1 + c2)).sum(axis=1) / (k * LN2)
    return r1, r2


class _Problem:
    """Maps (shares, t1) blocks to energies and sum rates for one strategy."""

    def __init__(self, strategy, params, ch):
        self.strategy, self.params, self.ch = strategy, params, ch
        self.k = params.num_subcarriers
        self.parts, self.timed = _layout(strategy, self.k)

    def energies(self, shares):
        e = self.params.total_energy
        if self.parts == 2:
            # uniform power: each node's share spread evenly over the K sub-carriers
            e1 = np.repeat(shares[:, :1] * e / self.k, self.k, axis=1)
            e2 = np.repeat(shares[:, 1:] * e / self.k, self.k, axis=1)
            return e1, e2
        return shares[:, : self.k] * e, shares[:, self.k :] * e

    def value(self, shares, t1):
        e1, e2 = self.energies(shares)
        if self.timed:
            r1, r2 = batch_hd_rates(self.params, self.ch, t1, e1, e2)
        else:
            r1, r2 = batch_fd_rates(self.params, self.ch, e1, e2)
        return r1 + r2

    def allocation(self, share, t1):
        """Allocation object for one point; idle-time energy moves to the other node."""
        share = share.copy()
        if self.timed and t1 in (0.0, 1.0):
            idle = slice(0, self.parts // 2) if t1 == 0.0 else slice(self.parts // 2, None)
            busy = slice(self.parts // 2, None) if t1 == 0.0 else slice(0, self.parts // 2)
            moved = share[idle].sum()
            share[idle] = 0.0
            busy_sum = share[busy].sum()
            if busy_sum > 0:
                share[busy] *= (busy_sum + moved) / busy_sum
            else:
                share[busy] = (busy_sum + moved) / (self.parts // 2)
        e = self.params.total_energy
        if self.strategy == "hd-upa":
            return HdUpaAllocation(t1, 1.0 - t1, share[0] * e / self.k, share[1] * e / self.k)
        if self.strategy == "fd-upa":
            return FdUpaAllocation(share[0] * e / self.k, share[1] * e / self.k)
        e1, e2 = share[: self.k] * e, share[self.k :] * e
        if self.strategy == "hd-nupa":
            return HdNupaAllocation(t1, 1.0 - t1, e1, e2)
        return FdNupaAllocation(e1, e2)


def _compositions(n, parts):
    """All non-negative integer vectors of length ``parts`` summing to ``n``, in chunks."""
    bars = itertools.combinations(range(n + parts - 1), parts - 1)
    while True:
        chunk = np.array(list(itertools.islice(bars, _CHUNK)), dtype=np.int64).reshape(-1, parts - 1)
        if chunk.shape[0] == 0:
            return
        # bar positions -> gaps between consecutive bars
        padded = np.hstack([np.full((chunk.shape[0], 1), -1), chunk, np.full((chunk.shape[0], 1), n + parts - 1)])
        yield np.diff(padded, axis=1) - 1


def _refine(prob, share, t1, best, step, levels):
    """Pattern search from a grid point; returns the polished point, value and evaluation count."""
    pairs = [(i, j) for i in range(prob.parts) for j in range(prob.parts) if i != j]
    evals = 0
    for _ in range(levels):
        step /= 2.0
        for _ in range(10_000):
            moves = []
            for i, j in pairs:
                d = min(step, share[j])
                if d > 0:
                    s = share.copy()
                    s[i] += d
                    s[j] -= d
                    moves.append((s, t1))
            if prob.timed:
                for dt in (-step, step):
                    t = min(max(t1 + dt, 0.0), 1.0)
                    if t != t1:
                        moves.append((share, t))
            if not moves:
                break
            shares = np.array([m[0] for m in moves])
            ts = np.array([m[1] for m in moves])
            vals = prob.value(shares, ts)
            evals += len(moves)
            j = int(np.argmax(vals))
            if vals[j] <= best * (1 + 1e-15):
                break
            share, t1, best = shares[j].copy(), float(ts[j]), float(vals[j])
    return share, t1, best, evals


def exhaustive_search(
    strategy: str,
    params: SystemParams,
    ch: ChannelRealization,
    n: int | None = None,
    refine_levels: int = 2,
    max_points: int = MAX_GRID_POINTS,
) -> StrategyResult:
    """Best allocation on a share grid of resolution ``1/n``, then locally refined.

    ``n`` defaults to ``DEFAULT_RESOLUTION[strategy]``. Raises
    ``OracleSizeError`` if the grid has more than ``max_points`` points.
    Points within a relative ``1e-12`` of the best count as tied and the
    one nearest the uniform split (and ``t1 = 1/2``) is kept, so the result
    is deterministic.
    """
    model._check_k(params, ch)
    prob = _Problem(strategy, params, ch)
    n = DEFAULT_RESOLUTION[strategy] if n is None else int(n)
    if n < 1:
        raise ValueError("grid resolution n must be at least 1")
    size = grid_size(strategy, prob.k, n)
    if size > max_points:
        raise OracleSizeError(
            f"{strategy} grid at K={prob.k}, n={n} has {size} points (cap {max_points}); reduce K or n"
        )
    if params.total_energy == 0:
        share = np.full(prob.parts, 1.0 / prob.parts)
        alloc = prob.allocation(share, 0.5)
        rates = _rates(params, ch, alloc)
        return StrategyResult(strategy, alloc, rates, SolverReport(True, 0, 0.0, "zero energy budget"), {"grid_points": 0})

    t_grid = np.arange(n + 1) / n if prob.timed else np.array([1.0])
    centre = 1.0 / prob.parts
    best, best_share, best_t, best_dist = -math.inf, None, 1.0, math.inf
    for comp in _compositions(n, prob.parts):
        shares = comp / n
        dist_share = np.sum((shares - centre) ** 2, axis=1)
        for t in t_grid:
            vals = prob.value(shares, np.full(shares.shape[0], t))
            top = float(np.max(vals))
            tol = _TIE_REL * max(1.0, abs(top), abs(best))
            if top < best - tol:
                continue
            # flat optima (mirror-symmetric links) tie along a ridge; keep the
            # tied point nearest the uniform split so the answer does not
            # depend on rounding noise
            tied = np.flatnonzero(vals >= max(top, best) - tol)
            dist = dist_share[tied] + ((t - 0.5) ** 2 if prob.timed else 0.0)
            i = int(np.argmin(dist))
            if top > best + tol or dist[i] < best_dist:
                j = int(tied[i])
                best, best_share, best_t, best_dist = float(vals[j]), shares[j].copy(), float(t), float(dist[i])
            best = max(best, top)
    share, t1, best, evals = _refine(prob, best_share, best_t, best, 1.0 / n, refine_levels)
    alloc = prob.allocation(share, t1 if prob.timed else 1.0)
    rates = _rates(params, ch, alloc)
    report = SolverReport(True, size + evals, 0.0, f"grid n={n}, {refine_levels} refinement levels")
    certs = {"grid_points": size, "refine_evaluations": evals, "final_step": 1.0 / (n * 2**refine_levels)}
    return StrategyResult(strategy, alloc, rates, report, certs)


def _rates(params, ch, alloc):
    if isinstance(alloc, HdUpaAllocation):
        return model.hd_upa_rates(params, ch, alloc)
    if isinstance(alloc, HdNupaAllocation):
        return model.hd_nupa_rates(params, ch, alloc)
    if isinstance(alloc, FdUpaAllocation):
        return model.fd_upa_rates(params, ch, alloc)
    return model.fd_nupa_rates(params, ch, alloc)


def compare(
    strategy: str,
    params: SystemParams,
    ch: ChannelRealization,
    cfg: SolverConfig = SolverConfig(),
    n: int | None = None,
    refine_levels: int = 2,
) -> dict:
    """Solver versus oracle on one problem.

    ``gap`` is ``(asr_oracle - asr_solver) / asr_oracle`` (zero when the
    oracle rate is zero); it is negative when the solver beats the grid.
    """
    sol = solve(strategy, params, ch, cfg)
    ref = exhaustive_search(strategy, params, ch, n=n, refine_levels=refine_levels)
    gap = (ref.asr - sol.asr) / ref.asr if ref.asr > 0 else 0.0
    return {
        "strategy": strategy,
        "asr_solver": sol.asr,
        "asr_oracle": ref.asr,
        "gap": gap,
        "solver_violations": sol.allocation.violations(params),
        "oracle_violations": ref.allocation.violations(params),
        "solver": sol,
        "oracle": ref,
    }
