"""Sum-rate maximizing time and energy allocation for the four strategies.

Each solver works on a partial Lagrangian (equality constraints only),
solves its stationarity conditions numerically, then compares the
stationary point with the one-direction boundary allocations that the
stationarity conditions cannot see.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import model
from .model import (
    LN2,
    ChannelRealization,
    FdNupaAllocation,
    FdUpaAllocation,
    HdNupaAllocation,
    HdUpaAllocation,
    RateBreakdown,
    SystemParams,
)
from .numerics import (
    NewtonConfig,
    SingularSystemError,
    SolverReport,
    newton_backtracking,
    newton_ascent_batch,
)

__all__ = [
    "STRATEGIES",
    "SolverConfig",
    "StrategyResult",
    "TypicalConditions",
    "solve",
    "solve_hd_upa",
    "solve_hd_nupa",
    "solve_fd_upa",
    "solve_fd_nupa",
    "check_typical_conditions",
    "waterfill_energy",
]

STRATEGIES = ("hd-upa", "hd-nupa", "fd-upa", "fd-nupa")

Allocation = Union[HdUpaAllocation, HdNupaAllocation, FdUpaAllocation, FdNupaAllocation]


@dataclass(frozen=True)
class SolverConfig:
    """Tunables shared by the four solvers.

    ``time_step`` is the t1 grid step of HD-NUPA, ``energy_rel_tol`` the
    relative energy-budget tolerance of the multiplier searches. With
    ``exact_grid`` FD-NUPA scans the multiplier on a uniform grid of
    ``lambda_grid_points`` values instead of bracketing and bisecting.
    """

    newton: NewtonConfig = field(default_factory=NewtonConfig)
    time_step: float = 1e-3
    energy_rel_tol: float = 1e-6
    exact_grid: bool = False
    lambda_grid_points: int = 2000
    typical_noise_fraction: float = 0.01
    typical_min_sinr_db: float = 10.0
    typical_asymmetry_tol: float = 1e-9
    certificate_tol: float = 1e-6

    def __post_init__(self):
        if not 0 < self.time_step < 0.5:
            raise ValueError("time_step must lie in (0, 0.5)")
        if not self.energy_rel_tol > 0:
            raise ValueError("energy_rel_tol must be positive")


@dataclass
class StrategyResult:
    """A solved allocation, its rates and the solver's diagnostics.

    ``certificates`` holds the stationarity residuals at the returned point
    (names depend on the strategy) and ``inner_solves`` counts the inner
    root finds (bisection steps for HD-NUPA, sub-carrier pair solves for
    FD-NUPA).
    """

    strategy: str
    allocation: Allocation
    rates: RateBreakdown
    report: SolverReport
    certificates: dict = field(default_factory=dict)
    inner_solves: int = 0

    @property
    def asr(self) -> float:
        return self.rates.sum


_TIE_ABS = 1e-12


def _pick(scored):
    """Best ``(name, allocation, rates)``; earlier candidates win ties up to rounding."""
    best = scored[0]
    for cand in scored[1:]:
        if cand[2].sum > best[2].sum + _TIE_ABS * max(1.0, abs(best[2].sum)):
            best = cand
    return best


def _budget(params: SystemParams) -> float:
    return params.total_energy / params.num_subcarriers


def _rates_for(params, ch, alloc) -> RateBreakdown:
    if isinstance(alloc, HdUpaAllocation):
        return model.hd_upa_rates(params, ch, alloc)
    if isinstance(alloc, HdNupaAllocation):
        return model.hd_nupa_rates(params, ch, alloc)
    if isinstance(alloc, FdUpaAllocation):
        return model.fd_upa_rates(params, ch, alloc)
    return model.fd_nupa_rates(params, ch, alloc)


def solve(strategy: str, params: SystemParams, ch: ChannelRealization, cfg: SolverConfig = SolverConfig()) -> StrategyResult:
    """Dispatch on a strategy tag (``hd-upa``, ``hd-nupa``, ``fd-upa``, ``fd-nupa``)."""
    try:
        fn = {
            "hd-upa": solve_hd_upa,
            "hd-nupa": solve_hd_nupa,
            "fd-upa": solve_fd_upa,
            "fd-nupa": solve_fd_nupa,
        }[strategy]
    except KeyError:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}") from None
    return fn(params, ch, cfg)


# --------------------------------------------------------------------------
# HD-UPA


def _hd_upa_boundary_certificate(c, p, side):
    """Check that giving all time and energy to ``side`` is optimal.

    The HD objective is jointly concave in (t, eps), so the boundary point
    is optimal iff the tangent of the active link's rate curve at ``p``
    dominates the idle link's rate curve everywhere. Returns the largest
    violation of that domination (<= 0 means certified).
    """
    if side == 1:
        a, b, cc, a_o, b_o, c_o = c.a_k1, c.b_k1, c.c_k1, c.a_k2, c.b_k2, c.c_k2
    else:
        a, b, cc, a_o, b_o, c_o = c.a_k2, c.b_k2, c.c_k2, c.a_k1, c.b_k1, c.c_k1
    slope = model._marginal_sum(a, b, cc, p) / LN2
    intercept = model._log_sum(a, b, cc, p) - slope * p

    def gain(q):
        return model._log_sum(a_o, b_o, c_o, q) - slope * q

    # the idle link's tangent-gap is concave in q and peaks where its slope matches
    if model._marginal_sum(a_o, b_o, c_o, 0.0) / LN2 <= slope:
        return gain(0.0) - intercept
    lo, hi = 0.0, max(p, 1e-300)
    while model._marginal_sum(a_o, b_o, c_o, hi) / LN2 > slope:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if model._marginal_sum(a_o, b_o, c_o, mid) / LN2 > slope:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return gain(0.5 * (lo + hi)) - intercept


def solve_hd_upa(params: SystemParams, ch: ChannelRealization, cfg: SolverConfig = SolverConfig()) -> StrategyResult:
    """HD with uniform power over sub-carriers.

    Newton with backtracking finds the per-slot powers ``(p1, p2)`` that
    zero the stationarity residuals; the time split then follows from the
    energy budget. The residuals are solved in units of a reference power
    ``p_ref`` (the power at which the mean link SNR is one) so that the
    tolerance is dimensionless; the certificates ``f1``/``f2`` are reported
    in those units (``f1`` multiplied by ``p_ref``).
    """
    k = params.num_subcarriers
    budget = _budget(params)
    c = model._abc(params, ch)
    report = SolverReport(False, 0, math.inf)
    certs = {}

    def boundary(side):
        if side == 1:
            return HdUpaAllocation(1.0, 0.0, budget, 0.0)
        return HdUpaAllocation(0.0, 1.0, 0.0, budget)

    if budget == 0:
        alloc = HdUpaAllocation(0.5, 0.5, 0.0, 0.0)
        report = SolverReport(True, 0, 0.0, "zero energy budget")
        return StrategyResult("hd-upa", alloc, _rates_for(params, ch, alloc), report)

    candidates = []
    live1, live2 = np.any(c.b_k1 > 0), np.any(c.b_k2 > 0)
    if live1 and live2:
        # the objective is jointly concave, so a strictly dominating boundary
        # is the unique optimum; Newton would only chase saturated powers that
        # cannot meet the budget with a proper time split. Ties (mirrored
        # links) still go through the interior search.
        for side in (1, 2):
            alloc = boundary(side)
            rates = _rates_for(params, ch, alloc)
            gap = _hd_upa_boundary_certificate(c, budget, side)
            if gap < -1e-9 * max(1.0, rates.sum * k):
                certs.update(chosen=f"boundary-{side}", boundary_gap=gap)
                report = SolverReport(True, 0, 0.0, "boundary optimum (strictly certified); no interior search needed")
                return StrategyResult("hd-upa", alloc, rates, report, certs)
        mean_gain = float(np.mean(np.concatenate([c.b_k1, c.b_k2])))
        p_ref = float(np.mean(np.concatenate([c.c_k1, c.c_k2]))) / mean_gain

        def res(u):
            f1, f2 = model.hd_upa_residuals(c, u[0] * p_ref, u[1] * p_ref)
            return np.array([f1 * p_ref, f2])

        def jac(u):
            return model.hd_upa_residual_jacobian(c, u[0] * p_ref, u[1] * p_ref) * np.array(
                [[p_ref * p_ref, p_ref * p_ref], [p_ref, p_ref]]
            )

        def positive(u):
            return bool(np.all(u > 0))

        u0 = np.full(2, budget / p_ref)
        try:
            u, report = newton_backtracking(res, jac, u0, cfg.newton, domain=positive)
        except SingularSystemError as exc:
            u, report = u0, SolverReport(False, 0, math.inf, str(exc))
        total_iters = report.iterations
        if not report.converged:
            # coarse log grid over (p1, p2) on the merit, then Newton again from the best cell
            grid = np.logspace(-3, 9, 49)
            best, best_f = None, math.inf
            for a in grid:
                for b in grid:
                    r = res(np.array([a, b]))
                    fv = float(r @ r)
                    if fv < best_f:
                        best, best_f = np.array([a, b]), fv
            note = f"newton from uniform power failed ({report.notes}); restarted from grid"
            try:
                u, report = newton_backtracking(res, jac, best, cfg.newton, domain=positive)
            except SingularSystemError as exc:
                u, report = best, SolverReport(False, 0, math.sqrt(best_f), str(exc))
            report.iterations += total_iters
            report.note(note)
        if report.converged:
            p1, p2 = u * p_ref
            r = res(u)
            certs.update(f1=float(r[0]), f2=float(r[1]), p1=float(p1), p2=float(p2), p_ref=p_ref)
            if abs(p2 - p1) <= 1e-9 * max(p1, p2):
                candidates.append(("interior", HdUpaAllocation(0.5, 0.5, budget / 2, budget / 2)))
            else:
                t1 = (p2 - budget) / (p2 - p1)
                if 0.0 < t1 < 1.0:
                    e1, e2 = max(p1 * t1, 0.0), max(p2 * (1 - t1), 0.0)
                    scale = budget / (e1 + e2)
                    candidates.append(("interior", HdUpaAllocation(t1, 1.0 - t1, e1 * scale, e2 * scale)))
                else:
                    report.note("stationary powers do not bracket the budget")
    else:
        report.note("one direction has no usable channel")

    if live1:
        candidates.append(("boundary-1", boundary(1)))
    if live2:
        candidates.append(("boundary-2", boundary(2)))
    if not candidates:
        candidates.append(("boundary-1", boundary(1)))

    scored = [(name, a, _rates_for(params, ch, a)) for name, a in candidates]
    name, alloc, rates = _pick(scored)
    certs["chosen"] = name
    if name.startswith("boundary"):
        side = 1 if name == "boundary-1" else 2
        gap = _hd_upa_boundary_certificate(c, budget, side) if (live1 and live2) else 0.0
        certs["boundary_gap"] = gap
        certified = gap <= 1e-9 * max(1.0, rates.sum * k)
        report.note(f"boundary optimum ({'certified' if certified else 'not certified'})")
        report.converged = report.converged or certified
    return StrategyResult("hd-upa", alloc, rates, report, certs)


# --------------------------------------------------------------------------
# closed-form water-filling pieces shared by HD-NUPA and the FD boundaries


def waterfill_energy(gain, noise, t, lam, gamma_e, k):
    """Energy per sub-carrier at which the HD energy derivative equals ``lam``.

    Solves ``a e^2 + b e + c = 0`` with ``a = g^2``, ``b = g N t (gamma+2)``,
    ``c = (gamma+1) N^2 t^2 - gamma g N t^2 / (K ln2 lam)`` and keeps the
    larger root clipped at zero. Broadcasts over all arguments.
    """
    gain = np.asarray(gain, dtype=float)
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    a = gain * gain
    b = gain * noise * t * (gamma_e + 2)
    c = (gamma_e + 1) * noise**2 * t * t - gamma_e * gain * noise * t * t / (k * LN2 * lam)
    disc = np.maximum(b * b - 4 * a * c, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # larger root in the cancellation-free form -2c / (b + sqrt(disc))
        root = np.where(c < 0, -2 * c / (b + np.sqrt(disc)), 0.0)
    return np.where(gain > 0, np.maximum(root, 0.0), 0.0)


def _zero_energy_slope(gain, noise, gamma_e, k):
    """Energy derivative of an HD link at zero energy (independent of t)."""
    return gamma_e * np.asarray(gain) / (k * LN2 * (gamma_e + 1) * noise)


# --------------------------------------------------------------------------
# HD-NUPA


def _hd_nupa_inner(params, g21, g12, t1, cfg):
    """Multiplier bisection for every t1 in the array ``t1`` at once.

    Returns energies ``(e1, e2)`` of shape ``(len(t1), K)`` scaled to meet
    the budget, the multipliers, and the number of bisection steps.
    """
    gam, k, budget = params.gamma_e, params.num_subcarriers, params.total_energy
    t1 = np.asarray(t1, dtype=float)[:, None]
    t2 = 1.0 - t1

    def energies(lam):
        lam = lam[:, None]
        e1 = waterfill_energy(g21[None, :], params.n2, t1, lam, gam, k)
        e2 = waterfill_energy(g12[None, :], params.n1, t2, lam, gam, k)
        return e1, e2

    lam_hi = max(
        float(np.max(_zero_energy_slope(g21, params.n2, gam, k))),
        float(np.max(_zero_energy_slope(g12, params.n1, gam, k))),
    )
    n = t1.shape[0]
    hi = np.full(n, lam_hi)
    lo = np.full(n, lam_hi)
    # expand the lower end until every t1 over-spends the budget
    steps = 0
    while True:
        lo = lo * 1e-3
        steps += 1
        e1, e2 = energies(lo)
        over = (e1.sum(1) + e2.sum(1)) > budget
        if over.all() or steps > 200:
            break
    log_lo, log_hi = np.log(lo), np.log(hi)
    tol = cfg.energy_rel_tol * 1e-6 * budget
    for _ in range(200):
        mid = 0.5 * (log_lo + log_hi)
        e1, e2 = energies(np.exp(mid))
        spent = e1.sum(1) + e2.sum(1)
        steps += 1
        too_much = spent > budget
        log_lo = np.where(too_much, mid, log_lo)
        log_hi = np.where(too_much, log_hi, mid)
        if np.all(np.abs(spent - budget) < tol) or np.all(log_hi - log_lo < 1e-15):
            break
    lam = np.exp(0.5 * (log_lo + log_hi))
    e1, e2 = energies(lam)
    spent = (e1.sum(1) + e2.sum(1))[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(spent > 0, budget / spent, 0.0)
    return e1 * scale, e2 * scale, lam, steps


def _hd_time_balance(params, g21, g12, t1, e1, e2):
    gam, k = params.gamma_e, params.num_subcarriers
    t1 = np.asarray(t1)[:, None]
    t2 = 1.0 - t1

    def dt(gain, eps, t, noise):
        x = eps * gain[None, :]
        u = x + noise * t
        v = x + (gam + 1) * noise * t
        logs = np.sum(np.log((gam + 1) * u / v), axis=1) / LN2
        tail = t[:, 0] / LN2 * np.sum(x * gam * noise / (u * v), axis=1)
        return (logs - tail) / k

    return dt(g21, e1, t1, params.n2) - dt(g12, e2, t2, params.n1)


def solve_hd_nupa(params: SystemParams, ch: ChannelRealization, cfg: SolverConfig = SolverConfig()) -> StrategyResult:
    """HD with per sub-carrier power: grid over t1, multiplier bisection inside.

    For every grid value of t1 the energies follow in closed form from the
    multiplier, which is bisected (in log scale) until the budget is met.
    The grid point with the smallest time-derivative imbalance is kept
    (ties, up to rounding, go to the t1 nearest 1/2), then compared with
    the two one-direction allocations.
    """
    k, budget = params.num_subcarriers, params.total_energy
    g21, g12 = ch.gains()
    model._check_k(params, ch)
    if budget == 0:
        z = np.zeros(k)
        alloc = HdNupaAllocation(0.5, 0.5, z, z)
        return StrategyResult("hd-nupa", alloc, _rates_for(params, ch, alloc), SolverReport(True, 0, 0.0, "zero energy budget"))

    n = int(round(1.0 / cfg.time_step))
    grid = np.arange(1, n) / n
    e1, e2, lam, steps = _hd_nupa_inner(params, g21, g12, grid, cfg)
    balance = _hd_time_balance(params, g21, g12, grid, e1, e2)
    score = np.abs(balance)
    # a flat balance curve (mirror-symmetric links) ties everywhere; take the tie nearest the middle
    ties = np.flatnonzero(score <= score.min() + _TIE_ABS)
    j = int(ties[np.argmin(np.abs(grid[ties] - 0.5))])
    nb = [abs(balance[i] - balance[j]) for i in (j - 1, j + 1) if 0 <= i < grid.size]
    lipschitz = max(nb) / cfg.time_step if nb else 0.0
    t1 = float(grid[j])
    interior = HdNupaAllocation(t1, 1.0 - t1, e1[j], e2[j])

    certs = {
        "time_balance": float(balance[j]),
        "time_balance_bound": cfg.time_step * lipschitz,
        "lipschitz": lipschitz,
        "lambda": float(lam[j]),
    }
    # KKT residual of the energies at the chosen t1, relative to the multiplier
    d1 = model._hd_energy_derivative(g21, e1[j], t1, params.gamma_e, params.n2, k)
    d2 = model._hd_energy_derivative(g12, e2[j], 1 - t1, params.gamma_e, params.n1, k)
    on = np.concatenate([d1[e1[j] > 0], d2[e2[j] > 0]])
    off = np.concatenate([d1[e1[j] <= 0], d2[e2[j] <= 0]])
    certs["kkt_residual"] = float(np.max(np.abs(on / lam[j] - 1.0))) if on.size else 0.0
    certs["kkt_inactive_excess"] = float(max(0.0, np.max(off / lam[j] - 1.0))) if off.size else 0.0

    candidates = [("interior", interior)]
    for side, (gain, noise) in ((1, (g21, params.n2)), (2, (g12, params.n1))):
        if not np.any(gain > 0):
            continue
        e = _single_link_fill(gain, noise, 1.0, budget, params.gamma_e, k)
        z = np.zeros(k)
        candidates.append(
            (f"boundary-{side}", HdNupaAllocation(1.0, 0.0, e, z) if side == 1 else HdNupaAllocation(0.0, 1.0, z, e))
        )
    scored = [(name, a, _rates_for(params, ch, a)) for name, a in candidates]
    name, alloc, rates = _pick(scored)
    certs["chosen"] = name
    report = SolverReport(True, int(steps), abs(float(balance[j])), f"t1 grid of {grid.size} points")
    if name != "interior":
        report.note("boundary allocation beats the best grid point")
    return StrategyResult("hd-nupa", alloc, rates, report, certs, inner_solves=int(steps) * grid.size)


def _single_link_fill(gain, noise, t, budget, gamma_e, k):
    """Water-fill ``budget`` over one link's sub-carriers (multiplier bisection)."""
    hi = float(np.max(_zero_energy_slope(gain, noise, gamma_e, k)))
    lo = hi
    while waterfill_energy(gain, noise, t, lo, gamma_e, k).sum() <= budget:
        lo *= 1e-3
    a, b = math.log(lo), math.log(hi)
    for _ in range(200):
        mid = 0.5 * (a + b)
        spent = waterfill_energy(gain, noise, t, math.exp(mid), gamma_e, k).sum()
        if spent > budget:
            a = mid
        else:
            b = mid
        if abs(spent - budget) < 1e-13 * budget or b - a < 1e-15:
            break
    e = waterfill_energy(gain, noise, t, math.exp(0.5 * (a + b)), gamma_e, k)
    return e * (budget / e.sum())


# --------------------------------------------------------------------------
# FD typical conditions and FD-UPA


@dataclass(frozen=True)
class TypicalConditions:
    holds: bool
    noise_ratio: float
    min_sinr_db: float
    asymmetry: float

    def __bool__(self):
        return self.holds


def check_typical_conditions(params: SystemParams, ch: ChannelRealization, cfg: SolverConfig = SolverConfig()) -> TypicalConditions:
    """Test the regime where the equal FD split is (approximately) optimal.

    Three predicates at the uniform split ``eps1 = eps2 = E/(2K)``: the
    scaled thermal noise ``(gamma+1) N`` is below ``typical_noise_fraction``
    of the weakest sub-carrier's signal-EVM-plus-SI denominator term, the
    weakest per sub-carrier SINR exceeds ``typical_min_sinr_db``, and the
    mirrored channels agree to within ``typical_asymmetry_tol`` relative.
    """
    a1, q2, c1, a2, q1, c2 = model.fd_subcarrier_terms(params, ch)
    e = _budget(params) / 2
    interf1 = e * a1 + e * q2
    interf2 = e * a2 + e * q1
    with np.errstate(divide="ignore"):
        noise_ratio = max(float(np.max(c1 / interf1)), float(np.max(c2 / interf2)))
        sinr1 = params.gamma_e * e * a1 / (interf1 + c1)
        sinr2 = params.gamma_e * e * a2 / (interf2 + c2)
        worst = min(float(np.min(sinr1)), float(np.min(sinr2)))
    min_sinr_db = 10 * math.log10(worst) if worst > 0 else -math.inf

    def rel(x, y):
        scale = max(float(np.max(np.abs(x))), float(np.max(np.abs(y))), 1e-300)
        return float(np.max(np.abs(x - y))) / scale

    asym = max(
        rel(ch.h21, ch.h12),
        rel(ch.h11, ch.h22),
        rel(ch.beta1, ch.beta2),
        abs(params.n1 - params.n2) / max(params.n1, params.n2),
    )
    holds = (
        noise_ratio < cfg.typical_noise_fraction
        and min_sinr_db > cfg.typical_min_sinr_db
        and asym < cfg.typical_asymmetry_tol
    )
    return TypicalConditions(holds, noise_ratio, min_sinr_db, asym)


def _golden_max(fn, lo, hi, tol=1e-12, max_iters=200):
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = fn(c), fn(d)
    it = 0
    while b - a > tol and it < max_iters:
        it += 1
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fn(d)
    return (c, fc) if fc >= fd else (d, fd), it


def solve_fd_upa(params: SystemParams, ch: ChannelRealization, cfg: SolverConfig = SolverConfig()) -> StrategyResult:
    """FD with uniform power: a one-variable search over the energy split.

    Under typical conditions the equal split is returned directly.
    Otherwise the split share ``s = eps1 / (E/K)`` is scanned coarsely,
    Newton with backtracking is run on ``dr/ds = 0`` from the best scan
    point, and golden-section search on the surrounding bracket is the
    fallback. The endpoints ``s = 0`` and ``s = 1`` are always candidates.
    """
    k, budget = params.num_subcarriers, _budget(params)
    terms = model.fd_subcarrier_terms(params, ch)
    gam = params.gamma_e

    def rate(s):
        return float(np.sum(model.fd_pair_rate(gam, k, terms, s * budget, (1 - s) * budget)))

    def slope(s):
        g1, g2 = model.fd_pair_derivatives(gam, k, terms, s * budget, (1 - s) * budget)
        return budget * float(np.sum(g1 - g2))

    def curvature(s):
        _, _, h11, h12, h22 = model.fd_pair_derivatives(gam, k, terms, s * budget, (1 - s) * budget, hessian=True)
        return budget * budget * float(np.sum(h11 - 2 * h12 + h22))

    if budget == 0:
        alloc = FdUpaAllocation(0.0, 0.0)
        return StrategyResult("fd-upa", alloc, _rates_for(params, ch, alloc), SolverReport(True, 0, 0.0, "zero energy budget"))

    typical = check_typical_conditions(params, ch, cfg)
    if typical:
        alloc = FdUpaAllocation(budget / 2, budget / 2)
        report = SolverReport(True, 0, abs(slope(0.5)), "typical conditions: equal split")
        return StrategyResult("fd-upa", alloc, _rates_for(params, ch, alloc), report, {"split_slope": slope(0.5), "chosen": "closed-form"})

    grid = np.linspace(0.0, 1.0, 65)
    vals = np.array([rate(s) for s in grid])
    j = int(np.argmax(vals))
    candidates = [(float(grid[j]), float(vals[j]), "scan")]
    report = SolverReport(False, 0, math.inf)
    if 0 < j < grid.size - 1:
        s_new, rep = newton_backtracking(
            lambda x: np.array([slope(x[0])]),
            lambda x: np.array([[curvature(x[0])]]),
            np.array([grid[j]]),
            NewtonConfig(cfg.newton.alpha, cfg.newton.beta, 1e-10, cfg.newton.max_iters),
            domain=lambda x: 0.0 < x[0] < 1.0,
        ) if curvature(grid[j]) < 0 else (np.array([grid[j]]), SolverReport(False, 0, math.inf, "not concave at scan point"))
        report = rep
        s_star = float(s_new[0])
        if rep.converged and curvature(s_star) < 0 and grid[j - 1] <= s_star <= grid[j + 1]:
            candidates.append((s_star, rate(s_star), "newton"))
        else:
            (s_g, v_g), it = _golden_max(rate, float(grid[j - 1]), float(grid[j + 1]))
            candidates.append((s_g, v_g, "golden"))
            report = SolverReport(True, rep.iterations + it, abs(slope(s_g)), "newton failed; golden-section on the scan bracket")
    else:
        report = SolverReport(True, 0, 0.0, "boundary split is the scan optimum")
    candidates += [(0.0, rate(0.0), "boundary-2"), (1.0, rate(1.0), "boundary-1")]
    s, _, how = max(candidates, key=lambda c: c[1])
    alloc = FdUpaAllocation(s * budget, (1 - s) * budget)
    certs = {"split_slope": slope(s) if 0 < s < 1 else 0.0, "chosen": how}
    if how not in ("newton", "golden"):
        report.note(f"{how} candidate kept")
    return StrategyResult("fd-upa", alloc, _rates_for(params, ch, alloc), report, certs)


# --------------------------------------------------------------------------
# FD-NUPA


class _FdPairSolver:
    """Per sub-carrier maximizer of ``r_k(e1, e2) - lam (e1 + e2)``.

    For a given multiplier each sub-carrier is independent. The candidates
    are: nothing, either node alone (closed-form water-filling, since the
    idle node neither interferes nor earns), and an interior point. The pair
    problem is not concave, so the interior point comes from a log-spaced
    grid scan over both energies followed by batched Newton in log-energy
    from the best grid cell. The candidate with the largest Lagrangian wins.
    """

    grid_points = 49
    grid_span = (1e-7, 10.0)

    def __init__(self, params, ch, cfg):
        self.params, self.cfg = params, cfg
        self.k = params.num_subcarriers
        self.gam = params.gamma_e
        self.terms = model.fd_subcarrier_terms(params, ch)
        a1, q2, c1, a2, q1, c2 = self.terms
        self.n2, self.n1 = params.n2, params.n1
        self.g21, self.g12 = a1, a2
        self.pair_solves = 0
        self.newton_iterations = 0

    def lam_max(self):
        return max(
            float(np.max(_zero_energy_slope(self.g21, self.n2, self.gam, self.k))),
            float(np.max(_zero_energy_slope(self.g12, self.n1, self.gam, self.k))),
        )

    def _lagrangian(self, e1, e2, lam):
        return model.fd_pair_rate(self.gam, self.k, self.terms, e1, e2) - lam * (e1 + e2)

    def solve(self, lam):
        """Best energies ``(e1, e2)`` per sub-carrier for multiplier ``lam``."""
        k = self.k
        self.pair_solves += k
        e1b = waterfill_energy(self.g21, self.n2, 1.0, lam, self.gam, k)
        e2b = waterfill_energy(self.g12, self.n1, 1.0, lam, self.gam, k)
        z = np.zeros(k)
        cand_e1 = [z, e1b, z]
        cand_e2 = [z, z, e2b]
        both = np.flatnonzero((e1b > 0) & (e2b > 0))
        if both.size:
            g1, g2 = self._grid_best(both, np.maximum(e1b[both], e2b[both]), lam)
            e1, e2, ok = self._interior(both, g1, g2, lam)
            for x1, x2 in ((g1, g2), (np.where(ok, e1, g1), np.where(ok, e2, g2))):
                c1, c2 = z.copy(), z.copy()
                c1[both], c2[both] = x1, x2
                cand_e1.append(c1)
                cand_e2.append(c2)
        E1, E2 = np.array(cand_e1), np.array(cand_e2)
        L = self._lagrangian(E1, E2, lam)
        best = np.argmax(L, axis=0)
        cols = np.arange(k)
        return E1[best, cols], E2[best, cols]

    def _grid_best(self, rows, scale, lam):
        """Best point of a log grid in ``(e1, e2)`` for every row, vectorized."""
        lo, hi = self.grid_span
        frac = np.geomspace(lo, hi, self.grid_points)
        terms = tuple(t[rows, None, None] for t in self.terms)
        e1 = scale[:, None, None] * frac[None, :, None]
        e2 = scale[:, None, None] * frac[None, None, :]
        L = model.fd_pair_rate(self.gam, self.k, terms, e1, e2) - lam * (e1 + e2)
        flat = np.argmax(L.reshape(rows.size, -1), axis=1)
        i, j = np.unravel_index(flat, (self.grid_points, self.grid_points))
        return scale * frac[i], scale * frac[j]

    def _interior(self, rows, e1_0, e2_0, lam):
        """Local maximizer of the pair Lagrangian near ``(e1_0, e2_0)``, in log-energy."""
        terms = tuple(t[rows] for t in self.terms)
        gam, k = self.gam, self.k
        # objective in units of the starting energy so gradients are O(1)
        scale = e1_0 + e2_0

        def parts(w, idx):
            e = np.exp(w)
            sub = tuple(t[idx] for t in terms)
            return e, sub

        def fun(w, idx):
            e, sub = parts(w, idx)
            r = model.fd_pair_rate(gam, k, sub, e[:, 0], e[:, 1])
            return (r / lam - e[:, 0] - e[:, 1]) / scale[idx]

        def grad(w, idx):
            e, sub = parts(w, idx)
            g1, g2 = model.fd_pair_derivatives(gam, k, sub, e[:, 0], e[:, 1])
            return e * np.stack([g1 / lam - 1.0, g2 / lam - 1.0], axis=1) / scale[idx, None]

        def hess(w, idx):
            e, sub = parts(w, idx)
            g1, g2, h11, h12, h22 = model.fd_pair_derivatives(gam, k, sub, e[:, 0], e[:, 1], hessian=True)
            e1, e2 = e[:, 0], e[:, 1]
            m11 = e1 * e1 * h11 / lam + e1 * (g1 / lam - 1.0)
            m22 = e2 * e2 * h22 / lam + e2 * (g2 / lam - 1.0)
            m12 = e1 * e2 * h12 / lam
            out = np.stack([np.stack([m11, m12], axis=1), np.stack([m12, m22], axis=1)], axis=1)
            return out / scale[idx, None, None]

        def done(w, idx):
            e, sub = parts(w, idx)
            g1, g2 = model.fd_pair_derivatives(gam, k, sub, e[:, 0], e[:, 1])
            return np.maximum(np.abs(g1 / lam - 1.0), np.abs(g2 / lam - 1.0)) < self.cfg.newton.tol_delta

        w0 = np.log(np.stack([e1_0, e2_0], axis=1))
        # an iterate whose smaller energy falls below 1e-10 of the starting
        # total is heading for the one-node boundary, a separate candidate
        floor = np.log(scale) - 10 * math.log(10)

        def inside(w, idx):
            return np.min(w, axis=1) > floor[idx]

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            w, ok, iters = newton_ascent_batch(fun, grad, hess, w0, done, self.cfg.newton, domain=inside)
        self.newton_iterations += int(iters.sum())
        with np.errstate(over="ignore"):
            return np.exp(w[:, 0]), np.exp(w[:, 1]), ok & np.all(np.isfinite(w), axis=1)

    def solve_modes(self, lam, modes, e1_0, e2_0):
        """Energies for multiplier ``lam`` with every sub-carrier's active set fixed.

        ``modes`` is 0 (idle), 1 (node 1 only), 2 (node 2 only) or 3 (both
        active). Single-node sub-carriers use the closed form; dual ones
        continue the local maximizer from ``(e1_0, e2_0)``. Returns
        ``(e1, e2, ok)`` where ``ok`` is false if a dual sub-carrier lost
        its interior point.
        """
        self.pair_solves += self.k
        e1, e2 = np.zeros(self.k), np.zeros(self.k)
        one, two, both = modes == 1, modes == 2, np.flatnonzero(modes == 3)
        e1[one] = waterfill_energy(self.g21[one], self.n2, 1.0, lam, self.gam, self.k)
        e2[two] = waterfill_energy(self.g12[two], self.n1, 1.0, lam, self.gam, self.k)
        ok = bool(np.all(e1[one] > 0) and np.all(e2[two] > 0))
        if both.size:
            x1, x2, conv = self._interior(both, e1_0[both], e2_0[both], lam)
            e1[both], e2[both] = x1, x2
            ok = ok and bool(np.all(conv))
        return e1, e2, ok

    def kkt(self, e1, e2, lam):
        g1, g2 = model.fd_pair_derivatives(self.gam, self.k, self.terms, e1, e2)
        on = np.concatenate([g1[e1 > 0], g2[e2 > 0]])
        off = np.concatenate([g1[e1 <= 0], g2[e2 <= 0]])
        resid = float(np.max(np.abs(on / lam - 1.0))) if on.size else 0.0
        excess = float(max(0.0, np.max(off / lam - 1.0))) if off.size else 0.0
        return resid, excess


def _modes(e1, e2):
    return (e1 > 0).astype(int) + 2 * (e2 > 0).astype(int)


def _fd_fixed_mode_repair(pair, over, under, budget, tol, max_subsets=16):
    """Meet the budget exactly when the spending jumps at the multiplier.

    ``over`` and ``under`` are ``(e1, e2, lam)`` at the two ends of the
    final multiplier bracket. The sub-carriers whose active set differs
    between the ends are assigned either end's set (every combination when
    there are few of them, otherwise the two pure assignments); with the
    active sets fixed, spending is continuous and decreasing in the
    multiplier, which is bisected again. Returns the best-rate
    ``(e1, e2, lam)`` or ``None`` and the number of multiplier steps.
    """
    (e1o, e2o, lam_o), (e1u, e2u, lam_u) = over, under
    mo, mu = _modes(e1o, e2o), _modes(e1u, e2u)
    switch = np.flatnonzero(mo != mu)
    if switch.size and 2**switch.size <= max_subsets:
        picks = list(itertools.product((False, True), repeat=switch.size))
    else:
        picks = [(False,) * switch.size, (True,) * switch.size]
    best, best_rate, steps = None, -math.inf, 0
    lam0 = math.sqrt(lam_o * lam_u)
    for pick in picks:
        take_over = np.zeros(mo.size, dtype=bool)
        take_over[switch[list(pick)]] = True
        modes = np.where(take_over, mo, mu)
        w1, w2 = np.where(take_over, e1o, e1u), np.where(take_over, e2o, e2u)

        def spend(lam):
            x1, x2, ok = pair.solve_modes(lam, modes, w1, w2)
            return x1, x2, ok, float(x1.sum() + x2.sum())

        # geometric bracket around the jump, then bisection in log scale
        lo, hi = lam0, lam0
        x1, x2, ok, s_lo = spend(lo)
        s_hi = s_lo
        grow = 0
        while ok and s_lo <= budget and grow < 60:
            lo /= 1.05
            x1, x2, ok, s_lo = spend(lo)
            grow += 1
        while ok and s_hi >= budget and grow < 120:
            hi *= 1.05
            _, _, ok, s_hi = spend(hi)
            grow += 1
        steps += grow + 1
        if not ok or s_lo <= budget or s_hi >= budget:
            continue
        a, b = math.log(lo), math.log(hi)
        for _ in range(200):
            mid = math.exp(0.5 * (a + b))
            steps += 1
            # warm start from the previous iterate to stay on the same branch
            y1, y2, ok, sm = spend(mid)
            if not ok:
                break
            if sm > budget:
                a = math.log(mid)
            else:
                b = math.log(mid)
            w1, w2 = np.where(modes == 3, y1, w1), np.where(modes == 3, y2, w2)
            if abs(sm - budget) < tol or b - a < 1e-15:
                break
        if not ok or abs(sm - budget) >= max(tol, 1e-9 * budget):
            continue
        rate = float(np.sum(model.fd_pair_rate(pair.gam, pair.k, pair.terms, y1, y2)))
        if rate > best_rate:
            best, best_rate = (y1, y2, mid), rate
    return best, steps


def _balance_mirrored(gamma_e, k, terms, e1, e2):
    """Orient mirrored sub-carriers so that the two directions' rates balance.

    On a mirror-symmetric channel the pair rate is symmetric in
    ``(e1[k], e2[k])``, so swapping the two energies of a sub-carrier leaves
    the sum rate unchanged but moves rate between the directions. Largest
    imbalances are placed first, each oriented against the running total.
    """
    a1, q2, c1, a2, q1, c2 = terms
    r1 = np.log1p(gamma_e * a1 * e1 / (a1 * e1 + q2 * e2 + c1))
    r2 = np.log1p(gamma_e * a2 * e2 / (a2 * e2 + q1 * e1 + c2))
    d = (r1 - r2) / (k * LN2)
    uneven = np.abs(d) > 1e-12 * max(float(np.max(np.abs(r1 + r2))), 1e-300)
    e1, e2 = e1.copy(), e2.copy()
    running = float(np.sum(d[~uneven]))
    for i in sorted(np.flatnonzero(uneven), key=lambda i: -abs(d[i])):
        if abs(running - d[i]) < abs(running + d[i]):
            e1[i], e2[i] = e2[i], e1[i]
            running -= d[i]
        else:
            running += d[i]
    return e1, e2


def solve_fd_nupa(params: SystemParams, ch: ChannelRealization, cfg: SolverConfig = SolverConfig()) -> StrategyResult:
    """FD with per sub-carrier power: outer multiplier search, per sub-carrier pair solves.

    The energy spent at the per sub-carrier optimum is non-increasing in
    the multiplier, so the multiplier is bracketed geometrically and then
    bisected in log scale until the budget is met (``exact_grid`` instead
    walks a uniform multiplier grid up from zero and stops at the first
    value that fits the budget). Energies are finally scaled to spend the
    budget exactly and the result is compared with the two one-node
    allocations.
    """
    k, budget = params.num_subcarriers, params.total_energy
    if budget == 0:
        z = np.zeros(k)
        alloc = FdNupaAllocation(z, z)
        return StrategyResult("fd-nupa", alloc, _rates_for(params, ch, alloc), SolverReport(True, 0, 0.0, "zero energy budget"))

    pair = _FdPairSolver(params, ch, cfg)
    lam_top = pair.lam_max()
    tol = cfg.energy_rel_tol * 1e-6 * budget
    outer = 0

    def spent(lam):
        e1, e2 = pair.solve(lam)
        return e1, e2, float(e1.sum() + e2.sum())

    if cfg.exact_grid:
        lams = lam_top * np.arange(1, cfg.lambda_grid_points + 1) / cfg.lambda_grid_points
        lam, e1, e2 = lams[-1], np.zeros(k), np.zeros(k)
        for lam in lams:
            outer += 1
            e1, e2, s = spent(lam)
            if s <= budget:
                break
        note = f"uniform multiplier grid, {outer} steps"
    else:
        lo = lam_top
        while True:
            lo *= 1e-2
            outer += 1
            e1, e2, s = spent(lo)
            if s > budget or outer > 200:
                break
        a, b = math.log(lo), math.log(lam_top)
        over = (e1, e2, lo)
        under = (np.zeros(k), np.zeros(k), lam_top)
        best = (e1, e2, s, lo)
        for _ in range(200):
            mid = 0.5 * (a + b)
            outer += 1
            e1, e2, s = spent(math.exp(mid))
            if abs(s - budget) < abs(best[2] - budget):
                best = (e1, e2, s, math.exp(mid))
            if abs(s - budget) < tol or b - a < 1e-14:
                break
            if s > budget:
                a, over = mid, (e1, e2, math.exp(mid))
            else:
                b, under = mid, (e1, e2, math.exp(mid))
        e1, e2, s, lam = best
        note = f"bracketed multiplier bisection, {outer} outer steps"
        if abs(s - budget) >= tol:
            # spending jumps here: some sub-carriers switch active set
            repaired, steps = _fd_fixed_mode_repair(pair, over, under, budget, tol)
            outer += steps
            if repaired is not None:
                e1, e2, lam = repaired
                s = float(e1.sum() + e2.sum())
                note += "; active sets fixed across a spending jump"
    total = e1.sum() + e2.sum()
    if total > 0:
        e1, e2 = e1 * (budget / total), e2 * (budget / total)
    mirrored = check_typical_conditions(params, ch, cfg).asymmetry < cfg.typical_asymmetry_tol
    if mirrored:
        e1, e2 = _balance_mirrored(params.gamma_e, k, pair.terms, e1, e2)
    kkt, excess = pair.kkt(e1, e2, lam)
    certs = {
        "lambda": float(lam),
        "kkt_residual": kkt,
        "kkt_inactive_excess": excess,
        "pre_normalization_energy_error": abs(total - budget) / budget,
    }
    candidates = [("interior", FdNupaAllocation(e1, e2))]
    z = np.zeros(k)
    for side, gain, noise in ((1, pair.g21, params.n2), (2, pair.g12, params.n1)):
        if np.any(gain > 0):
            e = _single_link_fill(gain, noise, 1.0, budget, params.gamma_e, k)
            candidates.append((f"boundary-{side}", FdNupaAllocation(e, z) if side == 1 else FdNupaAllocation(z, e)))
    # the uniform split is feasible here too; keeping it guarantees NUPA never trails UPA
    upa = solve_fd_upa(params, ch, cfg).allocation
    candidates.append(("uniform", FdNupaAllocation(np.full(k, upa.eps1), np.full(k, upa.eps2))))
    scored = [(name, a, _rates_for(params, ch, a)) for name, a in candidates]
    name, alloc, rates = _pick(scored)
    certs["chosen"] = name
    report = SolverReport(kkt < cfg.certificate_tol, outer, kkt, note)
    if name != "interior":
        report.note(f"{name} candidate beats the multiplier solution")
        report.converged = True
    elif not report.converged:
        report.note("KKT residual above tolerance")
    certs["newton_iterations"] = pair.newton_iterations
    return StrategyResult("fd-nupa", alloc, rates, report, certs, inner_solves=pair.pair_solves)
