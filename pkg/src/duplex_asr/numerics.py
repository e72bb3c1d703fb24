"""Small numerical kernels shared by the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NewtonConfig",
    "SolverReport",
    "SingularSystemError",
    "BracketError",
    "newton_backtracking",
    "bisection",
    "grid_search",
    "finite_difference_gradient",
    "extrapolated_gradient",
    "newton_ascent_batch",
]


class SingularSystemError(np.linalg.LinAlgError):
    """The linearized Newton system could not be solved."""


class BracketError(ValueError):
    """The bisection bracket does not straddle a sign change."""


@dataclass(frozen=True)
class NewtonConfig:
    """Backtracking Newton settings.

    ``alpha`` and ``beta`` are the Armijo fraction and step shrink factor,
    ``tol_delta`` is the residual-norm tolerance (stop once the merit
    ``sum(res**2)`` drops below ``tol_delta**2``).
    """

    alpha: float = 0.01
    beta: float = 0.5
    tol_delta: float = 1e-8
    max_iters: int = 100

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.tol_delta > 0:
            raise ValueError("tol_delta must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    final_residual: float
    notes: str = ""

    def note(self, text: str) -> None:
        self.notes = f"{self.notes}; {text}" if self.notes else text


def newton_backtracking(residuals, jacobian, x0, cfg: NewtonConfig = NewtonConfig(), domain=None):
    """Solve ``residuals(x) = 0`` by Newton steps with an Armijo line search.

    The merit is ``f(x) = sum(residuals(x)**2)``; its directional derivative
    along the Newton step is ``-2 f(x)``. The step length restarts at 1 on
    every outer iteration. ``domain`` is an optional predicate; trial points
    outside it are treated like failed Armijo tests.

    Returns ``(x, SolverReport)``. A singular Jacobian raises
    ``SingularSystemError`` carrying the condition number.
    """
    x = np.array(x0, dtype=float).reshape(-1)
    r = np.atleast_1d(np.asarray(residuals(x), dtype=float))
    f = float(r @ r)
    tol2 = cfg.tol_delta**2
    best_x, best_f = x.copy(), f
    it = 0
    while f >= tol2 and it < cfg.max_iters:
        it += 1
        jac = np.atleast_2d(np.asarray(jacobian(x), dtype=float))
        cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond > 1e15:
            raise SingularSystemError(f"singular Newton system at iteration {it} (cond={cond:.3g})")
        dx = np.linalg.solve(jac, -r)
        slope = -2.0 * f  # grad(f) . dx for the exact Newton direction
        t = 1.0
        while True:
            xt = x + t * dx
            if domain is None or domain(xt):
                rt = np.atleast_1d(np.asarray(residuals(xt), dtype=float))
                ft = float(rt @ rt)
                if np.isfinite(ft) and ft <= f + cfg.alpha * t * slope:
                    break
            t *= cfg.beta
            if t < 1e-16:
                report = SolverReport(False, it, math.sqrt(best_f), "line search stalled")
                return best_x, report
        x, r, f = xt, rt, ft
        if f < best_f:
            best_x, best_f = x.copy(), f
    converged = best_f < tol2
    report = SolverReport(converged, it, math.sqrt(best_f), "" if converged else "max iterations reached")
    return best_x, report


def bisection(g, lo: float, hi: float, tol: float, max_iters: int = 200):
    """Root of a monotone scalar function on ``[lo, hi]``.

    Stops when ``|g(mid)| < tol`` or when the bracket can no longer be
    split in floating point. Returns ``(root, iterations)``.
    """
    glo, ghi = g(lo), g(hi)
    if glo == 0:
        return lo, 0
    if ghi == 0:
        return hi, 0
    if (glo > 0) == (ghi > 0):
        raise BracketError(f"g({lo})={glo} and g({hi})={ghi} share a sign; widen the bracket")
    it = 0
    while it < max_iters:
        it += 1
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) < tol or mid in (lo, hi):
            return mid, it
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi), it


def grid_search(fn, a: float, b: float, step: float, mode: str = "min"):
    """Scan ``a, a+step, ..., b`` and return ``(best_point, best_value)``.

    ``mode="min"`` minimizes ``fn``; ``mode="residual"`` minimizes ``|fn|``
    which is how a root-style predicate is scanned. Ties (within a relative
    ``1e-9``, so round-off in the abscissae does not decide them) keep the
    smaller abscissa. The point count is ``floor((b - a)/step) + 1``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if b < a:
        raise ValueError("empty search range")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    pts = a + step * np.arange(n)
    best_x, best_v = None, math.inf
    for x in pts:
        v = fn(float(x))
        score = abs(v) if mode == "residual" else v
        if best_x is None or score < best_v - 1e-9 * max(1.0, abs(best_v)):
            best_x, best_v = float(x), score
    return best_x, best_v


def finite_difference_gradient(f, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.array(x, dtype=float).reshape(-1)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


def extrapolated_gradient(f, x, h: float = 0.1, levels: int = 8) -> np.ndarray:
    """Central differences refined by Richardson extrapolation (Ridders' tableau).

    Each coordinate starts from a central difference with step ``h``, the
    step is halved ``levels - 1`` times and the tableau eliminates the even
    powers of the step from the truncation error. The entry whose change
    from its neighbours is smallest is returned. Large starting steps keep
    the function differences well above rounding, which matters when the
    function is large and nearly flat.
    """
    x = np.array(x, dtype=float).reshape(-1)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        table = np.empty((levels, levels))
        best, best_err = math.nan, math.inf
        step = h
        for row in range(levels):
            e[i] = step
            table[row, 0] = (f(x + e) - f(x - e)) / (2 * step)
            fac = 1.0
            for col in range(1, row + 1):
                fac *= 4.0
                table[row, col] = (fac * table[row, col - 1] - table[row - 1, col - 1]) / (fac - 1.0)
                err = max(abs(table[row, col] - table[row, col - 1]), abs(table[row, col] - table[row - 1, col - 1]))
                if err < best_err:
                    best, best_err = table[row, col], err
            step /= 2.0
        grad[i] = best
    return grad


def newton_ascent_batch(fun, grad, hess, x0, done, cfg: NewtonConfig = NewtonConfig(), domain=None, min_step=1e-12):
    """Maximize many independent small smooth functions at once.

    Each system takes saddle-free Newton steps: the Hessian's eigenvalues
    are replaced by their negated absolute values (floored relative to the
    largest), so the step is an ascent direction even where the function is
    not concave, and an Armijo line search on the function value decides
    its length. Where the Hessian is negative definite a step that shrinks
    the gradient norm is accepted as well, because near a maximum rounding
    hides the function's increase. ``fun``, ``grad``, ``hess`` and ``done`` all take
    ``(x, rows)`` and return per-row values of shape ``(m,)``, ``(m, n)``,
    ``(m, n, n)`` and a boolean ``(m,)`` convergence mask. ``domain`` is an
    optional ``(x, rows)`` mask; a system whose accepted iterate leaves it
    is abandoned. Returns ``(x, converged, iterations)``.
    """
    x = np.array(x0, dtype=float)
    m = x.shape[0]
    all_rows = np.arange(m)
    f = fun(x, all_rows)
    conv = np.asarray(done(x, all_rows), dtype=bool)
    failed = ~np.isfinite(f)
    iters = np.zeros(m, dtype=int)
    for _ in range(cfg.max_iters):
        act = np.flatnonzero(~conv & ~failed)
        if act.size == 0:
            break
        iters[act] += 1
        g = grad(x[act], act)
        h = hess(x[act], act)
        ok_h = np.all(np.isfinite(h), axis=(1, 2)) & np.all(np.isfinite(g), axis=1)
        failed[act[~ok_h]] = True
        act, g, h = act[ok_h], g[ok_h], h[ok_h]
        if act.size == 0:
            continue
        mu, vec = np.linalg.eigh(h)
        mag = np.abs(mu)
        mag = np.maximum(mag, 1e-12 * np.max(mag, axis=1, keepdims=True) + 1e-300)
        proj = np.einsum("mji,mj->mi", vec, g) / mag
        d = np.einsum("mij,mj->mi", vec, proj)
        slope = np.sum(g * d, axis=1)
        gnorm = np.sum(g * g, axis=1)
        concave = np.all(mu < 0, axis=1)
        t = np.ones(act.size)
        pending = np.ones(act.size, dtype=bool)
        while pending.any():
            idx = np.flatnonzero(pending)
            xt = x[act[idx]] + t[idx, None] * d[idx]
            ft = fun(xt, act[idx])
            ok = np.isfinite(ft) & (ft >= f[act[idx]] + cfg.alpha * t[idx] * slope[idx])
            # close to a maximum the function value stops resolving progress,
            # so where the model is concave a step that shrinks the gradient also counts
            near = ~ok & concave[idx] & np.isfinite(ft)
            if near.any():
                gt = grad(xt[near], act[idx[near]])
                shrink = np.sum(gt * gt, axis=1) <= gnorm[idx[near]] * (1.0 - 2.0 * cfg.alpha * t[idx[near]])
                ok[np.flatnonzero(near)[shrink]] = True
            rows = act[idx[ok]]
            x[rows], f[rows] = xt[ok], ft[ok]
            pending[idx[ok]] = False
            t[idx[~ok]] *= cfg.beta
            stalled = pending & (t < min_step)
            failed[act[stalled]] = True
            pending &= ~stalled
        moved = act[~failed[act]]
        if moved.size:
            if domain is not None:
                failed[moved[~np.asarray(domain(x[moved], moved), dtype=bool)]] = True
            conv[moved] = np.asarray(done(x[moved], moved), dtype=bool)
    return x, conv & ~failed, iters
