import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from duplex_asr import model
from duplex_asr.model import AbcCoefficients, ChannelRealization, SystemParams
from duplex_asr.numerics import (
    BracketError,
    NewtonConfig,
    SingularSystemError,
    bisection,
    extrapolated_gradient,
    finite_difference_gradient,
    grid_search,
    newton_ascent_batch,
    newton_backtracking,
)


class TestNewtonConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(alpha=0.0), dict(alpha=0.5), dict(beta=1.0), dict(beta=0.0), dict(tol_delta=0.0), dict(max_iters=0)]
    )
    def test_rejects_out_of_range(self, kwargs):
        with pytest.raises(ValueError):
            NewtonConfig(**kwargs)


class TestNewtonBacktracking:
    def test_affine_in_one_step(self):
        x, rep = newton_backtracking(
            lambda v: np.array([v[0] + v[1] - 3, v[0] - v[1] - 1]),
            lambda v: np.array([[1.0, 1.0], [1.0, -1.0]]),
            [0.0, 0.0],
        )
        assert np.allclose(x, [2.0, 1.0], atol=1e-14)
        assert rep.converged and rep.iterations == 1

    def test_square_root(self):
        x, rep = newton_backtracking(lambda v: v**2 - 2, lambda v: np.array([[2 * v[0]]]), [1.0], NewtonConfig(tol_delta=1e-10))
        assert rep.converged
        assert x[0] == pytest.approx(math.sqrt(2), abs=1e-10)
        assert rep.final_residual < 1e-10

    def test_singular_raises(self):
        with pytest.raises(SingularSystemError, match="cond"):
            newton_backtracking(lambda v: np.array([v[0] + v[1], v[0] + v[1] - 1]), lambda v: np.ones((2, 2)), [0.0, 0.0])

    def test_non_convergence_returns_best(self):
        cfg = NewtonConfig(max_iters=2, tol_delta=1e-14)
        x, rep = newton_backtracking(lambda v: v**3 - 8, lambda v: np.array([[3 * v[0] ** 2]]), [50.0], cfg)
        assert not rep.converged and rep.iterations == 2
        assert abs(x[0] ** 3 - 8) == pytest.approx(rep.final_residual)

    def test_merit_non_increasing(self):
        def res(v):
            return np.array([math.exp(v[0]) - 2.0, v[1] ** 3 + v[1] - 2.0])

        def jac(v):
            return np.array([[math.exp(v[0]), 0.0], [0.0, 3 * v[1] ** 2 + 1]])

        x0 = np.array([3.0, -3.0])
        _, rep = newton_backtracking(res, jac, x0)
        assert rep.converged and rep.iterations > 2
        # replay with a growing iteration cap to read off each accepted iterate
        merits = []
        for n in range(1, rep.iterations + 1):
            y, _ = newton_backtracking(res, jac, x0, NewtonConfig(max_iters=n, tol_delta=1e-300))
            merits.append(float(res(y) @ res(y)))
        # Armijo makes every accepted step a strict decrease
        assert all(b < a for a, b in zip(merits, merits[1:]))

    def test_domain_is_respected(self):
        seen = []

        def res(v):
            seen.append(v[0])
            return np.array([math.log(v[0]) - 1.0])

        x, rep = newton_backtracking(res, lambda v: np.array([[1.0 / v[0]]]), [20.0], domain=lambda v: v[0] > 0)
        assert rep.converged and x[0] == pytest.approx(math.e)
        assert min(seen) > 0

    def test_hd_upa_toy_without_interior_root(self):
        # K=1 toy A1=1000,B1=1,C1=1001 and A2=500,B2=1,C2=1001: along f1=0 the
        # second residual stays positive, so no positive root exists and Newton
        # must not claim one
        c = AbcCoefficients(
            a_k1=np.array([1000.0]), b_k1=np.array([1.0]), c_k1=np.array([1001.0]),
            a_k2=np.array([500.0]), b_k2=np.array([1.0]), c_k2=np.array([1001.0]),
        )
        roots = _curve_scan_roots(c)
        assert roots == []
        _, rep = newton_backtracking(
            lambda v: np.array(model.hd_upa_residuals(c, *v)),
            lambda v: model.hd_upa_residual_jacobian(c, *v),
            [1.0, 1.0],
            NewtonConfig(tol_delta=1e-12),
            domain=lambda v: bool(np.all(v > 0)),
        )
        assert not rep.converged

    def test_hd_upa_toy_root_matches_dense_scan(self):
        from duplex_asr.solvers import solve_hd_upa

        g21 = np.array([2.64180427, 0.2698473])
        g12 = np.array([1.07473948, 0.53581045])
        params = SystemParams(gamma_e=1000.0, n1=1.0, n2=1.0, total_energy=540.0, num_subcarriers=2)
        ch = ChannelRealization(
            h21=np.sqrt(g21), h12=np.sqrt(g12), h11=np.zeros(2), h22=np.zeros(2), beta1=np.zeros(2), beta2=np.zeros(2)
        )
        roots = _curve_scan_roots(model.abc_coefficients(params, ch))
        assert len(roots) == 1
        res = solve_hd_upa(params, ch)
        assert res.certificates["chosen"] == "interior"
        got = np.array([res.certificates["p1"], res.certificates["p2"]])
        assert np.allclose(got, roots[0], rtol=1e-6)


def _curve_scan_roots(c, p1_grid=np.logspace(-4, 6, 400)):
    """Positive roots of the HD-UPA residual system by following the f1 = 0 curve.

    For each p1 the matching p2 solves f1 = 0 by bisection (the marginal sum
    is decreasing in power); sign changes of f2 along the curve are then
    bisected in log p1.
    """

    def s(a, b, cc, p):
        return model._marginal_sum(a, b, cc, p)

    def p2_of(p1):
        target = s(c.a_k1, c.b_k1, c.c_k1, p1)
        if target >= s(c.a_k2, c.b_k2, c.c_k2, 0.0):
            return None
        lo, hi = 0.0, 1.0
        while s(c.a_k2, c.b_k2, c.c_k2, hi) > target:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if s(c.a_k2, c.b_k2, c.c_k2, mid) > target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def f2(p1):
        p2 = p2_of(p1)
        return None if p2 is None else model.hd_upa_residuals(c, p1, p2)[1]

    roots = []
    vals = [f2(p) for p in p1_grid]
    for i in range(len(p1_grid) - 1):
        a, b = vals[i], vals[i + 1]
        if a is None or b is None or (a > 0) == (b > 0):
            continue
        lo, hi = math.log(p1_grid[i]), math.log(p1_grid[i + 1])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if (f2(math.exp(mid)) > 0) == (a > 0):
                lo = mid
            else:
                hi = mid
        p1 = math.exp(0.5 * (lo + hi))
        roots.append(np.array([p1, p2_of(p1)]))
    return roots


class TestBisection:
    def test_linear(self):
        root, _ = bisection(lambda x: x - 1, 0.0, 2.0, 1e-12)
        assert root == pytest.approx(1.0, abs=1e-12)

    def test_quadratic(self):
        root, _ = bisection(lambda x: x * x - 2, 0.0, 2.0, 1e-10)
        assert abs(root * root - 2) < 1e-10

    def test_same_sign(self):
        with pytest.raises(BracketError, match="widen"):
            bisection(lambda x: x * x + 1, 0.0, 2.0, 1e-10)

    def test_decreasing_function(self):
        root, _ = bisection(lambda x: 3.0 - x, 0.0, 10.0, 1e-12)
        assert root == pytest.approx(3.0, abs=1e-12)

    @given(st.floats(0.01, 0.99), st.floats(1e-12, 1e-3))
    def test_iteration_bound(self, r, tol):
        root, it = bisection(lambda x: x - r, 0.0, 1.0, tol)
        assert abs(root - r) < tol or it <= 60
        assert it <= math.ceil(math.log2(1.0 / tol)) + 2


class TestGridSearch:
    def test_minimize(self):
        x, v = grid_search(lambda x: (x - 0.3) ** 2, 0.0, 1.0, 0.1)
        assert x == pytest.approx(0.3)

    def test_residual_tie_goes_to_smaller(self):
        x, v = grid_search(lambda x: x - 0.55, 0.0, 1.0, 0.1, mode="residual")
        assert x == pytest.approx(0.5)
        assert v == pytest.approx(0.05)

    def test_point_count(self):
        seen = []
        grid_search(lambda x: seen.append(x) or 0.0, 0.0, 1.0, 0.1)
        assert len(seen) == 11 and seen[-1] == pytest.approx(1.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            grid_search(lambda x: x, 0.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            grid_search(lambda x: x, 1.0, 0.0, 0.1)


class TestFiniteDifference:
    def test_square(self):
        g = finite_difference_gradient(lambda x: x[0] ** 2, [3.0], h=1e-5)
        assert g[0] == pytest.approx(6.0, abs=1e-8)

    def test_product(self):
        g = finite_difference_gradient(lambda x: x[0] * x[1], [2.0, 3.0])
        assert np.allclose(g, [3.0, 2.0], atol=1e-9)


class TestExtrapolatedGradient:
    def test_smooth_function(self):
        g = extrapolated_gradient(lambda x: math.exp(x[0]) * math.sin(x[1]), [1.0, 0.5])
        assert np.allclose(g, [math.e * math.sin(0.5), math.e * math.cos(0.5)], rtol=1e-11)

    def test_large_nearly_flat_function(self):
        # plain central differences lose the 1e-6 slope to rounding of the 1e3 offset
        def f(x):
            return 1e3 + 1e-6 * x[0] ** 2

        plain = finite_difference_gradient(f, [1.0], h=1e-5)[0]
        assert abs(plain / 2e-6 - 1) > 1e-6
        assert extrapolated_gradient(f, [1.0])[0] == pytest.approx(2e-6, rel=1e-9)


class TestNewtonAscentBatch:
    def _quadratics(self, centers, curv):
        def fun(x, rows):
            return -np.sum(curv[rows] * (x - centers[rows]) ** 2, axis=1)

        def grad(x, rows):
            return -2 * curv[rows] * (x - centers[rows])

        def hess(x, rows):
            return np.stack([np.diag(-2 * c) for c in curv[rows]])

        def done(x, rows):
            return np.max(np.abs(grad(x, rows)), axis=1) < 1e-10

        return fun, grad, hess, done

    def test_concave_quadratics_in_one_step(self):
        rng = np.random.default_rng(0)
        centers = rng.normal(size=(20, 2))
        curv = rng.uniform(0.5, 5.0, size=(20, 2))
        fun, grad, hess, done = self._quadratics(centers, curv)
        x, conv, iters = newton_ascent_batch(fun, grad, hess, np.zeros((20, 2)), done)
        assert conv.all() and np.all(iters == 1)
        assert np.allclose(x, centers)

    def test_escapes_saddle_direction(self):
        # f = -x^2 + y^2/2 - y^4/4 has maxima at y = +-1; start near the saddle y=0
        def fun(x, rows):
            return -x[:, 0] ** 2 + x[:, 1] ** 2 / 2 - x[:, 1] ** 4 / 4

        def grad(x, rows):
            return np.stack([-2 * x[:, 0], x[:, 1] - x[:, 1] ** 3], axis=1)

        def hess(x, rows):
            h = np.zeros((x.shape[0], 2, 2))
            h[:, 0, 0] = -2
            h[:, 1, 1] = 1 - 3 * x[:, 1] ** 2
            return h

        def done(x, rows):
            return np.max(np.abs(grad(x, rows)), axis=1) < 1e-10

        x, conv, _ = newton_ascent_batch(fun, grad, hess, np.array([[0.5, 0.1], [0.3, -0.1]]), done)
        assert conv.all()
        assert np.allclose(np.abs(x[:, 1]), 1.0) and np.allclose(x[:, 0], 0.0)

    def test_domain_abandons_rows(self):
        centers = np.array([[1.0], [-1.0]])
        curv = np.ones((2, 1))
        fun, grad, hess, done = self._quadratics(centers, curv)
        x, conv, _ = newton_ascent_batch(
            fun, grad, hess, np.zeros((2, 1)), done, domain=lambda x, rows: x[:, 0] > -0.5
        )
        assert conv.tolist() == [True, False]

    def test_non_finite_hessian_fails_row(self):
        fun, grad, _, done = self._quadratics(np.zeros((2, 1)), np.ones((2, 1)))

        def hess(x, rows):
            h = -2 * np.ones((x.shape[0], 1, 1))
            h[rows == 1] = np.nan
            return h

        _, conv, _ = newton_ascent_batch(fun, grad, hess, np.ones((2, 1)), done)
        assert conv.tolist() == [True, False]
