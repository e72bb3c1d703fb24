import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duplex_asr import channel, model, oracle, solvers
from duplex_asr.model import ChannelRealization, FdUpaAllocation, SystemParams
from duplex_asr.solvers import STRATEGIES, SolverConfig, check_typical_conditions, solve


def energy(dbm):
    return 10 ** (dbm / 10) * 1e-3


def params_at(dbm, k=64, **kw):
    return SystemParams.from_table(energy(dbm), num_subcarriers=k, **kw)


def replace(ch, **kw):
    fields = dict(h21=ch.h21, h12=ch.h12, h11=ch.h11, h22=ch.h22, beta1=ch.beta1, beta2=ch.beta2)
    fields.update(kw)
    return ChannelRealization(**fields)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(time_step=0.0)
    with pytest.raises(ValueError):
        SolverConfig(energy_rel_tol=0.0)


def test_unknown_strategy():
    p = params_at(20, k=4)
    with pytest.raises(ValueError, match="unknown strategy"):
        solve("tdd", p, channel.flat_channel(p))


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_zero_budget(strategy):
    p = SystemParams.from_table(0.0, num_subcarriers=4)
    res = solve(strategy, p, channel.flat_channel(p))
    assert res.asr == 0.0
    assert res.report.converged
    assert res.allocation.violations(p) == []


@pytest.mark.parametrize("strategy", STRATEGIES)
@pytest.mark.parametrize("make", [channel.flat_channel, channel.itu_a_channel, channel.asymmetric_channel])
def test_feasible_and_consistent(strategy, make):
    p = params_at(10, k=16)
    ch = make(p)
    res = solve(strategy, p, ch)
    assert res.allocation.violations(p) == []
    assert res.rates == solvers._rates_for(p, ch, res.allocation)
    assert res.strategy == strategy


class TestHdUpa:
    def test_symmetric_flat(self):
        p = params_at(20)
        res = solvers.solve_hd_upa(p, channel.flat_channel(p))
        a = res.allocation
        assert (a.t1, a.t2) == (0.5, 0.5)
        assert a.eps1 == a.eps2 == pytest.approx(p.total_energy / (2 * p.num_subcarriers), rel=1e-15)
        assert res.rates.r1 == res.rates.r2

    def test_weak_direction_matches_oracle(self):
        p = params_at(20, k=4)
        ch = channel.flat_channel(p)
        ch = replace(ch, h12=ch.h12 * 1e-3)
        cmp = oracle.compare("hd-upa", p, ch, n=200)
        assert abs(cmp["gap"]) <= 0.02
        assert cmp["solver"].report.converged

    def test_boundary_is_certified_on_asymmetric(self):
        p = params_at(20)
        res = solvers.solve_hd_upa(p, channel.asymmetric_channel(p))
        assert res.certificates["chosen"].startswith("boundary")
        assert res.certificates["boundary_gap"] <= 0
        assert res.report.converged

    def test_strict_boundary_skips_newton(self):
        # a strictly dominating boundary is the unique optimum of the concave
        # problem, so no Newton iterations are spent on it
        for dbm in (0, 20, 40):
            p = params_at(dbm)
            res = solvers.solve_hd_upa(p, channel.asymmetric_channel(p))
            assert res.certificates["boundary_gap"] < 0
            assert res.report.iterations == 0
            best = oracle.exhaustive_search("hd-upa", p, channel.asymmetric_channel(p), n=100)
            assert res.asr >= best.asr * (1 - 1e-9)

    def test_interior_certificates(self):
        g21 = np.array([2.64180427, 0.2698473])
        g12 = np.array([1.07473948, 0.53581045])
        p = SystemParams(gamma_e=1000.0, n1=1.0, n2=1.0, total_energy=540.0, num_subcarriers=2)
        ch = ChannelRealization(h21=np.sqrt(g21), h12=np.sqrt(g12), h11=[0, 0], h22=[0, 0], beta1=[0, 0], beta2=[0, 0])
        res = solvers.solve_hd_upa(p, ch)
        assert res.certificates["chosen"] == "interior"
        assert abs(res.certificates["f1"]) < 1e-6 and abs(res.certificates["f2"]) < 1e-6
        assert 0 < res.allocation.t1 < 1


class TestHdNupa:
    def test_symmetric_flat_matches_upa(self):
        p = params_at(20)
        ch = channel.flat_channel(p)
        nupa, upa = solvers.solve_hd_nupa(p, ch), solvers.solve_hd_upa(p, ch)
        assert abs(nupa.asr - upa.asr) <= 1e-3
        assert nupa.allocation.t1 == pytest.approx(0.5)

    def test_zero_gain_gets_zero_energy(self):
        p = params_at(20, k=8)
        ch = channel.itu_a_channel(p)
        h = ch.h21.copy()
        h[3] = 0.0
        res = solvers.solve_hd_nupa(p, replace(ch, h21=h, h12=h))
        assert res.certificates["chosen"] == "interior"
        assert res.allocation.eps1[3] == 0.0 and res.allocation.eps2[3] == 0.0
        assert res.allocation.eps1.sum() > 0 and res.allocation.eps2.sum() > 0

    def test_itu_toy_against_upa_and_oracle(self):
        p = params_at(20, k=4)
        ch = channel.itu_a_channel(p)
        nupa = solvers.solve_hd_nupa(p, ch)
        assert nupa.asr >= solvers.solve_hd_upa(p, ch).asr - 1e-6
        ref = oracle.exhaustive_search("hd-nupa", p, ch)
        assert (ref.asr - nupa.asr) / ref.asr <= 0.02

    def test_energy_budget_met_by_bisection(self):
        p = params_at(20, k=16)
        g21, g12 = channel.itu_a_channel(p).gains()
        cfg = SolverConfig()
        e1, e2, lam, _ = solvers._hd_nupa_inner(p, g21, g12, np.array([0.3]), cfg)
        assert abs(e1.sum() + e2.sum() - p.total_energy) <= cfg.energy_rel_tol * p.total_energy

    def test_certificates(self):
        p = params_at(20)
        res = solvers.solve_hd_nupa(p, channel.itu_a_channel(p))
        c = res.certificates
        assert c["chosen"] == "interior"
        assert abs(c["time_balance"]) <= c["time_balance_bound"] + 1e-15
        assert c["kkt_residual"] < 1e-6
        assert c["kkt_inactive_excess"] == 0.0


class TestWaterfill:
    @given(st.floats(0.1, 10.0), st.floats(0.05, 1.0), st.floats(1e-3, 1.0))
    def test_stationary_where_positive(self, gain, t, frac):
        gam, noise, k = 1000.0, 0.01, 4
        lam = frac * float(solvers._zero_energy_slope(gain, noise, gam, k))
        e = float(solvers.waterfill_energy(gain, noise, t, lam, gam, k))
        if e > 0:
            d = model._hd_energy_derivative(np.array([gain]), np.array([e]), t, gam, noise, k)[0]
            assert d == pytest.approx(lam, rel=1e-9)

    def test_clips_above_zero_energy_slope(self):
        slope = float(solvers._zero_energy_slope(2.0, 0.1, 1000.0, 8))
        assert solvers.waterfill_energy(2.0, 0.1, 0.5, slope * 1.01, 1000.0, 8) == 0.0
        assert solvers.waterfill_energy(0.0, 0.1, 0.5, 1e-9, 1000.0, 8) == 0.0

    def test_monotone_in_multiplier(self):
        lams = np.geomspace(1e-6, 1e3, 200)
        e = solvers.waterfill_energy(1.0, 0.01, 0.5, lams, 1000.0, 1)
        assert np.all(np.diff(e) <= 0)


class TestFdUpa:
    def test_symmetric_high_snr(self):
        p = params_at(30)
        ch = channel.flat_channel(p)
        res = solvers.solve_fd_upa(p, ch)
        a = res.allocation
        assert a.eps1 / a.eps2 == pytest.approx(1.0, abs=1e-6)
        budget = p.total_energy / p.num_subcarriers
        for s in np.linspace(0.0, 1.0, 1000):
            r = model.fd_upa_rates(p, ch, FdUpaAllocation(s * budget, (1 - s) * budget))
            assert res.asr >= r.sum - 1e-12

    def test_dead_backward_channel(self):
        p = params_at(20, k=8)
        ch = channel.flat_channel(p)
        res = solvers.solve_fd_upa(p, replace(ch, h12=np.zeros(8)))
        assert res.allocation.eps2 == 0.0
        assert res.allocation.eps1 == pytest.approx(p.total_energy / 8)
        assert res.rates.r2 == 0.0

    def test_asymmetric_rates_differ(self):
        p = params_at(20)
        res = solvers.solve_fd_upa(p, channel.asymmetric_channel(p))
        assert abs(res.rates.r1 - res.rates.r2) > 0.05

    def test_non_typical_interior_split_is_stationary(self):
        p = params_at(0)
        res = solvers.solve_fd_upa(p, channel.asymmetric_channel(p))
        assert res.certificates["chosen"] in ("newton", "golden")
        assert abs(res.certificates["split_slope"]) < 1e-6

    def test_equal_split_stationary_without_noise(self):
        # with thermal noise negligible the split derivative vanishes at eps1/eps2 = 1
        p = SystemParams(gamma_e=1000.0, n1=1e-30, n2=1e-30, total_energy=1.0, num_subcarriers=4)
        ch = channel.flat_channel(params_at(20, k=4))
        b = p.total_energy / p.num_subcarriers

        def rate_of_x(x):
            e2 = b / (1 + x[0])
            return model.fd_upa_rates(p, ch, FdUpaAllocation(x[0] * e2, e2)).sum

        from duplex_asr.numerics import finite_difference_gradient

        assert abs(finite_difference_gradient(rate_of_x, [1.0], h=1e-5)[0]) < 1e-9


class TestFdNupa:
    def test_flat_typical_equals_upa(self):
        p = params_at(20)
        ch = channel.flat_channel(p)
        nupa, upa = solvers.solve_fd_nupa(p, ch), solvers.solve_fd_upa(p, ch)
        half = p.total_energy / (2 * p.num_subcarriers)
        assert np.allclose(nupa.allocation.eps1, half, rtol=1e-9)
        assert np.allclose(nupa.allocation.eps2, half, rtol=1e-9)
        assert abs(nupa.asr - upa.asr) <= 1e-9

    def test_large_multiplier_clips_to_zero(self):
        p = params_at(20, k=8)
        pair = solvers._FdPairSolver(p, channel.itu_a_channel(p), SolverConfig())
        e1, e2 = pair.solve(pair.lam_max() * 10)
        assert np.all(e1 == 0) and np.all(e2 == 0)

    def test_spending_non_increasing_in_multiplier(self):
        p = params_at(10, k=8)
        pair = solvers._FdPairSolver(p, channel.asymmetric_channel(p), SolverConfig())
        lams = pair.lam_max() * np.geomspace(1e-4, 1.0, 30)
        spent = [sum(map(np.sum, pair.solve(lam))) for lam in lams]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(spent, spent[1:]))

    def test_asymmetric_toy_against_oracle(self):
        p = params_at(20, k=4)
        cmp = oracle.compare("fd-nupa", p, channel.asymmetric_channel(p))
        assert cmp["gap"] <= 0.02

    def test_asymmetric_kkt_certificate(self):
        p = params_at(20)
        res = solvers.solve_fd_nupa(p, channel.asymmetric_channel(p))
        if res.certificates["chosen"] == "interior":
            assert res.certificates["kkt_residual"] < 1e-6
        assert res.report.converged

    def test_spending_jump_keeps_stationarity(self):
        # here a sub-carrier switches between one and two active nodes at the
        # budget-matching multiplier, so plain rescaling would break the KKT conditions
        p = params_at(10, k=8)
        res = solvers.solve_fd_nupa(p, channel.itu_a_channel(p, rng_seed=3))
        assert "active sets fixed" in res.report.notes
        assert res.certificates["kkt_residual"] < 1e-6
        assert res.report.converged and res.allocation.violations(p) == []

    def test_exact_grid_mode(self):
        p = params_at(20, k=8)
        ch = channel.asymmetric_channel(p)
        fast = solvers.solve_fd_nupa(p, ch)
        grid = solvers.solve_fd_nupa(p, ch, SolverConfig(exact_grid=True))
        assert "uniform multiplier grid" in grid.report.notes
        assert grid.allocation.violations(p) == []
        assert abs(grid.asr - fast.asr) / fast.asr < 0.01

    def test_inner_solves_counted_per_subcarrier(self):
        p = params_at(20, k=4)
        res = solvers.solve_fd_nupa(p, channel.itu_a_channel(p))
        assert res.inner_solves % 4 == 0 and res.inner_solves > 0


class TestTypicalConditions:
    def test_flat_20dbm(self):
        p = params_at(20)
        tc = check_typical_conditions(p, channel.flat_channel(p, -60.0))
        assert tc
        assert tc.noise_ratio < 0.01 and tc.min_sinr_db > 10 and tc.asymmetry == 0.0

    def test_asymmetric_fails_on_symmetry(self):
        p = params_at(20)
        tc = check_typical_conditions(p, channel.asymmetric_channel(p))
        assert not tc and tc.asymmetry > 1e-9

    def test_vanishing_energy(self):
        p = SystemParams.from_table(1e-15, num_subcarriers=64)
        tc = check_typical_conditions(p, channel.flat_channel(p))
        assert not tc and tc.noise_ratio > 0.01

    def test_unequal_noise_is_asymmetric(self):
        p = params_at(20)
        q = SystemParams(p.gamma_e, p.n1, 2 * p.n2, p.total_energy, p.num_subcarriers)
        assert not check_typical_conditions(q, channel.flat_channel(p))


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 40.0))
def test_dominance_on_random_channels(seed, dbm):
    rng = np.random.default_rng(seed)
    k = 4
    p = params_at(dbm, k=k)
    base = channel.flat_channel(p)
    scale = np.abs(base.h21[0])

    def cplx(s):
        return s * (rng.normal(size=k) + 1j * rng.normal(size=k)) / math.sqrt(2)

    ch = replace(base, h21=cplx(scale), h12=cplx(scale), h11=cplx(1e-3), h22=cplx(1e-3))
    results = {s: solve(s, p, ch) for s in STRATEGIES}
    for res in results.values():
        assert res.allocation.violations(p) == []
    assert results["hd-nupa"].asr >= results["hd-upa"].asr - 1e-6
    assert results["fd-nupa"].asr >= results["fd-upa"].asr - 1e-6


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_deterministic(strategy):
    p = params_at(20, k=16)
    ch = channel.itu_a_channel(p)
    a, b = solve(strategy, p, ch), solve(strategy, p, ch)
    assert a.rates == b.rates
