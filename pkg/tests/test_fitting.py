import itertools

import numpy as np
import pytest
from scipy.integrate import quad, trapezoid as sp_trapezoid

from sirrom.errors import DomainError
from sirrom.fitting import (BG, IR, fit, fit_bg, fit_ir, loss_bg, loss_ir, optimize_initial_state,
                            trapezoid)
from sirrom.models import RateFunction, TimeGrid, simulate_sir_tv
from sirrom.reduction import ENG, NMF, SVD, ReducedBasis, svd_basis, weighted_system
from sirrom.timeseries import HealthSeries, ObservedRates, dates_from, observed_rates

N = 1e6


def smooth_modes(q):
    t = np.linspace(0, 1, q)
    return np.array([np.ones(q), np.exp(-2 * t), 1 + np.sin(np.pi * t), 0.5 + t ** 2])


def series_from(beta, gamma, grid, i0=1e3, r0=0.0):
    tr = simulate_sir_tv(beta, gamma, N - i0 - r0, i0, r0, grid, max_substep=0.01)
    return HealthSeries(dates_from("2020-03-01", grid.count), tr.i, tr.r, N), tr


def exact_observed(beta, gamma):
    g = beta.grid
    return ObservedRates(g, beta, gamma, beta.values / gamma.values)


@pytest.fixture(scope="module")
def setting():
    grid = TimeGrid.daily(45)
    modes = smooth_modes(grid.count)
    cb, cg = np.array([0.1, 0.15, 0.05, 0.0]), np.array([0.0, 0.02, 0.0, 0.08])
    bb = ReducedBasis(grid, modes, NMF)
    bg = ReducedBasis(grid, modes, NMF)
    beta, gamma = bb.rate(cb), bg.rate(cg)
    obs, truth = series_from(beta, gamma, grid)
    return dict(grid=grid, bb=bb, bg=bg, cb=cb, cg=cg, beta=beta, gamma=gamma, obs=obs, truth=truth)


class TestLosses:
    def test_trapezoid_matches_scipy(self, rng):
        v = rng.random(17)
        assert trapezoid(v, 0.5) == pytest.approx(sp_trapezoid(v, dx=0.5), rel=1e-14)

    def test_loss_bg_zero_at_observed(self, setting):
        o = observed_rates(setting["obs"])
        assert loss_bg(o.beta_star, o.gamma_star, o) == 0

    def test_loss_bg_quadrature(self, setting):
        o = exact_observed(setting["beta"], setting["gamma"])
        g = setting["grid"]
        shift = RateFunction(g, setting["beta"].values + 0.01 * np.cos(g.times / 5))
        val = loss_bg(shift, setting["gamma"], o, (3, 30))
        d = lambda t: (0.01 * np.cos(t / 5)) ** 2
        exact = quad(d, 3, 29)[0]
        # trapezoid bound (b - a) h^2 max|f''| / 12 with |f''| <= 2e-4 / 25
        assert abs(val - exact) <= 26 / 12 * 8e-6
        assert val == pytest.approx(sp_trapezoid(d(np.arange(3.0, 30.0))), rel=1e-12)

    def test_loss_ir_zero_on_truth(self, setting):
        assert loss_ir(setting["beta"], setting["gamma"], setting["obs"]) < 1e-6 * N

    def test_window_checks(self, setting):
        o = observed_rates(setting["obs"])
        for w in [(5, 6), (10, 5), (0, 46), (-1, 10)]:
            with pytest.raises(ValueError):
                loss_bg(o.beta_star, o.gamma_star, o, w)


class TestBg:
    def test_exact_recovery_with_exact_rates(self, setting):
        o = exact_observed(setting["beta"], setting["gamma"])
        res = fit_bg(setting["bb"], setting["bg"], setting["obs"], (0, 31), observed=o)
        np.testing.assert_allclose(res.coef_beta, setting["cb"], atol=1e-9)
        np.testing.assert_allclose(res.coef_gamma, setting["cg"], atol=1e-9)
        assert res.loss < 1e-18
        assert res.routine == BG and res.fit_end == 30

    def test_finite_difference_rates_close(self, setting):
        res = fit(setting["bb"], setting["bg"], setting["obs"], BG, (0, 31))
        # daily finite differences are biased by O(rate^2) at this growth speed
        np.testing.assert_allclose(res.beta_fit.values[:31], setting["beta"].values[:31], rtol=6e-2)

    def test_cone_solution_matches_enumeration(self, setting, rng):
        o = observed_rates(setting["obs"])
        noisy = RateFunction(setting["grid"], o.beta_star.values * (1 + 0.2 * rng.standard_normal(45)))
        o2 = ObservedRates(o.grid, noisy, o.gamma_star, o.r0)
        res = fit_bg(setting["bb"], setting["bg"], setting["obs"], (2, 30), observed=o2)
        a, y = weighted_system(noisy, setting["bb"], (2, 30), weighted=True)
        best = min(
            (float(np.sum((a[:, list(s)] @ np.linalg.lstsq(a[:, list(s)], y, rcond=None)[0] - y) ** 2)), s)
            for k in range(1, 5) for s in itertools.combinations(range(4), k)
            if np.all(np.linalg.lstsq(a[:, list(s)], y, rcond=None)[0] >= 0))
        assert float(np.sum((a @ res.coef_beta - y) ** 2)) == pytest.approx(best[0], rel=1e-9)
        assert np.all(res.coef_beta >= 0)

    def test_nested_svd_loss_nonincreasing(self, setting, rng):
        g = setting["grid"]
        rows_b = np.array([setting["beta"].values * s + 0.01 * rng.random(45) for s in rng.uniform(0.5, 2, 40)])
        rows_g = np.array([setting["gamma"].values * s + 0.01 * rng.random(45) for s in rng.uniform(0.5, 2, 40)])
        full_b, full_g = svd_basis(rows_b, 10, grid=g), svd_basis(rows_g, 10, grid=g)
        losses = [fit_bg(full_b.truncate(n), full_g.truncate(n), setting["obs"], (0, 31)).loss
                  for n in range(1, 11)]
        assert np.all(np.diff(losses) <= 1e-12 * losses[0])

    def test_misaligned_basis(self, setting):
        other = ReducedBasis(TimeGrid.daily(45, t0=1.0), setting["bb"].modes, NMF)
        with pytest.raises(ValueError, match="aligned"):
            fit_bg(other, setting["bg"], setting["obs"], (0, 31))
        short = ReducedBasis(TimeGrid.daily(20), setting["bb"].modes[:, :20], NMF)
        with pytest.raises(ValueError, match="cover"):
            fit_bg(short, short, setting["obs"], (0, 31))

    def test_unknown_routine(self, setting):
        with pytest.raises(ValueError, match="routine"):
            fit(setting["bb"], setting["bg"], setting["obs"], "XX")


class TestIr:
    def test_improves_on_bg(self, setting):
        o = observed_rates(setting["obs"])
        res = fit_ir(setting["bb"], setting["bg"], setting["obs"], (0, 31), starts=2, seed=1)
        bg = fit_bg(setting["bb"], setting["bg"], setting["obs"], (0, 31), observed=o)
        assert res.routine == IR
        assert res.loss <= res.diagnostics["start_loss"]
        assert res.loss == pytest.approx(loss_ir(res.beta_fit, res.gamma_fit, setting["obs"], (0, 31)),
                                         rel=1e-9)
        assert res.loss <= loss_ir(bg.beta_fit, bg.gamma_fit, setting["obs"], (0, 31)) * (1 + 1e-12)
        assert np.all(res.coef_beta >= 0) and np.all(res.coef_gamma >= 0)

    def test_seeded_determinism(self, setting):
        a = fit_ir(setting["bb"], setting["bg"], setting["obs"], (0, 31), starts=1, seed=3)
        b = fit_ir(setting["bb"], setting["bg"], setting["obs"], (0, 31), starts=1, seed=3)
        np.testing.assert_array_equal(a.coef_beta, b.coef_beta)

    def test_time_shift_bounded(self, setting):
        res = fit_ir(setting["bb"], setting["bg"], setting["obs"], (0, 31), starts=0, shift_start=True)
        assert -3 <= res.diagnostics["time_shift"] <= 3


class TestInitialState:
    def test_recovers_true_state(self, setting):
        truth = setting["truth"]
        o = exact_observed(setting["beta"], setting["gamma"])
        res = fit_bg(setting["bb"], setting["bg"], setting["obs"], (0, 31), observed=o)
        # corrupt the observation at T - lookback only
        inf = np.array(setting["obs"].infected)
        inf[27] *= 1.3
        bad = HealthSeries(setting["obs"].dates, inf, setting["obs"].removed, N)
        out = optimize_initial_state(res, bad, lookback=3)
        assert out.initial_time == 27
        assert out.initial_state[1] == pytest.approx(truth.i[27], rel=0.1)
        assert abs(out.initial_state[1] - truth.i[27]) < abs(inf[27] - truth.i[27])
        assert sum(out.initial_state) == pytest.approx(N)

    def test_exact_data_is_fixed_point(self, setting):
        o = exact_observed(setting["beta"], setting["gamma"])
        res = fit_bg(setting["bb"], setting["bg"], setting["obs"], (0, 31), observed=o)
        out = optimize_initial_state(res, setting["obs"], lookback=3)
        np.testing.assert_allclose(out.initial_state[1:], [setting["truth"].i[27], setting["truth"].r[27]],
                                   rtol=1e-6)

    def test_bad_lookback(self, setting):
        res = fit_bg(setting["bb"], setting["bg"], setting["obs"], (0, 31))
        with pytest.raises(ValueError):
            optimize_initial_state(res, setting["obs"], lookback=0)
        with pytest.raises(ValueError):
            optimize_initial_state(res, setting["obs"], lookback=31)

    def test_zero_infected(self, setting):
        res = fit_bg(setting["bb"], setting["bg"], setting["obs"], (0, 31))
        inf = np.array(setting["obs"].infected)
        inf[27] = 0
        with pytest.raises(DomainError):
            optimize_initial_state(res, HealthSeries(setting["obs"].dates, inf, setting["obs"].removed, N))
