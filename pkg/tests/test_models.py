import numpy as np
import pytest

from sirrom.errors import DomainError, NumericError
from sirrom.models import (COMPARTMENTS, PARAMETER_NAMES, SE2IUR, SEI5CHRD, DetailedParams,
                           RateFunction, TimeGrid, simulate_detailed, simulate_sir_tv,
                           sir_derivatives)
from sirrom.scenarios import default_box, sample_parameters


def reference_sir(beta, gamma, y0, days, dt=1e-4):
    """Plain RK4 with a tiny step and constant rates, vectorised over nothing."""
    s, i, r = map(float, y0)
    n = s + i + r
    steps = int(round(days / dt))
    out = [i]
    per_day = int(round(1 / dt))

    def f(s, i):
        inf = beta * s * i / n
        return -inf, inf - gamma * i, gamma * i

    for k in range(steps):
        a = f(s, i)
        b = f(s + dt / 2 * a[0], i + dt / 2 * a[1])
        c = f(s + dt / 2 * b[0], i + dt / 2 * b[1])
        d = f(s + dt * c[0], i + dt * c[1])
        s += dt / 6 * (a[0] + 2 * b[0] + 2 * c[0] + d[0])
        i += dt / 6 * (a[1] + 2 * b[1] + 2 * c[1] + d[1])
        r += dt / 6 * (a[2] + 2 * b[2] + 2 * c[2] + d[2])
        if (k + 1) % per_day == 0:
            out.append(i)
    return np.array(out)


class TestTimeGrid:
    def test_daily(self):
        g = TimeGrid.daily(5, 2.0)
        assert g.t_end == 6.0
        np.testing.assert_array_equal(g.times, [2, 3, 4, 5, 6])
        assert g.index_of(4.0) == 2
        assert g.sub(1, 3).times.tolist() == [3.0, 4.0]

    def test_roundtrip_dict(self):
        g = TimeGrid(0.5, 0.25, 9)
        assert TimeGrid.from_dict(g.to_dict()) == g

    def test_rate_interpolation(self):
        g = TimeGrid.daily(3)
        f = RateFunction(g, [0.0, 1.0, 4.0])
        assert f(0.5) == pytest.approx(0.5)
        assert f(1.25) == pytest.approx(1.75)


class TestSirTv:
    def test_beta_zero_decay(self):
        g = TimeGrid.daily(30)
        gamma = RateFunction.from_callable(g, lambda t: 0.05 + 0.001 * t)
        tr = simulate_sir_tv(RateFunction.constant(g, 0.0), gamma, 900, 100, 0, g)
        np.testing.assert_allclose(tr.s, 900)
        integral = 0.05 * g.times + 0.0005 * g.times ** 2
        np.testing.assert_allclose(tr.i, 100 * np.exp(-integral), rtol=1e-8)
        np.testing.assert_allclose(tr.r, 1000 - tr.s - tr.i, rtol=1e-10)

    def test_no_dynamics(self):
        g = TimeGrid.daily(10)
        tr = simulate_sir_tv(RateFunction.constant(g, 0.5), RateFunction.constant(g, 0.0), 90, 0, 10, g)
        np.testing.assert_array_equal(tr.s, 90)
        np.testing.assert_array_equal(tr.i, 0)
        np.testing.assert_array_equal(tr.r, 10)

    def test_peak_against_fine_reference(self):
        g = TimeGrid.daily(101)
        tr = simulate_sir_tv(RateFunction.constant(g, 0.3), RateFunction.constant(g, 0.1),
                             1e6 - 100, 100, 0, g)
        ref = reference_sir(0.3, 0.1, (1e6 - 100, 100, 0), 100, dt=1e-3)
        assert abs(tr.i.max() - ref.max()) / ref.max() < 1e-6

    def test_conservation(self):
        g = TimeGrid.daily(80)
        beta = RateFunction.from_callable(g, lambda t: 0.4 * (1 + np.sin(t / 5)) / 2 + 0.05)
        tr = simulate_sir_tv(beta, RateFunction.constant(g, 0.12), 5e5, 300, 20, g)
        total = tr.s + tr.i + tr.r
        assert np.max(np.abs(total - total[0])) <= 1e-9 * total[0]
        assert np.all(np.diff(tr.r) >= 0)

    def test_negative_rate_rejected(self):
        g = TimeGrid.daily(5)
        with pytest.raises(DomainError):
            simulate_sir_tv(RateFunction.constant(g, -0.1), RateFunction.constant(g, 0.1), 9, 1, 0, g)

    def test_nan_raises(self):
        g = TimeGrid.daily(5)
        with pytest.raises(NumericError):
            simulate_sir_tv(RateFunction.constant(g, np.nan), RateFunction.constant(g, 0.1), 9, 1, 0, g)

    def test_exact_derivatives_shape(self):
        g = TimeGrid.daily(4)
        b, c = RateFunction.constant(g, 0.3), RateFunction.constant(g, 0.1)
        tr = simulate_sir_tv(b, c, 99, 1, 0, g)
        ds, di, dr = sir_derivatives(tr, b, c)
        np.testing.assert_allclose(ds + di + dr, 0, atol=1e-15)


def sei5chrd(**over):
    vals = {k: 0.2 for k in PARAMETER_NAMES[SEI5CHRD]}
    vals.update(p_ps=0.2, p_ms=0.7, p_ss=0.1, p_a=0.4, p_C=0.3)
    vals.update(over)
    return vals


class TestDetailed:
    def test_no_transmission_keeps_s(self):
        vals = sei5chrd(**{k: 0.0 for k in ("beta_p", "beta_a", "beta_ps", "beta_ms",
                                             "beta_ss", "beta_H", "beta_C")})
        u0 = np.zeros(11)
        u0[0], u0[2] = 1e5, 50
        tr = simulate_detailed(DetailedParams(SEI5CHRD, vals, u0), TimeGrid.daily(30))
        np.testing.assert_allclose(tr.column("S"), 1e5)

    def test_se2iur_nu_one(self):
        vals = dict(beta=0.3, delta=0.2, sigma=0.3, nu=1.0, gamma1=0.1, gamma2=0.1)
        tr = simulate_detailed(DetailedParams(SE2IUR, vals, [1e5, 10, 10, 10, 0, 0]), TimeGrid.daily(30))
        np.testing.assert_array_equal(tr.column("U"), 0)

    def test_asymptomatic_routing(self):
        u0 = np.zeros(11)
        u0[0], u0[1], u0[2], u0[3] = 1e5, 20, 20, 20
        tr = simulate_detailed(DetailedParams(SEI5CHRD, sei5chrd(p_a=1.0), u0), TimeGrid.daily(30))
        for name in ("Ips", "Ims", "Iss", "H", "C", "D"):
            np.testing.assert_array_equal(tr.column(name), 0, err_msg=name)

    @pytest.mark.parametrize("model", [SEI5CHRD, SE2IUR])
    def test_conservation_and_derivatives(self, model):
        p = sample_parameters(default_box(model), 3, 5)[2]
        tr = simulate_detailed(p, TimeGrid.daily(60))
        total = tr.compartments.sum(axis=1)
        assert np.max(np.abs(total - p.population)) <= 1e-9 * p.population
        np.testing.assert_allclose(tr.derivatives.sum(axis=1), 0, atol=1e-9 * p.population)
        assert tr.d == len(COMPARTMENTS[model])
        # exact derivative agrees with a finite difference of the trajectory
        fd = np.gradient(tr.column("S"))[1:-1]
        np.testing.assert_allclose(fd, tr.derivative("S")[1:-1], rtol=0.05, atol=1.0)

    def test_probability_out_of_range(self):
        with pytest.raises(DomainError):
            DetailedParams(SEI5CHRD, sei5chrd(p_a=1.5), np.r_[1e5, np.zeros(10)])

    def test_simplex_enforced(self):
        with pytest.raises(DomainError):
            DetailedParams(SEI5CHRD, sei5chrd(p_ps=0.5), np.r_[1e5, np.zeros(10)])

    def test_unknown_model(self):
        with pytest.raises(ValueError):
            DetailedParams("SIRX", {}, [1.0])
