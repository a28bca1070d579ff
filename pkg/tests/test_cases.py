import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cutwave import cases
from cutwave.cases import case_traveling_wave, case_two_circles, get_case, reference_rows

E = 1e-5


def _residuals(case, x, y, t, sub):
    """``u_t / (rho c^2) - div q - f`` and ``rho q_t - grad u`` by central differences."""
    m = case.materials
    rho = np.where(sub == 1, m.rho1, m.rho2)
    c = np.where(sub == 1, m.c1, m.c2)
    u, q, f = case.u, case.q, case.f
    ut = (u(x, y, t + E, sub) - u(x, y, t - E, sub)) / (2 * E)
    ux = (u(x + E, y, t, sub) - u(x - E, y, t, sub)) / (2 * E)
    uy = (u(x, y + E, t, sub) - u(x, y - E, t, sub)) / (2 * E)
    div = ((q(x + E, y, t, sub)[0] - q(x - E, y, t, sub)[0])
           + (q(x, y + E, t, sub)[1] - q(x, y - E, t, sub)[1])) / (2 * E)
    qt = [(a - b) / (2 * E) for a, b in zip(q(x, y, t + E, sub), q(x, y, t - E, sub))]
    r1 = ut / (rho * c ** 2) - div - f(x, y, t, sub)
    r2 = np.hypot(rho * qt[0] - ux, rho * qt[1] - uy)
    return r1, r2


@pytest.mark.parametrize("name", ["traveling_wave", "two_circles"])
def test_manufactured_solution_satisfies_pde(name):
    case = get_case(name)
    rng = np.random.default_rng(0)
    P = rng.uniform(-1.9, 1.9, (400, 2))
    t = rng.uniform(0, 1, 400)
    ls = case.level_set
    sub = np.ones(400, dtype=int) if ls is None else ls.subdomain(P[:, 0], P[:, 1])
    r1, r2 = _residuals(case, P[:, 0], P[:, 1], t, sub)
    scale = 1.0 + np.abs(case.f(P[:, 0], P[:, 1], t, sub)).max()
    assert np.abs(r1).max() <= 1e-6 * scale
    assert np.abs(r2).max() <= 1e-6 * scale


@pytest.mark.parametrize("name", ["traveling_wave", "two_circles"])
def test_boundary_values_vanish(name):
    case = get_case(name)
    s = np.linspace(-2, 2, 41)
    for x, y in ((s, -2 + 0 * s), (s, 2 + 0 * s), (-2 + 0 * s, s), (2 + 0 * s, s)):
        for sub in (1, 2):
            np.testing.assert_allclose(case.u(x, y, 0.37, np.full_like(s, sub)), 0.0, atol=1e-14)


@given(st.floats(0, 2 * np.pi), st.sampled_from([-0.52, 0.52]), st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_two_circle_interface_conditions(theta, xc, t):
    case = case_two_circles()
    x = np.array([xc + 0.51 * np.cos(theta)])
    y = np.array([0.51 * np.sin(theta)])
    one, two = np.array([1]), np.array([2])
    assert case.u(x, y, t, one)[0] == pytest.approx(case.u(x, y, t, two)[0], abs=1e-12)
    n = np.array([np.cos(theta), np.sin(theta)])
    q1 = np.array([v[0] for v in case.q(x, y, t, one)])
    q2 = np.array([v[0] for v in case.q(x, y, t, two)])
    assert q1 @ n == pytest.approx(q2 @ n, abs=1e-10)


def test_initial_data_and_materials():
    tw = case_traveling_wave()
    x, y = np.array([0.13]), np.array([-0.41])
    assert tw.u0(x, y, 1) == pytest.approx(np.sin(2 * np.pi * 0.13) * np.sin(0.52 * np.pi)
                                           * np.sin(-1.64 * np.pi))
    qx, qy = tw.q0(x, y, 1)
    assert qy[0] == pytest.approx(-2 * np.sqrt(2) * np.sin(0.52 * np.pi) * np.cos(-1.64 * np.pi)
                                  * np.cos(0.26 * np.pi))
    tc = case_two_circles()
    assert (tc.materials.rho1, tc.materials.rho2) == (0.5, 1.0)
    np.testing.assert_allclose(tc.q0(x, y, np.array([1]))[0], 0.0)


def test_source_jet_cache_returns_same_values():
    x = np.linspace(-1, 1, 2000)
    y = np.cos(x)
    a = cases._s_jet(x, y)
    b = cases._s_jet(x, y)
    assert all(u is v for u, v in zip(a, b))
    fresh = cases._s_jet_eval(x.copy(), y.copy())
    for u, v in zip(a, fresh):
        np.testing.assert_array_equal(u, v)


def test_base_n_and_lookup():
    tw = case_traveling_wave()
    assert tw.base_n(1 / 20) == 80
    assert case_two_circles().base_n(1 / 7) == 28
    with pytest.raises(ValueError):
        tw.base_n(0.3)
    with pytest.raises(ValueError):
        get_case("square")


def test_reference_rows():
    rows = reference_rows(case_traveling_wave(), 3)
    row = next(r for r in rows if abs(r.h - 1 / 20) < 1e-12)
    assert (row.E_en, row.order) == (4.16e-3, 2.83)
    rows = reference_rows(case_two_circles(), 2, 0.05)
    assert [r.order for r in rows] == [0.95, 1.74, 1.87, 1.98]
    assert rows[2].E_en == 1.87e-1 and rows[0].h_min == 3.57e-2
