"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Expensive discretization runs are cached per session and shared between
criteria (the two-circle p = 1 runs serve both the convergence and the
mesh-resolution comparison).
"""
import math
from functools import lru_cache

import numpy as np
import pytest

from cutwave import geometry as geo
from cutwave.assembly import DgSystem, PenaltyConfig
from cutwave.cases import case_traveling_wave, case_two_circles, reference_rows
from cutwave.fem_space import DgSpace
from cutwave.mesh import build_induced_mesh
from cutwave.solver import ProblemSpec, SolverConfig, observed_orders, run
from cutwave.time_integrator import (as_operator, cfl_limit, closed_form_reference,
                                     max_norm_ratio, project_source_legendre, random_skew,
                                     step_slab)

SAFETY = 0.5          # fraction of the measured CFL limit used by all PDE runs


def _skew_defect(system) -> float:
    A = system.A
    return abs(A + A.T).max()


# 1 --------------------------------------------------------------------------

def _lambda_from_constraints(r: int, g: float) -> float:
    """Smallest admissible bound among the per-term stability conditions."""
    if r % 4 == 1:
        s = (r - 1) // 4
        c = [(4 * j + 1 - g) * (4 * j + 1) * (4 * j + 2) / (4 * j + 3 - g) for j in range(s)]
    else:
        s = (r - 2) // 4
        c = [(4 * j + 2 - g) * (4 * j + 2) * (4 * j + 3) / (4 * j + 4 - g) for j in range(s)]
    c.append(r * (r * r - g * g) / (r + 1))
    return math.sqrt(min(c))


def test_criterion_01_cfl_constants(acceptance_report):
    fixed = all(cfl_limit(r, g) == math.sqrt(2.0) for r in (3, 7) for g in (0.1, 0.5, 0.9)) \
        and all(cfl_limit(r, g) == math.sqrt(6.0) for r in (4, 8) for g in (0.1, 0.5, 0.9))
    worst = max(abs(cfl_limit(r, g) - _lambda_from_constraints(r, g))
                for r in (1, 2, 5, 6) for g in np.linspace(0.05, 0.95, 19))
    ok = fixed and worst <= 1e-15
    acceptance_report(1, ok, f"sqrt2/sqrt6 exact={fixed}, max |dev| r=1,2,5,6: {worst:.1e}")
    assert ok


# 2 --------------------------------------------------------------------------

def test_criterion_02_recursion_matches_closed_form(acceptance_report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 51))
        D = random_skew(n, rng, rng.uniform(0.5, 3.0))
        y = rng.standard_normal(n)
        t0, tau = rng.uniform(-1, 1), rng.uniform(0.05, 0.5)
        for r in range(1, 7):
            src = rng.standard_normal((n, r))
            st = step_slab(as_operator(D), y, t0, tau, r, 0.1, src)
            for t in t0 + tau * np.array([0.0, 0.21, 0.5, 0.87, 1.0]):
                ref = closed_form_reference(D, y, t0, tau, r, 0.1, src, t)[1][r]
                worst = max(worst, np.abs(st.evaluate(t) - ref).max() / np.abs(ref).max())
    ok = worst <= 1e-12
    acceptance_report(2, ok, f"max relative error {worst:.2e} (limit 1e-12)")
    assert ok


# 3 --------------------------------------------------------------------------

def test_criterion_03_strong_stability(acceptance_report):
    rng = np.random.default_rng(3)
    D = random_skew(40, rng, 1.0)
    y = rng.standard_normal(40)
    worst = 0.0
    for r in range(1, 9):
        for g in (0.1, 0.5, 0.9):
            worst = max(worst, max_norm_ratio(as_operator(D), y, cfl_limit(r, g), r, g,
                                              n_slabs=100, samples=33))
    ok = worst <= 1 + 1e-12
    acceptance_report(3, ok, f"max ||Y(t)||/||Y0|| - 1 = {worst - 1:.1e}")
    assert ok


# 4 --------------------------------------------------------------------------

def _ode_error(r: int, n_steps: int) -> float:
    """Max error over dense samples for Y' = D Y + R with a known smooth solution."""
    rng = np.random.default_rng(4)
    D = random_skew(6, rng, 1.0)
    om, ph = rng.uniform(0.5, 2.0, 6), rng.uniform(0, 2 * np.pi, 6)
    Y = lambda t: np.sin(om * t + ph)                                   # noqa: E731
    R = lambda t: om * np.cos(om * t + ph) - D @ Y(t)                   # noqa: E731
    tau = 1.0 / n_steps
    y, err = Y(0.0), 0.0
    for k in range(n_steps):
        t0 = k * tau
        st = step_slab(as_operator(D), y, t0, tau, r, 0.1,
                       project_source_legendre(R, t0, tau, r, n_quad=r + 6))
        ts = np.linspace(t0, t0 + tau, 9)
        exact = np.column_stack([Y(t) for t in ts])
        err = max(err, np.abs(st.evaluate(ts) - exact).max())
        y = st.endpoint()
    return err


def test_criterion_04_temporal_order(acceptance_report):
    orders = {}
    for r in range(1, 6):
        e = [_ode_error(r, n) for n in (10, 20, 40)]
        orders[r] = math.log2(e[1] / e[2])
    ok = all(orders[r] >= r - 0.2 for r in orders)
    acceptance_report(4, ok, "orders " + ", ".join(f"r={r}: {o:.2f}" for r, o in orders.items()))
    assert ok


# 5 --------------------------------------------------------------------------

def test_criterion_05_skew_symmetry(acceptance_report):
    DOMAIN = (-2.0, -2.0, 2.0, 2.0)
    tc = case_two_circles()
    worst_skew = 0.0
    cases = [(None, 20, 0.5, 1), (None, 20, 0.5, 3)]
    cases += [(tc.level_set, 28, eta0, p) for eta0 in (0.05, 0.3) for p in (1, 2)]
    for ls, n, eta0, p in cases:
        mesh = build_induced_mesh(DOMAIN, n, ls, eta0=eta0, p=p)
        system = DgSystem(DgSpace(mesh, p), tc.materials, PenaltyConfig())
        worst_skew = max(worst_skew, _skew_defect(system))
    mesh = build_induced_mesh(DOMAIN, 28, tc.level_set, eta0=0.05, p=2)
    system = DgSystem(DgSpace(mesh, 2, quad_order=16), tc.materials, PenaltyConfig(),
                      with_hminus=True)
    rel = abs(system.Hminus + system.Dplus.T).max() / abs(system.Dplus).max()
    ok = worst_skew == 0.0 and rel <= 1e-9
    acceptance_report(5, ok, f"max |A+A^T| = {worst_skew:.1e} on {len(cases)} meshes; "
                             f"independent H- vs -D+^T relative {rel:.1e} (limit 1e-9)")
    assert ok


# 6 --------------------------------------------------------------------------

def test_criterion_06_energy_conservation(acceptance_report):
    prob = ProblemSpec.from_case(case_two_circles(), T=0.5, source=False)
    cfg = SolverConfig(p=2, r=6, base_n=28, eta0=0.05, safety=SAFETY)
    res = run(prob, cfg)
    E = res.report.energies
    drift = abs(E[-1] - E[0]) / E[0]
    ok = drift <= 1e-8 and _skew_defect(res.system) == 0.0
    acceptance_report(6, ok, f"|E(T)-E(0)|/E(0) = {drift:.1e} over {res.report.n_slabs} slabs")
    assert ok


# 7 --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _tw_run(p: int, n: int):
    res = run(ProblemSpec.from_case(case_traveling_wave()),
              SolverConfig(p=p, base_n=n, safety=SAFETY))
    rep = res.report
    return rep.E_en, res.space.size, _skew_defect(res.system), math.hypot(rep.err_u_l2, rep.err_q)


def _l2_note(runs, hs) -> str:
    """Diagnostic: the same runs measured without the penalty-weighted jumps."""
    e = [r[3] for r in runs]
    o = observed_orders(hs, e)[1:]
    return f"[L2-only {', '.join(f'{v:.3g}' for v in e)}, orders {', '.join(f'{v:.2f}' for v in o)}]"


@pytest.mark.slow
def test_criterion_07_uncut_convergence(acceptance_report):
    hs, ns = [1 / 5, 1 / 10, 1 / 20], [20, 40, 80]
    parts, ok = [], True
    for p in (1, 2, 3):
        runs = [_tw_run(p, n) for n in ns]
        errs = [r[0] for r in runs]
        order = observed_orders(hs, errs)[-1]
        ok &= order >= p - 0.3 and all(r[2] == 0.0 for r in runs)
        parts.append(f"p={p}: E_en {', '.join(f'{e:.3g}' for e in errs)}, order {order:.2f} "
                     + _l2_note(runs, hs))
    ref = next(r.E_en for r in reference_rows(case_traveling_wave(), 3)
               if abs(r.h - 1 / 20) < 1e-12)
    e3 = _tw_run(3, 80)[0]
    band = ref / 1.5 <= e3 <= ref * 1.5
    parts.append(f"E_en(p=3, h=1/20) = {e3:.3g} vs {ref:.3g} x/÷1.5: {'in' if band else 'out of'} band")
    ok &= band
    acceptance_report(7, ok, "; ".join(parts))
    assert ok


# 8 and 10 -------------------------------------------------------------------

TC_H = (1 / 7, 1 / 13, 1 / 17)
TC_N = (28, 52, 68)


@lru_cache(maxsize=None)
def _tc_run(eta0: float, p: int, n: int):
    res = run(ProblemSpec.from_case(case_two_circles()),
              SolverConfig(p=p, base_n=n, eta0=eta0, safety=SAFETY))
    rep = res.report
    return rep.E_en, res.space.size, _skew_defect(res.system), math.hypot(rep.err_u_l2, rep.err_q)


@pytest.mark.slow
def test_criterion_08_cut_convergence(acceptance_report):
    parts, ok = [], True
    tc = case_two_circles()
    for eta0 in (0.05, 0.3):
        for p in (1, 2):
            runs = [_tc_run(eta0, p, n) for n in TC_N]
            errs = [r[0] for r in runs]
            got = observed_orders(TC_H, errs)[1:]
            rows = {round(1 / r.h): r for r in reference_rows(tc, p, eta0)}
            want = [rows[13].order, rows[17].order]
            good = all(abs(g - w) <= 0.35 for g, w in zip(got, want))
            ok &= good and all(r[2] == 0.0 for r in runs)
            parts.append(f"eta0={eta0} p={p}: orders {got[0]:.2f}, {got[1]:.2f} "
                         f"vs {want[0]:.2f}, {want[1]:.2f} " + _l2_note(runs, TC_H))
    ref = next(r.E_en for r in reference_rows(tc, 2, 0.05) if round(1 / r.h) == 17)
    e = _tc_run(0.05, 2, 68)[0]
    band = ref / 1.5 <= e <= ref * 1.5
    ok &= band
    parts.append(f"E_en(p=2, h=1/17) = {e:.3g} vs {ref:.3g} x/÷1.5: {'in' if band else 'out of'} band")
    acceptance_report(8, ok, "; ".join(parts))
    assert ok


# 9 --------------------------------------------------------------------------

def test_criterion_09_geometry_oracles(acceptance_report):
    from cutwave import quadrature as q
    from test_geometry import brute_force_eta
    from test_quadrature import test_divergence_closure_random_cut_elements

    DOMAIN = (-2.0, -2.0, 2.0, 2.0)
    mesh = build_induced_mesh(DOMAIN, 10, geo.circle(0.0, 0.0, 1.0), eta0=0.5)
    mq = q.mesh_quadrature(mesh, 12)
    area = sum(r.measure for (e, s), r in mq.volume.items() if s == 1)
    length = sum(r.measure for r in mq.interface.values())
    e_area = abs(area - math.pi) / math.pi
    e_len = abs(length - 2 * math.pi) / (2 * math.pi)
    ls = geo.circle(0, 0, 1)
    e_eta = 0.0
    for anchor in geo.ETA_ANCHORS:
        for box in [(0.6, -0.25, 1.1, 0.25), (0.55, 0.3, 0.95, 0.7), (-0.3, 0.75, 0.1, 1.15)]:
            t = geo.classify_element(ls, box, eta_anchor=anchor)
            ref = brute_force_eta(0, 0, 1, t, anchor)
            e_eta = max(e_eta, abs(t.eta - ref) / ref)
    try:
        test_divergence_closure_random_cut_elements()
        closure = True
    except AssertionError:
        closure = False
    ok = e_area <= 1e-10 and e_len <= 1e-10 and e_eta <= 1e-6 and closure
    acceptance_report(9, ok, f"area {e_area:.1e}, arc length {e_len:.1e}, eta vs sampling "
                             f"{e_eta:.1e}, divergence closure <= 1e-10: {closure}")
    assert ok


# 10 -------------------------------------------------------------------------

def _loglog_interp(dofs, errs, at):
    return np.exp(np.interp(np.log(at), np.log(dofs), np.log(errs)))


@pytest.mark.slow
def test_criterion_10_eta0_effect(acceptance_report):
    fine = [_tc_run(0.05, 1, n) for n in TC_N]
    coarse = [_tc_run(0.3, 1, n) for n in TC_N]
    fd, fe = [r[1] for r in fine], [r[0] for r in fine]
    cd, ce = [r[1] for r in coarse], [r[0] for r in coarse]
    lo, hi = max(fd[0], cd[0]), min(fd[-1], cd[-1])
    budgets = sorted(d for d in fd + cd if lo <= d <= hi)
    pairs = [(d, _loglog_interp(fd, fe, d), _loglog_interp(cd, ce, d)) for d in budgets]
    ok = bool(pairs) and max(fd[-1], cd[-1]) <= 5e4 and all(a <= b for _, a, b in pairs)
    acceptance_report(10, ok, "E_en(0.05) vs E_en(0.3) at DoFs " + ", ".join(
        f"{d}: {a:.4g} vs {b:.4g}" for d, a, b in pairs))
    assert ok
