import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvflow.diffgeo import curvature_field
from curvflow.inequalities import (MIN_RESOLUTION, REPORT_COLUMNS, InequalityError, LatitudinalFunction,
                                   ResolutionError, cap_bump, check_gn1, check_gn2, check_gne, check_ms,
                                   check_ms_on_mesh, format_report, full_sphere_h_integral, run_family,
                                   sphere_area, sphere_integrals, write_report_csv)

import oracles
from conftest import icosphere, random_rotation, torus


def _const(n, r=1.0, res=4096, value=1.0):
    return LatitudinalFunction(n, r, np.full(res + 1, value))


# ---------------------------------------------------------------------------
# latitudinal quadrature


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_sphere_area_matches_oracle(n):
    assert sphere_area(n) == pytest.approx(oracles.unit_sphere_area(n), rel=1e-14)


def test_constant_on_s2():
    I = sphere_integrals(_const(2), powers=(2,))
    assert I.lp[2] == pytest.approx(4 * math.pi, rel=1e-12)
    assert I.grad_l2 == 0.0 and I.hess_l2 == 0.0


def test_full_sphere_h_integral_s4():
    fn = LatitudinalFunction.from_callable(np.cos, 4)
    I = sphere_integrals(fn)
    assert I.h_support == pytest.approx(256 * 8 * math.pi ** 2 / 3, rel=1e-12)
    assert full_sphere_h_integral(4) == pytest.approx(256 * 8 * math.pi ** 2 / 3, rel=1e-14)
    # cos theta is the restriction of a linear function: int cos^2 = vol(S^4) / 5
    assert I.lp[2] == pytest.approx(8 * math.pi ** 2 / 15, rel=1e-10)


@pytest.mark.parametrize("n,theta0", [(2, 1.0), (4, 0.6), (5, 1.3)])
def test_norms_match_adaptive_quadrature(n, theta0):
    ref = oracles.latitudinal_norms(n, theta0)
    I = sphere_integrals(cap_bump(n, theta0, resolution=8192), powers=(2, 4, 5))
    assert I.lp[2] == pytest.approx(ref["L2"], rel=1e-8)
    assert I.lp[4] == pytest.approx(ref["L4"], rel=1e-8)
    assert I.lp[5] == pytest.approx(ref["L5"], rel=1e-8)
    assert I.grad_l2 == pytest.approx(ref["grad2"], rel=1e-6)
    assert I.hess_l2 == pytest.approx(ref["hess2"], rel=1e-6)
    cap = (n / 1.0) ** n * oracles.cap_volume(n, theta0)
    assert I.h_support == pytest.approx(cap, rel=1e-10)


def test_quadrature_convergence_order():
    ref = oracles.latitudinal_norms(4, 1.0)["L2"]
    err = [abs(sphere_integrals(cap_bump(4, 1.0, resolution=N)).lp[2] - ref) for N in (256, 512)]
    assert err[0] / err[1] >= 8


def test_radius_scaling():
    base = cap_bump(3, 0.8)
    a, b = sphere_integrals(base, powers=(2,)), sphere_integrals(base.dilated(2.0), powers=(2,))
    assert b.lp[2] == pytest.approx(8 * a.lp[2], rel=1e-13)
    assert b.grad_l2 == pytest.approx(2 * a.grad_l2, rel=1e-13)
    assert b.hess_l2 == pytest.approx(a.hess_l2 / 2, rel=1e-13)
    assert b.h_support == pytest.approx(a.h_support, rel=1e-13)


def test_latitudinal_function_validation():
    with pytest.raises(ValueError):
        LatitudinalFunction(4, 1.0, np.ones(MIN_RESOLUTION - 1))
    with pytest.raises(ValueError):
        LatitudinalFunction(1, 1.0, np.ones(513))
    with pytest.raises(ValueError):
        LatitudinalFunction(4, -1.0, np.ones(513))
    with pytest.raises(ValueError):
        LatitudinalFunction(4, 1.0, np.ones(513), theta0=1.0)  # nonzero outside the cap
    u = np.ones(513)
    u[3] = np.nan
    with pytest.raises(ValueError):
        LatitudinalFunction(4, 1.0, u)


def test_resolution_error_at_pole():
    # u = theta has a kink at the pole after even extension
    fn = LatitudinalFunction.from_callable(lambda t: t, 4)
    with pytest.raises(ResolutionError):
        sphere_integrals(fn)
    fn = LatitudinalFunction.from_callable(lambda t: np.pi - t, 3)
    with pytest.raises(ResolutionError):
        sphere_integrals(fn)


# ---------------------------------------------------------------------------
# ratio checks


def test_ms_constant_function_closed_form():
    res = check_ms(_const(2), 1.0)
    assert res.lhs == pytest.approx(math.sqrt(4 * math.pi), rel=1e-12)
    assert res.rhs == pytest.approx(8 * math.pi, rel=1e-12)
    assert res.ratio == pytest.approx(oracles.ms_constant_function_ratio(), rel=1e-12)
    assert res.ratio == pytest.approx(0.14105, abs=5e-6)
    assert res.hypothesis_ok and res.inequality_id == "MS-p1"


def test_ms_p_variant():
    res = check_ms(cap_bump(4, 0.7), p=2.0)
    assert res.inequality_id == "MS-p" and 0 < res.ratio < math.inf
    with pytest.raises(ValueError):
        check_ms(cap_bump(2, 0.7), p=2.0)


_CHECKS = [
    (lambda fn: check_ms(fn, 1.0), 2),
    (lambda fn: check_ms(fn, 1.0), 4),
    (lambda fn: check_ms(fn, 1.5), 3),
    (check_gn1, 4),
    (check_gn2, 5),
    (check_gne, 3),
    (check_gne, 4),
    (check_gne, 5),
]


@settings(max_examples=40, deadline=None)
@given(which=st.integers(0, len(_CHECKS) - 1), a=st.floats(1e-6, 1e6), theta0=st.floats(0.05, 2.5),
       c1=st.floats(-0.5, 0.5))
def test_amplitude_homogeneity(which, a, theta0, c1):
    check, n = _CHECKS[which]
    fn = cap_bump(n, theta0, poly=(1.0, c1), resolution=1024)
    r0, r1 = check(fn), check(fn.scaled(a))
    assert r0.ratio > 0
    assert abs(r1.ratio - r0.ratio) <= 1e-12 * r0.ratio


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(0.01, 100.0), theta0=st.floats(0.1, 1.0))
def test_gn1_dilation_invariance(lam, theta0):
    fn = cap_bump(4, theta0, resolution=1024)
    r0, r1 = check_gn1(fn), check_gn1(fn.dilated(lam))
    assert abs(r1.ratio - r0.ratio) <= 1e-6 * r0.ratio
    assert r1.h_smallness == pytest.approx(r0.h_smallness, rel=1e-12)


def test_gn1_matches_oracle():
    ref = oracles.latitudinal_norms(4, 0.5)
    res = check_gn1(cap_bump(4, 0.5, resolution=8192))
    assert res.ratio == pytest.approx(ref["L4"] / (ref["hess2"] * ref["L2"]), rel=1e-6)


def test_gne_exponents_n3_use_gradient():
    ref = oracles.latitudinal_norms(3, 0.9)
    res = check_gne(cap_bump(3, 0.9, resolution=8192))
    expected = ref["Ln"] ** (1 / 3) / (ref["L2"] ** 0.25 * ref["grad2"] ** 0.25)
    assert res.ratio == pytest.approx(expected, rel=1e-6)


def test_gne_exponents_n5():
    ref = oracles.latitudinal_norms(5, 0.9)
    res = check_gne(cap_bump(5, 0.9, resolution=8192))
    t = 3 / 4
    expected = ref["Ln"] ** (1 / 5) / (ref["L2"] ** ((1 - t) / 2) * ref["hess2"] ** (t / 2))
    assert res.ratio == pytest.approx(expected, rel=1e-6)


def test_gn2_matches_oracle():
    ref = oracles.latitudinal_norms(5, 0.4)
    res = check_gn2(cap_bump(5, 0.4, resolution=8192))
    expected = ref["L5"] ** 0.2 / (ref["hess2"] ** 0.375 * ref["L2"] ** 0.125)
    assert res.ratio == pytest.approx(expected, rel=1e-6)


@pytest.mark.parametrize("check,n", [(check_gn1, 4), (check_gne, 4), (check_gne, 3), (check_gn2, 5)])
def test_full_sphere_constant_flagged(check, n):
    res = check(_const(n))
    assert not res.hypothesis_ok
    assert res.rhs == 0.0 and res.ratio == math.inf
    assert res.h_smallness == pytest.approx(full_sphere_h_integral(n), rel=1e-12)


def test_vanishing_rhs_under_hypothesis_raises():
    with pytest.raises(InequalityError):
        check_gn1(_const(4), eps=1e6)


def test_wrong_dimension_rejected():
    with pytest.raises(ValueError):
        check_gn1(cap_bump(5, 0.5))
    with pytest.raises(ValueError):
        check_gn2(cap_bump(4, 0.5))
    with pytest.raises(ValueError):
        check_gne(cap_bump(6, 0.5))


def test_small_caps_have_small_h_integral():
    vals = [check_gn1(cap_bump(4, t)).h_smallness for t in (0.4, 0.2, 0.1, 0.05)]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 1e-3 * full_sphere_h_integral(4)


# ---------------------------------------------------------------------------
# mesh pathway


def test_ms_on_mesh_constant():
    m = icosphere(1.0, 4)
    res = check_ms_on_mesh(m, curvature_field(m, with_shape=False), np.ones(m.n_vertices))
    assert abs(res.ratio - oracles.ms_constant_function_ratio()) / oracles.ms_constant_function_ratio() < 0.02


def test_ms_on_mesh_cap_function_below_family_cap():
    m = icosphere(1.0, 4)
    cf = curvature_field(m, with_shape=False)
    res = check_ms_on_mesh(m, cf, np.maximum(0.0, m.vertices[:, 2] - 0.5))
    rep = run_family("MS-p1", 2, np.linspace(0.1, 1.5, 8), refine=False, include_full_sphere=True)
    assert 0 < res.ratio < rep.sup_ratio


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), p=st.floats(1.0, 1.8))
def test_ms_on_mesh_rigid_motion(seed, p):
    m = torus(2.0, 1.0, 32, 16)
    rng = np.random.default_rng(seed)
    u = np.cos(m.vertices[:, 0]) ** 2 + 0.1 * m.vertices[:, 2]
    moved = m.transformed(rotation=random_rotation(rng), translation=rng.uniform(-5, 5, 3))
    r0 = check_ms_on_mesh(m, curvature_field(m, with_shape=False), u, p)
    r1 = check_ms_on_mesh(moved, curvature_field(moved, with_shape=False), u, p)
    assert abs(r1.ratio - r0.ratio) <= 1e-12 * r0.ratio
    r2 = check_ms_on_mesh(m, curvature_field(m, with_shape=False), 3.7 * u, p)
    assert abs(r2.ratio - r0.ratio) <= 1e-12 * r0.ratio


def test_ms_on_mesh_bad_p(sphere3):
    with pytest.raises(ValueError):
        check_ms_on_mesh(sphere3, curvature_field(sphere3, with_shape=False), np.ones(sphere3.n_vertices), 2.0)


# ---------------------------------------------------------------------------
# families and reports


@pytest.mark.parametrize("iid,n", [("GN1", 4), ("GN2", 5), ("GNe", 3), ("GNe", 4), ("GNe", 5), ("MS-p1", 4)])
def test_family_sup_finite_and_stable(iid, n):
    rep = run_family(iid, n, np.linspace(0.1, 1.0, 10), resolution=2048)
    assert math.isfinite(rep.sup_ratio) and rep.sup_ratio > 0
    assert rep.refinement_delta < 0.05
    assert all(row.ratio > 0 for row in rep.rows)
    assert all(rep.sup_ratio >= row.ratio for row in rep.rows if row.hypothesis_ok)


def test_spike_does_not_exceed_family_cap():
    rep = run_family("GN2", 5, np.linspace(0.1, 1.0, 10), resolution=2048, refine=False)
    spike = check_gn2(cap_bump(5, 0.05, resolution=8192))
    assert spike.hypothesis_ok and spike.ratio <= rep.sup_ratio


def test_full_sphere_member_is_excluded_from_sup():
    rep = run_family("GN1", 4, [0.3, 0.6], include_full_sphere=True, refine=False)
    assert rep.rows[-1].family_param == math.pi
    assert not rep.rows[-1].hypothesis_ok and rep.rows[-1].ratio == math.inf
    assert math.isfinite(rep.sup_ratio)


def test_unknown_inequality():
    with pytest.raises(ValueError):
        run_family("GN9", 4, [0.5])


def test_report_csv_and_table():
    reps = [run_family("GN1", 4, [0.2, 0.5], refine=False), run_family("GNe", 3, [0.4], refine=False)]
    buf = io.StringIO()
    write_report_csv(reps, buf)
    lines = buf.getvalue().splitlines()
    assert tuple(lines[0].split(",")) == REPORT_COLUMNS
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[0] == "GN1" and first[1] == "4" and first[-1] in ("true", "false")
    assert float(first[5]) == reps[0].rows[0].ratio
    table = format_report(reps)
    assert "GN1" in table and "GNe" in table
