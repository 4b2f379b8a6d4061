import dataclasses
import math

import numpy as np
import pytest
import sympy as sy
from hypothesis import given, settings, strategies as st

from curvflow.diagnostics import willmore_energy
from curvflow.diffgeo import curvature_field
from curvflow.flow import (FlowConfig, FlowState, SphereOde, biharmonic_speed, biharmonic_velocity,
                           initial_state, run, sphere_ode_radius, sphere_ode_rk4, step, time_step,
                           umbilic_curvatures, willmore_speed, willmore_velocity)
from curvflow.mesh import Mesh, make_icosphere

import oracles
from conftest import icosphere, torus


def _mean_radius(mesh):
    return float(np.linalg.norm(mesh.vertices, axis=1).mean())


# ---------------------------------------------------------------------------
# velocities


def test_biharmonic_velocity_unit_sphere(sphere4):
    cf = curvature_field(sphere4)
    F, W = biharmonic_velocity(sphere4, cf, include_tangential=True)
    assert np.max(np.abs(F + 4) / 4) < 0.05
    assert np.max(np.linalg.norm(W, axis=1)) < 0.05 * 4
    F0, W0 = biharmonic_velocity(sphere4, cf)
    assert np.array_equal(F0, F) and not W0.any()


@pytest.mark.parametrize("r", [0.5, 2.0, 3.0])
def test_biharmonic_speed_scales_like_r_cubed(r):
    rs, fb, _ = oracles.umbilic_speeds(2)
    expected = float(fb.subs(rs, r))
    m = icosphere(r, 4)
    F, _ = biharmonic_velocity(m, curvature_field(m, with_shape=False))
    assert abs(expected + 4 / r ** 3) < 1e-12
    assert np.max(np.abs(F - expected)) / abs(expected) < 0.05


def test_tangential_term_vanishes_for_constant_H(sphere3):
    cf = curvature_field(sphere3)
    const = dataclasses.replace(cf, mean_curvature=np.full(sphere3.n_vertices, -2.0))
    _, W = biharmonic_velocity(sphere3, const, include_tangential=True)
    assert np.max(np.abs(W)) < 1e-12


def test_tangential_needs_shape_operator(sphere3):
    with pytest.raises(ValueError):
        biharmonic_velocity(sphere3, curvature_field(sphere3, with_shape=False), include_tangential=True)


def test_willmore_velocity_sphere_is_stationary():
    peaks = []
    for s in (3, 4, 5):
        m = icosphere(1.0, s)
        peaks.append(np.max(np.abs(willmore_velocity(m, curvature_field(m, with_shape=False)))))
    assert peaks[1] < 0.1
    assert peaks[0] > peaks[1] > peaks[2]


def test_willmore_velocity_torus_is_nonzero():
    m = torus(math.sqrt(2), 1.0, 128, 64)
    F = willmore_velocity(m, curvature_field(m, with_shape=False))
    assert np.all(np.isfinite(F))
    assert np.max(np.abs(F)) > 0.1


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("r", [0.7, 1.0, 2.0])
def test_umbilic_speeds_match_symbolic(n, r):
    rs, fb, fw = oracles.umbilic_speeds(n)
    H, a2, cubic = umbilic_curvatures(n, r)
    assert math.isclose(biharmonic_speed(H, a2, 0.0), float(fb.subs(rs, r)), rel_tol=1e-14)
    assert math.isclose(willmore_speed(H, a2, cubic, 0.0), float(fw.subs(rs, r)), rel_tol=1e-14,
                        abs_tol=1e-14)


def test_umbilic_willmore_speed_n3():
    r = 1.3
    H, a2, cubic = umbilic_curvatures(3, r)
    assert (H, a2) == pytest.approx((-3 / r, 3 / r ** 2))
    assert willmore_speed(H, a2, cubic, 0.0) == pytest.approx(-3 * (3 - 2) / (2 * r ** 3), rel=1e-14)


# ---------------------------------------------------------------------------
# config and stepping


def test_config_validation_names_keys():
    for kw, key in [(dict(c_dt=5), "c_dt"), (dict(c_dt=0), "c_dt"), (dict(kind="mcf"), "kind"),
                    (dict(stepper="rk4"), "stepper"), (dict(concentration_radius=0), "concentration_radius"),
                    (dict(concentration_threshold=-1), "concentration_threshold"),
                    (dict(snapshot_every=0), "snapshot_every"), (dict(max_steps=-1), "max_steps"),
                    (dict(extinction_fraction=1.5), "extinction_fraction")]:
        with pytest.raises(ValueError, match=key):
            FlowConfig(**kw)
    with pytest.raises(ValueError):
        FlowConfig(kind="willmore", include_tangential=True)


def test_dt_rule():
    m = make_icosphere(1.0, 2)
    m = m.with_vertices(m.vertices * (0.1 / m.edge_lengths().min()))
    assert time_step(m, FlowConfig(c_dt=1.0)) == pytest.approx(1e-4, rel=1e-12)
    assert time_step(m, FlowConfig(c_dt=0.02)) == pytest.approx(2e-6, rel=1e-12)


def test_one_explicit_step_moves_inward(sphere4):
    cfg = FlowConfig(c_dt=0.02, t_end=1.0)
    s1 = step(initial_state(sphere4), cfg)
    r0 = np.linalg.norm(sphere4.vertices, axis=1)
    r1 = np.linalg.norm(s1.mesh.vertices, axis=1)
    assert s1.step == 1 and s1.t == s1.dt > 0
    assert np.all(r1 < r0)
    assert np.max(np.abs((r0 - r1) / (4 * s1.dt) - 1)) < 0.05
    assert np.array_equal(s1.mesh.faces, sphere4.faces)


def test_step_on_terminated_state_is_identity(sphere3):
    st0 = dataclasses.replace(initial_state(sphere3), status="reached_t_end")
    assert step(st0, FlowConfig()) is st0


def test_step_lands_on_t_end(sphere3):
    cfg = FlowConfig(c_dt=0.02, t_end=1e-6)
    state = initial_state(sphere3)
    while state.running:
        state = step(state, cfg)
    assert state.status == "reached_t_end" and state.t == 1e-6


def test_nonfinite_positions_fail_cleanly(sphere3):
    v = sphere3.vertices.copy()
    v[3] = np.nan
    state = step(initial_state(Mesh(v, sphere3.faces, check=False)), FlowConfig())
    assert state.status == "numerical_failure" and state.message


def test_run_max_steps_zero(sphere3):
    state, recs = run(sphere3, FlowConfig(max_steps=0))
    assert state.status == "reached_max_steps" and state.step == 0 and state.t == 0
    assert state.mesh is sphere3 and len(recs) == 1


def test_run_reaches_max_steps(sphere3):
    state, recs = run(sphere3, FlowConfig(max_steps=7, snapshot_every=3))
    assert state.status == "reached_max_steps" and state.step == 7
    assert [r.t for r in recs] == sorted({r.t for r in recs})
    assert len(recs) == 4  # steps 0, 3, 6, 7


def test_run_tracks_sphere_ode():
    m = icosphere(1.0, 3)
    ode = SphereOde(2, 1.0, "biharmonic")
    cfg = FlowConfig(c_dt=0.04, t_end=0.5 * ode.extinction_time, snapshot_every=200)
    worst = []
    state, recs = run(m, cfg, callback=lambda s, r: worst.append(abs(_mean_radius(s.mesh) / sphere_ode_radius(ode, s.t) - 1)))
    assert state.status == "reached_t_end"
    assert max(worst) < 0.01


def test_semi_implicit_tracks_sphere_ode():
    m = icosphere(1.0, 3)
    ode = SphereOde(2, 1.0, "biharmonic")
    cfg = FlowConfig(c_dt=0.04, t_end=0.1 * ode.extinction_time, stepper="semi-implicit", snapshot_every=500)
    state, _ = run(m, cfg)
    assert state.status == "reached_t_end"
    assert abs(_mean_radius(state.mesh) / sphere_ode_radius(ode, state.t) - 1) < 0.01


def test_semi_implicit_matches_explicit_for_one_step(sphere3):
    e = step(initial_state(sphere3), FlowConfig(c_dt=0.02))
    s = step(initial_state(sphere3), FlowConfig(c_dt=0.02, stepper="semi-implicit"))
    disp = np.abs(e.mesh.vertices - sphere3.vertices).max()
    assert np.abs(e.mesh.vertices - s.mesh.vertices).max() < 0.05 * disp


def test_willmore_sphere_drift_bound(sphere3):
    cfg = FlowConfig(kind="willmore", c_dt=0.02, max_steps=1000, t_end=1.0, snapshot_every=1000)
    F0 = willmore_velocity(sphere3, curvature_field(sphere3, with_shape=False))
    state, _ = run(sphere3, cfg)
    drift = np.max(np.abs(np.linalg.norm(state.mesh.vertices, axis=1) - 1))
    assert drift < 5 * np.max(np.abs(F0)) * state.t


def test_extinction_status():
    m = make_icosphere(0.5, 1)
    state, _ = run(m, FlowConfig(c_dt=0.04, t_end=10.0, extinction_fraction=0.2, snapshot_every=10 ** 6))
    assert state.status == "extinction"
    assert state.t < 10.0
    assert m.edge_lengths().min() * 0.2 > state.mesh.edge_lengths().min()


def test_concentration_stop(sphere3):
    cfg = FlowConfig(concentration_radius=3.0, concentration_threshold=10.0, snapshot_every=5, max_steps=50)
    state, recs = run(sphere3, cfg)
    assert state.status == "concentration_exceeded" and state.step == 0
    assert recs[0].kappa_max > 10.0


def test_snapshots_written(tmp_path, sphere3):
    cfg = FlowConfig(max_steps=4, snapshot_every=2)
    run(sphere3, cfg, snapshot_dir=tmp_path / "snap", stem="ball")
    names = sorted(p.name for p in (tmp_path / "snap").iterdir())
    assert names == ["ball_step0.off", "ball_step2.off", "ball_step4.off"]


# ---------------------------------------------------------------------------
# sphere ODE


def test_sphere_ode_examples():
    ode = SphereOde(2, 1.0, "biharmonic")
    assert sphere_ode_radius(ode, 1 / 32) == pytest.approx(0.5 ** 0.25, rel=1e-15)
    assert sphere_ode_radius(ode, 1 / 32) == pytest.approx(oracles.sphere_radius_ivp(2, 1.0, 1 / 32), rel=1e-9)
    assert ode.extinction_time == 1 / 16
    w2 = SphereOde(2, 1.7, "willmore")
    assert sphere_ode_radius(w2, 123.0) == 1.7 and w2.extinction_time == math.inf
    assert SphereOde(4, 1.0, "willmore").extinction_time == pytest.approx(1 / 16, rel=1e-15)
    with pytest.raises(ValueError):
        sphere_ode_radius(ode, 1 / 16)
    with pytest.raises(ValueError):
        SphereOde(2, 0.0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 6), r0=st.floats(0.2, 5.0), kind=st.sampled_from(["biharmonic", "willmore"]),
       frac=st.floats(0.0, 0.9))
def test_sphere_ode_against_independent_solutions(n, r0, kind, frac):
    ode = SphereOde(n, r0, kind)
    T = oracles.sphere_extinction_time_symbolic(n, r0, kind)
    assert ode.extinction_time == pytest.approx(T, rel=1e-12)
    t = frac * (T if math.isfinite(T) else 1.0)
    r = sphere_ode_radius(ode, t)
    assert r == pytest.approx(sphere_ode_rk4(ode, t, 2000), rel=1e-8)
    assert r == pytest.approx(oracles.sphere_radius_ivp(n, r0, t, kind), rel=1e-8)


# ---------------------------------------------------------------------------
# flow invariants


def test_extinction_time_scales_with_fourth_power():
    T = []
    for r0 in (1.0, 2.0):
        state, _ = run(make_icosphere(r0, 1), FlowConfig(c_dt=0.04, t_end=10.0, extinction_fraction=0.05,
                                                         snapshot_every=10 ** 6))
        assert state.status == "extinction"
        T.append(state.t)
    assert T[1] / T[0] == pytest.approx(16, rel=0.05)


def test_tangential_term_is_reparametrization():
    m = icosphere(1.0, 3)
    cfg = FlowConfig(c_dt=0.02, max_steps=300, snapshot_every=50)
    radii = []
    for tang in (False, True):
        rr = []
        run(m, dataclasses.replace(cfg, include_tangential=tang), callback=lambda s, r: rr.append(_mean_radius(s.mesh)))
        radii.append(np.array(rr))
    assert np.max(np.abs(radii[0] - radii[1])) < 1e-4


def test_determinism_bit_identical(sphere3):
    cfg = FlowConfig(kind="willmore", c_dt=0.02, max_steps=40, snapshot_every=10)
    a, ra = run(torus(2.0, 1.0, 24, 12), cfg)
    b, rb = run(torus(2.0, 1.0, 24, 12), cfg)
    assert np.array_equal(a.mesh.vertices, b.mesh.vertices)
    assert ra == rb or all(np.array_equal(np.asarray(dataclasses.astuple(x), float), np.asarray(dataclasses.astuple(y), float))
                           for x, y in zip(ra, rb))


def test_willmore_energy_non_increasing():
    m = torus(2.0, 1.0, 32, 16)
    cfg = FlowConfig(kind="willmore", c_dt=0.02, max_steps=400, snapshot_every=1)
    W = []
    run(m, cfg, callback=lambda s, r: W.append(r.willmore_energy))
    W = np.array(W)
    assert np.all(np.diff(W) <= 1e-8 * W[0])
    assert W[-1] < W[0]


def test_area_evolution_identity_sphere(sphere4):
    cfg = FlowConfig(c_dt=0.05)
    state = initial_state(sphere4)
    for _ in range(3):
        cf = curvature_field(state.mesh, with_shape=False)
        a0 = state.mesh.area()
        new = step(state, cfg)
        predicted = -np.sum(cf.mean_curvature * new.F * cf.vertex_area)
        measured = (new.mesh.area() - a0) / new.dt
        assert abs(measured - predicted) / abs(predicted) < 0.05
        state = new
