"""Velocity assembly and time stepping for the biharmonic and Willmore flows.

Normal speeds use the outward normal, so a round sphere of radius r has
``H = -n/r`` and ``|A|^2 = n/r^2``. Positions move by ``F nu + W``.

Biharmonic flow::

    F = -(Delta H - H |A|^2),   W = 2 S(grad H) + H grad H

Willmore flow::

    F = -(Delta H - 1/2 |A|^2 H + C(A)),   C(A) = tr(S^3)

The explicit step uses ``dt = c_dt h_min^4``. The semi-implicit step treats
the bi-Laplacian of the positions implicitly,

    (M + dt C M^-1 C) f_new = M (f_old + dt (v + L^2 f_old)),  L = M^-1 C,

with every curvature term (the whole velocity ``v``) taken explicitly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .diagnostics import (
    RESIDUAL_FLOOR,
    DiagnosticsRecord,
    append_record,
    make_record,
    willmore_energy,
)
from .diffgeo import CurvatureField, OperatorError, curvature_field, gradient, laplace_beltrami, shape_apply
from .diffgeo import _geometry
from .mesh import Mesh, save_mesh

__all__ = [
    "FLOW_KINDS",
    "STEPPERS",
    "STATUSES",
    "FlowConfig",
    "FlowState",
    "FlowError",
    "SphereOde",
    "biharmonic_velocity",
    "willmore_velocity",
    "biharmonic_speed",
    "willmore_speed",
    "umbilic_curvatures",
    "time_step",
    "initial_state",
    "step",
    "run",
    "sphere_ode_radius",
    "sphere_ode_rk4",
]

FLOW_KINDS = ("biharmonic", "willmore")
STEPPERS = ("explicit-euler", "semi-implicit")
STATUSES = ("running", "reached_t_end", "reached_max_steps", "extinction",
            "concentration_exceeded", "numerical_failure")
EXTINCTION_FRACTION = 1e-3


class FlowError(ArithmeticError):
    """Raised for invalid flow input or a failed linear solve."""


@dataclass(frozen=True)
class FlowConfig:
    """Flow parameters.

    ``concentration_threshold`` is the bound on ``max_x int_{B_R(x)} |A|^2``
    checked at every snapshot; ``inf`` disables the stop (the value is still
    recorded). ``snapshot_every`` counts steps. The run stops with status
    ``extinction`` once ``h_min < extinction_fraction * h_min(0)``.
    """

    kind: str = "biharmonic"
    include_tangential: bool = False
    stepper: str = "explicit-euler"
    c_dt: float = 0.02
    t_end: float = 1.0
    max_steps: int = 1_000_000
    concentration_radius: float = 1.0
    concentration_threshold: float = math.inf
    concentration_centers: object = "all-vertices"
    snapshot_every: int = 100
    extinction_fraction: float = EXTINCTION_FRACTION

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"kind: expected one of {FLOW_KINDS}, got {self.kind!r}")
        if self.stepper not in STEPPERS:
            raise ValueError(f"stepper: expected one of {STEPPERS}, got {self.stepper!r}")
        if not 0 < self.c_dt <= 1:
            raise ValueError(f"c_dt: must lie in (0, 1], got {self.c_dt}")
        if not self.t_end >= 0:
            raise ValueError(f"t_end: must be nonnegative, got {self.t_end}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps: must be nonnegative, got {self.max_steps}")
        if not self.concentration_radius > 0:
            raise ValueError(f"concentration_radius: must be positive, got {self.concentration_radius}")
        if not self.concentration_threshold > 0:
            raise ValueError(f"concentration_threshold: must be positive, got {self.concentration_threshold}")
        if self.snapshot_every < 1:
            raise ValueError(f"snapshot_every: must be >= 1, got {self.snapshot_every}")
        if not 0 < self.extinction_fraction < 1:
            raise ValueError(f"extinction_fraction: must lie in (0, 1), got {self.extinction_fraction}")
        if self.include_tangential and self.kind != "biharmonic":
            raise ValueError("include_tangential: only defined for the biharmonic flow")


@dataclass(frozen=True)
class FlowState:
    """Mesh plus clock. ``F``/``W`` are the velocity used by the last step.

    ``sample`` holds ``(t, W, D)`` for the mesh before the last step, where
    ``D = -int F G dmu`` is the energy dissipation rate predicted by the
    first variation (``int F^2 dmu`` for the Willmore flow).
    """

    mesh: Mesh
    t: float = 0.0
    step: int = 0
    dt: float = 0.0
    F: np.ndarray | None = None
    W: np.ndarray | None = None
    status: str = "running"
    h_min0: float = 0.0
    sample: tuple | None = None
    message: str = ""

    @property
    def running(self) -> bool:
        return self.status == "running"


# ---------------------------------------------------------------------------
# velocities


def biharmonic_speed(H, a_squared, lap_H):
    """``F = -(Delta H - H |A|^2)``."""
    return -(lap_H - H * a_squared)


def willmore_speed(H, a_squared, cubic, lap_H):
    """``F = -(Delta H - 1/2 |A|^2 H + C(A))``."""
    return -(lap_H - 0.5 * a_squared * H + cubic)


def umbilic_curvatures(n: int, r: float):
    """``(H, |A|^2, C(A))`` of a round n-sphere of radius r (outward normal)."""
    lam = -1.0 / r
    return n * lam, n * lam ** 2, n * lam ** 3


def biharmonic_velocity(mesh: Mesh, curvature: CurvatureField, include_tangential: bool = False):
    """Normal speed ``F`` and tangential field ``W`` of the biharmonic flow."""
    cf = curvature
    H = cf.mean_curvature
    F = biharmonic_speed(H, cf.a_squared, laplace_beltrami(mesh, H))
    if not include_tangential:
        return F, np.zeros((mesh.n_vertices, 3))
    if cf.shape_operator is None:
        raise ValueError("include_tangential needs a curvature field with the shape operator")
    gH = gradient(mesh, H)
    W = 2 * shape_apply(cf, gH) + H[:, None] * gH
    W -= np.einsum("vc,vc->v", W, cf.normal)[:, None] * cf.normal
    return F, W


def willmore_velocity(mesh: Mesh, curvature: CurvatureField) -> np.ndarray:
    """Normal speed of the Willmore flow (purely normal motion)."""
    cf = curvature
    H = cf.mean_curvature
    return willmore_speed(H, cf.a_squared, cf.cubic, laplace_beltrami(mesh, H))


# ---------------------------------------------------------------------------
# stepping


def _h_min(mesh: Mesh) -> float:
    return _geometry(mesh).h_min


def time_step(mesh: Mesh, config: FlowConfig) -> float:
    """``c_dt * h_min^4`` with ``h_min`` the shortest edge."""
    return config.c_dt * _h_min(mesh) ** 4


def initial_state(mesh: Mesh) -> FlowState:
    return FlowState(mesh=mesh, h_min0=float(mesh.edge_lengths().min()))


def _velocity(mesh: Mesh, config: FlowConfig):
    cf = curvature_field(mesh, with_shape=config.include_tangential)
    H, a2 = cf.mean_curvature, cf.a_squared
    lap_h = laplace_beltrami(mesh, H)
    W = np.zeros((mesh.n_vertices, 3))
    if config.kind == "biharmonic":
        F = biharmonic_speed(H, a2, lap_h)
        if config.include_tangential:
            W = biharmonic_velocity(mesh, cf, True)[1]
    else:
        F = willmore_speed(H, a2, cf.cubic, lap_h)
    # first variation density; dW/dt = int F G dmu
    G = lap_h - 0.5 * H * a2 + cf.cubic
    a = cf.vertex_area
    sample = (0.5 * float(np.sum(a2 * a)), -float(np.sum(F * G * a)))
    return cf, F, W, sample


def _semi_implicit(mesh: Mesh, v: np.ndarray, dt: float) -> np.ndarray:
    g = _geometry(mesh)
    C, m = g.matrix, g.mass
    f = mesh.vertices
    Lf = laplace_beltrami(mesh, f)
    L2f = laplace_beltrami(mesh, Lf)
    rhs = m[:, None] * (f + dt * (v + L2f))
    A = (sp.diags(m) + dt * (C @ sp.diags(1.0 / m) @ C)).tocsc()
    try:
        lu = sla.splu(A)
    except RuntimeError as exc:
        raise FlowError(f"semi-implicit solve failed: {exc}") from exc
    out = lu.solve(rhs)
    if not np.all(np.isfinite(out)):
        raise FlowError("semi-implicit solve produced non-finite positions")
    return out


def step(state: FlowState, config: FlowConfig) -> FlowState:
    """Advance one time step; terminated states are returned unchanged."""
    if not state.running:
        return state
    if state.step >= config.max_steps:
        return replace(state, status="reached_max_steps")
    if state.t >= config.t_end:
        return replace(state, status="reached_t_end")
    mesh = state.mesh
    h0 = state.h_min0 or float(mesh.edge_lengths().min())
    try:
        cf, F, W, (energy, dissipation) = _velocity(mesh, config)
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(W))):
            raise FlowError("non-finite velocity")
        dt = min(time_step(mesh, config), config.t_end - state.t)
        v = F[:, None] * cf.normal + W
        if config.stepper == "explicit-euler":
            new = mesh.vertices + dt * v
        else:
            new = _semi_implicit(mesh, v, dt)
        if not np.all(np.isfinite(new)):
            raise FlowError("non-finite positions")
    except (FlowError, OperatorError, FloatingPointError) as exc:
        return replace(state, status="numerical_failure", message=str(exc), h_min0=h0)
    t = state.t + dt
    # land exactly on t_end when the last step was clipped
    if config.t_end - t <= 1e-12 * max(config.t_end, 1.0):
        t = config.t_end
    out = FlowState(mesh=mesh.with_vertices(new), t=t, step=state.step + 1, dt=dt, F=F, W=W,
                    h_min0=h0, sample=(state.t, energy, dissipation))
    try:
        h_min = _h_min(out.mesh)  # also caches the operators for the next step
    except OperatorError:
        h_min = float(out.mesh.edge_lengths().min())
    status = "running"
    if h_min < config.extinction_fraction * h0:
        status = "extinction"
    elif out.t >= config.t_end:
        status = "reached_t_end"
    elif out.step >= config.max_steps:
        status = "reached_max_steps"
    return replace(out, status=status)


def _record(state: FlowState, config: FlowConfig, cf: CurvatureField, energy_residual: float):
    return make_record(state.mesh, cf, state.t, config.concentration_radius, F=state.F,
                       energy_residual=energy_residual, centers=config.concentration_centers)


def run(mesh: Mesh, config: FlowConfig, *, sink=None, snapshot_dir=None, stem: str = "snapshot",
        callback=None):
    """Iterate :func:`step` until termination.

    A :class:`DiagnosticsRecord` is produced at the initial state, every
    ``config.snapshot_every`` steps and at the final state. Records are
    appended to ``sink`` (path or text file) when given; meshes are written
    to ``snapshot_dir/{stem}_step{k}.off`` when a directory is given.
    ``callback(state, record)`` is called for every record.

    Returns ``(final_state, records)``.
    """
    state = initial_state(mesh)
    records: list[DiagnosticsRecord] = []
    if snapshot_dir is not None:
        Path(snapshot_dir).mkdir(parents=True, exist_ok=True)

    def emit(state):
        try:
            cf = curvature_field(state.mesh, with_shape=False)
        except OperatorError as exc:
            return replace(state, status="numerical_failure", message=str(exc))
        res = math.nan
        if state.sample is not None and state.dt > 0:
            t0, w0, d0 = state.sample
            w1 = willmore_energy(state.mesh, cf)
            res = abs((w1 - w0) / (state.t - t0) + d0) / max(abs(d0), RESIDUAL_FLOOR)
        rec = _record(state, config, cf, res)
        records.append(rec)
        if sink is not None:
            append_record(rec, sink)
        if snapshot_dir is not None:
            save_mesh(state.mesh, os.path.join(snapshot_dir, f"{stem}_step{state.step}.off"))
        if callback is not None:
            callback(state, rec)
        if state.running and rec.kappa_max > config.concentration_threshold:
            state = replace(state, status="concentration_exceeded",
                            message=f"kappa_max={rec.kappa_max:.6g} exceeds {config.concentration_threshold:.6g}")
        return state

    state = emit(state)
    if state.running and config.max_steps == 0:
        return replace(state, status="reached_max_steps"), records
    while state.running:
        state = step(state, config)
        if state.status == "numerical_failure":
            break
        if not state.running or state.step % config.snapshot_every == 0:
            state = emit(state)
    return state, records


# ---------------------------------------------------------------------------
# sphere reductions


@dataclass(frozen=True)
class SphereOde:
    """Round n-sphere of radius ``r0`` moving under ``kind``.

    With ``lambda_i = -1/r`` the normal speed is ``F(r) = -c / r^3`` where
    ``c = n^2`` (biharmonic) or ``c = n(n-2)/2`` (Willmore), so
    ``r^4 = r0^4 - 4 c t``.
    """

    n: int = 2
    r0: float = 1.0
    kind: str = "biharmonic"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")

    @property
    def rate(self) -> float:
        n = self.n
        return float(n * n) if self.kind == "biharmonic" else 0.5 * n * (n - 2)

    @property
    def extinction_time(self) -> float:
        """``r0^4 / (4 c)``; ``inf`` for stationary spheres."""
        return self.r0 ** 4 / (4 * self.rate) if self.rate > 0 else math.inf

    def speed(self, r):
        """Outward normal speed ``dr/dt`` evaluated from the flow formulas."""
        H, a2, cubic = umbilic_curvatures(self.n, r)
        if self.kind == "biharmonic":
            return biharmonic_speed(H, a2, 0.0)
        return willmore_speed(H, a2, cubic, 0.0)


def sphere_ode_radius(ode: SphereOde, t):
    """Closed-form radius at time ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t >= ode.extinction_time):
        raise ValueError(f"t must lie in [0, {ode.extinction_time}) for this sphere")
    r = (ode.r0 ** 4 - 4 * ode.rate * t) ** 0.25
    return float(r) if r.ndim == 0 else r


def sphere_ode_rk4(ode: SphereOde, t: float, n_steps: int = 1000) -> float:
    """Integrate ``dr/dt = F(r)`` with classical RK4 (independent cross-check)."""
    if not 0 <= t < ode.extinction_time:
        raise ValueError(f"t must lie in [0, {ode.extinction_time}) for this sphere")
    h = t / n_steps
    r = float(ode.r0)
    f = ode.speed
    for _ in range(n_steps):
        k1 = f(r)
        k2 = f(r + 0.5 * h * k1)
        k3 = f(r + 0.5 * h * k2)
        k4 = f(r + h * k3)
        r += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return r
