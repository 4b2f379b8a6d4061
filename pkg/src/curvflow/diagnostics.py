"""Energies, curvature concentration, energy-identity residuals and
first-variation checks.

All integrals are lumped vertex sums ``sum_i q_i a_i`` over the mixed
Voronoi areas of :mod:`curvflow.diffgeo`.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy.spatial.distance import cdist

from .diffgeo import CurvatureField, curvature_field, laplace_beltrami, vertex_normals
from .mesh import Mesh

__all__ = [
    "CSV_COLUMNS",
    "DiagnosticsRecord",
    "FirstVariation",
    "RoundoffDominated",
    "willmore_energy",
    "bienergy",
    "concentration",
    "max_concentration",
    "willmore_gradient_density",
    "energy_identity_residual",
    "first_variation",
    "first_variation_check",
    "make_record",
    "append_record",
    "read_records",
]

RESIDUAL_FLOOR = 1e-14
_CHUNK = 1024


class RoundoffDominated(ArithmeticError):
    """The finite-difference step is too small for the energy's rounding level."""


def willmore_energy(mesh: Mesh, curvature: CurvatureField | None = None) -> float:
    """``1/2 int |A|^2 dmu``; scale invariant for surfaces."""
    cf = curvature if curvature is not None else curvature_field(mesh, with_shape=False)
    return 0.5 * float(np.sum(cf.a_squared * cf.vertex_area))


def bienergy(mesh: Mesh, curvature: CurvatureField | None = None) -> float:
    """``1/2 int H^2 dmu`` (tension energy of the immersion)."""
    cf = curvature if curvature is not None else curvature_field(mesh, with_shape=False)
    return 0.5 * float(np.sum(cf.mean_curvature ** 2 * cf.vertex_area))


def _density(cf: CurvatureField, n: int = 2) -> np.ndarray:
    # |A|^n per vertex times area; for n = 2 this is |A|^2 a
    return np.abs(cf.a_squared) ** (n / 2) * cf.vertex_area


def concentration(mesh: Mesh, curvature: CurvatureField, center, R: float) -> float:
    """``int_{M cap B_R(center)} |A|^2 dmu`` with sharp vertex membership."""
    if not R > 0:
        raise ValueError("R must be positive")
    c = np.asarray(center, dtype=np.float64).reshape(1, 3)
    inside = cdist(c, mesh.vertices)[0] < R
    return float(np.sum(_density(curvature)[inside]))


def _centers(mesh: Mesh, sampling):
    nv = mesh.n_vertices
    if sampling in (None, "all-vertices", "all"):
        return np.arange(nv)
    if isinstance(sampling, tuple):
        name, k = sampling
        if name not in ("vertex-subsample", "subsample"):
            raise ValueError(f"unknown sampling strategy {name!r}")
    elif isinstance(sampling, (int, np.integer)):
        k = sampling
    else:
        raise ValueError(f"unknown sampling strategy {sampling!r}")
    k = int(k)
    if k <= 0:
        raise ValueError("subsample size must be positive")
    # evenly spaced vertex ids; deterministic and nested for k | V
    return np.unique(np.linspace(0, nv - 1, min(k, nv)).round().astype(np.int64))


def max_concentration(mesh: Mesh, curvature: CurvatureField, R: float, centers="all-vertices"):
    """Largest ball concentration over candidate centers.

    The true supremum is over all points of space; sampling centers at
    vertices gives a lower bound. ``centers`` is ``"all-vertices"``,
    ``("vertex-subsample", k)`` or an int ``k``.

    Returns ``(value, center_xyz)``.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    ids = _centers(mesh, centers)
    w = _density(curvature)
    X = mesh.vertices
    vals = np.empty(len(ids))
    for s in range(0, len(ids), _CHUNK):
        block = ids[s:s + _CHUNK]
        inside = cdist(X[block], X) < R
        vals[s:s + _CHUNK] = inside @ w
    j = int(np.argmax(vals))
    return float(vals[j]), X[ids[j]].copy()


def willmore_gradient_density(mesh: Mesh, curvature: CurvatureField) -> np.ndarray:
    """``Delta H - 1/2 H |A|^2 + C(A)`` per vertex (the L^2 gradient of W along nu)."""
    cf = curvature
    lap_h = laplace_beltrami(mesh, cf.mean_curvature)
    return lap_h - 0.5 * cf.mean_curvature * cf.a_squared + cf.cubic


def energy_identity_residual(history) -> float:
    """Relative defect of ``dW/dt = -int F^2 dmu`` over sampled steps.

    ``history`` is a sequence of ``(t, W, D)`` with ``D`` the dissipation at
    that sample (``int F^2 dmu`` for the Willmore flow). For each consecutive
    pair the residual is ``|(W1 - W0)/(t1 - t0) + D0| / max(D0, floor)``;
    the largest one is returned.
    """
    h = np.asarray(history, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != 3 or len(h) < 2:
        raise ValueError("need at least two (t, W, D) samples")
    dt = np.diff(h[:, 0])
    if not np.all(dt > 0):
        raise ValueError("time stamps must be strictly increasing")
    rate = np.diff(h[:, 1]) / dt
    d0 = h[:-1, 2]
    res = np.abs(rate + d0) / np.maximum(np.abs(d0), RESIDUAL_FLOOR)
    return float(res.max())


@dataclass(frozen=True)
class FirstVariation:
    fd: float  # central difference of the discrete energy
    formula: float  # sum phi (Delta H - 1/2 H|A|^2 + C) a
    scale: float  # sum |phi| (|Delta H| + 1/2 |H||A|^2 + |C|) a
    h: float

    @property
    def discrepancy(self) -> float:
        if self.scale == 0.0:
            return 0.0
        return abs(self.fd - self.formula) / self.scale


def first_variation(mesh: Mesh, phi, h_fd: float | None = None) -> FirstVariation:
    """Compare the FD derivative of the discrete energy with the formula.

    The perturbation is ``f + h phi nu`` with ``nu`` the vertex normals of
    ``mesh``. The discrepancy is normalised by the size of the individual
    terms rather than by the result, because on stationary surfaces (round
    spheres) both sides vanish.

    Raises
    ------
    RoundoffDominated
        If the rounding error of the energy divided by ``h`` is not small
        against the variation scale, or if the differences at ``h``, ``2h``
        and ``4h`` are not consistent with second-order truncation.
    """
    phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), (mesh.n_vertices,))
    if h_fd is None:
        h_fd = 1e-5 * mesh.bbox_diagonal()
    if not h_fd > 0:
        raise ValueError("h_fd must be positive")
    cf = curvature_field(mesh, with_shape=False)
    G = willmore_gradient_density(mesh, cf)
    a = cf.vertex_area
    formula = float(np.sum(phi * G * a))
    terms = (np.abs(laplace_beltrami(mesh, cf.mean_curvature))
             + 0.5 * np.abs(cf.mean_curvature) * cf.a_squared + np.abs(cf.cubic))
    scale = float(np.sum(np.abs(phi) * terms * a))
    if scale == 0.0:
        return FirstVariation(0.0, formula, 0.0, h_fd)
    nu = vertex_normals(mesh)
    disp = phi[:, None] * nu

    def W(s):
        return willmore_energy(mesh.with_vertices(mesh.vertices + s * disp))

    W0 = willmore_energy(mesh, cf)
    d = [(W(k * h_fd) - W(-k * h_fd)) / (2 * k * h_fd) for k in (1, 2, 4)]
    rounding = 8 * np.finfo(float).eps * max(W0, 1.0) / h_fd
    if rounding > 1e-3 * scale:
        raise RoundoffDominated(f"h_fd={h_fd:.3e} too small: rounding {rounding:.2e} vs scale {scale:.2e}")
    d1, d2 = d[0] - d[1], d[1] - d[2]
    if abs(d1) > 10 * rounding and not 2.0 <= d2 / d1 <= 8.0:
        raise RoundoffDominated(f"FD differences not second-order consistent (ratio {d2 / d1:.3g})")
    return FirstVariation(d[0], formula, scale, h_fd)


def first_variation_check(mesh: Mesh, direction, h_fd: float | None = None) -> float:
    """Relative discrepancy between the FD and formula first variations."""
    return first_variation(mesh, direction, h_fd).discrepancy


# ---------------------------------------------------------------------------
# records and CSV


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    area: float
    willmore_energy: float
    bienergy: float
    kappa_max: float
    kappa_argmax_x: float
    kappa_argmax_y: float
    kappa_argmax_z: float
    energy_residual: float
    h_min: float
    max_F: float


CSV_COLUMNS = tuple(f.name for f in fields(DiagnosticsRecord))


def make_record(mesh: Mesh, curvature: CurvatureField, t: float, R: float, *, F=None,
                energy_residual=math.nan, centers="all-vertices") -> DiagnosticsRecord:
    kappa, c = max_concentration(mesh, curvature, R, centers)
    max_f = float(np.max(np.abs(F))) if F is not None else math.nan
    return DiagnosticsRecord(
        float(t), mesh.area(), willmore_energy(mesh, curvature), bienergy(mesh, curvature),
        kappa, float(c[0]), float(c[1]), float(c[2]), float(energy_residual),
        float(mesh.edge_lengths().min()), max_f,
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def append_record(record: DiagnosticsRecord, sink) -> None:
    """Append one CSV row; the header goes first when the sink is empty.

    ``sink`` is a path or a text file object opened for appending/writing.
    """
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "a", newline="") as fh:
            append_record(record, fh)
        return
    empty = sink.tell() == 0
    if empty:
        sink.write(",".join(CSV_COLUMNS) + "\n")
    sink.write(",".join(_fmt(x) for x in astuple(record)) + "\n")


def read_records(source) -> list[DiagnosticsRecord]:
    """Parse a diagnostics CSV (path or text) back into records."""
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, newline="") as fh:
            text = fh.read()
    else:
        text = str(source)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError("missing or unexpected diagnostics CSV header")
    return [DiagnosticsRecord(*map(float, r)) for r in rows[1:] if r]
