"""Discrete differential geometry on closed triangle meshes.

Sign conventions: with outward unit normal ``nu`` and the Gauss formula
``d^2 f = Gamma df + A nu``, a round sphere of radius r has ``A = -g/r``,
``H = -2/r`` and shape operator ``S = -Id/r``. The discrete mean curvature
therefore carries the sign of ``<Delta f, nu>``.

Laplace-Beltrami is the cotangent operator with mixed Voronoi lumped mass,
``(Delta u)_i = (1/m_i) sum_j w_ij (u_j - u_i)``. Gaussian curvature is the
angle defect divided by the lumped area, so ``sum_i K_i m_i = 2 pi chi``
holds up to rounding. ``|A|^2``, ``|A0|^2`` and ``C(A)`` are formed from
``(H, K)`` (surface case ``n = 2``):

    |A|^2  = H^2 - 2K
    |A0|^2 = |A|^2 - H^2/2
    C(A)   = H^3 - 3HK = H (|A|^2 + 2|A0|^2) / 2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import DEGENERATE_AREA_FRACTION, Mesh

__all__ = [
    "OperatorError",
    "CurvatureField",
    "cotan_laplacian",
    "laplace_beltrami",
    "mean_curvature_vector",
    "vertex_normals",
    "vertex_areas",
    "angle_defects",
    "curvature_field",
    "gradient",
    "shape_operator_fit",
    "shape_apply",
]

QUADRIC_MIN_NEIGHBORS = 5
# corner k+1 and k+2 of each face, as index arrays (cheaper than np.roll)
_K1 = np.array([1, 2, 0])
_K2 = np.array([2, 0, 1])


class OperatorError(ArithmeticError):
    """A discrete operator cannot be evaluated (e.g. near-degenerate face)."""

    def __init__(self, message, face=None):
        super().__init__(message)
        self.face = face


class _Geometry:
    """Per-face quantities shared by all operators on one set of positions.

    Corner arrays are stored corner-major: ``cot[k, f]`` belongs to corner k
    of face f, and ``opposite_edge[k, f]`` runs from corner k+1 to corner k+2.
    """

    def __init__(self, mesh: Mesh):
        top = mesh.topology
        c = top.corners
        v = mesh.vertices
        p = np.take(v, c, axis=0)  # np.take is much faster than fancy indexing here
        e = np.stack([p[2] - p[1], p[0] - p[2], p[1] - p[0]])  # opposite each corner
        cross = np.cross(e[2], -e[1])
        dbl = np.sqrt(np.einsum("fc,fc->f", cross, cross))
        tol = 2 * DEGENERATE_AREA_FRACTION * mesh.bbox_diagonal() ** 2
        if not np.all(dbl > tol):
            bad = int(np.flatnonzero(~(dbl > tol))[0])
            raise OperatorError(f"face {bad} is near-degenerate (area {0.5 * dbl[bad]:.3e})", face=bad)
        # angle at corner k is between edges k->k+1 (= e[k+2]) and k->k+2 (= -e[k+1])
        l2 = np.einsum("kfc,kfc->kf", e, e)
        dots = 0.5 * (np.take(l2, _K1, axis=0) + np.take(l2, _K2, axis=0) - l2)  # law of cosines
        self.cot = dots / dbl
        self.angles = np.arctan2(np.broadcast_to(dbl, dots.shape), dots)
        self.double_area = dbl
        self.edge_length_sq = l2
        self.area_normal = cross
        self.opposite_edge = e
        self.corners = c
        self.incidence = top.incidence
        self.n = mesh.n_vertices
        self.mass = np.bincount(c.ravel(), weights=_mixed_corner_areas(self).ravel(), minlength=self.n)
        # edge (j, l) opposite each corner, weight cot/2
        self.ej = c[_K1].ravel()
        self.el = c[_K2].ravel()
        self.w = 0.5 * self.cot.ravel()
        self.edge_weight = np.bincount(top.corner_edge.ravel(), weights=self.w, minlength=top.n_edges)
        self._D, self._Dt = top.edge_difference, top.edge_difference_t
        self._matrix = None

    def stiffness_apply(self, u: np.ndarray) -> np.ndarray:
        """``C u`` with ``C`` the symmetric cotangent matrix (rows sum to 0)."""
        u = np.asarray(u, dtype=np.float64)
        du = self._D @ u
        du *= self.edge_weight if u.ndim == 1 else self.edge_weight[:, None]
        return -(self._Dt @ du)

    @property
    def face_normal(self) -> np.ndarray:
        return self.area_normal / self.double_area[:, None]

    def to_vertices(self, q: np.ndarray) -> np.ndarray:
        """Sum a per-face quantity onto the three vertices of each face."""
        return self.incidence @ q

    @property
    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            j, l, w = self.ej, self.el, self.w
            rows = np.concatenate([j, l, j, l])
            cols = np.concatenate([l, j, j, l])
            data = np.concatenate([w, w, -w, -w])
            self._matrix = sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))
        return self._matrix


def _mixed_corner_areas(g: _Geometry) -> np.ndarray:
    """Mixed Voronoi area of each face corner (Meyer et al. 2003), shape (3, F).

    Circumcentric Voronoi areas for non-obtuse faces; for obtuse faces the
    obtuse corner gets half the face and the other two a quarter each.
    """
    l2 = g.edge_length_sq
    g.h_min = float(np.sqrt(l2.min()))
    # the edges opposite corners k+1 and k+2 are the two edges meeting at k
    lc = l2 * g.cot
    vor = (lc[_K1] + lc[_K2]) / 8.0
    area = 0.5 * g.double_area
    obtuse = g.angles > 0.5 * np.pi
    return np.where(obtuse.any(0), np.where(obtuse, 0.5 * area, 0.25 * area), vor)


def _geometry(mesh: Mesh) -> _Geometry:
    g = mesh._cache.get("geometry")
    if g is None:
        g = mesh._cache["geometry"] = _Geometry(mesh)
    return g


def cotan_laplacian(mesh: Mesh) -> tuple[sp.csr_matrix, np.ndarray]:
    """Return ``(C, m)``: cotangent stiffness matrix and lumped vertex areas.

    ``Delta u = C u / m``. ``C`` is symmetric with zero row sums.
    """
    g = _geometry(mesh)
    return g.matrix, g.mass


def vertex_areas(mesh: Mesh) -> np.ndarray:
    """Mixed Voronoi lumped areas; they sum to the mesh area."""
    return _geometry(mesh).mass


def laplace_beltrami(mesh: Mesh, field) -> np.ndarray:
    """Cotangent Laplace-Beltrami of a per-vertex scalar or vector field."""
    g = _geometry(mesh)
    f = np.asarray(field, dtype=np.float64)
    out = g.stiffness_apply(f)
    return out / (g.mass if f.ndim == 1 else g.mass[:, None])


def mean_curvature_vector(mesh: Mesh) -> np.ndarray:
    """Discrete ``Delta f = H nu`` per vertex (points inward on convex surfaces)."""
    return laplace_beltrami(mesh, mesh.vertices)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Unit normals from area-weighted face normals."""
    g = _geometry(mesh)
    n = g.to_vertices(g.area_normal)
    return n / np.sqrt(np.einsum("vc,vc->v", n, n))[:, None]


def angle_defects(mesh: Mesh) -> np.ndarray:
    """``2 pi - sum of incident corner angles`` per vertex."""
    g = _geometry(mesh)
    return 2 * np.pi - np.bincount(g.corners.ravel(), weights=g.angles.ravel(), minlength=g.n)


def gradient(mesh: Mesh, field) -> np.ndarray:
    """Tangential gradient of a per-vertex scalar field.

    Per-face linear gradients are area-averaged onto vertices and projected
    onto the vertex tangent plane.
    """
    g = _geometry(mesh)
    u = np.take(np.asarray(field, dtype=np.float64), g.corners)  # (3, F)
    rot = np.cross(g.face_normal[None], g.opposite_edge)  # n x e_k
    # face gradient is sum_k u_k (n x e_k) / 2A; weighting by 2A cancels the division
    wgf = np.einsum("kf,kfc->fc", u, rot)
    acc = g.to_vertices(wgf) / g.to_vertices(g.double_area)[:, None]
    nu = vertex_normals(mesh)
    return acc - np.einsum("vc,vc->v", acc, nu)[:, None] * nu


def _tangent_frames(nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.zeros_like(nu)
    ref[np.arange(len(nu)), np.argmin(np.abs(nu), axis=1)] = 1.0
    e1 = np.cross(nu, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(nu, e1)
    return e1, e2


def shape_operator_fit(mesh: Mesh, nu: np.ndarray, mean_curvature: np.ndarray):
    """Least-squares paraboloid fit over each vertex 2-ring.

    Fits ``z = a x^2 + b xy + c y^2 + d x + e y`` in the tangent frame of
    ``nu`` and returns the ambient 3x3 shape operator ``E [[2a, b], [b, 2c]] E^T``
    together with a boolean mask of vertices that fell back to the isotropic
    estimate ``(H/2) P`` (too few neighbours or a rank-deficient fit).
    """
    idx, mask = mesh.topology.two_ring
    p = mesh.vertices
    e1, e2 = _tangent_frames(nu)
    d = p[idx] - p[:, None, :]  # (V, K, 3)
    x = np.einsum("vkc,vc->vk", d, e1)
    y = np.einsum("vkc,vc->vk", d, e2)
    z = np.einsum("vkc,vc->vk", d, nu)
    w = mask.astype(np.float64)
    scale = np.sqrt((w * (x * x + y * y)).sum(1) / np.maximum(w.sum(1), 1))
    scale[scale == 0] = 1.0
    xs, ys = x / scale[:, None], y / scale[:, None]
    design = np.stack([xs * xs, xs * ys, ys * ys, xs, ys], axis=-1)  # (V, K, 5)
    ata = np.einsum("vk,vki,vkj->vij", w, design, design)
    atz = np.einsum("vk,vki,vk->vi", w, design, z)
    count = mask.sum(1)
    cond = np.linalg.cond(ata)
    fallback = (count < QUADRIC_MIN_NEIGHBORS) | ~(cond < 1e10)
    ata[fallback] = np.eye(5)
    atz[fallback] = 0.0
    coef = np.linalg.solve(ata, atz[..., None])[..., 0]
    s2 = scale ** 2
    hxx, hxy, hyy = 2 * coef[:, 0] / s2, coef[:, 1] / s2, 2 * coef[:, 2] / s2
    S = (hxx[:, None, None] * np.einsum("vi,vj->vij", e1, e1)
         + hxy[:, None, None] * (np.einsum("vi,vj->vij", e1, e2) + np.einsum("vi,vj->vij", e2, e1))
         + hyy[:, None, None] * np.einsum("vi,vj->vij", e2, e2))
    if fallback.any():
        proj = np.eye(3)[None] - np.einsum("vi,vj->vij", nu, nu)
        S[fallback] = 0.5 * mean_curvature[fallback, None, None] * proj[fallback]
    return S, fallback


@dataclass
class CurvatureField:
    """Per-vertex curvature state of a surface mesh (``n = 2``).

    Attributes
    ----------
    normal : (V, 3) outward unit normals.
    mean_curvature : (V,) H, negative on convex outward-oriented surfaces.
    gauss_curvature : (V,) K from angle defects.
    a_squared, tracefree_squared, cubic : (V,) |A|^2, |A0|^2 and C(A).
    vertex_area : (V,) lumped areas; they sum to the mesh area.
    mean_curvature_vector : (V, 3) discrete Delta f.
    shape_operator : (V, 3, 3) or None, symmetric and tangent.
    shape_fallback : (V,) bool or None; True where the quadric fit was replaced.
    """

    normal: np.ndarray
    mean_curvature: np.ndarray
    gauss_curvature: np.ndarray
    a_squared: np.ndarray
    tracefree_squared: np.ndarray
    cubic: np.ndarray
    vertex_area: np.ndarray
    mean_curvature_vector: np.ndarray
    shape_operator: np.ndarray | None = None
    shape_fallback: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.mean_curvature)


def curvature_field(mesh: Mesh, with_shape: bool = True) -> CurvatureField:
    """Compute normals, H, K, |A|^2, |A0|^2, C(A) and (optionally) S."""
    hn = mean_curvature_vector(mesh)
    nu = vertex_normals(mesh)
    mag = np.sqrt(np.einsum("vc,vc->v", hn, hn))
    H = np.copysign(mag, np.einsum("vc,vc->v", hn, nu))
    m = vertex_areas(mesh)
    K = angle_defects(mesh) / m
    H2 = H * H
    a2 = H2 - 2 * K
    a0 = a2 - 0.5 * H2
    cubic = H * (H2 - 3 * K)
    S = fb = None
    meta = {}
    if with_shape:
        S, fb = shape_operator_fit(mesh, nu, H)
        meta["shape_fallback_count"] = int(fb.sum())
    return CurvatureField(nu, H, K, a2, a0, cubic, m, hn, S, fb, meta)


def shape_apply(field: CurvatureField, X) -> np.ndarray:
    """Apply the per-vertex shape operator to a tangent vector field."""
    if field.shape_operator is None:
        raise ValueError("curvature field was computed without the shape operator")
    return np.einsum("vij,vj->vi", field.shape_operator, np.asarray(X, dtype=np.float64))
