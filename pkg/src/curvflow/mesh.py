"""Closed triangle meshes: representation, generators, validation and OFF/OBJ I/O.

A :class:`Mesh` is an indexed triangle list. Connectivity-derived arrays
(edges, adjacency, 2-rings) live in a :class:`Topology` object that is built
lazily and shared between meshes with identical faces, so a flow that only
moves vertices never rebuilds it.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh",
    "MeshError",
    "MeshParseError",
    "MeshValidationError",
    "MeshQualityReport",
    "Topology",
    "load_mesh",
    "save_mesh",
    "make_icosphere",
    "make_torus",
    "make_revolution",
    "validate",
]

# faces with area below this fraction of bbox_diagonal**2 are rejected
DEGENERATE_AREA_FRACTION = 1e-14


class MeshError(ValueError):
    """Base class for mesh construction and I/O problems."""


class MeshParseError(MeshError):
    pass


class MeshValidationError(MeshError):
    """A mesh invariant is violated.

    ``kind`` is one of ``"index"``, ``"degenerate"``, ``"boundary"``,
    ``"nonmanifold"``, ``"orientation"``; ``simplex`` is the offending face
    index (or an edge as a vertex pair for edge problems).
    """

    def __init__(self, kind, simplex, message):
        super().__init__(message)
        self.kind = kind
        self.simplex = simplex


class Topology:
    """Connectivity data derived from a face array (positions are not used)."""

    def __init__(self, faces: np.ndarray, n_vertices: int):
        self.faces = faces
        self.n_vertices = n_vertices

    @cached_property
    def half_edges(self) -> np.ndarray:
        """(3F, 2) directed edges ``(f[k], f[k+1])`` in face order."""
        f = self.faces
        return np.stack(
            [f.ravel(), np.roll(f, -1, axis=1).ravel()], axis=1
        )

    @cached_property
    def edges(self) -> np.ndarray:
        """(E, 2) unique undirected edges with ``i < j``."""
        he = np.sort(self.half_edges, axis=1)
        return np.unique(he, axis=0)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e), dtype=np.int8)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """(V, F) vertex-face incidence; ``incidence @ q`` sums face values onto vertices."""
        nf = len(self.faces)
        rows = self.faces.T.ravel()
        cols = np.tile(np.arange(nf), 3)
        return sp.csr_matrix((np.ones(3 * nf), (rows, cols)), shape=(self.n_vertices, nf))

    @cached_property
    def edge_difference(self) -> sp.csr_matrix:
        """(E, V) operator ``u -> u[j] - u[i]`` for each edge ``(i, j)``."""
        e = self.edges
        ne = len(e)
        rows = np.concatenate([np.arange(ne), np.arange(ne)])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.concatenate([np.ones(ne), -np.ones(ne)])
        return sp.csr_matrix((data, (rows, cols)), shape=(ne, self.n_vertices))

    @cached_property
    def edge_difference_t(self) -> sp.csr_matrix:
        return self.edge_difference.T.tocsr()

    @cached_property
    def corner_edge(self) -> np.ndarray:
        """(3, F) index of the edge opposite each face corner."""
        c = self.corners
        j, l = c[[1, 2, 0]], c[[2, 0, 1]]
        n = np.int64(self.n_vertices)
        key = np.minimum(j, l).astype(np.int64) * n + np.maximum(j, l)
        e = self.edges.astype(np.int64)
        return np.searchsorted(e[:, 0] * n + e[:, 1], key)

    @cached_property
    def corners(self) -> np.ndarray:
        """(3, F) corner-major copy of the faces."""
        return np.ascontiguousarray(self.faces.T)

    @cached_property
    def two_ring(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded 2-ring neighbourhoods.

        Returns ``(index, mask)`` of shape ``(V, K)``; ``index[i, mask[i]]``
        are the vertices within two edges of ``i`` (excluding ``i``).
        """
        a = self.adjacency.astype(np.int32)
        r2 = (a + a @ a).tocsr()
        r2.setdiag(0)
        r2.eliminate_zeros()
        r2.sort_indices()
        counts = np.diff(r2.indptr)
        k = int(counts.max()) if len(counts) else 0
        index = np.zeros((self.n_vertices, k), dtype=np.int64)
        mask = np.arange(k)[None, :] < counts[:, None]
        index[mask] = r2.indices
        return index, mask


class Mesh:
    """Closed, consistently oriented triangle mesh in R^3.

    Faces are counterclockwise seen from outside, so face normals computed
    as ``(b - a) x (c - a)`` point outward. Arrays are read-only.
    """

    def __init__(self, vertices, faces, metadata=None, *, check=True, _topology=None):
        v = np.array(vertices, dtype=np.float64)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must have shape (F, 3), got {f.shape}")
        v.flags.writeable = False
        f.flags.writeable = False
        self.vertices = v
        self.faces = f
        self.metadata = dict(metadata or {})
        self._cache = {}  # position-dependent operators, see diffgeo
        if _topology is not None:
            self.topology = _topology
        else:
            self.topology = Topology(f, len(v))
        if check:
            _check_invariants(self)

    def __repr__(self):
        return f"Mesh(V={self.n_vertices}, F={self.n_faces})"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return self.topology.n_edges

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def genus(self) -> int:
        return 1 - self.euler_characteristic // 2

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity, new positions. Skips the connectivity checks."""
        return Mesh(vertices, self.faces, self.metadata, check=False, _topology=self.topology)

    def face_normals(self, normalize=True) -> np.ndarray:
        p = self.vertices[self.faces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        if normalize:
            n = n / np.linalg.norm(n, axis=1, keepdims=True)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def area(self) -> float:
        return float(np.sum(self.face_areas()))

    def edge_lengths(self) -> np.ndarray:
        e = self.topology.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(np.ptp(self.vertices.T, axis=1)))

    def transformed(self, rotation=None, translation=None, scale=1.0) -> "Mesh":
        v = scale * self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return self.with_vertices(v)


@dataclass(frozen=True)
class MeshQualityReport:
    min_edge_length: float
    max_edge_length: float
    min_face_area: float
    euler_characteristic: int
    genus: int
    orientation_consistent: bool
    manifold: bool


def _edge_problems(faces: np.ndarray, n_vertices: int):
    """Find boundary, non-manifold and orientation problems.

    Returns ``(kind, simplex, message)`` for the first problem found, or None.
    """
    if len(faces) == 0:
        return ("boundary", None, "mesh has no faces")
    if faces.min() < 0 or faces.max() >= n_vertices:
        bad = int(np.flatnonzero((faces < 0).any(1) | (faces >= n_vertices).any(1))[0])
        return ("index", bad, f"face {bad} references a vertex index outside [0, {n_vertices})")
    rep = np.flatnonzero((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2]))
    if len(rep):
        return ("degenerate", int(rep[0]), f"face {int(rep[0])} repeats a vertex")

    sorted_faces = np.sort(faces, axis=1)
    _, first, counts = np.unique(sorted_faces, axis=0, return_index=True, return_counts=True)
    if (counts > 1).any():
        dup = int(first[np.flatnonzero(counts > 1)[0]])
        return ("nonmanifold", dup, f"face {dup} is duplicated")

    he = np.stack([faces.ravel(), np.roll(faces, -1, axis=1).ravel()], axis=1)
    und = np.sort(he, axis=1)
    _, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    per_he = counts[inv]
    if (per_he == 1).any():
        k = int(np.flatnonzero(per_he == 1)[0])
        e = tuple(int(x) for x in he[k])
        return ("boundary", e, f"edge {e} of face {k // 3} is a boundary edge")
    if (per_he > 2).any():
        k = int(np.flatnonzero(per_he > 2)[0])
        e = tuple(int(x) for x in und[k])
        return ("nonmanifold", e, f"edge {e} is shared by {int(per_he[k])} faces")

    _, dcounts = np.unique(he, axis=0, return_inverse=False, return_counts=True)
    if (dcounts > 1).any():
        # a flipped face has all of its directed edges colliding with neighbours
        _, dinv, dcounts = np.unique(he, axis=0, return_inverse=True, return_counts=True)
        clash = (dcounts[dinv.ravel()] > 1).reshape(-1, 3).sum(axis=1)
        bad = int(np.argmax(clash))
        return ("orientation", bad, f"face {bad} is inconsistently oriented with its neighbours")
    return None


def _check_invariants(mesh: Mesh) -> None:
    problem = _edge_problems(mesh.faces, mesh.n_vertices)
    if problem is not None:
        raise MeshValidationError(*problem)
    areas = mesh.face_areas()
    tol = DEGENERATE_AREA_FRACTION * mesh.bbox_diagonal() ** 2
    if (areas <= tol).any():
        bad = int(np.flatnonzero(areas <= tol)[0])
        raise MeshValidationError("degenerate", bad, f"face {bad} is degenerate (area {areas[bad]:.3e})")


def validate(mesh: Mesh) -> MeshQualityReport:
    """Report mesh quality without raising."""
    faces, nv = mesh.faces, mesh.n_vertices
    problem = _edge_problems(faces, nv)
    manifold = problem is None or problem[0] == "orientation"
    orientation_ok = problem is None
    lengths = mesh.edge_lengths() if problem is None or problem[0] != "index" else np.array([np.nan])
    areas = mesh.face_areas() if problem is None or problem[0] != "index" else np.array([np.nan])
    chi = nv - len(np.unique(np.sort(np.stack(
        [faces.ravel(), np.roll(faces, -1, axis=1).ravel()], axis=1), axis=1), axis=0)) + len(faces)
    return MeshQualityReport(
        min_edge_length=float(lengths.min()),
        max_edge_length=float(lengths.max()),
        min_face_area=float(areas.min()),
        euler_characteristic=int(chi),
        genus=int(1 - chi // 2),
        orientation_consistent=bool(orientation_ok),
        manifold=bool(manifold),
    )


# ---------------------------------------------------------------------------
# generators


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v, f


def _subdivide(v, f):
    """Split every triangle into four, inserting one vertex per edge."""
    e = np.sort(np.stack([f, np.roll(f, -1, axis=1)], axis=2).reshape(-1, 2), axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    mid = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    m = (inv.ravel() + len(v)).reshape(-1, 3)  # midpoints of edges (a,b), (b,c), (c,a)
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    mab, mbc, mca = m[:, 0], m[:, 1], m[:, 2]
    nf = np.concatenate([
        np.stack([a, mab, mca], 1),
        np.stack([b, mbc, mab], 1),
        np.stack([c, mca, mbc], 1),
        np.stack([mab, mbc, mca], 1),
    ])
    return np.vstack([v, mid]), nf


def make_icosphere(radius: float = 1.0, subdivisions: int = 0) -> Mesh:
    """Subdivided icosahedron with every vertex projected to the sphere."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if subdivisions < 0:
        raise ValueError("subdivisions must be non-negative")
    v, f = _icosahedron()
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(int(subdivisions)):
        v, f = _subdivide(v, f)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return Mesh(radius * v, f, {"generator": "icosphere", "radius": radius,
                                "subdivisions": int(subdivisions)})


def _grid_faces(nu, nv, periodic_v=True):
    i, j = np.meshgrid(np.arange(nu), np.arange(nv if periodic_v else nv - 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    i1 = (i + 1) % nu
    j1 = (j + 1) % nv
    a, b, c, d = i * nv + j, i1 * nv + j, i1 * nv + j1, i * nv + j1
    return np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])


def make_torus(major_radius: float, minor_radius: float, res_major: int, res_minor: int) -> Mesh:
    """Torus of revolution about the z axis sampled on a ``res_major x res_minor`` grid.

    Vertex ``i * res_minor + j`` sits at major angle ``2 pi i / res_major`` and
    minor angle ``2 pi j / res_minor`` (minor angle 0 is the outer equator).
    """
    if not major_radius > minor_radius > 0:
        raise ValueError("need major_radius > minor_radius > 0, got "
                         f"{major_radius}, {minor_radius}")
    if res_major < 3 or res_minor < 3:
        raise ValueError(f"torus resolution must be >= 3, got {res_major}x{res_minor}")
    u = 2 * np.pi * np.arange(res_major) / res_major
    w = 2 * np.pi * np.arange(res_minor) / res_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    rho = major_radius + minor_radius * np.cos(ww)
    v = np.stack([rho * np.cos(uu), rho * np.sin(uu), minor_radius * np.sin(ww)], axis=-1).reshape(-1, 3)
    f = _grid_faces(res_major, res_minor)
    return Mesh(v, f, {"generator": "torus", "major_radius": major_radius,
                       "minor_radius": minor_radius, "res_major": res_major,
                       "res_minor": res_minor})


def make_revolution(profile, n_meridian: int, n_around: int) -> Mesh:
    """Closed genus-0 surface of revolution about the z axis.

    ``profile(s)`` maps ``s`` in ``[0, 1]`` to ``(rho, z)`` with ``rho`` zero
    only at the two ends (the poles). ``n_meridian`` interior rings are used.
    """
    s = (np.arange(n_meridian) + 1.0) / (n_meridian + 1.0)
    rho, z = (np.asarray(a, dtype=float) for a in profile(s))
    _, z0 = profile(np.array([0.0]))
    _, z1 = profile(np.array([1.0]))
    phi = 2 * np.pi * np.arange(n_around) / n_around
    ring = np.stack([rho[:, None] * np.cos(phi), rho[:, None] * np.sin(phi),
                     np.broadcast_to(z[:, None], (n_meridian, n_around))], axis=-1).reshape(-1, 3)
    south = [0.0, 0.0, float(np.ravel(z0)[0])]
    north = [0.0, 0.0, float(np.ravel(z1)[0])]
    v = np.vstack([ring, [south, north]])
    r, k = np.meshgrid(np.arange(n_meridian - 1), np.arange(n_around), indexing="ij")
    r, k = r.ravel(), k.ravel()
    k1 = (k + 1) % n_around
    a, b, c, d = r * n_around + k, r * n_around + k1, (r + 1) * n_around + k1, (r + 1) * n_around + k
    ids = np.arange(n_around)
    s_idx, n_idx = n_meridian * n_around, n_meridian * n_around + 1
    top = (n_meridian - 1) * n_around
    f = np.vstack([
        np.stack([np.full(n_around, s_idx), (ids + 1) % n_around, ids], axis=1),
        np.stack([a, b, c], 1),
        np.stack([a, c, d], 1),
        np.stack([np.full(n_around, n_idx), top + ids, top + (ids + 1) % n_around], axis=1),
    ])
    return Mesh(v, f, {"generator": "revolution"})


# ---------------------------------------------------------------------------
# I/O

_FORMATS = ("OFF", "OBJ")


def _format_of(path, fmt):
    if fmt is None:
        fmt = Path(path).suffix.lstrip(".")
    fmt = str(fmt).upper()
    if fmt not in _FORMATS:
        raise ValueError(f"unsupported mesh format {fmt!r}; expected one of {_FORMATS}")
    return fmt


def _read_off(text):
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines or not lines[0].startswith("OFF"):
        raise MeshParseError("missing OFF header")
    head = lines[0][3:].split()
    body = lines[1:]
    if not head:
        if not body:
            raise MeshParseError("missing OFF counts line")
        head, body = body[0].split(), body[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
    except (IndexError, ValueError) as exc:
        raise MeshParseError(f"bad OFF counts line: {' '.join(head)!r}") from exc
    if len(body) < nv + nf:
        raise MeshParseError(f"OFF file truncated: expected {nv} vertices and {nf} faces")
    try:
        verts = [[float(x) for x in body[k].split()[:3]] for k in range(nv)]
    except ValueError as exc:
        raise MeshParseError(f"bad OFF vertex line: {exc}") from exc
    faces = []
    for k in range(nf):
        tok = body[nv + k].split()
        if not tok or tok[0] != "3" or len(tok) < 4:
            raise MeshParseError(f"face {k} is not a triangle: {body[nv + k]!r}")
        faces.append([int(t) for t in tok[1:4]])
    if any(len(v) != 3 for v in verts):
        raise MeshParseError("vertex line with fewer than 3 coordinates")
    return verts, faces


def _read_obj(text):
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        try:
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
                if len(verts[-1]) != 3:
                    raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                if len(idx) != 3:
                    raise MeshParseError(f"line {lineno}: face {len(faces)} is not a triangle")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
        except ValueError as exc:
            raise MeshParseError(f"line {lineno}: {exc}") from exc
    return verts, faces


def load_mesh(path, format=None) -> Mesh:
    """Read an ASCII OFF or OBJ triangle mesh and validate it."""
    fmt = _format_of(path, format)
    text = Path(path).read_text()
    verts, faces = (_read_off if fmt == "OFF" else _read_obj)(text)
    if not verts or not faces:
        raise MeshParseError("mesh file has no vertices or no faces")
    bad = [k for k, v in enumerate(verts) if not all(math.isfinite(x) for x in v)]
    if bad:
        raise MeshParseError(f"vertex {bad[0]} has a non-finite coordinate")
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3),
                {"source": str(path)})


def save_mesh(mesh: Mesh, path, format=None) -> None:
    """Write ``mesh`` as ASCII OFF or OBJ with 17 significant digits."""
    fmt = _format_of(path, format)
    lines = []
    if fmt == "OFF":
        lines.append("OFF")
        lines.append(f"{mesh.n_vertices} {mesh.n_faces} {mesh.n_edges}")
        lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
        lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    else:
        lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    with open(os.fspath(path), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
