"""Closed-form parametrized surfaces with finite-difference tensor calculus.

Each catalogue surface is a chart ``(u, v) -> R^3`` sampled on a uniform
grid. ``v`` is always periodic; ``u`` is periodic for the torus and is the
polar angle (restricted to the band ``|cos u| <= 0.95``) for the sphere and
the ellipsoid, which carry a second chart with the poles on the x axis so
the two bands cover the whole surface.

All derivatives are centred finite differences of a chosen even order
applied with periodic shifts. In the non-periodic direction the grid is
padded with ghost nodes (the closed-form chart is analytic beyond the
band); shifted-in garbage never reaches band nodes because the ghost layer
is as deep as the longest derivative chain.

Index conventions: tensors are stored with trailing axes of length 2, e.g.
``A[..., i, j]`` and ``nablaA[..., k, i, j] = nabla_k A_ij``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ParametricSurface",
    "TensorGrid",
    "GridTooCoarse",
    "sphere",
    "torus",
    "ellipsoid",
    "fundamental_forms",
    "codazzi_residual",
    "simons_residual",
    "hessian_asymmetry",
    "willmore_energy_exact",
    "willmore_energy_density_torus",
    "first_variation_parametric",
    "convergence_orders",
    "dump_residual_csv",
]

POLAR_BAND = 0.95  # |cos u| bound of the reported band on polar charts
# derivative chains used below: chart -> (g, A, Gamma) -> nabla A -> nabla^2 A
_CHAIN_DEPTH = 3

_D1 = {
    2: [1 / 2],
    4: [2 / 3, -1 / 12],
    6: [3 / 4, -3 / 20, 1 / 60],
    8: [4 / 5, -1 / 5, 4 / 105, -1 / 280],
}
_D2 = {
    2: (-2.0, [1.0]),
    4: (-5 / 2, [4 / 3, -1 / 12]),
    6: (-49 / 18, [3 / 2, -3 / 20, 1 / 90]),
    8: (-205 / 72, [8 / 5, -1 / 5, 8 / 315, -1 / 560]),
}


class GridTooCoarse(ValueError):
    """The FD stencil does not fit the period or reaches a chart pole."""


# ---------------------------------------------------------------------------
# catalogue


def _polar(u, v):
    s = np.sin(u)
    return s * np.cos(v), s * np.sin(v), np.cos(u)


def _chart_sphere(params, chart, u, v):
    (r,) = params
    return _chart_ellipsoid((r, r, r), chart, u, v)


def _chart_ellipsoid(params, chart, u, v):
    a, b, c = params
    x, y, z = _polar(u, v)
    if chart == 1:
        # cyclic permutation (det +1) puts the poles on the x axis
        x, y, z = z, x, y
    return np.stack([a * x, b * y, c * z], axis=-1)


def _chart_torus(params, chart, u, v):
    R, a = params
    rho = R + a * np.cos(v)
    return np.stack([rho * np.cos(u), rho * np.sin(u), a * np.sin(v)], axis=-1)


_CATALOGUE = {
    "sphere": (_chart_sphere, 1, False),
    "ellipsoid": (_chart_ellipsoid, 3, False),
    "torus": (_chart_torus, 2, True),
}


@dataclass(frozen=True)
class ParametricSurface:
    """A catalogue surface with grid resolution and FD order.

    For ``torus`` the chart variables are (major angle, minor angle); the
    minor angle 0 is the outer equator. For ``sphere``/``ellipsoid`` they are
    (polar angle, azimuth).
    """

    kind: str
    params: tuple
    resolution: tuple = (64, 64)
    order: int | tuple = 6
    chart: int = 0

    def __post_init__(self):
        if self.kind not in _CATALOGUE:
            raise ValueError(f"unknown surface {self.kind!r}")
        if len(self.params) != _CATALOGUE[self.kind][1]:
            raise ValueError(f"{self.kind} takes {_CATALOGUE[self.kind][1]} parameters")
        if any(o not in _D1 for o in self.orders):
            raise ValueError(f"FD order must be one of {sorted(_D1)}")
        if any(p <= 0 for p in self.params):
            raise ValueError("surface parameters must be positive")
        if self.kind == "torus" and not self.params[0] > self.params[1]:
            raise ValueError("torus needs R > a")

    @property
    def orders(self) -> tuple:
        """FD order per chart direction ``(u, v)``."""
        if np.isscalar(self.order):
            return (int(self.order), int(self.order))
        return tuple(int(o) for o in self.order)

    @property
    def periodic_u(self) -> bool:
        return _CATALOGUE[self.kind][2]

    @property
    def n_charts(self) -> int:
        return 1 if self.periodic_u else 2

    def position(self, u, v, chart=None):
        fn = _CATALOGUE[self.kind][0]
        return fn(self.params, self.chart if chart is None else chart, np.asarray(u, float), np.asarray(v, float))

    def with_resolution(self, resolution) -> "ParametricSurface":
        if np.isscalar(resolution):
            resolution = (int(resolution), int(resolution))
        return replace(self, resolution=tuple(resolution))

    def charts(self):
        return [replace(self, chart=c) for c in range(self.n_charts)]


# On polar charts the azimuthal spacing is about 2.5x the band spacing, so a
# two-step-higher stencil there balances the two truncation errors.
_POLAR_ORDER = (6, 8)


def sphere(r=1.0, resolution=64, order=_POLAR_ORDER) -> ParametricSurface:
    return ParametricSurface("sphere", (float(r),), _res(resolution), order)


def ellipsoid(a, b, c, resolution=64, order=_POLAR_ORDER) -> ParametricSurface:
    return ParametricSurface("ellipsoid", (float(a), float(b), float(c)), _res(resolution), order)


def torus(R, a, resolution=64, order=6) -> ParametricSurface:
    return ParametricSurface("torus", (float(R), float(a)), _res(resolution), order)


def _res(resolution):
    if np.isscalar(resolution):
        return (int(resolution), int(resolution))
    return tuple(int(r) for r in resolution)


# ---------------------------------------------------------------------------
# grids and FD


@dataclass
class TensorGrid:
    """Tensor components on the reported grid nodes.

    ``values`` has shape ``(Nu, Nv) + (2,) * rank`` (or a trailing 3 for
    ambient vectors). ``kind`` is a short description such as ``"(0,2)"``.
    """

    values: np.ndarray
    kind: str
    label: str = ""
    u: np.ndarray | None = None
    v: np.ndarray | None = None


class _Grid:
    def __init__(self, surface: ParametricSurface):
        self.s = surface
        nu, nv = surface.resolution
        self.orders = surface.orders
        k, kv = (o // 2 for o in self.orders)
        if nv <= 2 * kv + 1 or (surface.periodic_u and nu <= 2 * k + 1):
            raise GridTooCoarse(f"resolution {surface.resolution} too small for order {surface.order}")
        self.hv = 2 * np.pi / nv
        self.v = self.hv * np.arange(nv)
        if surface.periodic_u:
            self.hu = 2 * np.pi / nu
            self.u = self.hu * np.arange(nu)
            self.ghost = 0
            self.band = slice(None)
        else:
            lo = np.arccos(POLAR_BAND)
            self.hu = (np.pi - 2 * lo) / (nu - 1)
            g = _CHAIN_DEPTH * k
            # first-level tensors are needed (2k nodes out) away from the poles
            if lo - (_CHAIN_DEPTH - 1) * k * self.hu < 0.1 * lo:
                raise GridTooCoarse(
                    f"resolution {nu} in the polar direction is too coarse for order {surface.order}")
            self.u = lo + self.hu * np.arange(-g, nu + g)
            self.ghost = g
            self.band = slice(g, g + nu)
        self.U, self.V = np.meshgrid(self.u, self.v, indexing="ij")

    def d(self, a, axis):
        h = self.hu if axis == 0 else self.hv
        out = np.zeros_like(a)
        for j, c in enumerate(_D1[self.orders[axis]], 1):
            out += c * (np.roll(a, -j, axis=axis) - np.roll(a, j, axis=axis))
        return out / h

    def d2(self, a, axis):
        h = self.hu if axis == 0 else self.hv
        c0, cs = _D2[self.orders[axis]]
        out = c0 * a
        for j, c in enumerate(cs, 1):
            out = out + c * (np.roll(a, -j, axis=axis) + np.roll(a, j, axis=axis))
        return out / (h * h)

    def grad(self, a):
        """Stack partial derivatives as a new axis placed right after the grid axes."""
        return np.stack([self.d(a, 0), self.d(a, 1)], axis=2)

    def crop(self, a):
        return a[self.band]


@dataclass
class _Forms:
    grid: _Grid
    f: np.ndarray
    df: np.ndarray   # (..., i, 3)
    ddf: np.ndarray  # (..., i, j, 3)
    g: np.ndarray
    ginv: np.ndarray
    nu: np.ndarray
    A: np.ndarray
    gamma: np.ndarray  # (..., k, i, j) = Gamma^k_ij
    H: np.ndarray
    extras: dict = field(default_factory=dict)


def _forms(surface: ParametricSurface) -> _Forms:
    G = _Grid(surface)
    f = surface.position(G.U, G.V)
    fu, fv = G.d(f, 0), G.d(f, 1)
    fuu, fvv = G.d2(f, 0), G.d2(f, 1)
    fuv = G.d(fv, 0)
    df = np.stack([fu, fv], axis=2)
    ddf = np.stack([np.stack([fuu, fuv], 2), np.stack([fuv, fvv], 2)], axis=2)
    g = np.einsum("...ic,...jc->...ij", df, df)
    with np.errstate(divide="ignore", invalid="ignore"):
        ginv = _inv2(g)
        n = np.cross(fu, fv)
        nu = n / np.linalg.norm(n, axis=-1, keepdims=True)
    A = np.einsum("...ijc,...c->...ij", ddf, nu)
    gamma = np.einsum("...kl,...ijc,...lc->...kij", ginv, ddf, df)
    H = np.einsum("...ij,...ij->...", ginv, A)
    return _Forms(G, f, df, ddf, g, ginv, nu, A, gamma, H)


def _inv2(g):
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    inv = np.stack([np.stack([g[..., 1, 1], -g[..., 0, 1]], -1),
                    np.stack([-g[..., 1, 0], g[..., 0, 0]], -1)], -2)
    return inv / det[..., None, None]


def _check_immersion(F: _Forms):
    ev = np.linalg.eigvalsh(F.grid.crop(F.g))
    if not ev.min() > 1e-10:
        raise ValueError("chart is not an immersion on the grid (metric degenerate)")


def fundamental_forms(surface: ParametricSurface):
    """Metric, second fundamental form and unit normal on the reported grid.

    Returns ``(g, A, nu)`` as :class:`TensorGrid` objects; with outward
    normals a sphere of radius r gives ``A = -g / r``.
    """
    F = _forms(surface)
    _check_immersion(F)
    G = F.grid
    u = G.u[G.band]
    return (
        TensorGrid(G.crop(F.g), "(0,2)", "g", u, G.v),
        TensorGrid(G.crop(F.A), "(0,2)", "A", u, G.v),
        TensorGrid(G.crop(F.nu), "vector", "nu", u, G.v),
    )


def _covariant_derivative_02(G, T, gamma):
    """nabla_k T_ij for a (0,2) tensor field: result[..., k, i, j]."""
    dT = G.grad(T)
    return (dT
            - np.einsum("...mki,...mj->...kij", gamma, T)
            - np.einsum("...mkj,...im->...kij", gamma, T))


def _covariant_derivative_03(G, T, gamma):
    """nabla_l T_kij for a (0,3) tensor field: result[..., l, k, i, j]."""
    dT = G.grad(T)
    return (dT
            - np.einsum("...mlk,...mij->...lkij", gamma, T)
            - np.einsum("...mli,...kmj->...lkij", gamma, T)
            - np.einsum("...mlj,...kim->...lkij", gamma, T))


def _hessian_scalar(G, H, gamma):
    dH = G.grad(H)
    ddH = np.stack([G.grad(dH[:, :, 0]), G.grad(dH[:, :, 1])], axis=2)  # [..., i, j] = d_j d_i H
    return ddH - np.einsum("...kij,...k->...ij", gamma, dH)


def _codazzi_grid(F: _Forms) -> np.ndarray:
    nA = _covariant_derivative_02(F.grid, F.A, F.gamma)
    F.extras["nabla_A"] = nA
    diff = nA - np.swapaxes(nA, 2, 3)  # nabla_i A_jk - nabla_j A_ik
    return np.abs(diff).reshape(diff.shape[:2] + (-1,)).max(axis=-1)


def codazzi_residual(surface: ParametricSurface, return_grid=False):
    """Max-norm of ``nabla_i A_jk - nabla_j A_ik`` over the band(s)."""
    best, grids = 0.0, []
    for s in surface.charts():
        F = _forms(s)
        _check_immersion(F)
        r = F.grid.crop(_codazzi_grid(F))
        grids.append((F.grid.u[F.grid.band], F.grid.v, r))
        best = max(best, float(r.max()))
    return (best, grids) if return_grid else best


def _simons_grid(F: _Forms) -> np.ndarray:
    G = F.grid
    nA = _covariant_derivative_02(G, F.A, F.gamma)
    nnA = _covariant_derivative_03(G, nA, F.gamma)  # [..., l, k, i, j]
    lapA = np.einsum("...lk,...lkij->...ij", F.ginv, nnA)
    hessH = _hessian_scalar(G, F.H, F.gamma)
    AgA = np.einsum("...il,...lm,...mj->...ij", F.A, F.ginv, F.A)
    a2 = np.einsum("...ij,...ik,...jl,...kl->...", F.A, F.ginv, F.ginv, F.A)
    rhs = hessH + F.H[..., None, None] * AgA - a2[..., None, None] * F.A
    F.extras["hess_H"] = hessH
    d = lapA - rhs
    return np.abs(d).reshape(d.shape[:2] + (-1,)).max(axis=-1)


def simons_residual(surface: ParametricSurface, return_grid=False):
    """Max-norm of ``Delta A_ij - nabla_ij H - H A_il g^lm A_mj + |A|^2 A_ij``."""
    best, grids = 0.0, []
    for s in surface.charts():
        F = _forms(s)
        _check_immersion(F)
        r = F.grid.crop(_simons_grid(F))
        grids.append((F.grid.u[F.grid.band], F.grid.v, r))
        best = max(best, float(r.max()))
    return (best, grids) if return_grid else best


def hessian_asymmetry(surface: ParametricSurface) -> float:
    """Max-norm of the antisymmetric part of the FD Hessian of H.

    For a scalar the Ricci commutator term vanishes, so this measures only
    FD inconsistency between mixed partials.
    """
    best = 0.0
    for s in surface.charts():
        F = _forms(s)
        h = F.grid.crop(_hessian_scalar(F.grid, F.H, F.gamma))
        best = max(best, float(np.abs(h[..., 0, 1] - h[..., 1, 0]).max()))
    return best


def convergence_orders(residual_fn, surface: ParametricSurface, resolutions):
    """Residuals at each resolution and the observed orders between neighbours."""
    res = [residual_fn(surface.with_resolution(n)) for n in resolutions]
    orders = [float(np.log2(res[i] / res[i + 1])) for i in range(len(res) - 1)]
    return res, orders


def dump_residual_csv(path, grids) -> None:
    """Write ``(u, v, residual)`` rows for the grids returned with ``return_grid=True``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v", "residual"])
        for u, v, r in grids:
            for i, ui in enumerate(u):
                for j, vj in enumerate(v):
                    w.writerow([repr(float(ui)), repr(float(vj)), repr(float(r[i, j]))])


# ---------------------------------------------------------------------------
# pointwise jets and quadrature

_JET_STEP = 1e-2


def _jet(fn, U, V, delta=_JET_STEP, order=6):
    """Value, first and second partials of ``fn(U, V)`` by local centred FD."""
    c1 = _D1[order]
    c0, c2 = _D2[order]
    f0 = fn(U, V)
    fu = sum(c * (fn(U + j * delta, V) - fn(U - j * delta, V)) for j, c in enumerate(c1, 1)) / delta
    fv = sum(c * (fn(U, V + j * delta) - fn(U, V - j * delta)) for j, c in enumerate(c1, 1)) / delta
    fuu = (c0 * f0 + sum(c * (fn(U + j * delta, V) + fn(U - j * delta, V)) for j, c in enumerate(c2, 1))) / delta ** 2
    fvv = (c0 * f0 + sum(c * (fn(U, V + j * delta) + fn(U, V - j * delta)) for j, c in enumerate(c2, 1))) / delta ** 2
    fuv = 0.0
    for i, ci in enumerate(c1, 1):
        for j, cj in enumerate(c1, 1):
            fuv = fuv + ci * cj * (fn(U + i * delta, V + j * delta) - fn(U + i * delta, V - j * delta)
                                   - fn(U - i * delta, V + j * delta) + fn(U - i * delta, V - j * delta))
    fuv = fuv / delta ** 2
    return f0, (fu, fv), ((fuu, fuv), (fuv, fvv))


def _orientation(U, polar):
    """+-1 making the chart normal outward; a polar chart flips orientation
    when a stencil reaches past a pole (sin u < 0)."""
    return np.sign(np.sin(U)) if polar else 1.0


def _geometry_at(chart, U, V, polar=False):
    """Pointwise g, A, H, |A|^2, C(A), normal, Christoffels and area element."""
    _, (fu, fv), ((fuu, fuv), (_, fvv)) = _jet(chart, U, V)
    df = np.stack([fu, fv], axis=-2)
    ddf = np.stack([np.stack([fuu, fuv], -2), np.stack([fuv, fvv], -2)], axis=-3)
    g = np.einsum("...ic,...jc->...ij", df, df)
    ginv = _inv2(g)
    n = np.cross(fu, fv)
    area = np.linalg.norm(n, axis=-1)
    nu = n * (_orientation(U, polar) / area)[..., None]
    A = np.einsum("...ijc,...c->...ij", ddf, nu)
    S = np.einsum("...ik,...kj->...ij", ginv, A)  # g^-1 A, eigenvalues = principal curvatures
    H = np.trace(S, axis1=-2, axis2=-1)
    SS = S @ S
    a2 = np.trace(SS, axis1=-2, axis2=-1)
    cubic = np.trace(SS @ S, axis1=-2, axis2=-1)
    gamma = np.einsum("...kl,...ijc,...lc->...kij", ginv, ddf, df)
    return dict(g=g, ginv=ginv, nu=nu, A=A, H=H, a2=a2, cubic=cubic, gamma=gamma, area=area)


def _quadrature(surface: ParametricSurface, n_u=None, n_v=None):
    """Nodes and weights covering the whole surface with one chart."""
    nu, nv = surface.resolution
    n_u = n_u or nu
    n_v = n_v or nv
    v = 2 * np.pi * np.arange(n_v) / n_v
    wv = np.full(n_v, 2 * np.pi / n_v)
    if surface.periodic_u:
        u = 2 * np.pi * np.arange(n_u) / n_u
        wu = np.full(n_u, 2 * np.pi / n_u)
    else:
        x, w = np.polynomial.legendre.leggauss(n_u)
        u = 0.5 * np.pi * (x + 1)
        wu = 0.5 * np.pi * w
    U, V = np.meshgrid(u, v, indexing="ij")
    return U, V, np.outer(wu, wv)


def willmore_energy_exact(surface: ParametricSurface, n_u=None, n_v=None) -> float:
    """``(1/2) int |A|^2 dmu`` by Gauss-Legendre (polar) or trapezoid (periodic) quadrature."""
    U, V, W = _quadrature(surface, n_u, n_v)
    geo = _geometry_at(lambda a, b: surface.position(a, b, chart=0), U, V, not surface.periodic_u)
    return float(0.5 * np.sum(W * geo["a2"] * geo["area"]))


def willmore_energy_density_torus(R, a, n=4096) -> float:
    """Independent 1-D oracle: ``(1/2) int |A|^2`` for the torus of revolution.

    Principal curvatures ``-1/a`` and ``-cos t / (R + a cos t)`` with
    ``dmu = a (R + a cos t) dt dphi``; the azimuth integrates to ``2 pi``.
    """
    t = 2 * np.pi * np.arange(n) / n
    rho = R + a * np.cos(t)
    dens = (1 / a ** 2 + (np.cos(t) / rho) ** 2) * a * rho
    return float(0.5 * 2 * np.pi * dens.mean() * 2 * np.pi)


def first_variation_parametric(surface: ParametricSurface, phi, h_fd=1e-4, n_u=48, n_v=48):
    """Compare the FD derivative of the Willmore energy along ``phi * nu``
    with ``int phi (Delta H - |A|^2 H / 2 + C(A)) dmu``.

    ``phi(u, v)`` is a smooth function on the chart. Returns
    ``(fd, formula, scale)`` where ``scale = int |phi| (|Delta H| +
    |H||A|^2/2 + |C(A)|) dmu`` is the size of the integrand terms.
    """
    chart = lambda a, b: surface.position(a, b, chart=0)  # noqa: E731
    polar = not surface.periodic_u
    U, V, W = _quadrature(surface, n_u, n_v)

    def normal(a, b):
        _, (fu, fv), _ = _jet(chart, a, b)
        n = np.cross(fu, fv)
        return n * (_orientation(a, polar) / np.linalg.norm(n, axis=-1))[..., None]

    def energy(h):
        moved = lambda a, b: chart(a, b) + h * np.asarray(phi(a, b))[..., None] * normal(a, b)  # noqa: E731
        geo = _geometry_at(moved, U, V, polar)
        return 0.5 * np.sum(W * geo["a2"] * geo["area"])

    fd = (energy(h_fd) - energy(-h_fd)) / (2 * h_fd)

    def mean_curv(a, b):
        return _geometry_at(chart, a, b, polar)["H"][..., None]

    geo = _geometry_at(chart, U, V, polar)
    Hv, (Hu, Hvv_), ((Huu, Huv), (_, Hvv)) = _jet(mean_curv, U, V, delta=5e-2)
    dH = np.stack([Hu[..., 0], Hvv_[..., 0]], axis=-1)
    ddH = np.stack([np.stack([Huu[..., 0], Huv[..., 0]], -1), np.stack([Huv[..., 0], Hvv[..., 0]], -1)], -2)
    hess = ddH - np.einsum("...kij,...k->...ij", geo["gamma"], dH)
    lapH = np.einsum("...ij,...ij->...", geo["ginv"], hess)
    p = np.asarray(phi(U, V), dtype=float)
    integrand = lapH - 0.5 * geo["a2"] * geo["H"] + geo["cubic"]
    formula = np.sum(W * geo["area"] * p * integrand)
    scale = np.sum(W * geo["area"] * np.abs(p) * (np.abs(lapH) + 0.5 * np.abs(geo["H"]) * geo["a2"]
                                                  + np.abs(geo["cubic"])))
    return float(fd), float(formula), float(scale)
