"""Sobolev and Gagliardo-Nirenberg ratios on round spheres and on meshes.

A latitudinal function ``u(theta)`` on the round sphere ``S^n(r)`` reduces
every integral to one dimension::

    dmu = r^n sin^{n-1}(theta) omega_{n-1} dtheta
    |grad u|^2 = u'^2 / r^2
    |Hess u|^2 = (u''^2 + (n-1) (cot(theta) u')^2) / r^4

and ``|H| = n / r``. Each check returns ``lhs``, ``rhs`` (without the
unknown constant) and their ratio; the constants themselves are only ever
reported, never asserted.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.special import gamma as gamma_fn

from .diffgeo import CurvatureField, gradient
from .mesh import Mesh

__all__ = [
    "INEQUALITY_IDS",
    "MIN_RESOLUTION",
    "ResolutionError",
    "InequalityError",
    "LatitudinalFunction",
    "SphereIntegrals",
    "InequalityResult",
    "InequalityReport",
    "sphere_area",
    "full_sphere_h_integral",
    "cap_bump",
    "sphere_integrals",
    "check_ms",
    "check_gn1",
    "check_gn2",
    "check_gne",
    "check_ms_on_mesh",
    "run_family",
    "write_report_csv",
    "format_report",
]

INEQUALITY_IDS = ("MS-p1", "MS-p", "GN1", "GN2", "GNe")
MIN_RESOLUTION = 256
RHS_FLOOR = 1e-300
# derivative norms this far below the function's own scale count as zero
_DERIVATIVE_FLOOR = 1e-20
DEFAULT_EPS_FRACTION = 0.25


class ResolutionError(ValueError):
    """The theta grid cannot resolve the function (non-smooth at a pole)."""


class InequalityError(ArithmeticError):
    """Right-hand side vanished for a function satisfying the hypothesis."""


def sphere_area(n: int) -> float:
    """Area ``omega_n`` of the unit n-sphere in ``R^{n+1}``."""
    return 2 * math.pi ** ((n + 1) / 2) / gamma_fn((n + 1) / 2)


def full_sphere_h_integral(n: int) -> float:
    """``int_{S^n(r)} |H|^n dmu = n^n omega_n`` (independent of r)."""
    return n ** n * sphere_area(n)


@dataclass(frozen=True)
class LatitudinalFunction:
    """Samples of ``u(theta)`` on the uniform grid ``theta_j = j pi / N``.

    ``u`` has ``N + 1`` entries (both poles included). ``theta0`` is the
    support cap angle; ``u`` must vanish exactly for ``theta >= theta0``
    unless ``theta0 = pi`` (support is the whole sphere).
    """

    n: int
    r: float
    u: np.ndarray
    theta0: float = math.pi

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        object.__setattr__(self, "u", u)
        if self.n < 2:
            raise ValueError("dimension n must be >= 2")
        if not self.r > 0:
            raise ValueError("radius must be positive")
        if u.ndim != 1 or len(u) - 1 < MIN_RESOLUTION:
            raise ValueError(f"need at least {MIN_RESOLUTION} grid intervals")
        if (len(u) - 1) % 2:
            raise ValueError("the number of grid intervals must be even (Simpson quadrature)")
        if not np.all(np.isfinite(u)):
            raise ValueError("samples must be finite")
        if not 0 < self.theta0 <= math.pi:
            raise ValueError("theta0 must lie in (0, pi]")
        outside = self.theta >= self.theta0
        if self.theta0 < math.pi and np.any(u[outside] != 0):
            raise ValueError("u must vanish for theta >= theta0")

    @property
    def resolution(self) -> int:
        return len(self.u) - 1

    @property
    def theta(self) -> np.ndarray:
        return np.linspace(0.0, math.pi, len(self.u))

    @classmethod
    def from_callable(cls, fn, n: int, r: float = 1.0, theta0: float = math.pi,
                      resolution: int = 4096) -> "LatitudinalFunction":
        th = np.linspace(0.0, math.pi, resolution + 1)
        inside = th < theta0 if theta0 < math.pi else np.ones_like(th, dtype=bool)
        u = np.where(inside, np.asarray(fn(th), dtype=np.float64) * np.ones_like(th), 0.0)
        return cls(n, r, u, theta0)

    def scaled(self, amplitude: float) -> "LatitudinalFunction":
        return LatitudinalFunction(self.n, self.r, amplitude * self.u, self.theta0)

    def dilated(self, r: float) -> "LatitudinalFunction":
        """Same angular profile on a sphere of radius ``r``."""
        return LatitudinalFunction(self.n, r, self.u, self.theta0)

    def refined(self, fn) -> "LatitudinalFunction":
        """Resample ``fn`` on a grid twice as fine."""
        return LatitudinalFunction.from_callable(fn, self.n, self.r, self.theta0, 2 * self.resolution)


def cap_bump(n: int, theta0: float, r: float = 1.0, amplitude: float = 1.0,
             poly=(1.0,), resolution: int = 4096) -> LatitudinalFunction:
    """``a P(cos theta) exp(1 - 1/(1 - (theta/theta0)^2))`` on the cap ``theta < theta0``.

    ``poly`` holds the coefficients of ``P`` in increasing degree. The
    bump is even about the pole, so ``cot(theta) u'`` stays finite.
    """
    return LatitudinalFunction.from_callable(_bump_fn(theta0, amplitude, poly), n, r, theta0, resolution)


def _bump_fn(theta0, amplitude=1.0, poly=(1.0,)):
    def fn(th):
        x = np.clip(th / theta0, 0.0, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            b = np.where(x < 1, np.exp(1 - 1 / (1 - x * x)), 0.0)
        return amplitude * np.polynomial.polynomial.polyval(np.cos(th), poly) * b
    return fn


# ---------------------------------------------------------------------------
# quadrature and derivatives


def _pad_even(u):
    # reflection u(-t) = u(t) at theta = 0 and u(pi + t) = u(pi - t) at theta = pi
    return np.concatenate([u[2:0:-1], u, u[-2:-4:-1]])


def _derivatives(u, h):
    p = _pad_even(u)
    d1 = (8 * (p[3:-1] - p[1:-3]) - (p[4:] - p[:-4])) / (12 * h)
    d2 = (-(p[4:] + p[:-4]) + 16 * (p[3:-1] + p[1:-3]) - 30 * p[2:-2]) / (12 * h * h)
    return d1, d2


def _one_sided_slope(u, h):
    return (-25 * u[0] + 48 * u[1] - 36 * u[2] + 16 * u[3] - 3 * u[4]) / (12 * h)


def _check_poles(fn: LatitudinalFunction, d1):
    h = math.pi / fn.resolution
    scale = max(float(np.max(np.abs(d1))), float(np.max(np.abs(fn.u))), 1e-300)
    for name, seg in (("theta=0", fn.u), ("theta=pi", fn.u[::-1])):
        if abs(_one_sided_slope(seg, h)) > 1e-4 * scale:
            raise ResolutionError(
                f"u has nonzero slope at {name}: cot(theta) terms are singular there")


@dataclass(frozen=True)
class SphereIntegrals:
    lp: dict  # p -> int |u|^p dmu
    grad_l1: float  # int |grad u| dmu
    grad_l2: float  # int |grad u|^2 dmu
    hess_l2: float  # int |Hess u|^2 dmu
    h_support: float  # int_{u != 0} |H|^n dmu
    grad_lp: dict = field(default_factory=dict)  # p -> int |grad u|^p dmu
    h_lp: dict = field(default_factory=dict)  # p -> int |H|^p |u|^p dmu


def sphere_integrals(fn: LatitudinalFunction, powers=(2,), grad_powers=()) -> SphereIntegrals:
    """Norms of a latitudinal function by 4th-order FD and Simpson quadrature."""
    n, r = fn.n, fn.r
    th = fn.theta
    h = math.pi / fn.resolution
    u = fn.u
    d1, d2 = _derivatives(u, h)
    _check_poles(fn, d1)
    s = np.sin(th)
    s[[0, -1]] = 0.0
    w = r ** n * sphere_area(n - 1) * s ** (n - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ct = np.where(s > 0, np.cos(th) / s, 0.0) * d1
    # limit of cot(theta) u' at the poles is u'' (the weight vanishes there anyway)
    ct[0], ct[-1] = d2[0], d2[-1]
    grad = np.abs(d1) / r
    hess2 = (d2 ** 2 + (n - 1) * ct ** 2) / r ** 4

    def integ(f):
        return float(simpson(f * w, x=th))

    au = np.abs(u)
    lp = {p: integ(au ** p) for p in powers}
    H = n / r
    # the support is the cap theta < theta0 (|H| is constant on the sphere)
    if not np.any(u != 0):
        h_support = 0.0
    elif fn.theta0 < math.pi:
        h_support = H ** n * _cap_volume(n, r, fn.theta0)
    else:
        h_support = full_sphere_h_integral(n)
    return SphereIntegrals(
        lp=lp,
        grad_l1=integ(grad),
        grad_l2=integ(grad ** 2),
        hess_l2=integ(hess2),
        h_support=h_support,
        grad_lp={p: integ(grad ** p) for p in grad_powers},
        h_lp={p: integ((H * au) ** p) for p in grad_powers},
    )


def _cap_volume(n, r, theta0, m=4097):
    t = np.linspace(0.0, theta0, m)
    return r ** n * sphere_area(n - 1) * float(simpson(np.sin(t) ** (n - 1), x=t))


# ---------------------------------------------------------------------------
# ratio checks


@dataclass(frozen=True)
class InequalityResult:
    inequality_id: str
    n: int
    lhs: float
    rhs: float
    h_smallness: float
    hypothesis_ok: bool

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else math.inf


def _eps(n, eps):
    return DEFAULT_EPS_FRACTION * full_sphere_h_integral(n) if eps is None else float(eps)


def _result(iid, n, lhs, rhs, h_small, hyp_ok, rhs_zero=False):
    if rhs_zero or not rhs > RHS_FLOOR:
        if hyp_ok:
            raise InequalityError(f"{iid}: right-hand side vanished ({rhs:.3e}) although the "
                                  "smallness hypothesis holds")
        rhs = 0.0
    return InequalityResult(iid, n, float(lhs), float(rhs), float(h_small), bool(hyp_ok))


def check_ms(fn: LatitudinalFunction, p: float = 1.0) -> InequalityResult:
    """Michael-Simon Sobolev ratio.

    ``p = 1``: ``(int |u|^{n/(n-1)})^{(n-1)/n} / int (|grad u| + |H||u|)``.
    ``1 < p < n``: ``(int |u|^{pn/(n-p)})^{(n-p)/n} / int (|grad u|^p + |H|^p |u|^p)``.
    The inequality needs no smallness hypothesis, so ``hypothesis_ok`` is
    always true.
    """
    n = fn.n
    if not 1 <= p < n:
        raise ValueError("need 1 <= p < n")
    q = p * n / (n - p)
    I = sphere_integrals(fn, powers=(q,), grad_powers=(p,))
    lhs = I.lp[q] ** ((n - p) / n)
    rhs = I.grad_lp[p] + I.h_lp[p]
    iid = "MS-p1" if p == 1 else "MS-p"
    return _result(iid, n, lhs, rhs, I.h_support, True)


def _hess_is_zero(I: SphereIntegrals, r):
    return I.hess_l2 <= _DERIVATIVE_FLOOR * I.lp.get(2, 0.0) / r ** 4


def check_gn1(fn: LatitudinalFunction, eps: float | None = None) -> InequalityResult:
    """``int u^4 / (int |Hess u|^2 int u^2)`` on ``S^4``."""
    if fn.n != 4:
        raise ValueError("GN1 is stated for n = 4")
    I = sphere_integrals(fn, powers=(2, 4))
    ok = I.h_support <= _eps(4, eps)
    rhs = I.hess_l2 * I.lp[2]
    return _result("GN1", 4, I.lp[4], rhs, I.h_support, ok, _hess_is_zero(I, fn.r))


def check_gn2(fn: LatitudinalFunction, eps: float | None = None) -> InequalityResult:
    """``(int |u|^5)^{1/5} / ((int |Hess u|^2)^{3/8} (int u^2)^{1/8})`` on ``S^5``."""
    if fn.n != 5:
        raise ValueError("GN2 is stated for n = 5")
    I = sphere_integrals(fn, powers=(2, 5))
    ok = I.h_support <= _eps(5, eps)
    rhs = I.hess_l2 ** 0.375 * I.lp[2] ** 0.125
    return _result("GN2", 5, I.lp[5] ** 0.2, rhs, I.h_support, ok, _hess_is_zero(I, fn.r))


def check_gne(fn: LatitudinalFunction, eps: float | None = None) -> InequalityResult:
    """``|v|_{L^n} / (|v|_{L^2}^{1-t} |grad^m v|_{L^2}^t)``, ``m = [n/2]``, ``t = (n-2)/(2m)``."""
    n = fn.n
    if n not in (3, 4, 5):
        raise ValueError("GNe is checked for n in {3, 4, 5}")
    m = n // 2
    t = (n - 2) / (2 * m)
    I = sphere_integrals(fn, powers=(2, n))
    if m == 1:
        d = I.grad_l2
        zero = d <= _DERIVATIVE_FLOOR * I.lp[2] / fn.r ** 2
    else:
        d = I.hess_l2
        zero = _hess_is_zero(I, fn.r)
    ok = I.h_support <= _eps(n, eps)
    rhs = I.lp[2] ** ((1 - t) / 2) * d ** (t / 2)
    return _result("GNe", n, I.lp[n] ** (1 / n), rhs, I.h_support, ok, zero)


def check_ms_on_mesh(mesh: Mesh, curvature: CurvatureField, field, p: float = 1.0) -> InequalityResult:
    """Michael-Simon ratio of a vertex field on a surface mesh (n = 2, 1 <= p < 2)."""
    if not 1 <= p < 2:
        raise ValueError("need 1 <= p < 2 on surfaces")
    u = np.asarray(field, dtype=np.float64)
    a = curvature.vertex_area
    g = np.linalg.norm(gradient(mesh, u), axis=1)
    absH = np.abs(curvature.mean_curvature)
    q = 2 * p / (2 - p)
    lhs = float(np.sum(np.abs(u) ** q * a)) ** ((2 - p) / 2)
    rhs = float(np.sum((g ** p + (absH * np.abs(u)) ** p) * a))
    h_small = float(np.sum(np.where(u != 0, absH ** 2, 0.0) * a))
    return _result("MS-p1" if p == 1 else "MS-p", 2, lhs, rhs, h_small, True)


# ---------------------------------------------------------------------------
# family sweeps and reports


_CHECKS = {
    "MS-p1": lambda fn, eps, p: check_ms(fn, 1.0),
    "MS-p": lambda fn, eps, p: check_ms(fn, p),
    "GN1": lambda fn, eps, p: check_gn1(fn, eps),
    "GN2": lambda fn, eps, p: check_gn2(fn, eps),
    "GNe": lambda fn, eps, p: check_gne(fn, eps),
}


@dataclass
class InequalityRow:
    family_param: float
    lhs: float
    rhs: float
    ratio: float
    h_smallness: float
    hypothesis_ok: bool


@dataclass
class InequalityReport:
    inequality_id: str
    n: int
    family: str
    rows: list
    sup_ratio: float
    refinement_delta: float = math.nan
    eps: float = math.nan


def run_family(inequality_id: str, n: int, thetas, *, r: float = 1.0, p: float = 2.0,
               poly=(1.0,), amplitude: float = 1.0, resolution: int = 4096,
               eps: float | None = None, include_full_sphere: bool = False,
               refine: bool = True) -> InequalityReport:
    """Evaluate one inequality on the cap-bump family ``theta0 in thetas``.

    ``include_full_sphere`` appends the constant function on the whole
    sphere (``family_param = pi``). The family supremum is taken over rows
    that satisfy the smallness hypothesis; ``refinement_delta`` is its
    relative change when the grid is doubled.
    """
    if inequality_id not in _CHECKS:
        raise ValueError(f"unknown inequality {inequality_id!r}; expected one of {INEQUALITY_IDS}")
    check = _CHECKS[inequality_id]
    e = _eps(n, eps)

    def sweep(res):
        rows = []
        for t0 in thetas:
            fn = cap_bump(n, float(t0), r, amplitude, poly, res)
            rows.append(_row(float(t0), check(fn, e, p)))
        if include_full_sphere:
            th = np.linspace(0, math.pi, res + 1)
            fn = LatitudinalFunction(n, r, np.full_like(th, amplitude))
            rows.append(_row(math.pi, check(fn, e, p)))
        return rows

    rows = sweep(resolution)
    sup = _sup(rows)
    delta = math.nan
    if refine:
        sup2 = _sup(sweep(2 * resolution))
        delta = abs(sup2 - sup) / sup if sup > 0 else math.nan
    desc = f"cap bump theta0 in [{min(thetas):g}, {max(thetas):g}] ({len(thetas)} members)"
    if include_full_sphere:
        desc += " + full-sphere constant"
    return InequalityReport(inequality_id, n, desc, rows, sup, delta, e)


def _row(t0, res: InequalityResult) -> InequalityRow:
    return InequalityRow(t0, res.lhs, res.rhs, res.ratio, res.h_smallness, res.hypothesis_ok)


def _sup(rows) -> float:
    vals = [row.ratio for row in rows if row.hypothesis_ok]
    return max(vals) if vals else math.nan


REPORT_COLUMNS = ("inequality_id", "n", "family_param", "lhs", "rhs", "ratio", "h_smallness", "hypothesis_ok")


def write_report_csv(reports, sink) -> None:
    """Write report rows with the fixed column order (17 significant digits)."""
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", newline="") as fh:
            write_report_csv(reports, fh)
        return
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for rep in reports:
        for row in rep.rows:
            w.writerow([rep.inequality_id, rep.n, _f(row.family_param), _f(row.lhs), _f(row.rhs),
                        _f(row.ratio), _f(row.h_smallness), "true" if row.hypothesis_ok else "false"])


def _f(x) -> str:
    return format(float(x), ".17g")


def format_report(reports) -> str:
    """Human-readable summary table."""
    lines = [f"{'inequality':<8} {'n':>2} {'members':>7} {'sup ratio':>13} {'refine delta':>12}  family"]
    for rep in reports:
        used = sum(row.hypothesis_ok for row in rep.rows)
        lines.append(f"{rep.inequality_id:<8} {rep.n:>2} {used:>3}/{len(rep.rows):<3} "
                     f"{rep.sup_ratio:>13.6g} {rep.refinement_delta:>12.3e}  {rep.family}")
    return "\n".join(lines)
