"""
Curvature on meshes and on parametric charts
============================================

Discrete curvatures from the cotangent Laplacian and angle defects, the
identities they satisfy exactly (Gauss-Bonnet, the cubic identity for
``C(A)``), and the ones they satisfy only in the limit, checked on
spectrally accurate parametric surfaces (Codazzi, Simons) and by a
finite-difference test of the first variation of the Willmore energy.
"""

import numpy as np

from curvflow.diagnostics import first_variation
from curvflow.diffgeo import angle_defects, curvature_field
from curvflow.mesh import make_icosphere, make_torus
from curvflow.parametric import codazzi_residual, convergence_orders, ellipsoid, simons_residual, torus

# on the unit sphere with outward normal: H = -2, K = 1, |A|^2 = 2, C = -2
print("unit icosphere: max deviation from the round values")
for s in (2, 3, 4, 5):
    cf = curvature_field(make_icosphere(1.0, s), with_shape=False)
    print(f"  s={s}  H {np.abs(cf.mean_curvature + 2).max():.2e}  K {np.abs(cf.gauss_curvature - 1).max():.2e}"
          f"  |A|^2 {np.abs(cf.a_squared - 2).max():.2e}  C {np.abs(cf.cubic + 2).max():.2e}")

# angle defects sum to 2 pi chi on any closed mesh
for label, m in (("sphere s=3", make_icosphere(1.0, 3)), ("torus 64x32", make_torus(np.sqrt(2), 1.0, 64, 32)),
                 ("torus 3x3", make_torus(2.0, 1.0, 3, 3))):
    print(f"Gauss-Bonnet {label:>12}: sum K a = {angle_defects(m).sum(): .3e}, 2 pi chi = "
          f"{2 * np.pi * m.euler_characteristic: .3e}")

# C(A) = 1/2 H (|A|^2 + 2 |A0|^2) holds to roundoff because every term is
# built from the same (H, K)
cf = curvature_field(make_torus(2.0, 1.0, 64, 32), with_shape=False)
rhs = 0.5 * cf.mean_curvature * (cf.a_squared + 2 * cf.tracefree_squared)
print(f"\ncubic identity on a torus: max |C - rhs| = {np.abs(cf.cubic - rhs).max():.1e}")

# Codazzi and Simons residuals on parametric surfaces converge at the
# order of the finite-difference stencils
print("\nparametric residuals (grid 64 -> 128 -> 256)")
for label, surf in (("torus(2,1)", torus(2.0, 1.0)), ("ellipsoid(1.5,1,0.8)", ellipsoid(1.5, 1.0, 0.8))):
    for name, fn in (("codazzi", codazzi_residual), ("simons", simons_residual)):
        res, orders = convergence_orders(fn, surf, [64, 128, 256])
        print(f"  {label:<22} {name:<8} {np.array2string(np.asarray(res), precision=2)}  orders {np.round(orders, 2)}")

# first variation: central difference of W along phi nu against
# sum phi (Delta H - 1/2 H |A|^2 + C) a. The round sphere is critical, so
# both tend to zero; what remains of the formula is the O(h^2) error of
# the discrete gradient, measured against the size of its terms
print("\nfirst variation on icospheres, phi = exp(x) cos(2z)")
for s in (2, 3, 4):
    m = make_icosphere(1.0, s)
    x, _, z = m.vertices.T
    fv = first_variation(m, np.exp(x) * np.cos(2 * z))
    print(f"  s={s}  FD {fv.fd: .3e}  formula {fv.formula: .3e}  discrepancy {fv.discrepancy:.2e}")
