"""
Sobolev and Gagliardo-Nirenberg ratios on round spheres
=======================================================

Cap-supported bumps on S^n reduce every integral to one dimension. For
each inequality we sweep the cap angle, report the largest ratio of the
left side to the right side (an empirical lower bound for the constant)
and check that it does not move when the grid is doubled. The constant
function on the whole sphere is the cautionary case: it violates the
smallness hypothesis on ``int |H|^n`` and its right side vanishes.
"""

import sys

import numpy as np

from curvflow.diffgeo import curvature_field
from curvflow.inequalities import LatitudinalFunction, check_ms, check_ms_on_mesh, format_report, run_family
from curvflow.inequalities import write_report_csv
from curvflow.mesh import make_icosphere

# Michael-Simon, p = 1, u = 1 on the unit S^2: sqrt(4 pi) / (8 pi)
res = check_ms(LatitudinalFunction(2, 1.0, np.ones(1025)))
print(f"MS ratio of u = 1 on S^2: {res.ratio:.6f} (closed form {np.sqrt(4 * np.pi) / (8 * np.pi):.6f})")
m = make_icosphere(1.0, 4)
res = check_ms_on_mesh(m, curvature_field(m, with_shape=False), np.ones(m.n_vertices))
print(f"same ratio on a 2562-vertex icosphere: {res.ratio:.6f}")

# family sweeps, with the full-sphere constant appended as the last member
thetas = np.linspace(0.1, 1.0, 10)
reports = [run_family(iid, n, thetas, include_full_sphere=True)
           for iid, n in (("MS-p1", 4), ("GN1", 4), ("GN2", 5), ("GNe", 3), ("GNe", 4), ("GNe", 5))]
print()
print(format_report(reports))

gn1 = reports[1]
print("\nGN1 on S^4, member by member:")
print(f"{'theta0':>8} {'ratio':>12} {'int|H|^4':>12} hypothesis")
for row in gn1.rows:
    print(f"{row.family_param:8.3f} {row.ratio:12.5g} {row.h_smallness:12.5g} {row.hypothesis_ok}")

# the CSV report used by `curvflow inequalities`
print("\nfirst lines of the CSV report:")
write_report_csv(reports[:1], sys.stdout)
