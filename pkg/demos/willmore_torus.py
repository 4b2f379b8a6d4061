"""
Relaxing a torus under the Willmore flow
========================================

The Willmore energy ``W = 1/2 int |A|^2`` of a torus of revolution with
radii (2, 1) exceeds the Clifford value 4 pi^2. Its L^2 gradient flow
lowers ``W`` at the rate ``int F^2``. This script follows a short run,
checks the per-step energy identity and watches the curvature
concentration monitor.
"""

import io

import numpy as np

from curvflow.diagnostics import read_records, willmore_energy
from curvflow.flow import FlowConfig, run
from curvflow.mesh import make_torus
from curvflow.parametric import torus as parametric_torus, willmore_energy_exact

mesh = make_torus(2.0, 1.0, 48, 24)
exact = willmore_energy_exact(parametric_torus(2.0, 1.0))
print(f"discrete W = {willmore_energy(mesh):.5f}, smooth W = {exact:.5f}, Clifford 4 pi^2 = {4 * np.pi ** 2:.5f}")

# diagnostics go to an in-memory CSV, exactly as the CLI writes them
sink = io.StringIO()
cfg = FlowConfig(kind="willmore", c_dt=0.02, max_steps=600, snapshot_every=50, concentration_radius=0.5,
                 concentration_centers=("vertex-subsample", 256))
state, _ = run(mesh, cfg, sink=sink)
recs = read_records(sink.getvalue())

print(f"\nstatus={state.status}, t={state.t:.3e}")
print(f"{'t':>10} {'W':>10} {'rho_E':>10} {'kappa_max':>10} {'max|F|':>10}")
for r in recs:
    print(f"{r.t:10.3e} {r.willmore_energy:10.5f} {r.energy_residual:10.2e} {r.kappa_max:10.4f} {r.max_F:10.4f}")

W = np.array([r.willmore_energy for r in recs])
print(f"\nenergy non-increasing: {bool(np.all(np.diff(W) <= 0))}; total drop {W[0] - W[-1]:.3e}")
print("rho_E compares (W1 - W0)/dt with -int F^2 over one step; it is small when the"
      " discrete gradient matches the discrete energy.")
