"""
Boundary-layer approximations in the rough cell
===============================================

The first- and second-order approximations add rescaled correctors to a
macroscopic profile. Both vanish on the rough wall; the second order one is
accurate up to an exponentially small error.
"""

import numpy as np

from walllaw import boundary_layers as bl, cells, fem
from walllaw.experiment import ExperimentPlan, family_mesh, solve_reference
from walllaw.geometry import ROUGH_BOTTOM, cosine_profile

profile = cosine_profile()
pair = cells.solve_cells(profile)
plan = ExperimentPlan().validate()

for eps in (0.25, 0.1):
    first = bl.build_first_full(plan.C, eps, pair.beta)
    second = bl.build_second_full(plan.C, eps, pair.beta, pair.gamma)

    # values on the rough wall, sampled where the strip mesh has vertices
    n = len(pair.beta.mesh.tagged_edges(ROUGH_BOTTOM))
    bottom = lambda x1: eps * profile(x1 / eps)
    print(f"eps={eps}: wall residuals {first.wall_residual(bottom, n):.1e} {second.wall_residual(bottom, n):.1e}, "
          f"top residual of the second order {bl.g_epsilon(second):.1e}")

    # errors against the rough-channel solution on the smooth part of the cell
    ref = solve_reference(plan, eps)
    mesh = family_mesh(plan, eps)
    for name, approx in (("zeroth", bl.build_zeroth(plan.C, eps)), ("first", first), ("second", second)):
        err = bl.error_decomposition(ref, approx, mesh)
        print(f"  {name:6s} L2 {err['l2']:.3e}  H1 {err['h1semi']:.3e}")
