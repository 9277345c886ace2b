"""
Wall laws on the smooth cell
============================

Build every macroscopic approximation for one value of eps and compare the
slip they produce on the fictitious wall x2 = 0.
"""

import numpy as np

from walllaw import cells, wall_laws as wl
from walllaw.geometry import build_mesh, cosine_profile, smooth_cell

eps, C = 0.2, 1.0
pair = cells.solve_cells(cosine_profile())
mesh = build_mesh(smooth_cell(eps, segments=32))

families = {
    "U0": wl.poiseuille(C, mesh),
    "U1": wl.averaged_first(C, eps, pair.beta_bar, mesh, "fem"),
    "U2": wl.averaged_second(C, eps, pair.beta_bar, pair.gamma_bar, mesh, "fem"),
    "ExplicitMS1": wl.explicit_ms_first(C, eps, pair.beta, mesh),
    "ExplicitMS2": wl.explicit_ms_second(C, eps, pair.beta, pair.gamma, mesh),
    "ImplicitMS1": wl.implicit_ms_first(C, eps, pair.beta, mesh),
}

# slip along one period of the wall: constant for the averaged laws,
# oscillating for the multiscale ones
x1 = np.linspace(0, 2 * np.pi * eps, 9)
wall = np.column_stack([x1, np.zeros_like(x1)])
for name, sol in families.items():
    v = sol(wall)
    print(f"{name:12s} slip mean {v.mean():.5f}  spread {v.max() - v.min():.5f}")

# the averaged laws have closed forms; the FEM solutions reproduce them
u2 = families["U2"]
print("U2 closed form vs FEM:", np.abs(u2.field.dofs - u2.closed_form(u2.field.coordinates)).max())
