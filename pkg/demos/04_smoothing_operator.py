# # The HCT smoothing operator and its left inverse
#
# E maps a discontinuous-gradient P2 function into the C1 quartic HCT space
# by averaging DOFs; I maps back with the L2 dual basis.  I(E(v)) = v for all
# v, and v - E(v) is controlled by the normal-derivative jumps of v.

# %%
import numpy as np

from biharm import DofMap
from biharm.hct import HctSpace, conformity_residuals, quasi_interpolate, smooth
from biharm.mesh import lshape, uniform_refine, unit_square
from biharm.verify import smoothing_constants

rng = np.random.default_rng(1)
mesh = uniform_refine(lshape(), 2)
dofmap, space = DofMap(mesh), HctSpace(mesh)
v = dofmap.random(rng)
Ev = smooth(v, space)
print("HCT DOFs:", space.ndofs, " P2 DOFs:", dofmap.dim)
print("conformity residuals of E(v):", conformity_residuals(Ev))
print("max |I(E(v)) - v|:", np.abs(quasi_interpolate(Ev, dofmap, space).coeffs - v.coeffs).max())

# %% [markdown]
# The fitted constants in ||D^a(v - Ev)||_K^2 <= C sum_F h^(3-2a) ||[d_n v]||_F^2
# stay put as the mesh is refined.

# %%
for k in (2, 3, 4):
    m = uniform_refine(unit_square(), k)
    c = smoothing_constants(m, rng, 20)
    print(f"{m.nelements:5d} elements: C_0={c[0]:.3e} C_1={c[1]:.3e} C_2={c[2]:.3e}")
