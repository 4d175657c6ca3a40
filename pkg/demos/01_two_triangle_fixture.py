# # The two-triangle square by hand
#
# The unit square cut along its diagonal has a single interior P2 node, the
# diagonal midpoint.  Its basis function, the "bubble", is small enough to
# check every piece of the C0 interior penalty method by hand.

# %%
import numpy as np

from biharm import DofMap, FeFunction, assemble, energy_norm, solve, unit_square
from biharm.c0ipg import IndefiniteSystemError, sigma_star
from biharm.femspace import evaluate, face_traces

mesh = unit_square()
dofmap = DofMap(mesh)
print(mesh)
print("free DOFs:", dofmap.dim)

# %% [markdown]
# On the lower triangle the bubble is 4(1-x)y, with Hessian [[0,-4],[-4,0]].

# %%
phi = FeFunction(dofmap, np.ones(1))
value, grad, hess = evaluate(phi, 0, (0.75, 0.25))
print(value, grad, hess, sep="\n")

# %% [markdown]
# The normal derivative jumps by 4*sqrt(2) across the diagonal, while the
# second normal derivative is continuous there with mean 4.

# %%
diag = int(np.flatnonzero(mesh.interior_faces)[0])
tr = face_traces(phi, diag)
print("jump of d_n phi:", tr.jump_dn(np.linspace(0, 1, 3)))
print("mean of d_nn phi:", tr.mean_d2nn)

# %% [markdown]
# The 1x1 system matrix is -32 + 160 sigma / 3: volume 32, consistency -64,
# penalty 32 on the diagonal and 64/3 on the boundary.  The load for f = 1 is
# the integral of the bubble, 1/3.

# %%
for sigma in (0.1, 0.6, 3.0, 20.0):
    print(f"sigma={sigma:5.1f}  A11={assemble(dofmap, sigma).A[0, 0]: .6f}"
          f"  |phi|^2={energy_norm(phi, sigma).total:.6f}")
system = assemble(dofmap, 20.0, lambda x, y: np.ones_like(x))
u = solve(system)
print("b =", system.b[0], " u1 =", u.coeffs[0], " 1/u1 =", 1 / u.coeffs[0])

# %% [markdown]
# Below sigma = 0.6 the matrix is negative and the solver refuses it.

# %%
try:
    solve(assemble(dofmap, 0.1, lambda x, y: np.ones_like(x)))
except IndefiniteSystemError as exc:
    print("refused:", exc)
print("empirical sigma* =", sigma_star(mesh))
