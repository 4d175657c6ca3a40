# # Grading towards the reentrant corner
#
# On the L-shaped domain with f = 1 the solution has a corner singularity at
# the origin.  Adaptive refinement should concentrate elements there.  Each
# iteration also writes a VTK file with the solution and the indicators.

# %%
from pathlib import Path

import numpy as np

from biharm import MarkingStrategy, adaptive_loop, get_problem
from biharm.mesh import mesh_size
from biharm.vtk import write_vtk

out = Path("lshape_vtk")
out.mkdir(exist_ok=True)
stats = []


def observe(k, mesh, u, est):
    dist = np.linalg.norm(mesh.centroids, axis=1)
    h = mesh_size(mesh)[0]
    corner = (mesh.elements == 0).any(axis=1)  # vertex 0 is the origin
    stats.append((k, mesh.nelements, int((dist < 0.1).sum()), h[corner].max(), h.max()))
    write_vtk(out / f"iter_{k:03d}.vtk", u, {"eta": est.eta})


log = adaptive_loop(get_problem("lshape-singular"), 20.0, MarkingStrategy("maximum", 0.5),
                    max_iters=20, callback=observe)

# %% [markdown]
# The number of elements near the corner grows steadily while the size of
# the elements touching the corner drops well below the largest size in the bulk.  Their
# share of the mesh, however, levels off around nine percent, because the
# marking keeps alternating between the corner and the rest of the domain.

# %%
print(f"{'iter':>4} {'elems':>6} {'near':>5} {'share':>6} {'h(corner)':>10} {'h_max':>7}")
for k, ne, near, hmin, hmax in stats:
    print(f"{k:4d} {ne:6d} {near:5d} {near / ne:6.3f} {hmin:10.4f} {hmax:7.4f}")
