"""Legacy ASCII VTK export on a uniform per-triangle subgrid."""
import numpy as np

from .femspace import FeFunction


def subgrid(n=3):
    """Barycentric subgrid points (m, 3) and sub-triangles (n², 3) of one triangle."""
    idx = {}
    lam = []
    for j in range(n + 1):
        for i in range(n + 1 - j):
            idx[i, j] = len(lam)
            lam.append((1 - (i + j) / n, i / n, j / n))
    tris = []
    for j in range(n):
        for i in range(n - j):
            tris.append((idx[i, j], idx[i + 1, j], idx[i, j + 1]))
            if i + j < n - 1:
                tris.append((idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]))
    return np.array(lam), np.array(tris)


def sample(fn, n=3):
    """Points (ne, m, 2) and values (ne, m) of a P2 or HCT function on the subgrid."""
    mesh = fn.mesh
    lam, _ = subgrid(n)
    pts = np.einsum("mi,kia->kma", lam, mesh.vertices[mesh.elements])
    elems = np.arange(mesh.nelements)
    if isinstance(fn, FeFunction):
        vals = fn.values_at(elems[:, None], lam[None])
    else:
        vals = fn.evaluate(elems, pts)
    return pts, vals


def write_vtk(path, fn, cell_data=None, n=3, name="u"):
    """Write ``fn`` sampled on an ``n``-fold subgrid; elements are duplicated per cell."""
    pts, vals = sample(fn, n)
    _, tris = subgrid(n)
    ne, m = vals.shape
    cells = (tris[None] + m * np.arange(ne)[:, None, None]).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nbiharm\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {ne * m} double\n")
        np.savetxt(fh, np.column_stack([pts.reshape(-1, 2), np.zeros(ne * m)]), fmt="%.17g")
        fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
        np.savetxt(fh, np.column_stack([np.full(len(cells), 3), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        np.savetxt(fh, np.full(len(cells), 5), fmt="%d")
        fh.write(f"POINT_DATA {ne * m}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, vals.ravel(), fmt="%.17g")
        if cell_data:
            fh.write(f"CELL_DATA {len(cells)}\n")
            for key, arr in cell_data.items():
                fh.write(f"SCALARS {key} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, np.repeat(np.asarray(arr, float), len(tris)), fmt="%.17g")
