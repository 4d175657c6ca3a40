"""Quadratic Lagrange space V(T) = H^1_0 ∩ P2(T).

Local node order on an element ``(a, b, c)``: the three vertices followed
by the midpoints of the local edges ``(a, b)``, ``(b, c)``, ``(c, a)``.
Global node ``i < nv`` is vertex ``i``; node ``nv + f`` is the midpoint of
face ``f``.
"""
import json
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from .mesh import Mesh, load_mesh
from .quadrature import edge_rule

_EDGE_PAIRS = ((0, 1), (1, 2), (2, 0))


class DofMap:
    """Nodes of the P2 space on ``mesh`` and the free (interior) subset."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nv = mesh.nvertices
        self.nnodes = nv + mesh.nfaces
        self.elem_nodes = np.hstack([mesh.elements, nv + mesh.elem_edges])
        self.boundary = np.concatenate([mesh.boundary_vertices, mesh.boundary_faces])
        self.free = np.flatnonzero(~self.boundary)
        self.node_to_free = np.full(self.nnodes, -1, dtype=np.int64)
        self.node_to_free[self.free] = np.arange(len(self.free))
        for arr in (self.elem_nodes, self.boundary, self.free, self.node_to_free):
            arr.setflags(write=False)

    @property
    def dim(self):
        return len(self.free)

    @cached_property
    def node_coords(self):
        m = self.mesh
        return np.vstack([m.vertices, 0.5 * m.vertices[m.edges].sum(axis=1)])

    def zero(self):
        return FeFunction(self, np.zeros(self.dim))

    def random(self, rng):
        return FeFunction(self, rng.standard_normal(self.dim))


def build_dofmap(mesh):
    return DofMap(mesh)


# ---------------------------------------------------------------------------
# local basis


def basis_values(lam):
    """P2 basis values at barycentric points ``lam`` (..., 3) -> (..., 6)."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=-1)


def basis_gradients(lam, G):
    """Gradients at ``lam`` (..., 3) for elements with barycentric gradients G (..., 3, 2).

    Returns shape (..., 6, 2).
    """
    out = np.empty(lam.shape[:-1] + (6, 2))
    for i in range(3):
        out[..., i, :] = (4 * lam[..., i, None] - 1) * G[..., i, :]
    for k, (i, j) in enumerate(_EDGE_PAIRS):
        out[..., 3 + k, :] = 4 * (lam[..., j, None] * G[..., i, :] + lam[..., i, None] * G[..., j, :])
    return out


def basis_hessians(G):
    """Constant Hessians, G (ne, 3, 2) -> (ne, 6, 2, 2)."""
    out = np.empty(G.shape[:-2] + (6, 2, 2))
    for i in range(3):
        out[..., i, :, :] = 4 * np.einsum("...a,...b->...ab", G[..., i, :], G[..., i, :])
    for k, (i, j) in enumerate(_EDGE_PAIRS):
        gij = np.einsum("...a,...b->...ab", G[..., i, :], G[..., j, :])
        out[..., 3 + k, :, :] = 4 * (gij + np.swapaxes(gij, -1, -2))
    return out


# ---------------------------------------------------------------------------
# functions


class FeFunction:
    """Element of V(T): coefficients on the free nodes, zero on the boundary."""

    def __init__(self, dofmap: DofMap, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (dofmap.dim,):
            raise ValueError(f"expected {dofmap.dim} coefficients, got shape {coeffs.shape}")
        self.dofmap = dofmap
        self.coeffs = coeffs

    @property
    def mesh(self):
        return self.dofmap.mesh

    def __add__(self, other):
        return FeFunction(self.dofmap, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return FeFunction(self.dofmap, self.coeffs - other.coeffs)

    def __mul__(self, c):
        return FeFunction(self.dofmap, c * self.coeffs)

    __rmul__ = __mul__

    @cached_property
    def nodal(self):
        """Values at all nodes, boundary included."""
        full = np.zeros(self.dofmap.nnodes)
        full[self.dofmap.free] = self.coeffs
        return full

    @cached_property
    def local(self):
        """Per-element local coefficients, shape (ne, 6)."""
        return self.nodal[self.dofmap.elem_nodes]

    @cached_property
    def hessians(self):
        """Elementwise constant Hessian, shape (ne, 2, 2)."""
        H = basis_hessians(self.mesh.barycentric_gradients)
        return np.einsum("ki,kiab->kab", self.local, H)

    def values_at(self, elems, lam):
        """Values at barycentric points ``lam`` of elements ``elems``."""
        return np.einsum("...i,...i->...", basis_values(lam), self.local[elems])

    def gradients_at(self, elems, lam):
        G = self.mesh.barycentric_gradients[elems]
        return np.einsum("...ia,...i->...a", basis_gradients(lam, G), self.local[elems])

    def vertex_gradients(self):
        """Gradient of v|_K at the three vertices of every K, shape (ne, 3, 2)."""
        eye = np.broadcast_to(np.eye(3), (self.mesh.nelements, 3, 3))
        G = self.mesh.barycentric_gradients[:, None]
        return np.einsum("kpia,ki->kpa", basis_gradients(eye, G), self.local)

    def to_json(self):
        return json.dumps({"mesh": self.mesh.to_dict(), "coefficients": self.coeffs.tolist()})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        mesh = load_mesh(data["mesh"])
        return cls(DofMap(mesh), data["coefficients"])


def evaluate(fn: FeFunction, elem, p, tol=1e-12):
    """Value, gradient and Hessian of ``fn`` restricted to element ``elem`` at ``p``."""
    lam = fn.mesh.barycentric(elem, np.asarray(p, dtype=float))
    if lam.min() < -tol:
        raise ValueError(f"point {tuple(p)} lies outside element {elem}")
    return (float(fn.values_at(elem, lam)), fn.gradients_at(elem, lam), fn.hessians[elem].copy())


def interpolate(dofmap: DofMap, func: Callable):
    """Nodal P2 interpolant of ``func(x, y)`` with boundary values set to zero."""
    xy = dofmap.node_coords[dofmap.free]
    return FeFunction(dofmap, np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float))


# ---------------------------------------------------------------------------
# face traces


class FaceTraceData(NamedTuple):
    """Trace quantities for all faces.

    ``jump_dn`` holds the normal-derivative jump at the two face endpoints
    (``mesh.edges`` order); it is affine along the face.  ``jump_d2n`` is
    the jump of the second normal derivative (zero on boundary faces) and
    ``mean_d2nn`` the average of the second normal derivative.
    """
    jump_dn: np.ndarray
    jump_d2n: np.ndarray
    mean_d2nn: np.ndarray


def face_trace_data(fn: FeFunction) -> FaceTraceData:
    mesh = fn.mesh
    n = mesh.face_normals
    e1, e2 = mesh.edge_elems[:, 0], mesh.edge_elems[:, 1]
    inner = e2 >= 0
    ends = mesh.vertices[mesh.edges]
    lam1 = mesh.barycentric(e1[:, None], ends)
    g1 = fn.gradients_at(e1[:, None], lam1)
    jump = np.einsum("fpa,fa->fp", g1, n)
    H = fn.hessians
    d2n1 = np.einsum("fa,fab,fb->f", n, H[e1], n)
    mean = d2n1.copy()
    jump2 = np.zeros(mesh.nfaces)
    if inner.any():
        k2 = e2[inner]
        lam2 = mesh.barycentric(k2[:, None], ends[inner])
        g2 = fn.gradients_at(k2[:, None], lam2)
        jump[inner] -= np.einsum("fpa,fa->fp", g2, n[inner])
        d2n2 = np.einsum("fa,fab,fb->f", n[inner], H[k2], n[inner])
        mean[inner] = 0.5 * (d2n1[inner] + d2n2)
        jump2[inner] = d2n1[inner] - d2n2
    return FaceTraceData(jump, jump2, mean)


class FaceTraces(NamedTuple):
    jump_dn: Callable[[np.ndarray], np.ndarray]
    jump_d2n: float
    mean_d2nn: float


def face_traces(fn: FeFunction, face: int) -> FaceTraces:
    """Traces on one face; ``jump_dn(s)`` is parametrised by s in [0, 1] along ``mesh.edges[face]``."""
    data = face_trace_data(fn)
    a, b = data.jump_dn[face]

    def jump_dn(s):
        s = np.asarray(s, dtype=float)
        return (1 - s) * a + s * b

    return FaceTraces(jump_dn, float(data.jump_d2n[face]), float(data.mean_d2nn[face]))


def face_gradients(fn: FeFunction, npoints=3):
    """Gradients of both one-sided traces at Gauss points of every face.

    Returns ``(points, g1, g2)``; ``g2`` is NaN on boundary faces.
    """
    mesh = fn.mesh
    rule = edge_rule(npoints)
    ends = mesh.vertices[mesh.edges]
    pts = ends[:, None, 0] + rule.points[None, :, None] * (ends[:, None, 1] - ends[:, None, 0])
    e1, e2 = mesh.edge_elems[:, 0], mesh.edge_elems[:, 1]
    g1 = fn.gradients_at(e1[:, None], mesh.barycentric(e1[:, None], pts))
    g2 = np.full_like(g1, np.nan)
    inner = e2 >= 0
    k2 = e2[inner]
    g2[inner] = fn.gradients_at(k2[:, None], mesh.barycentric(k2[:, None], pts[inner]))
    return pts, g1, g2
