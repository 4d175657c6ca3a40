"""Conforming triangular meshes with newest-vertex bisection.

Every element is stored as a counter-clockwise vertex triple ``(a, b, c)``
whose refinement edge is ``(a, b)``; ``c`` is the newest vertex.  Local
edge ``k`` of an element joins local vertices ``k`` and ``k + 1 (mod 3)``,
so local edge 0 is always the refinement edge.

Faces (edges) are numbered globally.  ``edge_elems[f, 0]`` is the lower
indexed incident element and ``edge_elems[f, 1]`` the higher one (``-1`` on
the boundary).  The face normal is the outward normal of
``edge_elems[f, 0]``; on interior faces it therefore points from the lower
to the higher indexed element.
"""
import json
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    """Invalid mesh input."""


class RefinementError(RuntimeError):
    """Closure of the newest-vertex bisection did not terminate."""


class Mesh:
    """Conforming triangulation with bisection genealogy.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    elements : array_like, shape (ne, 3)
        Counter-clockwise triples, refinement edge between the first two.
    generation : array_like, optional
        Number of bisections separating each element from the initial mesh.
    parent : Mesh, optional
        The mesh this one was refined from.
    ancestor : array_like, optional
        For every element the index of the element of ``parent`` containing it.
    """

    def __init__(self, vertices, elements, generation=None, parent=None, ancestor=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        ne = len(self.elements)
        if generation is None:
            generation = np.zeros(ne, dtype=np.int64)
        self.generation = np.asarray(generation, dtype=np.int64)
        self.parent = parent
        self.ancestor = None if ancestor is None else np.asarray(ancestor, dtype=np.int64)
        for arr in (self.vertices, self.elements, self.generation):
            arr.setflags(write=False)

    def __repr__(self):
        return (f"Mesh(nvertices={self.nvertices}, nelements={self.nelements}, "
                f"nfaces={self.nfaces})")

    @property
    def nvertices(self):
        return len(self.vertices)

    @property
    def nelements(self):
        return len(self.elements)

    @property
    def nfaces(self):
        return len(self.edges)

    # -- geometry -------------------------------------------------------

    @cached_property
    def signed_area(self):
        p = self.vertices[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self):
        return self.signed_area

    @cached_property
    def barycentric_gradients(self):
        """Constant gradients of the barycentric coordinates, shape (ne, 3, 2)."""
        p = self.vertices[self.elements]
        g = np.empty((self.nelements, 3, 2))
        for i in range(3):
            q = p[:, (i + 1) % 3]
            r = p[:, (i + 2) % 3]
            # inward normal of the opposite edge scaled by its length
            g[:, i, 0] = q[:, 1] - r[:, 1]
            g[:, i, 1] = r[:, 0] - q[:, 0]
        g /= (2.0 * self.signed_area)[:, None, None]
        return g

    def barycentric(self, elems, points):
        """Barycentric coordinates of ``points`` with respect to ``elems``."""
        elems = np.asarray(elems)
        points = np.asarray(points, dtype=float)
        p0 = self.vertices[self.elements[elems, 0]]
        g = self.barycentric_gradients[elems]
        d = points - p0
        l1 = np.einsum("...k,...k->...", d, g[..., 1, :])
        l2 = np.einsum("...k,...k->...", d, g[..., 2, :])
        return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)

    @cached_property
    def centroids(self):
        return self.vertices[self.elements].mean(axis=1)

    # -- topology -------------------------------------------------------

    @cached_property
    def _edge_data(self):
        t = self.elements
        loc = np.stack([np.stack([t[:, k], t[:, (k + 1) % 3]], axis=1) for k in range(3)], axis=1)
        srt = np.sort(loc.reshape(-1, 2), axis=1)
        edges, inv, counts = np.unique(srt, axis=0, return_inverse=True, return_counts=True)
        inv = inv.reshape(-1)
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: a face is shared by more than two elements")
        elem_edges = inv.reshape(-1, 3)
        ne = len(t)
        owner = np.repeat(np.arange(ne), 3)
        order = np.lexsort((owner, inv))
        inv_s = inv[order]
        own_s = owner[order]
        first = np.ones(len(inv_s), dtype=bool)
        first[1:] = inv_s[1:] != inv_s[:-1]
        edge_elems = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_elems[inv_s[first], 0] = own_s[first]
        edge_elems[inv_s[~first], 1] = own_s[~first]
        return edges, elem_edges, edge_elems

    @property
    def edges(self):
        """Face endpoints, shape (nf, 2), lower global index first."""
        return self._edge_data[0]

    @property
    def elem_edges(self):
        """Global face index of each local edge, shape (ne, 3)."""
        return self._edge_data[1]

    @property
    def edge_elems(self):
        """Incident elements of each face, shape (nf, 2); ``-1`` marks none."""
        return self._edge_data[2]

    @cached_property
    def boundary_faces(self):
        return self.edge_elems[:, 1] < 0

    @cached_property
    def interior_faces(self):
        return ~self.boundary_faces

    @cached_property
    def boundary_vertices(self):
        mask = np.zeros(self.nvertices, dtype=bool)
        mask[self.edges[self.boundary_faces].ravel()] = True
        return mask

    @cached_property
    def face_lengths(self):
        p = self.vertices[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @cached_property
    def face_normals(self):
        """Unit normals, outward for ``edge_elems[:, 0]``."""
        p = self.vertices[self.edges]
        d = p[:, 1] - p[:, 0]
        n = np.column_stack([d[:, 1], -d[:, 0]]) / self.face_lengths[:, None]
        # orient away from the first incident element
        c = self.centroids[self.edge_elems[:, 0]]
        flip = np.einsum("ij,ij->i", n, p[:, 0] - c) < 0
        n[flip] *= -1
        return n

    @cached_property
    def vertex_element_matrix(self):
        ne = self.nelements
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(ne), 3)
        return sp.csr_matrix((np.ones(3 * ne), (rows, cols)), shape=(self.nvertices, ne))

    # -- genealogy ------------------------------------------------------

    def ancestors_in(self, older):
        """Map every element to the element of ``older`` containing it."""
        idx = np.arange(self.nelements)
        mesh = self
        while mesh is not older:
            if mesh.parent is None:
                raise ValueError("mesh is not a refinement of the given mesh")
            idx = mesh.ancestor[idx]
            mesh = mesh.parent
        return idx

    def to_dict(self):
        a, b, c = self.elements.T
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.elements.tolist(),
            # local edge index = index of the opposite vertex
            "refinement_edge": [2] * self.nelements,
            "boundary_vertices": np.flatnonzero(self.boundary_vertices).tolist(),
        }


# ---------------------------------------------------------------------------
# construction


def _check_conforming(vertices, elements):
    mesh = Mesh(vertices, elements)
    edges, _, edge_elems = mesh._edge_data
    used = np.zeros(len(vertices), dtype=bool)
    used[elements.ravel()] = True
    if not used.all():
        raise MeshError(f"vertex {np.flatnonzero(~used)[0]} is not used by any triangle")
    bnd = edges[edge_elems[:, 1] < 0]
    p = vertices[bnd[:, 0]]
    q = vertices[bnd[:, 1]]
    d = q - p
    length2 = np.einsum("ij,ij->i", d, d)
    for v, x in enumerate(vertices):
        r = x - p
        cross = d[:, 0] * r[:, 1] - d[:, 1] * r[:, 0]
        t = np.einsum("ij,ij->i", r, d) / length2
        hit = (np.abs(cross) <= 1e-12 * length2) & (t > 1e-12) & (t < 1 - 1e-12)
        hit &= (bnd[:, 0] != v) & (bnd[:, 1] != v)
        if hit.any():
            raise MeshError(f"non-conforming mesh: hanging vertex {v} on face {tuple(int(i) for i in bnd[hit][0])}")
    return mesh


def load_mesh(source, compatible_pass=False):
    """Build a validated :class:`Mesh` from a mesh description.

    ``source`` is a dict with keys ``vertices``, ``triangles`` and optionally
    ``refinement_edge`` (per triangle, the local index of the vertex opposite
    the refinement edge), a JSON string, or a path to a JSON file.  Without
    explicit labels the longest edge is used, ties going to the edge whose
    opposite vertex has the lowest global index.
    """
    if isinstance(source, str):
        if source.lstrip().startswith("{"):
            source = json.loads(source)
        else:
            with open(source) as fh:
                source = json.load(fh)
    vertices = np.asarray(source["vertices"], dtype=float)
    tris = np.asarray(source["triangles"], dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be a list of 2-D points")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshError("triangles must be a list of index triples")
    if tris.size and (tris.min() < 0 or tris.max() >= len(vertices)):
        raise MeshError("triangle references an out-of-range vertex index")
    if np.any([len(set(t)) < 3 for t in tris.tolist()]):
        raise MeshError("triangle with repeated vertex")
    p = vertices[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    scale = np.maximum(np.einsum("ij,ij->i", d1, d1), np.einsum("ij,ij->i", d2, d2))
    bad = np.abs(area) <= 1e-14 * scale
    if bad.any():
        raise MeshError(f"degenerate (zero-area) triangle {np.flatnonzero(bad)[0]}")
    tris = tris.copy()
    labels = source.get("refinement_edge")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (len(tris),) or labels.min() < 0 or labels.max() > 2:
            raise MeshError("refinement_edge must hold one local index in {0,1,2} per triangle")
        opposite = tris[np.arange(len(tris)), labels]
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    if labels is None:
        pp = vertices[tris]
        # length of the edge opposite vertex i
        lens = np.stack([np.linalg.norm(pp[:, (i + 1) % 3] - pp[:, (i + 2) % 3], axis=1)
                         for i in range(3)], axis=1)
        longest = lens.max(axis=1, keepdims=True)
        cand = lens >= longest * (1 - 1e-12)
        key = np.where(cand, tris, np.iinfo(np.int64).max)
        loc = np.argmin(key, axis=1)
    else:
        loc = np.argmax(tris == opposite[:, None], axis=1)
    rows = np.arange(len(tris))[:, None]
    perm = (loc[:, None] + np.array([1, 2, 0])) % 3
    tris = tris[rows, perm]
    mesh = _check_conforming(vertices, tris)
    if compatible_pass:
        mesh = refine(mesh, np.arange(mesh.nelements))
        mesh = Mesh(mesh.vertices, mesh.elements)
    return mesh


def unit_square():
    """The unit square split along the diagonal from (0,0) to (1,1)."""
    return load_mesh({
        "vertices": [[0, 0], [1, 0], [1, 1], [0, 1]],
        "triangles": [[0, 1, 2], [0, 2, 3]],
    })


def lshape():
    """(-1,1)^2 minus [0,1]x[-1,0]; six triangles fanned around the reentrant corner."""
    return load_mesh({
        "vertices": [[0, 0], [1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1]],
        "triangles": [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5], [0, 5, 6], [0, 6, 7]],
    })


def save_mesh(mesh, path):
    with open(path, "w") as fh:
        json.dump(mesh.to_dict(), fh)


# ---------------------------------------------------------------------------
# refinement


def _bisect(mesh, marked, max_depth):
    t = mesh.elements
    E = mesh.elem_edges
    emark = np.zeros(mesh.nfaces, dtype=bool)
    emark[E[marked, 0]] = True
    for _ in range(max_depth + 1):
        need = emark[E].any(axis=1) & ~emark[E[:, 0]]
        if not need.any():
            break
        emark[E[need, 0]] = True
    else:
        raise RefinementError(
            f"refinement closure exceeded {max_depth} sweeps; the initial refinement-edge "
            "labeling is probably incompatible (try load_mesh(..., compatible_pass=True))")

    nv = mesh.nvertices
    split = np.flatnonzero(emark)
    mid = np.full(mesh.nfaces, -1, dtype=np.int64)
    mid[split] = nv + np.arange(len(split))
    newv = 0.5 * mesh.vertices[mesh.edges[split]].sum(axis=1)
    vertices = np.vstack([mesh.vertices, newv])

    a, b, c = t.T
    m0, m1, m2 = mid[E[:, 0]], mid[E[:, 1]], mid[E[:, 2]]
    bis = m0 >= 0
    ne = len(t)
    # up to four children per element, kept in a fixed order
    kids = np.full((ne, 4, 3), -1, dtype=np.int64)
    gen = np.zeros((ne, 4), dtype=np.int64)
    kids[~bis, 0] = t[~bis]
    gen[~bis, 0] = mesh.generation[~bis]

    A = np.stack([c, a, m0], axis=1)
    B = np.stack([b, c, m0], axis=1)
    splitA = bis & (m2 >= 0)
    splitB = bis & (m1 >= 0)
    g1 = mesh.generation + 1
    sel = bis & ~splitA
    kids[sel, 0] = A[sel]
    gen[sel, 0] = g1[sel]
    kids[splitA, 0] = np.stack([m0, c, m2], axis=1)[splitA]
    kids[splitA, 1] = np.stack([a, m0, m2], axis=1)[splitA]
    gen[splitA, 0:2] = g1[splitA, None] + 1
    sel = bis & ~splitB
    kids[sel, 2] = B[sel]
    gen[sel, 2] = g1[sel]
    kids[splitB, 2] = np.stack([m0, b, m1], axis=1)[splitB]
    kids[splitB, 3] = np.stack([c, m0, m1], axis=1)[splitB]
    gen[splitB, 2:4] = g1[splitB, None] + 1

    valid = kids[:, :, 0] >= 0
    elements = kids[valid]
    generation = gen[valid]
    ancestor = np.broadcast_to(np.arange(ne)[:, None], (ne, 4))[valid]
    return Mesh(vertices, elements, generation, parent=mesh, ancestor=ancestor)


def refine(mesh, marked, bisections=1, max_depth=64):
    """Refine ``mesh`` so that every marked element is bisected.

    Each marked element is bisected ``bisections`` times (its descendants
    are re-marked between rounds); newest-vertex closure keeps the result
    conforming.  The returned mesh records ``mesh`` as its parent.
    """
    marked = np.unique(np.asarray(marked, dtype=np.int64).ravel())
    if marked.size and (marked[0] < 0 or marked[-1] >= mesh.nelements):
        raise ValueError("marked element id out of range")
    if bisections < 1:
        raise ValueError("bisections must be >= 1")
    if marked.size == 0:
        return Mesh(mesh.vertices, mesh.elements, mesh.generation, parent=mesh,
                    ancestor=np.arange(mesh.nelements))
    current = mesh
    ancestor = np.arange(mesh.nelements)
    targets = marked
    for _ in range(bisections):
        current = _bisect(current, targets, max_depth)
        ancestor = ancestor[current.ancestor]
        targets = np.flatnonzero(np.isin(ancestor, marked))
    return Mesh(current.vertices, current.elements, current.generation, parent=mesh,
                ancestor=ancestor)


def uniform_refine(mesh, times=1):
    """Bisect every element twice per round (one red-green-like NVB sweep)."""
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.nelements), bisections=2)
    return mesh


# ---------------------------------------------------------------------------
# queries


def neighborhood(mesh, elem, j=1):
    """Element ids of the ``j``-th vertex neighbourhood of ``elem``."""
    if not 0 <= elem < mesh.nelements:
        raise ValueError(f"element id {elem} out of range")
    if j < 0:
        raise ValueError("j must be nonnegative")
    current = np.zeros(mesh.nelements, dtype=bool)
    current[elem] = True
    VE = mesh.vertex_element_matrix
    for _ in range(j):
        touched = (VE @ current.astype(float)) > 0
        current = (VE.T @ touched.astype(float)) > 0
    return set(np.flatnonzero(current).tolist())


def mesh_size(mesh):
    """Piecewise constant mesh size: ``(h_K, h_F)`` with h_K = |K|^(1/2), h_F = |F|."""
    return np.sqrt(mesh.area), mesh.face_lengths.copy()


def element_angles(mesh):
    """Interior angles in degrees, shape (ne, 3)."""
    p = mesh.vertices[mesh.elements]
    ang = np.empty((mesh.nelements, 3))
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        ang[:, i] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return ang


def shape_regularity(mesh):
    """Minimum interior angle (degrees) over all elements."""
    return float(element_angles(mesh).min())


def audit_conformity(mesh):
    """Raise :class:`MeshError` unless ``mesh`` is conforming and positively oriented."""
    if np.any(mesh.area <= 0):
        raise MeshError("element with nonpositive signed area")
    _check_conforming(mesh.vertices, mesh.elements)
    bnd = mesh.boundary_faces
    # every boundary vertex closes a loop: exactly two boundary faces meet there
    deg = np.bincount(mesh.edges[bnd].ravel(), minlength=mesh.nvertices)
    if np.any(deg[mesh.boundary_vertices] % 2):
        raise MeshError("boundary is not a union of closed polygons")
    return True
